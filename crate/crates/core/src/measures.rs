//! Periodic measures `µ_s` as laws of `S(s, ·)` over noise ensembles.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::models::SdeModel;
use crate::noise::{replica_path, CounterStream, GridSpec};
use crate::pullback::{random_periodic_path, PullbackParams};
use crate::scalar::{count, lit, same_bits, Real};
use crate::stats::{mean_estimate, proportion, quantile_sorted, Estimate};

/// Salt of the bootstrap resampling stream.
const BOOTSTRAP_SALT: u64 = 0xB007_5724_9A1E_0001;

/// Resamples used for the bootstrap standard error of `W1`.
pub const BOOTSTRAP_RESAMPLES: usize = 200;

/// Scalar interval with optional open ends; bounds may be infinite.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval<T> {
    pub lo: T,
    pub hi: T,
    #[serde(default = "closed_end")]
    pub lo_closed: bool,
    #[serde(default = "closed_end")]
    pub hi_closed: bool,
}

fn closed_end() -> bool {
    true
}

impl<T: Real> Interval<T> {
    /// `[lo, hi]`.
    pub fn closed(lo: T, hi: T) -> Self {
        Self {
            lo,
            hi,
            lo_closed: true,
            hi_closed: true,
        }
    }

    /// `(−∞, hi]`.
    pub fn at_most(hi: T) -> Self {
        Self::closed(T::neg_infinity(), hi)
    }

    /// `(lo, ∞)`.
    pub fn greater_than(lo: T) -> Self {
        Self {
            lo,
            hi: T::infinity(),
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn whole_line() -> Self {
        Self::closed(T::neg_infinity(), T::infinity())
    }

    pub fn contains(&self, x: T) -> bool {
        let above = if self.lo_closed { x >= self.lo } else { x > self.lo };
        let below = if self.hi_closed { x <= self.hi } else { x < self.hi };
        above && below
    }

    pub fn is_subset_of(&self, other: &Self) -> bool {
        let lo_ok = self.lo > other.lo || (self.lo == other.lo && (other.lo_closed || !self.lo_closed));
        let hi_ok = self.hi < other.hi || (self.hi == other.hi && (other.hi_closed || !self.hi_closed));
        lo_ok && hi_ok
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.is_nan() || self.hi.is_nan() || self.lo > self.hi {
            return Err(Error::InvalidArgument(format!(
                "interval bounds must satisfy lo <= hi, got [{}, {}]",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

/// Samples of `S(s, ω_i)` for consecutive replicas `ω_i` of one master seed.
#[derive(Clone, Debug, PartialEq)]
pub struct EmpiricalMeasure<T> {
    pub phase: T,
    pub phase_index: i64,
    pub dim: usize,
    /// Row-major `N × dim`.
    pub samples: Vec<T>,
    pub master_seed: u64,
    /// Index of the replica behind the first sample.
    pub first_replica: usize,
    pub model_id: String,
}

impl<T: Real> EmpiricalMeasure<T> {
    pub fn len(&self) -> usize {
        self.samples.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[T] {
        &self.samples[i * self.dim..(i + 1) * self.dim]
    }

    /// `∫ h dµ̂` with the standard error of the sample mean.
    pub fn expectation<H: Fn(&[T]) -> T>(&self, h: H) -> Estimate<T> {
        let values: Vec<T> = (0..self.len()).map(|i| h(self.sample(i))).collect();
        mean_estimate(&values)
    }

    /// `µ̂(A)` with binomial standard error (`d = 1`).
    pub fn mass(&self, a: &Interval<T>) -> Result<Estimate<T>> {
        self.require_scalar("interval mass")?;
        let hits = self.samples.iter().filter(|&&x| a.contains(x)).count();
        Ok(proportion(hits, self.len()))
    }

    /// Sorted first coordinates.
    pub fn sorted(&self) -> Result<Vec<T>> {
        self.require_scalar("sorting")?;
        let mut xs = self.samples.clone();
        xs.sort_by(|a, b| a.partial_cmp(b).expect("samples are finite"));
        Ok(xs)
    }

    fn require_scalar(&self, what: &str) -> Result<()> {
        if self.dim != 1 {
            return Err(Error::Capability(format!("{what} is implemented for d = 1 only")));
        }
        Ok(())
    }

    /// CSV `phase,sample_index,x1..xd`.
    pub fn to_csv(&self) -> String {
        let mut lines = vec![format!("phase,sample_index,{}", export::indexed_columns("x", self.dim))];
        let phase = export::num(self.phase);
        for i in 0..self.len() {
            lines.push(export::row(&[phase.clone(), i.to_string()], self.sample(i)));
        }
        export::finish(lines)
    }
}

fn check_phase<T: Real>(grid: &GridSpec<T>, s: i64) -> Result<()> {
    if !(0..grid.period_steps()).contains(&s) {
        return Err(Error::InvalidArgument(format!(
            "phase index {s} is outside one period [0, {})",
            grid.period_steps()
        )));
    }
    Ok(())
}

/// Runs `f` on replicas `first..first + n` in parallel; the first failing
/// replica (by index) aborts the whole run.
pub(crate) fn over_replicas<R: Send, F>(first: usize, n: usize, f: F) -> Result<Vec<R>>
where
    F: Fn(usize) -> Result<R> + Sync + Send,
{
    if n == 0 {
        return Err(Error::EmptyEnsemble);
    }
    let results: Vec<Result<R>> = (first..first + n).into_par_iter().map(&f).collect();
    results
        .into_iter()
        .zip(first..)
        .map(|(r, replica)| {
            r.map_err(|e| Error::Replica {
                replica,
                source: Box::new(e),
            })
        })
        .collect()
}

/// `S(t_star, ω_i)` for replicas `first..first + n`, pulled back from the origin.
#[allow(clippy::too_many_arguments)]
fn sample_window_starts<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    t_star: i64,
    first: usize,
    n: usize,
    params: &PullbackParams<T>,
    shift_periods: i64,
) -> Result<Vec<T>> {
    let x0 = vec![T::zero(); model.dim()];
    let rows = over_replicas(first, n, |i| {
        let path = replica_path(master_seed, i, model.noise_dim(), *grid).shift(shift_periods * grid.period_steps());
        let rpp = random_periodic_path(model, &path, t_star, &x0, params)?;
        Ok(rpp.at_start().to_vec())
    })?;
    Ok(rows.concat())
}

fn measure_from_replicas<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    first: usize,
    n: usize,
    params: &PullbackParams<T>,
) -> Result<EmpiricalMeasure<T>> {
    let samples = sample_window_starts(model, grid, master_seed, s, first, n, params, 0)?;
    Ok(EmpiricalMeasure {
        phase: grid.time(s),
        phase_index: s,
        dim: model.dim(),
        samples,
        master_seed,
        first_replica: first,
        model_id: model.id().to_string(),
    })
}

/// `µ̂_s` from replicas `0..n`; any failing replica aborts the run.
pub fn sample_periodic_measure<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    n: usize,
    params: &PullbackParams<T>,
) -> Result<EmpiricalMeasure<T>> {
    check_phase(grid, s)?;
    measure_from_replicas(model, grid, master_seed, s, 0, n, params)
}

/// Exact `W1` between two one-dimensional empirical measures. Equal sample
/// counts reduce to the mean absolute difference of sorted samples; unequal
/// counts integrate `|F⁻¹ − G⁻¹|` over the merged quantile breakpoints.
pub fn wasserstein1<T: Real>(mu: &EmpiricalMeasure<T>, nu: &EmpiricalMeasure<T>) -> Result<T> {
    if mu.dim != 1 || nu.dim != 1 {
        return Err(Error::Capability(
            "Wasserstein distance is implemented for d = 1 only".into(),
        ));
    }
    if mu.is_empty() || nu.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    Ok(wasserstein1_sorted(&mu.sorted()?, &nu.sorted()?))
}

/// `W1` between sorted samples.
pub fn wasserstein1_sorted<T: Real>(a: &[T], b: &[T]) -> T {
    let (n, m) = (a.len(), b.len());
    if n == m {
        let total: T = a.iter().zip(b).map(|(&x, &y)| (x - y).abs()).sum();
        return total / count(n);
    }
    // Breakpoints i/n and j/m compared exactly as i·m against j·n.
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = 0u128;
    let scale = (n as u128) * (m as u128);
    let mut total = T::zero();
    while i < n && j < m {
        let next_a = (i as u128 + 1) * m as u128;
        let next_b = (j as u128 + 1) * n as u128;
        let next = next_a.min(next_b);
        let width = T::from_u128(next - prev).expect("finite") / T::from_u128(scale).expect("finite");
        total = total + width * (a[i] - b[j]).abs();
        prev = next;
        if next_a == next {
            i += 1;
        }
        if next_b == next {
            j += 1;
        }
    }
    total
}

/// Central quantile interval holding the given fraction of the samples.
pub fn support_interval<T: Real>(mu: &EmpiricalMeasure<T>, coverage: T) -> Result<Interval<T>> {
    if !(coverage > T::zero() && coverage <= T::one()) {
        return Err(Error::InvalidArgument(format!("coverage must lie in (0, 1], got {coverage}")));
    }
    if mu.is_empty() {
        return Err(Error::EmptyEnsemble);
    }
    let xs = mu.sorted()?;
    let tail = (T::one() - coverage) / lit(2.0);
    Ok(Interval::closed(
        quantile_sorted(&xs, tail),
        quantile_sorted(&xs, T::one() - tail),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvarianceMode {
    /// Replica-by-replica `S(s + τ, ω) == S(s, θ_τ ω)`.
    ShiftedPaths,
    /// `W1(µ̂_s, µ̂_{s+τ})` from disjoint seed ranges against a bootstrap SE.
    Independent,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvarianceReport<T> {
    pub mode: InvarianceMode,
    pub phase: T,
    pub n: usize,
    /// Largest replica discrepancy (shifted paths) or `W1` (independent).
    pub distance: T,
    /// Bootstrap standard error of `W1` under a common law; zero for
    /// shifted paths.
    pub se: T,
    pub pass: bool,
}

impl<T: Real> InvarianceReport<T> {
    /// CSV `phase,mode,n,distance,se,pass`.
    pub fn to_csv(&self) -> String {
        let mode = match self.mode {
            InvarianceMode::ShiftedPaths => "shifted_paths",
            InvarianceMode::Independent => "independent",
        };
        export::finish(vec![
            "phase,mode,n,distance,se,pass".to_string(),
            format!(
                "{},{mode},{},{},{},{}",
                export::num(self.phase),
                self.n,
                export::num(self.distance),
                export::num(self.se),
                self.pass
            ),
        ])
    }
}

/// Root-mean-square `W1` between pairs of size-matched resamples drawn from
/// the pooled samples, i.e. the scale of `W1` when both laws coincide.
pub fn bootstrap_w1_se<T: Real>(a: &[T], b: &[T], resamples: usize, seed: u64) -> T {
    let pooled: Vec<T> = a.iter().chain(b).copied().collect();
    let sum_sq: T = (0..resamples)
        .into_par_iter()
        .map(|r| {
            let mut stream = CounterStream::new(seed, BOOTSTRAP_SALT).at((r as u64) << 40);
            let mut draw = |n: usize| {
                let mut xs: Vec<T> = (0..n).map(|_| pooled[stream.next_index(pooled.len())]).collect();
                xs.sort_by(|x, y| x.partial_cmp(y).expect("samples are finite"));
                xs
            };
            let xa = draw(a.len());
            let xb = draw(b.len());
            let w = wasserstein1_sorted(&xa, &xb);
            w * w
        })
        .collect::<Vec<T>>()
        .into_iter()
        .sum();
    (sum_sq / count(resamples)).sqrt()
}

/// Checks `µ_{s+τ} = µ_s`.
pub fn check_period_invariance<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    n: usize,
    params: &PullbackParams<T>,
    mode: InvarianceMode,
) -> Result<InvarianceReport<T>> {
    check_phase(grid, s)?;
    let n_tau = grid.period_steps();
    match mode {
        InvarianceMode::ShiftedPaths => {
            let later = sample_window_starts(model, grid, master_seed, s + n_tau, 0, n, params, 0)?;
            let shifted = sample_window_starts(model, grid, master_seed, s, 0, n, params, 1)?;
            let distance = later
                .iter()
                .zip(&shifted)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), T::max);
            let identical = later.iter().zip(&shifted).all(|(a, b)| same_bits(*a, *b));
            Ok(InvarianceReport {
                mode,
                phase: grid.time(s),
                n,
                distance,
                se: T::zero(),
                pass: identical,
            })
        }
        InvarianceMode::Independent => {
            let mu_s = measure_from_replicas(model, grid, master_seed, s, 0, n, params)?;
            let mu_next = measure_from_replicas(model, grid, master_seed, s + n_tau, n, n, params)?;
            let distance = wasserstein1(&mu_s, &mu_next)?;
            let se = bootstrap_w1_se(&mu_s.sorted()?, &mu_next.sorted()?, BOOTSTRAP_RESAMPLES, master_seed);
            Ok(InvarianceReport {
                mode,
                phase: grid.time(s),
                n,
                distance,
                se,
                pass: distance <= lit::<T>(3.0) * se,
            })
        }
    }
}
