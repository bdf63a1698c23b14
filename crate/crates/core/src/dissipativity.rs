//! Two-point generator, sampled dissipativity conditions and pathwise
//! contraction rates.
//!
//! Sampled suprema are lower bounds of the true suprema over the sampling
//! box; a passing check is evidence on that box, not a proof.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::integrate::{Propagator, Scheme};
use crate::linalg::{dist, dot};
use crate::models::{LyapunovSpec, SdeModel};
use crate::noise::{CounterStream, NoisePath};
use crate::scalar::{count, lit, Real};
use crate::stats::fit_line;

/// Violation threshold of the generator bound.
pub const GENERATOR_BOUND_SLACK: f64 = 1e-9;

/// Sampling box for the falsification-style checks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec<T> {
    /// Points are drawn from `[-radius, radius]^d`.
    pub radius: T,
    /// Number of times per period (the period end is added for quadrature).
    pub n_times: usize,
    pub n_pairs: usize,
    #[serde(default)]
    pub seed: u64,
}

impl<T: Real> SampleSpec<T> {
    pub fn new(radius: T, n_times: usize, n_pairs: usize) -> Self {
        Self {
            radius,
            n_times,
            n_pairs,
            seed: 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.radius > T::zero()) || self.n_times == 0 || self.n_pairs == 0 {
            return Err(Error::InvalidArgument(
                "sampling needs a positive radius, times and pairs".into(),
            ));
        }
        Ok(())
    }

    fn times(&self, period: T) -> Vec<T> {
        (0..=self.n_times)
            .map(|i| period * count(i) / count(self.n_times))
            .collect()
    }

    /// Deterministic pairs: half spread over the box, half nearly diagonal
    /// (probing the infinitesimal rate), plus one diagonal pair at the origin.
    fn pairs(&self, d: usize) -> Vec<(Vec<T>, Vec<T>)> {
        let mut rng = CounterStream::new(self.seed, 0xd155);
        let mut uniform = |scale: T| -> Vec<T> {
            (0..d)
                .map(|_| (lit::<T>(2.0 * rng.next_f64()) - T::one()) * scale)
                .collect()
        };
        let local = self.radius * lit(1e-3);
        let mut out = Vec::with_capacity(self.n_pairs + 1);
        for j in 0..self.n_pairs {
            let x = uniform(self.radius);
            let y = if j % 2 == 0 {
                uniform(self.radius)
            } else {
                let h = uniform(local);
                x.iter().zip(&h).map(|(&a, &b)| a + b).collect()
            };
            out.push((x, y));
        }
        let origin = vec![T::zero(); d];
        out.push((origin.clone(), uniform(local)));
        out.retain(|(x, y)| x != y);
        out
    }
}

/// `L⁽²⁾V(t, x − y)`: time derivative, drift-difference term and the
/// half-trace of the diffusion-difference term against the Hessian.
pub fn two_point_generator<T: Real>(model: &SdeModel<T>, lyap: &LyapunovSpec<T>, t: T, x: &[T], y: &[T]) -> Result<T> {
    let (d, m) = (model.dim(), model.noise_dim());
    if x.len() != d || y.len() != d {
        return Err(Error::InvalidArgument("points must match the model dimension".into()));
    }
    if x == y && lyap.p < lit(2.0) {
        return Err(Error::Singular(format!(
            "Hessian of |x|^p is unbounded at 0 for p = {} < 2",
            lyap.p
        )));
    }
    let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
    let vt = lyap.time_derivative.as_ref().map_or(T::zero(), |f| f(t, &diff));
    let mut grad = vec![T::zero(); d];
    (lyap.gradient)(t, &diff, &mut grad);
    let (fx, fy) = (model.drift(t, x), model.drift(t, y));
    let df: Vec<T> = fx.iter().zip(&fy).map(|(&a, &b)| a - b).collect();
    let mut hess = vec![T::zero(); d * d];
    (lyap.hessian)(t, &diff, &mut hess);
    let (sx, sy) = (model.diffusion(t, x), model.diffusion(t, y));
    let mut trace = T::zero();
    for k in 0..m {
        let col: Vec<T> = (0..d).map(|i| sx[i * m + k] - sy[i * m + k]).collect();
        for i in 0..d {
            for j in 0..d {
                trace = trace + col[i] * hess[i * d + j] * col[j];
            }
        }
    }
    Ok(vt + dot(&grad, &df) + lit::<T>(0.5) * trace)
}

/// `p·(β + (p − 1)/2 · m · L²)`: the generator rate for `V = |x|^p` implied
/// by the one-sided Lipschitz rate `β` and diffusion Lipschitz constant `L`.
pub fn generator_rate<T: Real>(beta: T, lip: T, p: T, noise_dim: usize) -> T {
    p * (beta + (p - T::one()) / lit(2.0) * count::<T>(noise_dim) * lip * lip)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorBoundReport<T> {
    /// `max (L⁽²⁾V − λ V)` over the samples.
    pub max_violation: T,
    pub worst_time: T,
    pub worst_x: Vec<T>,
    pub worst_y: Vec<T>,
    pub samples: usize,
    pub pass: bool,
    pub sample_spec: SampleSpec<T>,
}

impl<T: Real> GeneratorBoundReport<T> {
    pub const NOTE: &'static str = "sampled check on a bounded box; a pass is evidence, not a proof";
}

/// Samples `L⁽²⁾V(t, x − y) − λ(t) V(t, x − y)`; passes when the maximum is
/// at most [`GENERATOR_BOUND_SLACK`].
pub fn check_generator_bound<T: Real>(
    model: &SdeModel<T>,
    lyap: &LyapunovSpec<T>,
    sample: &SampleSpec<T>,
) -> Result<GeneratorBoundReport<T>> {
    sample.validate()?;
    let lambda = lyap
        .lambda_rate
        .as_ref()
        .ok_or_else(|| Error::Capability("Lyapunov spec has no rate λ(t) attached".into()))?;
    let pairs = sample.pairs(model.dim());
    let times = sample.times(model.period());
    let per_time = times
        .par_iter()
        .map(|&t| {
            let mut best: Option<(T, usize)> = None;
            for (j, (x, y)) in pairs.iter().enumerate() {
                let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
                let gen = two_point_generator(model, lyap, t, x, y)?;
                let v = gen - lambda(t) * (lyap.value)(t, &diff);
                if best.is_none_or(|(b, _)| v > b) {
                    best = Some((v, j));
                }
            }
            Ok(best)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut worst = (T::neg_infinity(), T::zero(), 0usize);
    for (&t, best) in times.iter().zip(per_time) {
        if let Some((v, j)) = best {
            if v > worst.0 {
                worst = (v, t, j);
            }
        }
    }
    Ok(GeneratorBoundReport {
        max_violation: worst.0,
        worst_time: worst.1,
        worst_x: pairs.get(worst.2).map(|p| p.0.clone()).unwrap_or_default(),
        worst_y: pairs.get(worst.2).map(|p| p.1.clone()).unwrap_or_default(),
        samples: pairs.len() * times.len(),
        pass: worst.0 <= lit(GENERATOR_BOUND_SLACK),
        sample_spec: *sample,
    })
}

/// Sampled profiles of `β(t)` and `L(t)` over one period.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport<T> {
    pub times: Vec<T>,
    pub beta: Vec<T>,
    pub lip: Vec<T>,
    /// Trapezoid estimate of `∫_0^τ β`.
    pub integral_beta: T,
    pub pass: bool,
    pub sample_spec: SampleSpec<T>,
}

impl<T: Real> ConditionReport<T> {
    /// CSV `t,beta,L`.
    pub fn to_csv(&self) -> String {
        let mut lines = vec!["t,beta,L".to_string()];
        for ((&t, &b), &l) in self.times.iter().zip(&self.beta).zip(&self.lip) {
            lines.push(export::row(&[export::num(t)], &[b, l]));
        }
        export::finish(lines)
    }
}

/// Estimates `β(t)` and `L(t)` by sampled suprema and tests `∫_0^τ β < 0`.
pub fn check_drift_conditions<T: Real>(model: &SdeModel<T>, sample: &SampleSpec<T>) -> Result<ConditionReport<T>> {
    sample.validate()?;
    let (d, m) = (model.dim(), model.noise_dim());
    let pairs = sample.pairs(d);
    let times = sample.times(model.period());
    let profiles: Vec<(T, T)> = times
        .par_iter()
        .map(|&t| {
            let mut beta = T::neg_infinity();
            let mut lip = T::zero();
            for (x, y) in &pairs {
                let (fx, fy) = (model.drift(t, x), model.drift(t, y));
                let diff: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a - b).collect();
                let r2 = dot(&diff, &diff);
                let df: Vec<T> = fx.iter().zip(&fy).map(|(&a, &b)| a - b).collect();
                beta = beta.max(dot(&df, &diff) / r2);
                let (sx, sy) = (model.diffusion(t, x), model.diffusion(t, y));
                let r = r2.sqrt();
                for k in 0..m {
                    let cx: Vec<T> = (0..d).map(|i| sx[i * m + k]).collect();
                    let cy: Vec<T> = (0..d).map(|i| sy[i * m + k]).collect();
                    lip = lip.max(dist(&cx, &cy) / r);
                }
            }
            (beta, lip)
        })
        .collect();
    let (beta, lip): (Vec<T>, Vec<T>) = profiles.into_iter().unzip();
    let h = model.period() / count(sample.n_times);
    let half = lit::<T>(0.5);
    let integral_beta = beta.windows(2).fold(T::zero(), |acc, w| acc + half * h * (w[0] + w[1]));
    Ok(ConditionReport {
        times,
        beta,
        lip,
        integral_beta,
        pass: integral_beta < T::zero(),
        sample_spec: *sample,
    })
}

/// Log-gaps of a two-point motion at period boundaries.
#[derive(Clone, Debug, PartialEq)]
pub struct ContractionReport<T> {
    pub times: Vec<T>,
    pub log_gaps: Vec<T>,
    /// Least-squares slope of the log-gap per unit time.
    pub slope: Option<T>,
    /// The gap reached the floating-point floor and the series was cut.
    pub truncated: bool,
}

impl<T: Real> ContractionReport<T> {
    /// Empirical exponent, comparable with `α/p`.
    pub fn rate_bound(&self) -> Option<T> {
        self.slope
    }

    /// CSV `t,log_gap`.
    pub fn to_csv(&self) -> String {
        let mut lines = vec!["t,log_gap".to_string()];
        for (&t, &g) in self.times.iter().zip(&self.log_gaps) {
            lines.push(export::row(&[export::num(t)], &[g]));
        }
        export::finish(lines)
    }
}

/// Runs two solutions from `x0 ≠ y0` under shared noise for `periods`
/// periods starting at node `k0` and fits the decay of `ln |X^x − X^y|`.
///
/// The series is truncated once the gap falls to `10 ε · max(1, |X^x|, |X^y|)`,
/// below which it measures rounding rather than contraction.
pub fn contraction_report<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    periods: usize,
    x0: &[T],
    y0: &[T],
    scheme: Scheme,
) -> Result<ContractionReport<T>> {
    if x0 == y0 {
        return Err(Error::InvalidArgument("contraction needs distinct initial points".into()));
    }
    if periods == 0 {
        return Err(Error::InvalidArgument("horizon must span at least one period".into()));
    }
    if x0.len() != model.dim() || y0.len() != model.dim() {
        return Err(Error::InvalidArgument("initial points must match the model dimension".into()));
    }
    let grid = *path.grid();
    let n_tau = grid.period_steps();
    let mut prop = Propagator::new(model, path, scheme)?;
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    let floor_of = |x: &[T], y: &[T]| {
        let scale = x.iter().chain(y).fold(T::one(), |a, &v| a.max(v.abs()));
        lit::<T>(10.0) * T::epsilon() * scale
    };
    let mut times = vec![grid.time(k0)];
    let mut log_gaps = vec![dist(&x, &y).ln()];
    let mut truncated = false;
    'periods: for n in 0..periods as i64 {
        for k in k0 + n * n_tau..k0 + (n + 1) * n_tau {
            prop.load_noise(k);
            prop.step_state(k, &mut x)?;
            prop.step_state(k, &mut y)?;
        }
        let gap = dist(&x, &y);
        if gap <= floor_of(&x, &y) {
            truncated = true;
            break 'periods;
        }
        times.push(grid.time(k0 + (n + 1) * n_tau));
        log_gaps.push(gap.ln());
    }
    let slope = fit_line(&times, &log_gaps).map(|f| f.slope);
    Ok(ContractionReport {
        times,
        log_gaps,
        slope,
        truncated,
    })
}
