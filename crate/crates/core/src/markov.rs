//! Monte-Carlo analysis of the Markov evolution `T_{t,s}`: transition
//! probabilities, Krylov–Bogolyubov averages, single-path time averages,
//! geometric mixing and the Bismut–Elworthy–Li gradient.
//!
//! Replica `i` of master seed `m` is always driven by
//! `replica_path(m, i, ..)`, so estimators called with the same seed share
//! their noise.

use crate::error::{Error, Result};
use crate::export;
use crate::integrate::{Propagator, Scheme};
use crate::measures::{over_replicas, support_interval, EmpiricalMeasure, Interval};
use crate::models::{LyapunovSpec, SdeModel};
use crate::noise::{replica_path, GridSpec, NoisePath};
use crate::oracle::gauss_legendre;
use crate::scalar::{count, lit, Real};
use crate::stats::{batch_means, fit_line_weighted, mean_estimate, proportion, variance, Estimate};

/// Smallest number of replicas accepted by [`transition_probability`].
pub const MIN_TRANSITION_REPLICAS: usize = 100;

/// Coverage of the support proxy reported by [`kb_average`].
pub const SUPPORT_COVERAGE: f64 = 0.999;

/// Floor on relative errors used as fit weights, so that noiseless points
/// (common random numbers on a linear flow) keep finite weight.
pub const RELATIVE_SE_FLOOR: f64 = 1e-9;

fn require_scalar<T: Real>(model: &SdeModel<T>, what: &str) -> Result<()> {
    if model.dim() != 1 {
        return Err(Error::Capability(format!("{what} uses intervals and needs d = 1")));
    }
    Ok(())
}

fn check_state<T: Real>(model: &SdeModel<T>, x: &[T]) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "state has {} components, model dimension is {}",
            x.len(),
            model.dim()
        )));
    }
    Ok(())
}

/// Steps `x` from node `k0` to `k1` with an existing propagator.
fn run<T: Real>(prop: &mut Propagator<'_, T>, k0: i64, k1: i64, x: &mut [T]) -> Result<()> {
    for k in k0..k1 {
        prop.load_noise(k);
        prop.step_state(k, x)?;
    }
    Ok(())
}

/// `P(s, x; s + h·dt, A)`: fraction of `n` replicas ending in `A`, with
/// binomial standard error.
#[allow(clippy::too_many_arguments)]
pub fn transition_probability<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    x: &[T],
    horizon_steps: i64,
    a: &Interval<T>,
    n: usize,
    scheme: Scheme,
) -> Result<Estimate<T>> {
    require_scalar(model, "transition probability")?;
    check_state(model, x)?;
    a.validate()?;
    if n < MIN_TRANSITION_REPLICAS {
        return Err(Error::InvalidArgument(format!(
            "transition probabilities need at least {MIN_TRANSITION_REPLICAS} replicas, got {n}"
        )));
    }
    if horizon_steps < 0 {
        return Err(Error::InvalidArgument("horizon must be nonnegative".into()));
    }
    let hits = over_replicas(0, n, |i| {
        let path = replica_path(master_seed, i, model.noise_dim(), *grid);
        let mut prop = Propagator::new(model, &path, scheme)?;
        let mut state = x.to_vec();
        run(&mut prop, s, s + horizon_steps, &mut state)?;
        Ok(a.contains(state[0]))
    })?;
    Ok(proportion(hits.into_iter().filter(|&h| h).count(), n))
}

/// Krylov–Bogolyubov average `(1/N) Σ_{n=1}^{N} P(s, x; t + nτ, A)` against
/// `µ̂_t(A)`.
#[derive(Clone, Debug, PartialEq)]
pub struct KbReport<T> {
    pub n_periods: usize,
    pub n_mc: usize,
    pub average: Estimate<T>,
    /// `P(s, x; t + nτ, A)` for `n = 1..=N`.
    pub per_period: Vec<Estimate<T>>,
    pub reference: Estimate<T>,
    pub difference: T,
    pub combined_se: T,
    /// `A` lies inside the central quantile interval of `µ̂_t`.
    pub within_support_proxy: bool,
    pub pass: bool,
}

impl<T: Real> KbReport<T> {
    /// CSV `n,estimate,se` of the per-period sequence.
    pub fn to_csv(&self) -> String {
        estimate_rows((1..=self.per_period.len()).zip(&self.per_period))
    }

    /// CSV `quantity,estimate,se`.
    pub fn summary_csv(&self) -> String {
        summary_rows(&[
            ("kb_average", self.average),
            ("reference", self.reference),
            ("difference", Estimate::new(self.difference, self.combined_se)),
        ])
    }
}

pub fn estimate_rows<'a, T: Real + 'a>(rows: impl Iterator<Item = (usize, &'a Estimate<T>)>) -> String {
    let mut lines = vec!["n,estimate,se".to_string()];
    for (n, e) in rows {
        lines.push(export::row(&[n.to_string()], &[e.value, e.se]));
    }
    export::finish(lines)
}

pub fn summary_rows<T: Real>(rows: &[(&str, Estimate<T>)]) -> String {
    let mut lines = vec!["quantity,estimate,se".to_string()];
    for (name, e) in rows {
        lines.push(export::row(&[name.to_string()], &[e.value, e.se]));
    }
    export::finish(lines)
}

/// Runs each replica from `(s, x)` and records raw indicators of `A` at
/// `t + nτ`, `n = 1..=n_periods`. `reference` is `µ̂_t`.
#[allow(clippy::too_many_arguments)]
pub fn kb_average<T: Real>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    x: &[T],
    t: i64,
    a: &Interval<T>,
    n_periods: usize,
    n_mc: usize,
    reference: &EmpiricalMeasure<T>,
    scheme: Scheme,
) -> Result<KbReport<T>> {
    require_scalar(model, "Krylov–Bogolyubov average")?;
    check_state(model, x)?;
    a.validate()?;
    let n_tau = grid.period_steps();
    if t < s || t >= s + n_tau {
        return Err(Error::InvalidArgument(format!(
            "observation index {t} must lie in [s, s + Nτ) = [{s}, {})",
            s + n_tau
        )));
    }
    if reference.phase_index.rem_euclid(n_tau) != t.rem_euclid(n_tau) {
        return Err(Error::GridMismatch(format!(
            "reference measure is at phase index {}, observation phase is {}",
            reference.phase_index,
            t.rem_euclid(n_tau)
        )));
    }
    if n_periods == 0 {
        return Err(Error::InvalidArgument("n_periods must be positive".into()));
    }
    let hits = over_replicas(0, n_mc, |i| {
        let path = replica_path(master_seed, i, model.noise_dim(), *grid);
        let mut prop = Propagator::new(model, &path, scheme)?;
        let mut state = x.to_vec();
        let mut k = s;
        let mut seen = Vec::with_capacity(n_periods);
        for n in 1..=n_periods as i64 {
            let target = t + n * n_tau;
            run(&mut prop, k, target, &mut state)?;
            k = target;
            seen.push(a.contains(state[0]));
        }
        Ok(seen)
    })?;
    let total: usize = hits.iter().map(|r| r.iter().filter(|&&h| h).count()).sum();
    let per_replica: Vec<T> = hits
        .iter()
        .map(|r| count::<T>(r.iter().filter(|&&h| h).count()) / count(n_periods))
        .collect();
    let value = count::<T>(total) / (count::<T>(n_periods) * count(n_mc));
    let average = Estimate::new(value, (variance(&per_replica) / count(n_mc)).sqrt());
    let per_period = (0..n_periods)
        .map(|n| proportion(hits.iter().filter(|r| r[n]).count(), n_mc))
        .collect();
    let reference_mass = reference.mass(a)?;
    let (difference, combined_se) = average.compare(&reference_mass);
    let proxy = support_interval(reference, lit(SUPPORT_COVERAGE))?;
    Ok(KbReport {
        n_periods,
        n_mc,
        average,
        per_period,
        reference: reference_mass,
        difference,
        combined_se,
        within_support_proxy: a.is_subset_of(&proxy),
        pass: difference <= lit::<T>(3.0) * combined_se,
    })
}

/// Birkhoff average `(1/N) Σ_{n=1}^{N} h(X(s + nτ))` along one path.
#[derive(Clone, Debug, PartialEq)]
pub struct ErgodicReport<T> {
    pub n_periods: usize,
    /// Batch-means standard error.
    pub average: Estimate<T>,
    pub reference: Option<Estimate<T>>,
    pub difference: Option<T>,
    pub combined_se: Option<T>,
    pub pass: Option<bool>,
}

impl<T: Real> ErgodicReport<T> {
    /// CSV `quantity,estimate,se`.
    pub fn summary_csv(&self) -> String {
        let mut rows = vec![("time_average", self.average)];
        if let (Some(r), Some(d), Some(se)) = (self.reference, self.difference, self.combined_se) {
            rows.push(("reference", r));
            rows.push(("difference", Estimate::new(d, se)));
        }
        summary_rows(&rows)
    }
}

/// Minimum number of periods for [`ergodic_time_average`].
pub const MIN_ERGODIC_PERIODS: usize = 10;

#[allow(clippy::too_many_arguments)]
pub fn ergodic_time_average<T: Real, H: Fn(&[T]) -> T>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    s: i64,
    x: &[T],
    h: H,
    n_periods: usize,
    scheme: Scheme,
    reference: Option<Estimate<T>>,
) -> Result<ErgodicReport<T>> {
    check_state(model, x)?;
    if n_periods < MIN_ERGODIC_PERIODS {
        return Err(Error::InvalidArgument(format!(
            "time averages need at least {MIN_ERGODIC_PERIODS} periods, got {n_periods}"
        )));
    }
    let n_tau = path.grid().period_steps();
    let mut prop = Propagator::new(model, path, scheme)?;
    let mut state = x.to_vec();
    let mut values = Vec::with_capacity(n_periods);
    for n in 0..n_periods as i64 {
        let k = s + n * n_tau;
        run(&mut prop, k, k + n_tau, &mut state)?;
        values.push(h(&state));
    }
    let average = batch_means(&values);
    let compared = reference.map(|r| average.compare(&r));
    Ok(ErgodicReport {
        n_periods,
        average,
        reference,
        difference: compared.map(|c| c.0),
        combined_se: compared.map(|c| c.1),
        pass: compared.map(|(d, se)| d <= lit::<T>(3.0) * se),
    })
}

/// `1` on `A`, falling linearly to `0` over `width` outside it.
pub fn mollified_indicator<T: Real>(a: Interval<T>, width: T) -> impl Fn(&[T]) -> T + Send + Sync + Clone {
    move |x: &[T]| {
        let v = x[0];
        let outside = if v < a.lo {
            a.lo - v
        } else if v > a.hi {
            v - a.hi
        } else {
            T::zero()
        };
        (T::one() - outside / width).max(T::zero())
    }
}

/// Geometric ratio per period from a weighted fit of `ln estimate` on `n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioFit<T> {
    pub ratio: T,
    pub se: T,
    pub points: usize,
}

/// Fits `estimate_n ≈ C·ratio^n` using points with `estimate > 3·se`.
pub fn fit_ratio<T: Real>(ns: &[usize], estimates: &[Estimate<T>]) -> Option<RatioFit<T>> {
    let three = lit::<T>(3.0);
    let floor = lit::<T>(RELATIVE_SE_FLOOR);
    let (mut xs, mut ys, mut sig) = (Vec::new(), Vec::new(), Vec::new());
    for (&n, e) in ns.iter().zip(estimates) {
        if e.value > T::zero() && e.value > three * e.se {
            xs.push(count::<T>(n));
            ys.push(e.value.ln());
            sig.push((e.se / e.value).max(floor));
        }
    }
    let fit = fit_line_weighted(&xs, &ys, &sig)?;
    let ratio = fit.slope.exp();
    Some(RatioFit {
        ratio,
        se: ratio * fit.slope_se,
        points: xs.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixingReport<T> {
    pub n_values: Vec<usize>,
    /// `|T h(x) − T h(y)|` on common noise.
    pub pair: Vec<Estimate<T>>,
    /// `|T h(x) − ∫ h dµ̂_s|`, present when a reference measure is given.
    pub target: Option<Vec<Estimate<T>>>,
    pub pair_fit: Option<RatioFit<T>>,
    pub target_fit: Option<RatioFit<T>>,
    /// `exp(∫₀^τ λ / p)`.
    pub rate_bound: T,
    /// `None` when no family has enough points for a fit.
    pub pass: Option<bool>,
}

impl<T: Real> MixingReport<T> {
    /// CSV `n,estimate,se` of the common-noise family.
    pub fn pair_csv(&self) -> String {
        estimate_rows(self.n_values.iter().copied().zip(&self.pair))
    }

    /// CSV `n,estimate,se` of the distance to the reference measure.
    pub fn target_csv(&self) -> Option<String> {
        self.target
            .as_ref()
            .map(|t| estimate_rows(self.n_values.iter().copied().zip(t)))
    }
}

/// `exp(∫₀^τ λ(r) dr / p)` from the Lyapunov spec.
pub fn lyapunov_rate_bound<T: Real>(lyap: &LyapunovSpec<T>, period: T) -> Result<T> {
    let rate = lyap
        .lambda_rate
        .as_ref()
        .ok_or_else(|| Error::Capability("the Lyapunov spec carries no rate λ(t)".into()))?;
    Ok((gauss_legendre(|r| rate(r), T::zero(), period, 64) / lyap.p).exp())
}

/// Inputs of [`mixing_report`] besides the model.
pub struct MixingSetup<'a, T, H> {
    pub grid: GridSpec<T>,
    pub master_seed: u64,
    pub s: i64,
    pub x: Vec<T>,
    pub y: Vec<T>,
    pub h: H,
    /// `sup |h|`; evaluations beyond it are rejected.
    pub h_sup: T,
    pub n_list: Vec<usize>,
    pub n: usize,
    pub reference: Option<&'a EmpiricalMeasure<T>>,
    pub scheme: Scheme,
}

pub fn mixing_report<T: Real, H: Fn(&[T]) -> T + Sync + Send>(
    model: &SdeModel<T>,
    lyap: &LyapunovSpec<T>,
    setup: &MixingSetup<'_, T, H>,
) -> Result<MixingReport<T>> {
    check_state(model, &setup.x)?;
    check_state(model, &setup.y)?;
    let mut n_values = setup.n_list.clone();
    n_values.sort_unstable();
    n_values.dedup();
    if n_values.is_empty() || n_values[0] == 0 {
        return Err(Error::InvalidArgument("n_list must hold positive period counts".into()));
    }
    if !(setup.h_sup > T::zero()) {
        return Err(Error::InvalidArgument("h_sup must be positive".into()));
    }
    let rate_bound = lyapunov_rate_bound(lyap, setup.grid.period())?;
    let n_tau = setup.grid.period_steps();
    let slack = setup.h_sup * (T::one() + lit(1e-12));
    let rows = over_replicas(0, setup.n, |i| {
        let path = replica_path(setup.master_seed, i, model.noise_dim(), setup.grid);
        let mut prop = Propagator::new(model, &path, setup.scheme)?;
        let (mut x, mut y) = (setup.x.clone(), setup.y.clone());
        let mut k = setup.s;
        let mut out = Vec::with_capacity(n_values.len());
        for &n in &n_values {
            let target = setup.s + n as i64 * n_tau;
            for j in k..target {
                prop.load_noise(j);
                prop.step_state(j, &mut x)?;
                prop.step_state(j, &mut y)?;
            }
            k = target;
            let (hx, hy) = ((setup.h)(&x), (setup.h)(&y));
            if hx.abs() > slack || hy.abs() > slack {
                return Err(Error::InvalidArgument(format!(
                    "test function exceeds its declared bound {}",
                    setup.h_sup
                )));
            }
            out.push((hx, hy));
        }
        Ok(out)
    })?;
    let column = |j: usize, f: &dyn Fn(T, T) -> T| -> Vec<T> { rows.iter().map(|r| f(r[j].0, r[j].1)).collect() };
    let pair: Vec<Estimate<T>> = (0..n_values.len())
        .map(|j| {
            let e = mean_estimate(&column(j, &|a, b| a - b));
            Estimate::new(e.value.abs(), e.se)
        })
        .collect();
    let target = setup.reference.map(|mu| {
        let integral = mu.expectation(|v| (setup.h)(v));
        (0..n_values.len())
            .map(|j| {
                let e = mean_estimate(&column(j, &|a, _| a));
                let (d, se) = e.compare(&integral);
                Estimate::new(d, se)
            })
            .collect::<Vec<_>>()
    });
    let pair_fit = fit_ratio(&n_values, &pair);
    let target_fit = target.as_ref().and_then(|t| fit_ratio(&n_values, t));
    let three = lit::<T>(3.0);
    let checks: Vec<bool> = [pair_fit, target_fit]
        .iter()
        .flatten()
        .map(|f| f.ratio <= rate_bound + three * f.se)
        .collect();
    let pass = (!checks.is_empty()).then(|| checks.iter().all(|&c| c));
    Ok(MixingReport {
        n_values,
        pair,
        target,
        pair_fit,
        target_fit,
        rate_bound,
        pass,
    })
}

/// Bismut–Elworthy–Li estimate of `D_x E[h(X(s + T, s, x))] v`.
#[derive(Clone, Debug, PartialEq)]
pub struct BelReport<T> {
    pub horizon: T,
    pub n: usize,
    pub estimate: Estimate<T>,
}

impl<T: Real> BelReport<T> {
    /// CSV `quantity,estimate,se`.
    pub fn summary_csv(&self) -> String {
        summary_rows(&[("bel_gradient", self.estimate)])
    }
}

/// Per-replica terms `h(X_T) · Σ_k ⟨σ⁻¹(t_k, X_k) v_k, ΔW_k⟩ / T` with the
/// left-point (non-anticipating) sum and `v_k` the Euler derivative flow.
#[allow(clippy::too_many_arguments)]
pub fn bel_samples<T: Real, H: Fn(&[T]) -> T + Sync + Send>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    x: &[T],
    v: &[T],
    h: H,
    horizon_steps: i64,
    n: usize,
) -> Result<Vec<T>> {
    check_state(model, x)?;
    check_state(model, v)?;
    let inverse = model
        .right_inverse()
        .ok_or_else(|| Error::Capability("the gradient estimator needs a diffusion right inverse".into()))?;
    if !model.has_jacobians() {
        return Err(Error::Capability("the gradient estimator needs drift and diffusion Jacobians".into()));
    }
    if horizon_steps <= 0 {
        return Err(Error::InvalidArgument("horizon must be positive".into()));
    }
    let (d, m) = (model.dim(), model.noise_dim());
    let horizon = grid.dt() * count(horizon_steps as usize);
    over_replicas(0, n, |i| {
        let path = replica_path(master_seed, i, m, *grid);
        let mut prop = Propagator::new(model, &path, Scheme::Euler)?;
        let (mut state, mut tangent) = (x.to_vec(), v.to_vec());
        let mut inv = vec![T::zero(); m * d];
        let mut integral = T::zero();
        for k in s..s + horizon_steps {
            prop.load_noise(k);
            inverse(prop.phase_time(k), &state, &mut inv);
            for l in 0..m {
                let u: T = (0..d).map(|j| inv[l * d + j] * tangent[j]).sum();
                integral = integral + u * prop.dw[l];
            }
            prop.step_tangent(k, &state, &mut tangent)?;
            prop.step_state(k, &mut state)?;
        }
        Ok(h(&state) * integral / horizon)
    })
}

#[allow(clippy::too_many_arguments)]
pub fn bel_gradient<T: Real, H: Fn(&[T]) -> T + Sync + Send>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    x: &[T],
    v: &[T],
    h: H,
    horizon_steps: i64,
    n: usize,
) -> Result<BelReport<T>> {
    let samples = bel_samples(model, grid, master_seed, s, x, v, h, horizon_steps, n)?;
    Ok(BelReport {
        horizon: grid.dt() * count(horizon_steps as usize),
        n,
        estimate: mean_estimate(&samples),
    })
}

/// Common-noise finite difference `(h(X(x + εv)) − h(X(x))) / ε`.
#[allow(clippy::too_many_arguments)]
pub fn finite_difference_gradient<T: Real, H: Fn(&[T]) -> T + Sync + Send>(
    model: &SdeModel<T>,
    grid: &GridSpec<T>,
    master_seed: u64,
    s: i64,
    x: &[T],
    v: &[T],
    eps: T,
    h: H,
    horizon_steps: i64,
    n: usize,
) -> Result<Estimate<T>> {
    check_state(model, x)?;
    check_state(model, v)?;
    let bumped: Vec<T> = x.iter().zip(v).map(|(&a, &b)| a + eps * b).collect();
    let samples = over_replicas(0, n, |i| {
        let path = replica_path(master_seed, i, model.noise_dim(), *grid);
        let mut prop = Propagator::new(model, &path, Scheme::Euler)?;
        let (mut a, mut b) = (x.to_vec(), bumped.clone());
        for k in s..s + horizon_steps {
            prop.load_noise(k);
            prop.step_state(k, &mut a)?;
            prop.step_state(k, &mut b)?;
        }
        Ok((h(&b) - h(&a)) / eps)
    })?;
    Ok(mean_estimate(&samples))
}
