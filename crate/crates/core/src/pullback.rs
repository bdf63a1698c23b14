//! Random periodic solutions as limits of the pullback sequence
//! `X(t, t − nτ, ω, x)` over a one-period window `[t*, t* + τ]`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::export;
use crate::integrate::{advance, flow_steps, Scheme, Trajectory};
use crate::linalg::dist;
use crate::models::SdeModel;
use crate::noise::NoisePath;
use crate::scalar::{count, lit, to_f64, Real};
use crate::stats::fit_line;

/// Gaps at or below this many machine epsilons are treated as converged.
pub const GAP_FLOOR_EPS: f64 = 10.0;

fn gap_floor<T: Real>() -> T {
    lit::<T>(GAP_FLOOR_EPS) * T::epsilon()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PullbackParams<T> {
    /// Sup-norm gap between consecutive depths that declares convergence.
    pub tol: T,
    /// Largest pullback depth attempted.
    pub n_cap: usize,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
}

fn default_scheme() -> Scheme {
    Scheme::Euler
}

impl<T: Real> PullbackParams<T> {
    pub fn new(tol: T, n_cap: usize) -> Self {
        Self {
            tol,
            n_cap,
            scheme: Scheme::Euler,
        }
    }
}

/// Gap history of the pullback sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct CauchyReport<T> {
    /// `gaps[i]` is the sup-norm distance between depths `i + 2` and `i + 1`.
    pub gaps: Vec<T>,
    /// Least-squares slope of `ln gap` against depth, per period.
    pub slope: Option<T>,
    /// Every gap sits at the floating-point floor.
    pub trivially_convergent: bool,
    pub pass: bool,
}

impl<T: Real> CauchyReport<T> {
    pub fn from_gaps(gaps: Vec<T>) -> Self {
        let floor = gap_floor::<T>();
        let (ns, logs): (Vec<T>, Vec<T>) = gaps
            .iter()
            .enumerate()
            .filter(|(_, &g)| g > floor)
            .map(|(i, &g)| (count::<T>(i + 2), g.ln()))
            .unzip();
        let slope = fit_line(&ns, &logs).map(|f| f.slope);
        let trivially_convergent = gaps.iter().all(|&g| g <= floor);
        let last_small = gaps.last().is_some_and(|&g| g <= floor);
        let pass = trivially_convergent || last_small || slope.is_some_and(|s| s < T::zero());
        Self {
            gaps,
            slope,
            trivially_convergent,
            pass,
        }
    }

    /// CSV `n,gap`.
    pub fn to_csv(&self) -> String {
        let mut lines = vec!["n,gap".to_string()];
        for (i, &g) in self.gaps.iter().enumerate() {
            lines.push(export::row(&[(i + 2).to_string()], &[g]));
        }
        export::finish(lines)
    }
}

/// `S(t, ω)` on the grid nodes of one period starting at `start`.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomPeriodicPath<T> {
    pub start: i64,
    pub dt: T,
    pub dim: usize,
    /// Row-major `(Nτ + 1) × dim`.
    pub states: Vec<T>,
    pub n_used: usize,
    pub last_gap: T,
    pub gaps: Vec<T>,
    pub tol: T,
    pub x0: Vec<T>,
    pub scheme: Scheme,
    pub model_id: String,
    pub path_seed: u64,
    pub path_offset: i64,
}

impl<T: Real> RandomPeriodicPath<T> {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// `S` at the window start (the phase the path was built for).
    pub fn at_start(&self) -> &[T] {
        self.state(0)
    }

    /// CSV `phase_t,x1..xd`.
    pub fn to_csv(&self) -> String {
        let mut lines = vec![format!("phase_t,{}", export::indexed_columns("x", self.dim))];
        for i in 0..self.len() {
            let t = T::from_i64(self.start + i as i64).expect("grid index") * self.dt;
            lines.push(export::row(&[export::num(t)], self.state(i)));
        }
        export::finish(lines)
    }
}

/// Depth-`depth` pullback trajectory restricted to `[t_star, t_star + τ]`.
pub fn pullback_window<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t_star: i64,
    depth: usize,
    x0: &[T],
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    let n_tau = path.grid().period_steps();
    let d = model.dim();
    let k0 = t_star - depth as i64 * n_tau;
    let k1 = t_star + n_tau;
    let mut states = Vec::with_capacity((n_tau as usize + 1) * d);
    let mut x = x0.to_vec();
    if depth == 0 {
        states.extend_from_slice(&x);
    }
    advance(model, path, k0, k1, &mut x, scheme, |k, xk| {
        if k >= t_star {
            states.extend_from_slice(xk);
        }
    })?;
    Ok(Trajectory {
        start: t_star,
        dt: path.grid().dt(),
        dim: d,
        states,
        model_id: model.id().to_string(),
        path_seed: path.seed(),
        path_offset: path.offset(),
        scheme,
    })
}

/// Sup over window nodes of the Euclidean distance.
pub fn sup_gap<T: Real>(a: &[T], b: &[T], dim: usize) -> T {
    a.chunks(dim)
        .zip(b.chunks(dim))
        .map(|(x, y)| dist(x, y))
        .fold(T::zero(), T::max)
}

/// Depths `1..=n_max` and their Cauchy gaps.
pub fn pullback_sequence<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t_star: i64,
    x0: &[T],
    n_max: usize,
    scheme: Scheme,
) -> Result<(Vec<Trajectory<T>>, CauchyReport<T>)> {
    if n_max < 2 {
        return Err(Error::InvalidArgument(
            "at least two pullback depths are needed to form a gap".into(),
        ));
    }
    let windows = (1..=n_max)
        .map(|n| pullback_window(model, path, t_star, n, x0, scheme))
        .collect::<Result<Vec<_>>>()?;
    let gaps = windows
        .windows(2)
        .map(|w| sup_gap(&w[1].states, &w[0].states, model.dim()))
        .collect();
    Ok((windows, CauchyReport::from_gaps(gaps)))
}

/// Deepens the pullback until consecutive depths differ by at most `tol`.
pub fn random_periodic_path<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t_star: i64,
    x0: &[T],
    params: &PullbackParams<T>,
) -> Result<RandomPeriodicPath<T>> {
    if !(params.tol > T::zero()) {
        return Err(Error::InvalidArgument(format!(
            "pullback tolerance must be strictly positive, got {}",
            params.tol
        )));
    }
    if params.n_cap < 2 {
        return Err(Error::InvalidArgument("n_cap must be at least 2".into()));
    }
    let mut prev = pullback_window(model, path, t_star, 1, x0, params.scheme)?;
    let mut gaps = Vec::new();
    for depth in 2..=params.n_cap {
        let next = pullback_window(model, path, t_star, depth, x0, params.scheme)?;
        let gap = sup_gap(&next.states, &prev.states, model.dim());
        gaps.push(gap);
        if gap <= params.tol {
            return Ok(RandomPeriodicPath {
                start: t_star,
                dt: next.dt,
                dim: next.dim,
                states: next.states,
                n_used: depth,
                last_gap: gap,
                gaps,
                tol: params.tol,
                x0: x0.to_vec(),
                scheme: params.scheme,
                model_id: model.id().to_string(),
                path_seed: path.seed(),
                path_offset: path.offset(),
            });
        }
        prev = next;
    }
    Err(Error::NonConvergence {
        gaps: gaps.into_iter().map(to_f64).collect(),
    })
}

/// Residuals of the two defining identities of a random periodic solution.
#[derive(Clone, Debug, PartialEq)]
pub struct PeriodicityReport<T> {
    /// `sup_t |X(t + τ, t, ω, S(t, ω)) − S(t + τ, ω)|` over the window nodes.
    pub flow_residual: T,
    /// `sup_t |S(t, θ_τ ω) − S(t + τ, ω)|`; zero on a consistent grid.
    pub shift_residual: T,
    pub flow_tolerance: T,
    pub flow_pass: bool,
    pub shift_pass: bool,
}

impl<T: Real> PeriodicityReport<T> {
    pub fn pass(&self) -> bool {
        self.flow_pass && self.shift_pass
    }
}

/// Checks `X(t + τ, t, ω, S(t)) = S(t + τ)` and `S(t, θ_τ ω) = S(t + τ, ω)`
/// on every node of the window of `s`. The flow tolerance is `10·tol`.
pub fn verify_random_periodicity<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    s: &RandomPeriodicPath<T>,
) -> Result<PeriodicityReport<T>> {
    let grid = path.grid();
    let n_tau = grid.period_steps();
    if s.path_seed != path.seed() || s.path_offset != path.offset() || s.dt != grid.dt() || s.model_id != model.id() {
        return Err(Error::GridMismatch(
            "random periodic path was built on a different model, path or grid".into(),
        ));
    }
    if s.len() != n_tau as usize + 1 {
        return Err(Error::GridMismatch(format!(
            "window has {} nodes, grid period needs {}",
            s.len(),
            n_tau + 1
        )));
    }
    let next_base = s.start + n_tau;
    let rebuilt = pullback_window(model, path, next_base, s.n_used, &s.x0, s.scheme)?;
    let shifted_path = path.shift(n_tau);
    let shifted = pullback_window(model, &shifted_path, s.start, s.n_used, &s.x0, s.scheme)?;
    let shift_residual = sup_gap(&shifted.states, &rebuilt.states, s.dim);

    let flows = (0..s.len())
        .into_par_iter()
        .map(|j| {
            let k = s.start + j as i64;
            let end = flow_steps(model, path, k, k + n_tau, s.state(j), s.scheme)?;
            Ok(dist(&end, rebuilt.state(j)))
        })
        .collect::<Result<Vec<T>>>()?;
    let flow_residual = flows.into_iter().fold(T::zero(), T::max);
    let flow_tolerance = lit::<T>(10.0) * s.tol;
    Ok(PeriodicityReport {
        flow_residual,
        shift_residual,
        flow_tolerance,
        flow_pass: flow_residual <= flow_tolerance,
        shift_pass: shift_residual == T::zero(),
    })
}

/// Sup-norm distance between the depth-`depth` windows started from `x0`
/// and from `y0` on the same path.
pub fn initial_condition_gap<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t_star: i64,
    x0: &[T],
    y0: &[T],
    depth: usize,
    scheme: Scheme,
) -> Result<T> {
    let a = pullback_window(model, path, t_star, depth, x0, scheme)?;
    let b = pullback_window(model, path, t_star, depth, y0, scheme)?;
    Ok(sup_gap(&a.states, &b.states, model.dim()))
}
