//! Fixed-step schemes on the noise grid.
//!
//! Coefficients are evaluated at the phase time of each grid node
//! (`GridSpec::phase_time`), which makes the discrete flow exactly conjugate
//! under the period shift of the noise path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::SdeModel;
use crate::noise::NoisePath;
use crate::scalar::{count, lit, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Euler,
    Milstein,
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Milstein => "milstein",
        })
    }
}

/// States on every grid node of `[start, end]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub start: i64,
    pub dt: T,
    pub dim: usize,
    /// Row-major `len × dim`.
    pub states: Vec<T>,
    pub model_id: String,
    pub path_seed: u64,
    pub path_offset: i64,
    pub scheme: Scheme,
}

impl<T: Real> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn end(&self) -> i64 {
        self.start + self.len() as i64 - 1
    }

    pub fn state(&self, i: usize) -> &[T] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    /// State at absolute grid index `k`.
    pub fn state_at(&self, k: i64) -> &[T] {
        self.state((k - self.start) as usize)
    }

    pub fn final_state(&self) -> &[T] {
        self.state(self.len() - 1)
    }

    pub fn time(&self, i: usize) -> T {
        T::from_i64(self.start + i as i64).expect("grid index") * self.dt
    }
}

const BLOCK_STEPS: usize = 256;

/// Shared stepping machinery: increment cache plus coefficient scratch.
pub(crate) struct Propagator<'a, T: Real> {
    model: &'a SdeModel<T>,
    path: &'a NoisePath<T>,
    scheme: Scheme,
    dt: T,
    block: Vec<T>,
    block_start: i64,
    block_steps: usize,
    phase_k: i64,
    phase_r: i64,
    pub(crate) dw: Vec<T>,
    f: Vec<T>,
    sigma: Vec<T>,
    jac: Vec<T>,
    djac: Vec<T>,
    tmp: Vec<T>,
}

impl<'a, T: Real> Propagator<'a, T> {
    pub(crate) fn new(model: &'a SdeModel<T>, path: &'a NoisePath<T>, scheme: Scheme) -> Result<Self> {
        let grid = path.grid();
        let (d, m) = (model.dim(), model.noise_dim());
        if (model.period() - grid.period()).abs() > lit::<T>(1e-12) * grid.period() {
            return Err(Error::GridMismatch(format!(
                "model period {} differs from grid period {}",
                model.period(),
                grid.period()
            )));
        }
        if path.dim() != m {
            return Err(Error::GridMismatch(format!(
                "noise path has dimension {}, model expects {m}",
                path.dim()
            )));
        }
        if scheme == Scheme::Milstein && (d != 1 || m != 1 || model.diffusion_jacobians().is_none()) {
            return Err(Error::Capability(
                "Milstein needs a scalar model with a diffusion Jacobian".into(),
            ));
        }
        Ok(Self {
            model,
            path,
            scheme,
            dt: grid.dt(),
            block: vec![T::zero(); BLOCK_STEPS * m],
            block_start: i64::MIN,
            block_steps: 0,
            phase_k: i64::MIN,
            phase_r: 0,
            dw: vec![T::zero(); m],
            f: vec![T::zero(); d],
            sigma: vec![T::zero(); d * m],
            jac: vec![T::zero(); d * d],
            djac: vec![T::zero(); m * d * d],
            tmp: vec![T::zero(); d],
        })
    }

    /// Same value as `GridSpec::phase_time`, with the remainder updated
    /// incrementally for consecutive indices.
    #[inline]
    pub(crate) fn phase_time(&mut self, k: i64) -> T {
        if k != self.phase_k {
            let n_tau = self.path.grid().period_steps();
            self.phase_r = if k == self.phase_k + 1 {
                if self.phase_r + 1 == n_tau {
                    0
                } else {
                    self.phase_r + 1
                }
            } else {
                k.rem_euclid(n_tau)
            };
            self.phase_k = k;
        }
        count::<T>(self.phase_r as usize) * self.dt
    }

    /// Loads ΔW_k into `self.dw`.
    #[inline]
    pub(crate) fn load_noise(&mut self, k: i64) {
        let m = self.dw.len();
        if k < self.block_start || k >= self.block_start + self.block_steps as i64 {
            self.path.fill_increments(k, BLOCK_STEPS, &mut self.block);
            self.block_start = k;
            self.block_steps = BLOCK_STEPS;
        }
        let off = (k - self.block_start) as usize * m;
        self.dw.copy_from_slice(&self.block[off..off + m]);
    }

    /// One step from node `k` to `k + 1` with the loaded increment.
    #[inline]
    pub(crate) fn step_state(&mut self, k: i64, x: &mut [T]) -> Result<()> {
        let t = self.phase_time(k);
        let m = self.dw.len();
        self.model.drift_into(t, x, &mut self.f);
        self.model.diffusion_into(t, x, &mut self.sigma);
        if self.scheme == Scheme::Milstein {
            (self.model.diffusion_jacobians().expect("checked"))(t, x, &mut self.djac);
            let dw = self.dw[0];
            let corr = lit::<T>(0.5) * self.sigma[0] * self.djac[0] * (dw * dw - self.dt);
            x[0] = x[0] + self.f[0] * self.dt + self.sigma[0] * dw + corr;
        } else {
            for (i, xi) in x.iter_mut().enumerate() {
                let mut noise = T::zero();
                for j in 0..m {
                    noise = noise + self.sigma[i * m + j] * self.dw[j];
                }
                *xi = *xi + self.f[i] * self.dt + noise;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        Ok(())
    }

    /// Variational step `v ← v + J_0 v dt + Σ_j J_j v ΔW^j` at `(t_k, x_k)`.
    pub(crate) fn step_tangent(&mut self, k: i64, x: &[T], v: &mut [T]) -> Result<()> {
        let t = self.phase_time(k);
        let d = x.len();
        let m = self.dw.len();
        let (Some(jd), Some(jdiff)) = (self.model.drift_jacobian(), self.model.diffusion_jacobians()) else {
            return Err(Error::Capability("derivative flow needs drift and diffusion Jacobians".into()));
        };
        jd(t, x, &mut self.jac);
        jdiff(t, x, &mut self.djac);
        for i in 0..d {
            let mut acc = T::zero();
            for (j, &vj) in v.iter().enumerate() {
                acc = acc + self.jac[i * d + j] * vj * self.dt;
            }
            for l in 0..m {
                let blk = &self.djac[l * d * d..(l + 1) * d * d];
                let row: T = blk[i * d..(i + 1) * d].iter().zip(v.iter()).map(|(&a, &b)| a * b).sum();
                acc = acc + row * self.dw[l];
            }
            self.tmp[i] = v[i] + acc;
        }
        v.copy_from_slice(&self.tmp);
        if v.iter().any(|c| !c.is_finite()) {
            return Err(Error::Divergence { step: k });
        }
        Ok(())
    }
}

fn check_x0<T: Real>(model: &SdeModel<T>, x0: &[T]) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::InvalidArgument(format!(
            "initial state has {} components, model dimension is {}",
            x0.len(),
            model.dim()
        )));
    }
    Ok(())
}

fn check_order(k0: i64, k1: i64) -> Result<()> {
    if k1 < k0 {
        return Err(Error::InvalidArgument(format!("end index {k1} precedes start index {k0}")));
    }
    Ok(())
}

fn empty_trajectory<T: Real>(model: &SdeModel<T>, path: &NoisePath<T>, k0: i64, cap: usize, scheme: Scheme) -> Trajectory<T> {
    Trajectory {
        start: k0,
        dt: path.grid().dt(),
        dim: model.dim(),
        states: Vec::with_capacity(cap * model.dim()),
        model_id: model.id().to_string(),
        path_seed: path.seed(),
        path_offset: path.offset(),
        scheme,
    }
}

/// Solution on `[t0, t1]` (times must lie on the grid).
pub fn integrate<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t0: T,
    t1: T,
    x0: &[T],
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    let k0 = path.grid().index_of(t0)?;
    let k1 = path.grid().index_of(t1)?;
    integrate_steps(model, path, k0, k1, x0, scheme)
}

/// Solution on grid nodes `k0..=k1`.
pub fn integrate_steps<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    k1: i64,
    x0: &[T],
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    check_x0(model, x0)?;
    check_order(k0, k1)?;
    let mut prop = Propagator::new(model, path, scheme)?;
    let mut traj = empty_trajectory(model, path, k0, (k1 - k0 + 1) as usize, scheme);
    let mut x = x0.to_vec();
    traj.states.extend_from_slice(&x);
    for k in k0..k1 {
        prop.load_noise(k);
        prop.step_state(k, &mut x)?;
        traj.states.extend_from_slice(&x);
    }
    Ok(traj)
}

/// Final state `X(k1, k0, ω, x0)` without storing the trajectory.
pub fn flow_steps<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    k1: i64,
    x0: &[T],
    scheme: Scheme,
) -> Result<Vec<T>> {
    let mut x = x0.to_vec();
    advance(model, path, k0, k1, &mut x, scheme, |_, _| {})?;
    Ok(x)
}

/// Evolves `x` in place from node `k0` to `k1`, calling `observe(k, x_k)` at
/// every node after the first.
pub fn advance<T: Real, F: FnMut(i64, &[T])>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    k1: i64,
    x: &mut [T],
    scheme: Scheme,
    mut observe: F,
) -> Result<()> {
    check_x0(model, x)?;
    check_order(k0, k1)?;
    let mut prop = Propagator::new(model, path, scheme)?;
    for k in k0..k1 {
        prop.load_noise(k);
        prop.step_state(k, x)?;
        observe(k + 1, x);
    }
    Ok(())
}

/// Two solutions driven by the same increments.
pub fn integrate_pair<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t0: T,
    t1: T,
    x0: &[T],
    y0: &[T],
    scheme: Scheme,
) -> Result<(Trajectory<T>, Trajectory<T>)> {
    let k0 = path.grid().index_of(t0)?;
    let k1 = path.grid().index_of(t1)?;
    integrate_pair_steps(model, path, k0, k1, x0, y0, scheme)
}

pub fn integrate_pair_steps<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    k1: i64,
    x0: &[T],
    y0: &[T],
    scheme: Scheme,
) -> Result<(Trajectory<T>, Trajectory<T>)> {
    check_x0(model, x0)?;
    check_x0(model, y0)?;
    check_order(k0, k1)?;
    let mut prop = Propagator::new(model, path, scheme)?;
    let cap = (k1 - k0 + 1) as usize;
    let mut tx = empty_trajectory(model, path, k0, cap, scheme);
    let mut ty = empty_trajectory(model, path, k0, cap, scheme);
    let (mut x, mut y) = (x0.to_vec(), y0.to_vec());
    tx.states.extend_from_slice(&x);
    ty.states.extend_from_slice(&y);
    for k in k0..k1 {
        prop.load_noise(k);
        prop.step_state(k, &mut x)?;
        prop.step_state(k, &mut y)?;
        tx.states.extend_from_slice(&x);
        ty.states.extend_from_slice(&y);
    }
    Ok((tx, ty))
}

/// Tangent trajectory `D_x X(t, t0, ω, x0) v` (Euler only).
pub fn derivative_flow<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    t0: T,
    t1: T,
    x0: &[T],
    v: &[T],
    scheme: Scheme,
) -> Result<Trajectory<T>> {
    let k0 = path.grid().index_of(t0)?;
    let k1 = path.grid().index_of(t1)?;
    derivative_flow_steps(model, path, k0, k1, x0, v, scheme).map(|(_, tangent)| tangent)
}

/// Base and tangent trajectories on nodes `k0..=k1`.
pub fn derivative_flow_steps<T: Real>(
    model: &SdeModel<T>,
    path: &NoisePath<T>,
    k0: i64,
    k1: i64,
    x0: &[T],
    v: &[T],
    scheme: Scheme,
) -> Result<(Trajectory<T>, Trajectory<T>)> {
    if scheme != Scheme::Euler {
        return Err(Error::Capability("derivative flow is implemented for Euler only".into()));
    }
    if !model.has_jacobians() {
        return Err(Error::Capability("derivative flow needs drift and diffusion Jacobians".into()));
    }
    check_x0(model, x0)?;
    check_x0(model, v)?;
    check_order(k0, k1)?;
    let mut prop = Propagator::new(model, path, scheme)?;
    let cap = (k1 - k0 + 1) as usize;
    let mut base = empty_trajectory(model, path, k0, cap, scheme);
    let mut tangent = empty_trajectory(model, path, k0, cap, scheme);
    let (mut x, mut w) = (x0.to_vec(), v.to_vec());
    base.states.extend_from_slice(&x);
    tangent.states.extend_from_slice(&w);
    for k in k0..k1 {
        prop.load_noise(k);
        prop.step_tangent(k, &x, &mut w)?;
        prop.step_state(k, &mut x)?;
        base.states.extend_from_slice(&x);
        tangent.states.extend_from_slice(&w);
    }
    Ok((base, tangent))
}

impl<T: Real> Trajectory<T> {
    /// CSV with header `t,x1..xd`, one row per grid node.
    pub fn to_csv(&self) -> String {
        let mut lines = vec![format!("t,{}", crate::export::indexed_columns("x", self.dim))];
        for i in 0..self.len() {
            lines.push(crate::export::row(&[crate::export::num(self.time(i))], self.state(i)));
        }
        crate::export::finish(lines)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_cubic_scalar, build_linear_periodic, CubicScalarSpec, LinearPeriodicSpec};
    use crate::noise::GridSpec;
    use std::f64::consts::TAU;

    fn cubic() -> SdeModel<f64> {
        build_cubic_scalar(&CubicScalarSpec { gamma: 0.5, delta: 1.0 }).unwrap()
    }

    #[test]
    fn deterministic_decay() {
        let model = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 0.0, 1.0)).unwrap();
        let grid = GridSpec::from_period(1.0, 10_000).unwrap();
        let path = NoisePath::new(1, 1, grid);
        let traj = integrate(&model, &path, 0.0, 1.0, &[1.0], Scheme::Euler).unwrap();
        assert_eq!(traj.len(), 10_001);
        assert_eq!(traj.state(0), &[1.0]);
        assert!((traj.final_state()[0] - (-1.0f64).exp()).abs() < 1e-3);
    }

    #[test]
    fn single_cubic_step() {
        // One Euler step with a hand-picked increment.
        let model = cubic();
        let grid = GridSpec::from_period(TAU, 628).unwrap();
        let path = NoisePath::new(0, 1, grid);
        let mut prop = Propagator::new(&model, &path, Scheme::Euler).unwrap();
        prop.dt = 0.01;
        prop.dw[0] = 0.02;
        let mut x = [1.0];
        prop.step_state(0, &mut x).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn misaligned_and_reversed_times() {
        let grid = GridSpec::from_period(TAU, 628).unwrap();
        let path = NoisePath::new(0, 1, grid);
        let err = integrate(&cubic(), &path, 0.0, 0.5 * grid.dt(), &[0.0], Scheme::Euler).unwrap_err();
        assert!(matches!(err, Error::Alignment { .. }));
        assert!(integrate_steps(&cubic(), &path, 5, 4, &[0.0], Scheme::Euler).is_err());
    }

    #[test]
    fn divergence_reports_step() {
        let model = build_cubic_scalar(&CubicScalarSpec { gamma: 0.0, delta: 1.0 }).unwrap();
        let grid = GridSpec::from_period(TAU, 2).unwrap();
        let path = NoisePath::new(0, 1, grid);
        let err = integrate_steps(&model, &path, 0, 50, &[10.0], Scheme::Euler).unwrap_err();
        let Error::Divergence { step } = err else { panic!("{err:?}") };
        assert!((0..50).contains(&step));
    }

    #[test]
    fn milstein_restrictions() {
        let grid = GridSpec::from_period(TAU, 628).unwrap();
        let path = NoisePath::new(0, 1, grid);
        let e = integrate_steps(&cubic(), &path, 0, 10, &[0.0], Scheme::Milstein).unwrap();
        let m = integrate_steps(&cubic(), &path, 0, 10, &[0.0], Scheme::Euler).unwrap();
        // additive noise: the correction vanishes
        assert_eq!(e, Trajectory { scheme: Scheme::Milstein, ..m });
    }

    #[test]
    fn grid_period_must_match_model() {
        let grid = GridSpec::from_period(1.0, 100).unwrap();
        let path = NoisePath::new(0, 1, grid);
        assert!(matches!(
            integrate_steps(&cubic(), &path, 0, 1, &[0.0], Scheme::Euler),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn pair_gap_is_deterministic_for_additive_noise() {
        let spec = LinearPeriodicSpec::new(crate::trig::TrigPoly::with_sine(1.0, 0.5), 1.0);
        let model = build_linear_periodic(&spec).unwrap();
        let grid = GridSpec::from_period(TAU, 628).unwrap();
        let path = NoisePath::new(3, 1, grid);
        let (a, b) = integrate_pair_steps(&model, &path, 0, 628, &[1.5], &[0.5], Scheme::Euler).unwrap();
        let mut gap = 1.0;
        for k in 0..628 {
            gap *= 1.0 - spec.alpha.value(grid.phase_time(k)) * grid.dt();
        }
        let got = a.final_state()[0] - b.final_state()[0];
        assert!((got - gap).abs() < 1e-12 * gap.abs().max(1e-3), "{got} vs {gap}");
        assert_eq!(a, integrate_steps(&model, &path, 0, 628, &[1.5], Scheme::Euler).unwrap());
        let (c, d) = integrate_pair_steps(&model, &path, 0, 628, &[1.5], &[1.5], Scheme::Euler).unwrap();
        assert_eq!(c.states, d.states);
    }

    #[test]
    fn tangent_of_linear_model() {
        let model = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 1.0, 1.0)).unwrap();
        let grid = GridSpec::from_period(1.0, 10_000).unwrap();
        let path = NoisePath::new(8, 1, grid);
        let tan = derivative_flow(&model, &path, 0.0, 1.0, &[0.3], &[1.0], Scheme::Euler).unwrap();
        assert!((tan.final_state()[0] - (-1.0f64).exp()).abs() < 1e-3);
        let zero = derivative_flow(&model, &path, 0.0, 1.0, &[0.3], &[0.0], Scheme::Euler).unwrap();
        assert!(zero.states.iter().all(|&v| v == 0.0));
        let no_jac = SdeModel::new(
            "bare",
            1,
            1,
            1.0,
            std::sync::Arc::new(|_, x: &[f64], o: &mut [f64]| o[0] = -x[0]),
            std::sync::Arc::new(|_, _: &[f64], o: &mut [f64]| o[0] = 1.0),
        )
        .unwrap();
        assert!(matches!(
            derivative_flow(&no_jac, &path, 0.0, 1.0, &[0.0], &[1.0], Scheme::Euler),
            Err(Error::Capability(_))
        ));
    }
}
