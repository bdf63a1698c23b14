//! SDE models with τ-periodic coefficients and Lyapunov test functions.
//!
//! Coefficient callbacks write into caller-provided buffers:
//!
//! * drift `f_0(t, x)`: length `d`;
//! * diffusion `σ(t, x)`: `d × m` row-major, column `k` is `f_k`;
//! * drift Jacobian: `d × d` row-major;
//! * diffusion Jacobians: `m` consecutive `d × d` blocks, block `k` is `∂f_k/∂x`;
//! * diffusion right inverse `σ⁻¹(t, x)`: `m × d` row-major.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::CounterStream;
use crate::scalar::{count, lit, Real};
use crate::trig::TrigPoly;

pub type Field<T> = Arc<dyn Fn(T, &[T], &mut [T]) + Send + Sync>;
pub type ScalarField<T> = Arc<dyn Fn(T, &[T]) -> T + Send + Sync>;
pub type Rate<T> = Arc<dyn Fn(T) -> T + Send + Sync>;

/// `dX = f_0(t, X) dt + Σ_k f_k(t, X) dW^k` with coefficients of period τ.
#[derive(Clone)]
pub struct SdeModel<T> {
    id: String,
    dim: usize,
    noise_dim: usize,
    period: T,
    drift: Field<T>,
    diffusion: Field<T>,
    drift_jacobian: Option<Field<T>>,
    diffusion_jacobians: Option<Field<T>>,
    right_inverse: Option<Field<T>>,
}

impl<T: Real> std::fmt::Debug for SdeModel<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SdeModel")
            .field("id", &self.id)
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("period", &self.period)
            .field("drift_jacobian", &self.drift_jacobian.is_some())
            .field("diffusion_jacobians", &self.diffusion_jacobians.is_some())
            .field("right_inverse", &self.right_inverse.is_some())
            .finish()
    }
}

impl<T: Real> SdeModel<T> {
    pub fn new(
        id: impl Into<String>,
        dim: usize,
        noise_dim: usize,
        period: T,
        drift: Field<T>,
        diffusion: Field<T>,
    ) -> Result<Self> {
        if dim == 0 || noise_dim == 0 {
            return Err(Error::InvalidSpec("state and noise dimensions must be positive".into()));
        }
        if !(period > T::zero()) || !period.is_finite() {
            return Err(Error::InvalidSpec(format!("period must be positive, got {period}")));
        }
        Ok(Self {
            id: id.into(),
            dim,
            noise_dim,
            period,
            drift,
            diffusion,
            drift_jacobian: None,
            diffusion_jacobians: None,
            right_inverse: None,
        })
    }

    pub fn with_drift_jacobian(mut self, f: Field<T>) -> Self {
        self.drift_jacobian = Some(f);
        self
    }

    pub fn with_diffusion_jacobians(mut self, f: Field<T>) -> Self {
        self.diffusion_jacobians = Some(f);
        self
    }

    pub fn with_right_inverse(mut self, f: Field<T>) -> Self {
        self.right_inverse = Some(f);
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn noise_dim(&self) -> usize {
        self.noise_dim
    }

    pub fn period(&self) -> T {
        self.period
    }

    #[inline]
    pub fn drift_into(&self, t: T, x: &[T], out: &mut [T]) {
        (self.drift)(t, x, out)
    }

    #[inline]
    pub fn diffusion_into(&self, t: T, x: &[T], out: &mut [T]) {
        (self.diffusion)(t, x, out)
    }

    pub fn drift(&self, t: T, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.drift_into(t, x, &mut out);
        out
    }

    pub fn diffusion(&self, t: T, x: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim * self.noise_dim];
        self.diffusion_into(t, x, &mut out);
        out
    }

    pub fn drift_jacobian(&self) -> Option<&Field<T>> {
        self.drift_jacobian.as_ref()
    }

    pub fn diffusion_jacobians(&self) -> Option<&Field<T>> {
        self.diffusion_jacobians.as_ref()
    }

    pub fn right_inverse(&self) -> Option<&Field<T>> {
        self.right_inverse.as_ref()
    }

    pub fn has_jacobians(&self) -> bool {
        self.drift_jacobian.is_some() && self.diffusion_jacobians.is_some()
    }

    /// Samples `(t, x)` with `|x_i| ≤ radius` and checks periodicity of the
    /// coefficients (relative 1e−12) and, when present, `σ σ⁻¹ = I` (1e−10).
    pub fn validate(&self, samples: usize, radius: T, seed: u64) -> Result<()> {
        let (d, m) = (self.dim, self.noise_dim);
        let mut rng = CounterStream::new(seed, 0x5eed);
        let close = |a: T, b: T, tol: f64| (a - b).abs() <= lit::<T>(tol) * T::one().max(a.abs()).max(b.abs());
        for _ in 0..samples {
            let t = lit::<T>(rng.next_f64()) * self.period;
            let x: Vec<T> = (0..d)
                .map(|_| (lit::<T>(2.0 * rng.next_f64()) - T::one()) * radius)
                .collect();
            let (f0, f1) = (self.drift(t, &x), self.drift(t + self.period, &x));
            let (s0, s1) = (self.diffusion(t, &x), self.diffusion(t + self.period, &x));
            let tol = 1e-12 * (1.0 + crate::scalar::to_f64(t.abs() + self.period).max(1.0));
            if f0.iter().zip(&f1).chain(s0.iter().zip(&s1)).any(|(&a, &b)| !close(a, b, tol)) {
                return Err(Error::InvalidSpec(format!(
                    "model {} is not {}-periodic at t = {t}",
                    self.id, self.period
                )));
            }
            if let Some(ri) = &self.right_inverse {
                let mut inv = vec![T::zero(); m * d];
                ri(t, &x, &mut inv);
                for i in 0..d {
                    for j in 0..d {
                        let v = (0..m).fold(T::zero(), |acc, k| acc + s0[i * m + k] * inv[k * d + j]);
                        let target = if i == j { T::one() } else { T::zero() };
                        if (v - target).abs() > lit(1e-10) {
                            return Err(Error::InvalidSpec(format!(
                                "diffusion right inverse of {} is inaccurate at t = {t}",
                                self.id
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// `dX = −α(t) X dt + noise_scale dW` (scalar).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + serde::de::DeserializeOwned"))]
pub struct LinearPeriodicSpec<T> {
    pub alpha: TrigPoly<T>,
    pub noise_scale: T,
    /// Period for constant `α`; defaults to `2π/ω`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<T>,
}

impl<T: Real> LinearPeriodicSpec<T> {
    pub fn new(alpha: TrigPoly<T>, noise_scale: T) -> Self {
        Self {
            alpha,
            noise_scale,
            period: None,
        }
    }

    /// Constant rate with an explicit period.
    pub fn constant(alpha: T, noise_scale: T, period: T) -> Self {
        Self {
            alpha: TrigPoly::constant(alpha),
            noise_scale,
            period: Some(period),
        }
    }

    pub fn resolved_period(&self) -> Result<T> {
        let base = self.alpha.base_period();
        match self.period {
            None => Ok(base),
            Some(p) if self.alpha.is_constant() => Ok(p),
            Some(p) => {
                if (p - base).abs() <= lit::<T>(1e-12) * base {
                    Ok(base)
                } else {
                    Err(Error::InvalidSpec(format!(
                        "period {p} conflicts with the α base period {base}"
                    )))
                }
            }
        }
    }
}

/// `dx = [(−1 + γ sin t) x − δ x³] dt + dW`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicScalarSpec<T> {
    pub gamma: T,
    pub delta: T,
}

pub fn build_linear_periodic<T: Real>(spec: &LinearPeriodicSpec<T>) -> Result<SdeModel<T>> {
    spec.alpha.validate().map_err(Error::InvalidSpec)?;
    if !(spec.noise_scale >= T::zero()) || !spec.noise_scale.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "noise_scale must be non-negative, got {}",
            spec.noise_scale
        )));
    }
    let period = spec.resolved_period()?;
    let id = format!(
        "linear(alpha={}+{:?}sin+{:?}cos@{},noise={})",
        spec.alpha.constant, spec.alpha.sin, spec.alpha.cos, spec.alpha.frequency, spec.noise_scale
    );
    let sigma = spec.noise_scale;
    let (a1, a2) = (spec.alpha.clone(), spec.alpha.clone());
    let mut model = SdeModel::new(
        id,
        1,
        1,
        period,
        Arc::new(move |t, x, out| out[0] = -a1.value(t) * x[0]),
        Arc::new(move |_, _, out| out[0] = sigma),
    )?
    .with_drift_jacobian(Arc::new(move |t, _, out| out[0] = -a2.value(t)))
    .with_diffusion_jacobians(Arc::new(|_, _, out| out[0] = T::zero()));
    if sigma > T::zero() {
        let inv = T::one() / sigma;
        model = model.with_right_inverse(Arc::new(move |_, _, out| out[0] = inv));
    }
    Ok(model)
}

pub fn build_cubic_scalar<T: Real>(spec: &CubicScalarSpec<T>) -> Result<SdeModel<T>> {
    let CubicScalarSpec { gamma, delta } = *spec;
    if !(delta >= T::zero()) || !gamma.is_finite() || !delta.is_finite() {
        return Err(Error::InvalidSpec(format!(
            "cubic model needs finite γ and δ ≥ 0, got γ = {gamma}, δ = {delta}"
        )));
    }
    let three = lit::<T>(3.0);
    Ok(SdeModel::new(
        format!("cubic(gamma={gamma},delta={delta})"),
        1,
        1,
        T::TAU(),
        Arc::new(move |t, x, out| {
            let x = x[0];
            out[0] = (gamma * t.sin() - T::one()) * x - delta * x * x * x;
        }),
        Arc::new(|_, _, out| out[0] = T::one()),
    )?
    .with_drift_jacobian(Arc::new(move |t, x, out| {
        out[0] = (gamma * t.sin() - T::one()) - three * delta * x[0] * x[0]
    }))
    .with_diffusion_jacobians(Arc::new(|_, _, out| out[0] = T::zero()))
    .with_right_inverse(Arc::new(|_, _, out| out[0] = T::one())))
}

/// One monomial `c(t) · Π_i x_i^{powers_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + serde::de::DeserializeOwned"))]
pub struct PolyTerm<T> {
    pub coef: TrigPoly<T>,
    #[serde(default)]
    pub powers: Vec<u32>,
}

/// Coefficient tables: polynomial in the state with trigonometric
/// polynomial coefficients in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + serde::de::DeserializeOwned"))]
pub struct PolyModelSpec<T> {
    pub dim: usize,
    pub noise_dim: usize,
    /// Common period of all coefficients.
    pub period: T,
    /// `drift[i]` lists the terms of component `i`.
    pub drift: Vec<Vec<PolyTerm<T>>>,
    /// `diffusion[i][k]` lists the terms of entry `(i, k)`.
    pub diffusion: Vec<Vec<Vec<PolyTerm<T>>>>,
}

fn eval_terms<T: Real>(terms: &[PolyTerm<T>], t: T, x: &[T]) -> T {
    terms.iter().fold(T::zero(), |acc, term| {
        let mono = term
            .powers
            .iter()
            .zip(x)
            .fold(T::one(), |p, (&e, &xi)| p * xi.powi(e as i32));
        acc + term.coef.value(t) * mono
    })
}

fn eval_terms_partial<T: Real>(terms: &[PolyTerm<T>], t: T, x: &[T], j: usize) -> T {
    terms.iter().fold(T::zero(), |acc, term| {
        let ej = term.powers.get(j).copied().unwrap_or(0);
        if ej == 0 {
            return acc;
        }
        let mono = term.powers.iter().zip(x).enumerate().fold(T::one(), |p, (i, (&e, &xi))| {
            if i == j {
                p * count::<T>(e as usize) * xi.powi(e as i32 - 1)
            } else {
                p * xi.powi(e as i32)
            }
        });
        acc + term.coef.value(t) * mono
    })
}

pub fn build_poly_model<T: Real>(spec: &PolyModelSpec<T>) -> Result<SdeModel<T>> {
    let (d, m) = (spec.dim, spec.noise_dim);
    let mut problems = Vec::new();
    if spec.drift.len() != d {
        problems.push(format!("drift has {} components, expected {d}", spec.drift.len()));
    }
    if spec.diffusion.len() != d || spec.diffusion.iter().any(|row| row.len() != m) {
        problems.push(format!("diffusion must be a {d} x {m} table"));
    }
    let all_terms = spec.drift.iter().flatten().chain(spec.diffusion.iter().flatten().flatten());
    for term in all_terms {
        if let Err(e) = term.coef.validate() {
            problems.push(e);
        }
        if term.powers.len() > d {
            problems.push(format!("monomial has {} exponents for dimension {d}", term.powers.len()));
        }
        if !term.coef.is_constant() {
            let ratio = spec.period / term.coef.base_period();
            if (ratio - ratio.round()).abs() > lit(1e-9) || ratio.round() < T::one() {
                problems.push(format!(
                    "coefficient with base period {} does not divide the model period {}",
                    term.coef.base_period(),
                    spec.period
                ));
            }
        }
    }
    if !problems.is_empty() {
        return Err(Error::InvalidSpec(problems.join("; ")));
    }
    let drift = Arc::new(spec.drift.clone());
    let diffusion = Arc::new(spec.diffusion.clone());
    let (dr, dj, df, dfj, dri) = (
        drift.clone(),
        drift,
        diffusion.clone(),
        diffusion.clone(),
        diffusion,
    );
    Ok(SdeModel::new(
        format!("poly(d={d},m={m})"),
        d,
        m,
        spec.period,
        Arc::new(move |t, x, out| {
            for (o, terms) in out.iter_mut().zip(dr.iter()) {
                *o = eval_terms(terms, t, x);
            }
        }),
        Arc::new(move |t, x, out| {
            for i in 0..d {
                for k in 0..m {
                    out[i * m + k] = eval_terms(&df[i][k], t, x);
                }
            }
        }),
    )?
    .with_drift_jacobian(Arc::new(move |t, x, out| {
        for i in 0..d {
            for j in 0..d {
                out[i * d + j] = eval_terms_partial(&dj[i], t, x, j);
            }
        }
    }))
    .with_diffusion_jacobians(Arc::new(move |t, x, out| {
        for k in 0..m {
            for i in 0..d {
                for j in 0..d {
                    out[k * d * d + i * d + j] = eval_terms_partial(&dfj[i][k], t, x, j);
                }
            }
        }
    }))
    .with_right_inverse(Arc::new(move |t, x, out| {
        let mut sigma = vec![T::zero(); d * m];
        for i in 0..d {
            for k in 0..m {
                sigma[i * m + k] = eval_terms(&dri[i][k], t, x);
            }
        }
        match linalg::right_inverse(&sigma, d, m) {
            Some(inv) => out.copy_from_slice(&inv),
            None => out.iter_mut().for_each(|o| *o = T::nan()),
        }
    })))
}

/// Lyapunov test function `V(t, x)` with derivatives, exponent `p` and the
/// rate `λ(t)` of the two-point generator bound.
#[derive(Clone)]
pub struct LyapunovSpec<T> {
    pub value: ScalarField<T>,
    pub gradient: Field<T>,
    pub hessian: Field<T>,
    /// `∂V/∂t`; `None` means time-independent.
    pub time_derivative: Option<ScalarField<T>>,
    pub p: T,
    pub lambda_rate: Option<Rate<T>>,
}

impl<T: Real> LyapunovSpec<T> {
    pub fn with_lambda(mut self, rate: Rate<T>) -> Self {
        self.lambda_rate = Some(rate);
        self
    }
}

/// `V(t, x) = |x|^p`.
pub fn quadratic_lyapunov<T: Real>(p: T) -> Result<LyapunovSpec<T>> {
    if !(p >= T::one()) || !p.is_finite() {
        return Err(Error::InvalidSpec(format!("Lyapunov exponent p must be ≥ 1, got {p}")));
    }
    let two = lit::<T>(2.0);
    let gradient: Field<T> = Arc::new(move |_, x, out| {
        let r = linalg::norm(x);
        if r == T::zero() {
            out.iter_mut().for_each(|o| *o = T::zero());
            return;
        }
        let s = p * r.powf(p - two);
        out.iter_mut().zip(x).for_each(|(o, &xi)| *o = s * xi);
    });
    let hessian: Field<T> = Arc::new(move |_, x, out| {
        let d = x.len();
        let r = linalg::norm(x);
        if r == T::zero() {
            // Limit values: 2I for p = 2, 0 for p > 2, unbounded for p < 2.
            let diag = if p == two {
                two
            } else if p > two {
                T::zero()
            } else {
                T::infinity()
            };
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = if i == j { diag } else { T::zero() };
                }
            }
            return;
        }
        let outer = if p == two { T::zero() } else { p * (p - two) * r.powf(p - lit(4.0)) };
        let diag = p * r.powf(p - two);
        for i in 0..d {
            for j in 0..d {
                let base = outer * x[i] * x[j];
                out[i * d + j] = if i == j { base + diag } else { base };
            }
        }
    });
    Ok(LyapunovSpec {
        value: Arc::new(move |_, x| linalg::norm(x).powf(p)),
        gradient,
        hessian,
        time_derivative: None,
        p,
        lambda_rate: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, TAU};

    fn unit_linear() -> SdeModel<f64> {
        build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 1.0, TAU)).unwrap()
    }

    #[test]
    fn linear_drift_values() {
        assert_eq!(unit_linear().drift(0.0, &[2.0]), vec![-2.0]);
        let m = build_linear_periodic(&LinearPeriodicSpec::new(TrigPoly::with_sine(1.0, 0.5), 1.0)).unwrap();
        assert!((m.drift(FRAC_PI_2, &[1.0])[0] + 1.5).abs() < 1e-15);
        assert!((m.period() - TAU).abs() < 1e-15);
        m.validate(100, 5.0, 1).unwrap();
    }

    #[test]
    fn negative_noise_rejected() {
        let err = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, -0.1, 1.0)).unwrap_err();
        assert!(matches!(err, Error::InvalidSpec(_)));
        let quiet = build_linear_periodic(&LinearPeriodicSpec::constant(1.0, 0.0, 1.0)).unwrap();
        assert!(quiet.right_inverse().is_none());
    }

    #[test]
    fn cubic_values() {
        let m = build_cubic_scalar(&CubicScalarSpec { gamma: 0.5, delta: 1.0 }).unwrap();
        assert!((m.drift(FRAC_PI_2, &[1.0])[0] + 1.5).abs() < 1e-15);
        let mut jac = [0.0];
        (m.drift_jacobian().unwrap())(0.0, &[2.0], &mut jac);
        assert_eq!(jac[0], -13.0);
        assert!(build_cubic_scalar(&CubicScalarSpec { gamma: 0.0, delta: -1.0 }).is_err());
        m.validate(100, 5.0, 2).unwrap();
    }

    #[test]
    fn cubic_degenerates_to_linear() {
        let c = build_cubic_scalar(&CubicScalarSpec { gamma: 0.0, delta: 0.0 }).unwrap();
        let l = unit_linear();
        for &(t, x) in &[(0.0, 1.0), (1.3, -2.5), (4.0, 0.7)] {
            assert_eq!(c.drift(t, &[x]), l.drift(t, &[x]));
            assert_eq!(c.diffusion(t, &[x]), l.diffusion(t, &[x]));
        }
    }

    #[test]
    fn lyapunov_formulas() {
        let v2 = quadratic_lyapunov(2.0).unwrap();
        assert_eq!((v2.value)(0.0, &[3.0, 4.0]), 25.0);
        let mut g = [0.0; 2];
        (v2.gradient)(0.0, &[3.0, 4.0], &mut g);
        assert_eq!(g, [6.0, 8.0]);
        let mut h = [0.0; 4];
        (v2.hessian)(0.0, &[3.0, 4.0], &mut h);
        assert_eq!(h, [2.0, 0.0, 0.0, 2.0]);
        (v2.gradient)(0.0, &[0.0, 0.0], &mut g);
        assert_eq!(g, [0.0, 0.0]);
        assert_eq!((v2.value)(0.0, &[0.0, 0.0]), 0.0);

        let v4 = quadratic_lyapunov(4.0).unwrap();
        let (mut g1, mut h1) = ([0.0], [0.0]);
        (v4.gradient)(0.0, &[2.0], &mut g1);
        (v4.hessian)(0.0, &[2.0], &mut h1);
        assert_eq!((v4.value)(0.0, &[2.0]), 16.0);
        assert_eq!(g1[0], 32.0);
        assert_eq!(h1[0], 48.0);
        assert!(quadratic_lyapunov(0.5).is_err());
    }

    #[test]
    fn poly_model_matches_cubic() {
        let spec = PolyModelSpec {
            dim: 1,
            noise_dim: 1,
            period: TAU,
            drift: vec![vec![
                PolyTerm { coef: TrigPoly::with_sine(-1.0, 0.5), powers: vec![1] },
                PolyTerm { coef: TrigPoly::constant(-1.0), powers: vec![3] },
            ]],
            diffusion: vec![vec![vec![PolyTerm { coef: TrigPoly::constant(1.0), powers: vec![] }]]],
        };
        let poly = build_poly_model(&spec).unwrap();
        let cubic = build_cubic_scalar(&CubicScalarSpec { gamma: 0.5, delta: 1.0 }).unwrap();
        let mut a = [0.0];
        let mut b = [0.0];
        for &(t, x) in &[(0.0, 2.0), (1.1, -0.4), (5.0, 3.0)] {
            assert!((poly.drift(t, &[x])[0] - cubic.drift(t, &[x])[0]).abs() < 1e-12);
            (poly.drift_jacobian().unwrap())(t, &[x], &mut a);
            (cubic.drift_jacobian().unwrap())(t, &[x], &mut b);
            assert!((a[0] - b[0]).abs() < 1e-12);
        }
        poly.validate(50, 3.0, 4).unwrap();
    }

    #[test]
    fn poly_model_reports_every_problem() {
        let spec = PolyModelSpec::<f64> {
            dim: 2,
            noise_dim: 1,
            period: TAU,
            drift: vec![vec![]],
            diffusion: vec![],
        };
        let Error::InvalidSpec(msg) = build_poly_model(&spec).unwrap_err() else {
            panic!("expected invalid spec")
        };
        assert!(msg.contains("drift") && msg.contains("diffusion"), "{msg}");
    }
}
