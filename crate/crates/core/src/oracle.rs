//! Closed-form references for the scalar linear model
//! `dX = −α(t) X dt + σ dW` with trigonometric `α`.

use crate::error::{Error, Result};
use crate::models::LinearPeriodicSpec;
use crate::noise::NoisePath;
use crate::scalar::{count, lit, Real};

const GL5_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GL5_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Composite five-point Gauss–Legendre rule on `[a, b]`.
pub fn gauss_legendre<T: Real, F: Fn(T) -> T>(f: F, a: T, b: T, panels: usize) -> T {
    let h = (b - a) / count(panels);
    let half = h * lit(0.5);
    let mut total = T::zero();
    for p in 0..panels {
        let mid = a + h * count(p) + half;
        for (x, w) in GL5_NODES.iter().zip(GL5_WEIGHTS) {
            total = total + lit::<T>(w) * f(mid + half * lit(*x));
        }
    }
    total * half
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearOracle<T> {
    spec: LinearPeriodicSpec<T>,
    period: T,
    panels: usize,
    period_integral: T,
}

impl<T: Real> LinearOracle<T> {
    /// `panels` is the Gauss–Legendre panel count per period.
    pub fn new(spec: LinearPeriodicSpec<T>, panels: usize) -> Result<Self> {
        let period = spec.resolved_period()?;
        let period_integral = spec.alpha.integral(T::zero(), period);
        if !(period_integral > T::zero()) {
            return Err(Error::InvalidSpec(format!(
                "∫ α over one period is {period_integral}; the stationary integral diverges"
            )));
        }
        if panels == 0 {
            return Err(Error::InvalidSpec("quadrature needs at least one panel".into()));
        }
        Ok(Self {
            spec,
            period,
            panels,
            period_integral,
        })
    }

    pub fn period(&self) -> T {
        self.period
    }

    /// `∫_a^b α(u) du`.
    pub fn alpha_integral(&self, a: T, b: T) -> T {
        self.spec.alpha.integral(a, b)
    }

    /// Discretized `S(s, ω) = σ ∫_{−∞}^s e^{−∫_r^s α} dW_r`: left-point sum
    /// over grid steps in `[s − truncation, s)`.
    pub fn linear_rps_exact(&self, path: &NoisePath<T>, s: i64, truncation: T) -> Result<T> {
        let grid = path.grid();
        if (grid.period() - self.period).abs() > lit::<T>(1e-12) * self.period {
            return Err(Error::GridMismatch(format!(
                "oracle period {} differs from grid period {}",
                self.period,
                grid.period()
            )));
        }
        if truncation < lit::<T>(5.0) * self.period {
            return Err(Error::InvalidArgument(format!(
                "truncation {truncation} shorter than five periods"
            )));
        }
        let n_tau = grid.period_steps();
        let steps = (truncation / grid.dt()).ceil().to_i64().expect("finite truncation");
        let dt = grid.dt();
        let phase_integral = |r: i64| self.spec.alpha.integral(T::zero(), count::<T>(r as usize) * dt);
        let (q_s, r_s) = (s.div_euclid(n_tau), s.rem_euclid(n_tau));
        let end_integral = phase_integral(r_s);
        let mut inc = vec![T::zero(); (steps as usize).max(1)];
        path.fill_increments(s - steps, steps as usize, &mut inc);
        let mut total = T::zero();
        for (i, &dw) in inc.iter().enumerate().take(steps as usize) {
            let k = s - steps + i as i64;
            let (q_k, r_k) = (k.div_euclid(n_tau), k.rem_euclid(n_tau));
            let exponent = T::from_i64(q_s - q_k).expect("period count") * self.period_integral
                + (end_integral - phase_integral(r_k));
            total = total + (-exponent).exp() * dw;
        }
        Ok(total * self.spec.noise_scale)
    }

    /// `v(s) = σ² ∫_{−∞}^s e^{−2∫_r^s α} dr`, one period by quadrature and the
    /// remaining tail by the geometric factor `1/(1 − e^{−2∫_0^τ α})`.
    pub fn linear_phase_variance(&self, s: T) -> T {
        let two = lit::<T>(2.0);
        let one_period = gauss_legendre(
            |r| (-two * self.alpha_integral(r, s)).exp(),
            s - self.period,
            s,
            self.panels,
        );
        let sigma2 = self.spec.noise_scale * self.spec.noise_scale;
        sigma2 * one_period / (T::one() - (-two * self.period_integral).exp())
    }

    /// Gaussian transition moments of `X(t1, t0, ω, x)`.
    pub fn transition_moments(&self, t0: T, t1: T, x: T) -> (T, T) {
        let two = lit::<T>(2.0);
        let mean = x * (-self.alpha_integral(t0, t1)).exp();
        if t1 == t0 {
            return (mean, T::zero());
        }
        let periods = ((t1 - t0) / self.period).ceil().to_usize().unwrap_or(1).max(1);
        let integral = gauss_legendre(
            |r| (-two * self.alpha_integral(r, t1)).exp(),
            t0,
            t1,
            self.panels * periods,
        );
        let sigma2 = self.spec.noise_scale * self.spec.noise_scale;
        (mean, sigma2 * integral)
    }
}

/// Mean and variance of the unit-noise Ornstein–Uhlenbeck transition with
/// constant rate `alpha`.
pub fn ou_transition<T: Real>(alpha: T, t0: T, t1: T, x: T) -> (T, T) {
    let h = t1 - t0;
    let two = lit::<T>(2.0);
    (x * (-alpha * h).exp(), -(-two * alpha * h).exp_m1() / (two * alpha))
}
