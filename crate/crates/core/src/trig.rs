//! Trigonometric polynomials in time.

use serde::{Deserialize, Serialize};

use crate::scalar::{count, Real};

/// `c + Σ_k a_k sin(k ω t) + b_k cos(k ω t)`, k = 1, 2, ...
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Real + Serialize", deserialize = "T: Real + serde::de::DeserializeOwned"))]
pub struct TrigPoly<T> {
    #[serde(default = "zero_f")]
    pub constant: T,
    #[serde(default = "one_f")]
    pub frequency: T,
    #[serde(default)]
    pub sin: Vec<T>,
    #[serde(default)]
    pub cos: Vec<T>,
}

fn zero_f<T: Real>() -> T {
    T::zero()
}

fn one_f<T: Real>() -> T {
    T::one()
}

impl<T: Real> TrigPoly<T> {
    pub fn constant(c: T) -> Self {
        Self {
            constant: c,
            frequency: T::one(),
            sin: Vec::new(),
            cos: Vec::new(),
        }
    }

    /// `c + a sin(t)`.
    pub fn with_sine(c: T, a: T) -> Self {
        Self {
            sin: vec![a],
            ..Self::constant(c)
        }
    }

    pub fn is_constant(&self) -> bool {
        self.sin.iter().chain(&self.cos).all(|&c| c == T::zero())
    }

    /// Fundamental period `2π/ω`.
    pub fn base_period(&self) -> T {
        T::TAU() / self.frequency
    }

    pub fn value(&self, t: T) -> T {
        let mut v = self.constant;
        for (k, &a) in self.sin.iter().enumerate() {
            if a != T::zero() {
                v = v + a * (count::<T>(k + 1) * self.frequency * t).sin();
            }
        }
        for (k, &b) in self.cos.iter().enumerate() {
            if b != T::zero() {
                v = v + b * (count::<T>(k + 1) * self.frequency * t).cos();
            }
        }
        v
    }

    /// Oscillating part of an antiderivative; the full antiderivative is
    /// `constant·t + oscillating_antiderivative(t)`.
    pub fn oscillating_antiderivative(&self, t: T) -> T {
        let mut v = T::zero();
        for (k, &a) in self.sin.iter().enumerate() {
            if a != T::zero() {
                let w = count::<T>(k + 1) * self.frequency;
                v = v - a * (w * t).cos() / w;
            }
        }
        for (k, &b) in self.cos.iter().enumerate() {
            if b != T::zero() {
                let w = count::<T>(k + 1) * self.frequency;
                v = v + b * (w * t).sin() / w;
            }
        }
        v
    }

    /// `∫_a^b` in closed form.
    pub fn integral(&self, a: T, b: T) -> T {
        self.constant * (b - a) + self.oscillating_antiderivative(b) - self.oscillating_antiderivative(a)
    }

    pub fn validate(&self) -> Result<(), String> {
        let all = std::iter::once(&self.constant).chain(&self.sin).chain(&self.cos);
        if all.into_iter().any(|c| !c.is_finite()) {
            return Err("trigonometric coefficients must be finite".into());
        }
        if !(self.frequency > T::zero()) || !self.frequency.is_finite() {
            return Err(format!("frequency must be positive, got {}", self.frequency));
        }
        Ok(())
    }
}
