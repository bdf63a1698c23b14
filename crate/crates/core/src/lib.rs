//! Simulation and verification toolkit for stochastic differential equations
//! with time-periodic coefficients.
//!
//! The numerical core is generic over the scalar type ([`Real`], implemented
//! for `f32` and `f64`); the aliases at the crate root fix it to `f64`.

// `!(a > b)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dissipativity;
pub mod error;
pub mod export;
pub mod integrate;
pub mod linalg;
pub mod markov;
pub mod measures;
pub mod models;
pub mod noise;
pub mod oracle;
pub mod pullback;
pub mod scalar;
pub mod stats;
pub mod trig;

pub mod cli;

pub use error::{Error, Result};
pub use integrate::Scheme;
pub use scalar::Real;

pub type GridSpec = noise::GridSpec<f64>;
pub type NoisePath = noise::NoisePath<f64>;
pub type SdeModel = models::SdeModel<f64>;
pub type LyapunovSpec = models::LyapunovSpec<f64>;
pub type LinearPeriodicSpec = models::LinearPeriodicSpec<f64>;
pub type CubicScalarSpec = models::CubicScalarSpec<f64>;
pub type PolyModelSpec = models::PolyModelSpec<f64>;
pub type TrigPoly = trig::TrigPoly<f64>;
pub type Trajectory = integrate::Trajectory<f64>;
pub type RandomPeriodicPath = pullback::RandomPeriodicPath<f64>;
pub type CauchyReport = pullback::CauchyReport<f64>;
pub type PullbackParams = pullback::PullbackParams<f64>;
pub type PeriodicityReport = pullback::PeriodicityReport<f64>;
pub type ConditionReport = dissipativity::ConditionReport<f64>;
pub type ContractionReport = dissipativity::ContractionReport<f64>;
pub type GeneratorBoundReport = dissipativity::GeneratorBoundReport<f64>;
pub type SampleSpec = dissipativity::SampleSpec<f64>;
pub type EmpiricalMeasure = measures::EmpiricalMeasure<f64>;
pub type Interval = measures::Interval<f64>;
pub type InvarianceReport = measures::InvarianceReport<f64>;
pub type KbReport = markov::KbReport<f64>;
pub type ErgodicReport = markov::ErgodicReport<f64>;
pub type MixingReport = markov::MixingReport<f64>;
pub type BelReport = markov::BelReport<f64>;
pub type LinearOracle = oracle::LinearOracle<f64>;
pub type Estimate = stats::Estimate<f64>;
