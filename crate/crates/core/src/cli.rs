//! Batch front end: TOML experiment configs, command dispatch, CSV,
//! manifest and plot-script emission.
//!
//! Exit status is 0 when every check passes, 2 when a numerical check
//! fails and 1 when the run could not be computed (bad config, I/O,
//! divergence). The config schema and the manifest format are documented in
//! the repository README.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dissipativity::{check_drift_conditions, check_generator_bound, contraction_report, SampleSpec};
use crate::error::Error;
use crate::export;
use crate::integrate::{integrate_steps, Scheme};
use crate::markov::{
    bel_gradient, ergodic_time_average, finite_difference_gradient, kb_average, mixing_report, summary_rows,
    MixingSetup, RatioFit,
};
use crate::measures::{
    check_period_invariance, sample_periodic_measure, support_interval, EmpiricalMeasure, Interval, InvarianceMode,
};
use crate::models::{
    build_cubic_scalar, build_linear_periodic, build_poly_model, quadratic_lyapunov, CubicScalarSpec,
    LinearPeriodicSpec, LyapunovSpec, PolyModelSpec, SdeModel,
};
use crate::noise::{splitmix64, GridSpec, NoisePath};
use crate::pullback::{random_periodic_path, verify_random_periodicity, CauchyReport, PullbackParams};
use crate::stats::Estimate;
use crate::trig::TrigPoly;

/// Mixed into the master seed to derive the seed of reference measures.
const REFERENCE_SEED_SALT: u64 = 0x5245_4645_5245_4E43;

#[derive(Parser, Debug)]
#[command(name = "psde", version, about = "Random periodic solutions and periodic measures of SDEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Subcommand, Debug)]
pub enum CliCommand {
    /// Trajectory of the SDE from a given state.
    Simulate(RunArgs),
    /// Random periodic path by pullback, with its Cauchy gaps.
    Pullback(RunArgs),
    /// Flow and shift identities of the random periodic path.
    #[command(name = "verify-rps")]
    VerifyRps(RunArgs),
    /// Sampled dissipativity conditions and generator bound.
    Check(RunArgs),
    /// Pathwise contraction of a two-point motion.
    Contract(RunArgs),
    /// Empirical periodic measure, support proxy and invariance check.
    Measure(RunArgs),
    /// Krylov–Bogolyubov average against the periodic measure.
    Kb(RunArgs),
    /// Single-path time average on the period skeleton.
    Ergodic(RunArgs),
    /// Geometric mixing rates.
    Mixing(RunArgs),
    /// Bismut–Elworthy–Li gradient estimate.
    Bel(RunArgs),
    /// Writes a gnuplot script next to a CSV produced by another command.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed_override: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub dt_override: Option<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct PlotArgs {
    #[arg(long)]
    pub csv: PathBuf,
    /// Expected schema; inferred from the header when omitted.
    #[arg(long, value_enum)]
    pub kind: Option<PlotKind>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Pullback,
    VerifyRps,
    Check,
    Contract,
    Measure,
    Kb,
    Ergodic,
    Mixing,
    Bel,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Pullback => "pullback",
            Command::VerifyRps => "verify-rps",
            Command::Check => "check",
            Command::Contract => "contract",
            Command::Measure => "measure",
            Command::Kb => "kb",
            Command::Ergodic => "ergodic",
            Command::Mixing => "mixing",
            Command::Bel => "bel",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Schema(String),
    #[error(transparent)]
    Compute(#[from] Error),
}

// ---------------------------------------------------------------------------
// Configuration

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    pub model: ModelConfig,
    pub grid: GridConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub simulate: Option<SimulateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pullback: Option<PullbackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify_rps: Option<PullbackConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contract: Option<ContractConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub measure: Option<MeasureConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kb: Option<KbConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ergodic: Option<ErgodicConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mixing: Option<MixingConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bel: Option<BelConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelConfig {
    Cubic(CubicScalarSpec<f64>),
    Linear(LinearPeriodicSpec<f64>),
    Poly(PolyModelSpec<f64>),
}

/// Exactly one of `steps_per_period` and `dt` (rounded to `Nτ = round(τ/dt)`).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps_per_period: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulateConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    pub start: i64,
    /// Defaults to one period.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PullbackConfig {
    /// Phase index `s ∈ [0, Nτ)`.
    pub phase: i64,
    pub tol: f64,
    pub n_cap: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for PullbackConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            tol: 1e-8,
            n_cap: 60,
            x0: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    pub radius: f64,
    pub n_times: usize,
    pub n_pairs: usize,
    pub sample_seed: u64,
    /// Exponent of `V = |x|^p`; the generator bound is checked when both
    /// `p` and `lambda` are given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<TrigPoly<f64>>,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self {
            radius: 5.0,
            n_times: 64,
            n_pairs: 256,
            sample_seed: 0,
            p: None,
            lambda: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContractConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    pub start: i64,
    pub periods: usize,
}

impl Default for ContractConfig {
    fn default() -> Self {
        Self {
            x0: None,
            y0: None,
            start: 0,
            periods: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasureConfig {
    pub phase: i64,
    pub n: usize,
    pub tol: f64,
    pub n_cap: usize,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub invariance: Option<InvarianceMode>,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            n: 1000,
            tol: 1e-8,
            n_cap: 60,
            coverage: 0.999,
            invariance: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KbConfig {
    pub phase: i64,
    /// Observation index `t ∈ [s, s + Nτ)`; defaults to `phase`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub observe: Option<i64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    /// Defaults to the lower half of the support proxy of `µ̂_t`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<Interval<f64>>,
    pub n_periods: usize,
    pub n_mc: usize,
    pub reference_n: usize,
    pub tol: f64,
    pub n_cap: usize,
}

impl Default for KbConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            observe: None,
            x: None,
            interval: None,
            n_periods: 100,
            n_mc: 1000,
            reference_n: 1000,
            tol: 1e-8,
            n_cap: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErgodicConfig {
    pub phase: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    pub n_periods: usize,
    pub observable: Observable,
    /// Size of the reference ensemble; 0 skips the comparison.
    pub reference_n: usize,
    pub tol: f64,
    pub n_cap: usize,
}

impl Default for ErgodicConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            x: None,
            n_periods: 1000,
            observable: Observable::Identity,
            reference_n: 1000,
            tol: 1e-8,
            n_cap: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MixingConfig {
    pub phase: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub y: Option<Vec<f64>>,
    pub observable: Observable,
    pub n_list: Vec<usize>,
    pub n: usize,
    /// Size of the reference ensemble; 0 skips the second family.
    pub reference_n: usize,
    pub p: f64,
    /// Rate `λ(t)` of the Lyapunov bound; required.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<TrigPoly<f64>>,
    pub tol: f64,
    pub n_cap: usize,
}

impl Default for MixingConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            x: None,
            y: None,
            observable: Observable::Clamp { lo: -1.0, hi: 1.0 },
            n_list: vec![1, 2, 3, 4],
            n: 1000,
            reference_n: 1000,
            p: 2.0,
            lambda: None,
            tol: 1e-8,
            n_cap: 60,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BelConfig {
    pub phase: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub v: Option<Vec<f64>>,
    pub observable: Observable,
    /// Defaults to one period.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon_steps: Option<i64>,
    pub n: usize,
    /// Also report the common-noise finite difference with this step.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fd_eps: Option<f64>,
}

impl Default for BelConfig {
    fn default() -> Self {
        Self {
            phase: 0,
            x: None,
            v: None,
            observable: Observable::Identity,
            horizon_steps: None,
            n: 1000,
            fd_eps: None,
        }
    }
}

/// Test functions of the first coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Observable {
    Identity,
    Square,
    Constant { value: f64 },
    Tanh,
    Clamp { lo: f64, hi: f64 },
    /// `1` on `[lo, hi]`, linear ramp to `0` over `width` outside.
    Indicator { lo: f64, hi: f64, width: f64 },
}

impl Observable {
    pub fn eval(&self, x: &[f64]) -> f64 {
        let v = x[0];
        match *self {
            Observable::Identity => v,
            Observable::Square => v * v,
            Observable::Constant { value } => value,
            Observable::Tanh => v.tanh(),
            Observable::Clamp { lo, hi } => v.clamp(lo, hi),
            Observable::Indicator { lo, hi, width } => {
                let outside = if v < lo {
                    lo - v
                } else if v > hi {
                    v - hi
                } else {
                    0.0
                };
                (1.0 - outside / width).max(0.0)
            }
        }
    }

    /// `sup |h|`, when finite.
    pub fn sup_norm(&self) -> Option<f64> {
        match *self {
            Observable::Identity | Observable::Square => None,
            Observable::Constant { value } => Some(value.abs()),
            Observable::Tanh | Observable::Indicator { .. } => Some(1.0),
            Observable::Clamp { lo, hi } => Some(lo.abs().max(hi.abs())),
        }
    }

    fn problems(&self, key: &str, out: &mut Vec<String>) {
        match *self {
            Observable::Clamp { lo, hi } if !(lo <= hi) => out.push(format!("{key}: clamp needs lo <= hi")),
            Observable::Indicator { lo, hi, width } if !(lo <= hi) || !(width > 0.0) => {
                out.push(format!("{key}: indicator needs lo <= hi and width > 0"))
            }
            _ => {}
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, rejecting every key the schema does not know.
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let raw: toml::Value = toml::from_str(text).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let config: ExperimentConfig = raw
            .clone()
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(vec![e.to_string()]))?;
        let known = toml::Value::try_from(&config).map_err(|e| CliError::Config(vec![e.to_string()]))?;
        let mut unknown = Vec::new();
        unknown_keys(&raw, &known, "", &mut unknown);
        if !unknown.is_empty() {
            return Err(CliError::Config(
                unknown.into_iter().map(|k| format!("unknown key `{k}`")).collect(),
            ));
        }
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("configs serialize to TOML")
    }

    pub fn period(&self) -> Result<f64, String> {
        match &self.model {
            ModelConfig::Cubic(_) => Ok(std::f64::consts::TAU),
            ModelConfig::Linear(spec) => spec.resolved_period().map_err(|e| e.to_string()),
            ModelConfig::Poly(spec) => Ok(spec.period),
        }
    }
}

fn unknown_keys(raw: &toml::Value, known: &toml::Value, prefix: &str, out: &mut Vec<String>) {
    match (raw, known) {
        (toml::Value::Table(r), toml::Value::Table(k)) => {
            for (key, value) in r {
                let path = if prefix.is_empty() {
                    key.clone()
                } else {
                    format!("{prefix}.{key}")
                };
                match k.get(key) {
                    Some(kv) => unknown_keys(value, kv, &path, out),
                    None => out.push(path),
                }
            }
        }
        (toml::Value::Array(r), toml::Value::Array(k)) => {
            for (i, (a, b)) in r.iter().zip(k).enumerate() {
                unknown_keys(a, b, &format!("{prefix}[{i}]"), out);
            }
        }
        _ => {}
    }
}

/// Model and grid built from a validated config.
pub struct Resolved {
    pub model: SdeModel<f64>,
    pub grid: GridSpec<f64>,
}

fn build_model(config: &ModelConfig) -> crate::Result<SdeModel<f64>> {
    match config {
        ModelConfig::Cubic(spec) => build_cubic_scalar(spec),
        ModelConfig::Linear(spec) => build_linear_periodic(spec),
        ModelConfig::Poly(spec) => build_poly_model(spec),
    }
}

fn check_vec(key: &str, v: &Option<Vec<f64>>, dim: usize, out: &mut Vec<String>) {
    if let Some(v) = v {
        if v.len() != dim {
            out.push(format!("{key}: expected {dim} components, got {}", v.len()));
        }
        if v.iter().any(|c| !c.is_finite()) {
            out.push(format!("{key}: components must be finite"));
        }
    }
}

fn check_phase(key: &str, phase: i64, n_tau: i64, out: &mut Vec<String>) {
    if !(0..n_tau).contains(&phase) {
        out.push(format!("{key}: phase index {phase} outside [0, {n_tau})"));
    }
}

fn check_pullback(section: &str, tol: f64, n_cap: usize, out: &mut Vec<String>) {
    if !(tol > 0.0) {
        out.push(format!("{section}.tol: must be positive"));
    }
    if n_cap < 2 {
        out.push(format!("{section}.n_cap: must be at least 2"));
    }
}

fn check_positive(key: &str, n: usize, out: &mut Vec<String>) {
    if n == 0 {
        out.push(format!("{key}: must be positive"));
    }
}

/// Validates everything the config references and builds model and grid.
pub fn validate(config: &ExperimentConfig) -> Result<Resolved, CliError> {
    let mut problems = Vec::new();
    if config.seed > i64::MAX as u64 {
        problems.push("seed: must be below 2^63".to_string());
    }
    let model = match build_model(&config.model) {
        Ok(m) => Some(m),
        Err(e) => {
            problems.push(format!("model: {e}"));
            None
        }
    };
    let grid = match (config.grid.steps_per_period, config.grid.dt, config.period()) {
        (_, _, Err(e)) => {
            problems.push(format!("model: {e}"));
            None
        }
        (Some(_), Some(_), _) | (None, None, _) => {
            problems.push("grid: give exactly one of steps_per_period and dt".into());
            None
        }
        (Some(n), None, Ok(tau)) => GridSpec::from_period(tau, n).map_err(|e| problems.push(format!("grid: {e}"))).ok(),
        (None, Some(dt), Ok(tau)) => GridSpec::with_approx_dt(tau, dt).map_err(|e| problems.push(format!("grid: {e}"))).ok(),
    };
    if config.scheme == Scheme::Milstein {
        if let Some(m) = &model {
            if m.dim() != 1 || m.noise_dim() != 1 {
                problems.push("scheme: milstein needs a scalar model".into());
            }
        }
    }
    let (Some(model), Some(grid)) = (model, grid) else {
        return Err(CliError::Config(problems));
    };
    let d = model.dim();
    let n_tau = grid.period_steps();
    if let Some(c) = &config.simulate {
        check_vec("simulate.x0", &c.x0, d, &mut problems);
    }
    for (name, c) in [("pullback", &config.pullback), ("verify_rps", &config.verify_rps)] {
        if let Some(c) = c {
            check_phase(&format!("{name}.phase"), c.phase, n_tau, &mut problems);
            check_pullback(name, c.tol, c.n_cap, &mut problems);
            check_vec(&format!("{name}.x0"), &c.x0, d, &mut problems);
        }
    }
    if let Some(c) = &config.check {
        if !(c.radius > 0.0) {
            problems.push("check.radius: must be positive".into());
        }
        check_positive("check.n_times", c.n_times, &mut problems);
        check_positive("check.n_pairs", c.n_pairs, &mut problems);
        if let Some(p) = c.p {
            if !(p >= 1.0) {
                problems.push("check.p: must be at least 1".into());
            }
        }
        if let Some(Err(e)) = c.lambda.as_ref().map(|l| l.validate()) {
            problems.push(format!("check.lambda: {e}"));
        }
    }
    if let Some(c) = &config.contract {
        check_vec("contract.x0", &c.x0, d, &mut problems);
        check_vec("contract.y0", &c.y0, d, &mut problems);
        if c.x0.is_some() && c.x0 == c.y0 {
            problems.push("contract: x0 and y0 must differ".into());
        }
        check_positive("contract.periods", c.periods, &mut problems);
    }
    if let Some(c) = &config.measure {
        check_phase("measure.phase", c.phase, n_tau, &mut problems);
        check_pullback("measure", c.tol, c.n_cap, &mut problems);
        check_positive("measure.n", c.n, &mut problems);
        if !(c.coverage > 0.0 && c.coverage <= 1.0) {
            problems.push("measure.coverage: must lie in (0, 1]".into());
        }
    }
    if let Some(c) = &config.kb {
        check_phase("kb.phase", c.phase, n_tau, &mut problems);
        if let Some(t) = c.observe {
            if t < c.phase || t >= c.phase + n_tau {
                problems.push(format!("kb.observe: must lie in [phase, phase + {n_tau})"));
            }
        }
        check_vec("kb.x", &c.x, d, &mut problems);
        if let Some(Err(e)) = c.interval.map(|a| a.validate()) {
            problems.push(format!("kb.interval: {e}"));
        }
        check_positive("kb.n_periods", c.n_periods, &mut problems);
        check_positive("kb.n_mc", c.n_mc, &mut problems);
        check_positive("kb.reference_n", c.reference_n, &mut problems);
        check_pullback("kb", c.tol, c.n_cap, &mut problems);
        if d != 1 {
            problems.push("kb: intervals need a scalar model".into());
        }
    }
    if let Some(c) = &config.ergodic {
        check_phase("ergodic.phase", c.phase, n_tau, &mut problems);
        check_vec("ergodic.x", &c.x, d, &mut problems);
        if c.n_periods < crate::markov::MIN_ERGODIC_PERIODS {
            problems.push(format!(
                "ergodic.n_periods: must be at least {}",
                crate::markov::MIN_ERGODIC_PERIODS
            ));
        }
        c.observable.problems("ergodic.observable", &mut problems);
        check_pullback("ergodic", c.tol, c.n_cap, &mut problems);
    }
    if let Some(c) = &config.mixing {
        check_phase("mixing.phase", c.phase, n_tau, &mut problems);
        check_vec("mixing.x", &c.x, d, &mut problems);
        check_vec("mixing.y", &c.y, d, &mut problems);
        c.observable.problems("mixing.observable", &mut problems);
        if c.observable.sup_norm().is_none() {
            problems.push("mixing.observable: must be bounded".into());
        }
        if c.n_list.is_empty() || c.n_list.contains(&0) {
            problems.push("mixing.n_list: needs positive period counts".into());
        }
        check_positive("mixing.n", c.n, &mut problems);
        if !(c.p >= 1.0) {
            problems.push("mixing.p: must be at least 1".into());
        }
        match &c.lambda {
            None => problems.push("mixing.lambda: required".into()),
            Some(l) => {
                if let Err(e) = l.validate() {
                    problems.push(format!("mixing.lambda: {e}"));
                }
            }
        }
        check_pullback("mixing", c.tol, c.n_cap, &mut problems);
    }
    if let Some(c) = &config.bel {
        check_phase("bel.phase", c.phase, n_tau, &mut problems);
        check_vec("bel.x", &c.x, d, &mut problems);
        check_vec("bel.v", &c.v, d, &mut problems);
        c.observable.problems("bel.observable", &mut problems);
        if c.horizon_steps.is_some_and(|h| h <= 0) {
            problems.push("bel.horizon_steps: must be positive".into());
        }
        check_positive("bel.n", c.n, &mut problems);
        if c.fd_eps.is_some_and(|e| !(e > 0.0)) {
            problems.push("bel.fd_eps: must be positive".into());
        }
        if model.right_inverse().is_none() {
            problems.push("bel: the model has no diffusion right inverse".into());
        }
    }
    if problems.is_empty() {
        Ok(Resolved { model, grid })
    } else {
        Err(CliError::Config(problems))
    }
}

// ---------------------------------------------------------------------------
// Runs

/// Files and verdict of one command.
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub pass: bool,
    pub summary: String,
    pub derived_seeds: Vec<(String, u64)>,
}

impl Outcome {
    fn new(pass: bool, summary: String) -> Self {
        Self {
            files: Vec::new(),
            pass,
            summary,
            derived_seeds: Vec::new(),
        }
    }

    fn file(mut self, name: &str, body: String) -> Self {
        self.files.push((name.to_string(), body));
        self
    }
}

pub fn reference_seed(seed: u64) -> u64 {
    splitmix64(seed ^ REFERENCE_SEED_SALT)
}

fn verdict(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}

fn or_zeros(v: &Option<Vec<f64>>, d: usize) -> Vec<f64> {
    v.clone().unwrap_or_else(|| vec![0.0; d])
}

fn params(tol: f64, n_cap: usize, scheme: Scheme) -> PullbackParams<f64> {
    PullbackParams { tol, n_cap, scheme }
}

fn rate_of(poly: TrigPoly<f64>) -> crate::models::Rate<f64> {
    Arc::new(move |t| poly.value(t))
}

fn lyapunov(p: f64, lambda: &TrigPoly<f64>) -> crate::Result<LyapunovSpec<f64>> {
    Ok(quadratic_lyapunov(p)?.with_lambda(rate_of(lambda.clone())))
}

fn reference_measure(
    r: &Resolved,
    seed: u64,
    phase: i64,
    n: usize,
    p: &PullbackParams<f64>,
) -> crate::Result<EmpiricalMeasure<f64>> {
    sample_periodic_measure(&r.model, &r.grid, reference_seed(seed), phase, n, p)
}

/// Runs `command` on a validated config.
pub fn run(command: Command, config: &ExperimentConfig, r: &Resolved) -> Result<Outcome, CliError> {
    let (model, grid) = (&r.model, &r.grid);
    let d = model.dim();
    let n_tau = grid.period_steps();
    let scheme = config.scheme;
    let seed = config.seed;
    let path = || NoisePath::new(seed, model.noise_dim(), *grid);
    let outcome = match command {
        Command::Simulate => {
            let c = config.simulate.clone().unwrap_or_default();
            let steps = c.steps.unwrap_or(n_tau as usize) as i64;
            let traj = integrate_steps(model, &path(), c.start, c.start + steps, &or_zeros(&c.x0, d), scheme)?;
            Outcome::new(true, format!("simulate: {} nodes", traj.len())).file("trajectory.csv", traj.to_csv())
        }
        Command::Pullback => {
            let c = config.pullback.clone().unwrap_or_default();
            match random_periodic_path(model, &path(), c.phase, &or_zeros(&c.x0, d), &params(c.tol, c.n_cap, scheme)) {
                Ok(rpp) => {
                    let report = CauchyReport::from_gaps(rpp.gaps.clone());
                    Outcome::new(
                        true,
                        format!("pullback: converged at depth {} (gap {:e})", rpp.n_used, rpp.last_gap),
                    )
                    .file("random_periodic_path.csv", rpp.to_csv())
                    .file("cauchy.csv", report.to_csv())
                }
                Err(Error::NonConvergence { gaps }) => {
                    let report = CauchyReport::from_gaps(gaps);
                    Outcome::new(false, format!("pullback: no convergence within depth {}", c.n_cap))
                        .file("cauchy.csv", report.to_csv())
                }
                Err(e) => return Err(e.into()),
            }
        }
        Command::VerifyRps => {
            let c = config.verify_rps.clone().unwrap_or_default();
            let p = path();
            let rpp = random_periodic_path(model, &p, c.phase, &or_zeros(&c.x0, d), &params(c.tol, c.n_cap, scheme))?;
            let report = verify_random_periodicity(model, &p, &rpp)?;
            let mut csv = vec!["check,residual,tolerance,pass".to_string()];
            csv.push(format!(
                "flow,{},{},{}",
                export::num(report.flow_residual),
                export::num(report.flow_tolerance),
                report.flow_pass
            ));
            csv.push(format!(
                "shift,{},{},{}",
                export::num(report.shift_residual),
                export::num(0.0),
                report.shift_pass
            ));
            Outcome::new(
                report.pass(),
                format!(
                    "verify-rps: flow residual {:e} (tolerance {:e}), shift residual {:e}: {}",
                    report.flow_residual,
                    report.flow_tolerance,
                    report.shift_residual,
                    verdict(report.pass())
                ),
            )
            .file("periodicity.csv", export::finish(csv))
        }
        Command::Check => {
            let c = config.check.clone().unwrap_or_default();
            let sample = SampleSpec {
                radius: c.radius,
                n_times: c.n_times,
                n_pairs: c.n_pairs,
                seed: c.sample_seed,
            };
            let report = check_drift_conditions(model, &sample)?;
            let mut pass = report.pass;
            let mut summary = format!("check: ∫β = {:.6} over one period", report.integral_beta);
            let mut out = Outcome::new(true, String::new()).file("conditions.csv", report.to_csv());
            if let (Some(p), Some(lambda)) = (c.p, &c.lambda) {
                let bound = check_generator_bound(model, &lyapunov(p, lambda)?, &sample)?;
                pass &= bound.pass;
                let _ = write!(summary, ", generator bound max violation {:e}", bound.max_violation);
                let csv = export::finish(vec![
                    "max_violation,worst_t,samples,pass".to_string(),
                    format!(
                        "{},{},{},{}",
                        export::num(bound.max_violation),
                        export::num(bound.worst_time),
                        bound.samples,
                        bound.pass
                    ),
                ]);
                out = out.file("generator.csv", csv);
            }
            let _ = write!(summary, ": {}", verdict(pass));
            out.pass = pass;
            out.summary = summary;
            out
        }
        Command::Contract => {
            let c = config.contract.clone().unwrap_or_default();
            let x0 = c.x0.clone().unwrap_or_else(|| vec![1.0; d]);
            let y0 = c.y0.clone().unwrap_or_else(|| vec![-1.0; d]);
            let report = contraction_report(model, &path(), c.start, c.periods, &x0, &y0, scheme)?;
            let pass = report.slope.map_or(report.truncated, |s| s < 0.0);
            let slope = report.slope.map_or("n/a".to_string(), |s| format!("{s:.6}"));
            Outcome::new(pass, format!("contract: log-gap slope {slope} per unit time: {}", verdict(pass)))
                .file("contraction.csv", report.to_csv())
        }
        Command::Measure => {
            let c = config.measure.clone().unwrap_or_default();
            let p = params(c.tol, c.n_cap, scheme);
            let mu = sample_periodic_measure(model, grid, seed, c.phase, c.n, &p)?;
            let mean = mu.expectation(|x| x[0]);
            let mut out = Outcome::new(true, String::new()).file("measure.csv", mu.to_csv());
            if d == 1 {
                let s = support_interval(&mu, c.coverage)?;
                let csv = export::finish(vec![
                    "coverage,lo,hi".to_string(),
                    format!("{},{},{}", export::num(c.coverage), export::num(s.lo), export::num(s.hi)),
                ]);
                out = out.file("support.csv", csv);
            }
            let mut summary = format!("measure: {} samples, mean {:.6} ± {:.6}", mu.len(), mean.value, mean.se);
            if let Some(mode) = c.invariance {
                let report = check_period_invariance(model, grid, seed, c.phase, c.n, &p, mode)?;
                let _ = write!(
                    summary,
                    ", invariance distance {:e} (se {:e}): {}",
                    report.distance,
                    report.se,
                    verdict(report.pass)
                );
                out.pass = report.pass;
                out = out.file("invariance.csv", report.to_csv());
            }
            out.summary = summary;
            out
        }
        Command::Kb => {
            let c = config.kb.clone().unwrap_or_default();
            let t = c.observe.unwrap_or(c.phase);
            let p = params(c.tol, c.n_cap, scheme);
            let reference = reference_measure(r, seed, t.rem_euclid(n_tau), c.reference_n, &p)?;
            let reference = EmpiricalMeasure { phase_index: t, ..reference };
            let a = match c.interval {
                Some(a) => a,
                None => {
                    let s = support_interval(&reference, crate::markov::SUPPORT_COVERAGE)?;
                    let xs = reference.sorted()?;
                    Interval::closed(s.lo, crate::stats::quantile_sorted(&xs, 0.5))
                }
            };
            let report = kb_average(
                model,
                grid,
                seed,
                c.phase,
                &or_zeros(&c.x, d),
                t,
                &a,
                c.n_periods,
                c.n_mc,
                &reference,
                scheme,
            )?;
            let mut out = Outcome::new(
                report.pass,
                format!(
                    "kb: average {:.6} ± {:.6}, µ̂(A) {:.6} ± {:.6}: {}",
                    report.average.value,
                    report.average.se,
                    report.reference.value,
                    report.reference.se,
                    verdict(report.pass)
                ),
            )
            .file("kb.csv", report.to_csv())
            .file("kb_summary.csv", report.summary_csv());
            out.derived_seeds.push(("reference".into(), reference_seed(seed)));
            out
        }
        Command::Ergodic => {
            let c = config.ergodic.clone().unwrap_or_default();
            let obs = c.observable.clone();
            let mut derived = Vec::new();
            let reference = if c.reference_n > 0 {
                let mu = reference_measure(r, seed, c.phase, c.reference_n, &params(c.tol, c.n_cap, scheme))?;
                derived.push(("reference".to_string(), reference_seed(seed)));
                Some(mu.expectation(|x| obs.eval(x)))
            } else {
                None
            };
            let report = ergodic_time_average(
                model,
                &path(),
                c.phase,
                &or_zeros(&c.x, d),
                |x| obs.eval(x),
                c.n_periods,
                scheme,
                reference,
            )?;
            let pass = report.pass.unwrap_or(true);
            let mut out = Outcome::new(
                pass,
                format!(
                    "ergodic: time average {:.6} ± {:.6}: {}",
                    report.average.value,
                    report.average.se,
                    verdict(pass)
                ),
            )
            .file("ergodic.csv", report.summary_csv());
            out.derived_seeds = derived;
            out
        }
        Command::Mixing => {
            let c = config.mixing.clone().unwrap_or_default();
            let lambda = c.lambda.clone().expect("validated");
            let lyap = lyapunov(c.p, &lambda)?;
            let obs = c.observable.clone();
            let mut derived = Vec::new();
            let reference = if c.reference_n > 0 {
                derived.push(("reference".to_string(), reference_seed(seed)));
                Some(reference_measure(r, seed, c.phase, c.reference_n, &params(c.tol, c.n_cap, scheme))?)
            } else {
                None
            };
            let setup = MixingSetup {
                grid: *grid,
                master_seed: seed,
                s: c.phase,
                x: or_zeros(&c.x, d),
                y: c.y.clone().unwrap_or_else(|| vec![1.0; d]),
                h: |x: &[f64]| obs.eval(x),
                h_sup: obs.sup_norm().expect("validated"),
                n_list: c.n_list.clone(),
                n: c.n,
                reference: reference.as_ref(),
                scheme,
            };
            let report = mixing_report(model, &lyap, &setup)?;
            let pass = report.pass.unwrap_or(true);
            let fit_row = |name: &str, f: &Option<RatioFit<f64>>| match f {
                Some(f) => format!(
                    "{name},{},{},{},{}",
                    export::num(f.ratio),
                    export::num(f.se),
                    f.points,
                    export::num(report.rate_bound)
                ),
                None => format!("{name},nan,nan,0,{}", export::num(report.rate_bound)),
            };
            let summary_csv = export::finish(vec![
                "family,ratio,se,points,bound".to_string(),
                fit_row("pair", &report.pair_fit),
                fit_row("target", &report.target_fit),
            ]);
            let ratio = report
                .pair_fit
                .map_or("n/a".to_string(), |f| format!("{:.6e} ± {:.1e}", f.ratio, f.se));
            let mut out = Outcome::new(
                pass,
                format!(
                    "mixing: pair ratio {ratio}, bound {:.6e}: {}",
                    report.rate_bound,
                    verdict(pass)
                ),
            )
            .file("mixing_pair.csv", report.pair_csv())
            .file("mixing_summary.csv", summary_csv);
            if let Some(t) = report.target_csv() {
                out = out.file("mixing_target.csv", t);
            }
            out.derived_seeds = derived;
            out
        }
        Command::Bel => {
            let c = config.bel.clone().unwrap_or_default();
            let obs = c.observable.clone();
            let x = or_zeros(&c.x, d);
            let v = c.v.clone().unwrap_or_else(|| vec![1.0; d]);
            let horizon = c.horizon_steps.unwrap_or(n_tau);
            let h = |x: &[f64]| obs.eval(x);
            let report = bel_gradient(model, grid, seed, c.phase, &x, &v, h, horizon, c.n)?;
            let mut rows = vec![("bel_gradient", report.estimate)];
            let mut summary = format!(
                "bel: gradient {:.6} ± {:.6} at horizon {:.6}",
                report.estimate.value, report.estimate.se, report.horizon
            );
            if let Some(eps) = c.fd_eps {
                let fd: Estimate<f64> = finite_difference_gradient(model, grid, seed, c.phase, &x, &v, eps, h, horizon, c.n)?;
                let _ = write!(summary, ", finite difference {:.6} ± {:.6}", fd.value, fd.se);
                rows.push(("finite_difference", fd));
            }
            Outcome::new(true, summary).file("bel.csv", summary_rows(&rows))
        }
    };
    Ok(outcome)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Plain-text manifest: one `key = value` per line.
pub fn manifest(command: Command, config: &ExperimentConfig, grid: &GridSpec<f64>, outcome: &Outcome) -> String {
    let canonical = config.to_toml_string();
    let digest = Sha256::digest(canonical.as_bytes());
    let mut lines = vec![
        format!("toolkit = \"periodic-sde {}\"", env!("CARGO_PKG_VERSION")),
        format!("command = \"{}\"", command.name()),
        format!("config_sha256 = \"{}\"", hex(&digest)),
        format!("seed = {}", config.seed),
    ];
    for (name, s) in &outcome.derived_seeds {
        lines.push(format!("seed_{name} = {s}"));
    }
    lines.push(format!("scheme = \"{}\"", config.scheme));
    lines.push(format!("steps_per_period = {}", grid.steps_per_period()));
    lines.push(format!("dt = {}", export::num(grid.dt())));
    let names: Vec<String> = outcome.files.iter().map(|(n, _)| format!("\"{n}\"")).collect();
    lines.push(format!("outputs = [{}]", names.join(", ")));
    lines.push(format!("pass = {}", outcome.pass));
    export::finish(lines)
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Loads, overrides, validates and runs; writes artifacts into `args.out`.
pub fn execute(command: Command, args: &RunArgs) -> Result<Outcome, CliError> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_err(&args.config, e))?;
    let mut config = ExperimentConfig::from_toml_str(&text)?;
    if let Some(seed) = args.seed_override {
        config.seed = seed;
    }
    if let Some(dt) = args.dt_override {
        config.grid = GridConfig {
            steps_per_period: None,
            dt: Some(dt),
        };
    }
    let resolved = validate(&config)?;
    let outcome = match args.workers {
        Some(0) => return Err(CliError::Config(vec!["--workers: must be positive".into()])),
        Some(w) => rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build()
            .map_err(|e| CliError::Io(e.to_string()))?
            .install(|| run(command, &config, &resolved))?,
        None => run(command, &config, &resolved)?,
    };
    fs::create_dir_all(&args.out).map_err(|e| io_err(&args.out, e))?;
    for (name, body) in &outcome.files {
        let p = args.out.join(name);
        fs::write(&p, body).map_err(|e| io_err(&p, e))?;
    }
    let p = args.out.join("manifest.txt");
    fs::write(&p, manifest(command, &config, &resolved.grid, &outcome)).map_err(|e| io_err(&p, e))?;
    Ok(outcome)
}

// ---------------------------------------------------------------------------
// Plot scripts

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlotKind {
    /// `n,gap`
    Cauchy,
    /// `phase,sample_index,x1..xd`
    Measure,
    /// `t,x1..xd`
    Trajectory,
    /// `phase_t,x1..xd`
    Window,
    /// `t,beta,L`
    Conditions,
    /// `t,log_gap`
    Contraction,
    /// `n,estimate,se`
    Estimates,
}

const SCHEMAS: [(PlotKind, &str); 7] = [
    (PlotKind::Cauchy, "n,gap"),
    (PlotKind::Measure, "phase,sample_index,x1..xd"),
    (PlotKind::Trajectory, "t,x1..xd"),
    (PlotKind::Window, "phase_t,x1..xd"),
    (PlotKind::Conditions, "t,beta,L"),
    (PlotKind::Contraction, "t,log_gap"),
    (PlotKind::Estimates, "n,estimate,se"),
];

fn indexed_tail(cols: &[&str], prefix_len: usize) -> bool {
    cols.len() > prefix_len && cols[prefix_len..].iter().enumerate().all(|(i, c)| *c == format!("x{}", i + 1))
}

/// Schema of a CSV header line.
pub fn detect_schema(header: &str) -> Result<PlotKind, CliError> {
    let cols: Vec<&str> = header.trim().split(',').collect();
    let kind = match cols.as_slice() {
        ["n", "gap"] => Some(PlotKind::Cauchy),
        ["t", "beta", "L"] => Some(PlotKind::Conditions),
        ["t", "log_gap"] => Some(PlotKind::Contraction),
        ["n", "estimate", "se"] => Some(PlotKind::Estimates),
        ["phase", "sample_index", ..] if indexed_tail(&cols, 2) => Some(PlotKind::Measure),
        ["t", ..] if indexed_tail(&cols, 1) => Some(PlotKind::Trajectory),
        ["phase_t", ..] if indexed_tail(&cols, 1) => Some(PlotKind::Window),
        _ => None,
    };
    kind.ok_or_else(|| {
        let expected: Vec<String> = SCHEMAS.iter().map(|(_, h)| format!("`{h}`")).collect();
        CliError::Schema(format!(
            "unrecognized CSV header `{}`; expected one of {}",
            header.trim(),
            expected.join(", ")
        ))
    })
}

fn plot_script(kind: PlotKind, file: &str, columns: usize) -> String {
    let mut s = String::from("set datafile separator ','\nset key autotitle columnhead\n");
    let series = |first_col: usize| -> String {
        (first_col..=columns)
            .map(|c| format!("'{file}' using {}:{c} with lines", first_col - 1))
            .collect::<Vec<_>>()
            .join(", \\\n     ")
    };
    match kind {
        PlotKind::Cauchy => {
            s.push_str("set logscale y\nset xlabel 'pullback depth n'\nset ylabel 'sup-norm gap'\n");
            let _ = writeln!(s, "plot '{file}' using 1:2 with linespoints");
        }
        PlotKind::Measure => {
            s.push_str("binwidth = 0.05\nbin(x) = binwidth * floor(x / binwidth)\nset boxwidth binwidth\n");
            s.push_str("set style fill solid 0.5\nset xlabel 'x1'\nset ylabel 'count'\n");
            let _ = writeln!(s, "plot '{file}' using (bin($3)):(1.0) smooth frequency with boxes");
        }
        PlotKind::Trajectory | PlotKind::Window => {
            s.push_str("set xlabel 't'\nset ylabel 'x'\n");
            let _ = writeln!(s, "plot {}", series(2));
        }
        PlotKind::Conditions => {
            s.push_str("set xlabel 't'\n");
            let _ = writeln!(s, "plot '{file}' using 1:2 with lines, '{file}' using 1:3 with lines");
        }
        PlotKind::Contraction => {
            s.push_str("set xlabel 't'\nset ylabel 'ln gap'\n");
            let _ = writeln!(s, "plot '{file}' using 1:2 with linespoints");
        }
        PlotKind::Estimates => {
            s.push_str("set logscale y\nset xlabel 'n'\nset ylabel 'estimate'\n");
            let _ = writeln!(s, "plot '{file}' using 1:2:3 with yerrorbars");
        }
    }
    s
}

/// Writes `<csv stem>.gp` next to `csv`; never runs gnuplot.
pub fn emit_plot(csv: &Path, kind: Option<PlotKind>) -> Result<PathBuf, CliError> {
    let text = fs::read_to_string(csv).map_err(|e| io_err(csv, e))?;
    let header = text.lines().next().unwrap_or("");
    let detected = detect_schema(header)?;
    if let Some(k) = kind {
        if k != detected {
            let expected = SCHEMAS.iter().find(|(s, _)| *s == k).map(|(_, h)| *h).unwrap_or("");
            return Err(CliError::Schema(format!(
                "CSV header `{}` does not match the requested schema `{expected}`",
                header.trim()
            )));
        }
    }
    let file = csv
        .file_name()
        .map(|f| f.to_string_lossy().into_owned())
        .unwrap_or_default();
    let script = plot_script(detected, &file, header.split(',').count());
    let out = csv.with_extension("gp");
    fs::write(&out, script).map_err(|e| io_err(&out, e))?;
    Ok(out)
}

/// Entry point of the `psde` binary.
pub fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let (command, args) = match cli.command {
        CliCommand::Plot(p) => {
            return match emit_plot(&p.csv, p.kind) {
                Ok(path) => {
                    println!("plot script written to {}", path.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(1)
                }
            };
        }
        CliCommand::Simulate(a) => (Command::Simulate, a),
        CliCommand::Pullback(a) => (Command::Pullback, a),
        CliCommand::VerifyRps(a) => (Command::VerifyRps, a),
        CliCommand::Check(a) => (Command::Check, a),
        CliCommand::Contract(a) => (Command::Contract, a),
        CliCommand::Measure(a) => (Command::Measure, a),
        CliCommand::Kb(a) => (Command::Kb, a),
        CliCommand::Ergodic(a) => (Command::Ergodic, a),
        CliCommand::Mixing(a) => (Command::Mixing, a),
        CliCommand::Bel(a) => (Command::Bel, a),
    };
    match execute(command, &args) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
