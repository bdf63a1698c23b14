//! Acceptance gate. Runs every criterion sequentially (so wall-clock
//! budgets are meaningful) and prints one PASS/FAIL line per criterion.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use periodic_sde::dissipativity::{check_drift_conditions, contraction_report};
use periodic_sde::markov::{
    bel_gradient, bel_samples, ergodic_time_average, finite_difference_gradient, kb_average, mixing_report,
    MixingSetup,
};
use periodic_sde::measures::{check_period_invariance, sample_periodic_measure, support_interval, InvarianceMode};
use periodic_sde::models::{build_cubic_scalar, build_linear_periodic, build_poly_model, quadratic_lyapunov, PolyTerm};
use periodic_sde::pullback::{pullback_sequence, random_periodic_path, verify_random_periodicity, GAP_FLOOR_EPS};
use periodic_sde::scalar::same_bits;
use periodic_sde::stats::{mean, quantile_sorted, variance_estimate};
use periodic_sde::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cubic() -> SdeModel {
    build_cubic_scalar(&CubicScalarSpec { gamma: 0.5, delta: 1.0 }).unwrap()
}

fn ou() -> SdeModel {
    build_cubic_scalar(&CubicScalarSpec { gamma: 0.0, delta: 0.0 }).unwrap()
}

fn linear_spec() -> LinearPeriodicSpec {
    LinearPeriodicSpec::new(TrigPoly::with_sine(1.0, 0.5), 1.0)
}

fn linear() -> SdeModel {
    build_linear_periodic(&linear_spec()).unwrap()
}

fn grid(steps: usize) -> GridSpec {
    GridSpec::from_period(TAU, steps).unwrap()
}

fn dt_grid(dt: f64) -> GridSpec {
    GridSpec::with_approx_dt(TAU, dt).unwrap()
}

fn c1_shift_bit_exactness() -> Verdict {
    let model = cubic();
    let g = grid(628);
    let n_tau = g.period_steps();
    let params = PullbackParams::new(1e-10, 60);
    let mut mismatched = 0;
    let mut nodes = 0;
    for seed in 1..=50u64 {
        let path = NoisePath::new(seed, 1, g);
        let later = random_periodic_path(&model, &path, n_tau, &[0.0], &params).unwrap();
        let shifted = random_periodic_path(&model, &path.shift(n_tau), 0, &[0.0], &params).unwrap();
        nodes += later.states.len();
        mismatched += later
            .states
            .iter()
            .zip(&shifted.states)
            .filter(|(a, b)| !same_bits(**a, **b))
            .count();
    }
    verdict(
        mismatched == 0,
        format!("{mismatched} of {nodes} window nodes differ bitwise over 50 seeds"),
    )
}

fn c2_flow_identity() -> Verdict {
    let model = cubic();
    let g = dt_grid(1e-3);
    let tol = 1e-6;
    let params = PullbackParams::new(tol, 60);
    let mut worst: f64 = 0.0;
    let mut all = true;
    for seed in 1..=20u64 {
        let path = NoisePath::new(seed, 1, g);
        let s = random_periodic_path(&model, &path, 0, &[0.0], &params).unwrap();
        let report = verify_random_periodicity(&model, &path, &s).unwrap();
        worst = worst.max(report.flow_residual);
        all &= report.flow_residual <= 10.0 * tol && report.shift_pass;
    }
    verdict(
        all,
        format!("max flow residual {worst:.3e} <= {:.1e} (Nτ = {})", 10.0 * tol, g.steps_per_period()),
    )
}

/// Sup over every `stride`-th window node of |pullback − oracle|.
fn oracle_error(model: &SdeModel, oracle: &LinearOracle, g: GridSpec, seed: u64, stride: usize) -> f64 {
    let path = NoisePath::new(seed, 1, g);
    let s = random_periodic_path(model, &path, 0, &[0.0], &PullbackParams::new(1e-12, 60)).unwrap();
    (0..s.len())
        .step_by(stride)
        .map(|j| {
            let exact = oracle.linear_rps_exact(&path, j as i64, 5.0 * TAU).unwrap();
            (s.state(j)[0] - exact).abs()
        })
        .fold(0.0, f64::max)
}

fn c3_oracle_equivalence() -> Verdict {
    let model = linear();
    let oracle = LinearOracle::new(linear_spec(), 64).unwrap();
    let coarse = grid(6283);
    let fine = grid(2 * 6283);
    let mut errs = Vec::new();
    let mut errs_half = Vec::new();
    for seed in 1..=20u64 {
        errs.push(oracle_error(&model, &oracle, coarse, seed, 32));
        errs_half.push(oracle_error(&model, &oracle, fine, seed, 64));
    }
    let dt = coarse.dt();
    let worst = errs.iter().copied().fold(0.0, f64::max);
    let ratio = mean(&errs) / mean(&errs_half);
    verdict(
        worst <= 5.0 * dt && (1.6..=2.4).contains(&ratio),
        format!("max sup error {worst:.3e} <= 5·dt = {:.3e}; halving ratio {ratio:.3}", 5.0 * dt),
    )
}

fn c4_cauchy_decay() -> Verdict {
    let model = cubic();
    let g = dt_grid(1e-2);
    let floor = GAP_FLOOR_EPS * f64::EPSILON;
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for seed in 1..=50u64 {
        let path = NoisePath::new(seed, 1, g);
        let (_, report) = pullback_sequence(&model, &path, 0, &[0.0], 8, Scheme::Euler).unwrap();
        for w in report.gaps.windows(2) {
            if w[0] > floor && w[1] > floor {
                worst = worst.max(w[1] / w[0]);
                checked += 1;
            }
        }
    }
    verdict(
        worst <= 0.01 && checked > 0,
        format!("largest successive gap ratio {worst:.3e} over {checked} pairs above the floor"),
    )
}

fn c5_contraction_rate() -> Verdict {
    let lin = linear();
    let g = grid(1 << 23);
    let report = contraction_report(&lin, &NoisePath::new(1, 1, g), 0, 1, &[10.0], &[0.0], Scheme::Euler).unwrap();
    let slope = report.slope.unwrap_or(f64::NAN);
    let model = cubic();
    let g = dt_grid(1e-2);
    let slopes: Vec<f64> = (1..=50u64)
        .map(|seed| {
            let path = NoisePath::new(seed, 1, g);
            let r = contraction_report(&model, &path, 0, 20, &[2.0], &[-2.0], Scheme::Euler).unwrap();
            r.slope.unwrap_or(f64::NAN)
        })
        .collect();
    let cubic_mean = mean(&slopes);
    verdict(
        (slope + 1.0).abs() <= 1e-6 && cubic_mean <= -0.95,
        format!(
            "linear slope {slope:.9} (|err| {:.2e}, Nτ = 2^23); cubic mean slope {cubic_mean:.4}",
            (slope + 1.0).abs()
        ),
    )
}

fn c6_condition_checker() -> Verdict {
    let sample = SampleSpec::new(5.0, 256, 64);
    let lin = check_drift_conditions(&linear(), &sample).unwrap();
    let anti_spec = PolyModelSpec {
        dim: 1,
        noise_dim: 1,
        period: TAU,
        drift: vec![vec![PolyTerm {
            coef: TrigPoly::constant(1.0),
            powers: vec![1],
        }]],
        diffusion: vec![vec![vec![PolyTerm {
            coef: TrigPoly::constant(1.0),
            powers: vec![0],
        }]]],
    };
    let anti = check_drift_conditions(&build_poly_model(&anti_spec).unwrap(), &sample).unwrap();
    let cub = check_drift_conditions(&cubic(), &sample).unwrap();
    let pass = (lin.integral_beta + TAU).abs() <= 1e-3
        && lin.pass
        && !anti.pass
        && (anti.integral_beta - TAU).abs() <= 1e-3
        && cub.pass;
    verdict(
        pass,
        format!(
            "linear ∫β = {:.6}, anti-model ∫β = {:.6} ({}), cubic ∫β = {:.6} ({})",
            lin.integral_beta,
            anti.integral_beta,
            if anti.pass { "pass" } else { "fail" },
            cub.integral_beta,
            if cub.pass { "pass" } else { "fail" }
        ),
    )
}

fn c7_periodic_measure() -> Verdict {
    let n = 10_000;
    let g = dt_grid(1e-2);
    let params = PullbackParams::new(1e-8, 60);
    let mut notes = Vec::new();
    let mut pass = true;

    let ou = ou();
    let mu = sample_periodic_measure(&ou, &g, 11, 0, n, &params).unwrap();
    let m = mean(&mu.samples);
    let mean_bound = 3.0 * 0.5f64.sqrt() / (n as f64).sqrt();
    let v = variance_estimate(&mu.samples);
    pass &= m.abs() <= mean_bound && (v.value - 0.5).abs() <= 3.0 * v.se;
    notes.push(format!("OU mean {m:.4} (bound {mean_bound:.4}), variance {:.4} ± {:.4}", v.value, v.se));

    let lin = linear();
    let oracle = LinearOracle::new(linear_spec(), 64).unwrap();
    let n_tau = g.period_steps();
    for s in [0, n_tau / 4, n_tau / 2, 3 * n_tau / 4] {
        let mu = sample_periodic_measure(&lin, &g, 12 + s as u64, s, n, &params).unwrap();
        let v = variance_estimate(&mu.samples);
        let exact = oracle.linear_phase_variance(g.time(s));
        let ok = (v.value - exact).abs() <= 3.0 * v.se;
        pass &= ok;
        notes.push(format!("linear v({:.3}) {:.4} vs {:.4}", g.time(s), v.value, exact));
    }

    for (name, model, seed) in [("OU", &ou, 21u64), ("linear", &lin, 22u64)] {
        let ind = check_period_invariance(model, &g, seed, 0, n, &params, InvarianceMode::Independent).unwrap();
        let sh = check_period_invariance(model, &g, seed, 0, 200, &params, InvarianceMode::ShiftedPaths).unwrap();
        pass &= ind.pass && sh.pass;
        notes.push(format!(
            "{name} W1 {:.4} vs 3·SE {:.4}, shifted max {:e}",
            ind.distance,
            3.0 * ind.se,
            sh.distance
        ));
    }
    verdict(pass, notes.join("; "))
}

fn c8_ps_ergodicity() -> Verdict {
    let g = dt_grid(1e-2);
    let params = PullbackParams::new(1e-8, 60);
    let model = cubic();
    let mut notes = Vec::new();

    let mu = sample_periodic_measure(&model, &g, 31, 0, 10_000, &params).unwrap();
    let proxy = support_interval(&mu, 0.999).unwrap();
    let median = quantile_sorted(&mu.sorted().unwrap(), 0.5);
    let a = Interval::closed(proxy.lo, median);
    let kb = kb_average(&model, &g, 32, 0, &[0.0], 0, &a, 1000, 10_000, &mu, Scheme::Euler).unwrap();
    notes.push(format!(
        "kb {:.5} ± {:.5} vs µ̂(A) {:.5} ± {:.5}",
        kb.average.value, kb.average.se, kb.reference.value, kb.reference.se
    ));

    let reference = mu.expectation(|x| x[0]);
    let erg = ergodic_time_average(
        &model,
        &NoisePath::new(33, 1, g),
        0,
        &[0.0],
        |x| x[0],
        10_000,
        Scheme::Euler,
        Some(reference),
    )
    .unwrap();
    let erg_pass = erg.pass.unwrap_or(false);
    notes.push(format!(
        "time average {:.5} ± {:.5} vs {:.5} ± {:.5}",
        erg.average.value, erg.average.se, reference.value, reference.se
    ));

    let lin = linear();
    let lin_mu = sample_periodic_measure(&lin, &g, 34, 0, 10_000, &params).unwrap();
    let lyap = quadratic_lyapunov(2.0)
        .unwrap()
        .with_lambda(std::sync::Arc::new(|t: f64| -2.0 - t.sin()));
    let setup = MixingSetup {
        grid: g,
        master_seed: 35,
        s: 0,
        x: vec![0.0],
        y: vec![0.5],
        h: |x: &[f64]| x[0].clamp(-1.0, 1.0),
        h_sup: 1.0,
        n_list: vec![1, 2, 3, 4, 5],
        n: 10_000,
        reference: Some(&lin_mu),
        scheme: Scheme::Euler,
    };
    let mix = mixing_report(&lin, &lyap, &setup).unwrap();
    let fit = mix.pair_fit;
    notes.push(match fit {
        Some(f) => format!(
            "mixing ratio {:.5e} ± {:.1e} vs e^(-2π) = {:.5e}",
            f.ratio,
            f.se,
            (-TAU).exp()
        ),
        None => "mixing: no ratio fit".to_string(),
    });
    let pass = kb.pass && erg_pass && fit.is_some() && mix.pass == Some(true);
    verdict(pass, notes.join("; "))
}

fn c9_bel_gradient() -> Verdict {
    let mut notes = Vec::new();
    let ou_spec = LinearPeriodicSpec::constant(1.0, 1.0, 1.0);
    let ou = build_linear_periodic(&ou_spec).unwrap();
    let g = GridSpec::from_period(1.0, 1000).unwrap();
    let bel = bel_gradient(&ou, &g, 41, 0, &[0.0], &[1.0], |x: &[f64]| x[0], 1000, 100_000).unwrap();
    let target = (-1.0f64).exp();
    let ou_pass = (bel.estimate.value - target).abs() <= 3.0 * bel.estimate.se;
    notes.push(format!(
        "OU {:.5} ± {:.5} vs e^-1 = {target:.5}",
        bel.estimate.value, bel.estimate.se
    ));

    let model = cubic();
    let g = dt_grid(1e-3);
    let h = |x: &[f64]| x[0].tanh();
    let (a, b, v, w) = (0.3, -1.7, 1.0, 2.5);
    let sv = bel_samples(&model, &g, 42, 0, &[0.5], &[v], h, 1000, 1000).unwrap();
    let sw = bel_samples(&model, &g, 42, 0, &[0.5], &[w], h, 1000, 1000).unwrap();
    let sc = bel_samples(&model, &g, 42, 0, &[0.5], &[a * v + b * w], h, 1000, 1000).unwrap();
    let linearity = (mean(&sc) - (a * mean(&sv) + b * mean(&sw))).abs();
    notes.push(format!("linearity defect {linearity:.1e}"));

    let n = 100_000;
    let bel = bel_gradient(&model, &g, 43, 0, &[0.5], &[1.0], h, 1000, n).unwrap();
    let fd = finite_difference_gradient(&model, &g, 43, 0, &[0.5], &[1.0], 1e-3, h, 1000, n).unwrap();
    let (diff, se) = bel.estimate.compare(&fd);
    notes.push(format!(
        "cubic BEL {:.5} ± {:.5} vs FD {:.5} ± {:.5}",
        bel.estimate.value, bel.estimate.se, fd.value, fd.se
    ));
    verdict(ou_pass && linearity <= 1e-10 && diff <= 3.0 * se, notes.join("; "))
}

const CLI_CONFIG: &str = r#"
seed = 5

[model]
kind = "cubic"
gamma = 0.5
delta = 1.0

[grid]
dt = 1e-2

[simulate]
x0 = [0.5]
steps = 1256

[pullback]
tol = 1e-10

[verify_rps]
tol = 1e-8

[check]
radius = 4.0
n_times = 32
n_pairs = 64
p = 2.0
lambda = { constant = -2.0, sin = [1.0] }

[contract]
x0 = [2.0]
y0 = [-2.0]

[measure]
n = 300
invariance = "independent"

[kb]
n_periods = 20
n_mc = 200
reference_n = 300

[ergodic]
n_periods = 200
reference_n = 200

[mixing]
y = [1.0]
n_list = [1, 2, 3]
n = 300
reference_n = 300
lambda = { constant = -2.0 }

[bel]
x = [0.5]
observable = { kind = "tanh" }
horizon_steps = 100
n = 300
fd_eps = 1e-3
"#;

const COMMANDS: [&str; 10] = [
    "simulate",
    "pullback",
    "verify-rps",
    "check",
    "contract",
    "measure",
    "kb",
    "ergodic",
    "mixing",
    "bel",
];

fn run_cli(command: &str, config: &Path, out: &Path, workers: usize) -> Option<i32> {
    Command::new(env!("CARGO_BIN_EXE_psde"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .arg("--workers")
        .arg(workers.to_string())
        .output()
        .ok()
        .and_then(|o| o.status.code())
}

type Files = Vec<(String, Vec<u8>)>;

fn dir_files(dir: &Path) -> Files {
    let mut files: Files = fs::read_dir(dir)
        .map(|entries| {
            entries
                .flatten()
                .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
                .collect()
        })
        .unwrap_or_default();
    files.sort();
    files
}

fn c10_determinism() -> Verdict {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("config.toml");
    fs::write(&config, CLI_CONFIG).unwrap();
    let mut problems = Vec::new();
    let mut csvs = 0;
    for command in COMMANDS {
        let runs: Vec<(Option<i32>, Files)> = [(1usize, "a"), (1, "b"), (8, "c"), (8, "d")]
            .iter()
            .map(|(workers, tag)| {
                let out = tmp.path().join(format!("{command}-{tag}"));
                let code = run_cli(command, &config, &out, *workers);
                (code, dir_files(&out))
            })
            .collect();
        if runs.iter().any(|(code, _)| *code != Some(0)) {
            problems.push(format!("{command}: exit codes {:?}", runs.iter().map(|r| r.0).collect::<Vec<_>>()));
        }
        let first = &runs[0].1;
        csvs += first.iter().filter(|(n, _)| n.ends_with(".csv")).count();
        if first.is_empty() || runs.iter().any(|(_, files)| files != first) {
            problems.push(format!("{command}: outputs differ across reruns or worker counts"));
        }
    }
    let detail = if problems.is_empty() {
        format!("{csvs} CSV files byte-identical across 2 reruns × workers {{1, 8}} for 10 commands")
    } else {
        problems.join("; ")
    };
    verdict(problems.is_empty(), detail)
}

type Criterion = (u32, &'static str, Option<f64>, fn() -> Verdict);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "θ-shift bit-exactness", Some(60.0), c1_shift_bit_exactness),
        (2, "flow identity", Some(120.0), c2_flow_identity),
        (3, "oracle equivalence", Some(120.0), c3_oracle_equivalence),
        (4, "Cauchy decay", Some(120.0), c4_cauchy_decay),
        (5, "contraction rate", Some(60.0), c5_contraction_rate),
        (6, "condition checker", Some(30.0), c6_condition_checker),
        (7, "periodic measure", Some(300.0), c7_periodic_measure),
        (8, "PS-ergodicity", Some(600.0), c8_ps_ergodicity),
        (9, "BEL gradient", Some(180.0), c9_bel_gradient),
        (10, "determinism", None, c10_determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failures = 0;
    for (id, name, budget, run) in criteria {
        let label = format!("criterion {id}");
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let v = run();
        let secs = start.elapsed().as_secs_f64();
        let in_budget = budget.is_none_or(|b| secs <= b);
        let pass = v.pass && in_budget;
        if !pass {
            failures += 1;
        }
        let budget_note = budget.map_or(String::new(), |b| format!(" of {b:.0}s"));
        println!(
            "acceptance criterion {id:>2} [{name}]: {} ({}; {secs:.1}s{budget_note})",
            if pass { "PASS" } else { "FAIL" },
            v.detail
        );
    }
    let _ = PI;
    if failures > 0 {
        println!("acceptance: {failures} criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
