use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use periodic_sde::cli::{detect_schema, emit_plot, validate, CliError, ExperimentConfig, PlotKind};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn psde(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_psde")).args(args).output().unwrap()
}

fn run(command: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![command, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    psde(&args)
}

#[test]
fn shipped_configs_round_trip() {
    for name in ["cubic.toml", "linear.toml", "anti.toml"] {
        let text = fs::read_to_string(configs().join(name)).unwrap();
        let config = ExperimentConfig::from_toml_str(&text).unwrap();
        let again = ExperimentConfig::from_toml_str(&config.to_toml_string()).unwrap();
        assert_eq!(config, again, "{name}");
        validate(&config).unwrap();
    }
}

#[test]
fn every_unknown_key_is_reported() {
    let text = r#"
seed = 1
bogus = 3
[model]
kind = "cubic"
gamma = 0.5
delta = 1.0
extra = true
[grid]
steps_per_period = 64
foo = 1
"#;
    match ExperimentConfig::from_toml_str(text) {
        Err(CliError::Config(problems)) => {
            let all = problems.join("\n");
            for key in ["bogus", "model.extra", "grid.foo"] {
                assert!(all.contains(key), "missing {key} in {all}");
            }
        }
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn missing_sections_and_bad_values_are_listed() {
    let text = r#"
seed = 1
[model]
kind = "cubic"
gamma = 0.5
delta = -1.0
[grid]
steps_per_period = 0
"#;
    let config = ExperimentConfig::from_toml_str(text).unwrap();
    match validate(&config) {
        Err(CliError::Config(problems)) => assert!(problems.len() >= 2, "{problems:?}"),
        Err(other) => panic!("expected validation errors, got {other}"),
        Ok(_) => panic!("invalid config accepted"),
    }
}

#[test]
fn exit_codes_follow_the_check_verdict() {
    let tmp = tempfile::tempdir().unwrap();
    let ok = run("check", &configs().join("cubic.toml"), &tmp.path().join("cubic"), &[]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = run("check", &configs().join("anti.toml"), &tmp.path().join("anti"), &[]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(tmp.path().join("anti/conditions.csv").exists());

    let missing = run("check", &tmp.path().join("nope.toml"), &tmp.path().join("x"), &[]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(psde(&["--help"]).status.code(), Some(0));
    assert_eq!(psde(&["frobnicate"]).status.code(), Some(1));
}

#[test]
fn manifest_records_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("sim");
    let r = run("simulate", &configs().join("cubic.toml"), &out, &["--seed-override", "7"]);
    assert_eq!(r.status.code(), Some(0));
    let manifest = fs::read_to_string(out.join("manifest.txt")).unwrap();
    for line in ["command = \"simulate\"", "seed = 7", "scheme = \"euler\"", "steps_per_period = 628", "pass = true"] {
        assert!(manifest.lines().any(|l| l == line), "missing `{line}` in\n{manifest}");
    }
    assert!(manifest.contains("config_sha256 = "));
    let header = fs::read_to_string(out.join("trajectory.csv")).unwrap();
    assert_eq!(header.lines().next(), Some("t,x1"));
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let config = configs().join("linear.toml");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    assert_eq!(run("measure", &config, &a, &["--workers", "1"]).status.code(), Some(0));
    assert_eq!(run("measure", &config, &b, &["--workers", "4"]).status.code(), Some(0));
    for file in ["measure.csv", "support.csv", "invariance.csv", "manifest.txt"] {
        assert_eq!(fs::read(a.join(file)).unwrap(), fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn plot_schemas() {
    assert_eq!(detect_schema("n,gap").unwrap(), PlotKind::Cauchy);
    assert_eq!(detect_schema("t,x1,x2").unwrap(), PlotKind::Trajectory);
    assert_eq!(detect_schema("phase,sample_index,x1").unwrap(), PlotKind::Measure);
    assert!(matches!(detect_schema("t,x2"), Err(CliError::Schema(_))));

    let tmp = tempfile::tempdir().unwrap();
    let csv = tmp.path().join("gaps.csv");
    fs::write(&csv, "n,gap\n1,0.5\n2,0.01\n").unwrap();
    let script = emit_plot(&csv, None).unwrap();
    assert_eq!(script, tmp.path().join("gaps.gp"));
    assert!(fs::read_to_string(&script).unwrap().contains("'gaps.csv'"));
    assert!(matches!(emit_plot(&csv, Some(PlotKind::Measure)), Err(CliError::Schema(_))));

    let junk = tmp.path().join("junk.csv");
    fs::write(&junk, "a,b,c\n").unwrap();
    let r = psde(&["plot", "--csv", junk.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("n,estimate,se"));
}
