use std::path::{Path, PathBuf};
use std::process::Command;

use hydrofit::cli::{run_command, EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE};
use hydrofit::model::{FluidEnv, MechanismModel};
use hydrofit::trajectory::load_trajectory;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn cfg(name: &str) -> String {
    configs().join(name).to_string_lossy().into_owned()
}

fn run(args: &[&str]) -> i32 {
    run_command(std::iter::once("hydrofit").chain(args.iter().copied()))
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn synth_identify_evaluate_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let (model, coeffs) = (cfg("passive_horizontal.json"), cfg("coeffs_three_link.json"));
    let (target, result, history, score) = (
        path(dir.path(), "target.csv"),
        path(dir.path(), "result.json"),
        path(dir.path(), "history.csv"),
        path(dir.path(), "score.json"),
    );
    let synth = [
        "synth", "--model", &model, "--coeffs", &coeffs, "--duration", "1.5", "--rate", "50", "--noise-std", "0",
        "--seed", "1", "--out", &target,
    ];
    assert_eq!(run(&synth), EXIT_OK);
    let identify = [
        "identify", "--model", &model, "--target", &target, "--max-evals", "3000", "--sigma0", "0.2", "--seed", "4",
        "--workers", "2", "--out", &result, "--history", &history,
    ];
    assert_eq!(run(&identify), EXIT_OK);
    let evaluate = ["evaluate", "--model", &model, "--coeffs", &result, "--target", &target, "--out", &score];
    assert_eq!(run(&evaluate), EXIT_OK);

    let s: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&score).unwrap()).unwrap();
    let err = s["normalized_error"].as_f64().unwrap();
    assert!(err < 0.05, "{err}");
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&result).unwrap()).unwrap();
    assert!((r["normalized_error"].as_f64().unwrap() - err).abs() < 1e-12);
    assert_eq!(r["stop_reason"], "max_evals");

    // same flags, same bytes
    let history2 = path(dir.path(), "history2.csv");
    let result2 = path(dir.path(), "result2.json");
    let mut again = identify;
    again[again.len() - 3] = &result2;
    again[again.len() - 1] = &history2;
    assert_eq!(run(&again), EXIT_OK);
    assert_eq!(std::fs::read(&history).unwrap(), std::fs::read(&history2).unwrap());
}

#[test]
fn synth_output_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (model, coeffs) = (cfg("active_bent.json"), cfg("coeffs_three_link.json"));
    let outs = [path(dir.path(), "a.csv"), path(dir.path(), "b.csv"), path(dir.path(), "c.csv")];
    for (out, seed) in outs.iter().zip(["3", "3", "4"]) {
        let args = [
            "synth", "--model", &model, "--coeffs", &coeffs, "--duration", "0.5", "--noise-std", "0.0005", "--seed",
            seed, "--out", out,
        ];
        assert_eq!(run(&args), EXIT_OK);
    }
    let read = |p: &String| std::fs::read(p).unwrap();
    assert_eq!(read(&outs[0]), read(&outs[1]));
    assert_ne!(read(&outs[0]), read(&outs[2]));
}

#[test]
fn zero_duration_simulation_writes_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = path(dir.path(), "t.csv");
    let args = [
        "simulate", "--model", &cfg("passive_horizontal.json"), "--coeffs", &cfg("coeffs_three_link.json"),
        "--duration", "0", "--out", &out,
    ];
    assert_eq!(run(&args), EXIT_OK);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2);
    let t = load_trajectory(&out, None).unwrap();
    assert_eq!(t.times(), &[0.0]);
    assert!((t.point(0, 3).x - 0.080).abs() < 1e-12);
}

#[test]
fn missing_target_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "identify", "--model", &cfg("passive_horizontal.json"), "--target", &path(dir.path(), "nope.csv"), "--out",
        &path(dir.path(), "r.json"),
    ];
    assert_eq!(run(&args), EXIT_DATA);
}

#[test]
fn invalid_model_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut m = MechanismModel::load(cfg("passive_horizontal.json")).unwrap();
    m.links[1].mass = 0.0;
    m.save(&bad).unwrap();
    let args = [
        "simulate", "--model", bad.to_str().unwrap(), "--coeffs", &cfg("coeffs_three_link.json"), "--duration", "0.1",
        "--out", &path(dir.path(), "t.csv"),
    ];
    assert_eq!(run(&args), EXIT_DATA);
}

#[test]
fn divergence_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let wild = dir.path().join("wild.json");
    let mut m = MechanismModel::load(cfg("passive_horizontal.json")).unwrap();
    m.fluid = FluidEnv::VACUUM;
    for j in &mut m.joints {
        j.damping = 0.0;
        j.friction_loss = 0.0;
    }
    m.initial_state.qdot = vec![2e6, 0.0, 0.0];
    m.save(&wild).unwrap();
    let args = [
        "simulate", "--model", wild.to_str().unwrap(), "--coeffs", &cfg("coeffs_three_link.json"), "--duration",
        "0.1", "--out", &path(dir.path(), "t.csv"),
    ];
    assert_eq!(run(&args), EXIT_NUMERICAL);
}

#[test]
fn usage_errors() {
    assert_eq!(run(&["simulate"]), EXIT_USAGE);
    assert_eq!(run(&["frobnicate"]), EXIT_USAGE);
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "synth", "--model", &cfg("passive_horizontal.json"), "--coeffs", &cfg("coeffs_three_link.json"),
        "--duration=-1", "--out", &path(dir.path(), "t.csv"),
    ];
    assert_eq!(run(&args), EXIT_USAGE);
}

#[test]
fn binary_reports_help_and_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_hydrofit");
    for sub in ["simulate", "identify", "evaluate", "synth"] {
        let out = Command::new(bin).args([sub, "--help"]).output().unwrap();
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        assert!(text.contains("File formats"), "{sub}");
        assert!(text.contains("--model"), "{sub}");
    }
    let out = Command::new(bin).args(["evaluate", "--model", "x.json"]).output().unwrap();
    assert_eq!(out.status.code(), Some(EXIT_USAGE));
    assert!(!out.stderr.is_empty());
}
