//! End-to-end runs of the `velab` binary on tiny budgets.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &[&str] = &[
    "--iterations",
    "60",
    "--batch-size",
    "32",
    "--hidden",
    "8",
    "--log-every",
    "10",
];

fn velab(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_velab"))
        .arg("--out")
        .arg(out)
        .args(["--threads", "1"])
        .args(args)
        .env_remove("VELAB_OUT")
        .output()
        .expect("binary runs")
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = velab(out, args);
    assert!(
        o.status.success(),
        "velab {args:?} failed with {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(out: &Path, args: &[&str]) -> i32 {
    velab(out, args).status.code().expect("exited normally")
}

fn with<'a>(base: &[&'a str], extra: &[&'a str]) -> Vec<&'a str> {
    base.iter().chain(extra).copied().collect()
}

fn small_data(dir: &Path) {
    ok(dir, &["build-data", "--depth", "3", "--segs", "4"]);
}

fn pipeline(dir: &Path) {
    small_data(dir);
    ok(dir, &with(&["train-tokenizer"], TINY));
    ok(dir, &with(&["train-flow"], TINY));
    ok(dir, &["sample", "--n", "300", "--steps", "5"]);
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(dir.path(), &["--help"]);
    for sub in [
        "build-data",
        "train-tokenizer",
        "train-flow",
        "sample",
        "analyze",
        "reproduce",
        "describe-checkpoint",
    ] {
        assert!(help.contains(sub), "help lacks {sub}");
    }
    assert_eq!(code(dir.path(), &["--no-such-flag"]), 2);
    assert_eq!(
        code(
            dir.path(),
            &["train-tokenizer", "--mode", "ve", "--beta", "1"]
        ),
        2
    );
    assert_eq!(code(dir.path(), &["--threads", "0", "build-data"]), 2);
    // nothing to train on yet
    assert_eq!(code(dir.path(), &["train-tokenizer"]), 2);
}

#[test]
fn build_data_refuses_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    let first = fs::read(dir.path().join("mixture.txt")).unwrap();
    assert_eq!(
        code(dir.path(), &["build-data", "--depth", "3", "--segs", "4"]),
        4
    );
    ok(
        dir.path(),
        &["build-data", "--depth", "3", "--segs", "4", "--force"],
    );
    assert_eq!(fs::read(dir.path().join("mixture.txt")).unwrap(), first);
    let text = String::from_utf8(first).unwrap();
    assert!(
        text.lines()
            .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
            .count()
            > 10
    );
    assert!(fs::read_to_string(dir.path().join("mixture.svg"))
        .unwrap()
        .starts_with("<svg"));
}

#[test]
fn fixed_seed_runs_are_bit_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    pipeline(a.path());
    pipeline(b.path());
    for rel in [
        "mixture.txt",
        "tokenizer/checkpoint.bin",
        "tokenizer/metrics.jsonl",
        "flow/checkpoint.bin",
        "samples/samples.txt",
        "samples/latents.txt",
    ] {
        assert_eq!(
            fs::read(a.path().join(rel)).unwrap(),
            fs::read(b.path().join(rel)).unwrap(),
            "{rel} differs between reruns"
        );
    }
    let samples = fs::read_to_string(a.path().join("samples/samples.txt")).unwrap();
    assert_eq!(samples.lines().count(), 300);
    // a different seed changes the result
    let c = tempfile::tempdir().unwrap();
    small_data(c.path());
    ok(c.path(), &with(&["--seed", "5", "train-tokenizer"], TINY));
    assert_ne!(
        fs::read(a.path().join("tokenizer/checkpoint.bin")).unwrap(),
        fs::read(c.path().join("tokenizer/checkpoint.bin")).unwrap()
    );
}

#[test]
fn resume_matches_uninterrupted_training() {
    let whole = tempfile::tempdir().unwrap();
    let split = tempfile::tempdir().unwrap();
    for d in [whole.path(), split.path()] {
        small_data(d);
    }
    ok(whole.path(), &with(&["train-tokenizer"], TINY));
    ok(
        split.path(),
        &with(&["train-tokenizer", "--stop-after", "25"], TINY),
    );
    ok(split.path(), &with(&["train-tokenizer", "--resume"], TINY));
    for rel in ["tokenizer/checkpoint.bin", "tokenizer/metrics.jsonl"] {
        assert_eq!(
            fs::read(whole.path().join(rel)).unwrap(),
            fs::read(split.path().join(rel)).unwrap(),
            "{rel}"
        );
    }

    ok(whole.path(), &with(&["train-flow"], TINY));
    ok(
        split.path(),
        &with(&["train-flow", "--stop-after", "31"], TINY),
    );
    ok(split.path(), &with(&["train-flow", "--resume"], TINY));
    assert_eq!(
        fs::read(whole.path().join("flow/checkpoint.bin")).unwrap(),
        fs::read(split.path().join("flow/checkpoint.bin")).unwrap()
    );
}

#[test]
fn checkpoints_guard_against_mismatch_and_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    ok(dir.path(), &with(&["train-tokenizer"], TINY));
    // retraining without --force or --resume would discard the checkpoint
    assert_eq!(code(dir.path(), &with(&["train-tokenizer"], TINY)), 4);
    // resuming under a different loss is refused
    assert_eq!(
        code(
            dir.path(),
            &with(&["train-tokenizer", "--resume", "--mode", "kl"], TINY)
        ),
        4
    );
    ok(
        dir.path(),
        &with(&["train-tokenizer", "--force", "--mode", "kl"], TINY),
    );
    let header = ok(
        dir.path(),
        &[
            "describe-checkpoint",
            dir.path()
                .join("tokenizer/checkpoint.bin")
                .to_str()
                .unwrap(),
        ],
    );
    let v: serde_json::Value = serde_json::from_str(&header).unwrap();
    assert_eq!(v["kind"], "tokenizer");
    assert_eq!(v["iteration"], 60);
    // corrupt checkpoints are rejected, not half-read
    let path = dir.path().join("tokenizer/checkpoint.bin");
    let mut bytes = fs::read(&path).unwrap();
    let n = bytes.len();
    bytes.truncate(n - 7);
    fs::write(&path, bytes).unwrap();
    assert_eq!(
        code(
            dir.path(),
            &with(&["train-tokenizer", "--resume", "--mode", "kl"], TINY)
        ),
        1
    );
}

#[test]
fn zero_iterations_writes_initial_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    ok(
        dir.path(),
        &["train-tokenizer", "--iterations", "0", "--hidden", "8"],
    );
    let metrics = fs::read_to_string(dir.path().join("tokenizer/metrics.jsonl")).unwrap();
    assert!(metrics.is_empty());
    assert!(dir.path().join("tokenizer/checkpoint.bin").exists());
}

#[test]
fn metrics_lines_are_json_with_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    small_data(dir.path());
    ok(dir.path(), &with(&["train-tokenizer"], TINY));
    let text = fs::read_to_string(dir.path().join("tokenizer/metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 6);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["iter"], 10 * (i as u64 + 1));
        assert!(l["config_hash"].as_str().unwrap().len() == 64);
        assert!(l["loss_total"].as_f64().unwrap().is_finite());
    }
    let manifest: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("tokenizer/manifest.json")).unwrap(),
    )
    .unwrap();
    assert!(
        manifest["files"]["checkpoint.bin"].is_string()
            || manifest["files"]["checkpoint.bin"].is_object()
    );
}

#[test]
fn analyze_report_has_schema_and_isolates_failures() {
    let dir = tempfile::tempdir().unwrap();
    pipeline(dir.path());
    ok(
        dir.path(),
        &[
            "analyze", "--mc", "2000", "--n", "500", "--grid", "6", "--points", "3", "--rho",
            "0,0.5,2",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("analysis/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["schema_version"], 1);
    for probe in [
        "taylor",
        "equilibrium",
        "robustness",
        "sensitivity",
        "generation",
    ] {
        assert_eq!(
            report["probes"][probe]["ok"], true,
            "{probe}: {}",
            report["probes"][probe]
        );
    }
    let rows = report["probes"]["robustness"]["result"]["rows"]
        .as_array()
        .unwrap();
    assert_eq!(rows.len(), 3);
    assert!(
        fs::read_to_string(dir.path().join("analysis/sensitivity.svg"))
            .unwrap()
            .starts_with("<svg")
    );

    // without samples the generation probe fails alone
    fs::remove_file(dir.path().join("samples/samples.txt")).unwrap();
    ok(
        dir.path(),
        &[
            "analyze",
            "--probe",
            "generation",
            "--probe",
            "sensitivity",
            "--grid",
            "4",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("analysis/report.json")).unwrap())
            .unwrap();
    assert_eq!(report["probes"]["generation"]["ok"], false);
    assert_eq!(report["probes"]["sensitivity"]["ok"], true);
}

#[test]
fn linear_decoder_equilibrium_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "analyze",
            "--probe",
            "equilibrium",
            "--decoder",
            "linear:1,0.5,-0.3,2",
            "--lambda1",
            "1e-2",
            "--mc",
            "20000",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("analysis/report.json")).unwrap())
            .unwrap();
    let eq = &report["probes"]["equilibrium"]["result"];
    for row in eq["surrogate"].as_array().unwrap() {
        let r = row["ratio"].as_f64().unwrap();
        assert!((0.99..=1.01).contains(&r), "ratio {r}");
    }
    for row in eq["monte_carlo"].as_array().unwrap() {
        let r = row["ratio"].as_f64().unwrap();
        assert!((0.95..=1.05).contains(&r), "mc ratio {r}");
    }
    assert_eq!(code(dir.path(), &["analyze", "--decoder", "linear:1,2"]), 2);
}

#[test]
fn out_directory_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_velab"))
        .args(["build-data", "--depth", "2", "--segs", "3"])
        .env("VELAB_OUT", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("mixture.txt").exists());
}

#[test]
fn config_file_and_show_config_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let toml = ok(dir.path(), &["--seed", "9", "show-config"]);
    let path = dir.path().join("run.toml");
    fs::write(&path, &toml).unwrap();
    let again = ok(
        dir.path(),
        &["--config", path.to_str().unwrap(), "show-config"],
    );
    assert_eq!(toml, again);
    assert!(toml.contains("seed = 9"));
    fs::write(&path, "seed = \"nine\"\n").unwrap();
    assert_eq!(
        code(
            dir.path(),
            &["--config", path.to_str().unwrap(), "show-config"]
        ),
        2
    );
}

#[test]
fn reproduce_smoke_writes_comparison() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        dir.path(),
        &[
            "--profile",
            "desk",
            "reproduce",
            "fig2",
            "--iterations",
            "20",
        ],
    );
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(cmp["figure"], "fig2");
    assert_eq!(cmp["runs"].as_array().unwrap().len(), 2);
    assert!(cmp["checks"]
        .as_object()
        .unwrap()
        .contains_key("strong_kl_recon_above_ve"));
    assert!(dir.path().join("ve/latent.svg").exists());
    // a second launch into the same directory sees the lock released
    ok(
        dir.path(),
        &[
            "reproduce",
            "fig2",
            "--iterations",
            "5",
            "--budget-mins",
            "0",
        ],
    );
    let cmp: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("comparison.json")).unwrap())
            .unwrap();
    assert_eq!(cmp["partial"], true);
}
