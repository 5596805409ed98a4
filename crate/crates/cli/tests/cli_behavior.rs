//! Exit-code and artifact behavior of the command-line driver.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn seqgp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqgp"))
        .args(args)
        .output()
        .unwrap()
}

fn write_cfg(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path
}

const RUN_BODY: &str = "\
seed = 1
domain.lower = 0
domain.upper = 1
covariance.family = squared-exponential
covariance.variance = 1.0
covariance.lengthscale = 0.3
grid.kind = uniform-lattice
grid.resolution = 51
x0 = 0.5
steps = 15
acquisition.kind = ei
";

const THRESHOLD_BODY: &str = "\
seed = 7
domain.lower = -3
domain.upper = 3
covariance.family = squared-exponential
covariance.variance = 1.0
covariance.lengthscale = 1.0
grid.kind = explicit
grid.points = -0.8; 0.8
x0 = 0
rule.kind = threshold
rule.threshold = 0
rule.above = 0.8
rule.below = -0.8
verification.replications = 40000
verification.bin_width = 0.1
verification.min_bin_count = 100
";

#[test]
fn run_writes_one_row_per_observation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "run.cfg", RUN_BODY);
    let out = dir.path().join("out");
    let result = seqgp(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(result.status.success());
    let text = std::fs::read_to_string(out.join("trajectory.csv")).unwrap();
    // Header comment + column header + 16 observations.
    assert_eq!(text.lines().count(), 2 + 16);
    assert!(text.starts_with("# config_hash="));
}

#[test]
fn missing_epsilon_for_pi_exits_with_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(
        dir.path(),
        "pi.cfg",
        &RUN_BODY.replace("acquisition.kind = ei", "acquisition.kind = pi"),
    );
    let result = seqgp(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("acquisition.epsilon"), "stderr: {stderr}");
}

#[test]
fn replay_accepts_fresh_manifest_and_rejects_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_cfg(dir.path(), "run.cfg", RUN_BODY);
    let out = dir.path().join("out");
    assert!(seqgp(&["run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()])
        .status
        .success());

    let manifest = out.join("manifest.json");
    let ok = seqgp(&["replay", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0));

    // Perturb one observed value in the trajectory file.
    let trajectory = out.join("trajectory.csv");
    let text = std::fs::read_to_string(&trajectory).unwrap();
    let tampered: Vec<String> = text
        .lines()
        .map(|line| {
            if line.starts_with("3,") {
                let mut fields: Vec<String> = line.split(',').map(String::from).collect();
                let y: f64 = fields[2].parse().unwrap();
                fields[2] = format!("{:?}", y + 1e-9);
                fields.join(",")
            } else {
                line.to_string()
            }
        })
        .collect();
    std::fs::write(&trajectory, tampered.join("\n") + "\n").unwrap();

    let bad = seqgp(&["replay", "--manifest", manifest.to_str().unwrap()]);
    assert_eq!(bad.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&bad.stderr);
    assert!(stderr.contains("step 3"), "stderr: {stderr}");
}

#[test]
fn verify_exit_honors_expectation() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out_arg = out.to_str().unwrap().to_string();

    // The canonical threshold suite passes, so `expect = fail` is contrary.
    let cfg = write_cfg(
        dir.path(),
        "contrary.cfg",
        &format!("{THRESHOLD_BODY}expect = fail\n"),
    );
    let contrary = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", &out_arg]);
    assert_eq!(contrary.status.code(), Some(3));

    // The atom-mutated suite fails, which is exactly what is expected.
    let cfg = write_cfg(
        dir.path(),
        "atom.cfg",
        &format!(
            "{THRESHOLD_BODY}expect = fail\nverification.mutate = atom\nverification.atom_point = 0.8\nverification.atom_offset = 0.5\n"
        ),
    );
    let detected = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", &out_arg]);
    assert_eq!(detected.status.code(), Some(0));

    // And the same mutated suite with `expect = pass` is contrary.
    let cfg = write_cfg(
        dir.path(),
        "atom_pass.cfg",
        &format!(
            "{THRESHOLD_BODY}expect = pass\nverification.mutate = atom\nverification.atom_point = 0.8\nverification.atom_offset = 0.5\n"
        ),
    );
    let contrary2 = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", &out_arg]);
    assert_eq!(contrary2.status.code(), Some(3));
}

#[test]
fn starved_bins_exit_inconclusive() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = write_cfg(
        dir.path(),
        "starved.cfg",
        &THRESHOLD_BODY
            .replace("verification.replications = 40000", "verification.replications = 10000")
            .replace("verification.bin_width = 0.1", "verification.bin_width = 0.0001")
            .replace("verification.min_bin_count = 100", "verification.min_bin_count = 5000"),
    );
    let result = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(4));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"outcome\": \"inconclusive\""));
}

#[test]
fn counterexample_and_separability_summaries() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let base = "\
seed = 3
domain.lower = 0
domain.upper = 1
covariance.family = constant
covariance.variance = 1.0
covariance.lengthscale = 1.0
grid.kind = uniform-lattice
grid.resolution = 11
expect = pass
";
    let cfg = write_cfg(
        dir.path(),
        "counter.cfg",
        &format!("{base}rule.kind = counterexample\nrule.mean_of_y = 1\nverification.replications = 200000\n"),
    );
    let result = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"broken_formula_value\": 0.0"), "{summary}");

    let cfg = write_cfg(
        dir.path(),
        "sep.cfg",
        &format!("{base}rule.kind = separability\nrule.gamma = 10\nverification.replications = 200000\n"),
    );
    let result = seqgp(&["verify", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(result.status.code(), Some(0));
    let summary = std::fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("\"suite\": \"separability\""));
}
