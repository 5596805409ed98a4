//! The `run`, `verify` and `replay` commands.

use std::path::Path;

use seqgp::conditional::{Canonical, ConditionalEvaluator};
use seqgp::rng::SeedSpec;
use seqgp::sequential::run_loop;
use seqgp::verify::{
    counterexample_demo, maximizer_separability_demo, mutate_canonical, verify_pic_multistep,
    verify_pic_onestep, PicSettings, VerificationReport,
};

use crate::config::{Expectation, ExperimentConfig, Mutation, VerifyRule};
use crate::output::{
    bins_csv, to_pretty_json, trajectory_csv, Manifest, RunSummary, VerifySummary,
};
use crate::{CliError, ExitStatus};

fn write_artifact(dir: &Path, name: &str, content: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(format!("cannot create {}: {e}", dir.display())))?;
    let path = dir.join(name);
    std::fs::write(&path, content)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))?;
    println!("wrote {}", path.display());
    Ok(())
}

pub fn cmd_run(config: &ExperimentConfig) -> Result<ExitStatus, CliError> {
    let run = config.run.as_ref().ok_or_else(|| {
        CliError::Validation("config has no run section (set acquisition.kind)".into())
    })?;
    let seeds = SeedSpec::new(config.seed, 0);
    let trajectory = run_loop(
        &config.prior,
        &run.rule,
        &config.grid,
        &run.x0,
        run.steps,
        seeds,
    )?;

    println!("# config_hash={} seed={}", config.hash, config.seed);
    let incumbents = trajectory.incumbents();
    for (step, incumbent) in trajectory.steps.iter().zip(&incumbents) {
        println!(
            "step {:>3}  x={:?}  y={:+.6}  incumbent={:+.6}",
            step.index, step.point, step.observed, incumbent
        );
    }

    write_artifact(
        &config.output,
        "trajectory.csv",
        &trajectory_csv(&trajectory, &config.hash, config.seed),
    )?;
    if trajectory.error.is_none() {
        let mut history = seqgp::conditional::History::new();
        for step in &trajectory.steps {
            history
                .push(step.point.clone(), step.observed, step.noise_variance)
                .map_err(CliError::from)?;
        }
        let posterior = seqgp::conditional::condition(&config.prior, &history, config.grid.points())?;
        write_artifact(
            &config.output,
            "posterior.csv",
            &crate::output::posterior_csv(&posterior, &config.hash, config.seed),
        )?;
    }
    let manifest = Manifest {
        config_hash: config.hash.clone(),
        seed: config.seed,
        trajectory_file: "trajectory.csv".into(),
        config: config.raw.clone(),
    };
    write_artifact(&config.output, "manifest.json", &to_pretty_json(&manifest))?;
    let summary = RunSummary {
        config_hash: config.hash.clone(),
        seed: config.seed,
        steps: trajectory.steps.len(),
        final_incumbent: incumbents.last().copied().unwrap_or(f64::NEG_INFINITY),
        error: trajectory.error.clone(),
    };
    write_artifact(&config.output, "run_summary.json", &to_pretty_json(&summary))?;

    if let Some(error) = &trajectory.error {
        eprintln!(
            "run halted after step {}: {error}",
            trajectory.steps.len().saturating_sub(1)
        );
        return Ok(ExitStatus::Numerical);
    }
    Ok(ExitStatus::Success)
}

/// Suite outcome before the `expect` comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Outcome {
    Pass,
    Fail,
    Inconclusive,
}

impl Outcome {
    fn as_str(&self) -> &'static str {
        match self {
            Outcome::Pass => "pass",
            Outcome::Fail => "fail",
            Outcome::Inconclusive => "inconclusive",
        }
    }
}

fn binned_outcome(report: &VerificationReport, min_pass_fraction: f64) -> Outcome {
    if report.inconclusive {
        Outcome::Inconclusive
    } else if report.aggregate_pass_fraction >= min_pass_fraction {
        Outcome::Pass
    } else {
        Outcome::Fail
    }
}

fn exit_for(expect: Expectation, outcome: Outcome) -> ExitStatus {
    match (expect, outcome) {
        (_, Outcome::Inconclusive) => ExitStatus::Inconclusive,
        (Expectation::None, _) => ExitStatus::Success,
        (Expectation::Pass, Outcome::Pass) => ExitStatus::Success,
        (Expectation::Fail, Outcome::Fail) => ExitStatus::Success,
        _ => ExitStatus::Contrary,
    }
}

pub fn cmd_verify(config: &ExperimentConfig) -> Result<ExitStatus, CliError> {
    let section = config.verify.as_ref().ok_or_else(|| {
        CliError::Validation("config has no verification section (set rule.kind)".into())
    })?;
    let settings = PicSettings {
        replications: section.replications,
        binning: section.binning,
        alpha: section.alpha,
        seeds: SeedSpec::new(config.seed, 0),
    };
    let evaluator: Box<dyn ConditionalEvaluator> = match &section.mutation {
        Mutation::None => Box::new(Canonical),
        Mutation::Atom { point, offset } => {
            Box::new(mutate_canonical(point.clone(), *offset)?)
        }
    };

    let expect_str = match config.expect {
        Expectation::Pass => "pass",
        Expectation::Fail => "fail",
        Expectation::None => "none",
    };
    let mut summary = VerifySummary {
        config_hash: config.hash.clone(),
        seed: config.seed,
        suite: String::new(),
        outcome: String::new(),
        expect: expect_str.to_string(),
        replications: section.replications,
        eligible_bins: None,
        starved_bins: None,
        aggregate_pass_fraction: None,
        min_pass_fraction: None,
        effect_size: None,
        occupancy_histogram: None,
        counterexample: None,
        separability: None,
    };

    let outcome = match &section.rule {
        VerifyRule::Constant { .. } | VerifyRule::Threshold { .. } => {
            let rule = section.rule.as_onestep().expect("one-step rule");
            summary.suite = match &section.rule {
                VerifyRule::Constant { .. } => "onestep-constant".into(),
                _ => "onestep-threshold".into(),
            };
            let report = verify_pic_onestep(
                &config.prior,
                &section.x0,
                &rule,
                &config.grid,
                &settings,
                evaluator.as_ref(),
            )?;
            write_artifact(
                &config.output,
                "bins.csv",
                &bins_csv(&report, &config.hash, config.seed),
            )?;
            summary.eligible_bins = Some(report.eligible_bins);
            summary.starved_bins = Some(report.starved_bins);
            summary.aggregate_pass_fraction = Some(report.aggregate_pass_fraction);
            summary.min_pass_fraction = Some(section.min_pass_fraction);
            summary.effect_size = Some(report.effect_size.clone());
            summary.occupancy_histogram = Some(report.occupancy_histogram.clone());
            println!(
                "{}: {} eligible bins, pass fraction {:.4}",
                summary.suite, report.eligible_bins, report.aggregate_pass_fraction
            );
            binned_outcome(&report, section.min_pass_fraction)
        }
        VerifyRule::MultiStep { rule, steps } => {
            summary.suite = format!("multistep-{steps}");
            let report = verify_pic_multistep(
                &config.prior,
                rule,
                &config.grid,
                &section.x0,
                *steps,
                &settings,
                evaluator.as_ref(),
            )?;
            write_artifact(
                &config.output,
                "bins.csv",
                &bins_csv(&report, &config.hash, config.seed),
            )?;
            summary.eligible_bins = Some(report.eligible_bins);
            summary.starved_bins = Some(report.starved_bins);
            summary.aggregate_pass_fraction = Some(report.aggregate_pass_fraction);
            summary.min_pass_fraction = Some(section.min_pass_fraction);
            summary.effect_size = Some(report.effect_size.clone());
            summary.occupancy_histogram = Some(report.occupancy_histogram.clone());
            println!(
                "{}: {} eligible bins, pass fraction {:.4}",
                summary.suite, report.eligible_bins, report.aggregate_pass_fraction
            );
            binned_outcome(&report, section.min_pass_fraction)
        }
        VerifyRule::Counterexample { mean_of_y } => {
            summary.suite = "counterexample".into();
            let report =
                counterexample_demo(*mean_of_y, section.replications, settings.seeds)?;
            println!(
                "counterexample: estimate {:+.4}, broken value {:?}, gap {:.4}",
                report.conditional_mean_estimate, report.broken_formula_value, report.gap
            );
            let tolerance = (5.0 * report.standard_error).max(0.01);
            let ok = report.broken_formula_value == 0.0
                && (report.gap - mean_of_y.abs()).abs() <= tolerance;
            summary.counterexample = Some(report);
            if ok {
                Outcome::Pass
            } else {
                Outcome::Fail
            }
        }
        VerifyRule::Separability { gamma } => {
            summary.suite = "separability".into();
            let report =
                maximizer_separability_demo(*gamma, section.replications, settings.seeds)?;
            println!(
                "separability: non-separable max {:+.4}, canonical max {:+.4}",
                report.nonseparable_max, report.canonical_max
            );
            let tolerance = (5.0 * report.standard_error).max(0.01);
            let ok = (report.max_gap - gamma).abs() <= tolerance;
            summary.separability = Some(report);
            if ok {
                Outcome::Pass
            } else {
                Outcome::Fail
            }
        }
    };

    summary.outcome = outcome.as_str().to_string();
    write_artifact(&config.output, "summary.json", &to_pretty_json(&summary))?;
    println!("suite outcome: {} (expected: {expect_str})", outcome.as_str());
    Ok(exit_for(config.expect, outcome))
}

pub fn cmd_replay(manifest_path: &Path) -> Result<ExitStatus, CliError> {
    let text = std::fs::read_to_string(manifest_path).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", manifest_path.display()))
    })?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| CliError::Validation(format!("malformed manifest: {e}")))?;
    let config = ExperimentConfig::from_map(manifest.config.clone(), &Default::default())?;
    if config.hash != manifest.config_hash {
        return Err(CliError::Contrary(format!(
            "manifest config hash {} does not match recomputed {}",
            manifest.config_hash, config.hash
        )));
    }

    let run = config.run.as_ref().ok_or_else(|| {
        CliError::Validation("manifest config has no run section".into())
    })?;
    let trajectory = run_loop(
        &config.prior,
        &run.rule,
        &config.grid,
        &run.x0,
        run.steps,
        SeedSpec::new(manifest.seed, 0),
    )?;
    let regenerated = trajectory_csv(&trajectory, &config.hash, manifest.seed);

    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let recorded_path = dir.join(&manifest.trajectory_file);
    let recorded = std::fs::read_to_string(&recorded_path).map_err(|e| {
        CliError::Validation(format!("cannot read {}: {e}", recorded_path.display()))
    })?;

    if recorded == regenerated {
        println!("replay ok: {} is bit-exact", recorded_path.display());
        return Ok(ExitStatus::Success);
    }
    let line = recorded
        .lines()
        .zip(regenerated.lines())
        .position(|(a, b)| a != b)
        .map(|i| i + 1)
        .unwrap_or_else(|| recorded.lines().count().min(regenerated.lines().count()) + 1);
    // Two header lines precede the data rows: line 3 is step 0.
    let step = line.saturating_sub(3);
    Err(CliError::Contrary(format!(
        "replay diverged at line {line} of {} (step {step})",
        recorded_path.display()
    )))
}
