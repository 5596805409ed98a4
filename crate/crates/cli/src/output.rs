//! Output artifacts with frozen layouts. Every file starts with the config
//! hash and master seed; all numbers use round-trip decimal formatting so
//! regenerated files are byte-identical.

use seqgp::model::Point;
use seqgp::sequential::Trajectory;
use seqgp::verify::{CounterexampleReport, EffectSizeSummary, SeparabilityReport, VerificationReport};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Shortest decimal representation that parses back to the same f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn fmt_point(p: &Point) -> String {
    p.iter().map(|c| fmt_f64(*c)).collect::<Vec<_>>().join(";")
}

pub fn header_line(config_hash: &str, seed: u64) -> String {
    format!("# config_hash={config_hash} seed={seed}\n")
}

/// Trajectory CSV. Columns (frozen order):
/// step, x, y, noise_var, score, jitter
/// with multi-dimensional x joined by ';' and an empty score on the starting
/// step, which has no acquisition.
pub fn trajectory_csv(trajectory: &Trajectory, config_hash: &str, seed: u64) -> String {
    let mut out = header_line(config_hash, seed);
    out.push_str("step,x,y,noise_var,score,jitter\n");
    for step in &trajectory.steps {
        let score = step.score.map(fmt_f64).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            step.index,
            fmt_point(&step.point),
            fmt_f64(step.observed),
            fmt_f64(step.noise_variance),
            score,
            fmt_f64(step.jitter),
        ));
    }
    out
}

/// Final-posterior CSV over the candidate grid. Columns (frozen order):
/// x, mean, variance
/// with multi-dimensional x joined by ';'.
pub fn posterior_csv(
    posterior: &seqgp::conditional::PosteriorGaussian,
    config_hash: &str,
    seed: u64,
) -> String {
    let mut out = header_line(config_hash, seed);
    out.push_str("x,mean,variance\n");
    for i in 0..posterior.len() {
        out.push_str(&format!(
            "{},{},{}\n",
            fmt_point(&posterior.query_points()[i]),
            fmt_f64(posterior.mean()[i]),
            fmt_f64(posterior.marginal_variance(i)),
        ));
    }
    out
}

/// Per-bin CSV for verification suites. Columns (frozen order):
/// bin, center, x, count, pred_mean, pred_sd, emp_mean, emp_sd, ks_stat,
/// ks_critical, pass, mean_gap, std_mean_gap
/// with multi-step bins and selection sequences joined by ';'.
pub fn bins_csv(report: &VerificationReport, config_hash: &str, seed: u64) -> String {
    let mut out = header_line(config_hash, seed);
    out.push_str(
        "bin,center,x,count,pred_mean,pred_sd,emp_mean,emp_sd,ks_stat,ks_critical,pass,mean_gap,std_mean_gap\n",
    );
    for bin in &report.bins {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            bin.bin_indices
                .iter()
                .map(|b| b.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            bin.centers.iter().map(|c| fmt_f64(*c)).collect::<Vec<_>>().join(";"),
            bin.x_indices
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(";"),
            bin.count,
            fmt_f64(bin.predicted_mean),
            fmt_f64(bin.predicted_sd),
            fmt_f64(bin.empirical_mean),
            fmt_f64(bin.empirical_sd),
            fmt_f64(bin.ks_statistic),
            fmt_f64(bin.ks_critical),
            bin.pass,
            fmt_f64(bin.mean_gap),
            fmt_f64(bin.standardized_mean_gap),
        ));
    }
    out
}

/// Replay manifest: everything needed to regenerate the trajectory file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub trajectory_file: String,
    pub config: BTreeMap<String, String>,
}

/// Summary of one verification suite; the JSON artifact begins with the
/// config hash and seed fields.
#[derive(Debug, Clone, Serialize)]
pub struct VerifySummary {
    pub config_hash: String,
    pub seed: u64,
    pub suite: String,
    pub outcome: String,
    pub expect: String,
    pub replications: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eligible_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub starved_bins: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub aggregate_pass_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_pass_fraction: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub effect_size: Option<EffectSizeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub occupancy_histogram: Option<Vec<(u32, usize)>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counterexample: Option<CounterexampleReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub separability: Option<SeparabilityReport>,
}

/// Run summary written next to the trajectory.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub config_hash: String,
    pub seed: u64,
    pub steps: usize,
    pub final_incumbent: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn to_pretty_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("serializable");
    text.push('\n');
    text
}
