//! Monte Carlo verification of plug-in consistency.
//!
//! The harness realizes the random function jointly on the candidate set,
//! lets a rule pick evaluation locations from the data, bins replications by
//! the conditioning values and compares, bin by bin, the empirical
//! distribution of the final observation against the plug-in prediction of a
//! conditional evaluator. The canonical evaluator must pass; the atom-shifted
//! mutation below must fail on exactly the bins its rule steers into the
//! atom.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::acquisition::CandidateGrid;
use crate::conditional::{Canonical, ConditionalEvaluator, History, PosteriorGaussian};
use crate::error::{Error, Result};
use crate::model::{Point, PriorSpec};
use crate::rng::{SeedSpec, StreamRole};
use crate::sequential::{select_next, EvolutionRule, RuleKind};
use crate::stats::{ks_critical_value, ks_statistic, norm_cdf};

/// Fewer eligible bins than this makes a suite inconclusive rather than a
/// pass or fail.
pub const MIN_ELIGIBLE_BINS: usize = 3;

/// Value-binning used as the empirical surrogate for conditioning on the
/// observed history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinningScheme {
    pub bin_width: f64,
    pub min_bin_count: usize,
}

impl BinningScheme {
    pub fn new(bin_width: f64, min_bin_count: usize) -> Result<Self> {
        if !(bin_width > 0.0 && bin_width.is_finite()) {
            return Err(Error::invalid("binning.bin_width", "must be positive"));
        }
        if min_bin_count < 50 {
            return Err(Error::invalid(
                "binning.min_bin_count",
                "must be at least 50",
            ));
        }
        Ok(Self {
            bin_width,
            min_bin_count,
        })
    }

    fn index(&self, y: f64) -> i64 {
        (y / self.bin_width).floor() as i64
    }

    fn center(&self, index: i64) -> f64 {
        (index as f64 + 0.5) * self.bin_width
    }
}

/// Replication budget, test level and seed layout of one verification suite.
#[derive(Debug, Clone, Copy)]
pub struct PicSettings {
    pub replications: usize,
    pub binning: BinningScheme,
    pub alpha: f64,
    /// Replication r draws from `seeds.with_stream(seeds.stream_id + r)`.
    pub seeds: SeedSpec,
}

impl PicSettings {
    fn validate(&self) -> Result<()> {
        if self.replications < 10_000 {
            return Err(Error::invalid(
                "verification.replications",
                "needs at least 10000 replications",
            ));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::invalid("verification.alpha", "must be in (0,1)"));
        }
        Ok(())
    }
}

/// Per-bin comparison record.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinRecord {
    /// Bin index per conditioned observation value.
    pub bin_indices: Vec<i64>,
    /// Bin centers, the values the plug-in prediction is evaluated at.
    pub centers: Vec<f64>,
    /// Realized selection sequence (grid indices) shared by the bin.
    pub x_indices: Vec<usize>,
    pub count: usize,
    pub predicted_mean: f64,
    pub predicted_sd: f64,
    pub empirical_mean: f64,
    pub empirical_sd: f64,
    pub ks_statistic: f64,
    pub ks_critical: f64,
    pub pass: bool,
    /// empirical_mean − predicted_mean.
    pub mean_gap: f64,
    /// mean_gap in units of the predicted standard deviation.
    pub standardized_mean_gap: f64,
}

/// Effect sizes aggregated over eligible bins.
#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct EffectSizeSummary {
    pub max_abs_mean_gap: f64,
    pub max_abs_standardized_mean_gap: f64,
    pub mean_abs_standardized_mean_gap: f64,
}

/// Outcome of one binned Monte Carlo verification suite.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub replications: usize,
    pub alpha: f64,
    pub bins: Vec<BinRecord>,
    pub eligible_bins: usize,
    /// Bins observed but below the minimum count.
    pub starved_bins: usize,
    pub aggregate_pass_fraction: f64,
    pub effect_size: EffectSizeSummary,
    pub inconclusive: bool,
    /// Histogram of bin occupancies: (floor(log2(count)), number of bins).
    pub occupancy_histogram: Vec<(u32, usize)>,
}

impl VerificationReport {
    fn from_groups(
        groups: BTreeMap<(Vec<i64>, Vec<usize>), Vec<f64>>,
        predict: impl Fn(&[i64], &[usize]) -> Result<(f64, f64)>,
        settings: &PicSettings,
    ) -> Result<Self> {
        let mut bins = Vec::new();
        let mut starved = 0usize;
        let mut occupancy: BTreeMap<u32, usize> = BTreeMap::new();
        for ((bin_indices, x_indices), mut ys) in groups {
            *occupancy.entry((ys.len() as f64).log2().floor() as u32).or_insert(0) += 1;
            if ys.len() < settings.binning.min_bin_count {
                starved += 1;
                continue;
            }
            let (predicted_mean, predicted_var) = predict(&bin_indices, &x_indices)?;
            let predicted_sd = predicted_var.sqrt();
            ys.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
            let n = ys.len() as f64;
            let empirical_mean = ys.iter().sum::<f64>() / n;
            let empirical_sd =
                (ys.iter().map(|y| (y - empirical_mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            let critical = ks_critical_value(ys.len(), settings.alpha);
            let ks = if predicted_sd == 0.0 {
                // Point-mass prediction: compare exactly instead of KS.
                if ys.iter().all(|y| *y == predicted_mean) {
                    0.0
                } else {
                    1.0
                }
            } else {
                let residuals: Vec<f64> =
                    ys.iter().map(|y| (y - predicted_mean) / predicted_sd).collect();
                ks_statistic(&residuals, norm_cdf)
            };
            let mean_gap = empirical_mean - predicted_mean;
            bins.push(BinRecord {
                centers: bin_indices.iter().map(|&b| settings.binning.center(b)).collect(),
                bin_indices,
                x_indices,
                count: ys.len(),
                predicted_mean,
                predicted_sd,
                empirical_mean,
                empirical_sd,
                ks_statistic: ks,
                ks_critical: critical,
                pass: ks < critical,
                mean_gap,
                // Kept finite even for point-mass predictions so reports
                // stay serializable.
                standardized_mean_gap: mean_gap / predicted_sd.max(1e-300),
            });
        }
        let eligible = bins.len();
        let passes = bins.iter().filter(|b| b.pass).count();
        let effect_size = EffectSizeSummary {
            max_abs_mean_gap: bins.iter().map(|b| b.mean_gap.abs()).fold(0.0, f64::max),
            max_abs_standardized_mean_gap: bins
                .iter()
                .map(|b| b.standardized_mean_gap.abs())
                .fold(0.0, f64::max),
            mean_abs_standardized_mean_gap: if eligible == 0 {
                0.0
            } else {
                bins.iter().map(|b| b.standardized_mean_gap.abs()).sum::<f64>() / eligible as f64
            },
        };
        Ok(Self {
            replications: settings.replications,
            alpha: settings.alpha,
            eligible_bins: eligible,
            starved_bins: starved,
            aggregate_pass_fraction: if eligible == 0 {
                0.0
            } else {
                passes as f64 / eligible as f64
            },
            effect_size,
            inconclusive: eligible < MIN_ELIGIBLE_BINS,
            occupancy_histogram: occupancy.into_iter().collect(),
            bins,
        })
    }

    /// Pass fraction restricted to bins whose final selection is `index`.
    pub fn pass_fraction_on_selection(&self, index: usize) -> Option<f64> {
        let hits: Vec<&BinRecord> = self
            .bins
            .iter()
            .filter(|b| b.x_indices.last() == Some(&index))
            .collect();
        if hits.is_empty() {
            return None;
        }
        Some(hits.iter().filter(|b| b.pass).count() as f64 / hits.len() as f64)
    }
}

/// A previsible one-step rule: the second location as a pure function of the
/// first observed value.
#[derive(Clone)]
pub enum OneStepRule {
    /// Always the same location: the calibration case that reduces to a
    /// deterministic Gaussian conditional.
    Constant(Point),
    Threshold {
        threshold: f64,
        above: Point,
        below: Point,
    },
    Custom(std::sync::Arc<dyn Fn(f64) -> Point + Send + Sync>),
}

impl std::fmt::Debug for OneStepRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OneStepRule::Constant(p) => write!(f, "Constant({p:?})"),
            OneStepRule::Threshold {
                threshold,
                above,
                below,
            } => write!(f, "Threshold({threshold}, {above:?}, {below:?})"),
            OneStepRule::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl OneStepRule {
    fn evaluate(&self, y0: f64) -> Point {
        match self {
            OneStepRule::Constant(p) => p.clone(),
            OneStepRule::Threshold {
                threshold,
                above,
                below,
            } => {
                if y0 > *threshold {
                    above.clone()
                } else {
                    below.clone()
                }
            }
            OneStepRule::Custom(f) => f(y0),
        }
    }
}

/// (value bins, realized selection indices, final observation) of one
/// replication.
type ReplicationRow = (Vec<i64>, Vec<usize>, f64);

fn grid_index_of(grid: &CandidateGrid, point: &Point) -> Result<usize> {
    grid.index_of(point).ok_or_else(|| Error::OffGridSelection {
        point: point.clone(),
    })
}

/// Candidate set plus starting point, realized jointly per replication.
struct RealizationLayout {
    points: Vec<Point>,
    x0_index: usize,
    factor: nalgebra::DMatrix<f64>,
    mean: nalgebra::DVector<f64>,
}

impl RealizationLayout {
    fn new(prior: &PriorSpec, grid: &CandidateGrid, x0: &Point) -> Result<Self> {
        if !prior.domain.contains(x0) {
            return Err(Error::invalid("x0", "outside the domain box"));
        }
        let mut points = grid.points().to_vec();
        let x0_index = match grid.index_of(x0) {
            Some(i) => i,
            None => {
                points.push(x0.clone());
                points.len() - 1
            }
        };
        let joint = crate::model::joint_prior(prior, &points, false)?;
        Ok(Self {
            x0_index,
            factor: joint.cholesky_factor().clone(),
            mean: joint.mean().clone(),
            points,
        })
    }

    /// One joint draw of f over the layout points.
    fn draw(&self, spec: SeedSpec) -> Vec<f64> {
        let mut stream = spec.substream(StreamRole::Model, 0);
        let z = nalgebra::DVector::from_fn(self.points.len(), |_, _| stream.standard_normal());
        (&self.mean + &self.factor * z).as_slice().to_vec()
    }
}

fn noise_draw(spec: SeedSpec, step: u64, variance: f64) -> f64 {
    if variance > 0.0 {
        variance.sqrt() * spec.substream(StreamRole::Noise, step).standard_normal()
    } else {
        0.0
    }
}

/// One-step plug-in-consistency check.
///
/// Per replication: realize f jointly on grid ∪ {x0}, observe y0 at x0, let
/// the previsible rule pick X1 = rule(y0), observe y1 at X1. Replications are
/// grouped by (bin of y0, realized X1); each eligible group is KS-tested at
/// level alpha against the evaluator's prediction with y0 frozen at the bin
/// center.
pub fn verify_pic_onestep(
    prior: &PriorSpec,
    x0: &Point,
    rule: &OneStepRule,
    grid: &CandidateGrid,
    settings: &PicSettings,
    evaluator: &dyn ConditionalEvaluator,
) -> Result<VerificationReport> {
    settings.validate()?;
    let layout = RealizationLayout::new(prior, grid, x0)?;
    let nv0 = prior.noise.variance_at(0);
    let nv1 = prior.noise.variance_at(1);

    let rows: Vec<Result<(i64, usize, f64)>> = (0..settings.replications)
        .into_par_iter()
        .map(|r| {
            let spec = settings.seeds.with_stream(settings.seeds.stream_id + r as u64);
            let f = layout.draw(spec);
            let y0 = f[layout.x0_index] + noise_draw(spec, 0, nv0);
            let x1 = grid_index_of(grid, &rule.evaluate(y0))?;
            let y1 = f[x1] + noise_draw(spec, 1, nv1);
            Ok((settings.binning.index(y0), x1, y1))
        })
        .collect();

    let mut groups: BTreeMap<(Vec<i64>, Vec<usize>), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let (bin, x1, y1) = row?;
        groups.entry((vec![bin], vec![x1])).or_default().push(y1);
    }

    VerificationReport::from_groups(
        groups,
        |bin_indices, x_indices| {
            let history = History::from_observations([(
                layout.points[layout.x0_index].clone(),
                settings.binning.center(bin_indices[0]),
                nv0,
            )])?;
            let (mu, var) = evaluator.marginal(prior, &history, &grid.points()[x_indices[0]])?;
            Ok((mu, var + nv1))
        },
        settings,
    )
}

/// Multi-step plug-in-consistency check for previsible or conditionally
/// independent evolution rules.
///
/// Per replication the rule runs for `steps` selections after x0; bins are
/// the product of per-value bins over the earlier observations together with
/// the full realized selection sequence, and the KS comparison happens at the
/// final step.
pub fn verify_pic_multistep(
    prior: &PriorSpec,
    rule: &EvolutionRule,
    grid: &CandidateGrid,
    x0: &Point,
    steps: usize,
    settings: &PicSettings,
    evaluator: &dyn ConditionalEvaluator,
) -> Result<VerificationReport> {
    settings.validate()?;
    if !(2..=3).contains(&steps) {
        return Err(Error::invalid("rule.steps", "multi-step suites use 2 or 3 steps"));
    }
    let layout = RealizationLayout::new(prior, grid, x0)?;
    let noise: Vec<f64> = (0..=steps).map(|n| prior.noise.variance_at(n)).collect();
    let x0_point = layout.points[layout.x0_index].clone();
    let final_noise = noise[steps];

    let rows: Vec<Result<ReplicationRow>> = (0..settings.replications)
        .into_par_iter()
        .map(|r| {
            let spec = settings.seeds.with_stream(settings.seeds.stream_id + r as u64);
            let f = layout.draw(spec);
            let mut history = History::new();
            let y0 = f[layout.x0_index] + noise_draw(spec, 0, noise[0]);
            history.push(x0_point.clone(), y0, noise[0])?;
            let mut bins = vec![settings.binning.index(y0)];
            let mut xs = Vec::with_capacity(steps);
            let mut final_y = f64::NAN;
            for (n, nv) in noise.iter().enumerate().take(steps + 1).skip(1) {
                let mut selection = spec.substream(StreamRole::Selection, n as u64);
                let outcome = select_next(rule, prior, &history, grid, &mut selection)?;
                if rule.kind() == RuleKind::Previsible {
                    assert_eq!(selection.draws_consumed(), 0);
                }
                let idx = outcome
                    .grid_index
                    .ok_or_else(|| Error::OffGridSelection {
                        point: outcome.point.clone(),
                    })?;
                let y = f[idx] + noise_draw(spec, n as u64, *nv);
                xs.push(idx);
                if n < steps {
                    bins.push(settings.binning.index(y));
                    history.push(outcome.point, y, *nv)?;
                } else {
                    final_y = y;
                }
            }
            Ok((bins, xs, final_y))
        })
        .collect();

    let mut groups: BTreeMap<(Vec<i64>, Vec<usize>), Vec<f64>> = BTreeMap::new();
    for row in rows {
        let (bins, xs, y) = row?;
        groups.entry((bins, xs)).or_default().push(y);
    }

    VerificationReport::from_groups(
        groups,
        |bin_indices, x_indices| {
            let mut history = History::new();
            history.push(x0_point.clone(), settings.binning.center(bin_indices[0]), noise[0])?;
            for (k, &xi) in x_indices[..x_indices.len() - 1].iter().enumerate() {
                history.push(
                    grid.points()[xi].clone(),
                    settings.binning.center(bin_indices[k + 1]),
                    noise[k + 1],
                )?;
            }
            let query = &grid.points()[*x_indices.last().unwrap()];
            let (mu, var) = evaluator.marginal(prior, &history, query)?;
            Ok((mu, var + final_noise))
        },
        settings,
    )
}

/// The canonical conditional with its predicted mean shifted by `offset`
/// whenever the query point equals `atom_point` exactly.
///
/// For any fixed deterministic query this modification is invisible almost
/// surely, so each fixed-location conditional stays valid; a rule that
/// steers onto the atom exposes it.
#[derive(Debug, Clone)]
pub struct AtomShifted<E> {
    base: E,
    atom_point: Point,
    offset: f64,
}

impl<E: ConditionalEvaluator> ConditionalEvaluator for AtomShifted<E> {
    fn posterior(
        &self,
        prior: &PriorSpec,
        history: &History,
        query: &[Point],
    ) -> Result<PosteriorGaussian> {
        let mut post = self.base.posterior(prior, history, query)?;
        for (i, point) in query.iter().enumerate() {
            if *point == self.atom_point {
                post.shift_mean(i, self.offset);
            }
        }
        Ok(post)
    }

    fn marginal(&self, prior: &PriorSpec, history: &History, point: &Point) -> Result<(f64, f64)> {
        let (mut mu, var) = self.base.marginal(prior, history, point)?;
        if *point == self.atom_point {
            mu += self.offset;
        }
        Ok((mu, var))
    }
}

/// Wrap a conditional evaluator with a mean shift on one exact query point.
pub fn mutate_kernel<E: ConditionalEvaluator>(
    base: E,
    atom_point: Point,
    offset: f64,
) -> Result<AtomShifted<E>> {
    if offset == 0.0 || !offset.is_finite() {
        return Err(Error::invalid("atom_offset", "must be nonzero"));
    }
    Ok(AtomShifted {
        base,
        atom_point,
        offset,
    })
}

/// Convenience for the common case of mutating the canonical conditional.
pub fn mutate_canonical(atom_point: Point, offset: f64) -> Result<AtomShifted<Canonical>> {
    mutate_kernel(Canonical, atom_point, offset)
}

/// Report of the constant-function counterexample: a formula for
/// E\[f(x) | U\] that is valid for every fixed x but wrong at the random
/// location X = U.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CounterexampleReport {
    pub replications: usize,
    pub mean_of_y: f64,
    /// Monte Carlo estimate of E\[f(U) | U\] = E\[Y\].
    pub conditional_mean_estimate: f64,
    /// Monte Carlo standard error of the estimate.
    pub standard_error: f64,
    /// The broken formula g(x) = E\[Y\]·1_{U≠x} evaluated at x = U; identically
    /// zero by construction.
    pub broken_formula_value: f64,
    pub gap: f64,
}

/// Simulate Y ~ N(mean_of_y, 1) and U ~ U(0,1) independent with f(x) = Y.
/// The formula g(x) = E\[Y\]·1_{U≠x} is a valid version of E\[f(x) | U\] for
/// every fixed x, yet g(U) = 0 while E\[f(U) | U\] = E\[Y\].
pub fn counterexample_demo(
    mean_of_y: f64,
    replications: usize,
    seeds: SeedSpec,
) -> Result<CounterexampleReport> {
    if replications < 100_000 {
        return Err(Error::invalid(
            "verification.replications",
            "the counterexample demo needs at least 1e5 replications",
        ));
    }
    let broken = |x: f64, u: f64| if x != u { mean_of_y } else { 0.0 };
    let per_rep: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let spec = seeds.with_stream(seeds.stream_id + r as u64);
            let y = mean_of_y + spec.substream(StreamRole::Model, 0).standard_normal();
            let u = spec.substream(StreamRole::Selection, 0).uniform();
            // f(U) = Y regardless of U; the broken formula is evaluated at
            // the random location x = U.
            (y, broken(u, u))
        })
        .collect();
    let n = replications as f64;
    let estimate = per_rep.iter().map(|(y, _)| y).sum::<f64>() / n;
    let broken_value = per_rep.iter().map(|(_, g)| g).sum::<f64>() / n;
    let var = per_rep.iter().map(|(y, _)| (y - estimate).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(CounterexampleReport {
        replications,
        mean_of_y,
        conditional_mean_estimate: estimate,
        standard_error: (var / n).sqrt(),
        broken_formula_value: broken_value,
        gap: (estimate - broken_value).abs(),
    })
}

/// Report of the maximization demo: a non-separable version of E\[f(x) | U\]
/// attains an inflated maximum at x = U while the continuous version does
/// not.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeparabilityReport {
    pub replications: usize,
    pub gamma: f64,
    /// max_x of the non-separable version g(x) = E\[Y\] + 1_{x=U}·gamma,
    /// averaged over replications (attained at x = U every time).
    pub nonseparable_max: f64,
    /// max_x of the continuous version, which is the constant E\[Y\].
    pub canonical_max: f64,
    /// Monte Carlo estimate of the true E\[f(U) | U\] = E\[Y\].
    pub conditional_mean_estimate: f64,
    pub standard_error: f64,
    pub max_gap: f64,
}

/// Y ~ N(0,1), U ~ U(0,1), f(x) = Y. The version g(x) = E\[Y\] + 1_{x=U}·gamma
/// of E\[f(x) | U\] maximizes to E\[Y\] + gamma at x = U, but the true
/// E\[f(U) | U\] stays at E\[Y\]; the continuous version's maximum agrees with
/// the truth.
pub fn maximizer_separability_demo(
    gamma: f64,
    replications: usize,
    seeds: SeedSpec,
) -> Result<SeparabilityReport> {
    if replications == 0 {
        return Err(Error::invalid("verification.replications", "must be positive"));
    }
    let per_rep: Vec<(f64, f64)> = (0..replications)
        .into_par_iter()
        .map(|r| {
            let spec = seeds.with_stream(seeds.stream_id + r as u64);
            let y = spec.substream(StreamRole::Model, 0).standard_normal();
            let u = spec.substream(StreamRole::Selection, 0).uniform();
            // Evaluate g on a probe set containing U: the indicator fires
            // only there, so the maximum is E[Y] + gamma at x = U.
            let probes = [0.25, 0.5, 0.75, u];
            let g_max = probes
                .iter()
                .map(|&x| if x == u { gamma } else { 0.0 })
                .fold(f64::NEG_INFINITY, f64::max);
            (y, g_max)
        })
        .collect();
    let n = replications as f64;
    let estimate = per_rep.iter().map(|(y, _)| y).sum::<f64>() / n;
    let indicator_part = per_rep.iter().map(|(_, g)| g).sum::<f64>() / n;
    let var = per_rep.iter().map(|(y, _)| (y - estimate).powi(2)).sum::<f64>() / (n - 1.0);
    let nonseparable_max = estimate + indicator_part;
    let canonical_max = estimate;
    Ok(SeparabilityReport {
        replications,
        gamma,
        nonseparable_max,
        canonical_max,
        conditional_mean_estimate: estimate,
        standard_error: (var / n).sqrt(),
        max_gap: (nonseparable_max - canonical_max).abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditional::{condition, weak_continuity_scan, line_path};
    use crate::model::{CovFamily, CovarianceSpec, DomainBox, MeanSpec, NoiseSpec};

    fn se_prior(lengthscale: f64) -> PriorSpec {
        let domain = DomainBox::new(vec![-3.0], vec![3.0]).unwrap();
        PriorSpec::new(
            MeanSpec::zero(),
            CovarianceSpec::isotropic(CovFamily::SquaredExponential, 1.0, lengthscale, 1).unwrap(),
            NoiseSpec::noiseless(),
            domain,
        )
        .unwrap()
    }

    fn default_settings(replications: usize, bin_width: f64) -> PicSettings {
        PicSettings {
            replications,
            binning: BinningScheme::new(bin_width, 100).unwrap(),
            alpha: 0.01,
            seeds: SeedSpec::new(20240301, 0),
        }
    }

    #[test]
    fn binning_scheme_validates() {
        assert!(BinningScheme::new(0.0, 100).is_err());
        assert!(BinningScheme::new(0.1, 10).is_err());
        let b = BinningScheme::new(0.5, 50).unwrap();
        assert_eq!(b.index(-0.1), -1);
        assert_eq!(b.index(0.1), 0);
        assert_eq!(b.center(0), 0.25);
    }

    #[test]
    fn mutated_kernel_shifts_only_the_atom() {
        let prior = se_prior(1.0);
        let history = History::from_observations([(vec![0.0], 1.0, 0.0)]).unwrap();
        let atom = vec![0.9];
        let mutated = mutate_canonical(atom.clone(), 0.5).unwrap();

        let other = vec![0.4];
        let canonical_other = Canonical.marginal(&prior, &history, &other).unwrap();
        let mutated_other = mutated.marginal(&prior, &history, &other).unwrap();
        assert_eq!(canonical_other, mutated_other);

        let canonical_atom = Canonical.marginal(&prior, &history, &atom).unwrap();
        let mutated_atom = mutated.marginal(&prior, &history, &atom).unwrap();
        assert_eq!(mutated_atom.0, canonical_atom.0 + 0.5);
        assert_eq!(mutated_atom.1, canonical_atom.1);

        // Joint queries shift only the atom coordinate.
        let post_c = condition(&prior, &history, &[other.clone(), atom.clone()]).unwrap();
        let post_m = mutated
            .posterior(&prior, &history, &[other.clone(), atom.clone()])
            .unwrap();
        assert_eq!(post_m.mean()[0], post_c.mean()[0]);
        assert_eq!(post_m.mean()[1], post_c.mean()[1] + 0.5);
        assert_eq!(post_m.covariance(), post_c.covariance());
    }

    #[test]
    fn mutate_kernel_rejects_zero_offset() {
        assert!(mutate_canonical(vec![0.0], 0.0).is_err());
    }

    #[test]
    fn scan_spikes_at_the_atom() {
        let prior = se_prior(1.0);
        let history = History::from_observations([(vec![2.5], 1.0, 0.0)]).unwrap();
        // The path grazes the atom exactly thanks to the lattice alignment.
        let path = line_path(0.0, 1.0, 0.125);
        let atom = vec![0.5];
        assert!(path.contains(&atom));
        let mutated = mutate_canonical(atom, 0.5).unwrap();
        let canonical_max = weak_continuity_scan(&Canonical, &prior, &history, &path).unwrap();
        let mutated_max = weak_continuity_scan(&mutated, &prior, &history, &path).unwrap();
        assert!(canonical_max < 0.1, "canonical scan {canonical_max}");
        assert!(mutated_max >= 0.1, "mutated scan {mutated_max}");
    }

    #[test]
    fn calibration_constant_rule_passes() {
        // Deterministic second location: plain Gaussian conditioning, so the
        // harness itself is on trial here.
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let grid =
            CandidateGrid::explicit(vec![vec![-1.0], vec![0.5], vec![1.5]], &domain).unwrap();
        let settings = default_settings(40_000, 0.1);
        let report = verify_pic_onestep(
            &prior,
            &vec![0.0],
            &OneStepRule::Constant(vec![0.5]),
            &grid,
            &settings,
            &Canonical,
        )
        .unwrap();
        assert!(!report.inconclusive);
        assert!(report.eligible_bins >= 10, "bins {}", report.eligible_bins);
        assert!(
            report.aggregate_pass_fraction >= 0.95,
            "pass fraction {}",
            report.aggregate_pass_fraction
        );
        assert!(report.effect_size.max_abs_standardized_mean_gap < 0.2);
    }

    #[test]
    fn threshold_rule_passes_and_atom_mutation_fails() {
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let atom = vec![0.8];
        let other = vec![-0.8];
        let grid = CandidateGrid::explicit(vec![other.clone(), atom.clone()], &domain).unwrap();
        let rule = OneStepRule::Threshold {
            threshold: 0.0,
            above: atom.clone(),
            below: other.clone(),
        };
        let settings = default_settings(40_000, 0.1);

        let canonical = verify_pic_onestep(&prior, &vec![0.0], &rule, &grid, &settings, &Canonical)
            .unwrap();
        assert!(canonical.aggregate_pass_fraction >= 0.95);

        // Same seeds, mutated evaluator: bins that realized the atom must
        // fail, the others stay untouched.
        let mutated = mutate_canonical(atom.clone(), 0.5).unwrap();
        let report = verify_pic_onestep(&prior, &vec![0.0], &rule, &grid, &settings, &mutated)
            .unwrap();
        let atom_idx = grid.index_of(&atom).unwrap();
        let other_idx = grid.index_of(&other).unwrap();
        assert!(report.pass_fraction_on_selection(atom_idx).unwrap() <= 0.05);
        assert!(report.pass_fraction_on_selection(other_idx).unwrap() >= 0.95);
        // The systematic empirical-vs-predicted mean gap on atom-hitting
        // bins reproduces the injected offset.
        let (weighted_gap, total) = report
            .bins
            .iter()
            .filter(|b| b.x_indices == [atom_idx])
            .fold((0.0, 0usize), |(g, n), b| {
                (g + b.mean_gap * b.count as f64, n + b.count)
            });
        let atom_gap = weighted_gap / total as f64;
        assert!((atom_gap - (-0.5)).abs() < 0.05, "atom-bin mean gap {atom_gap}");
    }

    #[test]
    fn starved_bins_are_inconclusive() {
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let grid = CandidateGrid::explicit(vec![vec![0.5]], &domain).unwrap();
        let settings = PicSettings {
            replications: 10_000,
            // Bins so narrow that none reach the minimum count.
            binning: BinningScheme::new(1e-4, 5000).unwrap(),
            alpha: 0.01,
            seeds: SeedSpec::new(1, 0),
        };
        let report = verify_pic_onestep(
            &prior,
            &vec![0.0],
            &OneStepRule::Constant(vec![0.5]),
            &grid,
            &settings,
            &Canonical,
        )
        .unwrap();
        assert!(report.inconclusive);
        assert_eq!(report.eligible_bins, 0);
        assert!(report.starved_bins > 0);
        assert!(!report.occupancy_histogram.is_empty());
    }

    #[test]
    fn off_grid_rule_is_rejected() {
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let grid = CandidateGrid::explicit(vec![vec![0.5]], &domain).unwrap();
        let settings = default_settings(10_000, 0.2);
        let err = verify_pic_onestep(
            &prior,
            &vec![0.0],
            &OneStepRule::Constant(vec![0.123]),
            &grid,
            &settings,
            &Canonical,
        );
        assert!(matches!(err, Err(Error::OffGridSelection { .. })));
    }

    #[test]
    fn multistep_constant_locations_calibrate() {
        // A custom rule with constant locations reduces the multi-step suite
        // to plain conditioning.
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let grid =
            CandidateGrid::explicit(vec![vec![-1.0], vec![0.7], vec![1.8]], &domain).unwrap();
        let rule = EvolutionRule::custom("fixed-sequence", |history, grid| {
            grid.points()[history.len() % grid.len()].clone()
        });
        let settings = default_settings(200_000, 0.25);
        let report = verify_pic_multistep(
            &prior,
            &rule,
            &grid,
            &vec![0.0],
            2,
            &settings,
            &Canonical,
        )
        .unwrap();
        assert!(!report.inconclusive);
        assert!(
            report.aggregate_pass_fraction >= 0.9,
            "pass fraction {}",
            report.aggregate_pass_fraction
        );
    }

    #[test]
    fn report_is_a_deterministic_function_of_seeds() {
        let prior = se_prior(1.0);
        let domain = prior.domain.clone();
        let grid = CandidateGrid::explicit(vec![vec![-0.8], vec![0.8]], &domain).unwrap();
        let rule = OneStepRule::Threshold {
            threshold: 0.0,
            above: vec![0.8],
            below: vec![-0.8],
        };
        let settings = default_settings(20_000, 0.2);
        let a = verify_pic_onestep(&prior, &vec![0.0], &rule, &grid, &settings, &Canonical)
            .unwrap();
        let b = verify_pic_onestep(&prior, &vec![0.0], &rule, &grid, &settings, &Canonical)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counterexample_gap_matches_mean() {
        let report = counterexample_demo(1.0, 200_000, SeedSpec::new(10, 0)).unwrap();
        assert_eq!(report.broken_formula_value, 0.0);
        assert!((report.conditional_mean_estimate - 1.0).abs() < 0.01);
        assert!((report.gap - 1.0).abs() < 0.01);

        let negative = counterexample_demo(-2.0, 200_000, SeedSpec::new(10, 0)).unwrap();
        assert!((negative.gap - 2.0).abs() < 0.01);

        let degenerate = counterexample_demo(0.0, 200_000, SeedSpec::new(10, 0)).unwrap();
        assert!(degenerate.gap < 0.01);
    }

    #[test]
    fn separability_demo_reports_inflated_max() {
        let report = maximizer_separability_demo(10.0, 200_000, SeedSpec::new(4, 0)).unwrap();
        assert!((report.nonseparable_max - 10.0).abs() < 0.02);
        assert!(report.canonical_max.abs() < 0.01);
        assert!(report.conditional_mean_estimate.abs() < 0.01);

        let zero = maximizer_separability_demo(0.0, 200_000, SeedSpec::new(4, 0)).unwrap();
        assert!((zero.nonseparable_max - zero.canonical_max).abs() < 1e-12);
    }
}
