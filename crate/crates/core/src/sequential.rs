//! The sequential-design loop: realize one draw of the random function,
//! select locations with a previsible or conditionally independent rule,
//! inject per-step observation noise and record a replayable trajectory.
//!
//! All steps share one domain and one scalar codomain; per-step domain
//! changes would generalize the machinery but nothing here needs them.

use std::sync::Arc;

use crate::acquisition::{
    expected_improvement, probability_of_improvement, thompson_select, AcquisitionResult,
    CandidateGrid,
};
use crate::conditional::{condition, History};
use crate::error::{Error, Result};
use crate::model::{Point, PriorSpec};
use crate::rng::{RandomStream, SeedSpec, StreamRole};

/// Whether a rule observes the history alone or also consumes fresh
/// randomness per step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RuleKind {
    /// The next location is a pure function of the history.
    Previsible,
    /// The next location is a function of (history, fresh uniform draw),
    /// independent of the model given the history.
    ConditionallyIndependent,
}

/// Signature of a user-registered previsible selection map.
pub type SelectFn = dyn Fn(&History, &CandidateGrid) -> Point + Send + Sync;

/// A user-registered previsible selection rule.
#[derive(Clone)]
pub struct CustomRule {
    pub name: String,
    pub select: Arc<SelectFn>,
}

impl std::fmt::Debug for CustomRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CustomRule").field("name", &self.name).finish()
    }
}

/// The named selection rules the driver can dispatch.
#[derive(Debug, Clone)]
pub enum Selector {
    ProbabilityOfImprovement { epsilon: f64 },
    ExpectedImprovement,
    ThompsonSampling,
    Custom(CustomRule),
}

/// Location-selection rule together with its measurability class.
#[derive(Debug, Clone)]
pub struct EvolutionRule {
    pub selector: Selector,
}

impl EvolutionRule {
    pub fn probability_of_improvement(epsilon: f64) -> Self {
        Self {
            selector: Selector::ProbabilityOfImprovement { epsilon },
        }
    }

    pub fn expected_improvement() -> Self {
        Self {
            selector: Selector::ExpectedImprovement,
        }
    }

    pub fn thompson() -> Self {
        Self {
            selector: Selector::ThompsonSampling,
        }
    }

    pub fn custom(
        name: impl Into<String>,
        select: impl Fn(&History, &CandidateGrid) -> Point + Send + Sync + 'static,
    ) -> Self {
        Self {
            selector: Selector::Custom(CustomRule {
                name: name.into(),
                select: Arc::new(select),
            }),
        }
    }

    pub fn kind(&self) -> RuleKind {
        match self.selector {
            Selector::ThompsonSampling => RuleKind::ConditionallyIndependent,
            _ => RuleKind::Previsible,
        }
    }

    /// True exactly for conditionally independent rules.
    pub fn uses_uniform(&self) -> bool {
        self.kind() == RuleKind::ConditionallyIndependent
    }
}

/// Outcome of one selection dispatch.
#[derive(Debug, Clone)]
pub struct SelectionOutcome {
    pub point: Point,
    /// Grid index for rules that select from the grid; `None` only for
    /// custom rules proposing off-grid points.
    pub grid_index: Option<usize>,
    /// Acquisition score at the chosen point; `None` for custom rules.
    pub score: Option<f64>,
    pub scores: Vec<f64>,
    pub jitter: f64,
}

/// Dispatch one selection step. Previsible rules must not touch `selection`;
/// the driver asserts this through the stream's draw counter.
pub fn select_next(
    rule: &EvolutionRule,
    prior: &PriorSpec,
    history: &History,
    grid: &CandidateGrid,
    selection: &mut RandomStream,
) -> Result<SelectionOutcome> {
    let from_acquisition = |r: AcquisitionResult| SelectionOutcome {
        point: r.chosen_point.clone(),
        grid_index: Some(r.chosen_index),
        score: Some(r.score),
        scores: r.scores,
        jitter: r.jitter,
    };
    match &rule.selector {
        Selector::ProbabilityOfImprovement { epsilon } => {
            probability_of_improvement(prior, history, grid, *epsilon).map(from_acquisition)
        }
        Selector::ExpectedImprovement => {
            expected_improvement(prior, history, grid).map(from_acquisition)
        }
        Selector::ThompsonSampling => {
            thompson_select(prior, history, grid, selection).map(from_acquisition)
        }
        Selector::Custom(rule) => {
            let point = (rule.select)(history, grid);
            let grid_index = grid.index_of(&point);
            Ok(SelectionOutcome {
                point,
                grid_index,
                score: None,
                scores: Vec::new(),
                jitter: 0.0,
            })
        }
    }
}

/// One realization of the random function, materialized on a finite point set
/// and extended lazily by conditional sampling when off-grid locations are
/// requested.
#[derive(Debug)]
pub struct SampledFunction {
    prior: PriorSpec,
    points: Vec<Point>,
    values: Vec<f64>,
    stream: RandomStream,
}

impl SampledFunction {
    /// Draw f jointly on `points` (duplicates collapsed) using `stream`.
    pub fn sample(prior: &PriorSpec, points: &[Point], mut stream: RandomStream) -> Result<Self> {
        let mut unique: Vec<Point> = Vec::with_capacity(points.len());
        for p in points {
            if !prior.domain.contains(p) {
                return Err(Error::invalid("points", format!("{p:?} outside domain")));
            }
            if !unique.contains(p) {
                unique.push(p.clone());
            }
        }
        let joint = crate::model::joint_prior(prior, &unique, false)?;
        let draw = joint.sample(&mut stream, 1);
        let values = (0..unique.len()).map(|i| draw[(0, i)]).collect();
        Ok(Self {
            prior: prior.clone(),
            points: unique,
            values,
            stream,
        })
    }

    /// The realized value at `point`, extending the realization by one
    /// conditional draw if the point is new.
    pub fn value_at(&mut self, point: &Point) -> Result<f64> {
        if let Some(i) = self.points.iter().position(|p| p == point) {
            return Ok(self.values[i]);
        }
        let history = History::from_observations(
            self.points
                .iter()
                .cloned()
                .zip(self.values.iter().copied())
                .map(|(p, v)| (p, v, 0.0)),
        )?;
        let post = condition(&self.prior, &history, std::slice::from_ref(point))?;
        let value = post.mean()[0] + post.marginal_sd(0) * self.stream.standard_normal();
        self.points.push(point.clone());
        self.values.push(value);
        Ok(value)
    }
}

/// One recorded step of a trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub index: usize,
    pub point: Point,
    pub observed: f64,
    pub noise_variance: f64,
    /// Acquisition score at the chosen point; `None` for the starting step
    /// and for custom rules.
    pub score: Option<f64>,
    /// Acquisition scores over the grid at selection time; empty for the
    /// deterministic starting step and for custom rules.
    pub scores: Vec<f64>,
    /// Gram jitter applied while conditioning for this selection.
    pub jitter: f64,
}

/// Full record of one sequential-design run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub initial_point: Point,
    pub steps: Vec<TrajectoryStep>,
    pub requested_steps: usize,
    pub seeds: SeedSpec,
    /// Set when the loop halted early on a singular-model error; the steps
    /// recorded up to that point stay valid.
    pub error: Option<String>,
}

impl Trajectory {
    /// Running maximum of observed values, step by step.
    pub fn incumbents(&self) -> Vec<f64> {
        let mut best = f64::NEG_INFINITY;
        self.steps
            .iter()
            .map(|s| {
                best = best.max(s.observed);
                best
            })
            .collect()
    }
}

/// [`run_loop_from`] with no pre-loaded observations.
pub fn run_loop(
    prior: &PriorSpec,
    rule: &EvolutionRule,
    grid: &CandidateGrid,
    x0: &Point,
    steps: usize,
    seeds: SeedSpec,
) -> Result<Trajectory> {
    run_loop_from(prior, rule, grid, History::new(), x0, steps, seeds)
}

/// Run the sequential-design loop for `steps` selections after the
/// deterministic starting location `x0`. `initial` carries prior information
/// entering the conditioning but not the trajectory record.
///
/// Stream discipline: the model realization draws from the Model substream,
/// observation noise at step n from the Noise substream with index n, and a
/// conditionally independent rule from the Selection substream with index n.
/// Previsible rules are handed a stream too, and the driver asserts they
/// never consume from it.
pub fn run_loop_from(
    prior: &PriorSpec,
    rule: &EvolutionRule,
    grid: &CandidateGrid,
    initial: History,
    x0: &Point,
    steps: usize,
    seeds: SeedSpec,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::invalid("steps", "must be at least 1"));
    }
    if !prior.domain.contains(x0) {
        return Err(Error::invalid("x0", "outside the domain box"));
    }
    if grid.is_empty() {
        return Err(Error::invalid("grid", "must be nonempty"));
    }

    let mut all_points = grid.points().to_vec();
    all_points.push(x0.clone());
    let mut f = SampledFunction::sample(prior, &all_points, seeds.substream(StreamRole::Model, 0))?;

    let mut trajectory = Trajectory {
        initial_point: x0.clone(),
        steps: Vec::with_capacity(steps + 1),
        requested_steps: steps,
        seeds,
        error: None,
    };
    let mut history = initial;

    let observe = |f: &mut SampledFunction, point: &Point, step: usize| -> Result<(f64, f64)> {
        let nv = prior.noise.variance_at(step);
        let mut y = f.value_at(point)?;
        if nv > 0.0 {
            y += nv.sqrt() * seeds.substream(StreamRole::Noise, step as u64).standard_normal();
        }
        Ok((y, nv))
    };

    let (y0, nv0) = observe(&mut f, x0, 0)?;
    history.push(x0.clone(), y0, nv0)?;
    trajectory.steps.push(TrajectoryStep {
        index: 0,
        point: x0.clone(),
        observed: y0,
        noise_variance: nv0,
        score: None,
        scores: Vec::new(),
        jitter: 0.0,
    });

    for n in 1..=steps {
        let mut selection = seeds.substream(StreamRole::Selection, n as u64);
        let outcome = match select_next(rule, prior, &history, grid, &mut selection) {
            Ok(o) => o,
            Err(e @ Error::SingularModel { .. }) => {
                trajectory.error = Some(e.to_string());
                return Ok(trajectory);
            }
            Err(e) => return Err(e),
        };
        if rule.kind() == RuleKind::Previsible {
            assert_eq!(
                selection.draws_consumed(),
                0,
                "previsible rule consumed selection randomness"
            );
        }
        let (y, nv) = observe(&mut f, &outcome.point, n)?;
        history.push(outcome.point.clone(), y, nv)?;
        trajectory.steps.push(TrajectoryStep {
            index: n,
            point: outcome.point,
            observed: y,
            noise_variance: nv,
            score: outcome.score,
            scores: outcome.scores,
            jitter: outcome.jitter,
        });
    }
    Ok(trajectory)
}

fn bits_eq(a: f64, b: f64) -> bool {
    a.to_bits() == b.to_bits()
}

fn points_eq(a: &Point, b: &Point) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| bits_eq(*x, *y))
}

/// Re-run the loop under the trajectory's recorded seeds and confirm
/// bit-exact agreement of every recorded field.
pub fn replay(
    trajectory: &Trajectory,
    prior: &PriorSpec,
    rule: &EvolutionRule,
    grid: &CandidateGrid,
) -> Result<()> {
    let fresh = run_loop(
        prior,
        rule,
        grid,
        &trajectory.initial_point,
        trajectory.requested_steps,
        trajectory.seeds,
    )?;

    let diverged = |step: usize, field: &str| -> Error {
        Error::ReplayDivergence {
            step,
            field: field.to_string(),
        }
    };

    if fresh.error != trajectory.error {
        return Err(diverged(fresh.steps.len().min(trajectory.steps.len()), "error"));
    }
    for (i, (a, b)) in trajectory.steps.iter().zip(&fresh.steps).enumerate() {
        if a.index != b.index {
            return Err(diverged(i, "index"));
        }
        if !points_eq(&a.point, &b.point) {
            return Err(diverged(i, "point"));
        }
        if !bits_eq(a.observed, b.observed) {
            return Err(diverged(i, "observed"));
        }
        if !bits_eq(a.noise_variance, b.noise_variance) {
            return Err(diverged(i, "noise_variance"));
        }
        let score_eq = match (a.score, b.score) {
            (None, None) => true,
            (Some(x), Some(y)) => bits_eq(x, y),
            _ => false,
        };
        if !score_eq {
            return Err(diverged(i, "score"));
        }
        if a.scores.len() != b.scores.len()
            || a.scores.iter().zip(&b.scores).any(|(x, y)| !bits_eq(*x, *y))
        {
            return Err(diverged(i, "scores"));
        }
        if !bits_eq(a.jitter, b.jitter) {
            return Err(diverged(i, "jitter"));
        }
    }
    if trajectory.steps.len() != fresh.steps.len() {
        return Err(diverged(
            trajectory.steps.len().min(fresh.steps.len()),
            "length",
        ));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CovFamily, CovarianceSpec, DomainBox, MeanSpec, NoiseSpec};

    fn setup() -> (PriorSpec, CandidateGrid) {
        let domain = DomainBox::unit_interval();
        let prior = PriorSpec::new(
            MeanSpec::zero(),
            CovarianceSpec::isotropic(CovFamily::SquaredExponential, 1.0, 0.3, 1).unwrap(),
            NoiseSpec::noiseless(),
            domain.clone(),
        )
        .unwrap();
        let grid = CandidateGrid::uniform_lattice(&domain, 101).unwrap();
        (prior, grid)
    }

    #[test]
    fn one_step_trajectory_has_two_entries() {
        let (prior, grid) = setup();
        let rule = EvolutionRule::probability_of_improvement(0.01);
        let t = run_loop(&prior, &rule, &grid, &vec![0.5], 1, SeedSpec::new(1, 0)).unwrap();
        assert_eq!(t.steps.len(), 2);
        assert!(t.error.is_none());
        assert_eq!(t.steps[0].point, vec![0.5]);
    }

    #[test]
    fn incumbent_is_nondecreasing_for_noiseless_ei() {
        let (prior, grid) = setup();
        let rule = EvolutionRule::expected_improvement();
        let t = run_loop(&prior, &rule, &grid, &vec![0.5], 15, SeedSpec::new(7, 0)).unwrap();
        assert_eq!(t.steps.len(), 16);
        let inc = t.incumbents();
        assert!(inc.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn identical_seeds_reproduce_bit_identical_trajectories() {
        let (prior, grid) = setup();
        for rule in [
            EvolutionRule::probability_of_improvement(0.05),
            EvolutionRule::expected_improvement(),
            EvolutionRule::thompson(),
        ] {
            let a = run_loop(&prior, &rule, &grid, &vec![0.5], 6, SeedSpec::new(3, 9)).unwrap();
            let b = run_loop(&prior, &rule, &grid, &vec![0.5], 6, SeedSpec::new(3, 9)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn replay_accepts_untouched_trajectory() {
        let (prior, grid) = setup();
        let rule = EvolutionRule::thompson();
        let t = run_loop(&prior, &rule, &grid, &vec![0.2], 5, SeedSpec::new(11, 2)).unwrap();
        replay(&t, &prior, &rule, &grid).unwrap();
    }

    #[test]
    fn replay_detects_tampered_observation() {
        let (prior, grid) = setup();
        let rule = EvolutionRule::expected_improvement();
        let mut t = run_loop(&prior, &rule, &grid, &vec![0.2], 5, SeedSpec::new(11, 2)).unwrap();
        t.steps[3].observed += 1e-9;
        match replay(&t, &prior, &rule, &grid) {
            Err(Error::ReplayDivergence { step: 3, field }) => assert_eq!(field, "observed"),
            other => panic!("expected divergence at step 3, got {other:?}"),
        }
    }

    #[test]
    fn replay_detects_tampered_jitter() {
        // A recorded jitter that disagrees with what the current jitter
        // policy reproduces (as after a policy change) must be caught.
        let (prior, grid) = setup();
        let rule = EvolutionRule::probability_of_improvement(0.05);
        let t = run_loop(&prior, &rule, &grid, &vec![0.2], 4, SeedSpec::new(5, 0)).unwrap();
        let mut tampered = t.clone();
        tampered.steps[2].jitter += 1e-12;
        match replay(&tampered, &prior, &rule, &grid) {
            Err(Error::ReplayDivergence { field, .. }) => assert_eq!(field, "jitter"),
            other => panic!("expected jitter divergence, got {other:?}"),
        }
    }

    #[test]
    fn inconsistent_preloaded_history_halts_with_partial_trajectory() {
        // Pre-loaded information that no function can interpolate: the first
        // selection step fails conditioning and the loop halts with the
        // error marker, keeping the recorded prefix.
        let (prior, grid) = setup();
        let rule = EvolutionRule::probability_of_improvement(0.05);
        let initial =
            History::from_observations([(vec![0.7], 1.0, 0.0), (vec![0.7], -1.0, 0.0)]).unwrap();
        let t = run_loop_from(&prior, &rule, &grid, initial, &vec![0.5], 3, SeedSpec::new(2, 0))
            .unwrap();
        assert!(t.error.as_deref().unwrap_or("").contains("singular"));
        assert_eq!(t.steps.len(), 1, "only the starting observation is kept");
    }

    #[test]
    fn two_dimensional_loop_runs_and_replays() {
        let domain = DomainBox::new(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        let prior = PriorSpec::new(
            MeanSpec::zero(),
            CovarianceSpec::isotropic(CovFamily::SquaredExponential, 1.0, 0.4, 2).unwrap(),
            NoiseSpec::noiseless(),
            domain.clone(),
        )
        .unwrap();
        let grid = CandidateGrid::uniform_lattice(&domain, 7).unwrap();
        let rule = EvolutionRule::expected_improvement();
        let t = run_loop(&prior, &rule, &grid, &vec![0.5, 0.5], 4, SeedSpec::new(6, 0)).unwrap();
        assert!(t.error.is_none());
        assert_eq!(t.steps.len(), 5);
        assert!(t.steps.iter().all(|s| s.point.len() == 2));
        replay(&t, &prior, &rule, &grid).unwrap();
    }

    #[test]
    fn off_grid_custom_rule_extends_realization() {
        let (prior, grid) = setup();
        let rule = EvolutionRule::custom("off-grid", |_, _| vec![0.123456]);
        let t = run_loop(&prior, &rule, &grid, &vec![0.5], 2, SeedSpec::new(4, 0)).unwrap();
        assert!(t.error.is_none());
        assert_eq!(t.steps[1].point, vec![0.123456]);
        // Revisiting the same off-grid point returns the same realized value.
        assert_eq!(t.steps[1].observed, t.steps[2].observed);
    }
}
