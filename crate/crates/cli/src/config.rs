//! Flat-key experiment configuration: `section.key = value` lines, one per
//! line, `#` comments. Chosen over nested formats so golden configs diff
//! line by line.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use seqgp::acquisition::CandidateGrid;
use seqgp::model::{
    CovFamily, CovarianceSpec, DomainBox, MeanSpec, NoiseSpec, Point, PriorSpec,
};
use seqgp::sequential::EvolutionRule;
use seqgp::verify::{BinningScheme, OneStepRule};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Pass,
    Fail,
    None,
}

/// Which verification suite `verify` dispatches to.
#[derive(Debug, Clone)]
pub enum VerifyRule {
    Constant { x1: Point },
    Threshold { threshold: f64, above: Point, below: Point },
    MultiStep { rule: EvolutionRule, steps: usize },
    Counterexample { mean_of_y: f64 },
    Separability { gamma: f64 },
}

/// Optional kernel mutation applied to the evaluator under test.
#[derive(Debug, Clone)]
pub enum Mutation {
    None,
    Atom { point: Point, offset: f64 },
}

#[derive(Debug, Clone)]
pub struct RunSection {
    pub x0: Point,
    pub steps: usize,
    pub rule: EvolutionRule,
}

#[derive(Debug, Clone)]
pub struct VerifySection {
    pub x0: Point,
    pub rule: VerifyRule,
    pub mutation: Mutation,
    pub replications: usize,
    pub binning: BinningScheme,
    pub alpha: f64,
    pub min_pass_fraction: f64,
}

/// Fully validated in-memory configuration.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub threads: Option<usize>,
    pub output: PathBuf,
    pub expect: Expectation,
    pub prior: PriorSpec,
    pub grid: CandidateGrid,
    pub run: Option<RunSection>,
    pub verify: Option<VerifySection>,
    /// Hash over all experiment-defining keys (everything except `threads`
    /// and `output`, which must not change results).
    pub hash: String,
    pub raw: BTreeMap<String, String>,
}

/// Keys that affect execution resources or file placement only; excluded
/// from the config hash so identical experiments hash identically.
const NON_SEMANTIC_KEYS: [&str; 2] = ["threads", "output"];

const KNOWN_KEYS: [&str; 29] = [
    "seed",
    "threads",
    "output",
    "expect",
    "domain.lower",
    "domain.upper",
    "mean.family",
    "mean.parameters",
    "covariance.family",
    "covariance.variance",
    "covariance.lengthscale",
    "noise.variances",
    "grid.kind",
    "grid.resolution",
    "grid.points",
    "x0",
    "steps",
    "acquisition.kind",
    "acquisition.epsilon",
    "rule.kind",
    "rule.x1",
    "rule.threshold",
    "rule.above",
    "rule.below",
    "rule.steps",
    "rule.mean_of_y",
    "rule.gamma",
    "verification.replications",
    "verification.bin_width",
];

const KNOWN_KEYS_EXTRA: [&str; 6] = [
    "verification.min_bin_count",
    "verification.alpha",
    "verification.mutate",
    "verification.atom_point",
    "verification.atom_offset",
    "verification.min_pass_fraction",
];

fn invalid(key: &str, reason: impl Into<String>) -> CliError {
    CliError::Validation(format!("config key `{key}`: {}", reason.into()))
}

pub fn parse_flat_keys(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut map = BTreeMap::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(i) => &raw_line[..i],
            None => raw_line,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            CliError::Validation(format!("line {}: expected `key = value`", lineno + 1))
        })?;
        let key = key.trim().to_string();
        if !KNOWN_KEYS.contains(&key.as_str()) && !KNOWN_KEYS_EXTRA.contains(&key.as_str()) {
            return Err(CliError::Validation(format!(
                "line {}: unknown config key `{key}`",
                lineno + 1
            )));
        }
        if map.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(CliError::Validation(format!(
                "line {}: duplicate config key `{key}`",
                lineno + 1
            )));
        }
    }
    Ok(map)
}

fn get<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Option<&'a str> {
    map.get(key).map(|s| s.as_str()).filter(|s| !s.is_empty())
}

fn require<'a>(map: &'a BTreeMap<String, String>, key: &str) -> Result<&'a str, CliError> {
    get(map, key).ok_or_else(|| invalid(key, "missing required key"))
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse::<T>()
        .map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn parse_f64_list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value
        .split(',')
        .map(|v| parse_one::<f64>(key, v.trim()))
        .collect()
}

fn parse_point(key: &str, value: &str, dim: usize) -> Result<Point, CliError> {
    let p = parse_f64_list(key, value)?;
    if p.len() != dim {
        return Err(invalid(key, format!("expected {dim} coordinates, got {}", p.len())));
    }
    Ok(p)
}

/// Hash over the sorted experiment-defining key/value pairs.
pub fn config_hash(map: &BTreeMap<String, String>) -> String {
    let mut hasher = Sha256::new();
    for (k, v) in map {
        if NON_SEMANTIC_KEYS.contains(&k.as_str()) {
            continue;
        }
        hasher.update(k.as_bytes());
        hasher.update(b"=");
        hasher.update(v.as_bytes());
        hasher.update(b"\n");
    }
    let digest = hasher.finalize();
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Command-line overrides folded into the raw map before validation.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))?;
        let map = parse_flat_keys(&text)?;
        Self::from_map(map, overrides)
    }

    pub fn from_map(
        mut map: BTreeMap<String, String>,
        overrides: &Overrides,
    ) -> Result<Self, CliError> {
        if let Some(seed) = overrides.seed {
            map.insert("seed".into(), seed.to_string());
        }
        if let Some(threads) = overrides.threads {
            map.insert("threads".into(), threads.to_string());
        }
        if let Some(out) = &overrides.output {
            map.insert("output".into(), out.display().to_string());
        }

        let seed: u64 = parse_one("seed", require(&map, "seed")?)?;
        let threads = match get(&map, "threads") {
            Some(v) => Some(parse_one::<usize>("threads", v)?),
            None => None,
        };
        let output = PathBuf::from(get(&map, "output").unwrap_or("out"));
        let expect = match get(&map, "expect").unwrap_or("none") {
            "pass" => Expectation::Pass,
            "fail" => Expectation::Fail,
            "none" => Expectation::None,
            other => return Err(invalid("expect", format!("unknown expectation `{other}`"))),
        };

        let prior = Self::parse_prior(&map)?;
        let grid = Self::parse_grid(&map, &prior)?;
        let run = Self::parse_run(&map, &prior)?;
        let verify = Self::parse_verify(&map, &prior, &grid)?;

        let hash = config_hash(&map);
        // Resource and placement keys are captured above; dropping them here
        // keeps replay manifests identical across thread counts and output
        // directories.
        for key in NON_SEMANTIC_KEYS {
            map.remove(key);
        }
        Ok(Self {
            seed,
            threads,
            output,
            expect,
            prior,
            grid,
            run,
            verify,
            hash,
            raw: map,
        })
    }

    fn parse_prior(map: &BTreeMap<String, String>) -> Result<PriorSpec, CliError> {
        let lower = parse_f64_list("domain.lower", require(map, "domain.lower")?)?;
        let upper = parse_f64_list("domain.upper", require(map, "domain.upper")?)?;
        let domain = DomainBox::new(lower, upper).map_err(CliError::from)?;
        let dim = domain.dim();

        let mean = match get(map, "mean.family").unwrap_or("zero") {
            "zero" => MeanSpec::zero(),
            "constant" => {
                let params = parse_f64_list("mean.parameters", require(map, "mean.parameters")?)?;
                if params.len() != 1 {
                    return Err(invalid("mean.parameters", "constant mean takes one value"));
                }
                MeanSpec::constant(params[0])
            }
            "affine" => MeanSpec::affine(parse_f64_list(
                "mean.parameters",
                require(map, "mean.parameters")?,
            )?),
            other => return Err(invalid("mean.family", format!("unknown family `{other}`"))),
        };

        let family = match require(map, "covariance.family")? {
            "squared-exponential" => CovFamily::SquaredExponential,
            "matern-3/2" => CovFamily::Matern32,
            "matern-5/2" => CovFamily::Matern52,
            "constant" => CovFamily::Constant,
            other => {
                return Err(invalid(
                    "covariance.family",
                    format!("unknown family `{other}`"),
                ))
            }
        };
        let variance: f64 = parse_one("covariance.variance", require(map, "covariance.variance")?)?;
        let ls = parse_f64_list("covariance.lengthscale", require(map, "covariance.lengthscale")?)?;
        let lengthscales = if ls.len() == 1 {
            vec![ls[0]; dim]
        } else if ls.len() == dim {
            ls
        } else {
            return Err(invalid(
                "covariance.lengthscale",
                format!("expected 1 or {dim} values"),
            ));
        };
        let covariance =
            CovarianceSpec::new(family, variance, lengthscales).map_err(CliError::from)?;

        let noise = match get(map, "noise.variances") {
            Some(v) => NoiseSpec::new(parse_f64_list("noise.variances", v)?).map_err(CliError::from)?,
            None => NoiseSpec::noiseless(),
        };

        PriorSpec::new(mean, covariance, noise, domain).map_err(CliError::from)
    }

    fn parse_grid(
        map: &BTreeMap<String, String>,
        prior: &PriorSpec,
    ) -> Result<CandidateGrid, CliError> {
        match get(map, "grid.kind").unwrap_or("uniform-lattice") {
            "uniform-lattice" => {
                let resolution: usize =
                    parse_one("grid.resolution", require(map, "grid.resolution")?)?;
                CandidateGrid::uniform_lattice(&prior.domain, resolution).map_err(CliError::from)
            }
            "explicit" => {
                let text = require(map, "grid.points")?;
                let points = text
                    .split(';')
                    .map(|p| parse_point("grid.points", p.trim(), prior.dim()))
                    .collect::<Result<Vec<_>, _>>()?;
                CandidateGrid::explicit(points, &prior.domain).map_err(CliError::from)
            }
            other => Err(invalid("grid.kind", format!("unknown grid kind `{other}`"))),
        }
    }

    fn parse_run(
        map: &BTreeMap<String, String>,
        prior: &PriorSpec,
    ) -> Result<Option<RunSection>, CliError> {
        let kind = match get(map, "acquisition.kind") {
            Some(k) => k,
            None => return Ok(None),
        };
        let x0 = parse_point("x0", require(map, "x0")?, prior.dim())?;
        let steps: usize = parse_one("steps", require(map, "steps")?)?;
        let rule = Self::acquisition_rule(map, kind)?;
        Ok(Some(RunSection { x0, steps, rule }))
    }

    fn acquisition_rule(
        map: &BTreeMap<String, String>,
        kind: &str,
    ) -> Result<EvolutionRule, CliError> {
        match kind {
            "pi" => {
                let epsilon: f64 = parse_one(
                    "acquisition.epsilon",
                    require(map, "acquisition.epsilon")?,
                )?;
                if epsilon <= 0.0 {
                    return Err(invalid("acquisition.epsilon", "must be positive"));
                }
                Ok(EvolutionRule::probability_of_improvement(epsilon))
            }
            "ei" => Ok(EvolutionRule::expected_improvement()),
            "thompson" => Ok(EvolutionRule::thompson()),
            other => Err(invalid(
                "acquisition.kind",
                format!("unknown acquisition `{other}`"),
            )),
        }
    }

    fn parse_verify(
        map: &BTreeMap<String, String>,
        prior: &PriorSpec,
        grid: &CandidateGrid,
    ) -> Result<Option<VerifySection>, CliError> {
        let kind = match get(map, "rule.kind") {
            Some(k) => k,
            None => return Ok(None),
        };
        let dim = prior.dim();
        let needs_x0 = !matches!(kind, "counterexample" | "separability");
        let x0 = if needs_x0 {
            parse_point("x0", require(map, "x0")?, dim)?
        } else {
            vec![0.0; dim]
        };

        let rule = match kind {
            "constant" => VerifyRule::Constant {
                x1: parse_point("rule.x1", require(map, "rule.x1")?, dim)?,
            },
            "threshold" => VerifyRule::Threshold {
                threshold: parse_one("rule.threshold", require(map, "rule.threshold")?)?,
                above: parse_point("rule.above", require(map, "rule.above")?, dim)?,
                below: parse_point("rule.below", require(map, "rule.below")?, dim)?,
            },
            "pi" | "ei" | "thompson" => {
                let steps: usize = parse_one("rule.steps", require(map, "rule.steps")?)?;
                VerifyRule::MultiStep {
                    rule: Self::acquisition_rule(map, kind)?,
                    steps,
                }
            }
            "counterexample" => VerifyRule::Counterexample {
                mean_of_y: parse_one("rule.mean_of_y", require(map, "rule.mean_of_y")?)?,
            },
            "separability" => VerifyRule::Separability {
                gamma: parse_one("rule.gamma", require(map, "rule.gamma")?)?,
            },
            other => return Err(invalid("rule.kind", format!("unknown rule `{other}`"))),
        };

        // Constant and threshold targets must sit on the grid.
        let check_on_grid = |key: &str, p: &Point| -> Result<(), CliError> {
            if grid.index_of(p).is_none() {
                return Err(invalid(key, format!("{p:?} is not a grid point")));
            }
            Ok(())
        };
        match &rule {
            VerifyRule::Constant { x1 } => check_on_grid("rule.x1", x1)?,
            VerifyRule::Threshold { above, below, .. } => {
                check_on_grid("rule.above", above)?;
                check_on_grid("rule.below", below)?;
            }
            _ => {}
        }

        let mutation = match get(map, "verification.mutate").unwrap_or("none") {
            "none" => Mutation::None,
            "atom" => {
                let point = parse_point(
                    "verification.atom_point",
                    require(map, "verification.atom_point")?,
                    dim,
                )?;
                let offset: f64 = parse_one(
                    "verification.atom_offset",
                    require(map, "verification.atom_offset")?,
                )?;
                Mutation::Atom { point, offset }
            }
            other => {
                return Err(invalid(
                    "verification.mutate",
                    format!("unknown mutation `{other}`"),
                ))
            }
        };

        let replications: usize = parse_one(
            "verification.replications",
            require(map, "verification.replications")?,
        )?;
        let bin_width: f64 = match get(map, "verification.bin_width") {
            Some(v) => parse_one("verification.bin_width", v)?,
            None => 0.05 * prior.signal_std(),
        };
        let min_bin_count: usize = match get(map, "verification.min_bin_count") {
            Some(v) => parse_one("verification.min_bin_count", v)?,
            None => 100,
        };
        let alpha: f64 = match get(map, "verification.alpha") {
            Some(v) => parse_one("verification.alpha", v)?,
            None => 0.01,
        };
        let min_pass_fraction: f64 = match get(map, "verification.min_pass_fraction") {
            Some(v) => parse_one("verification.min_pass_fraction", v)?,
            None => 0.95,
        };
        let binning = BinningScheme::new(bin_width, min_bin_count).map_err(CliError::from)?;

        Ok(Some(VerifySection {
            x0,
            rule,
            mutation,
            replications,
            binning,
            alpha,
            min_pass_fraction,
        }))
    }
}

impl VerifyRule {
    /// The one-step previsible rule, when this is a one-step suite.
    pub fn as_onestep(&self) -> Option<OneStepRule> {
        match self {
            VerifyRule::Constant { x1 } => Some(OneStepRule::Constant(x1.clone())),
            VerifyRule::Threshold {
                threshold,
                above,
                below,
            } => Some(OneStepRule::Threshold {
                threshold: *threshold,
                above: above.clone(),
                below: below.clone(),
            }),
            _ => None,
        }
    }
}
