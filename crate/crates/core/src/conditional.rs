//! The canonical Gaussian conditional: posterior mean and covariance of the
//! random function at query points given the observation history, computed by
//! the explicit cross-covariance formulas with Cholesky solves.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{jittered_cholesky, psd_cholesky};
use crate::model::{eval_mean, gram_matrix, joint_prior, Point, PriorSpec};
use crate::rng::{RandomStream, SeedSpec};
use crate::stats::norm_cdf;

/// Relative floor below which a posterior marginal variance is clamped to
/// exactly zero and treated as a point mass.
const VARIANCE_CLAMP_REL: f64 = 1e-10;

/// Pivot tolerance for the sampling factor of a posterior covariance.
const SAMPLING_PIVOT_REL: f64 = 1e-12;

/// Ordered record of evaluations: locations, observed values and the noise
/// variance attached to each observation. Append-only; entries are never
/// reordered or mutated.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct History {
    locations: Vec<Point>,
    values: Vec<f64>,
    noise_variances: Vec<f64>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_observations(entries: impl IntoIterator<Item = (Point, f64, f64)>) -> Result<Self> {
        let mut h = Self::new();
        for (x, y, nv) in entries {
            h.push(x, y, nv)?;
        }
        Ok(h)
    }

    pub fn push(&mut self, location: Point, value: f64, noise_variance: f64) -> Result<()> {
        if !(noise_variance >= 0.0 && noise_variance.is_finite()) {
            return Err(Error::invalid("noise_variance", "must be nonnegative"));
        }
        if !value.is_finite() {
            return Err(Error::invalid("value", "must be finite"));
        }
        if let Some(first) = self.locations.first() {
            if first.len() != location.len() {
                return Err(Error::DimensionMismatch {
                    expected: first.len(),
                    got: location.len(),
                });
            }
        }
        self.locations.push(location);
        self.values.push(value);
        self.noise_variances.push(noise_variance);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[Point] {
        &self.locations
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn noise_variances(&self) -> &[f64] {
        &self.noise_variances
    }

    /// Best observed value so far.
    pub fn incumbent(&self) -> Option<f64> {
        self.values.iter().copied().reduce(f64::max)
    }

    /// The first `n` observations as a new history.
    pub fn prefix(&self, n: usize) -> History {
        History {
            locations: self.locations[..n].to_vec(),
            values: self.values[..n].to_vec(),
            noise_variances: self.noise_variances[..n].to_vec(),
        }
    }
}

/// Gaussian posterior over a finite set of query points. Immutable; carries
/// the sampling factor of its covariance and the Gram-matrix jitter that was
/// applied during conditioning.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorGaussian {
    query_points: Vec<Point>,
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    cholesky_factor: DMatrix<f64>,
    jitter: f64,
}

impl PosteriorGaussian {
    pub(crate) fn from_parts(
        query_points: Vec<Point>,
        mean: Vec<f64>,
        covariance: DMatrix<f64>,
        cholesky_factor: DMatrix<f64>,
        jitter: f64,
    ) -> Self {
        Self {
            query_points,
            mean: DVector::from_vec(mean),
            covariance,
            cholesky_factor,
            jitter,
        }
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.len() == 0
    }

    pub fn query_points(&self) -> &[Point] {
        &self.query_points
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky_factor
    }

    /// Diagonal jitter added to the history Gram matrix (absolute, 0 if the
    /// plain factorization succeeded).
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Shift one mean coordinate; the hook the verifier's kernel mutation
    /// uses to build non-canonical versions.
    pub(crate) fn shift_mean(&mut self, coordinate: usize, delta: f64) {
        self.mean[coordinate] += delta;
    }

    pub fn marginal_variance(&self, coordinate: usize) -> f64 {
        self.covariance[(coordinate, coordinate)]
    }

    pub fn marginal_sd(&self, coordinate: usize) -> f64 {
        self.marginal_variance(coordinate).sqrt()
    }

    /// Draw `count` joint samples; row i of the result is the i-th draw.
    /// Consumes `len()` standard normals per draw, coordinate-major within a
    /// draw.
    pub fn sample(&self, stream: &mut RandomStream, count: usize) -> DMatrix<f64> {
        let m = self.len();
        let mut out = DMatrix::zeros(count, m);
        for d in 0..count {
            let z = DVector::from_fn(m, |_, _| stream.standard_normal());
            let x = &self.mean + &self.cholesky_factor * z;
            for j in 0..m {
                out[(d, j)] = x[j];
            }
        }
        out
    }
}

/// The canonical conditional of the random function at `query` given the
/// history:
///
///   mean = m(query) + M K⁻¹ (y − m(X))
///   cov  = K_qq − M K⁻¹ Mᵀ
///
/// where K is the Gram matrix over history locations plus per-entry noise on
/// the diagonal and M the query/history cross-covariance. K⁻¹ is applied via
/// Cholesky solves. An empty history returns the prior joint.
pub fn condition(prior: &PriorSpec, history: &History, query: &[Point]) -> Result<PosteriorGaussian> {
    if query.is_empty() {
        return Err(Error::invalid("query", "must be nonempty"));
    }
    if history.is_empty() {
        return joint_prior(prior, query, false);
    }

    check_consistent_duplicates(history)?;

    let x = history.locations();
    let mut gram = gram_matrix(&prior.covariance, x, x)?;
    for (i, nv) in history.noise_variances().iter().enumerate() {
        gram[(i, i)] += nv;
    }
    let (chol, jitter) = jittered_cholesky(&gram).ok_or_else(|| Error::SingularModel {
        detail: "Cholesky failed after maximal jitter escalation".into(),
        entries: Vec::new(),
    })?;

    let m_x = DVector::from_vec(eval_mean(&prior.mean, x)?);
    let m_q = DVector::from_vec(eval_mean(&prior.mean, query)?);
    let y = DVector::from_column_slice(history.values());

    let cross = gram_matrix(&prior.covariance, query, x)?;
    let k_qq = gram_matrix(&prior.covariance, query, query)?;

    let alpha = chol.solve(&(y - &m_x));
    let mean = m_q + &cross * alpha;

    // W = L⁻¹ Mᵀ, so cov = K_qq − Wᵀ W stays symmetric to the last bit.
    let l = chol.l();
    let w = l
        .solve_lower_triangular(&cross.transpose())
        .expect("jittered Cholesky factor is nonsingular");
    let mut cov = k_qq - w.transpose() * w;

    // Degenerate marginals become exact point masses: clamp the diagonal and
    // the matching row/column, which keeps the matrix positive semidefinite.
    let floor = VARIANCE_CLAMP_REL * cov.diagonal().amax().max(0.0) + jitter;
    for i in 0..cov.nrows() {
        if cov[(i, i)] <= floor {
            for j in 0..cov.ncols() {
                cov[(i, j)] = 0.0;
                cov[(j, i)] = 0.0;
            }
        }
    }

    let factor = psd_cholesky(&cov, SAMPLING_PIVOT_REL);
    Ok(PosteriorGaussian {
        query_points: query.to_vec(),
        mean,
        covariance: cov,
        cholesky_factor: factor,
        jitter,
    })
}

/// Duplicate noiseless locations are fine when they agree on the value (the
/// jitter ladder absorbs the redundancy) but conflicting values mean no
/// function interpolates the data: fail loudly instead of pseudo-inverting.
fn check_consistent_duplicates(history: &History) -> Result<()> {
    let mut conflicts = Vec::new();
    let locs = history.locations();
    let vals = history.values();
    let nvs = history.noise_variances();
    for i in 0..locs.len() {
        for j in (i + 1)..locs.len() {
            if locs[i] == locs[j] && nvs[i] == 0.0 && nvs[j] == 0.0 && vals[i] != vals[j] {
                conflicts.push((i, j));
            }
        }
    }
    if conflicts.is_empty() {
        Ok(())
    } else {
        Err(Error::SingularModel {
            detail: "noiseless duplicate locations with conflicting values".into(),
            entries: conflicts,
        })
    }
}

/// P(f ≤ threshold) for the 1-D marginal at `coordinate`. A clamped
/// zero-variance marginal is a point mass: the indicator of
/// threshold ≥ mean.
pub fn posterior_cdf(post: &PosteriorGaussian, coordinate: usize, threshold: f64) -> f64 {
    let mu = post.mean()[coordinate];
    let var = post.marginal_variance(coordinate);
    if var == 0.0 {
        return if threshold >= mu { 1.0 } else { 0.0 };
    }
    norm_cdf((threshold - mu) / var.sqrt())
}

/// Draw `count` joint samples using the raw stream of `stream`.
pub fn posterior_sample(post: &PosteriorGaussian, stream: SeedSpec, count: usize) -> DMatrix<f64> {
    post.sample(&mut stream.stream(), count)
}

/// Access to a conditional distribution through its 1-D marginals and joint
/// posteriors. The canonical version is [`Canonical`]; the verification
/// harness supplies deliberately broken alternatives.
pub trait ConditionalEvaluator: Sync {
    fn posterior(
        &self,
        prior: &PriorSpec,
        history: &History,
        query: &[Point],
    ) -> Result<PosteriorGaussian>;

    /// (mean, variance) of the 1-D marginal at `point`.
    fn marginal(&self, prior: &PriorSpec, history: &History, point: &Point) -> Result<(f64, f64)> {
        let post = self.posterior(prior, history, std::slice::from_ref(point))?;
        Ok((post.mean()[0], post.marginal_variance(0)))
    }
}

/// The canonical Gaussian conditional distribution.
#[derive(Debug, Clone, Copy, Default)]
pub struct Canonical;

impl ConditionalEvaluator for Canonical {
    fn posterior(
        &self,
        prior: &PriorSpec,
        history: &History,
        query: &[Point],
    ) -> Result<PosteriorGaussian> {
        condition(prior, history, query)
    }
}

/// Hellinger distance between two 1-D Gaussians given as (mean, variance).
/// Point masses are at distance 0 from themselves and 1 from everything else.
pub fn hellinger_1d(a: (f64, f64), b: (f64, f64)) -> f64 {
    let (mu1, v1) = a;
    let (mu2, v2) = b;
    if v1 == 0.0 && v2 == 0.0 {
        return if mu1 == mu2 { 0.0 } else { 1.0 };
    }
    if v1 == 0.0 || v2 == 0.0 {
        return 1.0;
    }
    let s1 = v1.sqrt();
    let s2 = v2.sqrt();
    let bc = (2.0 * s1 * s2 / (v1 + v2)).sqrt() * (-(mu1 - mu2).powi(2) / (4.0 * (v1 + v2))).exp();
    (1.0 - bc).max(0.0).sqrt()
}

/// Maximum Hellinger distance between the 1-D posterior marginals at adjacent
/// points of `path`. Small steps must give small distances when the
/// conditional is weakly continuous; a discontinuity shows up as a spike.
pub fn weak_continuity_scan(
    evaluator: &dyn ConditionalEvaluator,
    prior: &PriorSpec,
    history: &History,
    path: &[Point],
) -> Result<f64> {
    if path.len() < 2 {
        return Err(Error::invalid("path", "needs at least two points"));
    }
    let mut marginals = Vec::with_capacity(path.len());
    for p in path {
        marginals.push(evaluator.marginal(prior, history, p)?);
    }
    Ok(marginals
        .windows(2)
        .map(|w| hellinger_1d(w[0], w[1]))
        .fold(0.0, f64::max))
}

/// Evenly spaced points from `a` to `b` (inclusive) with spacing close to
/// `step`; helper for building scan paths in one dimension.
pub fn line_path(a: f64, b: f64, step: f64) -> Vec<Point> {
    assert!(step > 0.0 && b > a);
    let n = ((b - a) / step).ceil() as usize;
    (0..=n)
        .map(|i| vec![a + (b - a) * i as f64 / n as f64])
        .collect()
}
