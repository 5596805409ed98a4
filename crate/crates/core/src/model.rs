//! The prior model: mean functions, covariance functions, observation
//! noise and the rectangular domain the random function lives on.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::conditional::PosteriorGaussian;
use crate::error::{Error, Result};
use crate::linalg::psd_cholesky;

/// A location in the input domain.
pub type Point = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CovFamily {
    SquaredExponential,
    Matern32,
    Matern52,
    /// k(x, y) = variance for all x, y: the almost-constant random function
    /// f(x) = Y.
    Constant,
}

/// Stationary covariance function with signal variance and one lengthscale
/// per input dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceSpec {
    pub family: CovFamily,
    pub variance: f64,
    pub lengthscales: Vec<f64>,
}

impl CovarianceSpec {
    pub fn new(family: CovFamily, variance: f64, lengthscales: Vec<f64>) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::invalid("covariance.variance", "must be positive"));
        }
        if lengthscales.is_empty() || lengthscales.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
            return Err(Error::invalid(
                "covariance.lengthscale",
                "needs one positive entry per dimension",
            ));
        }
        Ok(Self {
            family,
            variance,
            lengthscales,
        })
    }

    /// One shared lengthscale across `dim` dimensions.
    pub fn isotropic(family: CovFamily, variance: f64, lengthscale: f64, dim: usize) -> Result<Self> {
        Self::new(family, variance, vec![lengthscale; dim])
    }

    pub fn dim(&self) -> usize {
        self.lengthscales.len()
    }

    /// Kernel value k(x, y).
    pub fn evaluate(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        self.check_dim(y)?;
        if self.family == CovFamily::Constant {
            return Ok(self.variance);
        }
        let r2: f64 = x
            .iter()
            .zip(y)
            .zip(&self.lengthscales)
            .map(|((a, b), l)| {
                let d = (a - b) / l;
                d * d
            })
            .sum();
        Ok(match self.family {
            CovFamily::SquaredExponential => self.variance * (-0.5 * r2).exp(),
            CovFamily::Matern32 => {
                let r = r2.sqrt();
                let s = 3.0_f64.sqrt() * r;
                self.variance * (1.0 + s) * (-s).exp()
            }
            CovFamily::Matern52 => {
                let r = r2.sqrt();
                let s = 5.0_f64.sqrt() * r;
                self.variance * (1.0 + s + 5.0 * r2 / 3.0) * (-s).exp()
            }
            CovFamily::Constant => unreachable!(),
        })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.lengthscales.len() {
            return Err(Error::DimensionMismatch {
                expected: self.lengthscales.len(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MeanFamily {
    Zero,
    Constant,
    Affine,
}

/// Prior mean function m(x).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanSpec {
    pub family: MeanFamily,
    /// Zero: empty. Constant: `[c]`. Affine: `[intercept, slope_0, ...]`.
    pub parameters: Vec<f64>,
}

impl MeanSpec {
    pub fn zero() -> Self {
        Self {
            family: MeanFamily::Zero,
            parameters: Vec::new(),
        }
    }

    pub fn constant(c: f64) -> Self {
        Self {
            family: MeanFamily::Constant,
            parameters: vec![c],
        }
    }

    pub fn affine(parameters: Vec<f64>) -> Self {
        Self {
            family: MeanFamily::Affine,
            parameters,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let ok = match self.family {
            MeanFamily::Zero => self.parameters.is_empty(),
            MeanFamily::Constant => self.parameters.len() == 1,
            MeanFamily::Affine => self.parameters.len() == dim + 1,
        };
        if !ok {
            return Err(Error::invalid(
                "mean.parameters",
                format!(
                    "{:?} mean over {dim} dimensions is incompatible with {} parameters",
                    self.family,
                    self.parameters.len()
                ),
            ));
        }
        if self.parameters.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("mean.parameters", "must be finite"));
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        match self.family {
            MeanFamily::Zero => Ok(0.0),
            MeanFamily::Constant => Ok(self.parameters[0]),
            MeanFamily::Affine => {
                if self.parameters.len() != x.len() + 1 {
                    return Err(Error::DimensionMismatch {
                        expected: self.parameters.len().saturating_sub(1),
                        got: x.len(),
                    });
                }
                Ok(self.parameters[0]
                    + self.parameters[1..]
                        .iter()
                        .zip(x)
                        .map(|(a, b)| a * b)
                        .sum::<f64>())
            }
        }
    }
}

/// Per-step observation noise variances for f_n = f + noise_n.
///
/// Empty means noiseless everywhere; otherwise step `n` uses entry `n`, with
/// the last entry repeated past the end of the list.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variances: Vec<f64>,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self::default()
    }

    pub fn new(variances: Vec<f64>) -> Result<Self> {
        if variances.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("noise.variances", "must be nonnegative"));
        }
        Ok(Self { variances })
    }

    pub fn variance_at(&self, step: usize) -> f64 {
        match self.variances.as_slice() {
            [] => 0.0,
            vs => vs[step.min(vs.len() - 1)],
        }
    }
}

/// Axis-aligned box domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainBox {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl DomainBox {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::invalid("domain", "lower/upper lengths differ or are empty"));
        }
        for (l, u) in lower.iter().zip(&upper) {
            if !(l.is_finite() && u.is_finite() && l < u) {
                return Err(Error::invalid(
                    "domain",
                    "bounds must be finite with lower < upper in every dimension",
                ));
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn unit_interval() -> Self {
        Self::new(vec![0.0], vec![1.0]).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }
}

/// Full prior over the random function and its observation process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorSpec {
    pub mean: MeanSpec,
    pub covariance: CovarianceSpec,
    pub noise: NoiseSpec,
    pub domain: DomainBox,
}

impl PriorSpec {
    pub fn new(
        mean: MeanSpec,
        covariance: CovarianceSpec,
        noise: NoiseSpec,
        domain: DomainBox,
    ) -> Result<Self> {
        if covariance.dim() != domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: domain.dim(),
                got: covariance.dim(),
            });
        }
        mean.validate(domain.dim())?;
        Ok(Self {
            mean,
            covariance,
            noise,
            domain,
        })
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    /// Signal standard deviation; the scale for default epsilons and bin
    /// widths.
    pub fn signal_std(&self) -> f64 {
        self.covariance.variance.sqrt()
    }
}

/// Componentwise mean evaluations over `points`.
pub fn eval_mean(spec: &MeanSpec, points: &[Point]) -> Result<Vec<f64>> {
    points.iter().map(|p| spec.evaluate(p)).collect()
}

/// Cross-covariance matrix with entry (i, j) = k(a\[i\], b\[j\]).
pub fn gram_matrix(spec: &CovarianceSpec, a: &[Point], b: &[Point]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(a.len(), b.len());
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            m[(i, j)] = spec.evaluate(x, y)?;
        }
    }
    Ok(m)
}

/// Joint Gaussian of (f(x_0), ..., f(x_n)) under the prior. With `noisy`,
/// the per-step noise variance is added on the diagonal, giving the joint of
/// the observations instead.
pub fn joint_prior(prior: &PriorSpec, points: &[Point], noisy: bool) -> Result<PosteriorGaussian> {
    let mean = eval_mean(&prior.mean, points)?;
    let mut cov = gram_matrix(&prior.covariance, points, points)?;
    if noisy {
        for i in 0..points.len() {
            cov[(i, i)] += prior.noise.variance_at(i);
        }
    }
    let factor = psd_cholesky(&cov, 1e-12);
    Ok(PosteriorGaussian::from_parts(
        points.to_vec(),
        mean,
        cov,
        factor,
        0.0,
    ))
}
