//! Reference implementations used to cross-check `seqgp` in tests.
//!
//! Everything here deliberately takes a different computational route than
//! the main crate: posterior moments come from explicit matrix inversion of
//! the full joint (or a chain of rank-one updates) instead of Cholesky
//! solves, and probabilities come from adaptive quadrature of a hand-written
//! density instead of erf-based closed forms. Slow and simple on purpose.

pub mod cases;

use nalgebra::{DMatrix, DVector};
use seqgp::conditional::History;
use seqgp::model::{eval_mean, gram_matrix, Point, PriorSpec};

/// Posterior mean and covariance at `query` given the history, by building
/// the joint Gaussian over history ∪ query and applying the block-inversion
/// formulas with an explicit (LU-based) inverse.
pub fn block_posterior(
    prior: &PriorSpec,
    history: &History,
    query: &[Point],
) -> (DVector<f64>, DMatrix<f64>) {
    let h = history.len();
    let q = query.len();
    let mut all: Vec<Point> = history.locations().to_vec();
    all.extend_from_slice(query);

    let mean_all = DVector::from_vec(eval_mean(&prior.mean, &all).unwrap());
    let mut cov_all = gram_matrix(&prior.covariance, &all, &all).unwrap();
    for (i, nv) in history.noise_variances().iter().enumerate() {
        cov_all[(i, i)] += nv;
    }

    if h == 0 {
        return (mean_all, cov_all);
    }

    let k_hh = cov_all.view((0, 0), (h, h)).into_owned();
    let k_qh = cov_all.view((h, 0), (q, h)).into_owned();
    let k_qq = cov_all.view((h, h), (q, q)).into_owned();
    let inv = k_hh.try_inverse().expect("history covariance invertible");

    let y = DVector::from_column_slice(history.values());
    let mean_h = mean_all.rows(0, h).into_owned();
    let mean_q = mean_all.rows(h, q).into_owned();

    let mean = &mean_q + &k_qh * &inv * (y - mean_h);
    let cov = &k_qq - &k_qh * inv * k_qh.transpose();
    (mean, cov)
}

/// Posterior at `query` by conditioning on one observation at a time:
/// maintain the joint over (history ∪ query) and apply rank-one update
/// formulas per revealed value.
pub fn rank_one_chain_posterior(
    prior: &PriorSpec,
    history: &History,
    query: &[Point],
) -> (DVector<f64>, DMatrix<f64>) {
    let h = history.len();
    let q = query.len();
    let mut all: Vec<Point> = history.locations().to_vec();
    all.extend_from_slice(query);

    let mut mean = DVector::from_vec(eval_mean(&prior.mean, &all).unwrap());
    let mut cov = gram_matrix(&prior.covariance, &all, &all).unwrap();
    for (i, nv) in history.noise_variances().iter().enumerate() {
        cov[(i, i)] += nv;
    }

    for (i, &y) in history.values().iter().enumerate() {
        let pivot = cov[(i, i)];
        let col = cov.column(i).into_owned();
        let gain = (y - mean[i]) / pivot;
        mean += &col * gain;
        cov -= &col * col.transpose() / pivot;
    }

    (mean.rows(h, q).into_owned(), cov.view((h, h), (q, q)).into_owned())
}

/// Normal density written out directly.
pub fn normal_density(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Adaptive Simpson quadrature of `f` on [a, b].
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson<F: Fn(f64) -> f64>(f: &F, a: f64, m: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (f(a) + 4.0 * f(m) + f(b))
    }
    fn recurse<F: Fn(f64) -> f64>(
        f: &F,
        a: f64,
        m: f64,
        b: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let left = simpson(f, a, lm, m);
        let right = simpson(f, m, rm, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        recurse(f, a, lm, m, left, tol / 2.0, depth - 1)
            + recurse(f, m, rm, b, right, tol / 2.0, depth - 1)
    }
    let m = 0.5 * (a + b);
    recurse(f, a, m, b, simpson(f, a, m, b), tol, 48)
}

/// P(X > eta) for X ~ N(mean, sd²), integrating the density over the upper
/// tail truncated twelve standard deviations out (truncation error ~1e-33).
pub fn tail_probability_by_quadrature(mean: f64, sd: f64, eta: f64) -> f64 {
    if sd == 0.0 {
        return if mean > eta { 1.0 } else { 0.0 };
    }
    let lo = mean - 12.0 * sd;
    let hi = mean + 12.0 * sd;
    if eta >= hi {
        return 0.0;
    }
    if eta <= lo {
        return 1.0;
    }
    adaptive_simpson(&|t| normal_density(t, mean, sd), eta, hi, 1e-12)
}

/// E[(X − incumbent)₊] for X ~ N(mean, sd²), by quadrature.
pub fn expected_improvement_by_quadrature(mean: f64, sd: f64, incumbent: f64) -> f64 {
    if sd == 0.0 {
        return (mean - incumbent).max(0.0);
    }
    let lo = mean - 12.0 * sd;
    let hi = mean + 12.0 * sd;
    if incumbent >= hi {
        return 0.0;
    }
    if incumbent <= lo {
        // The positive part never clips this far below the mean.
        return mean - incumbent;
    }
    adaptive_simpson(
        &|t| (t - incumbent) * normal_density(t, mean, sd),
        incumbent,
        hi,
        1e-12,
    )
}

/// CDF of N(mean, sd²) by quadrature of the density.
pub fn cdf_by_quadrature(x: f64, mean: f64, sd: f64) -> f64 {
    if sd == 0.0 {
        return if x >= mean { 1.0 } else { 0.0 };
    }
    1.0 - tail_probability_by_quadrature(mean, sd, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_integrates_the_density_to_one() {
        let total = adaptive_simpson(&|t| normal_density(t, 0.0, 1.0), -12.0, 12.0, 1e-12);
        assert!((total - 1.0).abs() < 1e-10, "total {total}");
    }

    #[test]
    fn tail_probability_at_the_mean_is_half() {
        let p = tail_probability_by_quadrature(1.5, 2.0, 1.5);
        assert!((p - 0.5).abs() < 1e-10);
    }

    #[test]
    fn expected_improvement_at_the_mean() {
        // E[(X − mu)₊] = sd/sqrt(2 pi).
        let e = expected_improvement_by_quadrature(0.0, 1.0, 0.0);
        assert!((e - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-10);
    }

    #[test]
    fn the_two_posterior_routes_agree() {
        use seqgp::model::{CovFamily, CovarianceSpec, DomainBox, MeanSpec, NoiseSpec};
        let prior = PriorSpec::new(
            MeanSpec::constant(0.3),
            CovarianceSpec::isotropic(CovFamily::Matern52, 1.5, 0.8, 1).unwrap(),
            NoiseSpec::noiseless(),
            DomainBox::new(vec![-5.0], vec![5.0]).unwrap(),
        )
        .unwrap();
        let history = History::from_observations([
            (vec![-1.0], 0.7, 0.0),
            (vec![0.4], -0.2, 0.1),
            (vec![1.3], 1.1, 0.0),
        ])
        .unwrap();
        let query = vec![vec![0.0], vec![2.0]];
        let (m1, c1) = block_posterior(&prior, &history, &query);
        let (m2, c2) = rank_one_chain_posterior(&prior, &history, &query);
        assert!((m1 - m2).amax() < 1e-10);
        assert!((c1 - c2).amax() < 1e-10);
    }
}
