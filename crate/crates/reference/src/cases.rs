//! Randomized conditioning cases shared by the cross-check test suites.

use seqgp::conditional::History;
use seqgp::model::{
    CovFamily, CovarianceSpec, DomainBox, MeanSpec, NoiseSpec, Point, PriorSpec,
};
use seqgp::rng::{RandomStream, SeedSpec};

/// One randomized conditioning problem.
#[derive(Debug, Clone)]
pub struct ConditioningCase {
    pub prior: PriorSpec,
    pub history: History,
    pub query: Vec<Point>,
}

/// Minimum pairwise separation between generated points. Keeps the posterior
/// away from numerically degenerate near-duplicates, where the jitter and
/// clamping policies have to diverge from exact arithmetic.
const MIN_SEPARATION: f64 = 1e-3;

fn pick<T: Copy>(stream: &mut RandomStream, options: &[T]) -> T {
    let u = stream.uniform();
    options[((u * options.len() as f64) as usize).min(options.len() - 1)]
}

fn range(stream: &mut RandomStream, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * stream.uniform()
}

fn fresh_point(stream: &mut RandomStream, dim: usize, taken: &[Point]) -> Point {
    loop {
        let p: Point = (0..dim).map(|_| range(stream, -1.0, 1.0)).collect();
        let separated = taken.iter().all(|q| {
            p.iter()
                .zip(q)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
                >= MIN_SEPARATION
        });
        if separated {
            return p;
        }
    }
}

/// Generate `count` cases with history length in `history`, query size ≤
/// `max_query`, mixed kernels (squared-exponential and both Matérn
/// families), mixed mean families and mixed per-entry noise.
pub fn conditioning_cases(
    seed: SeedSpec,
    count: usize,
    history: std::ops::RangeInclusive<usize>,
    max_query: usize,
) -> Vec<ConditioningCase> {
    let mut stream = seed.stream();
    let mut cases = Vec::with_capacity(count);
    for _ in 0..count {
        let dim = pick(&mut stream, &[1usize, 2, 3]);
        let family = pick(
            &mut stream,
            &[
                CovFamily::SquaredExponential,
                CovFamily::Matern32,
                CovFamily::Matern52,
            ],
        );
        let variance = range(&mut stream, 0.3, 2.0);
        let lengthscales: Vec<f64> = (0..dim).map(|_| range(&mut stream, 0.3, 1.5)).collect();
        let mean = match pick(&mut stream, &[0u8, 1, 2]) {
            0 => MeanSpec::zero(),
            1 => MeanSpec::constant(range(&mut stream, -2.0, 2.0)),
            _ => MeanSpec::affine(
                (0..=dim).map(|_| range(&mut stream, -1.0, 1.0)).collect(),
            ),
        };
        let prior = PriorSpec::new(
            mean,
            CovarianceSpec::new(family, variance, lengthscales).unwrap(),
            NoiseSpec::noiseless(),
            DomainBox::new(vec![-1.0; dim], vec![1.0; dim]).unwrap(),
        )
        .unwrap();

        let span = history.end() - history.start() + 1;
        let h = history.start() + ((stream.uniform() * span as f64) as usize).min(span - 1);
        let q = 1 + ((stream.uniform() * max_query as f64) as usize).min(max_query - 1);
        let mut taken: Vec<Point> = Vec::new();
        let mut hist = History::new();
        for _ in 0..h {
            let p = fresh_point(&mut stream, dim, &taken);
            taken.push(p.clone());
            let noise = if stream.uniform() < 0.5 {
                0.0
            } else {
                range(&mut stream, 0.01, 0.3)
            };
            hist.push(p, range(&mut stream, -2.0, 2.0), noise).unwrap();
        }
        let mut query = Vec::new();
        for _ in 0..q {
            let p = fresh_point(&mut stream, dim, &taken);
            taken.push(p.clone());
            query.push(p);
        }
        cases.push(ConditioningCase {
            prior,
            history: hist,
            query,
        });
    }
    cases
}
