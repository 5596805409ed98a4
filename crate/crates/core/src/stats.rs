//! Scalar normal-distribution helpers and the one-sample Kolmogorov-Smirnov
//! test used by the verification harness.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

/// Standard normal density φ(x).
pub fn norm_pdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().pdf(x)
}

/// Standard normal CDF Φ(x).
pub fn norm_cdf(x: f64) -> f64 {
    Normal::new(0.0, 1.0).unwrap().cdf(x)
}

/// Upper tail 1 − Φ(x), computed as Φ(−x) to avoid cancellation.
pub fn norm_sf(x: f64) -> f64 {
    norm_cdf(-x)
}

/// Standard normal quantile Φ⁻¹(p) for p in (0, 1).
///
/// Wichura's PPND16 rational approximations (relative error below 1e-15).
/// The sampler in `rng` maps uniforms through this function, so the exact
/// constants here are part of the reproducibility contract: changing them
/// invalidates golden trajectory files.
pub fn norm_quantile(p: f64) -> f64 {
    assert!(p > 0.0 && p < 1.0, "norm_quantile requires p in (0,1), got {p}");
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * rational(r, &CENTRAL_NUM, &CENTRAL_DEN);
    }
    let r = if q < 0.0 { p } else { 1.0 - p };
    let r = (-r.ln()).sqrt();
    let z = if r <= 5.0 {
        let r = r - 1.6;
        rational(r, &TAIL_NUM, &TAIL_DEN)
    } else {
        let r = r - 5.0;
        rational(r, &FAR_TAIL_NUM, &FAR_TAIL_DEN)
    };
    if q < 0.0 {
        -z
    } else {
        z
    }
}

fn rational(r: f64, num: &[f64; 8], den: &[f64; 7]) -> f64 {
    let mut n = num[7];
    for c in num[..7].iter().rev() {
        n = n * r + c;
    }
    let mut d = den[6];
    for c in den[..6].iter().rev() {
        d = d * r + c;
    }
    n / (d * r + 1.0)
}

// PPND16 constants, frozen to the published digits.
#[allow(clippy::excessive_precision)]
const CENTRAL_NUM: [f64; 8] = [
    3.387_132_872_796_366_608e0,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
#[allow(clippy::excessive_precision)]
const CENTRAL_DEN: [f64; 7] = [
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
#[allow(clippy::excessive_precision)]
const TAIL_NUM: [f64; 8] = [
    1.423_437_110_749_683_577_34e0,
    4.630_337_846_156_545_295_9e0,
    5.769_497_221_460_691_405_5e0,
    3.647_848_324_763_204_605_04e0,
    1.270_458_252_452_368_382_58e0,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
#[allow(clippy::excessive_precision)]
const TAIL_DEN: [f64; 7] = [
    2.053_191_626_637_758_821_87e0,
    1.676_384_830_183_803_849_4e0,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_NUM: [f64; 8] = [
    6.657_904_643_501_103_777_2e0,
    5.463_784_911_164_114_369_9e0,
    1.784_826_539_917_291_335_8e0,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
#[allow(clippy::excessive_precision)]
const FAR_TAIL_DEN: [f64; 7] = [
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Survival function of the asymptotic Kolmogorov distribution,
/// Q(λ) = 2 Σ_{k≥1} (−1)^{k−1} exp(−2 k² λ²).
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64).powi(2) * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Critical value of the one-sample KS statistic at level `alpha`:
/// D* = λ*/√n with Q(λ*) = alpha. Matches the familiar 1.63/√n at α = 0.01.
pub fn ks_critical_value(n: usize, alpha: f64) -> f64 {
    assert!(n > 0);
    assert!(alpha > 0.0 && alpha < 1.0);
    let mut lo = 1e-3;
    let mut hi = 5.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if kolmogorov_sf(mid) > alpha {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi) / (n as f64).sqrt()
}

/// One-sample KS statistic of `sample` against the CDF `cdf`.
/// The sample is sorted internally.
pub fn ks_statistic<F: Fn(f64) -> f64>(sample: &[f64], cdf: F) -> f64 {
    assert!(!sample.is_empty());
    let mut xs = sample.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = xs.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(((i + 1) as f64 / n - f).abs());
        d = d.max((f - i as f64 / n).abs());
    }
    d
}

/// Outcome of a one-sample KS test against the standard normal.
#[derive(Debug, Clone, Copy)]
pub struct KsOutcome {
    pub statistic: f64,
    pub critical: f64,
    pub pass: bool,
}

/// KS test of `sample` against N(0,1) at level `alpha`.
pub fn ks_test_standard_normal(sample: &[f64], alpha: f64) -> KsOutcome {
    let statistic = ks_statistic(sample, norm_cdf);
    let critical = ks_critical_value(sample.len(), alpha);
    KsOutcome {
        statistic,
        critical,
        pass: statistic < critical,
    }
}
