//! Sample statistics used by the verdicts: means with standard errors,
//! moment shape, and normality diagnostics.

use serde::Serialize;
use statrs::function::erf::erfc;

use crate::summation::NeumaierSum;

/// Samples needed before [`gauss_check`] results mean anything.
pub const GAUSS_MIN_SAMPLES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().copied().collect::<NeumaierSum>().sum() / xs.len() as f64
}

/// Sample mean and its standard error `sd/√n`.
pub fn mean_se(xs: &[f64]) -> MeanSe {
    let n = xs.len();
    let m = mean(xs);
    if n < 2 {
        return MeanSe {
            mean: m,
            se: f64::NAN,
        };
    }
    let ss: NeumaierSum = xs.iter().map(|x| (x - m) * (x - m)).collect();
    MeanSe {
        mean: m,
        se: (ss.sum() / (n - 1) as f64 / n as f64).sqrt(),
    }
}

pub fn median(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let h = v.len() / 2;
    if v.len() % 2 == 1 {
        v[h]
    } else {
        0.5 * (v[h - 1] + v[h])
    }
}

pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `P(K > λ)` for the Kolmogorov distribution.
pub fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut acc = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        acc += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * acc).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussDiagnostics {
    pub n: usize,
    pub mean: f64,
    pub std_dev: f64,
    pub skewness: f64,
    pub excess_kurtosis: f64,
    /// Kolmogorov–Smirnov distance to the normal with the sample mean/variance.
    pub ks_statistic: f64,
    pub ks_p_value: f64,
    pub jarque_bera: f64,
    pub jarque_bera_p_value: f64,
    pub degenerate: bool,
}

/// Moment shape and distance to the fitted normal. Constant input is flagged
/// degenerate, with the shape fields left `NaN`.
pub fn gauss_check(xs: &[f64]) -> GaussDiagnostics {
    let n = xs.len();
    let nf = n as f64;
    let m = mean(xs);
    let central = |p: i32| {
        xs.iter()
            .map(|x| (x - m).powi(p))
            .collect::<NeumaierSum>()
            .sum()
            / nf
    };
    let m2 = central(2);
    let scale = xs.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if n < 2 || m2 <= 1e-24 * scale * scale {
        return GaussDiagnostics {
            n,
            mean: m,
            std_dev: m2.max(0.0).sqrt(),
            skewness: f64::NAN,
            excess_kurtosis: f64::NAN,
            ks_statistic: f64::NAN,
            ks_p_value: f64::NAN,
            jarque_bera: f64::NAN,
            jarque_bera_p_value: f64::NAN,
            degenerate: true,
        };
    }
    let skewness = central(3) / m2.powf(1.5);
    let excess_kurtosis = central(4) / (m2 * m2) - 3.0;
    let sd = (m2 * nf / (nf - 1.0)).sqrt();
    let mut sorted = xs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut d: f64 = 0.0;
    for (idx, x) in sorted.iter().enumerate() {
        let f = normal_cdf((x - m) / sd);
        d = d.max((idx as f64 + 1.0) / nf - f).max(f - idx as f64 / nf);
    }
    let sq = nf.sqrt();
    let ks_p_value = kolmogorov_sf((sq + 0.12 + 0.11 / sq) * d);
    let jarque_bera = nf / 6.0 * (skewness * skewness + excess_kurtosis * excess_kurtosis / 4.0);
    GaussDiagnostics {
        n,
        mean: m,
        std_dev: sd,
        skewness,
        excess_kurtosis,
        ks_statistic: d,
        ks_p_value,
        jarque_bera,
        // χ²₂ survival function
        jarque_bera_p_value: (-jarque_bera / 2.0).exp(),
        degenerate: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use crate::distributions::Marginal;

    #[test]
    fn shape_examples() {
        let g = gauss_check(&[-1.0, 0.0, 1.0]);
        assert_eq!(g.skewness, 0.0);
        let two: Vec<f64> = (0..100)
            .map(|k| if k % 2 == 0 { -1.0 } else { 1.0 })
            .collect();
        assert_relative_eq!(gauss_check(&two).excess_kurtosis, -2.0, epsilon = 1e-12);
        assert!(gauss_check(&[3.0; 10]).degenerate);
    }

    #[test]
    fn normal_sample_looks_normal() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..5000)
            .map(|_| Marginal::standard_normal().sample(&mut rng))
            .collect();
        let g = gauss_check(&xs);
        assert!(g.skewness.abs() < 0.1 && g.excess_kurtosis.abs() < 0.3);
        assert!(g.ks_p_value > 0.01 && g.jarque_bera_p_value > 0.01);
        let ys: Vec<f64> = xs.iter().map(|x| x.exp()).collect();
        assert!(gauss_check(&ys).ks_p_value < 1e-6);
    }

    #[test]
    fn kolmogorov_tail() {
        // P(K > 1.36) ≈ 0.049
        assert!((kolmogorov_sf(1.36) - 0.0494).abs() < 1e-3);
        assert_eq!(kolmogorov_sf(0.0), 1.0);
    }

    #[test]
    fn mean_se_and_median() {
        let s = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_relative_eq!(s.se, (5.0f64 / 3.0 / 4.0).sqrt(), epsilon = 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_relative_eq!(normal_cdf(0.0), 0.5);
    }
}
