//! Integration rules against `μ^{⊗k}`: Gauss–Hermite for Gaussian laws, exact
//! atoms for discrete laws, and a seeded Monte Carlo fallback.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{Marginal, ValueLaw};
use crate::error::{Error, Result};
use crate::summation::NeumaierSum;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum QuadratureScheme {
    ClosedForm,
    GaussHermite { nodes: usize },
    Discrete { atoms: usize },
    MonteCarlo { samples: usize, seed: u64 },
}

impl QuadratureScheme {
    pub fn is_deterministic(&self) -> bool {
        !matches!(self, QuadratureScheme::MonteCarlo { .. })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    pub gh_nodes: usize,
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Largest tensor rule materialized before degrading node counts.
    pub max_points: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        QuadratureConfig {
            gh_nodes: 64,
            mc_samples: 1_000_000,
            mc_seed: 0x5eed_0f_a11,
            max_points: 1 << 20,
        }
    }
}

/// Physicists' Gauss–Hermite nodes and weights (`∫e^{-x²}f ≈ Σ w f(x)`),
/// by Newton iteration on the normalized Hermite recurrence.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Nodes/weights for `E f(X)`, `X ~ N(0, σ²)`.
pub fn normal_rule(std_dev: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_hermite(n);
    let scale = std::f64::consts::SQRT_2 * std_dev;
    let norm = std::f64::consts::PI.sqrt();
    (
        x.iter().map(|z| z * scale).collect(),
        w.iter().map(|v| v / norm).collect(),
    )
}

/// A weighted point set in `ℝ^dim`; weights sum to one.
#[derive(Clone, Debug)]
pub struct Rule {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
    scheme: QuadratureScheme,
}

impl Rule {
    /// The trivial rule on `ℝ^0`.
    pub fn empty() -> Self {
        Rule {
            dim: 0,
            points: Vec::new(),
            weights: vec![1.0],
            scheme: QuadratureScheme::ClosedForm,
        }
    }

    pub fn from_parts(
        dim: usize,
        points: Vec<f64>,
        weights: Vec<f64>,
        scheme: QuadratureScheme,
    ) -> Self {
        debug_assert_eq!(points.len(), dim * weights.len());
        Rule {
            dim,
            points,
            weights,
            scheme,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn scheme(&self) -> &QuadratureScheme {
        &self.scheme
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }

    pub fn weight(&self, k: usize) -> f64 {
        self.weights[k]
    }

    /// `Σ_k w_k f(prefix ⊕ point_k)`.
    pub fn integrate_with_prefix(
        &self,
        prefix: &[f64],
        buf: &mut Vec<f64>,
        f: &dyn Fn(&[f64]) -> f64,
    ) -> f64 {
        buf.clear();
        buf.extend_from_slice(prefix);
        buf.resize(prefix.len() + self.dim, 0.0);
        let mut acc = NeumaierSum::default();
        for k in 0..self.len() {
            buf[prefix.len()..].copy_from_slice(self.point(k));
            acc.add(self.weights[k] * f(buf));
        }
        acc.sum()
    }

    pub fn integrate(&self, f: impl Fn(&[f64]) -> f64) -> f64 {
        let mut acc = NeumaierSum::default();
        for k in 0..self.len() {
            acc.add(self.weights[k] * f(self.point(k)));
        }
        acc.sum()
    }
}

/// One-dimensional deterministic rule for a scalar law, if one exists.
fn scalar_rule(m: &Marginal, nodes: usize) -> Option<(Vec<f64>, Vec<f64>, QuadratureScheme)> {
    match m {
        Marginal::Normal { std_dev } => {
            let (x, w) = normal_rule(*std_dev, nodes);
            Some((x, w, QuadratureScheme::GaussHermite { nodes }))
        }
        other => other.atoms().map(|atoms| {
            let n = atoms.len();
            let (x, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
            (x, w, QuadratureScheme::Discrete { atoms: n })
        }),
    }
}

/// Rule for `μ^{⊗args}` on `ℝ^{℘·args}`.
pub fn rule_for(law: &ValueLaw, args: usize, cfg: &QuadratureConfig) -> Result<Rule> {
    let dims = law.dim * args;
    if dims == 0 {
        return Ok(Rule::empty());
    }
    let per_axis = match &law.marginal {
        Marginal::Normal { .. } => {
            let mut n = cfg.gh_nodes;
            while n > 8 && (n as f64).powi(dims as i32) > cfg.max_points as f64 {
                n -= 1;
            }
            Some(n)
        }
        m => m.atoms().map(|a| a.len()),
    };
    if let Some(n) = per_axis {
        if (n as f64).powi(dims as i32) <= cfg.max_points as f64 {
            let (x, w, scheme) = scalar_rule(&law.marginal, n).expect("deterministic law");
            return Ok(tensor(&x, &w, dims, scheme));
        }
    }
    monte_carlo_rule(law, args, cfg)
}

fn tensor(x: &[f64], w: &[f64], dims: usize, scheme: QuadratureScheme) -> Rule {
    let n = x.len();
    let total = n.pow(dims as u32);
    let mut points = Vec::with_capacity(total * dims);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; dims];
    for _ in 0..total {
        let mut wt = 1.0;
        for &k in &idx {
            points.push(x[k]);
            wt *= w[k];
        }
        weights.push(wt);
        for d in (0..dims).rev() {
            idx[d] += 1;
            if idx[d] < n {
                break;
            }
            idx[d] = 0;
        }
    }
    Rule {
        dim: dims,
        points,
        weights,
        scheme,
    }
}

fn monte_carlo_rule(law: &ValueLaw, args: usize, cfg: &QuadratureConfig) -> Result<Rule> {
    if cfg.mc_samples == 0 {
        return Err(Error::Numeric(
            "Monte Carlo quadrature needs samples".into(),
        ));
    }
    let dims = law.dim * args;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.mc_seed);
    let mut points = vec![0.0; cfg.mc_samples * dims];
    for chunk in points.chunks_mut(dims) {
        law.sample_into(&mut rng, chunk);
    }
    let w = 1.0 / cfg.mc_samples as f64;
    Ok(Rule {
        dim: dims,
        points,
        weights: vec![w; cfg.mc_samples],
        scheme: QuadratureScheme::MonteCarlo {
            samples: cfg.mc_samples,
            seed: cfg.mc_seed,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_weights_and_moments() {
        for n in [1, 2, 5, 20, 64] {
            let (x, w) = gauss_hermite(n);
            let pi_sqrt = std::f64::consts::PI.sqrt();
            assert_relative_eq!(w.iter().sum::<f64>(), pi_sqrt, epsilon = 1e-12);
            if n >= 2 {
                let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
                assert_relative_eq!(m2, pi_sqrt / 2.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn normal_rule_moments() {
        let (x, w) = normal_rule(1.5, 64);
        let m = |e: i32| x.iter().zip(&w).map(|(x, w)| w * x.powi(e)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(m(2), 2.25, epsilon = 1e-12);
        assert_relative_eq!(m(4), 3.0 * 1.5f64.powi(4), epsilon = 1e-11);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn tensor_rule_for_two_gaussian_args() {
        let law = ValueLaw::scalar(Marginal::standard_normal());
        let r = rule_for(&law, 2, &QuadratureConfig::default()).unwrap();
        assert_eq!(r.dim(), 2);
        assert_eq!(r.len(), 64 * 64);
        assert_relative_eq!(
            r.integrate(|p| p[0] * p[0] * p[1] * p[1]),
            1.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn uniform_falls_back_to_monte_carlo() {
        let law = ValueLaw::scalar(Marginal::Uniform { half_width: 1.0 });
        let cfg = QuadratureConfig {
            mc_samples: 20_000,
            ..Default::default()
        };
        let r = rule_for(&law, 1, &cfg).unwrap();
        assert!(!r.scheme().is_deterministic());
        assert!((r.integrate(|p| p[0] * p[0]) - 1.0 / 3.0).abs() < 0.02);
    }
}
