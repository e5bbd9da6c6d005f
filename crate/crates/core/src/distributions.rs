//! Scalar laws used as noise and as marginals `μ`, their exact moments, and
//! the vector law `μ` on `ℝ^℘` (independent identical components).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::gamma::ln_gamma;

use crate::error::{validation, Error, Result};

/// Samples used when a moment has no closed form.
pub const MC_MOMENT_SAMPLES: usize = 1_000_000;
const MC_MOMENT_SEED: u64 = 0x6d6f_6d65_6e74;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Marginal {
    Normal {
        #[serde(default = "one")]
        std_dev: f64,
    },
    Rademacher,
    Uniform {
        half_width: f64,
    },
    StudentT {
        dof: f64,
    },
    /// Law of `Σ_k w_k ε_k` with i.i.d. `ε_k` drawn from `noise`.
    Convolution {
        noise: Box<Marginal>,
        weights: Vec<f64>,
    },
}

fn one() -> f64 {
    1.0
}

impl Marginal {
    pub fn standard_normal() -> Self {
        Marginal::Normal { std_dev: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal::Normal { std_dev } if !(*std_dev > 0.0 && std_dev.is_finite()) => Err(
                validation(format!("normal std_dev must be positive, got {std_dev}")),
            ),
            Marginal::Uniform { half_width } if !(*half_width > 0.0 && half_width.is_finite()) => {
                Err(validation(format!(
                    "uniform half_width must be positive, got {half_width}"
                )))
            }
            Marginal::StudentT { dof } if !(*dof > 0.0 && dof.is_finite()) => Err(validation(
                format!("student-t dof must be positive, got {dof}"),
            )),
            Marginal::Convolution { noise, weights } => {
                if weights.is_empty() {
                    return Err(validation("convolution needs at least one weight"));
                }
                if matches!(**noise, Marginal::Convolution { .. }) {
                    return Err(validation("nested convolutions are not supported"));
                }
                noise.validate()
            }
            _ => Ok(()),
        }
    }

    /// Whether the law is a centered Gaussian.
    pub fn is_gaussian(&self) -> bool {
        match self {
            Marginal::Normal { .. } => true,
            Marginal::Convolution { noise, .. } => noise.is_gaussian(),
            _ => false,
        }
    }

    /// Collapses Gaussian convolutions to a single normal law.
    pub fn normalized(self) -> Marginal {
        match self {
            Marginal::Convolution { noise, weights } => match *noise {
                Marginal::Normal { std_dev } => Marginal::Normal {
                    std_dev: std_dev * weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
                },
                other => {
                    if weights.len() == 1 && weights[0] == 1.0 {
                        other
                    } else {
                        Marginal::Convolution {
                            noise: Box::new(other),
                            weights,
                        }
                    }
                }
            },
            other => other,
        }
    }

    /// Finite atoms with probabilities, for discrete laws.
    pub fn atoms(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Marginal::Rademacher => Some(vec![(-1.0, 0.5), (1.0, 0.5)]),
            _ => None,
        }
    }

    /// `E X^e`, or `None` when it diverges.
    pub fn raw_moment(&self, e: u32) -> Option<f64> {
        if e == 0 {
            return Some(1.0);
        }
        let odd = e % 2 == 1;
        match self {
            Marginal::Normal { std_dev } => {
                if odd {
                    Some(0.0)
                } else {
                    Some(std_dev.powi(e as i32) * double_factorial(e - 1))
                }
            }
            Marginal::Rademacher => Some(if odd { 0.0 } else { 1.0 }),
            Marginal::Uniform { half_width } => {
                if odd {
                    Some(0.0)
                } else {
                    Some(half_width.powi(e as i32) / (e as f64 + 1.0))
                }
            }
            Marginal::StudentT { dof } => {
                if e as f64 >= *dof {
                    None
                } else if odd {
                    Some(0.0)
                } else {
                    let mut m = dof.powf(e as f64 / 2.0);
                    for j in 1..=e / 2 {
                        m *= (2 * j - 1) as f64 / (dof - 2.0 * j as f64);
                    }
                    Some(m)
                }
            }
            Marginal::Convolution { noise, weights } => {
                let base: Option<Vec<f64>> = (0..=e).map(|k| noise.raw_moment(k)).collect();
                let base = base?;
                // moments of a sum of independent terms: binomial convolution
                let mut acc = vec![0.0; e as usize + 1];
                acc[0] = 1.0;
                for &w in weights {
                    let term: Vec<f64> = (0..=e as usize)
                        .map(|k| w.powi(k as i32) * base[k])
                        .collect();
                    let mut next = vec![0.0; e as usize + 1];
                    for (k, slot) in next.iter_mut().enumerate() {
                        *slot = (0..=k).map(|j| binomial(k, j) * acc[j] * term[k - j]).sum();
                    }
                    acc = next;
                }
                Some(acc[e as usize])
            }
        }
    }

    /// `E|X|^θ` in closed form, `Ok(None)` when only sampling can tell.
    pub fn abs_moment(&self, theta: f64) -> Result<Option<f64>> {
        if !(theta > 0.0) {
            return Err(validation(format!(
                "moment order must be positive, got {theta}"
            )));
        }
        let divergent = || Error::Domain(format!("E|X|^{theta} diverges for {self:?}"));
        Ok(match self {
            Marginal::Normal { std_dev } => Some(
                std_dev.powf(theta)
                    * (theta / 2.0 * std::f64::consts::LN_2 + ln_gamma((theta + 1.0) / 2.0)
                        - 0.5 * std::f64::consts::PI.ln())
                    .exp(),
            ),
            Marginal::Rademacher => Some(1.0),
            Marginal::Uniform { half_width } => Some(half_width.powf(theta) / (theta + 1.0)),
            Marginal::StudentT { dof } => {
                if theta >= *dof {
                    return Err(divergent());
                }
                Some(
                    (theta / 2.0 * dof.ln()
                        + ln_gamma((theta + 1.0) / 2.0)
                        + ln_gamma((dof - theta) / 2.0)
                        - 0.5 * std::f64::consts::PI.ln()
                        - ln_gamma(dof / 2.0))
                    .exp(),
                )
            }
            Marginal::Convolution { noise, .. } => {
                // a finite sum of copies has the θ-moment iff one copy does
                noise.abs_moment(theta)?;
                if theta.fract() == 0.0 && (theta as u32) % 2 == 0 {
                    self.raw_moment(theta as u32)
                } else {
                    None
                }
            }
        })
    }

    pub fn variance(&self) -> Option<f64> {
        self.raw_moment(2)
    }

    /// Transforms two uniforms in `(0,1)` into one draw of a base law.
    /// Returns `None` for convolutions, which need several noise draws.
    pub fn from_uniforms(&self, u1: f64, u2: f64) -> Option<f64> {
        Some(match self {
            Marginal::Normal { std_dev } => {
                std_dev * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
            }
            Marginal::Rademacher => {
                if u1 < 0.5 {
                    -1.0
                } else {
                    1.0
                }
            }
            Marginal::Uniform { half_width } => half_width * (2.0 * u1 - 1.0),
            Marginal::StudentT { dof } => StudentsT::new(0.0, 1.0, *dof)
                .expect("validated dof")
                .inverse_cdf(u1),
            Marginal::Convolution { .. } => return None,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::Convolution { noise, weights } => {
                weights.iter().map(|w| w * noise.sample(rng)).sum()
            }
            base => {
                let u1 = open_unit(rng.next_u64());
                let u2 = open_unit(rng.next_u64());
                base.from_uniforms(u1, u2).expect("base law")
            }
        }
    }
}

/// Maps a 64-bit word to a uniform in the open interval `(0, 1)`.
pub fn open_unit(word: u64) -> f64 {
    ((word >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

fn double_factorial(k: u32) -> f64 {
    let mut acc = 1.0;
    let mut j = k as i64;
    while j > 1 {
        acc *= j as f64;
        j -= 2;
    }
    acc
}

pub(crate) fn binomial(n: usize, k: usize) -> f64 {
    let mut acc = 1.0;
    for j in 0..k {
        acc *= (n - j) as f64 / (j + 1) as f64;
    }
    acc
}

/// The law `μ` of one field value `X(n) ∈ ℝ^℘`: `dim` independent copies of
/// `marginal`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueLaw {
    pub marginal: Marginal,
    pub dim: usize,
}

impl ValueLaw {
    pub fn new(marginal: Marginal, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(validation("value dimension must be at least 1"));
        }
        marginal.validate()?;
        Ok(ValueLaw { marginal, dim })
    }

    pub fn scalar(marginal: Marginal) -> Self {
        ValueLaw { marginal, dim: 1 }
    }

    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        for x in out.iter_mut() {
            *x = self.marginal.sample(rng);
        }
    }
}

/// `γ_θ = (∫|x|^θ dμ)^{1/θ}` with `|·|` the Euclidean norm on `ℝ^℘`.
pub fn gamma_moment(law: &ValueLaw, theta: f64) -> Result<f64> {
    let closed = if law.dim == 1 {
        law.marginal.abs_moment(theta)?
    } else {
        // finiteness of the vector moment follows from the component moment
        law.marginal.abs_moment(theta)?;
        let d = law.dim as f64;
        match &law.marginal {
            Marginal::Normal { std_dev } => Some(
                std_dev.powf(theta)
                    * (theta / 2.0 * std::f64::consts::LN_2 + ln_gamma((d + theta) / 2.0)
                        - ln_gamma(d / 2.0))
                    .exp(),
            ),
            Marginal::Rademacher => Some(d.powf(theta / 2.0)),
            _ => None,
        }
    };
    let moment = match closed {
        Some(m) => m,
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(MC_MOMENT_SEED);
            let mut buf = vec![0.0; law.dim];
            let mut acc = 0.0;
            for _ in 0..MC_MOMENT_SAMPLES {
                law.sample_into(&mut rng, &mut buf);
                let r = buf.iter().map(|x| x * x).sum::<f64>().sqrt();
                acc += r.powf(theta);
            }
            acc / MC_MOMENT_SAMPLES as f64
        }
    };
    if !moment.is_finite() {
        return Err(Error::Domain(format!("γ_{theta} is not finite")));
    }
    Ok(moment.powf(1.0 / theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_closed_forms() {
        let rad = ValueLaw::scalar(Marginal::Rademacher);
        for theta in [0.5, 1.0, 3.0, 7.5] {
            assert_relative_eq!(gamma_moment(&rad, theta).unwrap(), 1.0);
        }
        let n = ValueLaw::scalar(Marginal::standard_normal());
        assert_relative_eq!(gamma_moment(&n, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_relative_eq!(
            gamma_moment(&n, 4.0).unwrap(),
            3f64.powf(0.25),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            gamma_moment(&n, 1.0).unwrap(),
            (2.0 / std::f64::consts::PI).sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn vector_normal_gamma_matches_chi() {
        let law = ValueLaw::new(Marginal::standard_normal(), 3).unwrap();
        // E|X|^2 = 3
        assert_relative_eq!(
            gamma_moment(&law, 2.0).unwrap(),
            3f64.sqrt(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn heavy_tail_diverges() {
        let t = ValueLaw::scalar(Marginal::StudentT { dof: 5.0 });
        assert!(matches!(gamma_moment(&t, 16.0), Err(Error::Domain(_))));
        assert!(gamma_moment(&t, 2.0).is_ok());
        // Var t_5 = 5/3
        assert_relative_eq!(
            Marginal::StudentT { dof: 5.0 }.raw_moment(2).unwrap(),
            5.0 / 3.0
        );
    }

    #[test]
    fn convolution_moments() {
        let c = Marginal::Convolution {
            noise: Box::new(Marginal::Rademacher),
            weights: vec![1.0, 1.0],
        };
        // ε1+ε2 ∈ {−2,0,2} w.p. ¼,½,¼
        assert_relative_eq!(c.raw_moment(2).unwrap(), 2.0);
        assert_relative_eq!(c.raw_moment(4).unwrap(), 8.0);
        assert_eq!(c.raw_moment(3).unwrap(), 0.0);
        let g = Marginal::Convolution {
            noise: Box::new(Marginal::standard_normal()),
            weights: vec![1.0, 1.0],
        };
        assert_eq!(
            g.normalized(),
            Marginal::Normal {
                std_dev: 2f64.sqrt()
            }
        );
    }

    #[test]
    fn uniform_moments() {
        let u = Marginal::Uniform { half_width: 2.0 };
        assert_relative_eq!(u.raw_moment(2).unwrap(), 4.0 / 3.0);
        assert_relative_eq!(u.abs_moment(1.0).unwrap().unwrap(), 1.0);
    }
}
