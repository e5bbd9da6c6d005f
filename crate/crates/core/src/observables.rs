//! The observable `F(x_1, …, x_ℓ)`, `x_j ∈ ℝ^℘`, its centering and the
//! telescoping split `F − F̄ = F_1 + … + F_ℓ` with
//! `F_i = ∫F dμ(x_{i+1})⋯dμ(x_ℓ) − ∫F dμ(x_i)⋯dμ(x_ℓ)`.
//!
//! Polynomials are integrated exactly from moments; other functions go
//! through [`crate::quadrature`].

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use crate::distributions::gamma_moment;
use crate::distributions::ValueLaw;
use crate::error::{validation, Error, Result};
use crate::quadrature::{rule_for, QuadratureConfig, QuadratureScheme, Rule};

/// Regularity constants: `|F(x) − F(y)| ≤ K(1 + Σ|x_j|^ι + Σ|y_j|^ι) Σ|x_j − y_j|^κ`
/// and `|F(x)| ≤ K(1 + Σ|x_j|^ι)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Holder {
    pub iota: f64,
    pub k: f64,
    pub kappa: f64,
}

impl Holder {
    pub fn new(iota: f64, k: f64, kappa: f64) -> Result<Self> {
        let h = Holder { iota, k, kappa };
        h.validate()?;
        Ok(h)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.iota >= 0.0 && self.iota.is_finite()) {
            return Err(validation(format!(
                "ι must be nonnegative, got {}",
                self.iota
            )));
        }
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(validation(format!("K must be positive, got {}", self.k)));
        }
        if !(self.kappa > 0.0 && self.kappa <= 1.0) {
            return Err(validation(format!(
                "κ must lie in (0, 1], got {}",
                self.kappa
            )));
        }
        Ok(())
    }
}

/// `x_{arg, comp}^power`; `arg` is zero-based.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Factor {
    pub arg: usize,
    #[serde(default)]
    pub comp: usize,
    #[serde(default = "one")]
    pub power: u32,
}

fn one() -> u32 {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub coeff: f64,
    #[serde(default)]
    pub factors: Vec<Factor>,
}

impl Term {
    pub fn new(coeff: f64, factors: Vec<Factor>) -> Self {
        Term { coeff, factors }
    }

    pub fn degree(&self) -> u32 {
        self.factors.iter().map(|f| f.power).sum()
    }
}

/// A real polynomial in the coordinates `x_{j,p}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Polynomial {
    pub terms: Vec<Term>,
}

impl Polynomial {
    pub fn new(terms: Vec<Term>) -> Self {
        Polynomial { terms }.simplify()
    }

    pub fn constant(c: f64) -> Self {
        Polynomial::new(vec![Term::new(c, Vec::new())])
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(Term::degree).max().unwrap_or(0)
    }

    /// Largest argument index used, plus one.
    pub fn arity(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|f| f.arg + 1))
            .max()
            .unwrap_or(0)
    }

    pub fn max_comp(&self) -> usize {
        self.terms
            .iter()
            .flat_map(|t| t.factors.iter().map(|f| f.comp + 1))
            .max()
            .unwrap_or(0)
    }

    /// Merges repeated factors and like monomials and drops zero terms.
    pub fn simplify(self) -> Self {
        let mut acc: BTreeMap<Vec<Factor>, f64> = BTreeMap::new();
        for term in self.terms {
            let mut powers: BTreeMap<(usize, usize), u32> = BTreeMap::new();
            for f in &term.factors {
                *powers.entry((f.arg, f.comp)).or_default() += f.power;
            }
            let key: Vec<Factor> = powers
                .into_iter()
                .filter(|&(_, p)| p > 0)
                .map(|((arg, comp), power)| Factor { arg, comp, power })
                .collect();
            *acc.entry(key).or_default() += term.coeff;
        }
        Polynomial {
            terms: acc
                .into_iter()
                .filter(|(_, c)| *c != 0.0)
                .map(|(factors, coeff)| Term { coeff, factors })
                .collect(),
        }
    }

    /// Evaluates at `x` laid out as `x[arg·dim + comp]`.
    #[inline]
    pub fn eval(&self, x: &[f64], dim: usize) -> f64 {
        let mut acc = 0.0;
        for t in &self.terms {
            let mut v = t.coeff;
            for f in &t.factors {
                v *= x[f.arg * dim + f.comp].powi(f.power as i32);
            }
            acc += v;
        }
        acc
    }

    /// Integrates out every argument with index `≥ from` against `law`.
    pub fn integrate_tail(&self, from: usize, law: &ValueLaw) -> Result<Polynomial> {
        let mut out = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut coeff = t.coeff;
            let mut kept = Vec::new();
            for f in &t.factors {
                if f.arg >= from {
                    coeff *= law.marginal.raw_moment(f.power).ok_or_else(|| {
                        Error::Domain(format!("moment of order {} diverges", f.power))
                    })?;
                } else {
                    kept.push(*f);
                }
            }
            out.push(Term {
                coeff,
                factors: kept,
            });
        }
        Ok(Polynomial { terms: out }.simplify())
    }

    pub fn add(&self, other: &Polynomial) -> Polynomial {
        Polynomial {
            terms: self.terms.iter().chain(&other.terms).cloned().collect(),
        }
        .simplify()
    }

    pub fn scale(&self, c: f64) -> Polynomial {
        Polynomial {
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    coeff: c * t.coeff,
                    factors: t.factors.clone(),
                })
                .collect(),
        }
        .simplify()
    }

    pub fn sub(&self, other: &Polynomial) -> Polynomial {
        self.add(&other.scale(-1.0))
    }

    /// The constant term.
    pub fn constant_term(&self) -> f64 {
        self.terms
            .iter()
            .filter(|t| t.factors.is_empty())
            .map(|t| t.coeff)
            .sum()
    }
}

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

#[derive(Clone)]
pub enum ObservableKind {
    Polynomial(Polynomial),
    Custom { name: String, f: ScalarFn },
}

impl fmt::Debug for ObservableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservableKind::Polynomial(p) => f.debug_tuple("Polynomial").field(p).finish(),
            ObservableKind::Custom { name, .. } => {
                f.debug_struct("Custom").field("name", name).finish()
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Observable {
    pub arity: usize,
    pub dim: usize,
    pub kind: ObservableKind,
    pub holder: Holder,
}

impl Observable {
    fn from_poly(arity: usize, dim: usize, poly: Polynomial, holder: Holder) -> Result<Self> {
        if arity == 0 || dim == 0 {
            return Err(validation("observable needs ℓ ≥ 1 and ℘ ≥ 1"));
        }
        if poly.arity() > arity || poly.max_comp() > dim {
            return Err(validation("polynomial uses coordinates beyond (ℓ, ℘)"));
        }
        holder.validate()?;
        Ok(Observable {
            arity,
            dim,
            kind: ObservableKind::Polynomial(poly),
            holder,
        })
    }

    /// `Σ_j c_j x_{j,1}`.
    pub fn linear(coeffs: &[f64]) -> Result<Self> {
        let terms = coeffs
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                Term::new(
                    c,
                    vec![Factor {
                        arg: j,
                        comp: 0,
                        power: 1,
                    }],
                )
            })
            .collect();
        let k = coeffs
            .iter()
            .fold(0.0f64, |m, c| m.max(c.abs()))
            .max(f64::MIN_POSITIVE);
        Self::from_poly(
            coeffs.len(),
            1,
            Polynomial::new(terms),
            Holder {
                iota: 1.0,
                k,
                kappa: 1.0,
            },
        )
    }

    /// `∏_j x_{j, comps[j]}` on `ℝ^{dim·ℓ}`.
    pub fn product(comps: &[usize], dim: usize) -> Result<Self> {
        let ell = comps.len();
        let factors = comps
            .iter()
            .enumerate()
            .map(|(j, &comp)| Factor {
                arg: j,
                comp,
                power: 1,
            })
            .collect();
        let h = Holder {
            iota: ell as f64,
            k: ell as f64,
            kappa: 1.0,
        };
        Self::from_poly(ell, dim, Polynomial::new(vec![Term::new(1.0, factors)]), h)
    }

    /// `x_{arg,1}^p` as a function of `arity` arguments.
    pub fn power(arity: usize, arg: usize, p: u32) -> Result<Self> {
        let poly = Polynomial::new(vec![Term::new(
            1.0,
            vec![Factor {
                arg,
                comp: 0,
                power: p,
            }],
        )]);
        let pf = p.max(1) as f64;
        Self::from_poly(
            arity,
            1,
            poly,
            Holder {
                iota: pf,
                k: pf,
                kappa: 1.0,
            },
        )
    }

    /// A polynomial with `ι = degree`, `K = degree·Σ|c|` unless given.
    pub fn polynomial(
        arity: usize,
        dim: usize,
        poly: Polynomial,
        holder: Option<Holder>,
    ) -> Result<Self> {
        let holder = holder.unwrap_or_else(|| {
            let d = poly.degree().max(1) as f64;
            let l1: f64 = poly.terms.iter().map(|t| t.coeff.abs()).sum();
            Holder {
                iota: d,
                k: (d * l1).max(1.0),
                kappa: 1.0,
            }
        });
        Self::from_poly(arity, dim, poly, holder)
    }

    pub fn zero(arity: usize, dim: usize) -> Result<Self> {
        Self::from_poly(
            arity,
            dim,
            Polynomial::default(),
            Holder {
                iota: 1.0,
                k: 1.0,
                kappa: 1.0,
            },
        )
    }

    pub fn custom(
        arity: usize,
        dim: usize,
        name: impl Into<String>,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        holder: Holder,
    ) -> Result<Self> {
        if arity == 0 || dim == 0 {
            return Err(validation("observable needs ℓ ≥ 1 and ℘ ≥ 1"));
        }
        holder.validate()?;
        Ok(Observable {
            arity,
            dim,
            kind: ObservableKind::Custom {
                name: name.into(),
                f: Arc::new(f),
            },
            holder,
        })
    }

    pub fn with_holder(mut self, holder: Holder) -> Result<Self> {
        holder.validate()?;
        self.holder = holder;
        Ok(self)
    }

    pub fn name(&self) -> String {
        match &self.kind {
            ObservableKind::Polynomial(_) => "polynomial".into(),
            ObservableKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn as_polynomial(&self) -> Option<&Polynomial> {
        match &self.kind {
            ObservableKind::Polynomial(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(&self.kind, ObservableKind::Polynomial(p) if p.is_zero())
    }

    /// `F(x)` for `x ∈ ℝ^{℘ℓ}` laid out argument-major.
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ObservableKind::Polynomial(p) => p.eval(x, self.dim),
            ObservableKind::Custom { f, .. } => f(x),
        }
    }

    /// `c·F`, with `K` scaled accordingly.
    pub fn scaled(&self, c: f64) -> Observable {
        let kind = match &self.kind {
            ObservableKind::Polynomial(p) => ObservableKind::Polynomial(p.scale(c)),
            ObservableKind::Custom { name, f } => {
                let f = f.clone();
                ObservableKind::Custom {
                    name: format!("{c}*{name}"),
                    f: Arc::new(move |x: &[f64]| c * f(x)),
                }
            }
        };
        let k = (self.holder.k * c.abs()).max(f64::MIN_POSITIVE);
        Observable {
            kind,
            holder: Holder { k, ..self.holder },
            ..self.clone()
        }
    }
}

/// Outcome of [`center`].
#[derive(Clone, Debug)]
pub struct Centered {
    pub mean: f64,
    pub observable: Observable,
    pub scheme: QuadratureScheme,
}

fn check_law(obs: &Observable, law: &ValueLaw) -> Result<()> {
    if law.dim != obs.dim {
        return Err(validation(format!(
            "observable expects ℘={}, law has ℘={}",
            obs.dim, law.dim
        )));
    }
    law.marginal.validate()
}

/// `F̄ = ∫F dμ^{⊗ℓ}` and `F − F̄`.
pub fn center(obs: &Observable, law: &ValueLaw, cfg: &QuadratureConfig) -> Result<Centered> {
    check_law(obs, law)?;
    match &obs.kind {
        ObservableKind::Polynomial(p) => {
            let mean = p.integrate_tail(0, law)?.constant_term();
            let observable = Observable {
                kind: ObservableKind::Polynomial(p.sub(&Polynomial::constant(mean))),
                ..obs.clone()
            };
            Ok(Centered {
                mean,
                observable,
                scheme: QuadratureScheme::ClosedForm,
            })
        }
        ObservableKind::Custom { name, f } => {
            let rule = rule_for(law, obs.arity, cfg)?;
            let mean = rule.integrate(|x| f(x));
            if !mean.is_finite() {
                return Err(Error::Numeric(format!(
                    "mean of {name} is not finite under {:?} ({} points)",
                    rule.scheme(),
                    rule.len()
                )));
            }
            let f = f.clone();
            let observable = Observable {
                kind: ObservableKind::Custom {
                    name: format!("{name}-centered"),
                    f: Arc::new(move |x: &[f64]| f(x) - mean),
                },
                ..obs.clone()
            };
            Ok(Centered {
                mean,
                observable,
                scheme: rule.scheme().clone(),
            })
        }
    }
}

#[derive(Clone, Debug)]
enum Component {
    Poly(Polynomial),
    /// `F_i = G_i − G_{i−1}` with `G_j(x_1..x_j) = ∫F_c(x_1..x_j, y) dμ^{ℓ−j}(y)`.
    Quad,
}

/// `F_1, …, F_ℓ` of the centered observable.
#[derive(Clone)]
pub struct DecomposedObservable {
    pub mean: f64,
    pub arity: usize,
    pub dim: usize,
    pub law: ValueLaw,
    pub scheme: QuadratureScheme,
    components: Vec<Component>,
    centered: Observable,
    /// `tails[j]`: rule over the last `ℓ − j` arguments, for `j < ℓ`.
    tails: Vec<Arc<Rule>>,
}

impl fmt::Debug for DecomposedObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DecomposedObservable")
            .field("mean", &self.mean)
            .field("arity", &self.arity)
            .field("dim", &self.dim)
            .field("scheme", &self.scheme)
            .field("components", &self.components)
            .finish()
    }
}

/// Splits `F − F̄` into its martingale-difference components.
pub fn decompose(
    obs: &Observable,
    law: &ValueLaw,
    cfg: &QuadratureConfig,
) -> Result<DecomposedObservable> {
    let Centered {
        mean,
        observable,
        scheme,
    } = center(obs, law, cfg)?;
    let ell = obs.arity;
    match &observable.kind {
        ObservableKind::Polynomial(p) => {
            let mut partial = Vec::with_capacity(ell + 1);
            for j in 0..=ell {
                partial.push(p.integrate_tail(j, law)?);
            }
            let components = (1..=ell)
                .map(|i| Component::Poly(partial[i].sub(&partial[i - 1])))
                .collect();
            Ok(DecomposedObservable {
                mean,
                arity: ell,
                dim: obs.dim,
                law: law.clone(),
                scheme,
                components,
                centered: observable,
                tails: Vec::new(),
            })
        }
        ObservableKind::Custom { .. } => {
            let mut tails = Vec::with_capacity(ell);
            for j in 0..ell {
                tails.push(Arc::new(rule_for(law, ell - j, cfg)?));
            }
            let scheme = tails[0].scheme().clone();
            Ok(DecomposedObservable {
                mean,
                arity: ell,
                dim: obs.dim,
                law: law.clone(),
                scheme,
                components: vec![Component::Quad; ell],
                centered: observable,
                tails,
            })
        }
    }
}

impl DecomposedObservable {
    pub fn centered(&self) -> &Observable {
        &self.centered
    }

    /// Closed form of `F_i` (1-based), when `F` is a polynomial.
    pub fn component_polynomial(&self, i: usize) -> Option<&Polynomial> {
        match self.components.get(i.wrapping_sub(1))? {
            Component::Poly(p) => Some(p),
            Component::Quad => None,
        }
    }

    pub fn is_zero_component(&self, i: usize) -> bool {
        matches!(self.component_polynomial(i), Some(p) if p.is_zero())
    }

    fn g(&self, j: usize, prefix: &[f64]) -> f64 {
        if j == 0 {
            return 0.0;
        }
        if j == self.arity {
            return self.centered.eval(prefix);
        }
        let mut buf = Vec::with_capacity(self.arity * self.dim);
        let f = |x: &[f64]| self.centered.eval(x);
        self.tails[j].integrate_with_prefix(&prefix[..j * self.dim], &mut buf, &f)
    }

    /// `F_i(x_1, …, x_i)`; `x` holds at least `i·℘` coordinates.
    #[inline]
    pub fn eval_component(&self, i: usize, x: &[f64]) -> f64 {
        match &self.components[i - 1] {
            Component::Poly(p) => p.eval(x, self.dim),
            Component::Quad => self.g(i, x) - self.g(i - 1, x),
        }
    }

    /// `F(x) − F̄`.
    pub fn eval_centered(&self, x: &[f64]) -> f64 {
        self.centered.eval(x)
    }

    /// Checks `Σ_i F_i = F − F̄` and `∫F_i(x_{<i}, y) dμ(y) = 0` at random points.
    pub fn verify(
        &self,
        points: usize,
        prefixes: usize,
        seed: u64,
        cfg: &QuadratureConfig,
    ) -> Result<DecompositionCheck> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = self.arity * self.dim;
        let mut x = vec![0.0; width];
        let deterministic = self.scheme.is_deterministic();
        let mut worst_recon: f64 = 0.0;
        let mut recon_ok = true;
        for _ in 0..points {
            self.law.sample_into(&mut rng, &mut x);
            let target = self.eval_centered(&x);
            let total: f64 = (1..=self.arity).map(|i| self.eval_component(i, &x)).sum();
            let err = (total - target).abs();
            worst_recon = worst_recon.max(err);
            if err > DETERMINISTIC_TOL * (1.0 + target.abs()) {
                recon_ok = false;
            }
        }
        let one = rule_for(&self.law, 1, cfg)?;
        let mut worst_mean: f64 = 0.0;
        let mut mean_ok = true;
        let mut buf = Vec::with_capacity(width);
        for i in 1..=self.arity {
            for _ in 0..prefixes {
                self.law.sample_into(&mut rng, &mut x);
                let prefix = &x[..(i - 1) * self.dim];
                let f = |y: &[f64]| self.eval_component(i, y);
                let m = one.integrate_with_prefix(prefix, &mut buf, &f);
                let abs = one.integrate_with_prefix(prefix, &mut buf, &|y: &[f64]| {
                    self.eval_component(i, y).abs()
                });
                let tol = if deterministic && one.scheme().is_deterministic() {
                    DETERMINISTIC_TOL * (1.0 + abs)
                } else {
                    let sq = one.integrate_with_prefix(prefix, &mut buf, &|y: &[f64]| {
                        self.eval_component(i, y).powi(2)
                    });
                    3.0 * ((sq - m * m).max(0.0) / one.len() as f64).sqrt() + DETERMINISTIC_TOL
                };
                worst_mean = worst_mean.max(m.abs());
                if m.abs() > tol {
                    mean_ok = false;
                }
            }
        }
        Ok(DecompositionCheck {
            max_reconstruction_error: worst_recon,
            max_mean_error: worst_mean,
            reconstruction_pass: recon_ok,
            zero_mean_pass: mean_ok,
        })
    }
}

/// Tolerance for deterministic (closed-form or quadrature-exact) checks.
pub const DETERMINISTIC_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecompositionCheck {
    pub max_reconstruction_error: f64,
    pub max_mean_error: f64,
    pub reconstruction_pass: bool,
    pub zero_mean_pass: bool,
}

impl DecompositionCheck {
    pub fn pass(&self) -> bool {
        self.reconstruction_pass && self.zero_mean_pass
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HolderReport {
    pub trials: usize,
    /// Largest `|F(x) − F(y)| / (K(1 + Σ|x_j|^ι + Σ|y_j|^ι) Σ|x_j − y_j|^κ)` seen.
    pub worst_lipschitz_ratio: f64,
    /// Largest `|F(x)| / (K(1 + Σ|x_j|^ι))` seen.
    pub worst_growth_ratio: f64,
    pub lipschitz_pass: bool,
    pub growth_pass: bool,
    /// Verdict on the increment inequality; the growth bound is reported
    /// separately because common observables (e.g. `x₁x₂` with `ι = 1`)
    /// satisfy the former but not the latter.
    pub pass: bool,
}

const TILTS: [f64; 4] = [1.0, 2.0, 4.0, 8.0];

/// Spot-checks the declared `(ι, K, κ)` on random pairs drawn from `μ`
/// inflated by factors 1, 2, 4, 8; half of the pairs are near neighbors.
pub fn check_holder(obs: &Observable, law: &ValueLaw, trials: usize, seed: u64) -> HolderReport {
    let Holder { iota, k, kappa } = obs.holder;
    let ell = obs.arity;
    let dim = obs.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; ell * dim];
    let mut y = vec![0.0; ell * dim];
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    let mut worst_l: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for t in 0..trials.max(1) {
        let tilt = TILTS[t % TILTS.len()];
        law.sample_into(&mut rng, &mut x);
        x.iter_mut().for_each(|v| *v *= tilt);
        if t % 2 == 0 {
            law.sample_into(&mut rng, &mut y);
            y.iter_mut().for_each(|v| *v *= tilt);
        } else {
            let h = 10f64.powf(-rng.random_range(1.0..6.0));
            for (yi, xi) in y.iter_mut().zip(&x) {
                *yi = xi + h * (2.0 * rng.random::<f64>() - 1.0);
            }
        }
        let (mut sx, mut sy, mut dist) = (0.0, 0.0, 0.0);
        for j in 0..ell {
            let xj = &x[j * dim..(j + 1) * dim];
            let yj = &y[j * dim..(j + 1) * dim];
            sx += norm(xj).powf(iota);
            sy += norm(yj).powf(iota);
            let d: Vec<f64> = xj.iter().zip(yj).map(|(a, b)| a - b).collect();
            dist += norm(&d).powf(kappa);
        }
        let fx = obs.eval(&x);
        let fy = obs.eval(&y);
        let lhs = (fx - fy).abs();
        let rhs = k * (1.0 + sx + sy) * dist;
        let ratio = if rhs > 0.0 {
            lhs / rhs
        } else if lhs > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        worst_l = worst_l.max(if ratio.is_nan() { f64::INFINITY } else { ratio });
        let g = fx.abs() / (k * (1.0 + sx));
        worst_g = worst_g.max(if g.is_nan() { f64::INFINITY } else { g });
    }
    let slack = 1.0 + 1e-12;
    HolderReport {
        trials: trials.max(1),
        worst_lipschitz_ratio: worst_l,
        worst_growth_ratio: worst_g,
        lipschitz_pass: worst_l <= slack,
        growth_pass: worst_g <= slack,
        pass: worst_l <= slack,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Marginal;
    use approx::assert_relative_eq;

    fn normal() -> ValueLaw {
        ValueLaw::scalar(Marginal::standard_normal())
    }

    fn cfg() -> QuadratureConfig {
        QuadratureConfig::default()
    }

    fn x(i: usize) -> Factor {
        Factor {
            arg: i,
            comp: 0,
            power: 1,
        }
    }

    #[test]
    fn centering_examples() {
        let c = center(&Observable::product(&[0, 0], 1).unwrap(), &normal(), &cfg()).unwrap();
        assert_eq!(c.mean, 0.0);
        let c = center(&Observable::power(1, 0, 2).unwrap(), &normal(), &cfg()).unwrap();
        assert_eq!(c.mean, 1.0);
        let again = center(&c.observable, &normal(), &cfg()).unwrap();
        assert_eq!(again.mean, 0.0);
        let rad = ValueLaw::scalar(Marginal::Rademacher);
        assert_eq!(
            center(&Observable::linear(&[1.0, 1.0]).unwrap(), &rad, &cfg())
                .unwrap()
                .mean,
            0.0
        );
    }

    #[test]
    fn decomposition_examples() {
        let d = decompose(&Observable::linear(&[1.0, 1.0]).unwrap(), &normal(), &cfg()).unwrap();
        assert_eq!(
            d.component_polynomial(1).unwrap(),
            &Polynomial::new(vec![Term::new(1.0, vec![x(0)])])
        );
        assert_eq!(
            d.component_polynomial(2).unwrap(),
            &Polynomial::new(vec![Term::new(1.0, vec![x(1)])])
        );

        let d = decompose(&Observable::product(&[0, 0], 1).unwrap(), &normal(), &cfg()).unwrap();
        assert!(d.is_zero_component(1));
        assert_eq!(
            d.component_polynomial(2).unwrap(),
            &Polynomial::new(vec![Term::new(1.0, vec![x(0), x(1)])])
        );

        let d = decompose(&Observable::power(1, 0, 3).unwrap(), &normal(), &cfg()).unwrap();
        assert_eq!(d.eval_component(1, &[2.0]), 8.0);
    }

    #[test]
    fn custom_decomposition_matches_closed_form() {
        let f = Observable::custom(
            2,
            1,
            "sum",
            |x| x[0] + x[1] + x[0] * x[1] * x[1],
            Holder::new(2.0, 3.0, 1.0).unwrap(),
        )
        .unwrap();
        let d = decompose(&f, &normal(), &cfg()).unwrap();
        assert!(d.scheme.is_deterministic());
        // F_1 = x₁ + x₁·E y² = 2x₁, F_2 = x₂ + x₁x₂² − x₁
        assert_relative_eq!(d.eval_component(1, &[1.5]), 3.0, epsilon = 1e-10);
        assert_relative_eq!(
            d.eval_component(2, &[1.5, 2.0]),
            2.0 + 6.0 - 1.5,
            epsilon = 1e-10
        );
        assert!(d.verify(200, 20, 1, &cfg()).unwrap().pass());
    }

    #[test]
    fn holder_examples() {
        let law = normal();
        let prod = Observable::product(&[0, 0], 1)
            .unwrap()
            .with_holder(Holder::new(1.0, 1.0, 1.0).unwrap())
            .unwrap();
        let r = check_holder(&prod, &law, 4000, 3);
        assert!(r.pass, "{r:?}");
        assert!(!r.growth_pass);

        let lin = Observable::linear(&[1.0])
            .unwrap()
            .with_holder(Holder::new(0.0, 1.0, 1.0).unwrap())
            .unwrap();
        let r = check_holder(&lin, &law, 4000, 3);
        assert!(r.pass && r.worst_lipschitz_ratio <= 1.0);

        let exp = Observable::custom(
            1,
            1,
            "exp",
            |x| x[0].exp(),
            Holder::new(4.0, 10.0, 1.0).unwrap(),
        )
        .unwrap();
        assert!(!check_holder(&exp, &law, 4000, 3).pass);
    }

    #[test]
    fn builtin_holder_defaults_hold() {
        let law = normal();
        for obs in [
            Observable::linear(&[2.0, -1.0]).unwrap(),
            Observable::product(&[0, 0, 0], 1).unwrap(),
            Observable::power(2, 1, 3).unwrap(),
        ] {
            let r = check_holder(&obs, &law, 4000, 5);
            assert!(r.lipschitz_pass && r.growth_pass, "{obs:?}: {r:?}");
        }
    }

    #[test]
    fn polynomial_simplify_merges() {
        let p = Polynomial::new(vec![
            Term::new(1.0, vec![x(0), x(0)]),
            Term::new(
                2.0,
                vec![Factor {
                    arg: 0,
                    comp: 0,
                    power: 2,
                }],
            ),
            Term::new(1.0, vec![x(1)]),
            Term::new(-1.0, vec![x(1)]),
        ]);
        assert_eq!(p.terms.len(), 1);
        assert_eq!(p.terms[0].coeff, 3.0);
        assert_eq!(p.eval(&[2.0, 5.0], 1), 12.0);
    }

    #[test]
    fn invalid_holder_rejected() {
        assert!(Holder::new(1.0, 1.0, 1.5).is_err());
        assert!(Holder::new(-1.0, 1.0, 1.0).is_err());
        assert!(Holder::new(1.0, 0.0, 1.0).is_err());
    }
}
