//! The predicted limit: lag integrals `c_{i,j}(u)`, the prefactor matrix
//! `D_{i,j} = (υ/(ij))^ν Σ_u c_{i,j}(u)` with `υ = gcd(i,j)`, high-index
//! variances, and the Diophantine counting oracle behind the prefactor.
//!
//! In `c_{i,j}(u)` with `u = υu'`, `i = υi'`, `j = υj'`, the coordinate
//! `x_{αi'}` of `F_i` sits at `αi'·n` and `y_{αj'}` of `F_j` at `αj'·n'`, so
//! the two are a lag-`αu'` pair (`α = 1..υ`). Every other coordinate is
//! asymptotically far from everything and integrates independently.

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use num_integer::Integer;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{binomial, Marginal};
use crate::error::{validation, Error, Result};
use crate::lattice::{for_each_point, LatticePoint, TimePoint, SNAP};
use crate::noise::derive_seed;
use crate::observables::{DecomposedObservable, Polynomial};
use crate::qmaps::QFamily;
use crate::random_fields::{generate, pair_law, FieldSpec, PairLaw, SiteCover};
use crate::summation::NeumaierSum;

pub const PSD_TOL: f64 = 1e-8;
pub const DEFAULT_MC_SAMPLES: usize = 100_000;
const DEFAULT_MC_SEED: u64 = 0x636f_7661;

/// Exponent on `υ/(ij)` in `D_{i,j}`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrefactorExponent {
    /// `(υ/(ij))^ν`, what the lattice-point count produces.
    #[default]
    Dimension,
    /// `υ/(ij)` regardless of `ν`.
    Literal,
}

impl PrefactorExponent {
    pub fn exponent(self, nu: usize) -> i32 {
        match self {
            PrefactorExponent::Dimension => nu as i32,
            PrefactorExponent::Literal => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceOptions {
    /// Euclidean radius of the lag sum; defaults to `2m·k`.
    pub truncation_radius: Option<u64>,
    #[serde(default)]
    pub prefactor: PrefactorExponent,
    /// Samples for Monte Carlo lag integrals (custom observables only).
    pub mc_samples: usize,
    pub mc_seed: u64,
}

impl Default for CovarianceOptions {
    fn default() -> Self {
        CovarianceOptions {
            truncation_radius: None,
            prefactor: PrefactorExponent::Dimension,
            mc_samples: DEFAULT_MC_SAMPLES,
            mc_seed: DEFAULT_MC_SEED,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CovarianceModel {
    pub nu: usize,
    pub k: usize,
    pub ell: usize,
    #[serde(rename = "D")]
    pub d: Vec<Vec<f64>>,
    /// `∫F_i² dμ^{⊗i}` for `i = k+1..=ℓ`.
    pub high_variances: Vec<f64>,
    pub truncation_radius: u64,
    pub tail_bound: f64,
    pub prefactor_exponent: PrefactorExponent,
    /// `closed_form` or `monte_carlo`.
    pub quadrature: String,
    pub min_eigenvalue: f64,
    pub psd: bool,
}

impl CovarianceModel {
    /// `D_{i,j}` (1-based).
    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.d[i - 1][j - 1]
    }

    pub fn high_variance(&self, i: usize) -> Option<f64> {
        i.checked_sub(self.k + 1)
            .and_then(|x| self.high_variances.get(x))
            .copied()
    }

    /// Predicted `E ξ_{i,N}(s) ξ_{j,N}(t)` in the limit.
    pub fn predicted(&self, i: usize, j: usize, s: &TimePoint, t: &TimePoint) -> f64 {
        let m = s.min_product(t);
        if i <= self.k && j <= self.k {
            self.d(i, j) * m
        } else if i == j {
            self.high_variance(i).unwrap_or(0.0) * m
        } else {
            0.0
        }
    }
}

/// `x`-argument `a` paired with `y`-argument `b` (0-based) under `law`.
type Pairing = Vec<(usize, usize, PairLaw)>;

/// The pairing of `c_{i,j}(u)`, or `None` when `gcd(i,j)` does not divide `u`.
fn pairing(spec: &FieldSpec, i: usize, j: usize, u: &LatticePoint) -> Option<Pairing> {
    let g = i.gcd(&j);
    if u.coords().iter().any(|c| c % g as i64 != 0) {
        return None;
    }
    let (ip, jp) = (i / g, j / g);
    let up = LatticePoint::new(u.coords().iter().map(|c| c / g as i64).collect());
    Some(
        (1..=g)
            .map(|a| (a * ip - 1, a * jp - 1, pair_law(spec, &up.scale(a as i64))))
            .collect(),
    )
}

fn raw(m: &Marginal, e: u32) -> Result<f64> {
    m.raw_moment(e)
        .ok_or_else(|| Error::Numeric(format!("moment of order {e} is not finite for {m:?}")))
}

fn gaussian_raw(var: f64, e: u32) -> f64 {
    if e % 2 == 1 {
        return 0.0;
    }
    let dfact: f64 = (1..e).step_by(2).map(|k| k as f64).product();
    var.powi(e as i32 / 2) * dfact
}

/// `E[X^r Y^s]` under one pair law.
fn joint_moment(law: &PairLaw, marginal: &Marginal, r: u32, s: u32) -> Result<f64> {
    match law {
        PairLaw::Diagonal => raw(marginal, r + s),
        PairLaw::Product => Ok(raw(marginal, r)? * raw(marginal, s)?),
        PairLaw::BivariateGaussian {
            variance,
            covariance,
        } => {
            // Y = (c/v) X + Z, Z ⟂ X
            let beta = covariance / variance;
            let zvar = (variance - covariance * beta).max(0.0);
            Ok((0..=s)
                .map(|k| {
                    binomial(s as usize, k as usize)
                        * beta.powi(k as i32)
                        * gaussian_raw(*variance, r + k)
                        * gaussian_raw(zvar, s - k)
                })
                .sum())
        }
        PairLaw::Empirical { samples, .. } => {
            let acc: NeumaierSum = samples
                .iter()
                .map(|(x, y)| x.powi(r as i32) * y.powi(s as i32))
                .collect();
            Ok(acc.sum() / samples.len() as f64)
        }
    }
}

/// `E[P(x) Q(y)]` with `x ∈ ℝ^{i℘}`, `y ∈ ℝ^{j℘}` coupled by `pairs`.
fn poly_expectation(
    p: &Polynomial,
    q: &Polynomial,
    i: usize,
    j: usize,
    dim: usize,
    pairs: &Pairing,
    marginal: &Marginal,
) -> Result<f64> {
    let mut x_paired = vec![false; i];
    let mut y_paired = vec![false; j];
    for (a, b, _) in pairs {
        x_paired[*a] = true;
        y_paired[*b] = true;
    }
    let mut acc = NeumaierSum::default();
    let mut xp = vec![0u32; i * dim];
    let mut yp = vec![0u32; j * dim];
    for tp in &p.terms {
        for tq in &q.terms {
            let coeff = tp.coeff * tq.coeff;
            if coeff == 0.0 {
                continue;
            }
            xp.iter_mut().for_each(|e| *e = 0);
            yp.iter_mut().for_each(|e| *e = 0);
            for f in &tp.factors {
                xp[f.arg * dim + f.comp] += f.power;
            }
            for f in &tq.factors {
                yp[f.arg * dim + f.comp] += f.power;
            }
            let mut v = coeff;
            for (a, b, law) in pairs {
                for c in 0..dim {
                    v *= joint_moment(law, marginal, xp[a * dim + c], yp[b * dim + c])?;
                }
            }
            for a in (0..i).filter(|a| !x_paired[*a]) {
                for c in 0..dim {
                    v *= raw(marginal, xp[a * dim + c])?;
                }
            }
            for b in (0..j).filter(|b| !y_paired[*b]) {
                for c in 0..dim {
                    v *= raw(marginal, yp[b * dim + c])?;
                }
            }
            acc.add(v);
        }
    }
    Ok(acc.sum())
}

fn sample_pair<R: Rng>(law: &PairLaw, marginal: &Marginal, rng: &mut R) -> (f64, f64) {
    match law {
        PairLaw::Diagonal => {
            let x = marginal.sample(rng);
            (x, x)
        }
        PairLaw::Product => (marginal.sample(rng), marginal.sample(rng)),
        PairLaw::BivariateGaussian {
            variance,
            covariance,
        } => {
            let z = Marginal::standard_normal();
            let x = variance.sqrt() * z.sample(rng);
            let beta = covariance / variance;
            let zsd = (variance - covariance * beta).max(0.0).sqrt();
            (x, beta * x + zsd * z.sample(rng))
        }
        PairLaw::Empirical { samples, .. } => samples[rng.random_range(0..samples.len())],
    }
}

/// Monte Carlo `E[F_i(x) F_j(y)]` under `pairs`.
fn mc_expectation(
    dec: &DecomposedObservable,
    i: usize,
    j: usize,
    pairs: &Pairing,
    samples: usize,
    seed: u64,
) -> f64 {
    let dim = dec.dim;
    let marginal = &dec.law.marginal;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = vec![0.0; i * dim];
    let mut y = vec![0.0; j * dim];
    let mut acc = NeumaierSum::default();
    for _ in 0..samples {
        dec.law.sample_into(&mut rng, &mut x);
        dec.law.sample_into(&mut rng, &mut y);
        for (a, b, law) in pairs {
            for c in 0..dim {
                let (u, v) = sample_pair(law, marginal, &mut rng);
                x[a * dim + c] = u;
                y[b * dim + c] = v;
            }
        }
        acc.add(dec.eval_component(i, &x) * dec.eval_component(j, &y));
    }
    acc.sum() / samples as f64
}

fn check_compatible(spec: &FieldSpec, dec: &DecomposedObservable) -> Result<()> {
    spec.validate()?;
    if dec.dim != spec.value_dim || dec.law != spec.value_law() {
        return Err(validation(
            "observable was decomposed against a different value law",
        ));
    }
    Ok(())
}

fn expectation(
    dec: &DecomposedObservable,
    i: usize,
    j: usize,
    pairs: &Pairing,
    opts: &CovarianceOptions,
) -> Result<f64> {
    match (dec.component_polynomial(i), dec.component_polynomial(j)) {
        (Some(p), Some(q)) => poly_expectation(p, q, i, j, dec.dim, pairs, &dec.law.marginal),
        _ => {
            let seed = derive_seed(opts.mc_seed, (i * 1000 + j) as u64);
            Ok(mc_expectation(
                dec,
                i,
                j,
                pairs,
                opts.mc_samples.max(1),
                seed,
            ))
        }
    }
}

/// `c_{i,j}(u)`.
pub fn c_ij(
    spec: &FieldSpec,
    dec: &DecomposedObservable,
    i: usize,
    j: usize,
    u: &LatticePoint,
) -> Result<f64> {
    c_ij_with(spec, dec, i, j, u, &CovarianceOptions::default())
}

pub fn c_ij_with(
    spec: &FieldSpec,
    dec: &DecomposedObservable,
    i: usize,
    j: usize,
    u: &LatticePoint,
    opts: &CovarianceOptions,
) -> Result<f64> {
    check_compatible(spec, dec)?;
    for idx in [i, j] {
        if idx == 0 || idx > dec.arity {
            return Err(Error::IndexOutOfRange {
                index: idx,
                max: dec.arity,
            });
        }
    }
    if u.dim() != spec.nu {
        return Err(validation("lag must be ν-dimensional"));
    }
    let Some(pairs) = pairing(spec, i, j, u) else {
        return Ok(0.0);
    };
    // all pairs independent: E F_i · E F_j = 0 exactly
    if dec.is_zero_component(i)
        || dec.is_zero_component(j)
        || pairs.iter().all(|p| p.2 == PairLaw::Product)
    {
        return Ok(0.0);
    }
    expectation(dec, i, j, &pairs, opts)
}

/// `∫F_i² dμ^{⊗i}`.
pub fn high_variance(spec: &FieldSpec, dec: &DecomposedObservable, i: usize) -> Result<f64> {
    high_variance_with(spec, dec, i, &CovarianceOptions::default())
}

pub fn high_variance_with(
    spec: &FieldSpec,
    dec: &DecomposedObservable,
    i: usize,
    opts: &CovarianceOptions,
) -> Result<f64> {
    check_compatible(spec, dec)?;
    if i == 0 || i > dec.arity {
        return Err(Error::IndexOutOfRange {
            index: i,
            max: dec.arity,
        });
    }
    if dec.is_zero_component(i) {
        return Ok(0.0);
    }
    let pairs: Pairing = (0..i).map(|a| (a, a, PairLaw::Diagonal)).collect();
    expectation(dec, i, i, &pairs, opts)
}

/// Smallest admissible truncation radius: `2m·k`.
pub fn default_truncation_radius(spec: &FieldSpec, k: usize) -> u64 {
    (2.0 * spec.mixing_range() * k as f64 - SNAP)
        .ceil()
        .max(0.0) as u64
}

/// `D` for the linear indices `1..=k` plus the high-index variances.
pub fn d_matrix(
    spec: &FieldSpec,
    dec: &DecomposedObservable,
    k: usize,
    opts: &CovarianceOptions,
) -> Result<CovarianceModel> {
    check_compatible(spec, dec)?;
    if k == 0 || k > dec.arity {
        return Err(validation(format!(
            "need 1 ≤ k ≤ ℓ = {}, got k = {k}",
            dec.arity
        )));
    }
    let need = default_truncation_radius(spec, k);
    let radius = opts.truncation_radius.unwrap_or(need);
    if radius < need {
        return Err(validation(format!(
            "truncation radius {radius} is below 2m·k = {need}; lag integrals beyond it are nonzero"
        )));
    }
    let nu = spec.nu;
    let r = radius as i64;
    let mut d = vec![vec![0.0; k]; k];
    for i in 1..=k {
        for j in i..=k {
            let g = i.gcd(&j) as i64;
            let reach = r / g;
            let mut lags = Vec::new();
            for_each_point(&vec![(-reach, reach); nu], |up| {
                let u: Vec<i64> = up.iter().map(|c| c * g).collect();
                if crate::lattice::norm_of(&u) <= radius as f64 + SNAP {
                    lags.push(LatticePoint::new(u));
                }
            });
            let terms: Vec<f64> = lags
                .par_iter()
                .map(|u| c_ij_with(spec, dec, i, j, u, opts))
                .collect::<Result<_>>()?;
            let total: NeumaierSum = terms.into_iter().collect();
            let pref = (g as f64 / (i * j) as f64).powi(opts.prefactor.exponent(nu));
            d[i - 1][j - 1] = pref * total.sum();
            d[j - 1][i - 1] = d[i - 1][j - 1];
        }
    }
    let high_variances = (k + 1..=dec.arity)
        .map(|i| high_variance_with(spec, dec, i, opts))
        .collect::<Result<_>>()?;
    let min_eigenvalue = DMatrix::from_fn(k, k, |a, b| d[a][b])
        .symmetric_eigen()
        .eigenvalues
        .min();
    let scale = d.iter().flatten().fold(1.0f64, |m, x| m.max(x.abs()));
    let closed = (1..=dec.arity).all(|i| dec.component_polynomial(i).is_some());
    Ok(CovarianceModel {
        nu,
        k,
        ell: dec.arity,
        d,
        high_variances,
        truncation_radius: radius,
        tail_bound: 0.0,
        prefactor_exponent: opts.prefactor,
        quadrature: if closed {
            "closed_form".into()
        } else {
            format!("monte_carlo({} samples)", opts.mc_samples)
        },
        min_eigenvalue,
        psd: min_eigenvalue >= -PSD_TOL * scale,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiophantineCount {
    pub i: usize,
    pub j: usize,
    pub u: LatticePoint,
    pub n: u64,
    pub s: TimePoint,
    pub t: TimePoint,
    pub exact_count: u64,
    pub predicted_density: f64,
}

/// Counts `(n, n')` with `i·n − j·n' = u`, `0 ≤ i·n ≤ Ns`, `0 ≤ j·n' ≤ Nt`.
/// The count factorizes over coordinates.
pub fn diophantine_count(
    i: usize,
    j: usize,
    u: &LatticePoint,
    n: u64,
    s: &TimePoint,
    t: &TimePoint,
) -> Result<DiophantineCount> {
    if i == 0 || j == 0 {
        return Err(validation("indices must be positive"));
    }
    if s.dim() != u.dim() || t.dim() != u.dim() {
        return Err(validation("u, s and t must share a dimension"));
    }
    let (ii, jj) = (i as i64, j as i64);
    let nf = n as f64;
    let mut count: u64 = 1;
    let mut predicted = 1.0;
    let g = i.gcd(&j) as f64;
    for l in 0..u.dim() {
        let (sl, tl, ul) = (s.coords()[l], t.coords()[l], u.coords()[l]);
        let top = (nf * sl + SNAP).floor() as i64;
        let cap = (nf * tl + SNAP).floor() as i64;
        let c = (0..=top / ii)
            .filter(|&a| {
                let rhs = ii * a - ul;
                rhs.rem_euclid(jj) == 0 && (0..=cap).contains(&rhs)
            })
            .count() as u64;
        count *= c;
        predicted *= nf * g * sl.min(tl) / (i * j) as f64;
    }
    Ok(DiophantineCount {
        i,
        j,
        u: u.clone(),
        n,
        s: s.clone(),
        t: t.clone(),
        exact_count: count,
        predicted_density: predicted,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayBucket {
    /// `⌊s_{i,j}(m,n)⌋`.
    pub separation: i64,
    pub pairs: usize,
    /// `sup |b̂_{i,j}(m,n)|` over the bucket.
    pub sup_abs: f64,
    pub sup_se: f64,
    /// Bucket average of `b̂` and its standard error across replicas.
    pub pooled_mean: f64,
    pub pooled_se: f64,
    /// Every pair in the bucket reads disjoint noise, so `b = 0` exactly.
    pub independent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DecayProfile {
    pub i: usize,
    pub j: usize,
    pub base: LatticePoint,
    pub max_lag: i64,
    pub replicas: usize,
    pub buckets: Vec<DecayBucket>,
}

/// Monte Carlo `b_{i,j}(m,n) = E F_i(X(q_1 m), …) F_j(X(q_1 n), …)` for `m`
/// fixed at `(L, …, L)` and `n` within `L` of it (sup-norm), bucketed by
/// separation.
#[allow(clippy::too_many_arguments)]
pub fn decay_profile(
    spec: &FieldSpec,
    dec: &DecomposedObservable,
    q: &QFamily,
    i: usize,
    j: usize,
    max_lag: i64,
    replicas: usize,
    seed: u64,
) -> Result<DecayProfile> {
    check_compatible(spec, dec)?;
    if q.nu != spec.nu || q.ell() != dec.arity {
        return Err(validation(
            "q-family does not match the field and observable",
        ));
    }
    for idx in [i, j] {
        if idx == 0 || idx > dec.arity {
            return Err(Error::IndexOutOfRange {
                index: idx,
                max: dec.arity,
            });
        }
    }
    if max_lag < 0 || replicas < 2 {
        return Err(validation("need max_lag ≥ 0 and at least 2 replicas"));
    }
    let nu = spec.nu;
    let base = LatticePoint::new(vec![max_lag; nu]);
    let mut others = Vec::new();
    for_each_point(&vec![(0, 2 * max_lag); nu], |n| {
        others.push(LatticePoint::new(n.to_vec()))
    });

    let sites_of = |p: &LatticePoint, upto: usize| -> Result<Vec<LatticePoint>> {
        (1..=upto).map(|a| q.apply(a, p)).collect()
    };
    let m_sites = sites_of(&base, i)?;
    let mut sparse: HashSet<LatticePoint> = m_sites.iter().cloned().collect();
    let mut n_sites = Vec::with_capacity(others.len());
    for n in &others {
        let s = sites_of(n, j)?;
        sparse.extend(s.iter().cloned());
        n_sites.push(s);
    }
    let two_m = 2.0 * spec.mixing_range();
    let mut bucket_of: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    let mut indep = Vec::with_capacity(others.len());
    for (idx, n) in others.iter().enumerate() {
        let sep = q.separation(i, j, &base, n)?;
        bucket_of
            .entry((sep + SNAP).floor() as i64)
            .or_default()
            .push(idx);
        let far = m_sites
            .iter()
            .all(|a| n_sites[idx].iter().all(|b| a.sub(b).norm() > two_m + SNAP));
        indep.push(far);
    }
    let mut sparse: Vec<LatticePoint> = sparse.into_iter().collect();
    sparse.sort_by(|a, b| a.coords().cmp(b.coords()));
    let cover = SiteCover {
        dense: None,
        sparse,
    };

    let w = spec.value_dim;
    let per_replica: Vec<Vec<f64>> = (0..replicas)
        .into_par_iter()
        .map(|r| -> Result<Vec<f64>> {
            let sample = generate(&spec.clone().with_seed(derive_seed(seed, r as u64)), &cover)?;
            let gather = |sites: &[LatticePoint]| -> Result<Vec<f64>> {
                let mut buf = Vec::with_capacity(sites.len() * w);
                for s in sites {
                    buf.extend_from_slice(
                        sample
                            .value(s.coords())
                            .ok_or_else(|| Error::OutsideCover(s.coords().to_vec()))?,
                    );
                }
                Ok(buf)
            };
            let ym = dec.eval_component(i, &gather(&m_sites)?);
            n_sites
                .iter()
                .map(|s| Ok(ym * dec.eval_component(j, &gather(s)?)))
                .collect()
        })
        .collect::<Result<_>>()?;

    let rf = replicas as f64;
    let mean_se = |vals: &mut dyn Iterator<Item = f64>| -> (f64, f64) {
        let v: Vec<f64> = vals.collect();
        let mean = v.iter().sum::<f64>() / rf;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (rf - 1.0);
        (mean, (var / rf).sqrt())
    };
    let mut buckets = Vec::with_capacity(bucket_of.len());
    for (sep, members) in bucket_of {
        let mut sup_abs: f64 = 0.0;
        let mut sup_se = 0.0;
        for &idx in &members {
            let (m, se) = mean_se(&mut per_replica.iter().map(|row| row[idx]));
            if m.abs() >= sup_abs {
                sup_abs = m.abs();
                sup_se = se;
            }
        }
        let cnt = members.len() as f64;
        let (pooled_mean, pooled_se) = mean_se(
            &mut per_replica
                .iter()
                .map(|row| members.iter().map(|&x| row[x]).sum::<f64>() / cnt),
        );
        buckets.push(DecayBucket {
            separation: sep,
            pairs: members.len(),
            sup_abs,
            sup_se,
            pooled_mean,
            pooled_se,
            independent: members.iter().all(|&x| indep[x]),
        });
    }
    Ok(DecayProfile {
        i,
        j,
        base,
        max_lag,
        replicas,
        buckets,
    })
}
