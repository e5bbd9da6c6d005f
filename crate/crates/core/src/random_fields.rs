//! Finite-range moving-average random fields `X(n) = Σ_k a_k ε(n + k)` on
//! `ℤ^ν` with i.i.d. noise `ε`, their exact marginal and pair laws, and the
//! dependence coefficients they certify.
//!
//! The σ-algebra `𝓕_Γ` is generated by the noise at sites within the mixing
//! range `m` of `Γ`; two sets further apart than `2m` therefore see disjoint
//! noise and are independent.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{gamma_moment, Marginal, ValueLaw};
use crate::error::{validation, Error, Result};
use crate::lattice::{for_each_point, ranges_len, AxisRanges, BoxRegion, LatticePoint};
use crate::noise::NoiseSource;

/// Sampled pairs backing an empirical pair law.
pub const PAIR_LAW_SAMPLES: usize = 100_000;
const PAIR_LAW_SEED: u64 = 0x7061_6972;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    Iid,
    GaussianMa,
    KernelMa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelTap {
    pub offset: LatticePoint,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    pub kind: FieldKind,
    pub nu: usize,
    #[serde(default = "default_value_dim")]
    pub value_dim: usize,
    /// Law of the driving noise `ε`.
    pub marginal: Marginal,
    #[serde(default)]
    pub kernel: Vec<KernelTap>,
    #[serde(default)]
    pub seed: u64,
}

fn default_value_dim() -> usize {
    1
}

impl FieldSpec {
    pub fn iid(nu: usize, marginal: Marginal) -> Self {
        FieldSpec {
            kind: FieldKind::Iid,
            nu,
            value_dim: 1,
            marginal,
            kernel: Vec::new(),
            seed: 0,
        }
    }

    /// Gaussian moving average with unit-variance noise.
    pub fn gaussian_ma(nu: usize, taps: Vec<(Vec<i64>, f64)>) -> Self {
        FieldSpec {
            kind: FieldKind::GaussianMa,
            nu,
            value_dim: 1,
            marginal: Marginal::standard_normal(),
            kernel: taps
                .into_iter()
                .map(|(o, w)| KernelTap {
                    offset: LatticePoint::new(o),
                    weight: w,
                })
                .collect(),
            seed: 0,
        }
    }

    pub fn kernel_ma(nu: usize, noise: Marginal, taps: Vec<(Vec<i64>, f64)>) -> Self {
        FieldSpec {
            kind: FieldKind::KernelMa,
            marginal: noise,
            ..Self::gaussian_ma(nu, taps)
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_value_dim(mut self, dim: usize) -> Self {
        self.value_dim = dim;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nu == 0 {
            return Err(validation("lattice dimension must be at least 1"));
        }
        if self.value_dim == 0 {
            return Err(validation("value dimension must be at least 1"));
        }
        self.marginal.validate()?;
        if matches!(self.marginal, Marginal::Convolution { .. }) {
            return Err(Error::Config(
                "noise law must be a base law, not a convolution".into(),
            ));
        }
        match self.kind {
            FieldKind::Iid if !self.kernel.is_empty() => {
                return Err(Error::Config("IID fields take no kernel".into()))
            }
            FieldKind::GaussianMa if !self.marginal.is_gaussian() => {
                return Err(Error::Config("GaussianMA needs normal noise".into()))
            }
            FieldKind::GaussianMa | FieldKind::KernelMa if self.kernel.is_empty() => {
                return Err(Error::Config(
                    "moving-average fields need a nonempty kernel".into(),
                ))
            }
            _ => {}
        }
        let mut seen = std::collections::HashSet::new();
        for tap in &self.kernel {
            if tap.offset.dim() != self.nu {
                return Err(validation(format!(
                    "kernel offset {} is not {}-dimensional",
                    tap.offset, self.nu
                )));
            }
            if !tap.weight.is_finite() {
                return Err(validation("kernel weights must be finite"));
            }
            if !seen.insert(tap.offset.clone()) {
                return Err(validation(format!(
                    "duplicate kernel offset {}",
                    tap.offset
                )));
            }
        }
        Ok(())
    }

    /// `(offset, weight)` pairs; IID fields use the single tap `a_0 = 1`.
    pub fn taps(&self) -> Vec<(LatticePoint, f64)> {
        if self.kind == FieldKind::Iid {
            vec![(LatticePoint::zero(self.nu), 1.0)]
        } else {
            self.kernel
                .iter()
                .map(|t| (t.offset.clone(), t.weight))
                .collect()
        }
    }

    /// `m`: largest offset norm in the kernel support.
    pub fn mixing_range(&self) -> f64 {
        self.taps()
            .iter()
            .map(|(o, _)| o.norm())
            .fold(0.0, f64::max)
    }

    /// Law `μ` of a single value `X(n)`.
    pub fn value_law(&self) -> ValueLaw {
        let weights: Vec<f64> = self.taps().iter().map(|(_, w)| *w).collect();
        let marginal = Marginal::Convolution {
            noise: Box::new(self.marginal.clone()),
            weights,
        }
        .normalized();
        ValueLaw {
            marginal,
            dim: self.value_dim,
        }
    }

    /// `Cov(X_p(n), X_p(n + u))` for one value component.
    pub fn autocovariance(&self, u: &LatticePoint) -> f64 {
        let var = self.marginal.variance().unwrap_or(f64::INFINITY);
        let taps = self.taps();
        let mut acc = 0.0;
        for (k, a) in &taps {
            for (k2, b) in &taps {
                if k2.sub(k) == *u {
                    acc += a * b;
                }
            }
        }
        acc * var
    }

    /// Whether `X(n)` and `X(n + u)` read at least one common noise site.
    fn shares_noise(&self, u: &LatticePoint) -> bool {
        let taps = self.taps();
        taps.iter()
            .any(|(k, _)| taps.iter().any(|(k2, _)| k2.sub(k) == *u))
    }

    fn offset_extent(&self) -> Vec<(i64, i64)> {
        let taps = self.taps();
        (0..self.nu)
            .map(|l| {
                let lo = taps.iter().map(|(o, _)| o.coords()[l]).min().unwrap_or(0);
                let hi = taps.iter().map(|(o, _)| o.coords()[l]).max().unwrap_or(0);
                (lo, hi)
            })
            .collect()
    }
}

/// Index sets a [`FieldSample`] must cover: an optional dense box plus
/// isolated sites outside it.
#[derive(Clone, Debug, Default)]
pub struct SiteCover {
    pub dense: Option<AxisRanges>,
    pub sparse: Vec<LatticePoint>,
}

impl SiteCover {
    pub fn dense(ranges: AxisRanges) -> Self {
        SiteCover {
            dense: Some(ranges),
            sparse: Vec::new(),
        }
    }

    /// Number of stored sites (sparse entries inside the dense box included).
    pub fn size(&self) -> usize {
        self.dense.as_ref().map_or(0, |r| ranges_len(r)) + self.sparse.len()
    }
}

/// One realization of the field on a finite index set.
#[derive(Clone, Debug)]
pub struct FieldSample {
    spec: FieldSpec,
    dense: Option<DenseBlock>,
    sparse_index: HashMap<Vec<i64>, usize>,
    sparse_values: Vec<f64>,
}

#[derive(Clone, Debug)]
struct DenseBlock {
    ranges: AxisRanges,
    strides: Vec<usize>,
    values: Vec<f64>,
}

impl DenseBlock {
    #[inline]
    fn offset(&self, site: &[i64]) -> Option<usize> {
        let mut idx = 0usize;
        for ((&c, &(lo, hi)), &stride) in site.iter().zip(&self.ranges).zip(&self.strides) {
            if c < lo || c > hi {
                return None;
            }
            idx += (c - lo) as usize * stride;
        }
        Some(idx)
    }
}

fn strides_for(ranges: &[(i64, i64)], width: usize) -> Vec<usize> {
    let mut strides = vec![0; ranges.len()];
    let mut acc = width;
    for l in (0..ranges.len()).rev() {
        strides[l] = acc;
        acc *= (ranges[l].1 - ranges[l].0 + 1).max(0) as usize;
    }
    strides
}

impl FieldSample {
    pub fn spec(&self) -> &FieldSpec {
        &self.spec
    }

    /// `X(site)`, or `None` when the site is not covered.
    #[inline]
    pub fn value(&self, site: &[i64]) -> Option<&[f64]> {
        let w = self.spec.value_dim;
        if let Some(d) = &self.dense {
            if let Some(o) = d.offset(site) {
                return Some(&d.values[o..o + w]);
            }
        }
        self.sparse_index
            .get(site)
            .map(|&k| &self.sparse_values[k * w..(k + 1) * w])
    }

    pub fn covers(&self, site: &[i64]) -> bool {
        self.value(site).is_some()
    }

    /// Builds a sample from explicit values on a dense box (used to pin
    /// hand-computed examples). `values` is laid out lexicographically with
    /// `value_dim` entries per site.
    pub fn from_values(spec: FieldSpec, ranges: AxisRanges, values: Vec<f64>) -> Result<Self> {
        spec.validate()?;
        if ranges.len() != spec.nu || values.len() != ranges_len(&ranges) * spec.value_dim {
            return Err(validation("value array does not match the box"));
        }
        let strides = strides_for(&ranges, spec.value_dim);
        Ok(FieldSample {
            spec,
            dense: Some(DenseBlock {
                ranges,
                strides,
                values,
            }),
            sparse_index: HashMap::new(),
            sparse_values: Vec::new(),
        })
    }
}

/// Realizes the field on `cover`. Values depend only on `(spec.seed, site)`.
pub fn generate(spec: &FieldSpec, cover: &SiteCover) -> Result<FieldSample> {
    spec.validate()?;
    let w = spec.value_dim;
    let taps = spec.taps();
    let noise = NoiseSource::new(spec.seed, spec.marginal.clone(), w);
    let extent = spec.offset_extent();

    let dense = match &cover.dense {
        None => None,
        Some(ranges) => {
            if ranges.len() != spec.nu {
                return Err(validation("cover box has the wrong dimension"));
            }
            Some(generate_dense(spec, &noise, &taps, &extent, ranges)?)
        }
    };

    let mut sparse_index = HashMap::new();
    let mut sparse_values = Vec::new();
    let mut eps = vec![0.0; w];
    let mut noise_site = vec![0i64; spec.nu];
    for site in &cover.sparse {
        if site.dim() != spec.nu {
            return Err(validation(format!("site {site} has the wrong dimension")));
        }
        if dense
            .as_ref()
            .and_then(|d| d.offset(site.coords()))
            .is_some()
            || sparse_index.contains_key(site.coords())
        {
            continue;
        }
        let base = sparse_values.len();
        sparse_values.resize(base + w, 0.0);
        for (k, a) in &taps {
            for (l, slot) in noise_site.iter_mut().enumerate() {
                *slot = site.coords()[l] + k.coords()[l];
            }
            NoiseSource::check_addressable(&noise_site)?;
            noise.fill(&noise_site, &mut eps);
            for p in 0..w {
                sparse_values[base + p] += a * eps[p];
            }
        }
        sparse_index.insert(site.coords().to_vec(), base / w);
    }

    Ok(FieldSample {
        spec: spec.clone(),
        dense,
        sparse_index,
        sparse_values,
    })
}

fn generate_dense(
    spec: &FieldSpec,
    noise: &NoiseSource,
    taps: &[(LatticePoint, f64)],
    extent: &[(i64, i64)],
    ranges: &[(i64, i64)],
) -> Result<DenseBlock> {
    let w = spec.value_dim;
    let nu = spec.nu;
    let strides = strides_for(ranges, w);
    let mut values = vec![0.0; ranges_len(ranges) * w];
    if values.is_empty() {
        return Ok(DenseBlock {
            ranges: ranges.to_vec(),
            strides,
            values,
        });
    }
    // noise box: the value box enlarged by the kernel extent
    let nranges: AxisRanges = ranges
        .iter()
        .zip(extent)
        .map(|(&(lo, hi), &(elo, ehi))| (lo + elo, hi + ehi))
        .collect();
    let corner_lo: Vec<i64> = nranges.iter().map(|r| r.0).collect();
    let corner_hi: Vec<i64> = nranges.iter().map(|r| r.1).collect();
    NoiseSource::check_addressable(&corner_lo)?;
    NoiseSource::check_addressable(&corner_hi)?;

    let nstrides = strides_for(&nranges, w);
    let mut eps = vec![0.0; ranges_len(&nranges) * w];
    let row_len = (nranges[nu - 1].1 - nranges[nu - 1].0 + 1) as usize * w;
    let mut row_ranges = nranges.clone();
    row_ranges[nu - 1] = (nranges[nu - 1].0, nranges[nu - 1].0);
    let mut offset = 0usize;
    let hi_last = nranges[nu - 1].1;
    for_each_point(&row_ranges, |start| {
        noise.fill_row(start, hi_last, &mut eps[offset..offset + row_len]);
        offset += row_len;
    });

    // X(n) = Σ_k a_k ε(n + k)
    let tap_shifts: Vec<(isize, f64)> = taps
        .iter()
        .map(|(k, a)| {
            let shift: isize = k
                .coords()
                .iter()
                .zip(&nstrides)
                .map(|(&c, &s)| c as isize * s as isize)
                .sum();
            (shift, *a)
        })
        .collect();
    let mut out = 0usize;
    for_each_point(ranges, |site| {
        let base: usize = site
            .iter()
            .zip(&nranges)
            .zip(&nstrides)
            .map(|((&c, &(lo, _)), &s)| (c - lo) as usize * s)
            .sum();
        for &(shift, a) in &tap_shifts {
            let src = (base as isize + shift) as usize;
            for p in 0..w {
                values[out + p] += a * eps[src + p];
            }
        }
        out += w;
    });
    Ok(DenseBlock {
        ranges: ranges.to_vec(),
        strides,
        values,
    })
}

/// Convenience: realize the field on every point of a box.
pub fn generate_box(spec: &FieldSpec, b: &BoxRegion) -> Result<FieldSample> {
    generate(spec, &SiteCover::dense(b.ranges()))
}

/// Joint law `μ_u` of one component pair `(X_p(n), X_p(n'))`, `n − n' = u`.
#[derive(Clone, Debug, PartialEq)]
pub enum PairLaw {
    /// `u = 0`: both coordinates equal.
    Diagonal,
    /// Independent coordinates, each with law `μ`.
    Product,
    BivariateGaussian {
        variance: f64,
        covariance: f64,
    },
    /// Sampled pairs, for non-Gaussian noise with shared sites.
    Empirical {
        covariance: f64,
        samples: Vec<(f64, f64)>,
    },
}

pub fn pair_law(spec: &FieldSpec, u: &LatticePoint) -> PairLaw {
    if u.is_zero() {
        return PairLaw::Diagonal;
    }
    if spec.kind == FieldKind::Iid || !spec.shares_noise(u) {
        return PairLaw::Product;
    }
    let covariance = spec.autocovariance(u);
    if spec.marginal.is_gaussian() {
        let variance = spec.autocovariance(&LatticePoint::zero(spec.nu));
        return PairLaw::BivariateGaussian {
            variance,
            covariance,
        };
    }
    PairLaw::Empirical {
        covariance,
        samples: sample_pairs(spec, u, PAIR_LAW_SAMPLES),
    }
}

/// Draws `(X(u), X(0))` by simulating the shared noise directly.
fn sample_pairs(spec: &FieldSpec, u: &LatticePoint, count: usize) -> Vec<(f64, f64)> {
    let taps = spec.taps();
    // noise sites touched by X(u) and X(0), deduplicated
    let mut sites: Vec<LatticePoint> = Vec::new();
    let idx_of =
        |p: LatticePoint, sites: &mut Vec<LatticePoint>| match sites.iter().position(|s| *s == p) {
            Some(i) => i,
            None => {
                sites.push(p);
                sites.len() - 1
            }
        };
    let first: Vec<(usize, f64)> = taps
        .iter()
        .map(|(k, a)| (idx_of(u.add(k), &mut sites), *a))
        .collect();
    let second: Vec<(usize, f64)> = taps
        .iter()
        .map(|(k, a)| (idx_of(k.clone(), &mut sites), *a))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(PAIR_LAW_SEED);
    let mut eps = vec![0.0; sites.len()];
    (0..count)
        .map(|_| {
            for e in eps.iter_mut() {
                *e = spec.marginal.sample(&mut rng);
            }
            let x: f64 = first.iter().map(|&(i, a)| a * eps[i]).sum();
            let y: f64 = second.iter().map(|&(i, a)| a * eps[i]).sum();
            (x, y)
        })
        .collect()
}

/// `β_p(r) = ‖X(n) − E(X(n) | noise within r of n)‖_p = ‖Σ_{|k|>r} a_k ε(n+k)‖_p`.
pub fn beta_rate(spec: &FieldSpec, r: f64, p: f64) -> Result<f64> {
    spec.validate()?;
    if !(p >= 1.0) {
        return Err(validation(format!("β_p needs p ≥ 1, got {p}")));
    }
    if !(r >= 0.0) {
        return Err(validation("radius must be nonnegative"));
    }
    let tail: Vec<f64> = spec
        .taps()
        .iter()
        .filter(|(k, _)| k.norm() > r)
        .map(|(_, a)| *a)
        .collect();
    if tail.is_empty() || tail.iter().all(|a| *a == 0.0) {
        return Ok(0.0);
    }
    let marginal = Marginal::Convolution {
        noise: Box::new(spec.marginal.clone()),
        weights: tail,
    }
    .normalized();
    gamma_moment(
        &ValueLaw {
            marginal,
            dim: spec.value_dim,
        },
        p,
    )
}

/// Certified bound on `ϖ_{q,p}(l)` for every `q ≥ p`: zero beyond `2m`, the
/// universal bound 2 otherwise.
pub fn mixing_bound(spec: &FieldSpec, l: f64) -> f64 {
    if l > 2.0 * spec.mixing_range() {
        0.0
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ma01() -> FieldSpec {
        FieldSpec::gaussian_ma(1, vec![(vec![0], 1.0), (vec![1], 1.0)])
    }

    #[test]
    fn ma_autocovariance() {
        let s = ma01();
        assert_eq!(s.autocovariance(&LatticePoint::new(vec![0])), 2.0);
        assert_eq!(s.autocovariance(&LatticePoint::new(vec![1])), 1.0);
        assert_eq!(s.autocovariance(&LatticePoint::new(vec![-1])), 1.0);
        assert_eq!(s.autocovariance(&LatticePoint::new(vec![2])), 0.0);
        assert_eq!(s.mixing_range(), 1.0);
    }

    #[test]
    fn pair_laws() {
        let iid = FieldSpec::iid(2, Marginal::standard_normal());
        assert_eq!(
            pair_law(&iid, &LatticePoint::new(vec![1, 0])),
            PairLaw::Product
        );
        assert_eq!(pair_law(&iid, &LatticePoint::zero(2)), PairLaw::Diagonal);
        assert_eq!(pair_law(&ma01(), &LatticePoint::zero(1)), PairLaw::Diagonal);
        assert_eq!(
            pair_law(&ma01(), &LatticePoint::new(vec![1])),
            PairLaw::BivariateGaussian {
                variance: 2.0,
                covariance: 1.0
            }
        );
        assert_eq!(
            pair_law(&ma01(), &LatticePoint::new(vec![3])),
            PairLaw::Product
        );
        let k = FieldSpec::kernel_ma(
            1,
            Marginal::Rademacher,
            vec![(vec![0], 1.0), (vec![1], 1.0)],
        );
        match pair_law(&k, &LatticePoint::new(vec![1])) {
            PairLaw::Empirical {
                covariance,
                samples,
            } => {
                assert_eq!(covariance, 1.0);
                let c = samples.iter().map(|(x, y)| x * y).sum::<f64>() / samples.len() as f64;
                assert!((c - 1.0).abs() < 0.03);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn beta_rates() {
        let s = ma01();
        assert_relative_eq!(beta_rate(&s, 0.0, 2.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(beta_rate(&s, 1.0, 2.0).unwrap(), 0.0);
        assert_eq!(beta_rate(&s, 5.0, 3.0).unwrap(), 0.0);
        let iid = FieldSpec::iid(1, Marginal::standard_normal());
        assert_eq!(beta_rate(&iid, 0.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn mixing_bounds() {
        let iid = FieldSpec::iid(1, Marginal::standard_normal());
        assert_eq!(mixing_bound(&iid, 1.0), 0.0);
        assert_eq!(mixing_bound(&ma01(), 3.0), 0.0);
        assert_eq!(mixing_bound(&ma01(), 1.0), 2.0);
    }

    #[test]
    fn dense_and_sparse_agree() {
        let spec =
            FieldSpec::gaussian_ma(2, vec![(vec![0, 0], 1.0), (vec![1, -1], 0.5)]).with_seed(9);
        let dense = generate(&spec, &SiteCover::dense(vec![(0, 4), (-2, 3)])).unwrap();
        let pts: Vec<LatticePoint> =
            crate::lattice::BoxPoints::new(vec![(0, 4), (-2, 3)]).collect();
        let sparse = generate(
            &spec,
            &SiteCover {
                dense: None,
                sparse: pts.clone(),
            },
        )
        .unwrap();
        for p in &pts {
            assert_eq!(dense.value(p.coords()), sparse.value(p.coords()));
        }
        assert!(dense.value(&[5, 0]).is_none());
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ma01().with_seed(3);
        let a = generate(&spec, &SiteCover::dense(vec![(0, 50)])).unwrap();
        let b = generate(&spec, &SiteCover::dense(vec![(10, 60)])).unwrap();
        for c in 10..=50 {
            assert_eq!(
                a.value(&[c]).unwrap()[0].to_bits(),
                b.value(&[c]).unwrap()[0].to_bits()
            );
        }
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut bad = ma01();
        bad.marginal = Marginal::Rademacher;
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let mut bad = FieldSpec::iid(1, Marginal::standard_normal());
        bad.kernel.push(KernelTap {
            offset: LatticePoint::new(vec![0]),
            weight: 1.0,
        });
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
