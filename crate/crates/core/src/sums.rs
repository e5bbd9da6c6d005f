//! The sum engine: `ξ_N(t) = N^{−ν/2} Σ_{n∈Δ_N(t)} F(X(q_1(n)), …, X(q_ℓ(n)))`,
//! the component sums `ξ_{i,N}`, raw sums and block/gap sums.
//!
//! Every sum runs over its box in lexicographic order with compensated
//! accumulation, so results are bit-reproducible.

use std::collections::HashSet;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{validation, Error, Result};
use crate::lattice::{for_each_point, ranges_len, AxisRanges, BoxRegion, LatticePoint, TimePoint};
use crate::observables::DecomposedObservable;
use crate::qmaps::QFamily;
use crate::random_fields::{generate, FieldSample, FieldSpec, SiteCover};
use crate::schedule::{BlockSchedule, Segment};
use crate::summation::NeumaierSum;

/// Largest index cover a single replica may materialize.
pub const MAX_COVER_SITES: usize = 50_000_000;

#[derive(Clone, Debug)]
pub struct SumRequest {
    pub spec: FieldSpec,
    pub observable: Arc<DecomposedObservable>,
    pub qfamily: QFamily,
    pub n: u64,
    pub targets: Vec<TimePoint>,
    pub pairs: Vec<(TimePoint, TimePoint)>,
    /// Block/gap sums at this time point, when a schedule is attached.
    pub blocks: Option<(BlockSchedule, TimePoint)>,
}

impl SumRequest {
    pub fn new(
        spec: FieldSpec,
        observable: Arc<DecomposedObservable>,
        qfamily: QFamily,
        n: u64,
    ) -> Result<Self> {
        spec.validate()?;
        qfamily.validate()?;
        if n == 0 {
            return Err(validation("N must be positive"));
        }
        if spec.nu != qfamily.nu {
            return Err(validation(format!(
                "field has ν={}, q-maps have ν={}",
                spec.nu, qfamily.nu
            )));
        }
        if observable.arity != qfamily.ell() {
            return Err(validation(format!(
                "observable has ℓ={}, q-family has ℓ={}",
                observable.arity,
                qfamily.ell()
            )));
        }
        if observable.dim != spec.value_dim {
            return Err(validation(format!(
                "observable has ℘={}, field has ℘={}",
                observable.dim, spec.value_dim
            )));
        }
        Ok(SumRequest {
            spec,
            observable,
            qfamily,
            n,
            targets: Vec::new(),
            pairs: Vec::new(),
            blocks: None,
        })
    }

    pub fn with_targets(mut self, targets: Vec<TimePoint>) -> Result<Self> {
        if let Some(t) = targets.iter().find(|t| t.dim() != self.spec.nu) {
            return Err(validation(format!(
                "target {t:?} is not {}-dimensional",
                self.spec.nu
            )));
        }
        self.targets = targets;
        Ok(self)
    }

    pub fn with_pairs(mut self, pairs: Vec<(TimePoint, TimePoint)>) -> Result<Self> {
        for (s, t) in &pairs {
            BoxRegion::new(self.n, s.clone(), t.clone())?;
            if s.dim() != self.spec.nu {
                return Err(validation("pair is not ν-dimensional"));
            }
        }
        self.pairs = pairs;
        Ok(self)
    }

    pub fn with_blocks(mut self, schedule: BlockSchedule, t: TimePoint) -> Result<Self> {
        if schedule.n != self.n {
            return Err(validation(format!(
                "schedule built for N={}, request has N={}",
                schedule.n, self.n
            )));
        }
        self.blocks = Some((schedule, t));
        Ok(self)
    }

    pub fn nu(&self) -> usize {
        self.spec.nu
    }

    pub fn ell(&self) -> usize {
        self.qfamily.ell()
    }

    /// `N^{−ν/2}`.
    pub fn norm(&self) -> f64 {
        (self.n as f64).powf(-(self.spec.nu as f64) / 2.0)
    }

    /// Sites read by any sum: `[0, kN]^ν` densely plus the nonlinear images
    /// of `Δ_N(1)`.
    pub fn cover(&self) -> Result<SiteCover> {
        let nu = self.nu();
        let big = self.n as i64;
        let reach = big
            .checked_mul(self.qfamily.k as i64)
            .ok_or_else(|| Error::Planning("kN overflows".into()))?;
        let dense: AxisRanges = vec![(0, reach); nu];
        let dense_len = ranges_len(&dense);
        let base = vec![(0, big); nu];
        let mut sparse = Vec::new();
        if self.ell() > self.qfamily.k {
            let mut seen: HashSet<Vec<i64>> = HashSet::new();
            let mut out = vec![0i64; nu];
            let mut err = None;
            for_each_point(&base, |n| {
                if err.is_some() {
                    return;
                }
                for j in self.qfamily.k + 1..=self.ell() {
                    if let Err(e) = self.qfamily.apply_into(j, n, &mut out) {
                        err = Some(e);
                        return;
                    }
                    let inside = out.iter().all(|&c| (0..=reach).contains(&c));
                    if !inside && seen.insert(out.clone()) {
                        sparse.push(LatticePoint::new(out.clone()));
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
        }
        let total = dense_len + sparse.len();
        if total > MAX_COVER_SITES {
            return Err(Error::Planning(format!(
                "index cover needs {total} sites ({dense_len} dense + {} sparse), limit {MAX_COVER_SITES}",
                sparse.len()
            )));
        }
        Ok(SiteCover {
            dense: Some(dense),
            sparse,
        })
    }

    /// Generates the field for one replica and binds it to this request.
    pub fn realize(&self, seed: u64) -> Result<SumEngine<'_>> {
        self.realize_on(&self.cover()?, seed)
    }

    /// Like [`realize`](Self::realize) with a precomputed [`cover`](Self::cover).
    pub fn realize_on(&self, cover: &SiteCover, seed: u64) -> Result<SumEngine<'_>> {
        let spec = self.spec.clone().with_seed(seed);
        let sample = generate(&spec, cover)?;
        Ok(SumEngine {
            req: self,
            sample,
            seed,
        })
    }

    /// Binds an explicit sample (e.g. pinned values).
    pub fn with_sample(&self, sample: FieldSample) -> SumEngine<'_> {
        let seed = sample.spec().seed;
        SumEngine {
            req: self,
            sample,
            seed,
        }
    }

    /// `Δ^{(i)}_N(s, t)`: `Δ_N(s/i, t/i)` for linear indices, `Δ_N(s, t)` otherwise.
    pub fn component_box(&self, i: usize, s: &TimePoint, t: &TimePoint) -> Result<AxisRanges> {
        let (s, t) = if self.qfamily.is_linear(i) {
            (s.divided(i), t.divided(i))
        } else {
            (s.clone(), t.clone())
        };
        Ok(BoxRegion::new(self.n, s, t)?.ranges())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockSums {
    pub i: usize,
    /// `V_{i,t,N}(l)`, `l = 1..=L`.
    pub v: Vec<f64>,
    /// `W_{i,t,N}(l)`, `l = 1..=L`.
    pub w: Vec<f64>,
    /// `ζ_{i,N}(t) = N^{−ν/2} Σ_l V_l`.
    pub zeta: f64,
    /// `ξ_{i,N}(t)` over the same sites.
    pub xi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SumResult {
    pub replica: u64,
    pub seed: u64,
    pub n: u64,
    /// `ξ_N(t)` per target.
    pub xi: Vec<f64>,
    /// `ξ_{i,N}(t)`: `components[i−1][target]`.
    pub components: Vec<Vec<f64>>,
    /// `ξ_{i,N}(s, t)`: `increments[i−1][pair]`.
    pub increments: Vec<Vec<f64>>,
    pub blocks: Vec<BlockSums>,
}

/// One realized field bound to a request.
pub struct SumEngine<'a> {
    req: &'a SumRequest,
    sample: FieldSample,
    seed: u64,
}

impl SumEngine<'_> {
    pub fn sample(&self) -> &FieldSample {
        &self.sample
    }

    /// Writes `X(q_1(n)), …, X(q_m(n))` into `buf`.
    #[inline]
    fn gather(&self, m: usize, n: &[i64], buf: &mut [f64], qbuf: &mut [i64]) -> Result<()> {
        let w = self.req.spec.value_dim;
        for j in 1..=m {
            self.req.qfamily.apply_into(j, n, qbuf)?;
            let v = self
                .sample
                .value(qbuf)
                .ok_or_else(|| Error::OutsideCover(qbuf.to_vec()))?;
            buf[(j - 1) * w..j * w].copy_from_slice(v);
        }
        Ok(())
    }

    /// `Σ_{n∈ranges} f(X(q_1(n)), …, X(q_m(n)))`, unnormalized.
    fn raw_over(&self, ranges: &[(i64, i64)], m: usize, f: impl Fn(&[f64]) -> f64) -> Result<f64> {
        let mut buf = vec![0.0; m * self.req.spec.value_dim];
        let mut qbuf = vec![0i64; self.req.nu()];
        let mut acc = NeumaierSum::default();
        let mut err = None;
        for_each_point(ranges, |n| {
            if err.is_some() {
                return;
            }
            match self.gather(m, n, &mut buf, &mut qbuf) {
                Ok(()) => acc.add(f(&buf)),
                Err(e) => err = Some(e),
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(acc.sum()),
        }
    }

    fn component_raw(&self, i: usize, ranges: &[(i64, i64)]) -> Result<f64> {
        let ell = self.req.ell();
        if i == 0 || i > ell {
            return Err(Error::IndexOutOfRange { index: i, max: ell });
        }
        if self.req.observable.is_zero_component(i) {
            return Ok(0.0);
        }
        let obs = &self.req.observable;
        self.raw_over(ranges, i, |x| obs.eval_component(i, x))
    }

    /// `S_N(t) = Σ_{n∈Δ_N(t)} (F − F̄)(X(q_1(n)), …)`.
    pub fn raw_sum(&self, t: &TimePoint) -> Result<f64> {
        let ranges = BoxRegion::from_origin(self.req.n, t.clone()).ranges();
        let obs = &self.req.observable;
        self.raw_over(&ranges, self.req.ell(), |x| obs.eval_centered(x))
    }

    pub fn xi_n(&self, t: &TimePoint) -> Result<f64> {
        Ok(self.req.norm() * self.raw_sum(t)?)
    }

    /// `ξ_{i,N}(s, t)`.
    pub fn xi_i_n(&self, i: usize, s: &TimePoint, t: &TimePoint) -> Result<f64> {
        let ranges = self.req.component_box(i, s, t)?;
        Ok(self.req.norm() * self.component_raw(i, &ranges)?)
    }

    /// `ξ_{i,N}(t) = ξ_{i,N}(0, t)`.
    pub fn xi_i_n_at(&self, i: usize, t: &TimePoint) -> Result<f64> {
        self.xi_i_n(i, &TimePoint::zeros(t.dim()), t)
    }

    /// `|ξ_N(t) − Σ_{i≤k} ξ_{i,N}(it) − Σ_{i>k} ξ_{i,N}(t)|`; every component
    /// is summed over `Δ_N(t)` itself.
    pub fn decomposition_gap(&self, t: &TimePoint) -> Result<f64> {
        let ranges = BoxRegion::from_origin(self.req.n, t.clone()).ranges();
        let total = self.xi_n(t)?;
        let mut parts = NeumaierSum::default();
        for i in 1..=self.req.ell() {
            parts.add(self.req.norm() * self.component_raw(i, &ranges)?);
        }
        Ok((total - parts.sum()).abs())
    }

    /// Block and gap sums of component `i` over `Δ^{(i)}_N(t)`.
    pub fn block_sums(
        &self,
        i: usize,
        t: &TimePoint,
        schedule: &BlockSchedule,
    ) -> Result<BlockSums> {
        if schedule.n != self.req.n {
            return Err(validation(format!(
                "schedule built for N={}, sums use N={}",
                schedule.n, self.req.n
            )));
        }
        let ell = self.req.ell();
        if i == 0 || i > ell {
            return Err(Error::IndexOutOfRange { index: i, max: ell });
        }
        let ranges = self.req.component_box(i, &TimePoint::zeros(t.dim()), t)?;
        let max_shell = ranges.iter().map(|r| r.1).max().unwrap_or(0).max(0);
        let table = schedule.shell_table(max_shell);
        let blocks = schedule.blocks;
        let mut v = vec![NeumaierSum::default(); blocks];
        let mut w = vec![NeumaierSum::default(); blocks];
        let mut buf = vec![0.0; i * self.req.spec.value_dim];
        let mut qbuf = vec![0i64; self.req.nu()];
        let obs = &self.req.observable;
        let mut err = None;
        for_each_point(&ranges, |n| {
            if err.is_some() {
                return;
            }
            let shell = n.iter().copied().max().unwrap_or(0);
            let slot = match table[shell as usize] {
                Segment::Block(l) => &mut v[l - 1],
                Segment::Gap(l) => &mut w[l - 1],
                Segment::Beyond => {
                    err = Some(Error::Planning(format!("shell {shell} lies beyond a(L+1)")));
                    return;
                }
            };
            match self.gather(i, n, &mut buf, &mut qbuf) {
                Ok(()) => slot.add(obs.eval_component(i, &buf)),
                Err(e) => err = Some(e),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let v: Vec<f64> = v.iter().map(NeumaierSum::sum).collect();
        let w: Vec<f64> = w.iter().map(NeumaierSum::sum).collect();
        let norm = self.req.norm();
        let zeta = norm * v.iter().copied().collect::<NeumaierSum>().sum();
        let xi = norm * v.iter().chain(&w).copied().collect::<NeumaierSum>().sum();
        Ok(BlockSums { i, v, w, zeta, xi })
    }

    /// Everything the request asks for.
    pub fn run(&self, replica: u64) -> Result<SumResult> {
        let req = self.req;
        let ell = req.ell();
        let xi = req
            .targets
            .iter()
            .map(|t| self.xi_n(t))
            .collect::<Result<_>>()?;
        let mut components = Vec::with_capacity(ell);
        let mut increments = Vec::with_capacity(ell);
        for i in 1..=ell {
            components.push(
                req.targets
                    .iter()
                    .map(|t| self.xi_i_n_at(i, t))
                    .collect::<Result<Vec<_>>>()?,
            );
            increments.push(
                req.pairs
                    .iter()
                    .map(|(s, t)| self.xi_i_n(i, s, t))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let blocks = match &req.blocks {
            Some((schedule, t)) => (1..=ell)
                .map(|i| self.block_sums(i, t, schedule))
                .collect::<Result<_>>()?,
            None => Vec::new(),
        };
        Ok(SumResult {
            replica,
            seed: self.seed,
            n: req.n,
            xi,
            components,
            increments,
            blocks,
        })
    }
}

/// CSV header for [`write_csv`] in dimension `nu`.
pub fn csv_header(nu: usize) -> String {
    let mut cols = vec!["replica".to_string(), "N".into(), "i".into()];
    cols.extend((1..=nu).map(|l| format!("s{l}")));
    cols.extend((1..=nu).map(|l| format!("t{l}")));
    cols.push("value".into());
    cols.join(",")
}

/// One row per (replica, N, i, target); `i = 0` is the full `ξ_N`.
pub fn write_csv(
    out: &mut impl Write,
    req: &SumRequest,
    results: &[SumResult],
) -> std::io::Result<()> {
    writeln!(out, "{}", csv_header(req.nu()))?;
    let zeros = TimePoint::zeros(req.nu());
    let fmt = |v: &[f64]| {
        v.iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    for r in results {
        for (a, t) in req.targets.iter().enumerate() {
            writeln!(
                out,
                "{},{},0,{},{},{:?}",
                r.replica,
                r.n,
                fmt(zeros.coords()),
                fmt(t.coords()),
                r.xi[a]
            )?;
            for i in 1..=req.ell() {
                writeln!(
                    out,
                    "{},{},{i},{},{},{:?}",
                    r.replica,
                    r.n,
                    fmt(zeros.coords()),
                    fmt(t.coords()),
                    r.components[i - 1][a]
                )?;
            }
        }
        for (b, (s, t)) in req.pairs.iter().enumerate() {
            for i in 1..=req.ell() {
                writeln!(
                    out,
                    "{},{},{i},{},{},{:?}",
                    r.replica,
                    r.n,
                    fmt(s.coords()),
                    fmt(t.coords()),
                    r.increments[i - 1][b]
                )?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{Marginal, ValueLaw};
    use crate::observables::{decompose, Observable};
    use crate::quadrature::QuadratureConfig;
    use approx::assert_relative_eq;

    fn pinned(obs: Observable, k: usize) -> (SumRequest, FieldSample) {
        let spec = FieldSpec::iid(1, Marginal::standard_normal());
        let dec = decompose(
            &obs,
            &ValueLaw::scalar(Marginal::standard_normal()),
            &QuadratureConfig::default(),
        )
        .unwrap();
        let q = QFamily::linear(1, k).unwrap();
        let req = SumRequest::new(spec.clone(), Arc::new(dec), q, 2).unwrap();
        let mut values = vec![0.5, -1.0, 2.0];
        values.resize(2 * k + 1, 0.0);
        let sample = FieldSample::from_values(spec, vec![(0, 2 * k as i64)], values).unwrap();
        (req, sample)
    }

    fn tp(v: f64) -> TimePoint {
        TimePoint::new(vec![v]).unwrap()
    }

    #[test]
    fn pinned_linear_sums() {
        let (req, sample) = pinned(Observable::linear(&[1.0]).unwrap(), 1);
        let e = req.with_sample(sample);
        assert_relative_eq!(
            e.xi_n(&tp(1.0)).unwrap(),
            1.5 / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            e.xi_n(&tp(0.0)).unwrap(),
            0.5 / 2f64.sqrt(),
            epsilon = 1e-15
        );
        assert_eq!(e.raw_sum(&tp(1.0)).unwrap(), 1.5);
    }

    #[test]
    fn pinned_product_component() {
        let (req, sample) = pinned(Observable::product(&[0, 0], 1).unwrap(), 2);
        let e = req.with_sample(sample);
        assert_eq!(e.xi_i_n_at(1, &tp(1.0)).unwrap(), 0.0);
        assert_relative_eq!(
            e.xi_i_n_at(2, &tp(1.0)).unwrap(),
            -1.75 / 2f64.sqrt(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn zero_observable_sums_vanish() {
        let (req, sample) = pinned(Observable::zero(1, 1).unwrap(), 1);
        let e = req.with_sample(sample);
        assert_eq!(e.xi_n(&tp(1.0)).unwrap(), 0.0);
        let s = BlockSchedule::default_for(2).unwrap();
        let b = e.block_sums(1, &tp(1.0), &s).unwrap();
        assert!(b.v.iter().chain(&b.w).all(|x| *x == 0.0));
    }

    #[test]
    fn outside_cover_is_reported() {
        let (req, _) = pinned(Observable::linear(&[1.0]).unwrap(), 1);
        let spec = FieldSpec::iid(1, Marginal::standard_normal());
        let short = FieldSample::from_values(spec, vec![(0, 1)], vec![0.0, 0.0]).unwrap();
        let e = req.with_sample(short);
        assert!(matches!(e.xi_n(&tp(1.0)), Err(Error::OutsideCover(_))));
    }

    #[test]
    fn blocks_and_gaps_reassemble() {
        let spec = FieldSpec::gaussian_ma(2, vec![(vec![0, 0], 1.0), (vec![1, 0], 0.5)]);
        let law = spec.value_law();
        let dec = decompose(
            &Observable::linear(&[1.0, 2.0]).unwrap(),
            &law,
            &QuadratureConfig::default(),
        )
        .unwrap();
        let q = QFamily::linear(2, 2).unwrap();
        let req = SumRequest::new(spec, Arc::new(dec), q, 20).unwrap();
        let e = req.realize(7).unwrap();
        let s = BlockSchedule::default_for(20).unwrap();
        for i in 1..=2 {
            let b = e.block_sums(i, &TimePoint::ones(2), &s).unwrap();
            assert_relative_eq!(
                b.xi,
                e.xi_i_n_at(i, &TimePoint::ones(2)).unwrap(),
                epsilon = 1e-12
            );
        }
        assert!(e.decomposition_gap(&TimePoint::ones(2)).unwrap() < 1e-12);
    }

    #[test]
    fn schedule_mismatch_rejected() {
        let (req, sample) = pinned(Observable::linear(&[1.0]).unwrap(), 1);
        let e = req.with_sample(sample);
        let s = BlockSchedule::default_for(10).unwrap();
        assert!(matches!(
            e.block_sums(1, &tp(1.0), &s),
            Err(Error::Validation(_))
        ));
    }
}
