//! Block geometry on the scale axis: cubes `Sq(l) = [0, l]^ν`, annuli
//! `Υ(l, l̃) = Sq(l̃) \ Sq(l)`, the block schedule `a(j), b(j), r(j)`, and
//! certificate-based checks of the dependence and moment assumptions.

use serde::{Deserialize, Serialize};

use crate::distributions::{gamma_moment, ValueLaw};
use crate::error::{validation, Error, Result};
use crate::lattice::{AxisRanges, BoxPoints, LatticePoint};
use crate::observables::Observable;
use crate::random_fields::{beta_rate, mixing_bound, FieldSpec};

pub const DEFAULT_TAU: f64 = 0.9;
pub const DEFAULT_ETA: f64 = 0.29;

/// `⌊x⌋` tolerant of `powf` landing just below an integer.
fn floor_pow(base: f64, exp: f64) -> i64 {
    (base.powf(exp) + 1e-9).floor() as i64
}

/// Checks `5/11·(τ+1) < 3η < τ < 1`, naming the first failed inequality.
pub fn check_gate(tau: f64, eta: f64) -> Result<()> {
    if !(tau > 0.0 && eta > 0.0) {
        return Err(validation(format!(
            "τ and η must be positive (τ={tau}, η={eta})"
        )));
    }
    let lhs = 5.0 / 11.0 * (tau + 1.0);
    if !(lhs < 3.0 * eta) {
        return Err(validation(format!(
            "gate 5/11·(τ+1) < 3η fails: {lhs:.6} ≥ {:.6}",
            3.0 * eta
        )));
    }
    if !(3.0 * eta < tau) {
        return Err(validation(format!(
            "gate 3η < τ fails: {:.6} ≥ {tau}",
            3.0 * eta
        )));
    }
    if !(tau < 1.0) {
        return Err(validation(format!("gate τ < 1 fails: τ = {tau}")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    pub tau: f64,
    pub eta: f64,
    pub n: u64,
    /// Number of blocks `L(N) = min{j : a(j+1) ≥ N}`.
    pub blocks: usize,
    /// `a(1..=L+1)`, stored from index 0.
    pub a: Vec<i64>,
    /// `b(1..=L+1)`.
    pub b: Vec<i64>,
    /// `r(1..=L+1)`.
    pub r: Vec<i64>,
}

/// Where a shell `max_l n_l` falls.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Segment {
    Block(usize),
    Gap(usize),
    Beyond,
}

impl BlockSchedule {
    pub fn build(tau: f64, eta: f64, n: u64) -> Result<Self> {
        check_gate(tau, eta)?;
        if n == 0 {
            return Err(validation("N must be positive"));
        }
        let big_n = n as i64;
        let (mut a, mut b, mut r) = (vec![0i64], vec![1i64], vec![1i64]);
        let mut j = 1usize;
        loop {
            // a(j+1), b(j+1), r(j+1)
            let next = j + 1;
            let an = b[j - 1] + floor_pow((next - 1) as f64, 2.0 * eta);
            a.push(an);
            b.push(an + floor_pow(next as f64, tau));
            r.push(floor_pow(next as f64, eta));
            if an >= big_n {
                break;
            }
            j += 1;
        }
        let s = BlockSchedule {
            tau,
            eta,
            n,
            blocks: j,
            a,
            b,
            r,
        };
        let bound = s.block_count_bound();
        if s.blocks as f64 > bound {
            return Err(Error::Numeric(format!(
                "L(N) = {} exceeds 2N^(1/(1+τ))+1 = {bound}",
                s.blocks
            )));
        }
        Ok(s)
    }

    pub fn default_for(n: u64) -> Result<Self> {
        Self::build(DEFAULT_TAU, DEFAULT_ETA, n)
    }

    /// `a(j)`, 1-based.
    pub fn a(&self, j: usize) -> i64 {
        self.a[j - 1]
    }

    pub fn b(&self, j: usize) -> i64 {
        self.b[j - 1]
    }

    pub fn r(&self, j: usize) -> i64 {
        self.r[j - 1]
    }

    /// `2N^{1/(1+τ)} + 1`.
    pub fn block_count_bound(&self) -> f64 {
        2.0 * (self.n as f64).powf(1.0 / (1.0 + self.tau)) + 1.0
    }

    /// `2(l+1)^{1+τ}/(1+τ)`.
    pub fn b_bound(&self, l: usize) -> f64 {
        2.0 * ((l + 1) as f64).powf(1.0 + self.tau) / (1.0 + self.tau)
    }

    /// Block or gap containing the shell `max_l n_l`; shell 0 joins block 1.
    pub fn classify(&self, shell: i64) -> Segment {
        if shell <= self.b[0] {
            return Segment::Block(1);
        }
        for l in 1..=self.blocks {
            if shell <= self.b[l - 1] {
                return Segment::Block(l);
            }
            if shell <= self.a[l] {
                return Segment::Gap(l);
            }
        }
        Segment::Beyond
    }

    /// Segment of every shell `0..=max_shell`.
    pub fn shell_table(&self, max_shell: i64) -> Vec<Segment> {
        let mut out = Vec::with_capacity(max_shell.max(0) as usize + 1);
        let mut l = 1usize;
        for shell in 0..=max_shell {
            while l <= self.blocks && shell > self.a[l] {
                l += 1;
            }
            out.push(if l > self.blocks {
                Segment::Beyond
            } else if shell <= self.b[l - 1] {
                Segment::Block(l)
            } else {
                Segment::Gap(l)
            });
        }
        out
    }

    pub fn blocks_of(&self) -> Vec<Annulus> {
        (1..=self.blocks)
            .map(|l| Annulus {
                lo: self.a(l),
                hi: self.b(l),
            })
            .collect()
    }

    pub fn gaps_of(&self) -> Vec<Annulus> {
        (1..=self.blocks)
            .map(|l| Annulus {
                lo: self.b(l),
                hi: self.a(l + 1),
            })
            .collect()
    }

    /// Exact structural checks: monotonicity, `b(l)` bound, `L(N)` bound and
    /// that blocks and gaps tile the shells `0..=a(L+1)`.
    pub fn verify(&self) -> ScheduleCheck {
        let l = self.blocks;
        let increasing =
            (0..=l).all(|j| self.a[j] < self.b[j]) && (0..l).all(|j| self.b[j] <= self.a[j + 1]);
        let b_bound_holds = (1..=l).all(|j| (self.b(j) as f64) <= self.b_bound(j));
        let l_bound_holds = (l as f64) <= self.block_count_bound();
        let minimal = self.a(l + 1) >= self.n as i64 && (l == 1 || self.a(l) < self.n as i64);
        let table = self.shell_table(self.a(l + 1));
        let mut tiles = table.iter().all(|s| *s != Segment::Beyond);
        // consecutive shells move through block 1, gap 1, block 2, … in order
        let order = |s: &Segment| match *s {
            Segment::Block(j) => 2 * j,
            Segment::Gap(j) => 2 * j + 1,
            Segment::Beyond => usize::MAX,
        };
        tiles &= table.windows(2).all(|w| order(&w[0]) <= order(&w[1]));
        ScheduleCheck {
            increasing,
            b_bound_holds,
            l_bound_holds,
            minimal,
            tiles,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleCheck {
    pub increasing: bool,
    pub b_bound_holds: bool,
    pub l_bound_holds: bool,
    pub minimal: bool,
    pub tiles: bool,
}

impl ScheduleCheck {
    pub fn pass(&self) -> bool {
        self.increasing && self.b_bound_holds && self.l_bound_holds && self.minimal && self.tiles
    }
}

/// `Υ(lo, hi) = {n ∈ ℤ_+^ν : lo < max_l n_l ≤ hi}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annulus {
    pub lo: i64,
    pub hi: i64,
}

/// `Υ(l, l̃)`; requires `l < l̃`.
pub fn annulus(l: i64, l_tilde: i64) -> Result<Annulus> {
    if l >= l_tilde || l < 0 {
        return Err(validation(format!(
            "annulus needs 0 ≤ l < l̃, got ({l}, {l_tilde})"
        )));
    }
    Ok(Annulus { lo: l, hi: l_tilde })
}

/// `Sq(l) = [0, l]^ν`.
pub fn cube(nu: usize, l: i64) -> AxisRanges {
    vec![(0, l); nu]
}

impl Annulus {
    pub fn len(&self, nu: usize) -> u128 {
        ((self.hi + 1) as u128).pow(nu as u32) - ((self.lo + 1) as u128).pow(nu as u32)
    }

    pub fn is_empty(&self, nu: usize) -> bool {
        self.len(nu) == 0
    }

    /// `ν(hi − lo)(hi + 1)^{ν−1}`.
    pub fn cardinality_bound(&self, nu: usize) -> u128 {
        nu as u128 * (self.hi - self.lo) as u128 * ((self.hi + 1) as u128).pow(nu as u32 - 1)
    }

    pub fn contains(&self, n: &[i64]) -> bool {
        if n.iter().any(|&c| c < 0) {
            return false;
        }
        let shell = n.iter().copied().max().unwrap_or(0);
        self.lo < shell && shell <= self.hi
    }

    pub fn points(&self, nu: usize) -> Vec<LatticePoint> {
        BoxPoints::new(cube(nu, self.hi))
            .filter(|p| self.contains(p.coords()))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AssumptionParams {
    pub p: f64,
    pub q: f64,
    pub m: f64,
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionVerdict {
    pub condition: String,
    pub value: f64,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub params: AssumptionParams,
    /// `d = (ℓ − 1)℘`.
    pub d: usize,
    pub verdicts: Vec<ConditionVerdict>,
    pub pass: bool,
}

impl AssumptionReport {
    pub fn verdict(&self, condition: &str) -> Option<&ConditionVerdict> {
        self.verdicts.iter().find(|v| v.condition == condition)
    }
}

/// Certificate-based check of the dependence/moment assumption for a
/// finite-range field: the coefficient series are finite sums, so only the
/// moment and exponent conditions can fail.
pub fn check_assumption(
    field: &FieldSpec,
    obs: &Observable,
    params: AssumptionParams,
) -> Result<AssumptionReport> {
    field.validate()?;
    let AssumptionParams { p, q, m, delta } = params;
    let nu = field.nu as i32;
    let d = (obs.arity - 1) * obs.dim;
    let kappa = obs.holder.kappa;
    let iota = obs.holder.iota;
    let law = field.value_law();
    let range = field.mixing_range();
    let mut v = Vec::new();
    let mut push = |condition: &str, value: f64, pass: bool, detail: String| {
        v.push(ConditionVerdict {
            condition: condition.into(),
            value,
            pass,
            detail,
        });
    };

    let params_ok = p >= 1.0 && q >= 1.0 && m >= 4.0 && delta > 0.0;
    push(
        "parameters",
        0.0,
        params_ok,
        format!("p={p}, q={q} ≥ 1, m={m} ≥ 4, δ={delta} > 0"),
    );
    push(
        "delta<=kappa",
        delta - kappa,
        delta <= kappa,
        format!("δ={delta}, κ={kappa}"),
    );
    push(
        "p*kappa>d",
        p * kappa - d as f64,
        p * kappa > d as f64,
        format!("pκ={}, d={d}", p * kappa),
    );

    // Σ l^{5ν} ϖ_{q,p}(l): ϖ vanishes beyond 2m
    let last = (2.0 * range).floor() as i64;
    let theta: f64 = (0..=last)
        .map(|l| (l as f64).powi(5 * nu) * mixing_bound(field, l as f64))
        .sum();
    push(
        "mixing-sum",
        theta,
        theta.is_finite(),
        format!("finite sum over l ≤ {last} (ϖ = 0 beyond 2m)"),
    );

    // Σ r^{5ν} β_q^δ(r): β vanishes for r ≥ m
    let beta_sum = if q >= 1.0 {
        (0..=range.ceil() as i64)
            .map(|r| beta_rate(field, r as f64, q).map(|b| (r as f64).powi(5 * nu) * b.powf(delta)))
            .sum::<Result<f64>>()
    } else {
        Err(validation("q < 1"))
    };
    match beta_sum {
        Ok(s) => push(
            "approximation-sum",
            s,
            s.is_finite(),
            "finite sum (β = 0 for r ≥ m)".into(),
        ),
        Err(e) => push("approximation-sum", f64::INFINITY, false, e.to_string()),
    }

    let gm = gamma_moment(&law, m);
    let gq = gamma_moment(&law, (2.0 * q * iota).max(f64::MIN_POSITIVE));
    let exponents = 1.0 / p + (iota + 1.0) / m + delta / q;
    let moments_ok = gm.is_ok() && gq.is_ok();
    push(
        "moments",
        gm.as_ref()
            .map_or(f64::INFINITY, |g| *g)
            .max(gq.as_ref().map_or(f64::INFINITY, |g| *g)),
        moments_ok,
        format!(
            "γ_m {}, γ_2qι {}",
            gm.map_or_else(|e| e.to_string(), |g| format!("= {g:.6}")),
            gq.map_or_else(|e| e.to_string(), |g| format!("= {g:.6}"))
        ),
    );
    push(
        "exponents",
        exponents,
        exponents <= 0.5,
        format!("1/p + (ι+1)/m + δ/q = {exponents:.6} ≤ 1/2"),
    );
    let pass = v.iter().all(|c| c.pass);
    Ok(AssumptionReport {
        params,
        d,
        verdicts: v,
        pass,
    })
}

/// Classical mixing coefficients at one lag.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MixingCoefficients {
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct InterpolationBounds {
    pub alpha: Option<f64>,
    pub rho: Option<f64>,
    pub phi: Option<f64>,
    pub psi: Option<f64>,
    /// Smallest of the available bounds and the trivial bound 2.
    pub best: f64,
}

fn pow0(base: f64, exp: f64) -> f64 {
    if base == 0.0 {
        0.0
    } else {
        base.powf(exp)
    }
}

/// Bounds on `ϖ_{q,p}` from α, ρ, φ and ψ mixing coefficients, `q ≥ p ≥ 1`.
pub fn interpolate_bounds(c: MixingCoefficients, p: f64, q: f64) -> Result<InterpolationBounds> {
    if !(p >= 1.0) || !(q >= p) {
        return Err(validation(format!("need q ≥ p ≥ 1, got p={p}, q={q}")));
    }
    let (ip, iq) = (1.0 / p, 1.0 / q);
    let alpha = c.alpha.map(|a| pow0(2.0 * a, ip - iq));
    let rho = c
        .rho
        .map(|r| 2f64.powf(1.0 + ip - iq) * pow0(r, 1.0 - ip + iq));
    let phi = c.phi.map(|f| 2f64.powf(1.0 + ip) * pow0(f, 1.0 - ip));
    let psi = c.psi;
    let best = [alpha, rho, phi, psi]
        .into_iter()
        .flatten()
        .fold(2.0, f64::min);
    Ok(InterpolationBounds {
        alpha,
        rho,
        phi,
        psi,
        best,
    })
}

/// Two-point interpolation `2·w0^{1−θ}·w1^θ`.
pub fn riesz_thorin(w0: f64, w1: f64, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(validation(format!("θ must lie in [0, 1], got {theta}")));
    }
    if w0 < 0.0 || w1 < 0.0 {
        return Err(validation("coefficients must be nonnegative"));
    }
    Ok(2.0 * pow0(w0, 1.0 - theta) * pow0(w1, theta))
}

/// `β_q ≤ 2^{1−a} β_p^a γ_{pq(1−a)/(p−qa)}^{1−a}` for `a ∈ (0, p/q)`.
pub fn holder_beta_bound(beta_p: f64, law: &ValueLaw, p: f64, q: f64, a: f64) -> Result<f64> {
    if !(p >= 1.0) || !(q >= p) {
        return Err(validation(format!("need q ≥ p ≥ 1, got p={p}, q={q}")));
    }
    if !(a > 0.0 && a < p / q) {
        return Err(validation(format!(
            "exponent must lie in (0, p/q), got {a}"
        )));
    }
    let theta = p * q * (1.0 - a) / (p - q * a);
    let g = gamma_moment(law, theta)?;
    Ok(2f64.powf(1.0 - a) * pow0(beta_p, a) * g.powf(1.0 - a))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::Marginal;
    use crate::observables::Holder;
    use approx::assert_relative_eq;

    #[test]
    fn gate_examples() {
        assert!(check_gate(0.9, 0.29).is_ok());
        let e = check_gate(0.9, 0.20).unwrap_err().to_string();
        assert!(e.contains("5/11·(τ+1) < 3η"), "{e}");
        assert!(check_gate(0.9, 0.31)
            .unwrap_err()
            .to_string()
            .contains("3η < τ"));
        assert!(check_gate(1.0, 0.32).is_err());
    }

    #[test]
    fn recursion_for_n6() {
        let s = BlockSchedule::build(0.9, 0.29, 6).unwrap();
        assert_eq!(&s.a[..3], &[0, 2, 4]);
        assert_eq!(&s.b[..3], &[1, 3, 6]);
        assert_eq!(s.r(2), 1);
        assert_eq!(s.r(3), 1);
        assert_eq!(s.blocks, 3);
        assert_eq!(s.a(4), 7);
        assert_eq!(s.classify(0), Segment::Block(1));
        assert_eq!(s.classify(1), Segment::Block(1));
        assert_eq!(s.classify(2), Segment::Gap(1));
        assert_eq!(s.classify(3), Segment::Block(2));
        assert_eq!(s.classify(4), Segment::Gap(2));
        assert_eq!(s.classify(6), Segment::Block(3));
        assert_eq!(s.classify(7), Segment::Gap(3));
        assert_eq!(s.classify(8), Segment::Beyond);
        let table = s.shell_table(8);
        assert!((0..=8).all(|sh| table[sh as usize] == s.classify(sh)));
        assert!(s.verify().pass());
    }

    #[test]
    fn annulus_examples() {
        let u = annulus(1, 3).unwrap();
        assert_eq!(u.len(2), 12);
        assert_eq!(u.cardinality_bound(2), 16);
        assert_eq!(u.points(2).len(), 12);
        let v = annulus(2, 5).unwrap();
        let pts: Vec<i64> = v.points(1).iter().map(|p| p.coords()[0]).collect();
        assert_eq!(pts, vec![3, 4, 5]);
        assert_eq!(cube(3, 0), vec![(0, 0); 3]);
        assert!(annulus(3, 3).is_err());
    }

    #[test]
    fn assumption_examples() {
        let field = FieldSpec::gaussian_ma(1, vec![(vec![0], 1.0), (vec![1], 1.0)]);
        let obs = crate::observables::Observable::product(&[0, 0], 1)
            .unwrap()
            .with_holder(Holder::new(1.0, 1.0, 1.0).unwrap())
            .unwrap();
        let ok = check_assumption(
            &field,
            &obs,
            AssumptionParams {
                p: 8.0,
                q: 8.0,
                m: 16.0,
                delta: 1.0,
            },
        )
        .unwrap();
        assert!(ok.pass, "{ok:?}");
        assert_relative_eq!(ok.verdict("exponents").unwrap().value, 0.375);
        let bad = check_assumption(
            &field,
            &obs,
            AssumptionParams {
                p: 8.0,
                q: 8.0,
                m: 4.0,
                delta: 1.0,
            },
        )
        .unwrap();
        assert!(!bad.verdict("exponents").unwrap().pass);
        assert_relative_eq!(bad.verdict("exponents").unwrap().value, 0.75);

        let heavy = FieldSpec::iid(1, Marginal::StudentT { dof: 5.0 });
        let r = check_assumption(
            &heavy,
            &obs,
            AssumptionParams {
                p: 8.0,
                q: 8.0,
                m: 16.0,
                delta: 1.0,
            },
        )
        .unwrap();
        assert!(!r.verdict("moments").unwrap().pass);
        assert!(!r.pass);
    }

    #[test]
    fn interpolation_examples() {
        let none = MixingCoefficients::default();
        let b = interpolate_bounds(
            MixingCoefficients {
                alpha: Some(0.0),
                ..none
            },
            2.0,
            4.0,
        )
        .unwrap();
        assert_eq!(b.best, 0.0);
        let b = interpolate_bounds(
            MixingCoefficients {
                alpha: Some(0.08),
                ..none
            },
            2.0,
            4.0,
        )
        .unwrap();
        assert_relative_eq!(b.alpha.unwrap(), 0.16f64.powf(0.25), epsilon = 1e-15);
        assert_relative_eq!(b.best, 0.632455532, epsilon = 1e-9);
        let b = interpolate_bounds(
            MixingCoefficients {
                phi: Some(0.0),
                ..none
            },
            2.0,
            4.0,
        )
        .unwrap();
        assert_eq!(b.phi, Some(0.0));
        assert!(interpolate_bounds(none, 4.0, 2.0).is_err());
        assert_eq!(riesz_thorin(0.0, 2.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn holder_beta_is_monotone() {
        let law = ValueLaw::scalar(Marginal::standard_normal());
        let lo = holder_beta_bound(0.1, &law, 2.0, 4.0, 0.25).unwrap();
        let hi = holder_beta_bound(0.2, &law, 2.0, 4.0, 0.25).unwrap();
        assert!(lo < hi);
        assert!(holder_beta_bound(0.1, &law, 2.0, 4.0, 0.6).is_err());
    }
}
