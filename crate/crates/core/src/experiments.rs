//! Replicated simulation across scales `N` and the pass/fail verdicts built
//! on it.
//!
//! Replica `r` at scale `N` uses seed `derive_seed(derive_seed(seed, N), r)`;
//! replicas run in parallel and are aggregated in replica order, so a report
//! is a pure function of the plan.

use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::covariance::{d_matrix, CovarianceModel, CovarianceOptions};
use crate::distributions::Marginal;
use crate::error::{validation, Result};
use crate::lattice::TimePoint;
use crate::noise::derive_seed;
use crate::observables::{decompose, DecomposedObservable, Observable};
use crate::qmaps::QFamily;
use crate::quadrature::QuadratureConfig;
use crate::random_fields::FieldSpec;
use crate::schedule::{BlockSchedule, DEFAULT_ETA, DEFAULT_TAU};
use crate::stats::{gauss_check, mean_se, median, GaussDiagnostics, MeanSe, GAUSS_MIN_SAMPLES};
use crate::sums::{write_csv, SumRequest, SumResult};

/// Fewest replicas for which any statistical verdict is issued.
pub const MIN_REPLICAS: usize = 100;
pub const SE_MULTIPLIER: f64 = 3.0;
pub const ABS_FLOOR: f64 = 0.05;
pub const SKEW_GATE: f64 = 0.1;
pub const KURTOSIS_GATE: f64 = 0.3;
pub const NORMALITY_P_GATE: f64 = 0.01;
pub const MOMENT4_RATIO_GATE: f64 = 1.5;
pub const SLLN_RATE_TOL: f64 = 0.3;
const CRAMER_WOLD_STREAM: u64 = 0x4357;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Check {
    Cov,
    Gauss,
    Moment4,
    Slln,
    Cross,
    Gaps,
}

impl Check {
    pub const ALL: [Check; 6] = [
        Check::Cov,
        Check::Gauss,
        Check::Moment4,
        Check::Slln,
        Check::Cross,
        Check::Gaps,
    ];
}

/// `max(3·SE, 0.05)`.
pub fn tolerance(se: f64) -> f64 {
    (SE_MULTIPLIER * se).max(ABS_FLOOR)
}

pub fn replica_seed(master: u64, n: u64, replica: u64) -> u64 {
    derive_seed(derive_seed(master, n), replica)
}

#[derive(Clone, Debug)]
pub struct ExperimentPlan {
    pub field: FieldSpec,
    pub observable: Observable,
    pub qfamily: QFamily,
    pub n_grid: Vec<u64>,
    pub replicas: usize,
    pub targets: Vec<TimePoint>,
    pub pairs: Vec<(TimePoint, TimePoint)>,
    pub seed: u64,
    pub checks: Vec<Check>,
    pub tau: f64,
    pub eta: f64,
    pub covariance: CovarianceOptions,
    pub quadrature: QuadratureConfig,
    /// Number of random linear combinations in the joint Gaussianity check.
    pub cramer_wold: usize,
    pub config_hash: String,
}

/// `s ∈ {0, ¼, ½}` × `t ∈ {½, ¾, 1}`, uniform across coordinates.
pub fn default_pairs(nu: usize) -> Vec<(TimePoint, TimePoint)> {
    let mut out = Vec::new();
    for s in [0.0, 0.25, 0.5] {
        for t in [0.5, 0.75, 1.0] {
            out.push((
                TimePoint::uniform(nu, s).unwrap(),
                TimePoint::uniform(nu, t).unwrap(),
            ));
        }
    }
    out
}

pub fn default_targets(nu: usize) -> Vec<TimePoint> {
    [0.25, 0.5, 1.0]
        .iter()
        .map(|&v| TimePoint::uniform(nu, v).unwrap())
        .collect()
}

impl ExperimentPlan {
    pub fn new(field: FieldSpec, observable: Observable, qfamily: QFamily) -> Self {
        let nu = field.nu;
        ExperimentPlan {
            field,
            observable,
            qfamily,
            n_grid: vec![16, 32, 64],
            replicas: 1000,
            targets: default_targets(nu),
            pairs: default_pairs(nu),
            seed: 0,
            checks: Check::ALL.to_vec(),
            tau: DEFAULT_TAU,
            eta: DEFAULT_ETA,
            covariance: CovarianceOptions::default(),
            quadrature: QuadratureConfig::default(),
            cramer_wold: 8,
            config_hash: String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.field.validate()?;
        self.qfamily.validate()?;
        if self.n_grid.is_empty()
            || self.n_grid.windows(2).any(|w| w[0] >= w[1])
            || self.n_grid[0] == 0
        {
            return Err(validation(
                "N grid must be nonempty, positive and strictly increasing",
            ));
        }
        if self.replicas < 2 {
            return Err(validation("need at least 2 replicas"));
        }
        let nu = self.field.nu;
        if !self
            .targets
            .iter()
            .any(|t| t.coords().iter().all(|&x| x == 1.0))
        {
            return Err(validation("targets must include the corner t = (1, …, 1)"));
        }
        if !self
            .targets
            .iter()
            .any(|t| t.coords().iter().all(|&x| x > 0.0 && x < 1.0))
        {
            return Err(validation("targets must include an interior point"));
        }
        if self
            .targets
            .iter()
            .chain(self.pairs.iter().flat_map(|(s, t)| [s, t]))
            .any(|t| t.dim() != nu)
        {
            return Err(validation(format!("time points must be {nu}-dimensional")));
        }
        crate::schedule::check_gate(self.tau, self.eta)?;
        Ok(())
    }

    fn corner(&self) -> usize {
        self.targets
            .iter()
            .position(|t| t.coords().iter().all(|&x| x == 1.0))
            .unwrap_or(0)
    }

    fn wants(&self, c: Check) -> bool {
        self.checks.contains(&c)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Pass,
    Fail,
    InsufficientReplicas,
    Degenerate,
    NotApplicable,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Verdict {
    pub check: Check,
    pub status: Status,
    /// The tested quantity, e.g. the worst error or a ratio.
    pub statistic: f64,
    pub threshold: f64,
    pub tolerance: String,
    pub reference: String,
    pub detail: String,
}

impl Verdict {
    pub fn failed(&self) -> bool {
        self.status == Status::Fail
    }
}

/// One empirical second moment `E ξ_{i,N}(s) ξ_{j,N}(t)`; `i = j = 0` is the
/// full `ξ_N`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CovEntry {
    pub i: usize,
    pub j: usize,
    pub s: TimePoint,
    pub t: TimePoint,
    pub empirical: f64,
    pub se: f64,
    pub predicted: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Moment4Entry {
    pub i: usize,
    /// `max` over the grid of `E|ξ_{i,N}(s,t)|⁴ / ∏(t_l − s_l + 1/N)²`.
    pub c_hat: f64,
    pub per_pair: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CrossEntry {
    pub i: usize,
    pub j: usize,
    pub mean: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GapEntry {
    pub i: usize,
    /// RMS over replicas of `ξ_{i,N}(1) − ζ_{i,N}(1)`.
    pub rms: f64,
    pub zeta_mean: f64,
    pub zeta_se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScaleStats {
    pub n: u64,
    pub replicas: usize,
    pub cov: Vec<CovEntry>,
    pub moment4: Vec<Moment4Entry>,
    /// Median over replicas of `|S_N(1)| / N^ν`.
    pub slln_median: f64,
    pub cross: Vec<CrossEntry>,
    pub gaps: Vec<GapEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GaussEntry {
    pub label: String,
    pub diagnostics: GaussDiagnostics,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScheduleInfo {
    pub n: u64,
    pub blocks: usize,
    pub a: Vec<i64>,
    pub b: Vec<i64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub config_hash: String,
    pub seed: u64,
    pub replica_seed_rule: String,
    pub replicas: usize,
    pub n_grid: Vec<u64>,
    pub checks: Vec<Check>,
    pub tau: f64,
    pub eta: f64,
    pub schedules: Vec<ScheduleInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub manifest: Manifest,
    pub covariance: CovarianceModel,
    pub scales: Vec<ScaleStats>,
    pub gauss: Vec<GaussEntry>,
    pub verdicts: Vec<Verdict>,
    pub pass: bool,
}

impl ExperimentReport {
    pub fn verdict(&self, check: Check) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.check == check)
    }

    pub fn any_failed(&self) -> bool {
        self.verdicts.iter().any(Verdict::failed)
    }
}

pub struct ScaleRun {
    pub request: SumRequest,
    pub results: Vec<SumResult>,
}

pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub runs: Vec<ScaleRun>,
}

/// Simulates `R` replicas at every `N` of the plan and evaluates its checks.
pub fn run(plan: &ExperimentPlan) -> Result<ExperimentOutput> {
    plan.validate()?;
    let law = plan.field.value_law();
    let dec = Arc::new(decompose(&plan.observable, &law, &plan.quadrature)?);
    let model = d_matrix(&plan.field, &dec, plan.qfamily.k, &plan.covariance)?;

    let mut runs = Vec::with_capacity(plan.n_grid.len());
    let mut schedules = Vec::with_capacity(plan.n_grid.len());
    for &n in &plan.n_grid {
        let schedule = BlockSchedule::build(plan.tau, plan.eta, n)?;
        schedules.push(ScheduleInfo {
            n,
            blocks: schedule.blocks,
            a: schedule.a.clone(),
            b: schedule.b.clone(),
        });
        let mut req = SumRequest::new(plan.field.clone(), dec.clone(), plan.qfamily.clone(), n)?
            .with_targets(plan.targets.clone())?
            .with_pairs(plan.pairs.clone())?;
        if plan.wants(Check::Gaps) {
            req = req.with_blocks(schedule, TimePoint::ones(plan.field.nu))?;
        }
        let cover = req.cover()?;
        let results = (0..plan.replicas as u64)
            .into_par_iter()
            .map(|r| {
                req.realize_on(&cover, replica_seed(plan.seed, n, r))?
                    .run(r)
            })
            .collect::<Result<Vec<_>>>()?;
        runs.push(ScaleRun {
            request: req,
            results,
        });
    }

    let scales: Vec<ScaleStats> = runs
        .iter()
        .map(|run| scale_stats(plan, &model, &dec, run))
        .collect();
    let mut gauss = Vec::new();
    let mut verdicts = Vec::new();
    for &check in &Check::ALL {
        if !plan.wants(check) {
            continue;
        }
        let v = match check {
            Check::Cov => cov_verdict(plan, &scales),
            Check::Gauss => {
                let (entries, v) = gauss_verdict(plan, runs.last().expect("nonempty grid"));
                gauss = entries;
                v
            }
            Check::Moment4 => moment4_verdict(plan, &dec, &scales),
            Check::Slln => slln_verdict(plan, &scales),
            Check::Cross => cross_verdict(plan, &scales),
            Check::Gaps => gaps_verdict(plan, &dec, &scales),
        };
        verdicts.push(v);
    }
    let pass = !verdicts.iter().any(Verdict::failed);
    let manifest = Manifest {
        config_hash: plan.config_hash.clone(),
        seed: plan.seed,
        replica_seed_rule: "derive_seed(derive_seed(seed, N), replica)".into(),
        replicas: plan.replicas,
        n_grid: plan.n_grid.clone(),
        checks: plan.checks.clone(),
        tau: plan.tau,
        eta: plan.eta,
        schedules,
    };
    Ok(ExperimentOutput {
        report: ExperimentReport {
            manifest,
            covariance: model,
            scales,
            gauss,
            verdicts,
            pass,
        },
        runs,
    })
}

/// Predicted `E ξ_N(s) ξ_N(t)`, using `ξ_N(t) = Σ_{i≤k} ξ_{i,N}(it) + Σ_{i>k} ξ_{i,N}(t)`.
fn predicted_total(model: &CovarianceModel, s: &TimePoint, t: &TimePoint) -> f64 {
    let mut acc = 0.0;
    for i in 1..=model.k {
        for j in 1..=model.k {
            let m: f64 = s
                .coords()
                .iter()
                .zip(t.coords())
                .map(|(a, b)| (i as f64 * a).min(j as f64 * b))
                .product();
            acc += model.d(i, j) * m;
        }
    }
    for i in model.k + 1..=model.ell {
        acc += model.high_variance(i).unwrap_or(0.0) * s.min_product(t);
    }
    acc
}

fn scale_stats(
    plan: &ExperimentPlan,
    model: &CovarianceModel,
    dec: &DecomposedObservable,
    run: &ScaleRun,
) -> ScaleStats {
    let res = &run.results;
    let n = run.request.n;
    let ell = plan.qfamily.ell();
    let k = plan.qfamily.k;
    let nt = plan.targets.len();
    let corner = plan.corner();
    let col = |f: &dyn Fn(&SumResult) -> f64| -> Vec<f64> { res.iter().map(f).collect() };
    let entry = |i: usize, j: usize, a: usize, b: usize, vals: Vec<f64>, predicted: f64| {
        let MeanSe { mean, se } = mean_se(&vals);
        let se = if se.is_nan() { 0.0 } else { se };
        let tol = tolerance(se);
        CovEntry {
            i,
            j,
            s: plan.targets[a].clone(),
            t: plan.targets[b].clone(),
            empirical: mean,
            se,
            predicted,
            tolerance: tol,
            pass: (mean - predicted).abs() <= tol,
        }
    };

    let mut cov = Vec::new();
    if plan.wants(Check::Cov) {
        for a in 0..nt {
            for b in a..nt {
                let vals = col(&|r| r.xi[a] * r.xi[b]);
                cov.push(entry(
                    0,
                    0,
                    a,
                    b,
                    vals,
                    predicted_total(model, &plan.targets[a], &plan.targets[b]),
                ));
            }
        }
        for i in 1..=ell {
            for j in i..=ell {
                for a in 0..nt {
                    for b in 0..nt {
                        if i == j && b < a {
                            continue;
                        }
                        let vals = col(&|r| r.components[i - 1][a] * r.components[j - 1][b]);
                        cov.push(entry(
                            i,
                            j,
                            a,
                            b,
                            vals,
                            model.predicted(i, j, &plan.targets[a], &plan.targets[b]),
                        ));
                    }
                }
            }
        }
    }

    let mut moment4 = Vec::new();
    if plan.wants(Check::Moment4) && !plan.pairs.is_empty() {
        let nf = n as f64;
        for i in (1..=ell).filter(|&i| !dec.is_zero_component(i)) {
            let per_pair: Vec<f64> = plan
                .pairs
                .iter()
                .enumerate()
                .map(|(p, (s, t))| {
                    let m4 = crate::stats::mean(&col(&|r| r.increments[i - 1][p].powi(4)));
                    let vol: f64 = s
                        .coords()
                        .iter()
                        .zip(t.coords())
                        .map(|(a, b)| b - a + 1.0 / nf)
                        .product();
                    m4 / (vol * vol)
                })
                .collect();
            let c_hat = per_pair.iter().copied().fold(0.0, f64::max);
            moment4.push(Moment4Entry { i, c_hat, per_pair });
        }
    }

    let nu = plan.field.nu as f64;
    let slln_median = median(&col(&|r| r.xi[corner].abs() * (n as f64).powf(-nu / 2.0)));

    let mut cross = Vec::new();
    if plan.wants(Check::Cross) {
        for i in k + 1..=ell {
            for j in 1..i {
                let MeanSe { mean, se } = mean_se(&col(&|r| {
                    r.components[i - 1][corner] * r.components[j - 1][corner]
                }));
                cross.push(CrossEntry { i, j, mean, se });
            }
        }
    }

    let mut gaps = Vec::new();
    if plan.wants(Check::Gaps) {
        for i in (1..=ell).filter(|&i| !dec.is_zero_component(i)) {
            let d2 = crate::stats::mean(&col(&|r| {
                let b = &r.blocks[i - 1];
                (b.xi - b.zeta).powi(2)
            }));
            let z = mean_se(&col(&|r| r.blocks[i - 1].zeta));
            gaps.push(GapEntry {
                i,
                rms: d2.sqrt(),
                zeta_mean: z.mean,
                zeta_se: z.se,
            });
        }
    }

    ScaleStats {
        n,
        replicas: res.len(),
        cov,
        moment4,
        slln_median,
        cross,
        gaps,
    }
}

fn insufficient(
    plan: &ExperimentPlan,
    check: Check,
    need: usize,
    reference: &str,
) -> Option<Verdict> {
    (plan.replicas < need).then(|| Verdict {
        check,
        status: Status::InsufficientReplicas,
        statistic: plan.replicas as f64,
        threshold: need as f64,
        tolerance: format!("R ≥ {need}"),
        reference: reference.into(),
        detail: format!("{} replicas; verdict withheld", plan.replicas),
    })
}

fn na(check: Check, reference: &str, detail: &str) -> Verdict {
    Verdict {
        check,
        status: Status::NotApplicable,
        statistic: f64::NAN,
        threshold: f64::NAN,
        tolerance: String::new(),
        reference: reference.into(),
        detail: detail.into(),
    }
}

fn cov_verdict(plan: &ExperimentPlan, scales: &[ScaleStats]) -> Verdict {
    let reference = "E ξ_{i,N}(s)ξ_{j,N}(t) → D_{i,j}∏min(s_l,t_l) (i,j ≤ k), high variance·∏min (i = j > k), 0 otherwise";
    if let Some(v) = insufficient(plan, Check::Cov, MIN_REPLICAS, reference) {
        return v;
    }
    let last = scales.last().expect("nonempty grid");
    let worst = last.cov.iter().max_by(|a, b| {
        ((a.empirical - a.predicted).abs() / a.tolerance)
            .total_cmp(&((b.empirical - b.predicted).abs() / b.tolerance))
    });
    let failed = last.cov.iter().filter(|e| !e.pass).count();
    let (statistic, threshold, detail) = match worst {
        Some(w) => (
            (w.empirical - w.predicted).abs(),
            w.tolerance,
            format!(
                "N={}: {failed}/{} entries outside tolerance; worst (i={}, j={}, s={:?}, t={:?}) empirical {:.5} ± {:.5} vs predicted {:.5}",
                last.n,
                last.cov.len(),
                w.i,
                w.j,
                w.s.coords(),
                w.t.coords(),
                w.empirical,
                w.se,
                w.predicted
            ),
        ),
        None => (0.0, ABS_FLOOR, "no entries".into()),
    };
    Verdict {
        check: Check::Cov,
        status: if failed == 0 {
            Status::Pass
        } else {
            Status::Fail
        },
        statistic,
        threshold,
        tolerance: "every entry within max(3·SE, 0.05) at the largest N".into(),
        reference: reference.into(),
        detail,
    }
}

/// `ξ_N` at the corner plus random combinations `Σ_a Σ_i d_a e_i ξ_{i,N}(t_a)`
/// over the first three targets.
fn gauss_verdict(plan: &ExperimentPlan, run: &ScaleRun) -> (Vec<GaussEntry>, Verdict) {
    let reference = "ξ_N(t) and finite-dimensional combinations are asymptotically Gaussian";
    let tol = format!(
        "|skewness| < {SKEW_GATE}, |excess kurtosis| < {KURTOSIS_GATE}, KS p > {NORMALITY_P_GATE}"
    );
    if let Some(v) = insufficient(plan, Check::Gauss, GAUSS_MIN_SAMPLES, reference) {
        return (Vec::new(), v);
    }
    let res = &run.results;
    let corner = plan.corner();
    let mut entries = vec![GaussEntry {
        label: "xi_N(1)".into(),
        diagnostics: gauss_check(&res.iter().map(|r| r.xi[corner]).collect::<Vec<_>>()),
    }];
    let ell = plan.qfamily.ell();
    let times = plan.targets.len().min(3);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, CRAMER_WOLD_STREAM));
    let z = Marginal::standard_normal();
    for c in 0..plan.cramer_wold {
        let d: Vec<f64> = (0..times).map(|_| z.sample(&mut rng)).collect();
        let e: Vec<f64> = (0..ell).map(|_| z.sample(&mut rng)).collect();
        let vals: Vec<f64> = res
            .iter()
            .map(|r| {
                let mut acc = 0.0;
                for (a, da) in d.iter().enumerate() {
                    for (i, ei) in e.iter().enumerate() {
                        acc += da * ei * r.components[i][a];
                    }
                }
                acc
            })
            .collect();
        entries.push(GaussEntry {
            label: format!("cramer_wold_{c}"),
            diagnostics: gauss_check(&vals),
        });
    }
    let live: Vec<&GaussEntry> = entries
        .iter()
        .filter(|e| !e.diagnostics.degenerate)
        .collect();
    let fails: Vec<&str> = live
        .iter()
        .filter(|e| {
            let g = &e.diagnostics;
            !(g.skewness.abs() < SKEW_GATE
                && g.excess_kurtosis.abs() < KURTOSIS_GATE
                && g.ks_p_value > NORMALITY_P_GATE)
        })
        .map(|e| e.label.as_str())
        .collect();
    let worst_skew = live
        .iter()
        .map(|e| e.diagnostics.skewness.abs())
        .fold(0.0, f64::max);
    let worst_kurt = live
        .iter()
        .map(|e| e.diagnostics.excess_kurtosis.abs())
        .fold(0.0, f64::max);
    let min_p = live
        .iter()
        .map(|e| e.diagnostics.ks_p_value)
        .fold(1.0, f64::min);
    let status = if live.is_empty() {
        Status::Degenerate
    } else if fails.is_empty() {
        Status::Pass
    } else {
        Status::Fail
    };
    let v = Verdict {
        check: Check::Gauss,
        status,
        statistic: worst_skew,
        threshold: SKEW_GATE,
        tolerance: tol,
        reference: reference.into(),
        detail: format!(
            "N={}: {} samples sets ({} degenerate); worst |skew| {worst_skew:.4}, worst |kurt| {worst_kurt:.4}, min KS p {min_p:.4}; failing: {fails:?}",
            run.request.n,
            entries.len(),
            entries.len() - live.len()
        ),
    };
    (entries, v)
}

fn moment4_verdict(
    plan: &ExperimentPlan,
    dec: &DecomposedObservable,
    scales: &[ScaleStats],
) -> Verdict {
    let reference = "E|ξ_{i,N}(s,t)|⁴ ≤ Ĉ ∏(t_l − s_l + 1/N)² with Ĉ independent of N";
    if let Some(v) = insufficient(plan, Check::Moment4, GAUSS_MIN_SAMPLES, reference) {
        return v;
    }
    if plan.pairs.is_empty() {
        return na(Check::Moment4, reference, "no (s,t) grid");
    }
    let tolerance = format!("max_N Ĉ / min_N Ĉ ≤ {MOMENT4_RATIO_GATE}");
    let live: Vec<usize> = (1..=plan.qfamily.ell())
        .filter(|&i| !dec.is_zero_component(i))
        .collect();
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (slot, &i) in live.iter().enumerate() {
        let c: Vec<f64> = scales.iter().map(|s| s.moment4[slot].c_hat).collect();
        let hi = c.iter().copied().fold(0.0, f64::max);
        let lo = c.iter().copied().fold(f64::INFINITY, f64::min);
        let ratio = if hi == 0.0 { 0.0 } else { hi / lo };
        worst = worst.max(ratio);
        detail.push(format!("i={i}: Ĉ {c:.4?} ratio {ratio:.4}"));
    }
    Verdict {
        check: Check::Moment4,
        status: if worst <= MOMENT4_RATIO_GATE {
            Status::Pass
        } else {
            Status::Fail
        },
        statistic: worst,
        threshold: MOMENT4_RATIO_GATE,
        tolerance,
        reference: reference.into(),
        detail: if detail.is_empty() {
            "all components vanish; Ĉ = 0".into()
        } else {
            detail.join("; ")
        },
    }
}

fn slln_verdict(plan: &ExperimentPlan, scales: &[ScaleStats]) -> Verdict {
    let reference = "|S_N(1)|/N^ν → 0 at rate N^{-ν/2}";
    if let Some(v) = insufficient(plan, Check::Slln, MIN_REPLICAS, reference) {
        return v;
    }
    if scales.len() < 3 {
        return na(Check::Slln, reference, "needs at least 3 scales");
    }
    let (first, last) = (&scales[0], &scales[scales.len() - 1]);
    let nu = plan.field.nu as f64;
    let expected = (last.n as f64 / first.n as f64).powf(-nu / 2.0);
    let medians: Vec<f64> = scales.iter().map(|s| s.slln_median).collect();
    let (ratio, dev) = if first.slln_median == 0.0 && last.slln_median == 0.0 {
        (0.0, 0.0)
    } else {
        let r = last.slln_median / first.slln_median;
        (r, (r / expected - 1.0).abs())
    };
    Verdict {
        check: Check::Slln,
        status: if dev <= SLLN_RATE_TOL {
            Status::Pass
        } else {
            Status::Fail
        },
        statistic: ratio,
        threshold: expected,
        tolerance: format!(
            "median ratio within ±{:.0}% of (N_last/N_first)^(-ν/2)",
            SLLN_RATE_TOL * 100.0
        ),
        reference: reference.into(),
        detail: format!("medians {medians:.5?}; ratio {ratio:.4} vs {expected:.4}"),
    }
}

fn cross_verdict(plan: &ExperimentPlan, scales: &[ScaleStats]) -> Verdict {
    let reference = "E ξ_{i,N}(1)ξ_{j,N}(1) → 0 for i > k, j < i";
    if let Some(v) = insufficient(plan, Check::Cross, MIN_REPLICAS, reference) {
        return v;
    }
    let last = scales.last().expect("nonempty grid");
    if last.cross.is_empty() {
        return na(Check::Cross, reference, "no nonlinear index");
    }
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (slot, e) in last.cross.iter().enumerate() {
        let z = if e.mean == 0.0 {
            0.0
        } else {
            e.mean.abs() / e.se
        };
        worst = worst.max(z);
        let path: Vec<String> = scales
            .iter()
            .map(|s| format!("{:.4}±{:.4}", s.cross[slot].mean, s.cross[slot].se))
            .collect();
        detail.push(format!("(i={}, j={}): {}", e.i, e.j, path.join(" → ")));
    }
    Verdict {
        check: Check::Cross,
        status: if worst <= SE_MULTIPLIER {
            Status::Pass
        } else {
            Status::Fail
        },
        statistic: worst,
        threshold: SE_MULTIPLIER,
        tolerance: "|mean| ≤ 3·SE at the largest N".into(),
        reference: reference.into(),
        detail: detail.join("; "),
    }
}

fn gaps_verdict(
    plan: &ExperimentPlan,
    dec: &DecomposedObservable,
    scales: &[ScaleStats],
) -> Verdict {
    let reference = "‖ξ_{i,N}(1) − ζ_{i,N}(1)‖₂ → 0 and E ζ_{i,N}(1) → 0";
    if let Some(v) = insufficient(plan, Check::Gaps, MIN_REPLICAS, reference) {
        return v;
    }
    if scales.len() < 2 {
        return na(Check::Gaps, reference, "needs at least 2 scales");
    }
    let live: Vec<usize> = (1..=plan.qfamily.ell())
        .filter(|&i| !dec.is_zero_component(i))
        .collect();
    let mut ok = true;
    let mut worst = 0.0f64;
    let mut detail = Vec::new();
    for (slot, &i) in live.iter().enumerate() {
        let rms: Vec<f64> = scales.iter().map(|s| s.gaps[slot].rms).collect();
        let monotone = rms.windows(2).all(|w| w[1] < w[0]) || rms.iter().all(|&r| r == 0.0);
        let ratio = if rms[0] == 0.0 {
            0.0
        } else {
            rms[rms.len() - 1] / rms[0]
        };
        let z = &scales[scales.len() - 1].gaps[slot];
        let mean_ok =
            z.zeta_mean.abs() <= tolerance(if z.zeta_se.is_nan() { 0.0 } else { z.zeta_se });
        ok &= monotone && ratio <= 0.5 && mean_ok;
        worst = worst.max(ratio);
        detail.push(format!(
            "i={i}: RMS {rms:.4?} (monotone {monotone}, final/initial {ratio:.3}); E ζ {:.4} ± {:.4}",
            z.zeta_mean, z.zeta_se
        ));
    }
    Verdict {
        check: Check::Gaps,
        status: if ok { Status::Pass } else { Status::Fail },
        statistic: worst,
        threshold: 0.5,
        tolerance: "RMS strictly decreasing over N, final ≤ ½ initial; |E ζ| ≤ max(3·SE, 0.05)"
            .into(),
        reference: reference.into(),
        detail: if detail.is_empty() {
            "all components vanish".into()
        } else {
            detail.join("; ")
        },
    }
}

/// `# key=value` line heading every CSV.
pub fn csv_preamble(report: &ExperimentReport) -> String {
    let m = &report.manifest;
    format!(
        "# config_hash={} seed={} tau={} eta={} replicas={}",
        m.config_hash, m.seed, m.tau, m.eta, m.replicas
    )
}

/// Writes `sums.csv` plus one table per check into `dir`.
pub fn write_tables(
    dir: &std::path::Path,
    out: &ExperimentOutput,
) -> Result<Vec<std::path::PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let pre = csv_preamble(&out.report);
    let mut written = Vec::new();
    let mut open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let path = dir.join(name);
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        writeln!(f, "{pre}")?;
        written.push(path);
        Ok(f)
    };
    let mut f = open("sums.csv")?;
    for (idx, run) in out.runs.iter().enumerate() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &run.request, &run.results)?;
        let text = String::from_utf8_lossy(&buf);
        // one header for the whole table
        let body = if idx == 0 {
            &text[..]
        } else {
            text.split_once('\n').map_or("", |x| x.1)
        };
        f.write_all(body.as_bytes())?;
    }
    f.flush()?;

    let coords = |t: &TimePoint| {
        t.coords()
            .iter()
            .map(|x| format!("{x:?}"))
            .collect::<Vec<_>>()
            .join(";")
    };
    let scales = &out.report.scales;
    let mut f = open("covariance_entries.csv")?;
    writeln!(f, "N,i,j,s,t,empirical,se,predicted,tolerance,pass")?;
    for s in scales {
        for e in &s.cov {
            writeln!(
                f,
                "{},{},{},{},{},{:?},{:?},{:?},{:?},{}",
                s.n,
                e.i,
                e.j,
                coords(&e.s),
                coords(&e.t),
                e.empirical,
                e.se,
                e.predicted,
                e.tolerance,
                e.pass
            )?;
        }
    }
    f.flush()?;
    let mut f = open("moment4.csv")?;
    writeln!(f, "N,i,c_hat")?;
    for s in scales {
        for e in &s.moment4 {
            writeln!(f, "{},{},{:?}", s.n, e.i, e.c_hat)?;
        }
    }
    f.flush()?;
    let mut f = open("slln.csv")?;
    writeln!(f, "N,median_abs_S_over_N_nu")?;
    for s in scales {
        writeln!(f, "{},{:?}", s.n, s.slln_median)?;
    }
    f.flush()?;
    let mut f = open("cross.csv")?;
    writeln!(f, "N,i,j,mean,se")?;
    for s in scales {
        for e in &s.cross {
            writeln!(f, "{},{},{},{:?},{:?}", s.n, e.i, e.j, e.mean, e.se)?;
        }
    }
    f.flush()?;
    let mut f = open("gaps.csv")?;
    writeln!(f, "N,i,rms,zeta_mean,zeta_se")?;
    for s in scales {
        for e in &s.gaps {
            writeln!(
                f,
                "{},{},{:?},{:?},{:?}",
                s.n, e.i, e.rms, e.zeta_mean, e.zeta_se
            )?;
        }
    }
    f.flush()?;
    let mut f = open("gauss.csv")?;
    writeln!(
        f,
        "label,n,skewness,excess_kurtosis,ks_statistic,ks_p_value,jarque_bera_p_value,degenerate"
    )?;
    for e in &out.report.gauss {
        let g = &e.diagnostics;
        writeln!(
            f,
            "{},{},{:?},{:?},{:?},{:?},{:?},{}",
            e.label,
            g.n,
            g.skewness,
            g.excess_kurtosis,
            g.ks_statistic,
            g.ks_p_value,
            g.jarque_bera_p_value,
            g.degenerate
        )?;
    }
    f.flush()?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid_plan(obs: Observable, k: usize) -> ExperimentPlan {
        let field = FieldSpec::iid(1, Marginal::standard_normal());
        let q = QFamily::linear(1, k).unwrap();
        let mut p = ExperimentPlan::new(field, obs, q);
        p.n_grid = vec![8, 16, 32];
        p.replicas = 120;
        p.seed = 5;
        p
    }

    #[test]
    fn zero_observable_passes_trivially() {
        let out = run(&iid_plan(Observable::zero(1, 1).unwrap(), 1)).unwrap();
        for s in &out.report.scales {
            assert!(s.cov.iter().all(|e| e.empirical == 0.0 && e.pass));
        }
        for v in &out.report.verdicts {
            assert_ne!(v.status, Status::Fail, "{v:?}");
        }
    }

    #[test]
    fn few_replicas_withhold_verdicts() {
        let mut p = iid_plan(Observable::linear(&[1.0]).unwrap(), 1);
        p.replicas = 10;
        let out = run(&p).unwrap();
        assert!(
            out.report
                .verdicts
                .iter()
                .all(|v| v.status == Status::InsufficientReplicas
                    || v.status == Status::NotApplicable)
        );
        assert!(!out.report.any_failed());
    }

    #[test]
    fn reports_are_reproducible() {
        let mut p = iid_plan(Observable::linear(&[1.0, 1.0]).unwrap(), 2);
        p.checks = vec![Check::Cov];
        let a = serde_json::to_string(&run(&p).unwrap().report).unwrap();
        let b = serde_json::to_string(&run(&p).unwrap().report).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_needs_corner_and_interior_targets() {
        let mut p = iid_plan(Observable::linear(&[1.0]).unwrap(), 1);
        p.targets = vec![TimePoint::ones(1)];
        assert!(p.validate().is_err());
        p.targets = vec![TimePoint::uniform(1, 0.5).unwrap()];
        assert!(p.validate().is_err());
    }

    #[test]
    fn predicted_total_for_linear_sum() {
        // ξ_N(1) = ξ_1(1) + ξ_2(2): D11 + 2·D12 + D22·2 → 1 + 1 + 1 = 3
        let field = FieldSpec::iid(1, Marginal::standard_normal());
        let dec = decompose(
            &Observable::linear(&[1.0, 1.0]).unwrap(),
            &field.value_law(),
            &QuadratureConfig::default(),
        )
        .unwrap();
        let m = d_matrix(&field, &dec, 2, &CovarianceOptions::default()).unwrap();
        let one = TimePoint::ones(1);
        assert!((predicted_total(&m, &one, &one) - 3.0).abs() < 1e-12);
    }
}
