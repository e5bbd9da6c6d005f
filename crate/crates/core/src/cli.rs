//! `rf-lab init|check|covariance|simulate`.
//!
//! Exit codes: 0 ok, 1 config error, 2 precondition failure, 3 statistical
//! failure.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::config::{Config, TEMPLATE};
use crate::covariance::{d_matrix, diophantine_count, CovarianceModel};
use crate::error::{Error, Result};
use crate::experiments::{self, Status};
use crate::lattice::{LatticePoint, TimePoint};
use crate::observables::{check_holder, decompose};
use crate::qmaps::default_scan_radius;
use crate::quadrature::QuadratureConfig;
use crate::schedule::{check_assumption, check_gate, BlockSchedule};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_PRECONDITION: i32 = 2;
pub const EXIT_STATISTICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "rf-lab",
    version,
    about = "Monte Carlo checks for nonconventional sums over lattice random fields"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, default_value = "rf-lab.toml")]
    pub config: PathBuf,
    /// Overrides `experiment.seed`.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides `experiment.replicas`.
    #[arg(long, global = true)]
    pub replicas: Option<usize>,
    /// Overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a config template with every default spelled out.
    Init {
        #[arg(long)]
        force: bool,
    },
    /// Check the q-map conditions, schedule gate and observable properties.
    Check,
    /// Compute the limit covariance and write covariance.json.
    Covariance {
        /// Also count Diophantine solutions, e.g. `--diophantine i=2 j=3 u=0 N=60`.
        #[arg(long, num_args = 1..)]
        diophantine: Option<Vec<String>>,
    },
    /// Run the Monte Carlo suite and write report.json plus CSV tables.
    Simulate,
}

fn code_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Io(_) => EXIT_CONFIG,
        _ => EXIT_PRECONDITION,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("rf-lab: {e}");
            code_for(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<i32> {
    if let Command::Init { force } = cli.command {
        return init(&cli.config, force);
    }
    let mut cfg = Config::load(&cli.config)?;
    let hash = cfg.hash();
    if let Some(s) = cli.seed {
        cfg.experiment.seed = s;
    }
    if let Some(r) = cli.replicas {
        cfg.experiment.replicas = r;
    }
    let out = cli
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from(&cfg.output.dir));
    match &cli.command {
        Command::Init { .. } => unreachable!(),
        Command::Check => check(&cfg),
        Command::Covariance { diophantine } => {
            covariance(&cfg, &hash, &out, diophantine.as_deref())
        }
        Command::Simulate => simulate(&cfg, &hash, &out),
    }
}

fn init(path: &Path, force: bool) -> Result<i32> {
    if path.exists() && !force {
        return Err(Error::Config(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    std::fs::write(path, TEMPLATE)?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn line(ok: bool, what: &str, detail: impl std::fmt::Display) -> bool {
    println!("[{}] {what}: {detail}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn check(cfg: &Config) -> Result<i32> {
    let plan = cfg.plan()?;
    let mut ok = true;

    let q = &plan.qfamily;
    if q.ell() > q.k {
        let radius = cfg
            .check
            .scan_radius
            .unwrap_or_else(|| default_scan_radius(q.nu));
        let rep = q.check_conditions(radius)?;
        for c in &rep.conditions {
            let name = format!("q-map {} (i={})", c.condition, c.index);
            line(
                c.pass,
                &name,
                format!("min {:.4}, shell minima {:.3?}", c.minimum, c.shell_minima),
            );
        }
        ok &= line(
            rep.pass,
            "q-map conditions",
            format!("radius {radius}, failed {:?}; {}", rep.failed, rep.note),
        );
    } else {
        println!("[PASS] q-map conditions: linear family, nothing to check");
    }

    let gate = check_gate(plan.tau, plan.eta);
    ok &= line(
        gate.is_ok(),
        "schedule gate",
        gate.err()
            .map_or(format!("τ={}, η={}", plan.tau, plan.eta), |e| {
                e.to_string()
            }),
    );
    for &n in &plan.n_grid {
        if let Ok(s) = BlockSchedule::build(plan.tau, plan.eta, n) {
            let v = s.verify();
            ok &= line(
                v.pass(),
                &format!("schedule N={n}"),
                format!("L={} {v:?}", s.blocks),
            );
        }
    }

    let law = plan.field.value_law();
    let dec = decompose(&plan.observable, &law, &QuadratureConfig::default())?;
    let d = dec.verify(200, 20, plan.seed, &QuadratureConfig::default())?;
    ok &= line(
        d.pass(),
        "decomposition",
        format!(
            "reconstruction {:.2e}, zero-mean {:.2e}",
            d.max_reconstruction_error, d.max_mean_error
        ),
    );
    let h = check_holder(&plan.observable, &law, 2000, plan.seed);
    ok &= line(
        h.pass,
        "hölder increment bound",
        format!(
            "worst ratio {:.4} (growth ratio {:.4})",
            h.worst_lipschitz_ratio, h.worst_growth_ratio
        ),
    );

    if let Some(params) = cfg.check.assumption {
        let rep = check_assumption(&plan.field, &plan.observable, params)?;
        for v in &rep.verdicts {
            line(v.pass, &format!("assumption {}", v.condition), &v.detail);
        }
        ok &= rep.pass;
    }
    Ok(if ok { EXIT_OK } else { EXIT_PRECONDITION })
}

#[derive(Serialize)]
struct CovarianceFile<'a> {
    config_hash: &'a str,
    seed: u64,
    tau: f64,
    eta: f64,
    #[serde(flatten)]
    model: &'a CovarianceModel,
}

fn parse_diophantine(args: &[String]) -> Result<(usize, usize, i64, u64)> {
    let (mut i, mut j, mut u, mut n) = (None, None, None, None);
    for tok in args
        .iter()
        .flat_map(|a| a.split([',', ' ']))
        .filter(|t| !t.is_empty())
    {
        let (k, v) = tok
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {tok}")))?;
        let bad = |_| Error::Config(format!("bad value in {tok}"));
        match k {
            "i" => i = Some(v.parse().map_err(bad)?),
            "j" => j = Some(v.parse().map_err(bad)?),
            "u" => u = Some(v.parse().map_err(bad)?),
            "N" | "n" => n = Some(v.parse().map_err(bad)?),
            _ => return Err(Error::Config(format!("unknown key {k}"))),
        }
    }
    match (i, j, u, n) {
        (Some(i), Some(j), Some(u), Some(n)) => Ok((i, j, u, n)),
        _ => Err(Error::Config("--diophantine needs i, j, u and N".into())),
    }
}

fn covariance(cfg: &Config, hash: &str, out: &Path, dioph: Option<&[String]>) -> Result<i32> {
    let plan = cfg.plan()?;
    let law = plan.field.value_law();
    let dec = decompose(&plan.observable, &law, &plan.quadrature)?;
    let model = d_matrix(&plan.field, &dec, plan.qfamily.k, &plan.covariance)?;
    println!(
        "D (k = {}, prefactor {:?}):",
        model.k, model.prefactor_exponent
    );
    for row in &model.d {
        println!(
            "  {}",
            row.iter()
                .map(|x| format!("{x:>12.6}"))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
    for (off, v) in model.high_variances.iter().enumerate() {
        println!("high variance i={}: {v:.6}", model.k + 1 + off);
    }
    println!(
        "min eigenvalue {:.3e} (psd {})",
        model.min_eigenvalue, model.psd
    );
    if let Some(args) = dioph {
        let (i, j, u, n) = parse_diophantine(args)?;
        let nu = plan.field.nu;
        let up = LatticePoint::new((0..nu).map(|l| if l == 0 { u } else { 0 }).collect());
        let c = diophantine_count(i, j, &up, n, &TimePoint::ones(nu), &TimePoint::ones(nu))?;
        println!(
            "diophantine i={i} j={j} u={up} N={n}: exact {} vs predicted {}",
            c.exact_count, c.predicted_density
        );
    }
    std::fs::create_dir_all(out)?;
    let file = CovarianceFile {
        config_hash: hash,
        seed: plan.seed,
        tau: plan.tau,
        eta: plan.eta,
        model: &model,
    };
    let path = out.join("covariance.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(&file).expect("serializable") + "\n",
    )?;
    println!("wrote {}", path.display());
    Ok(EXIT_OK)
}

fn simulate(cfg: &Config, hash: &str, out: &Path) -> Result<i32> {
    let mut plan = cfg.plan()?;
    plan.config_hash = hash.to_string();
    let result = experiments::run(&plan)?;
    let report = &result.report;
    for v in &report.verdicts {
        let tag = match v.status {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::InsufficientReplicas => "SKIP insufficient-replicas",
            Status::Degenerate => "SKIP degenerate",
            Status::NotApplicable => "SKIP not-applicable",
        };
        println!("[{tag}] {:?}: {} ({})", v.check, v.detail, v.tolerance);
    }
    std::fs::create_dir_all(out)?;
    let path = out.join("report.json");
    std::fs::write(
        &path,
        serde_json::to_string_pretty(report).expect("serializable") + "\n",
    )?;
    experiments::write_tables(out, &result)?;
    println!("wrote {} and CSV tables", path.display());
    Ok(if report.any_failed() {
        EXIT_STATISTICAL
    } else {
        EXIT_OK
    })
}
