//! Python bindings: fields, observables, q-families, schedules, the limit
//! covariance and the Monte Carlo suite. Reports cross the boundary as JSON.

use std::sync::Arc;

use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ::rflab::config::Config;
use ::rflab::covariance::{self, CovarianceOptions, PrefactorExponent};
use ::rflab::distributions::Marginal;
use ::rflab::error::Error;
use ::rflab::experiments;
use ::rflab::lattice::{BoxRegion, LatticePoint, TimePoint};
use ::rflab::observables::{decompose, Observable as CoreObservable};
use ::rflab::qmaps::{QFamily as CoreQFamily, QMap};
use ::rflab::quadrature::QuadratureConfig;
use ::rflab::random_fields::{generate_box, FieldSpec};
use ::rflab::schedule::{BlockSchedule, Segment};
use ::rflab::stats;
use ::rflab::sums::SumRequest;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::IndexOutOfRange { .. } => PyIndexError::new_err(e.to_string()),
        Error::Validation(_) | Error::Config(_) | Error::Domain(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn json<T: serde::Serialize>(v: &T) -> PyResult<String> {
    serde_json::to_string(v).map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

fn marginal(name: &str) -> PyResult<Marginal> {
    match name {
        "normal" => Ok(Marginal::standard_normal()),
        "rademacher" => Ok(Marginal::Rademacher),
        _ => Err(PyValueError::new_err(format!(
            "unknown marginal {name:?}; use 'normal' or 'rademacher'"
        ))),
    }
}

fn time_point(t: Vec<f64>) -> PyResult<TimePoint> {
    TimePoint::new(t).map_err(py_err)
}

/// A finite-range random field on `ℤ^ν`.
#[pyclass(module = "rflab")]
struct Field {
    spec: FieldSpec,
}

#[pymethods]
impl Field {
    #[staticmethod]
    #[pyo3(signature = (nu, marginal = "normal"))]
    fn iid(nu: usize, marginal: &str) -> PyResult<Self> {
        let spec = FieldSpec::iid(nu, self::marginal(marginal)?);
        spec.validate().map_err(py_err)?;
        Ok(Field { spec })
    }

    /// Gaussian moving average with `taps = [(offset, weight), …]`.
    #[staticmethod]
    fn gaussian_ma(nu: usize, taps: Vec<(Vec<i64>, f64)>) -> PyResult<Self> {
        let spec = FieldSpec::gaussian_ma(nu, taps);
        spec.validate().map_err(py_err)?;
        Ok(Field { spec })
    }

    #[getter]
    fn nu(&self) -> usize {
        self.spec.nu
    }

    fn mixing_range(&self) -> f64 {
        self.spec.mixing_range()
    }

    fn autocovariance(&self, u: Vec<i64>) -> f64 {
        self.spec.autocovariance(&LatticePoint::new(u))
    }

    /// Values on `Δ_N(1) = [0,N]^ν` in lexicographic order.
    fn sample(&self, n: u64, seed: u64) -> PyResult<Vec<f64>> {
        let spec = self.spec.clone().with_seed(seed);
        let b = BoxRegion::from_origin(n, TimePoint::ones(spec.nu));
        let s = generate_box(&spec, &b).map_err(py_err)?;
        Ok(b.points()
            .flat_map(|p| s.value(p.coords()).unwrap_or(&[]).to_vec())
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("Field({:?}, nu={})", self.spec.kind, self.spec.nu)
    }
}

#[pyclass(module = "rflab")]
struct Observable {
    inner: CoreObservable,
}

#[pymethods]
impl Observable {
    #[staticmethod]
    fn linear(coeffs: Vec<f64>) -> PyResult<Self> {
        Ok(Observable {
            inner: CoreObservable::linear(&coeffs).map_err(py_err)?,
        })
    }

    /// `∏_j x_j` over `arity` scalar arguments.
    #[staticmethod]
    fn product(arity: usize) -> PyResult<Self> {
        Ok(Observable {
            inner: CoreObservable::product(&vec![0; arity], 1).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn power(arity: usize, arg: usize, p: u32) -> PyResult<Self> {
        Ok(Observable {
            inner: CoreObservable::power(arity, arg, p).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn zero(arity: usize) -> PyResult<Self> {
        Ok(Observable {
            inner: CoreObservable::zero(arity, 1).map_err(py_err)?,
        })
    }

    #[getter]
    fn arity(&self) -> usize {
        self.inner.arity
    }

    fn __call__(&self, x: Vec<f64>) -> PyResult<f64> {
        if x.len() != self.inner.arity * self.inner.dim {
            return Err(PyValueError::new_err("wrong number of coordinates"));
        }
        Ok(self.inner.eval(&x))
    }

    fn __repr__(&self) -> String {
        format!("Observable({})", self.inner.name())
    }
}

/// `q_j(n) = j·n` for `j ≤ k`, then monomial maps.
#[pyclass(module = "rflab")]
struct QFamily {
    inner: CoreQFamily,
}

#[pymethods]
impl QFamily {
    #[new]
    #[pyo3(signature = (nu, k, monomials = Vec::new()))]
    fn new(nu: usize, k: usize, monomials: Vec<Vec<u32>>) -> PyResult<Self> {
        let maps = monomials
            .into_iter()
            .map(|exponents| QMap::Monomial { exponents })
            .collect();
        Ok(QFamily {
            inner: CoreQFamily::new(nu, k, maps).map_err(py_err)?,
        })
    }

    #[getter]
    fn ell(&self) -> usize {
        self.inner.ell()
    }

    fn apply(&self, j: usize, n: Vec<i64>) -> PyResult<Vec<i64>> {
        Ok(self
            .inner
            .apply(j, &LatticePoint::new(n))
            .map_err(py_err)?
            .into_coords())
    }

    /// Condition scan as a JSON report.
    #[pyo3(signature = (radius = None))]
    fn check_conditions(&self, radius: Option<f64>) -> PyResult<String> {
        let r = radius.unwrap_or_else(|| ::rflab::qmaps::default_scan_radius(self.inner.nu));
        json(&self.inner.check_conditions(r).map_err(py_err)?)
    }
}

#[pyclass(module = "rflab")]
struct Schedule {
    inner: BlockSchedule,
}

#[pymethods]
impl Schedule {
    #[new]
    #[pyo3(signature = (n, tau = ::rflab::schedule::DEFAULT_TAU, eta = ::rflab::schedule::DEFAULT_ETA))]
    fn new(n: u64, tau: f64, eta: f64) -> PyResult<Self> {
        Ok(Schedule {
            inner: BlockSchedule::build(tau, eta, n).map_err(py_err)?,
        })
    }

    #[getter]
    fn blocks(&self) -> usize {
        self.inner.blocks
    }

    fn a(&self, j: usize) -> PyResult<i64> {
        self.check(j)?;
        Ok(self.inner.a(j))
    }

    fn b(&self, j: usize) -> PyResult<i64> {
        self.check(j)?;
        Ok(self.inner.b(j))
    }

    /// `("block", l)`, `("gap", l)` or `("beyond", 0)`.
    fn classify(&self, shell: i64) -> (&'static str, usize) {
        match self.inner.classify(shell) {
            Segment::Block(l) => ("block", l),
            Segment::Gap(l) => ("gap", l),
            Segment::Beyond => ("beyond", 0),
        }
    }

    fn verify(&self) -> bool {
        self.inner.verify().pass()
    }
}

impl Schedule {
    fn check(&self, j: usize) -> PyResult<()> {
        if j == 0 || j > self.inner.blocks + 1 {
            return Err(PyIndexError::new_err(format!(
                "j must lie in 1..={}",
                self.inner.blocks + 1
            )));
        }
        Ok(())
    }
}

/// Limit covariance model as JSON.
#[pyfunction]
#[pyo3(signature = (field, observable, k, prefactor = "dimension"))]
fn d_matrix(field: &Field, observable: &Observable, k: usize, prefactor: &str) -> PyResult<String> {
    let prefactor = match prefactor {
        "dimension" => PrefactorExponent::Dimension,
        "literal" => PrefactorExponent::Literal,
        _ => {
            return Err(PyValueError::new_err(
                "prefactor is 'dimension' or 'literal'",
            ))
        }
    };
    let dec = decompose(
        &observable.inner,
        &field.spec.value_law(),
        &QuadratureConfig::default(),
    )
    .map_err(py_err)?;
    let opts = CovarianceOptions {
        prefactor,
        ..Default::default()
    };
    json(&covariance::d_matrix(&field.spec, &dec, k, &opts).map_err(py_err)?)
}

/// `(exact, predicted)` solution counts of `i·n − j·n' = u` in one dimension.
#[pyfunction]
fn diophantine_count(i: usize, j: usize, u: i64, n: u64) -> PyResult<(u64, f64)> {
    let one = TimePoint::ones(1);
    let c = covariance::diophantine_count(i, j, &LatticePoint::new(vec![u]), n, &one, &one)
        .map_err(py_err)?;
    Ok((c.exact_count, c.predicted_density))
}

/// `ξ_N(t)` for one realization.
#[pyfunction]
fn xi(
    field: &Field,
    observable: &Observable,
    q: &QFamily,
    n: u64,
    seed: u64,
    t: Vec<f64>,
) -> PyResult<f64> {
    let dec = decompose(
        &observable.inner,
        &field.spec.value_law(),
        &QuadratureConfig::default(),
    )
    .map_err(py_err)?;
    let req =
        SumRequest::new(field.spec.clone(), Arc::new(dec), q.inner.clone(), n).map_err(py_err)?;
    let engine = req.realize(seed).map_err(py_err)?;
    engine.xi_n(&time_point(t)?).map_err(py_err)
}

/// Skewness, kurtosis and normality diagnostics as JSON.
#[pyfunction]
fn gauss_check(samples: Vec<f64>) -> PyResult<String> {
    json(&stats::gauss_check(&samples))
}

/// Runs the Monte Carlo suite described by a TOML config; returns report JSON.
#[pyfunction]
#[pyo3(signature = (config_toml, seed = None, replicas = None))]
fn simulate(
    py: Python<'_>,
    config_toml: &str,
    seed: Option<u64>,
    replicas: Option<usize>,
) -> PyResult<String> {
    let mut cfg = Config::parse(config_toml).map_err(py_err)?;
    let hash = cfg.hash();
    if let Some(s) = seed {
        cfg.experiment.seed = s;
    }
    if let Some(r) = replicas {
        cfg.experiment.replicas = r;
    }
    let mut plan = cfg.plan().map_err(py_err)?;
    plan.config_hash = hash;
    let out = py.detach(|| experiments::run(&plan)).map_err(py_err)?;
    json(&out.report)
}

#[pymodule]
#[pyo3(name = "rflab")]
fn rflab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Field>()?;
    m.add_class::<Observable>()?;
    m.add_class::<QFamily>()?;
    m.add_class::<Schedule>()?;
    m.add_function(wrap_pyfunction!(d_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(diophantine_count, m)?)?;
    m.add_function(wrap_pyfunction!(xi, m)?)?;
    m.add_function(wrap_pyfunction!(gauss_check, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add("TEMPLATE", ::rflab::config::TEMPLATE)?;
    Ok(())
}
