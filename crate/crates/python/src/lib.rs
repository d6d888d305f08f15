//! Python bindings: a `Simulator` wrapping the balancing engine, plus
//! config validation, the potential function and whole-workload runs.

use pyo3::exceptions::{PyKeyError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use rangebal::checker::verify_trace;
use rangebal::cli::{self, RunConfig};
use rangebal::config::{parse_rational, BalanceConfig, BalanceMode, Rational};
use rangebal::directory::DirectoryMode;
use rangebal::keyspace::SystemState;
use rangebal::{Engine, Error, EventRecord};

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) => PyValueError::new_err(e.to_string()),
        Error::DuplicateKey(_) | Error::KeyNotFound(_) => PyKeyError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn rational(s: &str) -> PyResult<Rational> {
    parse_rational(s).map_err(py_err)
}

fn parse<T: std::str::FromStr<Err = String>>(s: &str) -> PyResult<T> {
    s.parse().map_err(PyValueError::new_err)
}

fn event_dict<'py>(py: Python<'py>, r: &EventRecord) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seq", r.seq)?;
    d.set_item("kind", r.kind.to_string())?;
    d.set_item("key", r.key)?;
    d.set_item("balance", serde_json::to_value(r.balance).unwrap().as_str().unwrap_or_default())?;
    d.set_item("keys_moved", r.keys_moved)?;
    d.set_item("queries", r.queries)?;
    d.set_item("partition_changes", r.partition_changes)?;
    d.set_item("messages", r.messages)?;
    d.set_item("min", r.min)?;
    d.set_item("max", r.max)?;
    d.set_item("load_u", r.load_u)?;
    d.set_item("phase", r.phase)?;
    Ok(d)
}

#[pyclass(module = "rangebal")]
struct Simulator {
    engine: Engine,
    nodes: usize,
}

#[pymethods]
impl Simulator {
    #[new]
    #[pyo3(signature = (nodes, alpha = "547/100", beta = None, c0 = 4, mode = "general", directory = "centralized", c = None, seed = 0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        nodes: usize,
        alpha: &str,
        beta: Option<&str>,
        c0: u64,
        mode: &str,
        directory: &str,
        c: Option<&str>,
        seed: u64,
    ) -> PyResult<Self> {
        let mut config = BalanceConfig::new(rational(alpha)?, c0, parse(mode)?).with_accounting(c.is_some());
        if let Some(b) = beta {
            config = config.with_beta(rational(b)?);
        }
        config.validate().map_err(py_err)?;
        let c = match c {
            Some(c) => {
                let c = rational(c)?;
                config.validate_c(c).map_err(py_err)?;
                c
            }
            None => config.default_c().unwrap_or(Rational::from_integer(1)),
        };
        let state = SystemState::init(nodes, c0, seed).map_err(py_err)?;
        Ok(Simulator {
            engine: Engine::new(state, config, parse(directory)?, c, true),
            nodes,
        })
    }

    fn insert<'py>(&mut self, py: Python<'py>, key: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.engine.insert(key).map_err(py_err)?;
        event_dict(py, &r)
    }

    fn delete<'py>(&mut self, py: Python<'py>, key: u64) -> PyResult<Bound<'py, PyDict>> {
        let r = self.engine.delete(key).map_err(py_err)?;
        event_dict(py, &r)
    }

    fn loads(&self) -> Vec<u64> {
        self.engine.state().loads()
    }

    fn node_ids(&self) -> Vec<u32> {
        self.engine.state().nodes().iter().map(|n| n.id.0).collect()
    }

    fn keys(&self) -> Vec<Vec<u64>> {
        self.engine
            .state()
            .nodes()
            .iter()
            .map(|n| n.keys.iter().copied().collect())
            .collect()
    }

    fn contains(&self, key: u64) -> bool {
        self.engine.state().contains_key(key)
    }

    /// Structural problems with the partition; empty when valid.
    fn validate(&self) -> Vec<String> {
        self.engine.state().validate()
    }

    fn ledger<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let l = self.engine.ledger();
        let d = PyDict::new(py);
        d.set_item("data_movement", l.data_movement)?;
        d.set_item("partition_changes", l.partition_changes)?;
        d.set_item("load_info_queries", l.load_info_queries)?;
        d.set_item("adjacent_contacts", l.adjacent_contacts)?;
        d.set_item("messages", l.messages)?;
        Ok(d)
    }

    /// The potential as an exact `"num/den"` string, or None with no keys.
    fn phi(&self) -> Option<String> {
        self.engine.potential().phi().map(|p| p.to_string())
    }

    /// The event trace as JSON lines.
    fn trace(&self) -> Vec<String> {
        self.engine
            .log()
            .records()
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect()
    }

    /// Runs every applicable check over the trace so far; returns the
    /// reports as JSON strings.
    fn verify(&self) -> PyResult<Vec<String>> {
        let c = self.engine.config().accounting.then(|| self.engine.potential().c());
        let reports = verify_trace(
            self.engine.log().records(),
            self.engine.config(),
            self.nodes,
            self.engine.mode(),
            c,
        )
        .map_err(py_err)?;
        Ok(reports.iter().map(|r| r.to_json()).collect())
    }
}

/// Raises ValueError naming the violated inequality.
#[pyfunction]
#[pyo3(signature = (alpha, beta = None, c0 = 4, mode = "general", accounting = false))]
fn validate_config(alpha: &str, beta: Option<&str>, c0: u64, mode: &str, accounting: bool) -> PyResult<()> {
    let mode: BalanceMode = parse(mode)?;
    let mut config = BalanceConfig::new(rational(alpha)?, c0, mode).with_accounting(accounting);
    if let Some(b) = beta {
        config = config.with_beta(rational(b)?);
    }
    config.validate().map_err(py_err)
}

/// `c * sum(L^2) * n / total` as an exact `"num/den"` string.
#[pyfunction]
#[pyo3(signature = (loads, c = "1"))]
fn potential(loads: Vec<u64>, c: &str) -> PyResult<String> {
    rangebal::potential(&loads, rational(c)?)
        .map(|p| p.to_string())
        .map_err(py_err)
}

/// Runs a whole workload from `key=value` settings and returns its summary.
#[pyfunction]
#[pyo3(signature = (**settings))]
fn run_workload<'py>(py: Python<'py>, settings: Option<&Bound<'py, PyDict>>) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = RunConfig::default();
    if let Some(settings) = settings {
        for (k, v) in settings.iter() {
            cfg.set(&k.str()?.to_cow()?, &v.str()?.to_cow()?).map_err(py_err)?;
        }
    }
    let s = cli::run(&cfg, None).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("ops", s.ops)?;
    d.set_item("max_ratio", s.max_ratio)?;
    d.set_item("moved_per_op", s.moved_per_op)?;
    d.set_item("msgs_per_op", s.msgs_per_op)?;
    d.set_item("partition_changes_per_op", s.partition_changes_per_op)?;
    d.set_item("phases", s.phases)?;
    d.set_item("min_balance", s.min_balance)?;
    d.set_item("split_max", s.split_max)?;
    d.set_item("split_nbr", s.split_nbr)?;
    Ok(d)
}

#[pymodule]
#[pyo3(name = "rangebal")]
fn rangebal_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Simulator>()?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(potential, m)?)?;
    m.add_function(wrap_pyfunction!(run_workload, m)?)?;
    m.add("DIRECTORY_MODES", vec![DirectoryMode::Centralized.to_string(), DirectoryMode::Overlay.to_string()])?;
    Ok(())
}
