//! Python bindings: patterns, constraint checks, enumeration and sampling,
//! execution plans, the tiny DiT simulator, FLOPs estimates and the
//! relative-L1 metric. Matrices cross the boundary as nested lists.

use ndarray::Array2;
use pyo3::exceptions::{PyArithmeticError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ::procache::pattern::{self as pat, Proposal};
use ::procache::schedule::{self as sched, StepAction};
use ::procache::tinydit::{self as dit, AttentionPolicy};
use ::procache::{metrics, Error};

fn err(e: Error) -> PyErr {
    match e {
        Error::NumericOverflow { .. } | Error::UndefinedMetric(_) => PyArithmeticError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

#[pyclass(name = "CachingPattern", module = "procache", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPattern(pat::CachingPattern);

#[pymethods]
impl PyPattern {
    /// From a bit string such as "10010"; the first bit must be 1.
    #[new]
    fn new(bits: &str) -> PyResult<Self> {
        pat::CachingPattern::parse(bits).map(Self).map_err(err)
    }

    #[staticmethod]
    fn all_ones(steps: usize) -> PyResult<Self> {
        pat::CachingPattern::all_ones(steps).map(Self).map_err(err)
    }

    /// Activation every `every` steps, starting at step 1.
    #[staticmethod]
    fn uniform(steps: usize, every: usize) -> PyResult<Self> {
        pat::CachingPattern::uniform(steps, every).map(Self).map_err(err)
    }

    #[getter]
    fn bits(&self) -> Vec<u32> {
        self.0.digits().into_iter().map(u32::from).collect()
    }

    fn activations(&self) -> usize {
        self.0.activations()
    }

    /// 1-based step index.
    fn is_active(&self, t: usize) -> bool {
        t >= 1 && t <= self.0.len() && self.0.is_active(t)
    }

    /// (activation timestamps, reuse intervals).
    fn profile(&self) -> (Vec<usize>, Vec<usize>) {
        let p = pat::activation_profile(&self.0);
        (p.timestamps, p.intervals)
    }

    /// Names of the violated constraints; empty when the pattern is valid.
    fn violations(&self, constraints: &PyConstraints) -> PyResult<Vec<&'static str>> {
        let v = pat::check_constraints(&self.0, &constraints.0).map_err(err)?;
        Ok(v.violations.iter().map(|x| x.name()).collect())
    }

    /// Steps that get selective computation (1-based).
    fn selective_steps(&self) -> Vec<usize> {
        sched::selective_steps(&self.0).into_iter().collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __str__(&self) -> String {
        self.0.to_string()
    }

    fn __repr__(&self) -> String {
        format!("CachingPattern('{}')", self.0)
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.0 == other.0
    }

    fn __hash__(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.0.hash(&mut h);
        h.finish()
    }
}

#[pyclass(name = "ConstraintSet", module = "procache", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyConstraints(pat::ConstraintSet);

#[pymethods]
impl PyConstraints {
    #[new]
    #[pyo3(signature = (steps, budget, v_min, v_max, monotonic = true, bound_trailing = true))]
    fn new(steps: usize, budget: usize, v_min: usize, v_max: usize, monotonic: bool, bound_trailing: bool) -> PyResult<Self> {
        pat::ConstraintSet::new(steps, budget, v_min, v_max, monotonic)
            .map(|cs| Self(cs.with_bound_trailing(bound_trailing)))
            .map_err(err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps
    }

    #[getter]
    fn budget(&self) -> usize {
        self.0.budget
    }

    #[getter]
    fn v_min(&self) -> usize {
        self.0.v_min
    }

    #[getter]
    fn v_max(&self) -> usize {
        self.0.v_max
    }

    #[getter]
    fn monotonic(&self) -> bool {
        self.0.require_monotonic
    }

    fn __repr__(&self) -> String {
        let c = &self.0;
        format!(
            "ConstraintSet(steps={}, budget={}, v_min={}, v_max={}, monotonic={})",
            c.steps, c.budget, c.v_min, c.v_max, c.require_monotonic
        )
    }
}

#[pyfunction]
fn enumerate_patterns(constraints: &PyConstraints) -> PyResult<Vec<PyPattern>> {
    let all = pat::enumerate_patterns(&constraints.0).map_err(err)?;
    Ok(all.into_iter().map(PyPattern).collect())
}

#[pyfunction]
fn count_patterns(constraints: &PyConstraints) -> PyResult<u128> {
    pat::count_patterns(&constraints.0).map_err(err)
}

/// Distinct valid patterns plus attempt, rejection and duplicate counts.
#[pyfunction]
#[pyo3(signature = (constraints, quota, max_attempts, seed, proposal = "interval_walk"))]
fn sample_patterns<'py>(
    py: Python<'py>,
    constraints: &PyConstraints,
    quota: usize,
    max_attempts: u64,
    seed: u64,
    proposal: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let proposal = match proposal {
        "interval_walk" => Proposal::IntervalWalk,
        "bitwise" => Proposal::Bitwise,
        other => return Err(PyValueError::new_err(format!("unknown proposal {other:?}"))),
    };
    let out = pat::sample_patterns(&constraints.0, quota, max_attempts, seed, proposal).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("patterns", out.patterns.into_iter().map(PyPattern).collect::<Vec<_>>())?;
    d.set_item("discovered_at", out.discovered_at)?;
    d.set_item("attempts", out.attempts)?;
    d.set_item("rejections", out.rejections.total())?;
    d.set_item("duplicates", out.duplicates)?;
    Ok(d)
}

#[pyclass(name = "SelectiveConfig", module = "procache", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PySelective(sched::SelectiveConfig);

#[pymethods]
impl PySelective {
    #[new]
    fn new(layer_ratio: f64, token_ratio: f64, total_layers: usize) -> PyResult<Self> {
        sched::SelectiveConfig::new(layer_ratio, token_ratio, total_layers)
            .map(Self)
            .map_err(err)
    }

    /// Number of (deepest) layers that run selective computation.
    fn depth(&self) -> usize {
        self.0.depth()
    }

    /// 1-based layer indices.
    fn layers(&self) -> Vec<usize> {
        sched::selective_layers(&self.0).into_iter().collect()
    }
}

#[pyclass(name = "ExecutionPlan", module = "procache", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPlan(sched::ExecutionPlan);

#[pymethods]
impl PyPlan {
    /// Every layer computed at every step.
    #[staticmethod]
    fn full(steps: usize, layers: usize) -> Self {
        Self(sched::ExecutionPlan::full(steps, layers))
    }

    /// Pure caching: activated steps compute, the rest replay.
    #[staticmethod]
    fn caching(pattern: &PyPattern, layers: usize) -> Self {
        Self(sched::build_caching_plan(&pattern.0, layers))
    }

    /// Caching plus selective computation.
    #[staticmethod]
    fn selective(pattern: &PyPattern, config: &PySelective) -> Self {
        Self(sched::build_plan(&pattern.0, &config.0))
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }

    #[getter]
    fn layers(&self) -> usize {
        self.0.layers()
    }

    /// "FullCompute", "SelectiveCompute" or "CacheOnly" at 1-based (t, l).
    fn action(&self, t: usize, l: usize) -> PyResult<&'static str> {
        if t == 0 || l == 0 || t > self.0.steps() || l > self.0.layers() {
            return Err(PyValueError::new_err(format!("cell ({t}, {l}) outside the plan")));
        }
        Ok(self.0.action(t, l).name())
    }

    fn counts(&self) -> (usize, usize, usize) {
        (
            self.0.count(StepAction::FullCompute),
            self.0.count(StepAction::SelectiveCompute),
            self.0.count(StepAction::CacheOnly),
        )
    }
}

#[pyclass(name = "Simulator", module = "procache", frozen, skip_from_py_object)]
struct PySimulator(dit::Simulator);

fn policy(name: &str) -> PyResult<AttentionPolicy> {
    match name {
        "reuse_cached_values" => Ok(AttentionPolicy::ReuseCachedValues),
        "reuse_fresh_values" => Ok(AttentionPolicy::ReuseFreshValues),
        "recompute" => Ok(AttentionPolicy::Recompute),
        other => Err(PyValueError::new_err(format!("unknown attention policy {other:?}"))),
    }
}

#[pymethods]
impl PySimulator {
    /// Defaults are the reference model.
    #[new]
    #[pyo3(signature = (
        layers = 8, dim = 64, heads = 4, tokens = 16, context_tokens = 8, mlp_ratio = 4.0,
        steps = 20, seed = 42, attention = "reuse_cached_values", remodulate = false
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        layers: usize,
        dim: usize,
        heads: usize,
        tokens: usize,
        context_tokens: usize,
        mlp_ratio: f64,
        steps: usize,
        seed: u64,
        attention: &str,
        remodulate: bool,
    ) -> PyResult<Self> {
        let config = dit::ModelConfig {
            layers,
            dim,
            heads,
            tokens,
            context_tokens,
            mlp_ratio,
            steps,
            seed,
            ..dit::ModelConfig::reference()
        };
        let options = dit::EngineOptions {
            attention: policy(attention)?,
            remodulate,
        };
        dit::Simulator::new(config, options).map(Self).map_err(err)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.config().steps
    }

    #[getter]
    fn layers(&self) -> usize {
        self.0.config().layers
    }

    /// SHA-256 of all weights.
    fn checksum(&self) -> String {
        self.0.weights().checksum()
    }

    /// Seeded (latent, context) pair.
    fn inputs(&self, seed: u64, index: usize) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let (x, c) = self.0.inputs(seed, index);
        (rows(&x), rows(&c))
    }

    /// Final latent and the counted FLOPs. Without `x`/`context` the seeded
    /// inputs for (`seed`, 0) are used.
    #[pyo3(signature = (plan, seed = 0, x = None, context = None))]
    fn run(
        &self,
        py: Python<'_>,
        plan: &PyPlan,
        seed: u64,
        x: Option<Vec<Vec<f64>>>,
        context: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(Vec<Vec<f64>>, u64)> {
        let (sx, sc) = self.0.inputs(seed, 0);
        let x = x.map(matrix).transpose()?.unwrap_or(sx);
        let c = context.map(matrix).transpose()?.unwrap_or(sc);
        let out = py.detach(|| self.0.run(&plan.0, &x, &c, false)).map_err(err)?;
        Ok((rows(&out.output), out.ops.flops()))
    }

    /// Mean relative L1 error of `plan` against full computation over the
    /// seeded inputs.
    #[pyo3(signature = (plan, seeds = vec![0], batch = 1))]
    fn score(&self, py: Python<'_>, plan: &PyPlan, seeds: Vec<u64>, batch: usize) -> PyResult<f64> {
        py.detach(|| {
            let ev = pat::Evaluator::new(&self.0, &seeds, batch)?;
            ev.score(&plan.0)
        })
        .map_err(err)
    }

    /// Closed-form FLOPs of `plan` on this model.
    fn flops<'py>(&self, py: Python<'py>, plan: &PyPlan) -> PyResult<Bound<'py, PyDict>> {
        let r = metrics::flops_estimate(&plan.0, self.0.config(), &self.0.options());
        let d = PyDict::new(py);
        d.set_item("total", r.total)?;
        d.set_item("baseline", r.baseline)?;
        d.set_item("ratio", r.ratio)?;
        d.set_item("speedup", r.speedup)?;
        d.set_item("selective_overhead", r.selective_overhead)?;
        Ok(d)
    }
}

/// Top-`max(1, floor(p*N))` token indices by importance, ascending.
#[pyfunction]
fn select_tokens(importance: Vec<f64>, ratio: f64) -> PyResult<Vec<usize>> {
    dit::select_tokens(&importance, ratio).map(|s| s.selected).map_err(err)
}

/// `||a - b||_1 / ||b||_1`.
#[pyfunction]
fn relative_l1(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>) -> PyResult<f64> {
    ::procache::relative_l1(&matrix(a)?, &matrix(b)?).map_err(err)
}

#[pymodule]
#[pyo3(name = "procache")]
fn procache_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPattern>()?;
    m.add_class::<PyConstraints>()?;
    m.add_class::<PySelective>()?;
    m.add_class::<PyPlan>()?;
    m.add_class::<PySimulator>()?;
    m.add_function(wrap_pyfunction!(enumerate_patterns, m)?)?;
    m.add_function(wrap_pyfunction!(count_patterns, m)?)?;
    m.add_function(wrap_pyfunction!(sample_patterns, m)?)?;
    m.add_function(wrap_pyfunction!(select_tokens, m)?)?;
    m.add_function(wrap_pyfunction!(relative_l1, m)?)?;
    Ok(())
}
