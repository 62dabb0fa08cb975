//! Python bindings: kernel profiles, the switch-budgeted allocator, and the
//! scenario pipeline, exposed as the `eclip_sim` extension module.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use eclip_sim::allocator::{
    solve, AllocationPlan, AllocationProblem, Scalarization, SlowdownMode,
};
use eclip_sim::output;
use eclip_sim::profiles::{
    format_ns_as_us, load_profiles, min_cu_threshold, model_wise_rightsize, parse_us_to_ns,
    synthesize_profile, CuConfig, HardwareSpec, KneeDistribution, ModelProfile, SynthesisParams,
    WorkerSpec,
};
use eclip_sim::scenario::{load_mix, run_mix, run_scenario, PartitioningMode, ScenarioSpec};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_knees(s: &str) -> Result<KneeDistribution, String> {
    if s == "uniform" {
        return Ok(KneeDistribution::Uniform);
    }
    if let Some(rest) = s.strip_prefix("fixed:") {
        return rest
            .parse()
            .map(KneeDistribution::Fixed)
            .map_err(|_| format!("fixed knee {rest:?} is not a CU count"));
    }
    if let Some(rest) = s.strip_prefix("phased:") {
        let (len, jitter) = rest
            .split_once(':')
            .ok_or_else(|| format!("phased knees {rest:?} are not LEN:JITTER"))?;
        return Ok(KneeDistribution::Phased {
            phase_len: len.parse().map_err(|_| format!("bad phase length {len:?}"))?,
            jitter: jitter.parse().map_err(|_| format!("bad jitter {jitter:?}"))?,
        });
    }
    Err(format!(
        "unknown knee distribution {s:?} (expected uniform, fixed:CUS, or phased:LEN:JITTER)"
    ))
}

/// One model's per-kernel execution times across CU configs.
#[pyclass(frozen)]
struct Profile {
    inner: ModelProfile,
    hardware: HardwareSpec,
}

impl Profile {
    fn config(&self, cus: u32) -> PyResult<CuConfig> {
        CuConfig::new(cus, &self.hardware).map_err(value_err)
    }
}

#[pymethods]
impl Profile {
    /// Generate a synthetic knee-shaped profile; deterministic in `seed`.
    #[staticmethod]
    #[pyo3(signature = (name, kernels, seed, knees="uniform", base_min_us=2.0, base_max_us=200.0, decay=1.0, plateau_variation=0.0))]
    #[allow(clippy::too_many_arguments)]
    fn synth(
        name: &str,
        kernels: usize,
        seed: u64,
        knees: &str,
        base_min_us: f64,
        base_max_us: f64,
        decay: f64,
        plateau_variation: f64,
    ) -> PyResult<Self> {
        let hardware = HardwareSpec::default();
        let params = SynthesisParams {
            name: name.to_string(),
            knees: parse_knees(knees).map_err(value_err)?,
            base_time_us: (base_min_us, base_max_us),
            decay,
            plateau_variation,
            hardware: hardware.clone(),
        };
        let inner = synthesize_profile(kernels, &params, seed).map_err(value_err)?;
        Ok(Profile { inner, hardware })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn kernel_count(&self) -> usize {
        self.inner.kernel_count()
    }

    /// CU counts the profile covers, ascending.
    fn configs(&self) -> Vec<u32> {
        self.hardware.configs().iter().map(|c| c.cu_count()).collect()
    }

    /// Solo execution time of one kernel at a config, in microseconds.
    fn exec_us(&self, kernel: usize, cus: u32) -> PyResult<f64> {
        let c = self.config(cus)?;
        self.inner
            .kernels()
            .get(kernel)
            .map(|k| k.exec_us(c))
            .ok_or_else(|| value_err(format!("kernel {kernel} out of range")))
    }

    /// Whole-model solo time at a config, in microseconds.
    fn solo_time_us(&self, cus: u32) -> PyResult<f64> {
        let c = self.config(cus)?;
        Ok(self.inner.solo_time_ns(c) as f64 / 1000.0)
    }

    /// Smallest config keeping one kernel within `tolerance` of its fastest
    /// time.
    fn threshold(&self, kernel: usize, tolerance: f64) -> PyResult<u32> {
        let k = self
            .inner
            .kernels()
            .get(kernel)
            .ok_or_else(|| value_err(format!("kernel {kernel} out of range")))?;
        Ok(min_cu_threshold(k, tolerance).cu_count())
    }

    /// Smallest config keeping the whole model within `factor` of its
    /// fastest solo time.
    fn rightsize(&self, factor: f64) -> u32 {
        model_wise_rightsize(&self.inner, factor).cu_count()
    }

    fn __repr__(&self) -> String {
        format!("Profile(name={:?}, kernels={})", self.inner.name, self.inner.kernel_count())
    }
}

/// A frozen allocation: per-kernel CU configs for every worker.
#[pyclass(frozen)]
struct Plan {
    inner: AllocationPlan,
}

#[pymethods]
impl Plan {
    /// Per-worker config sequences as CU counts.
    fn assignments(&self) -> Vec<Vec<u32>> {
        self.inner
            .assignments
            .iter()
            .map(|cfgs| cfgs.iter().map(|c| c.cu_count()).collect())
            .collect()
    }

    /// Per-worker objective values, in microseconds.
    #[getter]
    fn objective_us(&self) -> Vec<f64> {
        self.inner.objective_us.clone()
    }

    /// Per-worker overlap fractions.
    #[getter]
    fn alpha(&self) -> Vec<f64> {
        self.inner.alpha.clone()
    }

    /// Per-worker repartitioning counts.
    #[getter]
    fn switch_total(&self) -> Vec<u32> {
        self.inner.switch_total.clone()
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    /// The kernel-to-config lookup table as JSON.
    fn table_json(&self) -> String {
        eclip_sim::allocator::emit_lookup_table(&self.inner).to_json()
    }

    fn __repr__(&self) -> String {
        format!(
            "Plan(workers={}, switches={:?}, converged={})",
            self.inner.assignments.len(),
            self.inner.switch_total,
            self.inner.converged
        )
    }
}

/// Load profiles from a profile file (JSON header plus CSV rows per model).
#[pyfunction]
#[pyo3(name = "load_profiles")]
fn load_profiles_py(path: &str) -> PyResult<Vec<Profile>> {
    let hardware = HardwareSpec::default();
    let models = load_profiles(path).map_err(value_err)?;
    Ok(models
        .into_iter()
        .map(|inner| Profile {
            inner,
            hardware: hardware.clone(),
        })
        .collect())
}

/// Optimize per-kernel configs for co-located profiles under a switch
/// budget. Returns the fixed-point plan.
#[pyfunction]
#[pyo3(signature = (profiles, switch_max=14, slowdown_mode="exclude-self"))]
fn solve_plan(
    py: Python<'_>,
    profiles: Vec<Py<Profile>>,
    switch_max: u32,
    slowdown_mode: &str,
) -> PyResult<Plan> {
    if profiles.is_empty() {
        return Err(value_err("need at least one profile"));
    }
    let hardware = HardwareSpec::default();
    let workers: Vec<WorkerSpec> = profiles
        .iter()
        .enumerate()
        .map(|(i, p)| WorkerSpec {
            worker_id: i,
            model: p.borrow(py).inner.clone(),
            arrival_rps: 1.0,
            request_count: 1,
        })
        .collect();
    let n = workers.len();
    let mode: SlowdownMode = slowdown_mode.parse().map_err(value_err)?;
    let problem = AllocationProblem {
        workers,
        hardware: hardware.clone(),
        allowed_configs: hardware.configs(),
        switch_max,
        slowdown_mode: mode,
        scalarization: Scalarization::WeightedSum,
        weights: vec![1.0; n],
        max_rounds: 32,
    };
    let inner = solve(&problem).map_err(value_err)?;
    Ok(Plan { inner })
}

/// Run every strategy in a TOML mix config; returns the normalized report
/// as a JSON string.
#[pyfunction]
#[pyo3(name = "run_mix")]
fn run_mix_py(config_path: &str) -> PyResult<String> {
    let mix = load_mix(config_path).map_err(value_err)?;
    let outcome = run_mix(&mix).map_err(value_err)?;
    output::report_json(&outcome.report).map_err(value_err)
}

/// Simulate one strategy from a TOML mix config; returns its metrics rows
/// as a JSON string.
#[pyfunction]
#[pyo3(signature = (config_path, mode, seed=None))]
fn simulate(config_path: &str, mode: &str, seed: Option<u64>) -> PyResult<String> {
    let mut mix = load_mix(config_path).map_err(value_err)?;
    if let Some(seed) = seed {
        mix.scenario.seed = seed;
    }
    let mode: PartitioningMode = mode.parse().map_err(value_err)?;
    let spec = ScenarioSpec {
        name: mode.as_str().to_string(),
        mode,
        ..mix.scenario
    };
    let (_, _, result) = run_scenario(&spec).map_err(value_err)?;
    output::results_json(&[result]).map_err(value_err)
}

/// Parse a decimal microsecond literal to integer nanoseconds, exactly.
#[pyfunction]
fn us_to_ns(text: &str) -> PyResult<u64> {
    parse_us_to_ns(text).map_err(value_err)
}

/// Render integer nanoseconds as a microsecond literal without float dust.
#[pyfunction]
fn ns_to_us(ns: u64) -> String {
    format_ns_as_us(ns)
}

#[pymodule(name = "eclip_sim")]
fn module_init(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Profile>()?;
    m.add_class::<Plan>()?;
    m.add_function(wrap_pyfunction!(load_profiles_py, m)?)?;
    m.add_function(wrap_pyfunction!(solve_plan, m)?)?;
    m.add_function(wrap_pyfunction!(run_mix_py, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(us_to_ns, m)?)?;
    m.add_function(wrap_pyfunction!(ns_to_us, m)?)?;
    Ok(())
}
