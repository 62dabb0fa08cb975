//! Scenario harness: partitioning strategies, TOML mix configs, and the
//! plan-simulate-measure pipeline.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::allocator::{
    solve, AllocError, AllocationProblem, LookupTable, Scalarization, SlowdownMode,
};
use crate::metrics::{
    normalize, scenario_result, MetricsError, PowerModel, Report, ScenarioResult,
};
use crate::profiles::{
    load_profiles_with, min_cu_threshold_in, model_wise_rightsize_in, CuConfig, HardwareSpec,
    ModelProfile, ProfileError, WorkerSpec,
};
use crate::simulator::{
    build_stream_pool, pooled_configs, run, ArrivalProcess, OverheadModel, Repartition,
    SimError, SimSetup, SimTimeline,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Profile(#[from] ProfileError),
    #[error(transparent)]
    Alloc(#[from] AllocError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("config: {0}")]
    Config(String),
}

/// The co-location strategies under comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum PartitioningMode {
    /// Every kernel on all CUs via the shared default stream.
    Baseline,
    /// One right-sized config per model, held for whole requests.
    ModelWise,
    /// Per-kernel thresholds, applied by re-masking each worker's queue.
    KernelWiseIoctl,
    /// Per-kernel thresholds on pre-allocated masked streams.
    KernelWisePrealloc,
    /// Budgeted per-kernel optimization on pre-allocated masked streams.
    Eclip,
}

impl PartitioningMode {
    pub const ALL: [PartitioningMode; 5] = [
        PartitioningMode::Baseline,
        PartitioningMode::ModelWise,
        PartitioningMode::KernelWiseIoctl,
        PartitioningMode::KernelWisePrealloc,
        PartitioningMode::Eclip,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PartitioningMode::Baseline => "baseline",
            PartitioningMode::ModelWise => "model-wise",
            PartitioningMode::KernelWiseIoctl => "kw-ioctl",
            PartitioningMode::KernelWisePrealloc => "kw-prealloc",
            PartitioningMode::Eclip => "eclip",
        }
    }

    pub fn mechanism(self) -> Repartition {
        match self {
            PartitioningMode::KernelWiseIoctl => Repartition::QueueRemask,
            _ => Repartition::StreamHop,
        }
    }
}

impl std::fmt::Display for PartitioningMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PartitioningMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(PartitioningMode::Baseline),
            "model-wise" => Ok(PartitioningMode::ModelWise),
            "kw-ioctl" => Ok(PartitioningMode::KernelWiseIoctl),
            "kw-prealloc" => Ok(PartitioningMode::KernelWisePrealloc),
            "eclip" => Ok(PartitioningMode::Eclip),
            other => Err(format!(
                "unknown mode {other:?} (expected baseline, model-wise, kw-ioctl, kw-prealloc, or eclip)"
            )),
        }
    }
}

/// Everything one scenario run needs.
#[derive(Clone, Debug)]
pub struct ScenarioSpec {
    pub name: String,
    pub mode: PartitioningMode,
    pub workers: Vec<WorkerSpec>,
    pub hardware: HardwareSpec,
    pub switch_max: u32,
    pub slowdown_mode: SlowdownMode,
    pub scalarization: Scalarization,
    pub overhead: OverheadModel,
    pub power: PowerModel,
    pub seed: u64,
    pub arrival: ArrivalProcess,
    /// Per-kernel right-sizing tolerance for the threshold strategies.
    pub threshold_tolerance: f64,
    /// Whole-model right-sizing budget for the model-wise strategy.
    pub model_slowdown_factor: f64,
    pub forced_masked_streams: Option<u32>,
}

/// A mix: fixed workers and knobs, compared across several strategies under
/// one seed.
#[derive(Clone, Debug)]
pub struct MixSpec {
    pub name: String,
    pub modes: Vec<PartitioningMode>,
    pub scenario: ScenarioSpec,
}

#[derive(Clone, Debug)]
pub struct MixOutcome {
    pub results: Vec<ScenarioResult>,
    pub report: Report,
    pub switches: Vec<SwitchRow>,
    pub tables: Vec<(String, LookupTable)>,
}

/// Mean per-request repartitionings, per worker and summed across workers.
#[derive(Clone, Debug, serde::Serialize)]
pub struct SwitchRow {
    pub scenario: String,
    pub per_worker: Vec<f64>,
    pub total: f64,
}

/// Configs a strategy may use at this worker count: strategies running on
/// pre-allocated streams are limited to pooled masks, queue re-masking can
/// reach every config.
fn allowed_configs_for(
    mode: PartitioningMode,
    worker_count: usize,
    hardware: &HardwareSpec,
) -> Result<Vec<CuConfig>, SimError> {
    match mode.mechanism() {
        Repartition::QueueRemask => Ok(hardware.configs()),
        Repartition::StreamHop => pooled_configs(worker_count, hardware),
    }
}

/// Freeze per-kernel configs for the scenario's strategy.
pub fn plan_for_mode(spec: &ScenarioSpec) -> Result<LookupTable, HarnessError> {
    let hardware = &spec.hardware;
    let allowed = allowed_configs_for(spec.mode, spec.workers.len(), hardware)?;
    let assignments: Vec<Vec<CuConfig>> = match spec.mode {
        PartitioningMode::Baseline => spec
            .workers
            .iter()
            .map(|w| vec![hardware.max_config(); w.model.kernel_count()])
            .collect(),
        PartitioningMode::ModelWise => spec
            .workers
            .iter()
            .map(|w| {
                let c = model_wise_rightsize_in(&w.model, spec.model_slowdown_factor, &allowed);
                vec![c; w.model.kernel_count()]
            })
            .collect(),
        PartitioningMode::KernelWiseIoctl | PartitioningMode::KernelWisePrealloc => spec
            .workers
            .iter()
            .map(|w| {
                w.model
                    .kernels()
                    .iter()
                    .map(|k| min_cu_threshold_in(k, spec.threshold_tolerance, &allowed))
                    .collect()
            })
            .collect(),
        PartitioningMode::Eclip => {
            let problem = AllocationProblem {
                workers: spec.workers.clone(),
                hardware: hardware.clone(),
                allowed_configs: allowed,
                switch_max: spec.switch_max,
                slowdown_mode: spec.slowdown_mode,
                scalarization: spec.scalarization,
                weights: vec![1.0; spec.workers.len()],
                max_rounds: 32,
            };
            let plan = solve(&problem)?;
            return Ok(crate::allocator::emit_lookup_table(&plan));
        }
    };
    Ok(LookupTable::from_assignments(
        spec.slowdown_mode.as_str(),
        spec.switch_max,
        &assignments,
    ))
}

/// Plan, simulate, and measure one scenario.
pub fn run_scenario(
    spec: &ScenarioSpec,
) -> Result<(LookupTable, SimTimeline, ScenarioResult), HarnessError> {
    let table = plan_for_mode(spec)?;
    let pool = build_stream_pool(spec.workers.len(), &spec.hardware)?;
    let setup = SimSetup {
        workers: &spec.workers,
        table: &table,
        pool: &pool,
        overhead: &spec.overhead,
        mechanism: spec.mode.mechanism(),
        arrival: spec.arrival,
        seed: spec.seed,
        forced_masked_streams: spec.forced_masked_streams,
    };
    let timeline = run(&setup)?;
    let result = scenario_result(&spec.name, &timeline, &spec.power)?;
    Ok((table, timeline, result))
}

fn switch_row(name: &str, timeline: &SimTimeline) -> SwitchRow {
    let mut per_worker = Vec::with_capacity(timeline.worker_count);
    for w in 0..timeline.worker_count {
        let (count, switches) = timeline
            .requests
            .iter()
            .filter(|r| r.worker == w)
            .fold((0u32, 0u64), |(n, s), r| (n + 1, s + r.switches as u64));
        per_worker.push(if count == 0 {
            0.0
        } else {
            switches as f64 / count as f64
        });
    }
    SwitchRow {
        scenario: name.to_string(),
        total: per_worker.iter().sum(),
        per_worker,
    }
}

/// Run every strategy in the mix under the shared seed and workers, then
/// normalize against the unpartitioned baseline.
pub fn run_mix(mix: &MixSpec) -> Result<MixOutcome, HarnessError> {
    if mix.modes.is_empty() {
        return Err(HarnessError::Config(format!("mix {}: no modes", mix.name)));
    }
    let mut seen = BTreeMap::new();
    for m in &mix.modes {
        if seen.insert(*m, ()).is_some() {
            return Err(HarnessError::Config(format!(
                "mix {}: mode {m} listed twice",
                mix.name
            )));
        }
    }
    if !mix.modes.contains(&PartitioningMode::Baseline) {
        return Err(HarnessError::Config(format!(
            "mix {}: the baseline mode is required as the normalization denominator",
            mix.name
        )));
    }
    let mut results = Vec::new();
    let mut switches = Vec::new();
    let mut tables = Vec::new();
    for mode in &mix.modes {
        let spec = ScenarioSpec {
            name: mode.as_str().to_string(),
            mode: *mode,
            ..mix.scenario.clone()
        };
        let (table, timeline, result) = run_scenario(&spec)?;
        switches.push(switch_row(&spec.name, &timeline));
        tables.push((spec.name.clone(), table));
        results.push(result);
    }
    let report = normalize(&results, PartitioningMode::Baseline.as_str())?;
    Ok(MixOutcome {
        results,
        report,
        switches,
        tables,
    })
}

// ── TOML mix configs ────────────────────────────────────────────────────

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MixFile {
    name: String,
    seed: u64,
    profiles: PathBuf,
    modes: Vec<String>,
    workers: Vec<WorkerRow>,
    #[serde(default)]
    hardware: HardwareSpec,
    #[serde(default)]
    allocator: AllocatorSection,
    #[serde(default)]
    overheads: OverheadSection,
    #[serde(default)]
    power: PowerSection,
    #[serde(default)]
    sim: SimSection,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WorkerRow {
    model: String,
    rps: f64,
    /// Either a request count or a duration to fill at the arrival rate.
    requests: Option<u32>,
    duration_s: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct AllocatorSection {
    switch_max: Option<u32>,
    slowdown_mode: Option<String>,
    scalarization: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct OverheadSection {
    ioctl_min_us: Option<f64>,
    ioctl_mode_us: Option<f64>,
    ioctl_max_us: Option<f64>,
    barrier_cost_us: Option<f64>,
    oversub_penalty_per_queue: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct PowerSection {
    idle_w: Option<f64>,
    max_w: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimSection {
    arrival: Option<String>,
    threshold_tolerance: Option<f64>,
    model_slowdown_factor: Option<f64>,
    forced_masked_streams: Option<u32>,
}

/// Load a mix description. Relative profile paths resolve against the config
/// file's directory.
pub fn load_mix(path: impl AsRef<Path>) -> Result<MixSpec, HarnessError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    let file: MixFile = toml::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;

    let profile_path = if file.profiles.is_relative() {
        path.parent()
            .unwrap_or_else(|| Path::new("."))
            .join(&file.profiles)
    } else {
        file.profiles.clone()
    };
    file.hardware
        .validate()
        .map_err(HarnessError::Profile)?;
    let models = load_profiles_with(&profile_path, &file.hardware)?;
    let by_name: BTreeMap<&str, &ModelProfile> =
        models.iter().map(|m| (m.name.as_str(), m)).collect();

    let mut modes = Vec::new();
    for m in &file.modes {
        modes.push(
            m.parse::<PartitioningMode>()
                .map_err(HarnessError::Config)?,
        );
    }

    if file.workers.is_empty() {
        return Err(HarnessError::Config("mix declares no workers".into()));
    }
    let mut workers = Vec::new();
    for (i, row) in file.workers.iter().enumerate() {
        let model = by_name
            .get(row.model.as_str())
            .ok_or_else(|| {
                HarnessError::Config(format!(
                    "worker {i}: model {:?} not in {}",
                    row.model,
                    profile_path.display()
                ))
            })?
            .to_owned()
            .clone();
        let request_count = match (row.requests, row.duration_s) {
            (Some(n), None) => n,
            (None, Some(d)) if d > 0.0 => (d * row.rps).ceil() as u32,
            _ => {
                return Err(HarnessError::Config(format!(
                    "worker {i}: give exactly one of requests or duration_s"
                )))
            }
        };
        let w = WorkerSpec {
            worker_id: i,
            model,
            arrival_rps: row.rps,
            request_count,
        };
        w.validate()?;
        workers.push(w);
    }

    let slowdown_mode = match &file.allocator.slowdown_mode {
        None => SlowdownMode::ExcludeSelf,
        Some(s) => s.parse().map_err(HarnessError::Config)?,
    };
    let scalarization = match file.allocator.scalarization.as_deref() {
        None | Some("weighted-sum") => Scalarization::WeightedSum,
        Some("min-max") => Scalarization::MinMax,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "unknown scalarization {other:?} (expected weighted-sum or min-max)"
            )))
        }
    };
    let arrival = match file.sim.arrival.as_deref() {
        None | Some("deterministic") => ArrivalProcess::Deterministic,
        Some("poisson") => ArrivalProcess::Poisson,
        Some(other) => {
            return Err(HarnessError::Config(format!(
                "unknown arrival process {other:?} (expected deterministic or poisson)"
            )))
        }
    };
    let d = OverheadModel::default();
    let overhead = OverheadModel {
        ioctl_min_us: file.overheads.ioctl_min_us.unwrap_or(d.ioctl_min_us),
        ioctl_mode_us: file.overheads.ioctl_mode_us.unwrap_or(d.ioctl_mode_us),
        ioctl_max_us: file.overheads.ioctl_max_us.unwrap_or(d.ioctl_max_us),
        barrier_cost_us: file.overheads.barrier_cost_us.unwrap_or(d.barrier_cost_us),
        oversub_penalty_per_queue: file
            .overheads
            .oversub_penalty_per_queue
            .unwrap_or(d.oversub_penalty_per_queue),
    };
    overhead.validate()?;
    let dp = PowerModel::default();
    let power = PowerModel {
        p_idle_w: file.power.idle_w.unwrap_or(dp.p_idle_w),
        p_max_w: file.power.max_w.unwrap_or(dp.p_max_w),
    };
    power.validate()?;

    Ok(MixSpec {
        name: file.name,
        modes,
        scenario: ScenarioSpec {
            name: String::new(),
            mode: PartitioningMode::Baseline,
            workers,
            hardware: file.hardware,
            switch_max: file.allocator.switch_max.unwrap_or(14),
            slowdown_mode,
            scalarization,
            overhead,
            power,
            seed: file.seed,
            arrival,
            threshold_tolerance: file.sim.threshold_tolerance.unwrap_or(0.05),
            model_slowdown_factor: file.sim.model_slowdown_factor.unwrap_or(1.10),
            forced_masked_streams: file.sim.forced_masked_streams,
        },
    })
}
