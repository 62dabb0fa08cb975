//! Kernel and model profiles: ingestion, synthesis, and right-sizing.
//!
//! A profile records, for every kernel of a model, the kernel's solo
//! execution time at each allowed CU configuration. Durations are stored as
//! integer nanoseconds so that decimal microsecond strings from profile files
//! round-trip exactly and so that sums compare without float noise.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Integer nanoseconds. Profile durations are exact at this resolution.
pub type Nanos = u64;

/// Nanoseconds to the simulator's working unit (microseconds).
pub fn ns_to_us(ns: Nanos) -> f64 {
    ns as f64 / 1000.0
}

#[derive(Debug, Error)]
pub enum ProfileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("profile line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("kernel {kernel_id}: missing duration for {cu_count} CUs")]
    MissingConfig { kernel_id: usize, cu_count: u32 },
    #[error("kernel {kernel_id}: exec time rises from {lower_cus} to {higher_cus} CUs; profiles must be non-increasing in CUs")]
    NonMonotone {
        kernel_id: usize,
        lower_cus: u32,
        higher_cus: u32,
    },
    #[error("kernel {kernel_id}: duration must be positive")]
    NonPositive { kernel_id: usize },
    #[error("{cu_count} CUs is not an allowed configuration")]
    InvalidConfig { cu_count: u32 },
    #[error("{0}")]
    InvalidParams(String),
}

// ── Hardware ────────────────────────────────────────────────────────────

/// Fixed shape of the accelerator: CUs grouped into equally sized shader
/// engines, plus the number of hardware queues the scheduler can map without
/// oversubscription.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HardwareSpec {
    pub total_cus: u32,
    pub se_count: u32,
    pub cus_per_se: u32,
    pub hw_queue_count: u32,
}

impl Default for HardwareSpec {
    fn default() -> Self {
        HardwareSpec {
            total_cus: 60,
            se_count: 4,
            cus_per_se: 15,
            hw_queue_count: 8,
        }
    }
}

impl HardwareSpec {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if self.se_count == 0 || self.cus_per_se == 0 || self.hw_queue_count == 0 {
            return Err(ProfileError::InvalidParams(
                "hardware dimensions must be positive".into(),
            ));
        }
        if self.total_cus != self.se_count * self.cus_per_se {
            return Err(ProfileError::InvalidParams(format!(
                "total_cus {} != se_count {} * cus_per_se {}",
                self.total_cus, self.se_count, self.cus_per_se
            )));
        }
        Ok(())
    }

    /// Allowed CU configurations: whole numbers of shader engines, ascending.
    pub fn configs(&self) -> Vec<CuConfig> {
        (1..=self.se_count)
            .map(|i| CuConfig(i * self.cus_per_se))
            .collect()
    }

    pub fn min_config(&self) -> CuConfig {
        CuConfig(self.cus_per_se)
    }

    pub fn max_config(&self) -> CuConfig {
        CuConfig(self.total_cus)
    }

    pub fn config(&self, cu_count: u32) -> Result<CuConfig, ProfileError> {
        CuConfig::new(cu_count, self)
    }
}

/// One allowed CU configuration (a whole number of shader engines' worth of
/// CUs). Ordered by CU count.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CuConfig(u32);

impl CuConfig {
    pub fn new(cu_count: u32, hardware: &HardwareSpec) -> Result<Self, ProfileError> {
        if cu_count == 0
            || cu_count > hardware.total_cus
            || cu_count % hardware.cus_per_se != 0
        {
            return Err(ProfileError::InvalidConfig { cu_count });
        }
        Ok(CuConfig(cu_count))
    }

    pub const fn cu_count(self) -> u32 {
        self.0
    }

    /// Number of shader engines this configuration spans.
    pub fn se_span(self, hardware: &HardwareSpec) -> u32 {
        self.0 / hardware.cus_per_se
    }
}

impl fmt::Debug for CuConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}cu", self.0)
    }
}

impl fmt::Display for CuConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

// ── Profiles ────────────────────────────────────────────────────────────

/// Solo execution times of one kernel at each allowed configuration.
/// Invariant: a duration exists for every allowed config, all durations are
/// positive, and durations never increase as CUs increase.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelProfile {
    pub kernel_id: usize,
    exec_time: BTreeMap<CuConfig, Nanos>,
}

impl KernelProfile {
    pub fn new(
        kernel_id: usize,
        exec_time: BTreeMap<CuConfig, Nanos>,
        expected_configs: &[CuConfig],
    ) -> Result<Self, ProfileError> {
        for c in expected_configs {
            match exec_time.get(c) {
                None => {
                    return Err(ProfileError::MissingConfig {
                        kernel_id,
                        cu_count: c.cu_count(),
                    })
                }
                Some(0) => return Err(ProfileError::NonPositive { kernel_id }),
                Some(_) => {}
            }
        }
        let mut prev: Option<(CuConfig, Nanos)> = None;
        for (&c, &t) in &exec_time {
            if let Some((pc, pt)) = prev {
                if t > pt {
                    return Err(ProfileError::NonMonotone {
                        kernel_id,
                        lower_cus: pc.cu_count(),
                        higher_cus: c.cu_count(),
                    });
                }
            }
            prev = Some((c, t));
        }
        Ok(KernelProfile {
            kernel_id,
            exec_time,
        })
    }

    /// Solo duration at `config`. Panics if the config is absent, which the
    /// constructor rules out for every allowed config.
    pub fn exec_ns(&self, config: CuConfig) -> Nanos {
        *self
            .exec_time
            .get(&config)
            .unwrap_or_else(|| panic!("no duration for {config} CUs"))
    }

    pub fn exec_us(&self, config: CuConfig) -> f64 {
        ns_to_us(self.exec_ns(config))
    }

    pub fn configs(&self) -> impl Iterator<Item = CuConfig> + '_ {
        self.exec_time.keys().copied()
    }
}

/// All kernels of one model, in issue order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelProfile {
    pub name: String,
    kernels: Vec<KernelProfile>,
}

impl ModelProfile {
    pub fn new(name: String, kernels: Vec<KernelProfile>) -> Result<Self, ProfileError> {
        if kernels.is_empty() {
            return Err(ProfileError::InvalidParams(format!(
                "model {name} has no kernels"
            )));
        }
        for (i, k) in kernels.iter().enumerate() {
            if k.kernel_id != i {
                return Err(ProfileError::InvalidParams(format!(
                    "model {name}: kernel ids must be sequential from 0 (found {} at position {i})",
                    k.kernel_id
                )));
            }
        }
        Ok(ModelProfile { name, kernels })
    }

    pub fn kernels(&self) -> &[KernelProfile] {
        &self.kernels
    }

    pub fn kernel_count(&self) -> usize {
        self.kernels.len()
    }

    /// Sum of solo kernel times with every kernel at `config`.
    pub fn solo_time_ns(&self, config: CuConfig) -> Nanos {
        self.kernels.iter().map(|k| k.exec_ns(config)).sum()
    }
}

/// One inference worker: a model served at a given request rate for a given
/// number of requests.
#[derive(Clone, Debug)]
pub struct WorkerSpec {
    pub worker_id: usize,
    pub model: ModelProfile,
    pub arrival_rps: f64,
    pub request_count: u32,
}

impl WorkerSpec {
    pub fn validate(&self) -> Result<(), ProfileError> {
        if !(self.arrival_rps > 0.0) {
            return Err(ProfileError::InvalidParams(format!(
                "worker {}: arrival_rps must be positive",
                self.worker_id
            )));
        }
        if self.request_count == 0 {
            return Err(ProfileError::InvalidParams(format!(
                "worker {}: request_count must be positive",
                self.worker_id
            )));
        }
        Ok(())
    }
}

// ── Exact microsecond parsing ───────────────────────────────────────────

/// Parse a non-negative decimal microsecond literal ("19.8", "21", "0.0554")
/// into integer nanoseconds. Digits beyond the nanosecond place round half
/// up, so nothing above 1 ns of precision is ever lost.
pub fn parse_us_to_ns(s: &str) -> Result<Nanos, String> {
    let s = s.trim();
    if s.is_empty() {
        return Err("empty duration".into());
    }
    let (int_part, frac_part) = match s.split_once('.') {
        Some((i, f)) => (i, f),
        None => (s, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(format!("bad duration {s:?}"));
    }
    if !int_part.chars().all(|c| c.is_ascii_digit())
        || !frac_part.chars().all(|c| c.is_ascii_digit())
    {
        return Err(format!("bad duration {s:?}: expected decimal digits"));
    }
    let whole_us: u64 = if int_part.is_empty() {
        0
    } else {
        int_part
            .parse()
            .map_err(|_| format!("duration {s:?} out of range"))?
    };
    let mut ns = whole_us
        .checked_mul(1000)
        .ok_or_else(|| format!("duration {s:?} out of range"))?;
    let mut frac_ns: u64 = 0;
    for (i, c) in frac_part.chars().enumerate() {
        let d = c.to_digit(10).unwrap() as u64;
        match i {
            0 => frac_ns += d * 100,
            1 => frac_ns += d * 10,
            2 => frac_ns += d,
            3 => {
                // Round half up at the nanosecond boundary.
                if d >= 5 {
                    frac_ns += 1;
                }
            }
            _ => {}
        }
    }
    ns = ns
        .checked_add(frac_ns)
        .ok_or_else(|| format!("duration {s:?} out of range"))?;
    Ok(ns)
}

/// Format integer nanoseconds as a decimal microsecond literal with trailing
/// zeros trimmed. Inverse of [`parse_us_to_ns`] for every representable value.
pub fn format_ns_as_us(ns: Nanos) -> String {
    let whole = ns / 1000;
    let frac = ns % 1000;
    if frac == 0 {
        whole.to_string()
    } else {
        let s = format!("{whole}.{frac:03}");
        s.trim_end_matches('0').to_string()
    }
}

// ── Profile file format ─────────────────────────────────────────────────
//
// One file holds one or more models. Each model is a JSON header line
//   {"model":"resnet50","kernels":2,"configs":[15,30,45,60]}
// followed by `kernels` CSV rows: kernel_id, then one decimal-microsecond
// duration per config in header order. Blank lines between models are
// allowed.

#[derive(Serialize, Deserialize)]
struct FileHeader {
    model: String,
    kernels: usize,
    configs: Vec<u32>,
}

pub fn load_profiles(path: impl AsRef<Path>) -> Result<Vec<ModelProfile>, ProfileError> {
    load_profiles_with(path, &HardwareSpec::default())
}

pub fn load_profiles_with(
    path: impl AsRef<Path>,
    hardware: &HardwareSpec,
) -> Result<Vec<ModelProfile>, ProfileError> {
    let text = fs::read_to_string(path)?;
    parse_profiles(&text, hardware)
}

pub fn parse_profiles(
    text: &str,
    hardware: &HardwareSpec,
) -> Result<Vec<ModelProfile>, ProfileError> {
    hardware.validate()?;
    let allowed = hardware.configs();
    let mut models = Vec::new();
    let mut lines = text.lines().enumerate().peekable();
    while let Some((lineno, raw)) = lines.next() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let header: FileHeader = serde_json::from_str(line).map_err(|e| ProfileError::Parse {
            line: lineno + 1,
            msg: format!("expected model header: {e}"),
        })?;
        if header.kernels == 0 {
            return Err(ProfileError::Parse {
                line: lineno + 1,
                msg: format!("model {} declares zero kernels", header.model),
            });
        }
        let declared: Vec<CuConfig> = header
            .configs
            .iter()
            .map(|&cu| CuConfig::new(cu, hardware))
            .collect::<Result<_, _>>()
            .map_err(|e| ProfileError::Parse {
                line: lineno + 1,
                msg: e.to_string(),
            })?;
        if declared != allowed {
            return Err(ProfileError::Parse {
                line: lineno + 1,
                msg: format!(
                    "model {} declares configs {:?}, hardware allows {:?}",
                    header.model, header.configs, allowed
                ),
            });
        }
        let mut kernels = Vec::with_capacity(header.kernels);
        for k in 0..header.kernels {
            let (rowno, row) = loop {
                match lines.next() {
                    Some((n, r)) if r.trim().is_empty() => {
                        return Err(ProfileError::Parse {
                            line: n + 1,
                            msg: format!(
                                "model {}: blank line inside kernel rows (expected {} rows, got {k})",
                                header.model, header.kernels
                            ),
                        })
                    }
                    Some((n, r)) => break (n, r.trim()),
                    None => {
                        return Err(ProfileError::Parse {
                            line: lineno + 1,
                            msg: format!(
                                "model {}: file ends after {k} of {} kernel rows",
                                header.model, header.kernels
                            ),
                        })
                    }
                }
            };
            let fields: Vec<&str> = row.split(',').map(str::trim).collect();
            if fields.len() != 1 + declared.len() {
                return Err(ProfileError::Parse {
                    line: rowno + 1,
                    msg: format!(
                        "expected kernel_id plus {} durations, got {} fields",
                        declared.len(),
                        fields.len()
                    ),
                });
            }
            let kernel_id: usize = fields[0].parse().map_err(|_| ProfileError::Parse {
                line: rowno + 1,
                msg: format!("bad kernel id {:?}", fields[0]),
            })?;
            if kernel_id != k {
                return Err(ProfileError::Parse {
                    line: rowno + 1,
                    msg: format!("kernel ids must be sequential: expected {k}, got {kernel_id}"),
                });
            }
            let mut exec_time = BTreeMap::new();
            for (c, field) in declared.iter().zip(&fields[1..]) {
                let ns = parse_us_to_ns(field).map_err(|msg| ProfileError::Parse {
                    line: rowno + 1,
                    msg,
                })?;
                exec_time.insert(*c, ns);
            }
            kernels.push(KernelProfile::new(kernel_id, exec_time, &allowed)?);
        }
        models.push(ModelProfile::new(header.model, kernels)?);
    }
    if models.is_empty() {
        return Err(ProfileError::Parse {
            line: 1,
            msg: "no models in profile file".into(),
        });
    }
    Ok(models)
}

pub fn profiles_to_string(models: &[ModelProfile], hardware: &HardwareSpec) -> String {
    let configs = hardware.configs();
    let mut out = String::new();
    for (i, m) in models.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let header = FileHeader {
            model: m.name.clone(),
            kernels: m.kernel_count(),
            configs: configs.iter().map(|c| c.cu_count()).collect(),
        };
        out.push_str(&serde_json::to_string(&header).expect("header serializes"));
        out.push('\n');
        for k in m.kernels() {
            out.push_str(&k.kernel_id.to_string());
            for c in &configs {
                out.push(',');
                out.push_str(&format_ns_as_us(k.exec_ns(*c)));
            }
            out.push('\n');
        }
    }
    out
}

pub fn write_profiles(
    path: impl AsRef<Path>,
    models: &[ModelProfile],
    hardware: &HardwareSpec,
) -> Result<(), ProfileError> {
    fs::write(path, profiles_to_string(models, hardware))?;
    Ok(())
}

// ── Synthesis ───────────────────────────────────────────────────────────

/// How synthesized kernels pick the "knee" config beyond which extra CUs stop
/// helping.
#[derive(Clone, Debug)]
pub enum KneeDistribution {
    /// Every kernel has its knee at the given CU count.
    Fixed(u32),
    /// Knees spread evenly across the allowed configs: counts per config
    /// differ by at most one, with positions shuffled by the seed.
    Uniform,
    /// Knees drawn independently with one weight per allowed config.
    Weighted(Vec<f64>),
    /// Knees held constant over runs of `phase_len` consecutive kernels,
    /// with each kernel independently jittered one config step away with
    /// probability `jitter`. Mimics layer groups with per-kernel noise.
    Phased { phase_len: usize, jitter: f64 },
}

#[derive(Clone, Debug)]
pub struct SynthesisParams {
    pub name: String,
    pub knees: KneeDistribution,
    /// Range for the plateau time in microseconds; sampled log-uniformly.
    pub base_time_us: (f64, f64),
    /// Steepness of the slowdown below the knee: at half the knee's CUs a
    /// kernel takes (1 + decay) times its plateau duration.
    pub decay: f64,
    /// Relative variation of the plateau beyond the knee, at most 0.01.
    /// Zero keeps the plateau exactly flat.
    pub plateau_variation: f64,
    pub hardware: HardwareSpec,
}

impl Default for SynthesisParams {
    fn default() -> Self {
        SynthesisParams {
            name: "synth".into(),
            knees: KneeDistribution::Uniform,
            base_time_us: (2.0, 200.0),
            decay: 1.0,
            plateau_variation: 0.0,
            hardware: HardwareSpec::default(),
        }
    }
}

/// Generate a model whose kernels scale down to a per-kernel knee config and
/// stay flat (within `plateau_variation`) beyond it. Deterministic in
/// (`kernel_count`, `params`, `seed`).
pub fn synthesize_profile(
    kernel_count: usize,
    params: &SynthesisParams,
    seed: u64,
) -> Result<ModelProfile, ProfileError> {
    params.hardware.validate()?;
    let configs = params.hardware.configs();
    if kernel_count == 0 {
        return Err(ProfileError::InvalidParams("kernel_count must be positive".into()));
    }
    let (lo, hi) = params.base_time_us;
    if !(lo > 0.0 && hi >= lo) {
        return Err(ProfileError::InvalidParams(format!(
            "base_time_us range ({lo}, {hi}) must be positive and ordered"
        )));
    }
    if !(params.decay > 0.0) {
        return Err(ProfileError::InvalidParams("decay must be positive".into()));
    }
    if !(0.0..=0.01).contains(&params.plateau_variation) {
        return Err(ProfileError::InvalidParams(
            "plateau_variation must lie in [0, 0.01]".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let knee_indices: Vec<usize> = match &params.knees {
        KneeDistribution::Fixed(cu) => {
            let idx = configs
                .iter()
                .position(|c| c.cu_count() == *cu)
                .ok_or(ProfileError::InvalidConfig { cu_count: *cu })?;
            vec![idx; kernel_count]
        }
        KneeDistribution::Uniform => {
            let mut idxs: Vec<usize> = (0..kernel_count).map(|i| i % configs.len()).collect();
            idxs.shuffle(&mut rng);
            idxs
        }
        KneeDistribution::Weighted(weights) => {
            if weights.len() != configs.len() {
                return Err(ProfileError::InvalidParams(format!(
                    "need {} knee weights, got {}",
                    configs.len(),
                    weights.len()
                )));
            }
            if weights.iter().any(|w| *w < 0.0) || weights.iter().sum::<f64>() <= 0.0 {
                return Err(ProfileError::InvalidParams(
                    "knee weights must be non-negative with positive sum".into(),
                ));
            }
            let total: f64 = weights.iter().sum();
            (0..kernel_count)
                .map(|_| {
                    let r = rng.random::<f64>() * total;
                    let mut acc = 0.0;
                    for (i, w) in weights.iter().enumerate() {
                        acc += w;
                        if r < acc {
                            return i;
                        }
                    }
                    weights.len() - 1
                })
                .collect()
        }
        KneeDistribution::Phased { phase_len, jitter } => {
            if *phase_len == 0 {
                return Err(ProfileError::InvalidParams("phase_len must be positive".into()));
            }
            if !(0.0..=1.0).contains(jitter) {
                return Err(ProfileError::InvalidParams(
                    "jitter must lie in [0, 1]".into(),
                ));
            }
            // Phase knees spread evenly, like Uniform but per phase.
            let phases = kernel_count.div_ceil(*phase_len);
            let mut phase_knees: Vec<usize> = (0..phases).map(|i| i % configs.len()).collect();
            phase_knees.shuffle(&mut rng);
            (0..kernel_count)
                .map(|k| {
                    let base = phase_knees[k / *phase_len];
                    if rng.random::<f64>() < *jitter {
                        if rng.random::<bool>() {
                            (base + 1).min(configs.len() - 1)
                        } else {
                            base.saturating_sub(1)
                        }
                    } else {
                        base
                    }
                })
                .collect()
        }
    };

    let last = configs.len() - 1;
    let mut kernels = Vec::with_capacity(kernel_count);
    for (kernel_id, &kidx) in knee_indices.iter().enumerate() {
        let t: f64 = if hi > lo {
            let r = rng.random::<f64>();
            (lo.ln() + r * (hi.ln() - lo.ln())).exp()
        } else {
            // Keep the draw so the stream position is independent of the range.
            let _ = rng.random::<f64>();
            lo
        };
        let knee_cus = configs[kidx].cu_count() as f64;
        let mut ns: Vec<Nanos> = Vec::with_capacity(configs.len());
        for (i, c) in configs.iter().enumerate() {
            let us = if i >= kidx {
                let frac = if kidx == last {
                    0.0
                } else {
                    (last - i) as f64 / (last - kidx) as f64
                };
                t * (1.0 + params.plateau_variation * frac)
            } else {
                let at_knee = t * (1.0 + params.plateau_variation);
                at_knee * (1.0 + params.decay * (knee_cus / c.cu_count() as f64 - 1.0))
            };
            ns.push(((us * 1000.0).round() as Nanos).max(1));
        }
        // Rounding to nanoseconds can flip a near-flat pair; restore
        // monotonicity without disturbing exact plateaus.
        for i in (0..configs.len() - 1).rev() {
            if ns[i] < ns[i + 1] {
                ns[i] = ns[i + 1];
            }
        }
        let exec_time: BTreeMap<CuConfig, Nanos> =
            configs.iter().copied().zip(ns.iter().copied()).collect();
        kernels.push(KernelProfile::new(kernel_id, exec_time, &configs)?);
    }
    ModelProfile::new(params.name.clone(), kernels)
}

// ── Right-sizing ────────────────────────────────────────────────────────

/// Smallest allowed config whose solo time stays within `(1 + tolerance)` of
/// the kernel's time at the largest allowed config.
pub fn min_cu_threshold(kernel: &KernelProfile, slowdown_tolerance: f64) -> CuConfig {
    let configs: Vec<CuConfig> = kernel.configs().collect();
    min_cu_threshold_in(kernel, slowdown_tolerance, &configs)
}

/// [`min_cu_threshold`] restricted to a sorted subset of the kernel's
/// configs. The subset must be non-empty and ascending.
pub fn min_cu_threshold_in(
    kernel: &KernelProfile,
    slowdown_tolerance: f64,
    allowed: &[CuConfig],
) -> CuConfig {
    assert!(slowdown_tolerance >= 0.0, "tolerance must be non-negative");
    assert!(!allowed.is_empty(), "allowed configs must be non-empty");
    let max = *allowed.last().unwrap();
    let bound = (1.0 + slowdown_tolerance) * kernel.exec_ns(max) as f64;
    for &c in allowed {
        if kernel.exec_ns(c) as f64 <= bound {
            return c;
        }
    }
    max
}

/// Smallest allowed config whose whole-model solo time stays within `factor`
/// of the model's time at the largest allowed config. One config for the
/// whole model.
pub fn model_wise_rightsize(model: &ModelProfile, slowdown_factor: f64) -> CuConfig {
    let configs: Vec<CuConfig> = model.kernels()[0].configs().collect();
    model_wise_rightsize_in(model, slowdown_factor, &configs)
}

pub fn model_wise_rightsize_in(
    model: &ModelProfile,
    slowdown_factor: f64,
    allowed: &[CuConfig],
) -> CuConfig {
    assert!(slowdown_factor >= 1.0, "slowdown factor must be at least 1");
    assert!(!allowed.is_empty(), "allowed configs must be non-empty");
    let max = *allowed.last().unwrap();
    let bound = slowdown_factor * model.solo_time_ns(max) as f64;
    for &c in allowed {
        if model.solo_time_ns(c) as f64 <= bound {
            return c;
        }
    }
    max
}
