//! Per-kernel CU allocation under a switch budget.
//!
//! Each worker gets one CU configuration per kernel. A worker's slowdown
//! factor comes from how many CUs its co-runners occupy on average; its
//! energy proxy is the slowdown-inflated sum of solo kernel times. The solver
//! alternates exact per-worker dynamic programs until the assignment stops
//! changing; a joint exhaustive search over the same objective serves as an
//! independent optimum oracle for small instances.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::{ns_to_us, CuConfig, HardwareSpec, ModelProfile, Nanos, WorkerSpec};

#[derive(Debug, Error)]
pub enum AllocError {
    #[error("unknown worker id {0}")]
    UnknownWorker(usize),
    #[error("empty config sequence")]
    EmptySequence,
    #[error("joint search space of {size} assignments exceeds limit {limit}")]
    InstanceTooLarge { size: u128, limit: u64 },
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("lookup table: {0}")]
    Table(String),
}

/// How a worker's slowdown counts co-runner CU usage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlowdownMode {
    /// The worker's own average CUs are part of its overlap term.
    IncludeSelf,
    /// Only co-runners' average CUs count.
    ExcludeSelf,
    /// Only the combined demand above machine capacity counts.
    ExcessOverCapacity,
}

impl SlowdownMode {
    pub const ALL: [SlowdownMode; 3] = [
        SlowdownMode::IncludeSelf,
        SlowdownMode::ExcludeSelf,
        SlowdownMode::ExcessOverCapacity,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SlowdownMode::IncludeSelf => "include-self",
            SlowdownMode::ExcludeSelf => "exclude-self",
            SlowdownMode::ExcessOverCapacity => "excess-over-capacity",
        }
    }
}

impl std::fmt::Display for SlowdownMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SlowdownMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "include-self" => Ok(SlowdownMode::IncludeSelf),
            "exclude-self" => Ok(SlowdownMode::ExcludeSelf),
            "excess-over-capacity" => Ok(SlowdownMode::ExcessOverCapacity),
            other => Err(format!(
                "unknown slowdown mode {other:?} (expected include-self, exclude-self, or excess-over-capacity)"
            )),
        }
    }
}

/// How per-worker objectives fold into the single value the solver compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scalarization {
    WeightedSum,
    MinMax,
}

#[derive(Clone, Debug)]
pub struct AllocationProblem {
    pub workers: Vec<WorkerSpec>,
    pub hardware: HardwareSpec,
    /// Sorted ascending; every worker may use exactly these configs.
    pub allowed_configs: Vec<CuConfig>,
    /// Per-worker cap on config changes between consecutive kernels.
    pub switch_max: u32,
    pub slowdown_mode: SlowdownMode,
    pub scalarization: Scalarization,
    /// One weight per worker for the scalarized objective.
    pub weights: Vec<f64>,
    /// Coordinate-descent round limit.
    pub max_rounds: u32,
}

impl AllocationProblem {
    pub fn new(workers: Vec<WorkerSpec>, hardware: HardwareSpec) -> Self {
        let allowed_configs = hardware.configs();
        let weights = vec![1.0; workers.len()];
        AllocationProblem {
            workers,
            hardware,
            allowed_configs,
            switch_max: 14,
            slowdown_mode: SlowdownMode::ExcludeSelf,
            scalarization: Scalarization::WeightedSum,
            weights,
            max_rounds: 32,
        }
    }

    pub fn validate(&self) -> Result<(), AllocError> {
        self.hardware
            .validate()
            .map_err(|e| AllocError::InvalidProblem(e.to_string()))?;
        if self.workers.is_empty() {
            return Err(AllocError::InvalidProblem("no workers".into()));
        }
        for (i, w) in self.workers.iter().enumerate() {
            if w.worker_id != i {
                return Err(AllocError::InvalidProblem(format!(
                    "worker ids must be sequential from 0 (found {} at position {i})",
                    w.worker_id
                )));
            }
        }
        if self.allowed_configs.is_empty() {
            return Err(AllocError::InvalidProblem("no allowed configs".into()));
        }
        let all = self.hardware.configs();
        let mut prev = None;
        for c in &self.allowed_configs {
            if !all.contains(c) {
                return Err(AllocError::InvalidProblem(format!(
                    "config {c} not offered by the hardware"
                )));
            }
            if prev.map_or(false, |p: CuConfig| p >= *c) {
                return Err(AllocError::InvalidProblem(
                    "allowed configs must be ascending and distinct".into(),
                ));
            }
            prev = Some(*c);
        }
        if self.weights.len() != self.workers.len() {
            return Err(AllocError::InvalidProblem(format!(
                "{} weights for {} workers",
                self.weights.len(),
                self.workers.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w > 0.0)) {
            return Err(AllocError::InvalidProblem("weights must be positive".into()));
        }
        if self.max_rounds == 0 {
            return Err(AllocError::InvalidProblem("max_rounds must be positive".into()));
        }
        Ok(())
    }
}

/// Result of one allocation: per-worker config sequences plus the derived
/// quantities the rest of the pipeline consumes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AllocationPlan {
    pub assignments: Vec<Vec<CuConfig>>,
    /// Mean assigned CUs per worker.
    pub cu_average: Vec<f64>,
    /// Overlap CUs feeding each worker's slowdown, per the slowdown mode.
    pub cu_overlap: Vec<f64>,
    pub alpha: Vec<f64>,
    /// Config changes between consecutive kernels, per worker.
    pub switch_total: Vec<u32>,
    /// Slowdown-inflated sum of solo kernel times, microseconds.
    pub objective_us: Vec<f64>,
    /// Per-kernel slowdown-inflated durations, microseconds.
    pub est_exec_us: Vec<Vec<f64>>,
    pub slowdown_mode: SlowdownMode,
    pub switch_max: u32,
    pub converged: bool,
    pub rounds: u32,
}

impl AllocationPlan {
    pub fn scalar_objective(&self, scalarization: Scalarization, weights: &[f64]) -> f64 {
        scalarize(scalarization, weights, &self.objective_us)
    }
}

fn scalarize(scalarization: Scalarization, weights: &[f64], objectives: &[f64]) -> f64 {
    match scalarization {
        Scalarization::WeightedSum => objectives
            .iter()
            .zip(weights)
            .map(|(o, w)| o * w)
            .sum(),
        Scalarization::MinMax => objectives
            .iter()
            .zip(weights)
            .map(|(o, w)| o * w)
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

// ── Objective pieces ────────────────────────────────────────────────────

/// Slowdown-inflated duration: `beta * (1 + alpha)`.
pub fn estimate_exec_us(beta_us: f64, alpha: f64) -> f64 {
    debug_assert!(beta_us > 0.0);
    debug_assert!(alpha >= 0.0);
    beta_us * (1.0 + alpha)
}

/// Overlap CUs charged to `worker` given every worker's mean assigned CUs.
pub fn cu_overlap(
    averages: &[f64],
    worker: usize,
    mode: SlowdownMode,
    hardware: &HardwareSpec,
) -> Result<f64, AllocError> {
    if worker >= averages.len() {
        return Err(AllocError::UnknownWorker(worker));
    }
    let others: f64 = averages
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != worker)
        .map(|(_, a)| *a)
        .sum();
    Ok(match mode {
        SlowdownMode::IncludeSelf => averages[worker] + others,
        SlowdownMode::ExcludeSelf => others,
        SlowdownMode::ExcessOverCapacity => {
            let total: f64 = averages.iter().sum();
            (total - hardware.total_cus as f64).max(0.0)
        }
    })
}

/// Slowdown factor contributed by `overlap_cus` CUs of contention.
pub fn alpha(overlap_cus: f64, hardware: &HardwareSpec) -> f64 {
    debug_assert!(overlap_cus >= 0.0);
    overlap_cus / hardware.total_cus as f64
}

/// Config changes between consecutive kernels of one worker's sequence.
pub fn switch_count(configs: &[CuConfig]) -> Result<u32, AllocError> {
    if configs.is_empty() {
        return Err(AllocError::EmptySequence);
    }
    Ok(configs.windows(2).filter(|w| w[0] != w[1]).count() as u32)
}

fn mean_cus(configs: &[CuConfig]) -> f64 {
    let sum: u64 = configs.iter().map(|c| c.cu_count() as u64).sum();
    sum as f64 / configs.len() as f64
}

/// Canonical per-worker objective: exact nanosecond sum, then one conversion
/// and one slowdown multiply. Every route that compares objectives must use
/// this same shape.
fn objective_us_from_sum(sum_ns: Nanos, alpha: f64) -> f64 {
    estimate_exec_us(ns_to_us(sum_ns), alpha)
}

// ── Single-worker dynamic program ───────────────────────────────────────

/// Exact minimizer of one worker's solo-time sum under the switch budget,
/// at a fixed slowdown.
#[derive(Clone, Debug, PartialEq)]
pub struct DpResult {
    pub configs: Vec<CuConfig>,
    pub sum_beta_ns: Nanos,
    pub objective_us: f64,
}

/// Minimize the summed solo time of `model`'s kernels over config sequences
/// with at most `switch_max` changes, then inflate by `alpha`. Ties prefer
/// fewer CUs at the earliest kernel where the candidates differ.
pub fn dp_single_worker(
    model: &ModelProfile,
    alpha: f64,
    switch_max: u32,
    allowed_configs: &[CuConfig],
) -> DpResult {
    assert!(!allowed_configs.is_empty(), "allowed configs must be non-empty");
    assert!(alpha >= 0.0);
    let n = model.kernel_count();
    let nc = allowed_configs.len();
    let budget = (switch_max as usize).min(n.saturating_sub(1));

    // beta[k][ci]: solo time of kernel k at allowed config ci.
    let beta: Vec<Vec<Nanos>> = model
        .kernels()
        .iter()
        .map(|k| allowed_configs.iter().map(|c| k.exec_ns(*c)).collect())
        .collect();

    // best[k][ci][s]: minimal suffix sum for kernels k.. with kernel k at
    // config ci and at most s switches inside the suffix.
    let mut best = vec![vec![vec![0u64; budget + 1]; nc]; n];
    for ci in 0..nc {
        for s in 0..=budget {
            best[n - 1][ci][s] = beta[n - 1][ci];
        }
    }
    for k in (0..n - 1).rev() {
        for ci in 0..nc {
            for s in 0..=budget {
                let mut m = best[k + 1][ci][s];
                if s > 0 {
                    for cj in 0..nc {
                        if cj != ci && best[k + 1][cj][s - 1] < m {
                            m = best[k + 1][cj][s - 1];
                        }
                    }
                }
                best[k][ci][s] = beta[k][ci] + m;
            }
        }
    }

    // Reconstruct forward, resolving every tie toward the smallest config:
    // the result is the lexicographically least optimal sequence.
    let mut configs = Vec::with_capacity(n);
    let mut ci = 0;
    for cj in 1..nc {
        if best[0][cj][budget] < best[0][ci][budget] {
            ci = cj;
        }
    }
    configs.push(allowed_configs[ci]);
    let mut s = budget;
    for k in 0..n - 1 {
        // Optimal continuation value from kernel k+1 given (ci, s).
        let mut val = best[k + 1][ci][s];
        if s > 0 {
            for cj in 0..nc {
                if cj != ci && best[k + 1][cj][s - 1] < val {
                    val = best[k + 1][cj][s - 1];
                }
            }
        }
        // Smallest config that achieves it; a hop spends one switch, so
        // staying put reads the budget-s row and hopping the s-1 row.
        let mut next = ci;
        for cj in 0..nc {
            let reach = if cj == ci {
                best[k + 1][ci][s]
            } else if s > 0 {
                best[k + 1][cj][s - 1]
            } else {
                continue;
            };
            if reach == val {
                next = cj;
                break;
            }
        }
        if next != ci {
            s -= 1;
            ci = next;
        }
        configs.push(allowed_configs[ci]);
    }

    let sum_beta_ns: Nanos = configs
        .iter()
        .enumerate()
        .map(|(k, c)| model.kernels()[k].exec_ns(*c))
        .sum();
    debug_assert_eq!(
        sum_beta_ns,
        (0..nc)
            .map(|c| best[0][c][budget])
            .min()
            .unwrap()
    );
    DpResult {
        configs,
        sum_beta_ns,
        objective_us: objective_us_from_sum(sum_beta_ns, alpha),
    }
}

// ── Coordinate-descent solver ───────────────────────────────────────────

fn finalize_plan(
    problem: &AllocationProblem,
    assignments: Vec<Vec<CuConfig>>,
    converged: bool,
    rounds: u32,
) -> Result<AllocationPlan, AllocError> {
    let hw = &problem.hardware;
    let cu_average: Vec<f64> = assignments.iter().map(|a| mean_cus(a)).collect();
    let mut cu_over = Vec::with_capacity(assignments.len());
    let mut alphas = Vec::with_capacity(assignments.len());
    let mut switch_total = Vec::with_capacity(assignments.len());
    let mut objective_us = Vec::with_capacity(assignments.len());
    let mut est_exec_us = Vec::with_capacity(assignments.len());
    for (w, cfgs) in assignments.iter().enumerate() {
        let overlap = cu_overlap(&cu_average, w, problem.slowdown_mode, hw)?;
        let a = alpha(overlap, hw);
        let sw = switch_count(cfgs)?;
        debug_assert!(sw <= problem.switch_max);
        let sum_ns: Nanos = cfgs
            .iter()
            .enumerate()
            .map(|(k, c)| problem.workers[w].model.kernels()[k].exec_ns(*c))
            .sum();
        let est: Vec<f64> = cfgs
            .iter()
            .enumerate()
            .map(|(k, c)| {
                estimate_exec_us(problem.workers[w].model.kernels()[k].exec_us(*c), a)
            })
            .collect();
        cu_over.push(overlap);
        alphas.push(a);
        switch_total.push(sw);
        objective_us.push(objective_us_from_sum(sum_ns, a));
        est_exec_us.push(est);
    }
    Ok(AllocationPlan {
        assignments,
        cu_average,
        cu_overlap: cu_over,
        alpha: alphas,
        switch_total,
        objective_us,
        est_exec_us,
        slowdown_mode: problem.slowdown_mode,
        switch_max: problem.switch_max,
        converged,
        rounds,
    })
}

fn scalar_of_assignments(
    problem: &AllocationProblem,
    assignments: &[Vec<CuConfig>],
) -> Result<f64, AllocError> {
    let averages: Vec<f64> = assignments.iter().map(|a| mean_cus(a)).collect();
    let mut objectives = Vec::with_capacity(assignments.len());
    for (w, cfgs) in assignments.iter().enumerate() {
        let overlap = cu_overlap(&averages, w, problem.slowdown_mode, &problem.hardware)?;
        let a = alpha(overlap, &problem.hardware);
        let sum_ns: Nanos = cfgs
            .iter()
            .enumerate()
            .map(|(k, c)| problem.workers[w].model.kernels()[k].exec_ns(*c))
            .sum();
        objectives.push(objective_us_from_sum(sum_ns, a));
    }
    Ok(scalarize(problem.scalarization, &problem.weights, &objectives))
}

/// Alpha seen by `worker` under the current averages; for the self-inclusive
/// mode the worker's own tentative average participates.
fn mode_alpha(
    averages: &[f64],
    worker: usize,
    mode: SlowdownMode,
    hardware: &HardwareSpec,
) -> f64 {
    let overlap = cu_overlap(averages, worker, mode, hardware).expect("worker in range");
    alpha(overlap, hardware)
}

/// Alternate exact per-worker DPs (worker ids ascending) until a full round
/// leaves every assignment unchanged. On convergence the returned plan is a
/// fixed point: re-running any worker's DP at the final alphas reproduces its
/// assignment. If `max_rounds` passes without convergence the best scalarized
/// plan seen is returned with `converged` unset.
pub fn solve(problem: &AllocationProblem) -> Result<AllocationPlan, AllocError> {
    problem.validate()?;
    let nw = problem.workers.len();
    let hw = &problem.hardware;
    let mut assignments: Vec<Vec<CuConfig>> = vec![Vec::new(); nw];
    let mut averages = vec![0.0f64; nw];
    let mut best: Option<(f64, Vec<Vec<CuConfig>>)> = None;
    let mut rounds = 0;

    for round in 1..=problem.max_rounds {
        let mut changed = false;
        for w in 0..nw {
            let a = match problem.slowdown_mode {
                SlowdownMode::IncludeSelf => {
                    // The worker's own average feeds its alpha, so iterate the
                    // inner pair (alpha, assignment) to a local fixed point.
                    let mut cfgs = assignments[w].clone();
                    let mut avgs = averages.clone();
                    let mut a = mode_alpha(&avgs, w, problem.slowdown_mode, hw);
                    for _ in 0..8 {
                        let dp = dp_single_worker(
                            &problem.workers[w].model,
                            a,
                            problem.switch_max,
                            &problem.allowed_configs,
                        );
                        if dp.configs == cfgs {
                            break;
                        }
                        cfgs = dp.configs;
                        avgs[w] = mean_cus(&cfgs);
                        a = mode_alpha(&avgs, w, problem.slowdown_mode, hw);
                    }
                    a
                }
                _ => mode_alpha(&averages, w, problem.slowdown_mode, hw),
            };
            let dp = dp_single_worker(
                &problem.workers[w].model,
                a,
                problem.switch_max,
                &problem.allowed_configs,
            );
            if dp.configs != assignments[w] {
                changed = true;
                averages[w] = mean_cus(&dp.configs);
                assignments[w] = dp.configs;
            }
        }
        rounds = round;
        let scalar = scalar_of_assignments(problem, &assignments)?;
        if best.as_ref().map_or(true, |(b, _)| scalar < *b) {
            best = Some((scalar, assignments.clone()));
        }
        if !changed {
            return finalize_plan(problem, assignments, true, rounds);
        }
    }
    let (_, fallback) = best.expect("at least one round ran");
    finalize_plan(problem, fallback, false, rounds)
}

// ── Exhaustive oracle ───────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, Default)]
pub struct BruteStats {
    /// Joint assignments tied (by exact scalar equality) with the optimum.
    pub optima_count: u64,
    pub joint_evaluated: u64,
}

struct WorkerSeq {
    configs: Vec<CuConfig>,
    sum_ns: Nanos,
    avg: f64,
}

fn enumerate_feasible(
    model: &ModelProfile,
    allowed: &[CuConfig],
    switch_max: u32,
) -> Vec<WorkerSeq> {
    let n = model.kernel_count();
    let mut out = Vec::new();
    let mut current: Vec<CuConfig> = Vec::with_capacity(n);
    // Depth-first in ascending config order yields sequences in lexicographic
    // order of (kernel, cu_count), which fixes tie resolution downstream.
    fn rec(
        model: &ModelProfile,
        allowed: &[CuConfig],
        switch_max: u32,
        k: usize,
        switches: u32,
        sum_ns: Nanos,
        current: &mut Vec<CuConfig>,
        out: &mut Vec<WorkerSeq>,
    ) {
        let n = model.kernel_count();
        if k == n {
            out.push(WorkerSeq {
                configs: current.clone(),
                sum_ns,
                avg: mean_cus(current),
            });
            return;
        }
        for &c in allowed {
            let sw = if k > 0 && current[k - 1] != c {
                switches + 1
            } else {
                switches
            };
            if sw > switch_max {
                continue;
            }
            current.push(c);
            rec(
                model,
                allowed,
                switch_max,
                k + 1,
                sw,
                sum_ns + model.kernels()[k].exec_ns(c),
                current,
                out,
            );
            current.pop();
        }
    }
    rec(model, allowed, switch_max, 0, 0, 0, &mut current, &mut out);
    out
}

/// Joint exhaustive minimizer of the same scalarized objective `solve`
/// targets. Ties resolve to the lexicographically smallest assignment by
/// (worker_id, kernel_id, cu_count). Refuses instances whose raw joint space
/// exceeds `max_joint_size`.
pub fn brute_force_solve(
    problem: &AllocationProblem,
    max_joint_size: u64,
) -> Result<AllocationPlan, AllocError> {
    Ok(brute_force_with_stats(problem, max_joint_size)?.0)
}

pub fn brute_force_with_stats(
    problem: &AllocationProblem,
    max_joint_size: u64,
) -> Result<(AllocationPlan, BruteStats), AllocError> {
    problem.validate()?;
    let nc = problem.allowed_configs.len() as u128;
    let mut size: u128 = 1;
    for w in &problem.workers {
        let mut per: u128 = 1;
        for _ in 0..w.model.kernel_count() {
            per = per.saturating_mul(nc);
        }
        size = size.saturating_mul(per);
    }
    if size > max_joint_size as u128 {
        return Err(AllocError::InstanceTooLarge {
            size,
            limit: max_joint_size,
        });
    }

    let seqs: Vec<Vec<WorkerSeq>> = problem
        .workers
        .iter()
        .map(|w| enumerate_feasible(&w.model, &problem.allowed_configs, problem.switch_max))
        .collect();
    for (w, s) in seqs.iter().enumerate() {
        if s.is_empty() {
            return Err(AllocError::InvalidProblem(format!(
                "worker {w} has no feasible sequence"
            )));
        }
    }

    let nw = seqs.len();
    let hw = &problem.hardware;
    let mut idx = vec![0usize; nw];
    let mut best_scalar = f64::INFINITY;
    let mut best_idx: Vec<usize> = idx.clone();
    let mut stats = BruteStats::default();
    let mut averages = vec![0.0f64; nw];
    loop {
        for w in 0..nw {
            averages[w] = seqs[w][idx[w]].avg;
        }
        let mut objectives = Vec::with_capacity(nw);
        for w in 0..nw {
            let overlap = cu_overlap(&averages, w, problem.slowdown_mode, hw)?;
            let a = alpha(overlap, hw);
            objectives.push(objective_us_from_sum(seqs[w][idx[w]].sum_ns, a));
        }
        let scalar = scalarize(problem.scalarization, &problem.weights, &objectives);
        stats.joint_evaluated += 1;
        if scalar < best_scalar {
            best_scalar = scalar;
            best_idx.copy_from_slice(&idx);
            stats.optima_count = 1;
        } else if scalar == best_scalar {
            stats.optima_count += 1;
        }
        // Odometer with worker 0 outermost keeps the visit order
        // lexicographic, so the first optimum found is the smallest.
        let mut w = nw;
        loop {
            if w == 0 {
                break;
            }
            w -= 1;
            idx[w] += 1;
            if idx[w] < seqs[w].len() {
                break;
            }
            idx[w] = 0;
            if w == 0 {
                let assignments: Vec<Vec<CuConfig>> = best_idx
                    .iter()
                    .enumerate()
                    .map(|(w, i)| seqs[w][*i].configs.clone())
                    .collect();
                let plan = finalize_plan(problem, assignments, true, 0)?;
                return Ok((plan, stats));
            }
        }
    }
}

// ── Lookup table ────────────────────────────────────────────────────────

/// Frozen per-kernel config choices, ready for kernel redirection. The hash
/// covers everything except itself, so any drift between producer and
/// consumer is detectable.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LookupTable {
    pub meta: TableMeta,
    pub workers: Vec<TableEntry>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub hash: u64,
    pub mode: String,
    pub switch_max: u32,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableEntry {
    pub worker_id: usize,
    pub configs: Vec<CuConfig>,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    bytes.iter().fold(OFFSET, |h, b| (h ^ *b as u64).wrapping_mul(PRIME))
}

impl LookupTable {
    pub fn from_assignments(
        mode: &str,
        switch_max: u32,
        assignments: &[Vec<CuConfig>],
    ) -> Self {
        let workers: Vec<TableEntry> = assignments
            .iter()
            .enumerate()
            .map(|(w, configs)| TableEntry {
                worker_id: w,
                configs: configs.clone(),
            })
            .collect();
        let mut table = LookupTable {
            meta: TableMeta {
                hash: 0,
                mode: mode.to_string(),
                switch_max,
            },
            workers,
        };
        table.meta.hash = fnv1a64(table.canonical_json().as_bytes());
        table
    }

    /// Serialization with the hash field zeroed; the hash input.
    fn canonical_json(&self) -> String {
        let mut shadow = self.clone();
        shadow.meta.hash = 0;
        serde_json::to_string(&shadow).expect("table serializes")
    }

    pub fn config_for(&self, worker: usize, kernel: usize) -> Option<CuConfig> {
        self.workers
            .iter()
            .find(|e| e.worker_id == worker)
            .and_then(|e| e.configs.get(kernel))
            .copied()
    }

    pub fn worker_count(&self) -> usize {
        self.workers.len()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("table serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, AllocError> {
        let table: LookupTable =
            serde_json::from_str(text).map_err(|e| AllocError::Table(e.to_string()))?;
        let expect = fnv1a64(table.canonical_json().as_bytes());
        if expect != table.meta.hash {
            return Err(AllocError::Table(format!(
                "hash mismatch: stored {}, computed {expect}",
                table.meta.hash
            )));
        }
        for (i, e) in table.workers.iter().enumerate() {
            if e.worker_id != i {
                return Err(AllocError::Table(format!(
                    "worker ids must be sequential from 0 (found {} at position {i})",
                    e.worker_id
                )));
            }
            if e.configs.is_empty() {
                return Err(AllocError::Table(format!("worker {i} has no configs")));
            }
        }
        Ok(table)
    }
}

/// Freeze a plan into the redirection table consumed by the simulator.
pub fn emit_lookup_table(plan: &AllocationPlan) -> LookupTable {
    LookupTable::from_assignments(
        plan.slowdown_mode.as_str(),
        plan.switch_max,
        &plan.assignments,
    )
}
