//! CU masks, the pre-allocated stream pool, completion tracking, and
//! scheduling overheads.
//!
//! Masks always cover whole shader engines. The pool holds at most seven
//! masked streams plus the shared all-CU default stream, one SE layout per
//! supported worker count, chosen so that concurrent workers overlap on as
//! few engines as the config sizes allow.

use serde::Serialize;
use thiserror::Error;

use crate::allocator::LookupTable;
use crate::profiles::{CuConfig, HardwareSpec};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("worker count {0} outside the supported range 1..=3")]
    WorkerCount(usize),
    #[error("stream layouts require 4 shader engines, got {0}")]
    UnsupportedHardware(u32),
    #[error("kernel (worker {worker}, kernel {kernel}) is not covered by the lookup table")]
    NotInTable { worker: usize, kernel: usize },
    #[error("worker {worker} has no pre-allocated stream with {cu_count} CUs")]
    NoMatchingStream { worker: usize, cu_count: u32 },
    #[error("invalid overhead model: {0}")]
    InvalidOverhead(String),
    #[error("scenario mismatch: {0}")]
    Mismatch(String),
}

/// Bitset over the machine's CUs (at most 64).
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct CuMask(u64);

impl CuMask {
    pub fn empty() -> Self {
        CuMask(0)
    }

    pub fn all(hardware: &HardwareSpec) -> Self {
        debug_assert!(hardware.total_cus <= 64);
        CuMask(if hardware.total_cus == 64 {
            u64::MAX
        } else {
            (1u64 << hardware.total_cus) - 1
        })
    }

    /// Mask covering the given shader engines (0-based) in full.
    pub fn from_ses(ses: &[u32], hardware: &HardwareSpec) -> Self {
        let per = hardware.cus_per_se;
        let mut bits = 0u64;
        for &se in ses {
            debug_assert!(se < hardware.se_count);
            let lo = se * per;
            bits |= ((1u64 << per) - 1) << lo;
        }
        CuMask(bits)
    }

    pub fn cu_count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn intersection_cus(self, other: CuMask) -> u32 {
        (self.0 & other.0).count_ones()
    }

    pub fn union(self, other: CuMask) -> CuMask {
        CuMask(self.0 | other.0)
    }

    /// Shader engines fully covered by this mask.
    pub fn ses(self, hardware: &HardwareSpec) -> Vec<u32> {
        let per = hardware.cus_per_se;
        (0..hardware.se_count)
            .filter(|se| {
                let lo = se * per;
                let engine = ((1u64 << per) - 1) << lo;
                self.0 & engine == engine
            })
            .collect()
    }
}

impl std::fmt::Debug for CuMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "CuMask({:#018x}, {} CUs)", self.0, self.cu_count())
    }
}

pub type StreamId = usize;

/// The shared default stream is always stream 0.
pub const DEFAULT_STREAM: StreamId = 0;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Stream {
    pub id: StreamId,
    /// None marks the shared default stream.
    pub owner: Option<usize>,
    pub mask: CuMask,
}

/// Pre-allocated CU-masked streams plus the shared default stream. Each
/// stream is backed by one software queue, so the pool size bounds HSA queue
/// pressure.
#[derive(Clone, Debug)]
pub struct StreamPool {
    streams: Vec<Stream>,
    hardware: HardwareSpec,
    worker_count: usize,
}

/// SE indices backing each (worker, config) mask, per worker count. Chosen so
/// concurrently placed workers share as few engines as the sizes force:
/// distinct 15-CU anchors, 30-CU masks overlapping on at most one engine, and
/// 45-CU pairs overlapping on exactly two.
fn layout(worker_count: usize, config: CuConfig, worker: usize) -> Option<&'static [u32]> {
    let se_span = config.cu_count() / 15;
    match (worker_count, worker, se_span) {
        (1, 0, 1) => Some(&[0]),
        (1, 0, 2) => Some(&[0, 1]),
        (1, 0, 3) => Some(&[0, 1, 2]),

        (2, 0, 1) => Some(&[0]),
        (2, 0, 2) => Some(&[0, 2]),
        (2, 0, 3) => Some(&[0, 1, 2]),
        (2, 1, 1) => Some(&[3]),
        (2, 1, 2) => Some(&[1, 3]),
        (2, 1, 3) => Some(&[1, 2, 3]),

        // With three workers only 30 and 45 CU masks are pre-allocated
        // (6 masked streams + default); 15-CU entries below serve only the
        // re-masking path.
        (3, 0, 1) => Some(&[0]),
        (3, 0, 2) => Some(&[0, 2]),
        (3, 0, 3) => Some(&[0, 1, 2]),
        (3, 1, 1) => Some(&[3]),
        (3, 1, 2) => Some(&[1, 3]),
        (3, 1, 3) => Some(&[1, 2, 3]),
        (3, 2, 1) => Some(&[1]),
        (3, 2, 2) => Some(&[1, 2]),
        (3, 2, 3) => Some(&[0, 1, 3]),

        _ => None,
    }
}

/// Configs a worker can run on pre-allocated streams at this worker count.
/// Three workers exhaust the seven-stream budget before 15-CU entries fit.
pub fn pooled_configs(worker_count: usize, hardware: &HardwareSpec) -> Result<Vec<CuConfig>, SimError> {
    let all = hardware.configs();
    match worker_count {
        1 | 2 => Ok(all),
        3 => Ok(all.into_iter().filter(|c| c.se_span(hardware) >= 2).collect()),
        n => Err(SimError::WorkerCount(n)),
    }
}

/// Mask used when a worker runs at `config`, whether on a pooled stream or a
/// re-masked queue. The full-machine config always maps to every CU.
pub fn mask_for(
    worker: usize,
    config: CuConfig,
    worker_count: usize,
    hardware: &HardwareSpec,
) -> Result<CuMask, SimError> {
    if worker_count == 0 || worker_count > 3 {
        return Err(SimError::WorkerCount(worker_count));
    }
    if hardware.se_count != 4 {
        return Err(SimError::UnsupportedHardware(hardware.se_count));
    }
    if worker >= worker_count {
        return Err(SimError::Mismatch(format!(
            "worker {worker} outside worker count {worker_count}"
        )));
    }
    if config == hardware.max_config() {
        return Ok(CuMask::all(hardware));
    }
    let ses = layout(worker_count, config, worker).ok_or(SimError::NoMatchingStream {
        worker,
        cu_count: config.cu_count(),
    })?;
    Ok(CuMask::from_ses(ses, hardware))
}

/// Build the pool for `worker_count` co-located workers: one masked stream
/// per (worker, pooled sub-machine config) plus the shared default stream.
pub fn build_stream_pool(
    worker_count: usize,
    hardware: &HardwareSpec,
) -> Result<StreamPool, SimError> {
    if worker_count == 0 || worker_count > 3 {
        return Err(SimError::WorkerCount(worker_count));
    }
    if hardware.se_count != 4 {
        return Err(SimError::UnsupportedHardware(hardware.se_count));
    }
    let mut streams = vec![Stream {
        id: DEFAULT_STREAM,
        owner: None,
        mask: CuMask::all(hardware),
    }];
    let pooled = pooled_configs(worker_count, hardware)?;
    for worker in 0..worker_count {
        for &config in &pooled {
            if config == hardware.max_config() {
                continue; // served by the shared default stream
            }
            let mask = mask_for(worker, config, worker_count, hardware)?;
            streams.push(Stream {
                id: streams.len(),
                owner: Some(worker),
                mask,
            });
        }
    }
    debug_assert!(streams.len() - 1 <= 7, "masked streams exceed the pool budget");
    Ok(StreamPool {
        streams,
        hardware: hardware.clone(),
        worker_count,
    })
}

impl StreamPool {
    pub fn streams(&self) -> &[Stream] {
        &self.streams
    }

    pub fn worker_count(&self) -> usize {
        self.worker_count
    }

    pub fn hardware(&self) -> &HardwareSpec {
        &self.hardware
    }

    /// Total software queues the pool occupies (masked streams + default).
    pub fn queue_count(&self) -> u32 {
        self.streams.len() as u32
    }

    pub fn mask_of(&self, id: StreamId) -> CuMask {
        self.streams[id].mask
    }

    /// Stream serving `worker` at `config`. The full-machine config lands on
    /// the shared default stream.
    pub fn stream_for(&self, worker: usize, config: CuConfig) -> Result<StreamId, SimError> {
        if worker >= self.worker_count {
            return Err(SimError::Mismatch(format!(
                "worker {worker} outside worker count {}",
                self.worker_count
            )));
        }
        if config == self.hardware.max_config() {
            return Ok(DEFAULT_STREAM);
        }
        self.streams
            .iter()
            .find(|s| s.owner == Some(worker) && s.mask.cu_count() == config.cu_count())
            .map(|s| s.id)
            .ok_or(SimError::NoMatchingStream {
                worker,
                cu_count: config.cu_count(),
            })
    }
}

/// Map a kernel to its pre-allocated stream via the frozen lookup table.
pub fn redirect_kernel(
    worker: usize,
    kernel: usize,
    table: &LookupTable,
    pool: &StreamPool,
) -> Result<StreamId, SimError> {
    let config = table
        .config_for(worker, kernel)
        .ok_or(SimError::NotInTable { worker, kernel })?;
    pool.stream_for(worker, config)
}

// ── Completion ledger ───────────────────────────────────────────────────

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalState {
    Pending,
    Complete,
}

#[derive(Clone, Debug)]
pub struct LedgerEntry {
    pub request: u32,
    pub kernel: usize,
    pub stream: StreamId,
    pub state: SignalState,
}

/// Per-worker dispatch log with one completion signal per kernel. Signals
/// complete exactly once, in dispatch order.
#[derive(Clone, Debug, Default)]
pub struct CompletionLedger {
    per_worker: Vec<Vec<LedgerEntry>>,
}

impl CompletionLedger {
    pub fn new(worker_count: usize) -> Self {
        CompletionLedger {
            per_worker: vec![Vec::new(); worker_count],
        }
    }

    pub fn record_dispatch(&mut self, worker: usize, request: u32, kernel: usize, stream: StreamId) {
        self.per_worker[worker].push(LedgerEntry {
            request,
            kernel,
            stream,
            state: SignalState::Pending,
        });
    }

    pub fn mark_complete(&mut self, worker: usize, request: u32, kernel: usize) {
        let entries = &mut self.per_worker[worker];
        let idx = entries
            .iter()
            .position(|e| e.request == request && e.kernel == kernel)
            .expect("completing a kernel that was never dispatched");
        assert_eq!(
            entries[idx].state,
            SignalState::Pending,
            "signal completed twice"
        );
        assert!(
            entries[..idx].iter().all(|e| e.state == SignalState::Complete),
            "completions must follow dispatch order"
        );
        entries[idx].state = SignalState::Complete;
    }

    /// Would dispatching the next kernel of `worker` onto `target_stream`
    /// require a barrier packet? True exactly when the most recently
    /// dispatched kernel sits on a different stream and is still pending; a
    /// completed predecessor or a same-stream predecessor orders for free.
    pub fn needs_barrier(&self, worker: usize, target_stream: StreamId) -> bool {
        match self.per_worker[worker].last() {
            None => false,
            Some(prev) => prev.stream != target_stream && prev.state == SignalState::Pending,
        }
    }

    pub fn entries(&self, worker: usize) -> &[LedgerEntry] {
        &self.per_worker[worker]
    }
}

// ── Overheads ───────────────────────────────────────────────────────────

/// Costs of repartitioning and of exceeding the hardware queue budget.
#[derive(Clone, Debug, Serialize)]
pub struct OverheadModel {
    /// Triangular distribution bounds for one in-place queue re-mask, us.
    pub ioctl_min_us: f64,
    pub ioctl_mode_us: f64,
    pub ioctl_max_us: f64,
    /// Fixed cost of one cross-stream barrier packet, us.
    pub barrier_cost_us: f64,
    /// Relative slowdown per software queue beyond the hardware budget.
    pub oversub_penalty_per_queue: f64,
}

impl Default for OverheadModel {
    fn default() -> Self {
        OverheadModel {
            ioctl_min_us: 10.0,
            ioctl_mode_us: 30.0,
            ioctl_max_us: 55.4,
            // Cheaper than the mean re-mask ioctl: the saving that makes
            // pre-allocated stream pools worthwhile.
            barrier_cost_us: 25.0,
            oversub_penalty_per_queue: 0.12,
        }
    }
}

impl OverheadModel {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.ioctl_min_us >= 0.0
            && self.ioctl_mode_us >= self.ioctl_min_us
            && self.ioctl_max_us >= self.ioctl_mode_us)
        {
            return Err(SimError::InvalidOverhead(format!(
                "ioctl triangle ({}, {}, {}) must be ordered and non-negative",
                self.ioctl_min_us, self.ioctl_mode_us, self.ioctl_max_us
            )));
        }
        if !(self.barrier_cost_us >= 0.0) {
            return Err(SimError::InvalidOverhead("barrier cost must be non-negative".into()));
        }
        if !(self.oversub_penalty_per_queue >= 0.0) {
            return Err(SimError::InvalidOverhead(
                "oversubscription penalty must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform slowdown applied to every running kernel when software queues
/// exceed the hardware queue budget.
pub fn oversub_factor(total_queues: u32, hardware: &HardwareSpec, model: &OverheadModel) -> f64 {
    if total_queues <= hardware.hw_queue_count {
        1.0
    } else {
        1.0 + model.oversub_penalty_per_queue * (total_queues - hardware.hw_queue_count) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::LookupTable;

    fn hw() -> HardwareSpec {
        HardwareSpec::default()
    }

    fn cu(n: u32) -> CuConfig {
        CuConfig::new(n, &hw()).unwrap()
    }

    #[test]
    fn masks_cover_whole_engines() {
        let m = CuMask::from_ses(&[0, 2], &hw());
        assert_eq!(m.cu_count(), 30);
        assert_eq!(m.ses(&hw()), vec![0, 2]);
        assert_eq!(CuMask::all(&hw()).cu_count(), 60);
        assert_eq!(
            CuMask::from_ses(&[0], &hw()).intersection_cus(CuMask::from_ses(&[0, 1], &hw())),
            15
        );
        assert_eq!(
            CuMask::from_ses(&[0], &hw()).intersection_cus(CuMask::from_ses(&[3], &hw())),
            0
        );
    }

    #[test]
    fn two_worker_pool_layout() {
        let pool = build_stream_pool(2, &hw()).unwrap();
        // 3 masked streams per worker + 1 shared default.
        assert_eq!(pool.queue_count(), 7);
        assert_eq!(pool.streams()[DEFAULT_STREAM].owner, None);
        assert_eq!(pool.streams()[DEFAULT_STREAM].mask.cu_count(), 60);

        let expect = [
            (0, 15, vec![0]),
            (0, 30, vec![0, 2]),
            (0, 45, vec![0, 1, 2]),
            (1, 15, vec![3]),
            (1, 30, vec![1, 3]),
            (1, 45, vec![1, 2, 3]),
        ];
        for (worker, cus, ses) in expect {
            let id = pool.stream_for(worker, cu(cus)).unwrap();
            assert_ne!(id, DEFAULT_STREAM);
            assert_eq!(pool.mask_of(id).ses(&hw()), ses, "worker {worker} {cus} CUs");
        }
        assert_eq!(pool.stream_for(0, cu(60)).unwrap(), DEFAULT_STREAM);
        assert_eq!(pool.stream_for(1, cu(60)).unwrap(), DEFAULT_STREAM);

        // 15-CU anchors are disjoint; 30-CU masks overlap on at most one
        // engine; the 45-CU pair shares exactly two.
        let m15 = |w| pool.mask_of(pool.stream_for(w, cu(15)).unwrap());
        let m30 = |w| pool.mask_of(pool.stream_for(w, cu(30)).unwrap());
        let m45 = |w| pool.mask_of(pool.stream_for(w, cu(45)).unwrap());
        assert_eq!(m15(0).intersection_cus(m15(1)), 0);
        assert_eq!(m30(0).intersection_cus(m30(1)), 0);
        assert_eq!(m45(0).intersection_cus(m45(1)), 30);
    }

    #[test]
    fn three_worker_pool_restricts_configs() {
        let pool = build_stream_pool(3, &hw()).unwrap();
        // 2 masked streams per worker + default: 7 queues, within the
        // 7-masked-stream budget.
        assert_eq!(pool.queue_count(), 7);
        assert_eq!(
            pooled_configs(3, &hw()).unwrap(),
            vec![cu(30), cu(45), cu(60)]
        );
        for w in 0..3 {
            assert!(pool.stream_for(w, cu(15)).is_err());
            assert!(pool.stream_for(w, cu(30)).is_ok());
            assert!(pool.stream_for(w, cu(45)).is_ok());
            assert_eq!(pool.stream_for(w, cu(60)).unwrap(), DEFAULT_STREAM);
        }
        // Every 45-CU pair overlaps on exactly two engines (the minimum:
        // two 3-engine subsets of four engines share at least two).
        for a in 0..3 {
            for b in (a + 1)..3 {
                let ma = pool.mask_of(pool.stream_for(a, cu(45)).unwrap());
                let mb = pool.mask_of(pool.stream_for(b, cu(45)).unwrap());
                assert_eq!(ma.intersection_cus(mb), 30, "workers {a},{b}");
            }
        }
        // 30-CU masks: three 2-engine subsets cannot be pairwise disjoint;
        // this layout keeps total pairwise overlap at the minimum of two
        // engine slots.
        let mut overlap_ses = 0;
        for a in 0..3 {
            for b in (a + 1)..3 {
                let ma = pool.mask_of(pool.stream_for(a, cu(30)).unwrap());
                let mb = pool.mask_of(pool.stream_for(b, cu(30)).unwrap());
                overlap_ses += ma.intersection_cus(mb) / 15;
            }
        }
        assert_eq!(overlap_ses, 2);
    }

    #[test]
    fn pool_rejects_unsupported_shapes() {
        assert!(matches!(build_stream_pool(0, &hw()), Err(SimError::WorkerCount(0))));
        assert!(matches!(build_stream_pool(4, &hw()), Err(SimError::WorkerCount(4))));
        let odd = HardwareSpec {
            total_cus: 30,
            se_count: 2,
            cus_per_se: 15,
            hw_queue_count: 8,
        };
        assert!(matches!(
            build_stream_pool(1, &odd),
            Err(SimError::UnsupportedHardware(2))
        ));
    }

    #[test]
    fn redirect_follows_table() {
        let pool = build_stream_pool(2, &hw()).unwrap();
        let table = LookupTable::from_assignments(
            "exclude-self",
            14,
            &[vec![cu(30), cu(60)], vec![cu(45)]],
        );
        let s0 = redirect_kernel(0, 0, &table, &pool).unwrap();
        assert_eq!(pool.mask_of(s0).ses(&hw()), vec![0, 2]);
        assert_eq!(redirect_kernel(0, 1, &table, &pool).unwrap(), DEFAULT_STREAM);
        let s1 = redirect_kernel(1, 0, &table, &pool).unwrap();
        assert_eq!(pool.mask_of(s1).ses(&hw()), vec![1, 2, 3]);
        assert!(matches!(
            redirect_kernel(0, 7, &table, &pool),
            Err(SimError::NotInTable { worker: 0, kernel: 7 })
        ));
        assert!(matches!(
            redirect_kernel(2, 0, &table, &pool),
            Err(SimError::NotInTable { worker: 2, kernel: 0 })
        ));
    }

    #[test]
    fn barrier_rules() {
        let mut ledger = CompletionLedger::new(1);
        // First kernel of the first request: nothing precedes it.
        assert!(!ledger.needs_barrier(0, 3));
        ledger.record_dispatch(0, 0, 0, 3);
        // Next kernel on the same stream: in-order for free.
        assert!(!ledger.needs_barrier(0, 3));
        // Next kernel hopping streams while the predecessor is pending.
        assert!(ledger.needs_barrier(0, 5));
        ledger.mark_complete(0, 0, 0);
        // Predecessor completed: no barrier even across streams.
        assert!(!ledger.needs_barrier(0, 5));
    }

    #[test]
    #[should_panic(expected = "signal completed twice")]
    fn ledger_rejects_double_completion() {
        let mut ledger = CompletionLedger::new(1);
        ledger.record_dispatch(0, 0, 0, 1);
        ledger.mark_complete(0, 0, 0);
        ledger.mark_complete(0, 0, 0);
    }

    #[test]
    #[should_panic(expected = "dispatch order")]
    fn ledger_rejects_out_of_order_completion() {
        let mut ledger = CompletionLedger::new(1);
        ledger.record_dispatch(0, 0, 0, 1);
        ledger.record_dispatch(0, 0, 1, 2);
        ledger.mark_complete(0, 0, 1);
    }

    #[test]
    fn oversub_factor_kicks_in_past_hw_queues() {
        let m = OverheadModel::default();
        assert_eq!(oversub_factor(7, &hw(), &m), 1.0);
        assert_eq!(oversub_factor(8, &hw(), &m), 1.0);
        let f10 = oversub_factor(10, &hw(), &m);
        assert_eq!(f10, 1.0 + 0.12 * 2.0);
        assert!((f10 - 1.24).abs() < 1e-12);
        let mut prev = oversub_factor(8, &hw(), &m);
        for q in 9..=15 {
            let f = oversub_factor(q, &hw(), &m);
            assert!(f > prev, "factor must strictly increase past the budget");
            prev = f;
        }
    }

    #[test]
    fn overhead_model_validates() {
        assert!(OverheadModel::default().validate().is_ok());
        let bad = OverheadModel {
            ioctl_mode_us: 5.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = OverheadModel {
            barrier_cost_us: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn remask_masks_exist_for_all_configs() {
        // The re-masking path needs a mask even for configs the pool omits.
        for wc in 1..=3usize {
            for w in 0..wc {
                for c in hw().configs() {
                    let m = mask_for(w, c, wc, &hw()).unwrap();
                    assert_eq!(m.cu_count(), c.cu_count());
                }
            }
        }
        // Distinct 15-CU anchors under every worker count.
        for wc in 2..=3usize {
            for a in 0..wc {
                for b in (a + 1)..wc {
                    let ma = mask_for(a, cu(15), wc, &hw()).unwrap();
                    let mb = mask_for(b, cu(15), wc, &hw()).unwrap();
                    assert_eq!(ma.intersection_cus(mb), 0, "{wc} workers: {a} vs {b}");
                }
            }
        }
    }
}
