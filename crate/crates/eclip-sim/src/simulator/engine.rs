//! Discrete-event execution of co-located workers.
//!
//! Each worker serves its requests in arrival order, one request at a time.
//! A request's kernels dispatch as a batch onto their assigned streams when
//! service starts; kernels still run sequentially per worker, ordered either
//! by stream FIFO order or by a barrier packet when consecutive kernels hop
//! streams. Concurrent kernels of different workers slow each other down in
//! proportion to their instantaneous CU-mask overlap, piecewise-constant
//! between events. Queue re-masking stalls the worker for a sampled ioctl
//! latency whenever the next kernel needs a different mask.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Triangular};
use serde::Serialize;

use crate::allocator::{switch_count, LookupTable};
use crate::profiles::{CuConfig, HardwareSpec, WorkerSpec};
use crate::simulator::pool::{
    oversub_factor, CompletionLedger, CuMask, OverheadModel, SimError, StreamId, StreamPool,
};

/// How a worker lands kernels on differently sized CU sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Repartition {
    /// Hop between pre-allocated CU-masked streams; cross-stream order is
    /// enforced by barrier packets.
    StreamHop,
    /// Re-mask the worker's own queue in place; every mask change costs one
    /// ioctl round trip.
    QueueRemask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ArrivalProcess {
    /// Evenly spaced at the worker's request rate.
    Deterministic,
    /// Poisson at the worker's request rate.
    Poisson,
}

pub struct SimSetup<'a> {
    pub workers: &'a [WorkerSpec],
    pub table: &'a LookupTable,
    pub pool: &'a StreamPool,
    pub overhead: &'a OverheadModel,
    pub mechanism: Repartition,
    pub arrival: ArrivalProcess,
    pub seed: u64,
    /// Overrides the masked-stream count backing the oversubscription factor
    /// (total queues = masked + 1). For queue-pressure studies.
    pub forced_masked_streams: Option<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EventType {
    Arrival,
    Dispatch,
    BarrierEnqueue,
    BarrierRelease,
    IoctlStart,
    IoctlEnd,
    KernelStart,
    KernelComplete,
}

/// One timeline record. `stream` is a pool stream id under stream hopping
/// and the worker's own queue index under re-masking.
#[derive(Clone, Debug, Serialize)]
pub struct SimEvent {
    pub t_us: f64,
    #[serde(rename = "type")]
    pub kind: EventType,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub worker: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub request: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stream: Option<StreamId>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Maximal span of constant busy-CU count.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BusyInterval {
    pub t0_us: f64,
    pub t1_us: f64,
    pub busy_cus: u32,
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct RequestRecord {
    pub worker: usize,
    pub request: u32,
    pub arrival_us: f64,
    pub start_us: f64,
    pub complete_us: f64,
    /// CU repartitionings this request paid for: stream hops or ioctls.
    pub switches: u32,
}

impl RequestRecord {
    pub fn latency_us(&self) -> f64 {
        self.complete_us - self.arrival_us
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SimTimeline {
    pub hardware: HardwareSpec,
    pub worker_count: usize,
    pub seed: u64,
    /// Software queues charged against the hardware queue budget.
    pub queue_count: u32,
    pub oversub: f64,
    /// First request arrival; the measurement window opens here.
    pub start_us: f64,
    /// Last request completion; the measurement window closes here.
    pub makespan_us: f64,
    pub events: Vec<SimEvent>,
    pub busy: Vec<BusyInterval>,
    pub requests: Vec<RequestRecord>,
}

impl SimTimeline {
    pub fn span_us(&self) -> f64 {
        self.makespan_us - self.start_us
    }

    pub fn latencies_of(&self, worker: usize) -> Vec<f64> {
        self.requests
            .iter()
            .filter(|r| r.worker == worker)
            .map(|r| r.latency_us())
            .collect()
    }
}

// ── Event heap ──────────────────────────────────────────────────────────

#[derive(Debug)]
enum Action {
    Arrival { worker: usize, request: u32 },
    KernelDone { worker: usize, gen: u64 },
    BarrierDone { worker: usize },
    IoctlDone { worker: usize },
}

#[derive(Debug)]
struct HeapEntry {
    t: f64,
    seq: u64,
    action: Action,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.t.total_cmp(&other.t).is_eq() && self.seq == other.seq
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.t.total_cmp(&other.t).then(self.seq.cmp(&other.seq))
    }
}

// ── Engine ──────────────────────────────────────────────────────────────

struct Active {
    request: u32,
    arrival_us: f64,
    started_us: f64,
    kidx: usize,
    configs: Vec<CuConfig>,
    streams: Vec<StreamId>,
    barrier: Vec<bool>,
    switches: u32,
}

struct Running {
    kernel: usize,
    mask: CuMask,
    remaining_us: f64,
    last_update: f64,
    dilation: f64,
}

struct WorkerRt {
    arrivals: Vec<f64>,
    pending: VecDeque<u32>,
    active: Option<Active>,
    run: Option<Running>,
    /// Queue's current mask config under re-masking; persists across
    /// requests.
    current_mask: Option<CuConfig>,
    gen: u64,
}

struct Engine<'a> {
    setup: &'a SimSetup<'a>,
    hardware: HardwareSpec,
    masks: Vec<Vec<CuMask>>,
    streams: Vec<Vec<StreamId>>,
    configs: Vec<Vec<CuConfig>>,
    oversub: f64,
    rng: ChaCha8Rng,
    heap: BinaryHeap<Reverse<HeapEntry>>,
    seq: u64,
    rt: Vec<WorkerRt>,
    ledger: CompletionLedger,
    events: Vec<SimEvent>,
    busy: Vec<BusyInterval>,
    seg_start: f64,
    seg_busy: u32,
    requests: Vec<RequestRecord>,
    last_completion: f64,
}

/// Run the scenario to completion of every request. Deterministic in the
/// setup, including the seed.
pub fn run(setup: &SimSetup) -> Result<SimTimeline, SimError> {
    setup.overhead.validate()?;
    let pool = setup.pool;
    let hardware = pool.hardware().clone();
    let nw = setup.workers.len();
    if nw == 0 || nw != pool.worker_count() {
        return Err(SimError::Mismatch(format!(
            "{} workers for a pool built for {}",
            nw,
            pool.worker_count()
        )));
    }
    for (i, w) in setup.workers.iter().enumerate() {
        if w.worker_id != i {
            return Err(SimError::Mismatch(format!(
                "worker ids must be sequential from 0 (found {} at position {i})",
                w.worker_id
            )));
        }
        w.validate()
            .map_err(|e| SimError::Mismatch(e.to_string()))?;
    }

    // Resolve every kernel's config, mask, and stream up front so coverage
    // holes fail before any simulated time passes.
    let mut configs = Vec::with_capacity(nw);
    let mut masks = Vec::with_capacity(nw);
    let mut streams = Vec::with_capacity(nw);
    for (w, spec) in setup.workers.iter().enumerate() {
        let n = spec.model.kernel_count();
        let mut wc = Vec::with_capacity(n);
        let mut wm = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for k in 0..n {
            let config = setup
                .table
                .config_for(w, k)
                .ok_or(SimError::NotInTable { worker: w, kernel: k })?;
            match setup.mechanism {
                Repartition::StreamHop => {
                    let sid = pool.stream_for(w, config)?;
                    wm.push(pool.mask_of(sid));
                    ws.push(sid);
                }
                Repartition::QueueRemask => {
                    wm.push(crate::simulator::pool::mask_for(w, config, nw, &hardware)?);
                    ws.push(w); // the worker's own queue
                }
            }
            wc.push(config);
        }
        configs.push(wc);
        masks.push(wm);
        streams.push(ws);
    }

    let queue_count = match setup.forced_masked_streams {
        Some(masked) => masked + 1,
        None => match setup.mechanism {
            Repartition::StreamHop => pool.queue_count(),
            Repartition::QueueRemask => nw as u32 + 1,
        },
    };
    let oversub = oversub_factor(queue_count, &hardware, setup.overhead);

    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut rt = Vec::with_capacity(nw);
    for spec in setup.workers {
        let period_us = 1e6 / spec.arrival_rps;
        let arrivals: Vec<f64> = match setup.arrival {
            ArrivalProcess::Deterministic => (0..spec.request_count)
                .map(|i| i as f64 * period_us)
                .collect(),
            ArrivalProcess::Poisson => {
                let exp = Exp::new(spec.arrival_rps).expect("positive rate");
                let mut t = 0.0;
                (0..spec.request_count)
                    .map(|_| {
                        t += exp.sample(&mut rng) * 1e6;
                        t
                    })
                    .collect()
            }
        };
        rt.push(WorkerRt {
            arrivals,
            pending: VecDeque::new(),
            active: None,
            run: None,
            current_mask: None,
            gen: 0,
        });
    }
    let start_us = rt
        .iter()
        .map(|w| w.arrivals[0])
        .fold(f64::INFINITY, f64::min);

    let mut engine = Engine {
        setup,
        hardware,
        masks,
        streams,
        configs,
        oversub,
        rng,
        heap: BinaryHeap::new(),
        seq: 0,
        rt,
        ledger: CompletionLedger::new(nw),
        events: Vec::new(),
        busy: Vec::new(),
        seg_start: start_us,
        seg_busy: 0,
        requests: Vec::new(),
        last_completion: start_us,
    };
    for w in 0..nw {
        for r in 0..setup.workers[w].request_count {
            let t = engine.rt[w].arrivals[r as usize];
            engine.push(t, Action::Arrival { worker: w, request: r });
        }
    }
    engine.run_loop();

    // Coalesce adjacent spans with equal occupancy into maximal intervals.
    let mut busy: Vec<BusyInterval> = Vec::with_capacity(engine.busy.len());
    for seg in engine.busy.drain(..) {
        match busy.last_mut() {
            Some(prev) if prev.busy_cus == seg.busy_cus && prev.t1_us == seg.t0_us => {
                prev.t1_us = seg.t1_us;
            }
            _ => busy.push(seg),
        }
    }
    engine.busy = busy;

    let mut timeline = SimTimeline {
        hardware: engine.hardware,
        worker_count: nw,
        seed: setup.seed,
        queue_count,
        oversub,
        start_us,
        makespan_us: engine.last_completion,
        events: engine.events,
        busy: engine.busy,
        requests: engine.requests,
    };
    timeline.requests.sort_by_key(|r| (r.worker, r.request));
    Ok(timeline)
}

impl<'a> Engine<'a> {
    fn push(&mut self, t: f64, action: Action) {
        self.seq += 1;
        self.heap.push(Reverse(HeapEntry {
            t,
            seq: self.seq,
            action,
        }));
    }

    fn record(
        &mut self,
        t: f64,
        kind: EventType,
        worker: usize,
        request: u32,
        kernel: Option<usize>,
        stream: Option<StreamId>,
        detail: Option<String>,
    ) {
        self.events.push(SimEvent {
            t_us: t,
            kind,
            worker: Some(worker),
            request: Some(request),
            kernel,
            stream,
            detail,
        });
    }

    fn run_loop(&mut self) {
        while let Some(Reverse(entry)) = self.heap.pop() {
            let t = entry.t;
            self.advance_time(t);
            match entry.action {
                Action::Arrival { worker, request } => {
                    self.record(t, EventType::Arrival, worker, request, None, None, None);
                    self.rt[worker].pending.push_back(request);
                    if self.rt[worker].active.is_none() {
                        self.start_request(worker, t);
                    }
                }
                Action::KernelDone { worker, gen } => {
                    if gen == self.rt[worker].gen {
                        self.complete_kernel(worker, t);
                    }
                }
                Action::BarrierDone { worker } => {
                    let a = self.rt[worker].active.as_ref().expect("barrier without request");
                    let (req, k, stream) = (a.request, a.kidx, a.streams[a.kidx]);
                    self.record(
                        t,
                        EventType::BarrierRelease,
                        worker,
                        req,
                        Some(k),
                        Some(stream),
                        None,
                    );
                    self.begin_kernel(worker, t);
                }
                Action::IoctlDone { worker } => {
                    let a = self.rt[worker].active.as_ref().expect("ioctl without request");
                    let (req, k) = (a.request, a.kidx);
                    let cfg = a.configs[k];
                    self.rt[worker].current_mask = Some(cfg);
                    self.record(
                        t,
                        EventType::IoctlEnd,
                        worker,
                        req,
                        Some(k),
                        Some(worker),
                        Some(format!("mask={}", cfg.cu_count())),
                    );
                    self.begin_kernel(worker, t);
                }
            }
        }
    }

    fn advance_time(&mut self, t: f64) {
        for rt in &mut self.rt {
            if let Some(run) = rt.run.as_mut() {
                let dt = t - run.last_update;
                if dt > 0.0 {
                    run.remaining_us -= dt / run.dilation;
                    run.last_update = t;
                }
            }
        }
    }

    fn start_request(&mut self, worker: usize, t: f64) {
        let request = match self.rt[worker].pending.pop_front() {
            Some(r) => r,
            None => return,
        };
        let n = self.setup.workers[worker].model.kernel_count();
        let configs = self.configs[worker].clone();
        let streams = self.streams[worker].clone();
        let mut barrier = vec![false; n];
        for k in 0..n {
            let needs = self.ledger.needs_barrier(worker, streams[k]);
            debug_assert!(
                k > 0 || !needs,
                "a request's first kernel never waits on a barrier"
            );
            barrier[k] = needs;
            self.ledger.record_dispatch(worker, request, k, streams[k]);
            self.record(
                t,
                EventType::Dispatch,
                worker,
                request,
                Some(k),
                Some(streams[k]),
                None,
            );
            if needs {
                self.record(
                    t,
                    EventType::BarrierEnqueue,
                    worker,
                    request,
                    Some(k),
                    Some(streams[k]),
                    None,
                );
            }
        }
        if self.setup.mechanism == Repartition::StreamHop {
            debug_assert_eq!(
                barrier.iter().filter(|b| **b).count() as u32,
                switch_count(&configs).expect("non-empty request"),
                "barriers must track stream hops exactly"
            );
        }
        let arrival_us = self.rt[worker].arrivals[request as usize];
        self.rt[worker].active = Some(Active {
            request,
            arrival_us,
            started_us: t,
            kidx: 0,
            configs,
            streams,
            barrier,
            switches: 0,
        });
        self.step_kernel(worker, t);
    }

    /// Route the active request's current kernel through whatever overhead
    /// precedes it, then start it.
    fn step_kernel(&mut self, worker: usize, t: f64) {
        let a = self.rt[worker].active.as_ref().expect("no active request");
        let (req, k) = (a.request, a.kidx);
        let cfg = a.configs[k];
        match self.setup.mechanism {
            Repartition::QueueRemask => {
                if self.rt[worker].current_mask != Some(cfg) {
                    let from = self.rt[worker]
                        .current_mask
                        .map(|c| c.cu_count().to_string())
                        .unwrap_or_else(|| "none".into());
                    let cost = self.sample_ioctl_us();
                    let a = self.rt[worker].active.as_mut().unwrap();
                    a.switches += 1;
                    self.record(
                        t,
                        EventType::IoctlStart,
                        worker,
                        req,
                        Some(k),
                        Some(worker),
                        Some(format!("mask {}->{} cost={}", from, cfg.cu_count(), cost)),
                    );
                    self.push(t + cost, Action::IoctlDone { worker });
                    return;
                }
            }
            Repartition::StreamHop => {
                if a.barrier[k] {
                    let a = self.rt[worker].active.as_mut().unwrap();
                    a.switches += 1;
                    let cost = self.setup.overhead.barrier_cost_us;
                    self.push(t + cost, Action::BarrierDone { worker });
                    return;
                }
            }
        }
        self.begin_kernel(worker, t);
    }

    fn sample_ioctl_us(&mut self) -> f64 {
        let o = self.setup.overhead;
        if o.ioctl_max_us > o.ioctl_min_us {
            Triangular::new(o.ioctl_min_us, o.ioctl_max_us, o.ioctl_mode_us)
                .expect("validated triangle")
                .sample(&mut self.rng)
        } else {
            o.ioctl_min_us
        }
    }

    fn begin_kernel(&mut self, worker: usize, t: f64) {
        let a = self.rt[worker].active.as_ref().expect("no active request");
        let (req, k) = (a.request, a.kidx);
        let cfg = a.configs[k];
        let stream = a.streams[k];
        let beta_us = self.setup.workers[worker].model.kernels()[k].exec_us(cfg);
        let mask = self.masks[worker][k];
        debug_assert_eq!(mask.cu_count(), cfg.cu_count());
        self.rt[worker].run = Some(Running {
            kernel: k,
            mask,
            remaining_us: beta_us,
            last_update: t,
            dilation: -1.0, // refreshed by the occupancy pass below
        });
        self.record(
            t,
            EventType::KernelStart,
            worker,
            req,
            Some(k),
            Some(stream),
            Some(format!("cus={}", cfg.cu_count())),
        );
        self.occupancy_changed(t);
    }

    fn complete_kernel(&mut self, worker: usize, t: f64) {
        let a = self.rt[worker].active.as_ref().expect("no active request");
        let (req, k) = (a.request, a.kidx);
        let stream = a.streams[k];
        debug_assert_eq!(
            self.rt[worker].run.as_ref().map(|r| r.kernel),
            Some(k),
            "completion must match the running kernel"
        );
        self.rt[worker].gen += 1;
        self.rt[worker].run = None;
        self.ledger.mark_complete(worker, req, k);
        self.record(t, EventType::KernelComplete, worker, req, Some(k), Some(stream), None);
        self.occupancy_changed(t);

        let a = self.rt[worker].active.as_mut().unwrap();
        a.kidx += 1;
        if a.kidx < a.configs.len() {
            self.step_kernel(worker, t);
        } else {
            let a = self.rt[worker].active.take().unwrap();
            self.requests.push(RequestRecord {
                worker,
                request: a.request,
                arrival_us: a.arrival_us,
                start_us: a.started_us,
                complete_us: t,
                switches: a.switches,
            });
            if t > self.last_completion {
                self.last_completion = t;
            }
            if !self.rt[worker].pending.is_empty() {
                self.start_request(worker, t);
            }
        }
    }

    /// Close the current constant-occupancy span and refresh every running
    /// kernel's dilation from the new mask overlaps, rescheduling completions
    /// whose rate changed.
    fn occupancy_changed(&mut self, t: f64) {
        if t > self.seg_start {
            self.busy.push(BusyInterval {
                t0_us: self.seg_start,
                t1_us: t,
                busy_cus: self.seg_busy,
            });
            self.seg_start = t;
        }
        let mut union = CuMask::empty();
        for rt in &self.rt {
            if let Some(run) = &rt.run {
                union = union.union(run.mask);
            }
        }
        self.seg_busy = union.cu_count();

        let total = self.hardware.total_cus as f64;
        for w in 0..self.rt.len() {
            let Some(mask) = self.rt[w].run.as_ref().map(|r| r.mask) else {
                continue;
            };
            let mut slow = 0.0;
            for (o, rt) in self.rt.iter().enumerate() {
                if o == w {
                    continue;
                }
                if let Some(run) = &rt.run {
                    slow += mask.intersection_cus(run.mask) as f64 / total;
                }
            }
            let dilation = (1.0 + slow) * self.oversub;
            let run = self.rt[w].run.as_ref().unwrap();
            if dilation != run.dilation {
                debug_assert_eq!(run.last_update, t);
                let due = t + run.remaining_us.max(0.0) * dilation;
                let run = self.rt[w].run.as_mut().unwrap();
                run.dilation = dilation;
                self.rt[w].gen += 1;
                let gen = self.rt[w].gen;
                self.push(due, Action::KernelDone { worker: w, gen });
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::allocator::LookupTable;
    use crate::profiles::{
        CuConfig, HardwareSpec, KernelProfile, ModelProfile, Nanos, WorkerSpec,
    };
    use crate::simulator::pool::{build_stream_pool, OverheadModel, DEFAULT_STREAM};
    use std::collections::BTreeMap;

    fn hw() -> HardwareSpec {
        HardwareSpec::default()
    }

    fn cu(n: u32) -> CuConfig {
        CuConfig::new(n, &hw()).unwrap()
    }

    fn model_from_us(name: &str, rows: &[[f64; 4]]) -> ModelProfile {
        let configs = hw().configs();
        let kernels = rows
            .iter()
            .enumerate()
            .map(|(id, row)| {
                let exec: BTreeMap<CuConfig, Nanos> = configs
                    .iter()
                    .zip(row.iter())
                    .map(|(c, t)| (*c, (t * 1000.0).round() as Nanos))
                    .collect();
                KernelProfile::new(id, exec, &configs).unwrap()
            })
            .collect();
        ModelProfile::new(name.into(), kernels).unwrap()
    }

    fn worker(id: usize, model: ModelProfile, rps: f64, requests: u32) -> WorkerSpec {
        WorkerSpec {
            worker_id: id,
            model,
            arrival_rps: rps,
            request_count: requests,
        }
    }

    fn table_of(assignments: &[Vec<CuConfig>]) -> LookupTable {
        LookupTable::from_assignments("exclude-self", 14, assignments)
    }

    #[test]
    fn solo_chain_runs_at_exact_solo_times() {
        let m = model_from_us("solo", &[[40.0, 21.0, 20.0, 20.0], [9.0, 5.0, 5.0, 5.0]]);
        let workers = [worker(0, m, 100.0, 1)];
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(60), cu(60)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        // Same stream, no contention: latency is the exact fold-left sum.
        assert_eq!(tl.requests.len(), 1);
        assert_eq!(tl.requests[0].latency_us(), 20.0 + 5.0);
        assert_eq!(tl.requests[0].switches, 0);
        assert_eq!(tl.oversub, 1.0);
        assert_eq!(tl.makespan_us, 25.0);
        // Busy trace: 60 CUs for the whole run (both kernels all-CU).
        assert_eq!(tl.busy.len(), 1);
        assert_eq!(
            tl.busy[0],
            BusyInterval { t0_us: 0.0, t1_us: 25.0, busy_cus: 60 }
        );
    }

    #[test]
    fn full_overlap_doubles_both_kernels_exactly() {
        let m = model_from_us("one", &[[99.0, 71.0, 53.0, 37.5]]);
        let workers = [
            worker(0, m.clone(), 100.0, 1),
            worker(1, m, 100.0, 1),
        ];
        let pool = build_stream_pool(2, &hw()).unwrap();
        let table = table_of(&[vec![cu(60)], vec![cu(60)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        for r in &tl.requests {
            assert_eq!(r.complete_us, 2.0 * 37.5);
        }
        assert_eq!(tl.busy.len(), 1);
        assert_eq!(tl.busy[0].busy_cus, 60);
    }

    #[test]
    fn disjoint_masks_run_at_full_speed() {
        let m = model_from_us("one", &[[40.0, 20.0, 20.0, 20.0]]);
        let workers = [
            worker(0, m.clone(), 100.0, 1),
            worker(1, m, 100.0, 1),
        ];
        let pool = build_stream_pool(2, &hw()).unwrap();
        // Worker 0 on SEs {0,2}, worker 1 on SEs {1,3}: zero overlap.
        let table = table_of(&[vec![cu(30)], vec![cu(30)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        for r in &tl.requests {
            assert_eq!(r.complete_us, 20.0);
        }
        assert_eq!(tl.busy.len(), 1);
        assert_eq!(tl.busy[0].busy_cus, 60);
    }

    #[test]
    fn barrier_cost_charged_on_stream_hop() {
        let m = model_from_us("hop", &[[40.0, 20.0, 20.0, 20.0], [9.0, 5.0, 5.0, 5.0]]);
        let workers = [worker(0, m, 100.0, 1)];
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(30), cu(60)]]);
        let overhead = OverheadModel {
            barrier_cost_us: 10.0,
            ..Default::default()
        };
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &overhead,
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        // 20us on 30 CUs, one 10us barrier, then 5us on the default stream.
        assert_eq!(tl.requests[0].latency_us(), 20.0 + 10.0 + 5.0);
        assert_eq!(tl.requests[0].switches, 1);
        let kinds: Vec<EventType> = tl.events.iter().map(|e| e.kind).collect();
        assert!(kinds.contains(&EventType::BarrierEnqueue));
        assert!(kinds.contains(&EventType::BarrierRelease));
        // The barrier releases exactly when the hop's wait elapses.
        let release = tl
            .events
            .iter()
            .find(|e| e.kind == EventType::BarrierRelease)
            .unwrap();
        assert_eq!(release.t_us, 30.0);
        // Gap between kernels has zero busy CUs.
        assert_eq!(
            tl.busy,
            vec![
                BusyInterval { t0_us: 0.0, t1_us: 20.0, busy_cus: 30 },
                BusyInterval { t0_us: 20.0, t1_us: 30.0, busy_cus: 0 },
                BusyInterval { t0_us: 30.0, t1_us: 35.0, busy_cus: 60 },
            ]
        );
    }

    #[test]
    fn same_stream_consecutive_kernels_need_no_barrier() {
        let m = model_from_us("same", &[[40.0, 20.0, 20.0, 20.0], [9.0, 5.0, 5.0, 5.0]]);
        let workers = [worker(0, m, 100.0, 1)];
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(30), cu(30)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        assert_eq!(tl.requests[0].latency_us(), 20.0 + 5.0);
        assert_eq!(tl.requests[0].switches, 0);
        assert!(tl
            .events
            .iter()
            .all(|e| e.kind != EventType::BarrierEnqueue));
    }

    #[test]
    fn queue_remask_pays_ioctl_per_mask_change() {
        let m = model_from_us(
            "remask",
            &[[40.0, 20.0, 20.0, 20.0], [9.0, 5.0, 5.0, 5.0], [7.0, 7.0, 7.0, 3.0]],
        );
        let workers = [worker(0, m, 100.0, 2)];
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(30), cu(30), cu(60)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::QueueRemask,
            arrival: ArrivalProcess::Deterministic,
            seed: 9,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        // Request 0: queue starts unmasked -> ioctl to 30, then 30->60.
        // Request 1: queue left at 60 -> ioctl back to 30, then 30->60.
        assert_eq!(tl.requests[0].switches, 2);
        assert_eq!(tl.requests[1].switches, 2);
        let ioctls = tl
            .events
            .iter()
            .filter(|e| e.kind == EventType::IoctlStart)
            .count();
        assert_eq!(ioctls, 4);
        // Sampled costs stay inside the configured triangle. The single
        // worker runs one ioctl at a time, so starts and ends interleave.
        let starts: Vec<f64> = tl
            .events
            .iter()
            .filter(|e| e.kind == EventType::IoctlStart)
            .map(|e| e.t_us)
            .collect();
        let ends: Vec<f64> = tl
            .events
            .iter()
            .filter(|e| e.kind == EventType::IoctlEnd)
            .map(|e| e.t_us)
            .collect();
        assert_eq!(starts.len(), ends.len());
        for (s, e) in starts.iter().zip(&ends) {
            let cost = e - s;
            assert!((10.0..=55.4).contains(&cost), "ioctl cost {cost}");
        }
        // No barriers under re-masking: everything stays on one queue.
        assert!(tl.events.iter().all(|e| e.kind != EventType::BarrierEnqueue));
    }

    #[test]
    fn forced_queue_pressure_dilates_solo_kernel() {
        let m = model_from_us("slow", &[[40.0, 20.0, 20.0, 17.0]]);
        let workers = [worker(0, m, 100.0, 1)];
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(60)]]);
        let overhead = OverheadModel::default();
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &overhead,
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: Some(9),
        };
        let tl = run(&setup).unwrap();
        assert_eq!(tl.queue_count, 10);
        let factor = oversub_factor(10, &hw(), &overhead);
        assert_eq!(tl.oversub, factor);
        assert_eq!(tl.requests[0].latency_us(), 17.0 * (1.0 * factor));
    }

    #[test]
    fn partial_overlap_slows_by_shared_fraction() {
        // Worker 0 at 45 CUs (SEs 0,1,2), worker 1 at 30 (SEs 1,3): share
        // SE 1, 15 CUs, so each runs at dilation 1.25 while both live.
        let m0 = model_from_us("a", &[[90.0, 60.0, 40.0, 40.0]]);
        let m1 = model_from_us("b", &[[90.0, 80.0, 60.0, 60.0]]);
        let workers = [worker(0, m0, 100.0, 1), worker(1, m1, 100.0, 1)];
        let pool = build_stream_pool(2, &hw()).unwrap();
        let table = table_of(&[vec![cu(45)], vec![cu(30)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        // Worker 0 finishes first: 40us of work at rate 1/1.25.
        let w0_done = 40.0 * 1.25;
        assert_eq!(tl.latencies_of(0), vec![w0_done]);
        // Worker 1: progresses at 1/1.25 until w0 leaves, then full speed.
        // Work done by w0_done: 50/1.25 = 40us; remaining 80-40=... checked
        // numerically instead: total = w0_done + (80 - w0_done/1.25).
        let w1_done = w0_done + (80.0 - w0_done / 1.25);
        let lat1 = tl.latencies_of(1);
        assert!((lat1[0] - w1_done).abs() < 1e-9, "{} vs {w1_done}", lat1[0]);
        // Busy trace: masks {0,1,2} and {1,3} cover all four engines while
        // both run, then 30 CUs for w1 alone.
        assert_eq!(tl.busy.len(), 2);
        assert_eq!(tl.busy[0].busy_cus, 60);
        assert_eq!(tl.busy[1].busy_cus, 30);
        assert_eq!(tl.busy[0].t1_us, w0_done);
    }

    #[test]
    fn queued_requests_wait_for_service() {
        // One worker, two requests arriving 10us apart, each 20us of work:
        // the second waits for the first.
        let m = model_from_us("q", &[[20.0, 20.0, 20.0, 20.0]]);
        let workers = [worker(0, m, 100_000.0, 2)]; // 10us period
        let pool = build_stream_pool(1, &hw()).unwrap();
        let table = table_of(&[vec![cu(15)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 1,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        assert_eq!(tl.requests[0].latency_us(), 20.0);
        // Request 1: arrives at 10, starts at 20, completes at 40.
        assert_eq!(tl.requests[1].start_us, 20.0);
        assert_eq!(tl.requests[1].latency_us(), 30.0);
        assert_eq!(tl.span_us(), 40.0);
    }

    #[test]
    fn timeline_is_deterministic_across_runs() {
        let m0 = model_from_us(
            "d0",
            &[[40.0, 21.0, 20.0, 20.0], [9.0, 5.0, 5.0, 5.0], [7.0, 7.0, 3.5, 3.0]],
        );
        let m1 = model_from_us("d1", &[[12.0, 6.0, 6.0, 6.0], [30.0, 16.0, 11.0, 9.0]]);
        let workers = [worker(0, m0, 5000.0, 6), worker(1, m1, 7000.0, 6)];
        let pool = build_stream_pool(2, &hw()).unwrap();
        let table = table_of(&[
            vec![cu(30), cu(30), cu(60)],
            vec![cu(30), cu(60)],
        ]);
        let overhead = OverheadModel::default();
        let mk = |seed| SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &overhead,
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Poisson,
            seed,
            forced_masked_streams: None,
        };
        let a = run(&mk(77)).unwrap();
        let b = run(&mk(77)).unwrap();
        let c = run(&mk(78)).unwrap();
        let ser = |t: &SimTimeline| serde_json::to_string(t).unwrap();
        assert_eq!(ser(&a), ser(&b));
        assert_ne!(ser(&a), ser(&c));
    }

    #[test]
    fn default_stream_kernels_of_one_worker_stay_sequential() {
        // Both kernels of the same request on the shared default stream run
        // one after the other even though another worker co-runs there.
        let m = model_from_us("seq", &[[10.0, 10.0, 10.0, 10.0], [10.0, 10.0, 10.0, 10.0]]);
        let workers = [
            worker(0, m.clone(), 100.0, 1),
            worker(1, m, 100.0, 1),
        ];
        let pool = build_stream_pool(2, &hw()).unwrap();
        let table = table_of(&[vec![cu(60), cu(60)], vec![cu(60), cu(60)]]);
        let setup = SimSetup {
            workers: &workers,
            table: &table,
            pool: &pool,
            overhead: &OverheadModel::default(),
            mechanism: Repartition::StreamHop,
            arrival: ArrivalProcess::Deterministic,
            seed: 2,
            forced_masked_streams: None,
        };
        let tl = run(&setup).unwrap();
        // Per worker: 2 kernels of 10us each, dilated 2x by the other
        // worker: all four kernels complete by 40.
        for r in &tl.requests {
            assert_eq!(r.latency_us(), 40.0);
        }
        // Starts within a worker are ordered after the predecessor's
        // completion.
        for w in 0..2 {
            let starts: Vec<f64> = tl
                .events
                .iter()
                .filter(|e| e.kind == EventType::KernelStart && e.worker == Some(w))
                .map(|e| e.t_us)
                .collect();
            let completes: Vec<f64> = tl
                .events
                .iter()
                .filter(|e| e.kind == EventType::KernelComplete && e.worker == Some(w))
                .map(|e| e.t_us)
                .collect();
            assert_eq!(starts.len(), 2);
            assert!(starts[1] >= completes[0]);
        }
        let _ = DEFAULT_STREAM;
    }
}
