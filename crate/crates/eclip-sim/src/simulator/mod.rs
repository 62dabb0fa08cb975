//! Event-driven execution of co-located inference workers on masked streams.

mod engine;
mod pool;

pub use engine::{
    run, ArrivalProcess, BusyInterval, EventType, Repartition, RequestRecord, SimEvent,
    SimSetup, SimTimeline,
};
pub use pool::{
    build_stream_pool, mask_for, oversub_factor, pooled_configs, redirect_kernel,
    CompletionLedger, CuMask, LedgerEntry, OverheadModel, SignalState, SimError, Stream,
    StreamId, StreamPool, DEFAULT_STREAM,
};
