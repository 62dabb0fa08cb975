//! Desk-scale simulator and optimizer for energy-efficient co-location of ML
//! inference workers on a spatially partitioned GPU.
//!
//! The crate models a 60-CU accelerator split into four shader engines.
//! Kernels run on pre-allocated CU-masked streams (or on per-worker queues
//! that are re-masked in place), inter-stream ordering is enforced with
//! barrier packets, and an allocator picks per-kernel CU configurations under
//! a switch budget. Metrics turn simulated timelines into energy and latency
//! reports normalized against an unpartitioned baseline.

pub mod allocator;
pub mod metrics;
pub mod output;
pub mod profiles;
pub mod scenario;
pub mod simulator;
