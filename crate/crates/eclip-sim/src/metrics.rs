//! Energy, latency, and efficiency metrics over simulated timelines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::profiles::HardwareSpec;
use crate::simulator::SimTimeline;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("busy CU count {busy} exceeds the machine's {total}")]
    BusyOutOfRange { busy: u32, total: u32 },
    #[error("no latencies to summarize")]
    EmptyLatencies,
    #[error("malformed busy intervals: {0}")]
    BadIntervals(String),
    #[error("baseline scenario {0:?} not among the results")]
    MissingBaseline(String),
    #[error("baseline {metric} is zero for worker {worker:?}; ratios are undefined")]
    ZeroBaseline { metric: &'static str, worker: Option<usize> },
    #[error("scenario {scenario}: worker rows do not match the baseline's")]
    RowMismatch { scenario: String },
}

/// Linear power draw: idle at zero busy CUs, peak with every CU busy.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PowerModel {
    pub p_idle_w: f64,
    pub p_max_w: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            p_idle_w: 75.0,
            p_max_w: 225.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.p_idle_w >= 0.0 && self.p_max_w >= self.p_idle_w) {
            return Err(MetricsError::BadIntervals(format!(
                "power model ({}, {}) must satisfy 0 <= idle <= max",
                self.p_idle_w, self.p_max_w
            )));
        }
        Ok(())
    }
}

/// Instantaneous draw in watts with `busy_cus` CUs occupied.
pub fn power_at(
    busy_cus: u32,
    model: &PowerModel,
    hardware: &HardwareSpec,
) -> Result<f64, MetricsError> {
    if busy_cus > hardware.total_cus {
        return Err(MetricsError::BusyOutOfRange {
            busy: busy_cus,
            total: hardware.total_cus,
        });
    }
    let frac = busy_cus as f64 / hardware.total_cus as f64;
    Ok(model.p_idle_w + (model.p_max_w - model.p_idle_w) * frac)
}

/// Exact integral of the piecewise-constant power trace, in joules.
/// Intervals must be ordered, non-overlapping, and within the timeline's
/// measurement window.
pub fn integrate_energy(timeline: &SimTimeline, model: &PowerModel) -> Result<f64, MetricsError> {
    model.validate()?;
    let mut energy = 0.0;
    let mut cursor = timeline.start_us;
    for (i, seg) in timeline.busy.iter().enumerate() {
        if seg.t1_us < seg.t0_us {
            return Err(MetricsError::BadIntervals(format!(
                "interval {i} ends before it starts"
            )));
        }
        if seg.t0_us < cursor {
            return Err(MetricsError::BadIntervals(format!(
                "interval {i} overlaps its predecessor"
            )));
        }
        // A gap between intervals is idle time and still draws idle power.
        if seg.t0_us > cursor {
            energy += power_at(0, model, &timeline.hardware)? * (seg.t0_us - cursor) * 1e-6;
        }
        energy += power_at(seg.busy_cus, model, &timeline.hardware)?
            * (seg.t1_us - seg.t0_us)
            * 1e-6;
        cursor = seg.t1_us;
    }
    if timeline.makespan_us > cursor {
        energy += power_at(0, model, &timeline.hardware)? * (timeline.makespan_us - cursor) * 1e-6;
    }
    Ok(energy)
}

/// Nearest-rank 95th percentile: the ceil(0.95 n)-th smallest value.
pub fn p95_latency(latencies_us: &[f64]) -> Result<f64, MetricsError> {
    if latencies_us.is_empty() {
        return Err(MetricsError::EmptyLatencies);
    }
    let mut sorted = latencies_us.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    // ceil(0.95 n) in integer arithmetic; floats round 0.95*20 above 19.
    let rank = (95 * n).div_ceil(100).clamp(1, n);
    Ok(sorted[rank - 1])
}

/// One scenario's measurements: a row per worker plus the aggregate row.
/// Energy is machine-wide, so worker rows carry the shared total and their
/// efficiencies sum to the aggregate's.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub scenario: String,
    pub rows: Vec<MetricsRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsRow {
    /// None marks the aggregate row.
    pub worker: Option<usize>,
    pub completed: u32,
    pub throughput_rps: f64,
    pub p95_us: f64,
    pub energy_j: f64,
    pub efficiency_rpj: f64,
}

impl ScenarioResult {
    pub fn aggregate(&self) -> &MetricsRow {
        self.rows
            .iter()
            .find(|r| r.worker.is_none())
            .expect("aggregate row always present")
    }

    pub fn worker_row(&self, worker: usize) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.worker == Some(worker))
    }
}

/// Reduce a timeline to per-worker and aggregate metrics. Rates use the
/// shared measurement window (first arrival to last completion) so worker
/// throughputs sum to the aggregate.
pub fn scenario_result(
    name: &str,
    timeline: &SimTimeline,
    power: &PowerModel,
) -> Result<ScenarioResult, MetricsError> {
    let energy = integrate_energy(timeline, power)?;
    let span_s = timeline.span_us() * 1e-6;
    let mut rows = Vec::with_capacity(timeline.worker_count + 1);
    let mut all_latencies = Vec::new();
    let mut total_completed = 0u32;
    for w in 0..timeline.worker_count {
        let lat = timeline.latencies_of(w);
        let completed = lat.len() as u32;
        total_completed += completed;
        let p95 = p95_latency(&lat)?;
        all_latencies.extend_from_slice(&lat);
        rows.push(MetricsRow {
            worker: Some(w),
            completed,
            throughput_rps: completed as f64 / span_s,
            p95_us: p95,
            energy_j: energy,
            efficiency_rpj: completed as f64 / energy,
        });
    }
    rows.push(MetricsRow {
        worker: None,
        completed: total_completed,
        throughput_rps: total_completed as f64 / span_s,
        p95_us: p95_latency(&all_latencies)?,
        energy_j: energy,
        efficiency_rpj: total_completed as f64 / energy,
    });
    Ok(ScenarioResult {
        scenario: name.to_string(),
        rows,
    })
}

/// A scenario's rows with ratios against the baseline scenario, row by row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Report {
    pub baseline: String,
    pub rows: Vec<ReportRow>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ReportRow {
    pub scenario: String,
    pub worker: Option<usize>,
    pub completed: u32,
    pub throughput_rps: f64,
    pub p95_us: f64,
    pub energy_j: f64,
    pub efficiency_rpj: f64,
    /// Ratios versus the same row of the baseline scenario. Above 1 is
    /// better for throughput and efficiency, below 1 for p95 and energy.
    pub norm_throughput: f64,
    pub norm_p95: f64,
    pub norm_energy: f64,
    pub norm_efficiency: f64,
}

impl Report {
    pub fn row(&self, scenario: &str, worker: Option<usize>) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.scenario == scenario && r.worker == worker)
    }
}

/// Normalize every scenario against `baseline`, matching rows by worker.
/// Result order follows the input order.
pub fn normalize(results: &[ScenarioResult], baseline: &str) -> Result<Report, MetricsError> {
    let base = results
        .iter()
        .find(|r| r.scenario == baseline)
        .ok_or_else(|| MetricsError::MissingBaseline(baseline.to_string()))?;
    let mut rows = Vec::new();
    for res in results {
        if res.rows.len() != base.rows.len()
            || res
                .rows
                .iter()
                .zip(&base.rows)
                .any(|(a, b)| a.worker != b.worker)
        {
            return Err(MetricsError::RowMismatch {
                scenario: res.scenario.clone(),
            });
        }
        for (row, bref) in res.rows.iter().zip(&base.rows) {
            for (metric, value) in [
                ("throughput", bref.throughput_rps),
                ("p95", bref.p95_us),
                ("energy", bref.energy_j),
                ("efficiency", bref.efficiency_rpj),
            ] {
                if value == 0.0 {
                    return Err(MetricsError::ZeroBaseline {
                        metric,
                        worker: row.worker,
                    });
                }
            }
            rows.push(ReportRow {
                scenario: res.scenario.clone(),
                worker: row.worker,
                completed: row.completed,
                throughput_rps: row.throughput_rps,
                p95_us: row.p95_us,
                energy_j: row.energy_j,
                efficiency_rpj: row.efficiency_rpj,
                norm_throughput: row.throughput_rps / bref.throughput_rps,
                norm_p95: row.p95_us / bref.p95_us,
                norm_energy: row.energy_j / bref.energy_j,
                norm_efficiency: row.efficiency_rpj / bref.efficiency_rpj,
            });
        }
    }
    Ok(Report {
        baseline: baseline.to_string(),
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::BusyInterval;
    use proptest::prelude::*;

    fn hw() -> HardwareSpec {
        HardwareSpec::default()
    }

    fn pm() -> PowerModel {
        PowerModel::default()
    }

    fn timeline_with(busy: Vec<BusyInterval>, start: f64, makespan: f64) -> SimTimeline {
        SimTimeline {
            hardware: hw(),
            worker_count: 1,
            seed: 0,
            queue_count: 1,
            oversub: 1.0,
            start_us: start,
            makespan_us: makespan,
            events: Vec::new(),
            busy,
            requests: Vec::new(),
        }
    }

    #[test]
    fn power_endpoints_and_midpoint() {
        assert_eq!(power_at(0, &pm(), &hw()).unwrap(), 75.0);
        assert_eq!(power_at(60, &pm(), &hw()).unwrap(), 225.0);
        assert_eq!(power_at(30, &pm(), &hw()).unwrap(), 150.0);
        assert!(power_at(61, &pm(), &hw()).is_err());
    }

    #[test]
    fn energy_idle_second_is_75_joules() {
        let tl = timeline_with(vec![], 0.0, 1e6);
        assert_eq!(integrate_energy(&tl, &pm()).unwrap(), 75.0);
    }

    #[test]
    fn energy_hand_computed_mixed_trace() {
        // 990us idle + 10us fully busy: 75 * 990e-6 + 225 * 10e-6.
        let tl = timeline_with(
            vec![BusyInterval { t0_us: 990.0, t1_us: 1000.0, busy_cus: 60 }],
            0.0,
            1000.0,
        );
        let expect = 75.0 * 990.0e-6 + 225.0 * 10.0e-6;
        let got = integrate_energy(&tl, &pm()).unwrap();
        assert!((got - expect).abs() <= 1e-12 * expect.abs());
    }

    #[test]
    fn energy_rejects_malformed_intervals() {
        let tl = timeline_with(
            vec![
                BusyInterval { t0_us: 0.0, t1_us: 10.0, busy_cus: 30 },
                BusyInterval { t0_us: 5.0, t1_us: 16.0, busy_cus: 15 },
            ],
            0.0,
            16.0,
        );
        assert!(matches!(
            integrate_energy(&tl, &pm()),
            Err(MetricsError::BadIntervals(_))
        ));
        let tl = timeline_with(
            vec![BusyInterval { t0_us: 10.0, t1_us: 4.0, busy_cus: 30 }],
            0.0,
            10.0,
        );
        assert!(integrate_energy(&tl, &pm()).is_err());
        let tl = timeline_with(
            vec![BusyInterval { t0_us: 0.0, t1_us: 4.0, busy_cus: 61 }],
            0.0,
            4.0,
        );
        assert!(matches!(
            integrate_energy(&tl, &pm()),
            Err(MetricsError::BusyOutOfRange { .. })
        ));
    }

    #[test]
    fn p95_nearest_rank_examples() {
        assert_eq!(p95_latency(&[5.0]).unwrap(), 5.0);
        let v: Vec<f64> = (1..=100).map(|i| i as f64).collect();
        assert_eq!(p95_latency(&v).unwrap(), 95.0);
        let v: Vec<f64> = (1..=20).map(|i| i as f64).collect();
        assert_eq!(p95_latency(&v).unwrap(), 19.0);
        assert!(p95_latency(&[]).is_err());
    }

    proptest! {
        #[test]
        fn p95_is_permutation_invariant(mut v in prop::collection::vec(0.0f64..1e6, 1..50), seed in 0u64..100) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let a = p95_latency(&v).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            v.shuffle(&mut rng);
            prop_assert_eq!(a, p95_latency(&v).unwrap());
        }

        /// Splitting an interval anywhere barely moves the integral.
        #[test]
        fn energy_is_split_invariant(
            cut in 0.1f64..0.9,
            busy in 0u32..=60,
            len in 1.0f64..1e6,
        ) {
            let whole = timeline_with(
                vec![BusyInterval { t0_us: 0.0, t1_us: len, busy_cus: busy }],
                0.0,
                len,
            );
            let split = timeline_with(
                vec![
                    BusyInterval { t0_us: 0.0, t1_us: cut * len, busy_cus: busy },
                    BusyInterval { t0_us: cut * len, t1_us: len, busy_cus: busy },
                ],
                0.0,
                len,
            );
            let a = integrate_energy(&whole, &pm()).unwrap();
            let b = integrate_energy(&split, &pm()).unwrap();
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        /// Independent reversed-order accumulation agrees within 1e-9.
        #[test]
        fn energy_matches_independent_sum(
            segs in prop::collection::vec((1.0f64..1e5, 0u32..=60), 1..20)
        ) {
            let mut t = 0.0;
            let mut busy = Vec::new();
            for (len, cus) in &segs {
                busy.push(BusyInterval { t0_us: t, t1_us: t + len, busy_cus: *cus });
                t += len;
            }
            let tl = timeline_with(busy.clone(), 0.0, t);
            let got = integrate_energy(&tl, &pm()).unwrap();
            let expect: f64 = busy
                .iter()
                .rev()
                .map(|s| {
                    (75.0 + 150.0 * s.busy_cus as f64 / 60.0) * (s.t1_us - s.t0_us) * 1e-6
                })
                .sum();
            prop_assert!((got - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }

    fn row(worker: Option<usize>, tp: f64, p95: f64, e: f64) -> MetricsRow {
        MetricsRow {
            worker,
            completed: 10,
            throughput_rps: tp,
            p95_us: p95,
            energy_j: e,
            efficiency_rpj: 10.0 / e,
        }
    }

    #[test]
    fn normalize_against_self_is_unity() {
        let res = ScenarioResult {
            scenario: "baseline".into(),
            rows: vec![row(Some(0), 100.0, 900.0, 2.0), row(None, 100.0, 900.0, 2.0)],
        };
        let report = normalize(&[res], "baseline").unwrap();
        for r in &report.rows {
            assert_eq!(r.norm_throughput, 1.0);
            assert_eq!(r.norm_p95, 1.0);
            assert_eq!(r.norm_energy, 1.0);
            assert_eq!(r.norm_efficiency, 1.0);
        }
    }

    #[test]
    fn normalize_computes_ratios_per_worker_row() {
        let base = ScenarioResult {
            scenario: "baseline".into(),
            rows: vec![
                row(Some(0), 100.0, 900.0, 2.0),
                row(Some(1), 50.0, 1200.0, 2.0),
                row(None, 150.0, 1000.0, 2.0),
            ],
        };
        let other = ScenarioResult {
            scenario: "tuned".into(),
            rows: vec![
                row(Some(0), 110.0, 450.0, 1.0),
                row(Some(1), 60.0, 600.0, 1.0),
                row(None, 170.0, 500.0, 1.0),
            ],
        };
        let report = normalize(&[base, other], "baseline").unwrap();
        let r = report.row("tuned", Some(1)).unwrap();
        assert_eq!(r.norm_throughput, 60.0 / 50.0);
        assert_eq!(r.norm_p95, 0.5);
        assert_eq!(r.norm_energy, 0.5);
        assert_eq!(r.norm_efficiency, 2.0);
        let agg = report.row("tuned", None).unwrap();
        assert!((agg.norm_throughput - 170.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_requires_baseline_presence_and_row_match() {
        let res = ScenarioResult {
            scenario: "a".into(),
            rows: vec![row(None, 1.0, 1.0, 1.0)],
        };
        assert!(matches!(
            normalize(&[res.clone()], "baseline"),
            Err(MetricsError::MissingBaseline(_))
        ));
        let mismatched = ScenarioResult {
            scenario: "b".into(),
            rows: vec![row(Some(0), 1.0, 1.0, 1.0), row(None, 1.0, 1.0, 1.0)],
        };
        let base = ScenarioResult {
            scenario: "a".into(),
            rows: vec![row(None, 1.0, 1.0, 1.0)],
        };
        assert!(matches!(
            normalize(&[base, mismatched], "a"),
            Err(MetricsError::RowMismatch { .. })
        ));
    }
}
