//! Deterministic artifact writers: CSV tables, JSON documents, and NDJSON
//! event streams. Byte-identical output for identical inputs.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

use crate::metrics::{Report, ScenarioResult};
use crate::scenario::SwitchRow;
use crate::simulator::SimTimeline;

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Quote a CSV field only when it needs it.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn worker_label(worker: Option<usize>) -> String {
    match worker {
        Some(w) => w.to_string(),
        None => "all".to_string(),
    }
}

/// Raw per-scenario metrics, one row per worker plus the aggregate row.
pub fn results_csv(results: &[ScenarioResult]) -> String {
    let mut out =
        String::from("scenario,worker,completed,throughput_rps,p95_us,energy_j,efficiency_rpj\n");
    for res in results {
        for row in &res.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                csv_field(&res.scenario),
                worker_label(row.worker),
                row.completed,
                row.throughput_rps,
                row.p95_us,
                row.energy_j,
                row.efficiency_rpj,
            )
            .expect("string write");
        }
    }
    out
}

/// Metrics with baseline-normalized ratios appended.
pub fn report_csv(report: &Report) -> String {
    let mut out = String::from(
        "scenario,worker,completed,throughput_rps,p95_us,energy_j,efficiency_rpj,\
         norm_throughput,norm_p95,norm_energy,norm_efficiency\n",
    );
    for row in &report.rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            csv_field(&row.scenario),
            worker_label(row.worker),
            row.completed,
            row.throughput_rps,
            row.p95_us,
            row.energy_j,
            row.efficiency_rpj,
            row.norm_throughput,
            row.norm_p95,
            row.norm_energy,
            row.norm_efficiency,
        )
        .expect("string write");
    }
    out
}

/// Mean repartitionings per request, one row per worker and a summed row.
pub fn switches_csv(rows: &[SwitchRow]) -> String {
    let mut out = String::from("scenario,worker,switches_per_request\n");
    for row in rows {
        for (w, mean) in row.per_worker.iter().enumerate() {
            writeln!(out, "{},{},{}", csv_field(&row.scenario), w, mean).expect("string write");
        }
        writeln!(out, "{},all,{}", csv_field(&row.scenario), row.total).expect("string write");
    }
    out
}

pub fn results_json(results: &[ScenarioResult]) -> Result<String, OutputError> {
    let mut s = serde_json::to_string_pretty(results)?;
    s.push('\n');
    Ok(s)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ScenarioResult>, OutputError> {
    let text = std::fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

pub fn report_json(report: &Report) -> Result<String, OutputError> {
    let mut s = serde_json::to_string_pretty(report)?;
    s.push('\n');
    Ok(s)
}

/// One JSON object per line, in event order.
pub fn events_ndjson(timeline: &SimTimeline) -> Result<String, OutputError> {
    let mut out = String::new();
    for event in &timeline.events {
        out.push_str(&serde_json::to_string(event)?);
        out.push('\n');
    }
    Ok(out)
}

/// One JSON object per busy interval, in time order.
pub fn busy_ndjson(timeline: &SimTimeline) -> Result<String, OutputError> {
    let mut out = String::new();
    for seg in &timeline.busy {
        out.push_str(&serde_json::to_string(seg)?);
        out.push('\n');
    }
    Ok(out)
}

/// Per-request rows in (worker, request) order.
pub fn requests_csv(timeline: &SimTimeline) -> String {
    let mut out =
        String::from("worker,request,arrival_us,start_us,complete_us,latency_us,switches\n");
    for r in &timeline.requests {
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.worker,
            r.request,
            r.arrival_us,
            r.start_us,
            r.complete_us,
            r.latency_us(),
            r.switches,
        )
        .expect("string write");
    }
    out
}

/// Write, creating parent directories as needed.
pub fn write_text(path: impl AsRef<Path>, text: &str) -> Result<(), OutputError> {
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}
