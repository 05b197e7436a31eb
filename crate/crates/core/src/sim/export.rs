//! Trace CSV and metrics JSON.
//!
//! CSV columns, in order: `t`, then `p_i,v_i,s_i` for `i = 1..n`, then `u`.
//! Both formats carry [`FORMAT_VERSION`]; the CSV through the sidecar.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::engine::{Event, SimTrace};
use super::metrics::Metrics;
use crate::error::SimError;

pub const FORMAT_VERSION: u32 = 1;

pub fn trace_header(n: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    for i in 1..=n {
        h.extend([format!("p_{i}"), format!("v_{i}"), format!("s_{i}")]);
    }
    h.push("u".into());
    h
}

pub fn write_trace_csv<W: Write>(trace: &SimTrace, w: W) -> Result<(), SimError> {
    let err = |e: csv::Error| SimError::Export(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(trace_header(trace.n())).map_err(err)?;
    let mut row = Vec::with_capacity(3 * trace.n() + 2);
    for k in 0..trace.len() {
        row.clear();
        row.push(trace.times[k].to_string());
        for i in 0..trace.n() {
            row.push(trace.positions[k][i].to_string());
            row.push(trace.velocities[k][i].to_string());
            row.push(trace.spacings[k][i].to_string());
        }
        row.push(trace.u[k].to_string());
        out.write_record(&row).map_err(err)?;
    }
    out.flush()?;
    Ok(())
}

/// JSON document written next to a trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSidecar {
    pub format_version: u32,
    pub columns: Vec<String>,
    pub samples: usize,
    pub metrics: Metrics,
    pub events: Vec<Event>,
    /// Free-form provenance supplied by the caller.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stamp: Option<serde_json::Value>,
}

impl MetricsSidecar {
    pub fn new(trace: &SimTrace, metrics: &Metrics, stamp: Option<serde_json::Value>) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            columns: trace_header(trace.n()),
            samples: trace.len(),
            metrics: metrics.clone(),
            events: trace.events.clone(),
            stamp,
        }
    }
}

pub fn write_metrics_json<W: Write>(sidecar: &MetricsSidecar, w: W) -> Result<(), SimError> {
    serde_json::to_writer_pretty(w, sidecar).map_err(|e| SimError::Export(e.to_string()))
}
