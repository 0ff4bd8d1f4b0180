//! Per-mode metrics and cross-mode comparison.
//!
//! Definitions used throughout:
//!
//! * *data traffic*: bytes leaving the Home Monitor onto any link;
//! * *bandwidth consumption*: bytes delivered per link within the run;
//! * *compute time*: simulated processing charged, items × per-item time.
//!
//! Percentages are always derived from integer counters at the end of a run.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::Disposition;
use crate::network::{LinkCounters, LinkName, MessageKind};
use crate::pipeline::{compute_seconds, Effect, Mode, OnlineCounters, Payload, ReadingOutcome};
use crate::sim::{EventKind, TraceRecord};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub readings_generated: u64,
    pub bytes_generated: u64,
    pub bytes_forwarded: u64,
    pub traffic_reduction_pct: f64,
    /// False when nothing was generated; the reduction is then reported as 0.
    pub reduction_defined: bool,
    /// True when forwarded bytes exceeded generated bytes and the reduction was clamped to 0.
    pub reduction_clamped: bool,
    pub compute_time_us: u64,
    pub compute_time_s: f64,
    /// Delivered bytes per link.
    pub bandwidth_consumed_bytes: BTreeMap<LinkName, u64>,
    /// Bytes handed to each link but still in transit when the run ended.
    pub bytes_in_flight: BTreeMap<LinkName, u64>,
    pub alarm_count: u64,
    pub queue_depth_max: BTreeMap<LinkName, u64>,
    pub buffered: u64,
    pub sent_onward: u64,
    pub flagged: u64,
    pub absorbed: u64,
    pub co_processed: u64,
    pub overflow_raw: u64,
    pub summaries: u64,
    pub reports: u64,
    pub input_hash: String,
    pub trace_hash: String,
}

/// `100 * (1 - after / before)`, or 0 when `before` is 0.
pub fn reduction_pct(before: f64, after: f64) -> f64 {
    if before == 0.0 {
        0.0
    } else {
        100.0 * (1.0 - after / before)
    }
}

impl MetricsReport {
    pub fn from_counters(mode: Mode, c: &OnlineCounters, links: &BTreeMap<LinkName, LinkCounters>) -> Self {
        let reduction = reduction_pct(c.bytes_generated as f64, c.bytes_forwarded as f64);
        MetricsReport {
            mode,
            readings_generated: c.readings,
            bytes_generated: c.bytes_generated,
            bytes_forwarded: c.bytes_forwarded,
            traffic_reduction_pct: reduction.clamp(0.0, 100.0),
            reduction_defined: c.bytes_generated > 0,
            reduction_clamped: reduction < 0.0,
            compute_time_us: c.compute_us,
            compute_time_s: compute_seconds(c.compute_us),
            bandwidth_consumed_bytes: links.iter().map(|(k, v)| (*k, v.bytes_delivered)).collect(),
            bytes_in_flight: links.iter().map(|(k, v)| (*k, v.bytes_sent - v.bytes_delivered)).collect(),
            alarm_count: c.alarms,
            queue_depth_max: links.iter().map(|(k, v)| (*k, v.max_queue_depth)).collect(),
            buffered: c.buffered,
            sent_onward: c.sent_onward,
            flagged: c.flagged,
            absorbed: c.absorbed,
            co_processed: c.co_processed,
            overflow_raw: c.overflow_raw,
            summaries: c.summaries,
            reports: c.reports,
            input_hash: String::new(),
            trace_hash: String::new(),
        }
    }

    pub fn total_bandwidth(&self) -> u64 {
        self.bandwidth_consumed_bytes.values().sum()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Rebuilds the link counters from `TransmitComplete` records and enqueue effects.
pub fn link_counters_from_trace(records: &[TraceRecord<Payload, Effect>]) -> BTreeMap<LinkName, LinkCounters> {
    let mut links: BTreeMap<LinkName, LinkCounters> =
        LinkName::ALL.iter().map(|l| (*l, LinkCounters::default())).collect();
    for record in records {
        if let Payload::Delivered { link, message } = &record.payload {
            let c = links.entry(*link).or_default();
            c.messages_delivered += 1;
            c.bytes_delivered += message.payload_bytes as u64;
        }
        for effect in &record.effects {
            if let Effect::Enqueued { link, bytes, depth, .. } = effect {
                let c = links.entry(*link).or_default();
                c.messages_sent += 1;
                c.bytes_sent += *bytes as u64;
                c.max_queue_depth = c.max_queue_depth.max(*depth);
            }
        }
    }
    links
}

/// Computes a report from a completed trace and the per-link counters.
pub fn compute_metrics(
    mode: Mode,
    records: &[TraceRecord<Payload, Effect>],
    links: &BTreeMap<LinkName, LinkCounters>,
) -> MetricsReport {
    let mut c = OnlineCounters::default();
    for record in records {
        if let (EventKind::ReadingGenerated, Payload::Reading(r)) = (record.kind, &record.payload) {
            c.readings += 1;
            c.bytes_generated += r.payload_bytes as u64;
        }
        for effect in &record.effects {
            match effect {
                Effect::Ingested { outcome, .. } => match outcome {
                    ReadingOutcome::Unfiltered => c.unfiltered += 1,
                    ReadingOutcome::Alarm { .. } => c.alarms += 1,
                    ReadingOutcome::Filtered(Disposition::Buffered) => c.buffered += 1,
                    ReadingOutcome::Filtered(Disposition::SentOnward { flagged }) => {
                        c.sent_onward += 1;
                        c.flagged += *flagged as u64;
                    }
                },
                Effect::Flushed { processed, co_processed, overflow, .. } => {
                    c.absorbed += (*processed + *co_processed) as u64;
                    c.co_processed += *co_processed as u64;
                    c.overflow_raw += *overflow as u64;
                }
                Effect::Charged { micros, .. } => c.compute_us += micros,
                Effect::Enqueued { kind, bytes, .. } => {
                    c.bytes_forwarded += *bytes as u64;
                    match kind {
                        MessageKind::Summary => c.summaries += 1,
                        MessageKind::AnalyticsReport => c.reports += 1,
                        _ => {}
                    }
                }
                Effect::Reported { .. } => {}
            }
        }
    }
    MetricsReport::from_counters(mode, &c, links)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot compare {a} and {b}: they were run on different inputs")]
pub struct InputMismatch {
    pub a: Mode,
    pub b: Mode,
}

/// Relative change from a reference run to a candidate run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeDelta {
    pub reference: Mode,
    pub candidate: Mode,
    pub forwarded_reduction_pct: f64,
    pub compute_reduction_pct: f64,
    pub bandwidth_saving_pct: f64,
    /// Difference in traffic reduction, percentage points.
    pub traffic_reduction_delta_pts: f64,
}

impl ModeDelta {
    pub fn between(reference: &MetricsReport, candidate: &MetricsReport) -> Result<Self, InputMismatch> {
        if reference.input_hash != candidate.input_hash {
            return Err(InputMismatch { a: reference.mode, b: candidate.mode });
        }
        Ok(ModeDelta {
            reference: reference.mode,
            candidate: candidate.mode,
            forwarded_reduction_pct: reduction_pct(reference.bytes_forwarded as f64, candidate.bytes_forwarded as f64),
            compute_reduction_pct: reduction_pct(reference.compute_time_us as f64, candidate.compute_time_us as f64),
            bandwidth_saving_pct: reduction_pct(reference.total_bandwidth() as f64, candidate.total_bandwidth() as f64),
            traffic_reduction_delta_pts: candidate.traffic_reduction_pct - reference.traffic_reduction_pct,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub baseline: MetricsReport,
    pub filtered: MetricsReport,
    pub managed: MetricsReport,
    pub filtered_vs_baseline: ModeDelta,
    pub managed_vs_baseline: ModeDelta,
    pub managed_vs_filtered: ModeDelta,
}

pub fn compare_modes(
    baseline: &MetricsReport,
    filtered: &MetricsReport,
    managed: &MetricsReport,
) -> Result<ComparisonTable, InputMismatch> {
    Ok(ComparisonTable {
        filtered_vs_baseline: ModeDelta::between(baseline, filtered)?,
        managed_vs_baseline: ModeDelta::between(baseline, managed)?,
        managed_vs_filtered: ModeDelta::between(filtered, managed)?,
        baseline: baseline.clone(),
        filtered: filtered.clone(),
        managed: managed.clone(),
    })
}

fn num(v: f64) -> String {
    format!("{v:.4}")
}

impl ComparisonTable {
    /// One metric per row, one mode per column, comma separated. Lines starting
    /// with `#` state the definitions.
    pub fn to_delimited(&self) -> String {
        let mut out = String::new();
        out.push_str("# data traffic = bytes leaving the Home Monitor onto any link\n");
        out.push_str("# bandwidth = bytes delivered per link within the run horizon (payload bytes only)\n");
        out.push_str("# compute time = simulated processing charged (items x per-item time)\n");
        out.push_str("# *_vs_baseline and managed_vs_filtered rows are relative to the reference column\n");
        out.push_str("metric,baseline,filtered,managed\n");
        let modes = [&self.baseline, &self.filtered, &self.managed];
        let mut row = |name: &str, f: &dyn Fn(&MetricsReport) -> String| {
            let cells: Vec<String> = modes.iter().map(|m| f(m)).collect();
            writeln!(out, "{name},{}", cells.join(",")).unwrap();
        };
        row("readings_generated", &|m| m.readings_generated.to_string());
        row("bytes_generated", &|m| m.bytes_generated.to_string());
        row("bytes_forwarded", &|m| m.bytes_forwarded.to_string());
        row("traffic_reduction_pct", &|m| num(m.traffic_reduction_pct));
        row("compute_time_s", &|m| num(m.compute_time_s));
        for link in LinkName::ALL {
            row(&format!("bandwidth_{link}_bytes"), &|m| {
                m.bandwidth_consumed_bytes.get(&link).copied().unwrap_or(0).to_string()
            });
        }
        row("bandwidth_total_bytes", &|m| m.total_bandwidth().to_string());
        row("alarm_count", &|m| m.alarm_count.to_string());
        for link in LinkName::ALL {
            row(&format!("queue_depth_max_{link}"), &|m| {
                m.queue_depth_max.get(&link).copied().unwrap_or(0).to_string()
            });
        }
        row("summaries", &|m| m.summaries.to_string());
        row("reports", &|m| m.reports.to_string());
        row("overflow_raw_items", &|m| m.overflow_raw.to_string());
        row("co_processed_items", &|m| m.co_processed.to_string());

        let (fb, mb) = (&self.filtered_vs_baseline, &self.managed_vs_baseline);
        writeln!(out, "compute_reduction_vs_baseline_pct,0.0000,{},{}", num(fb.compute_reduction_pct), num(mb.compute_reduction_pct)).unwrap();
        writeln!(out, "bandwidth_saving_vs_baseline_pct,0.0000,{},{}", num(fb.bandwidth_saving_pct), num(mb.bandwidth_saving_pct)).unwrap();
        let mf = &self.managed_vs_filtered;
        writeln!(out, "managed_vs_filtered_bandwidth_saving_pct,,,{}", num(mf.bandwidth_saving_pct)).unwrap();
        writeln!(out, "managed_vs_filtered_compute_reduction_pct,,,{}", num(mf.compute_reduction_pct)).unwrap();
        writeln!(out, "managed_vs_filtered_traffic_delta_pts,,,{}", num(mf.traffic_reduction_delta_pts)).unwrap();
        out
    }
}
