//! Lab sensor dataset parsing, channel mapping and vital-sign synthesis.
//!
//! The dataset is plain text with one record per line:
//!
//! ```text
//! date time epoch moteid temperature humidity light voltage
//! 2004-03-31 03:38:15.757551 2 1 19.9884 37.0933 45.08 2.69964
//! ```
//!
//! Rows with missing or unparsable columns are skipped and counted rather than
//! imputed.

use std::fs;
use std::path::Path;

use chrono::{NaiveDate, NaiveTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::VitalSpec;
use crate::model::{Channel, SensorReading};
use crate::sim::SimConfig;
use crate::time::{SimTime, MICROS_PER_SECOND};

#[derive(Clone, Debug, PartialEq)]
pub struct RawLabRecord {
    pub date: NaiveDate,
    pub time: NaiveTime,
    pub epoch: u64,
    pub mote_id: u32,
    pub temperature: f64,
    pub humidity: f64,
    pub light: f64,
    pub voltage: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabField {
    Temperature,
    Humidity,
    Light,
    Voltage,
}

impl RawLabRecord {
    pub fn field(&self, field: LabField) -> f64 {
        match field {
            LabField::Temperature => self.temperature,
            LabField::Humidity => self.humidity,
            LabField::Light => self.light,
            LabField::Voltage => self.voltage,
        }
    }
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read dataset {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(
        "{skipped} of {total} rows are malformed (first bad line {first_bad_line}); \
         this does not look like a lab sensor data file"
    )]
    MostlyMalformed { skipped: usize, total: usize, first_bad_line: usize },
}

/// Parsed records plus row accounting.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParsedDataset {
    pub records: Vec<RawLabRecord>,
    pub skipped: usize,
    /// Non-blank rows examined. Always `records.len() + skipped`.
    pub total_rows: usize,
}

pub fn parse_dataset(path: &Path, limit: Option<usize>) -> Result<ParsedDataset, IngestError> {
    let text = fs::read_to_string(path).map_err(|source| IngestError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset_str(&text, limit)
}

/// Parses dataset text. Stops once `limit` records have been accepted.
pub fn parse_dataset_str(text: &str, limit: Option<usize>) -> Result<ParsedDataset, IngestError> {
    let mut out = ParsedDataset::default();
    let mut first_bad_line = 0;
    for (lineno, line) in text.lines().enumerate() {
        if limit.is_some_and(|l| out.records.len() >= l) {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        out.total_rows += 1;
        match parse_row(line) {
            Some(record) => out.records.push(record),
            None => {
                if out.skipped == 0 {
                    first_bad_line = lineno + 1;
                }
                out.skipped += 1;
            }
        }
    }
    if out.skipped * 2 > out.total_rows {
        return Err(IngestError::MostlyMalformed {
            skipped: out.skipped,
            total: out.total_rows,
            first_bad_line,
        });
    }
    Ok(out)
}

fn parse_row(line: &str) -> Option<RawLabRecord> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 8 {
        return None;
    }
    let date = NaiveDate::parse_from_str(cols[0], "%Y-%m-%d").ok()?;
    let time = NaiveTime::parse_from_str(cols[1], "%H:%M:%S%.f").ok()?;
    let epoch = cols[2].parse().ok()?;
    let mote_id: u32 = cols[3].parse().ok()?;
    if mote_id == 0 {
        return None;
    }
    let num = |s: &str| s.parse::<f64>().ok().filter(|v| v.is_finite());
    Some(RawLabRecord {
        date,
        time,
        epoch,
        mote_id,
        temperature: num(cols[4])?,
        humidity: num(cols[5])?,
        light: num(cols[6])?,
        voltage: num(cols[7])?,
    })
}

/// How one dataset column becomes one vital-sign stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelMapping {
    pub source_field: LabField,
    pub target_channel: Channel,
    pub scale: f64,
    pub offset: f64,
    /// Readings per simulated second.
    #[serde(default = "default_replay_rate")]
    pub replay_rate: f64,
    /// Restrict to these motes; all motes when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub motes: Option<Vec<u32>>,
}

fn default_replay_rate() -> f64 {
    1.0
}

impl ChannelMapping {
    /// Lab temperature onto body temperature: 20 °C ambient lands at 36.4 °C.
    pub fn default_body_temp() -> Self {
        ChannelMapping {
            source_field: LabField::Temperature,
            target_channel: Channel::BodyTemp,
            scale: 0.1,
            offset: 34.4,
            replay_rate: 1.0,
            motes: None,
        }
    }

    pub fn apply(&self, raw: f64) -> f64 {
        self.scale * raw + self.offset
    }

    pub fn invert(&self, mapped: f64) -> f64 {
        (mapped - self.offset) / self.scale
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.scale == 0.0 || !self.scale.is_finite() || !self.offset.is_finite() {
            return Err(format!("mapping to {}: scale must be finite and non-zero", self.target_channel));
        }
        if !(self.replay_rate.is_finite() && self.replay_rate > 0.0) {
            return Err(format!("mapping to {}: replay_rate must be positive", self.target_channel));
        }
        Ok(())
    }
}

/// Offset of the `index`-th reading of a stream emitted at `rate_hz`.
pub fn replay_time(index: u64, rate_hz: f64) -> SimTime {
    SimTime::from_micros((index as f64 * MICROS_PER_SECOND as f64 / rate_hz).round() as u64)
}

/// Replays records at `mapping.replay_rate` starting at t = 0. Readings that
/// would land after the run horizon are dropped.
pub fn map_to_readings(
    records: &[RawLabRecord],
    mapping: &ChannelMapping,
    payload_bytes: u32,
    config: &SimConfig,
) -> Vec<SensorReading> {
    let horizon = config.horizon();
    records
        .iter()
        .filter(|r| mapping.motes.as_ref().is_none_or(|m| m.contains(&r.mote_id)))
        .enumerate()
        .map(|(i, r)| SensorReading {
            t: replay_time(i as u64, mapping.replay_rate),
            channel: mapping.target_channel,
            value: mapping.apply(r.field(mapping.source_field)),
            source_id: r.mote_id,
            payload_bytes,
        })
        .take_while(|r| r.t <= horizon)
        .collect()
}

/// Generates a deterministic stream for a channel with a generator profile,
/// covering `[0, horizon)`. Exception readings land outside the normal band
/// (band edges count as outside); the rest land strictly inside it.
pub fn synthesize_vitals(spec: &VitalSpec, horizon: SimTime, seed: u64) -> Vec<SensorReading> {
    let (Some(profile), Some((low, high))) = (&spec.synth, spec.band()) else {
        return Vec::new();
    };
    let stream_seed = seed ^ (spec.channel.index() as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed);
    let mut out = Vec::new();
    for i in 0.. {
        let t = replay_time(i, profile.rate_hz);
        if t >= horizon {
            break;
        }
        let value = if rng.gen::<f64>() < profile.exception_probability {
            let excursion = rng.gen::<f64>() * 2.0 * profile.jitter;
            if rng.gen_bool(0.5) {
                low - excursion
            } else {
                high + excursion
            }
        } else {
            let v = profile.mean + (rng.gen::<f64>() * 2.0 - 1.0) * profile.jitter;
            if spec.in_band(v) {
                v
            } else {
                (low + high) / 2.0
            }
        };
        out.push(SensorReading {
            t,
            channel: spec.channel,
            value,
            source_id: profile.source_id,
            payload_bytes: spec.raw_payload_bytes,
        });
    }
    out
}

/// Writes `rows` lines in the lab dataset format with plausible indoor
/// conditions: a slow daily temperature cycle, occasional sensor faults
/// (readings above 100 °C), and a small share of truncated rows.
///
/// The first line is always the canonical first record of mote 1.
pub fn synthetic_lab_rows(rows: usize, seed: u64) -> String {
    use std::f64::consts::TAU;
    use std::fmt::Write;

    const MOTES: [u32; 4] = [1, 2, 3, 4];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = String::with_capacity(rows * 64);
    let start = NaiveDate::from_ymd_opt(2004, 3, 31)
        .unwrap()
        .and_hms_micro_opt(3, 38, 15, 757_551)
        .unwrap();
    let mut elapsed_us: i64 = 0;
    // Sum of four uniforms: cheap bell-shaped noise.
    let noise = |rng: &mut ChaCha8Rng, sd: f64| {
        let s: f64 = (0..4).map(|_| rng.gen::<f64>()).sum::<f64>() - 2.0;
        s * sd * 1.732
    };
    for i in 0..rows {
        if i == 0 {
            out.push_str("2004-03-31 03:38:15.757551 2 1 19.9884 37.0933 45.08 2.69964\n");
            continue;
        }
        elapsed_us += 7_000_000 + rng.gen_range(0..1_500_000);
        let ts = start + chrono::Duration::microseconds(elapsed_us);
        let mote = MOTES[i % MOTES.len()];
        let epoch = 2 + (i / MOTES.len()) as u64;
        let day_phase = TAU * (elapsed_us as f64 / 1e6) / 86_400.0;
        let mut temperature = 20.0 + 3.0 * (day_phase - 1.0).sin() + mote as f64 * 0.3 + noise(&mut rng, 1.0);
        if rng.gen::<f64>() < 0.004 {
            temperature = 100.0 + rng.gen::<f64>() * 30.0;
        }
        let humidity = 37.0 - 0.8 * (temperature.min(40.0) - 20.0) + noise(&mut rng, 1.5);
        let light = (400.0 * day_phase.sin()).max(0.0) + rng.gen::<f64>() * 40.0;
        let voltage = 2.69964 - 2.0e-6 * elapsed_us as f64 / 1e6 + noise(&mut rng, 0.01);
        let mut line = String::new();
        write!(
            line,
            "{} {} {} {} {:.4} {:.4} {:.2} {:.5}",
            ts.format("%Y-%m-%d"),
            ts.format("%H:%M:%S%.6f"),
            epoch,
            mote,
            temperature,
            humidity,
            light,
            voltage
        )
        .unwrap();
        if rng.gen::<f64>() < 0.01 {
            // Sparse row: drop trailing columns.
            let keep = rng.gen_range(5..8);
            line = line.split(' ').take(keep).collect::<Vec<_>>().join(" ");
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}
