//! Straight-line replay of the default scenario: no event queue, no shared code
//! with the pipeline beyond the input generator. Used as a reference for the
//! simulator's counters.

use homesim::config::RunConfig;
use homesim::ingest::synthesize_vitals;
use homesim::model::{Channel, SensorReading};
use homesim::pipeline::Mode;

#[derive(Debug, Default, Clone, PartialEq, Eq)]
pub struct OracleCounters {
    pub readings: u64,
    pub bytes_generated: u64,
    pub bytes_forwarded: u64,
    pub alarm_count: u64,
    pub compute_us: u64,
}

/// Rows with exactly eight columns whose numeric fields parse and whose mote
/// id is positive; everything else is skipped.
fn temperatures(text: &str) -> Vec<(u32, f64)> {
    let mut out = Vec::new();
    for line in text.lines() {
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() != 8 {
            continue;
        }
        let (Ok(_epoch), Ok(mote)) = (cols[2].parse::<u64>(), cols[3].parse::<u32>()) else { continue };
        let nums: Vec<f64> = match cols[4..].iter().map(|c| c.parse::<f64>()).collect() {
            Ok(v) => v,
            Err(_) => continue,
        };
        if mote == 0 || nums.iter().any(|v| !v.is_finite()) {
            continue;
        }
        out.push((mote, nums[0]));
    }
    out
}

/// The exact reading stream the default config should produce.
pub fn readings(config: &RunConfig, dataset_text: &str) -> Vec<SensorReading> {
    let horizon_us = config.sim.duration_ticks * (config.sim.tick_seconds * 1e6) as u64;
    let mapping = &config.mappings[0];
    assert_eq!(mapping.target_channel, Channel::BodyTemp);
    let temp_bytes = config.vitals.iter().find(|v| v.channel == Channel::BodyTemp).unwrap().raw_payload_bytes;
    let step_us = (1e6 / mapping.replay_rate) as u64;
    let mut all = Vec::new();
    for (i, (mote, temp)) in temperatures(dataset_text).into_iter().enumerate() {
        let t = i as u64 * step_us;
        if t > horizon_us {
            break;
        }
        all.push(SensorReading {
            t: homesim::SimTime::from_micros(t),
            channel: Channel::BodyTemp,
            value: temp * mapping.scale + mapping.offset,
            source_id: mote,
            payload_bytes: temp_bytes,
        });
    }
    for v in config.vitals.iter().filter(|v| v.synth.is_some()) {
        all.extend(synthesize_vitals(v, homesim::SimTime::from_micros(horizon_us), config.sim.seed));
    }
    all.sort_by_key(|r| (r.t.as_micros(), r.source_id, r.channel.index()));
    all
}

/// Replays `readings` through the default pipeline rules by hand.
pub fn replay(config: &RunConfig, mode: Mode, readings: &[SensorReading]) -> OracleCounters {
    let horizon = config.sim.duration_ticks * (config.sim.tick_seconds * 1e6) as u64;
    let algo = (config.workload.algorithm_time_s * 1e6).round() as u64;
    let deadline = (config.workload.analytics_deadline_s * 1e6).round() as u64;
    let cap = config.workload.buffer_storage;
    let per_pass = (1..=cap).find(|k| *k as u64 * algo >= deadline).unwrap_or(cap);
    let summary_bytes = config.payloads.summary_bytes as u64;
    let alarm_bytes = config.payloads.alarm_bytes as u64;

    let mut c = OracleCounters::default();
    let in_window: Vec<&SensorReading> = readings.iter().filter(|r| r.t.as_micros() <= horizon).collect();

    if mode == Mode::Baseline {
        for r in in_window {
            c.readings += 1;
            c.bytes_generated += r.payload_bytes as u64;
            c.bytes_forwarded += r.payload_bytes as u64;
            c.compute_us += algo;
        }
        return c;
    }

    let bands: Vec<(Channel, f64, f64, u64)> = config
        .vitals
        .iter()
        .map(|v| (v.channel, v.normal_low.unwrap(), v.normal_high.unwrap(), (v.flush_period_s * 1e6) as u64))
        .collect();
    let mut buffers: Vec<Vec<u64>> = vec![Vec::new(); bands.len()];
    let mut next_flush: Vec<u64> = bands.iter().map(|b| b.3.min(horizon)).collect();
    let mut hrm: Option<f64> = None;
    let mut bp: Option<f64> = None;

    let mut pass = |items: Vec<u64>, c: &mut OracleCounters| {
        if items.is_empty() {
            return;
        }
        let processed = items.len().min(per_pass);
        let rest = &items[processed..];
        c.compute_us += processed as u64 * algo;
        c.bytes_forwarded += summary_bytes;
        if mode == Mode::Managed {
            c.compute_us += rest.len() as u64 * algo;
        } else if !rest.is_empty() {
            c.bytes_forwarded += rest.iter().sum::<u64>();
        }
    };

    let flush_due = |before: Option<u64>, buffers: &mut Vec<Vec<u64>>, next_flush: &mut Vec<u64>, c: &mut OracleCounters, pass: &mut dyn FnMut(Vec<u64>, &mut OracleCounters)| {
        for i in 0..bands.len() {
            while next_flush[i] != u64::MAX && before.is_none_or(|t| next_flush[i] < t) {
                pass(std::mem::take(&mut buffers[i]), c);
                next_flush[i] = if next_flush[i] < horizon { (next_flush[i] + bands[i].3).min(horizon) } else { u64::MAX };
            }
        }
    };

    for r in in_window {
        flush_due(Some(r.t.as_micros()), &mut buffers, &mut next_flush, &mut c, &mut pass);
        c.readings += 1;
        c.bytes_generated += r.payload_bytes as u64;
        match r.channel {
            Channel::HRM => hrm = Some(r.value),
            Channel::BP => bp = Some(r.value),
            _ => {}
        }
        if matches!(r.channel, Channel::HRM | Channel::BP) {
            if let (Some(h), Some(b)) = (hrm, bp) {
                if h < 40.0 || b < 90.0 {
                    c.alarm_count += 1;
                    c.bytes_forwarded += alarm_bytes;
                    continue;
                }
            }
        }
        let i = bands.iter().position(|b| b.0 == r.channel).unwrap();
        let (_, lo, hi, _) = bands[i];
        if lo < r.value && r.value < hi {
            if buffers[i].len() == cap {
                pass(std::mem::take(&mut buffers[i]), &mut c);
            }
            buffers[i].push(r.payload_bytes as u64);
        } else {
            c.compute_us += algo;
            c.bytes_forwarded += r.payload_bytes as u64;
        }
    }
    flush_due(None, &mut buffers, &mut next_flush, &mut c, &mut pass);

    let report_period = (config.workload.report_period_s * 1e6) as u64;
    c.bytes_forwarded += (horizon / report_period) * config.payloads.report_bytes as u64;
    c
}
