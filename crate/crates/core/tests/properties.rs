mod support;

use std::collections::BTreeMap;

use homesim::config::RunConfig;
use homesim::filter::{Disposition, GeneratorProfile, VitalSpec};
use homesim::ingest::{map_to_readings, parse_dataset_str, synthesize_vitals, synthetic_lab_rows, ChannelMapping, LabField};
use homesim::metrics::{compute_metrics, link_counters_from_trace};
use homesim::model::{merge_streams, Channel, SensorReading};
use homesim::network::{transmission_time, LinkName, MessageKind};
use homesim::pipeline::{simulate, Effect, Mode, Payload, ReadingOutcome};
use homesim::sim::{EntityFault, EventKind, EntityId, Handler, SimConfig, SimEvent, Simulation, Trace};
use homesim::workload::{run_analytics, StoreOrigin};
use homesim::SimTime;
use proptest::prelude::*;

/// Short synthetic-only scenario: every channel generated, no dataset.
fn synthetic_config(seed: u64, ticks: u64, flush_s: f64, p_exc: f64) -> RunConfig {
    let mut config = RunConfig { mappings: Vec::new(), ..RunConfig::default() };
    config.sim.seed = seed;
    config.sim.duration_ticks = ticks;
    config.workload.report_period_s = 120.0;
    config.workload.report_window_s = 120.0;
    for v in &mut config.vitals {
        v.flush_period_s = flush_s;
        if v.synth.is_none() {
            v.synth = Some(GeneratorProfile {
                mean: 36.5,
                jitter: 0.2,
                exception_probability: p_exc,
                rate_hz: 2.0,
                source_id: 1000,
            });
        } else if let Some(s) = v.synth.as_mut() {
            s.exception_probability = p_exc;
        }
    }
    config
}

fn readings_for(config: &RunConfig) -> Vec<SensorReading> {
    homesim::runner::build_readings(config).unwrap()
}

fn scenario() -> impl Strategy<Value = RunConfig> {
    (any::<u64>(), 30u64..400, prop_oneof![Just(7.0), Just(30.0), Just(60.0), Just(150.0)], 0.0f64..0.5)
        .prop_map(|(seed, ticks, flush, p)| synthetic_config(seed, ticks, flush, p))
}

// ---- engine ----

struct Echo {
    fanout: Vec<(u64, u32)>,
}

impl Handler<u32, ()> for Echo {
    fn handle(&mut self, event: &SimEvent<u32>, sim: &mut Simulation<u32, ()>) -> Result<(), EntityFault> {
        if let Some((delay, payload)) = self.fanout.pop() {
            let at = SimTime::from_micros(event.time.as_micros() + delay);
            if at <= sim.horizon() {
                sim.schedule(at, EventKind::ReadingGenerated, EntityId(payload % 3), payload).unwrap();
            }
        }
        Ok(())
    }
}

fn run_echo(initial: &[(u64, u32)], fanout: &[(u64, u32)]) -> Trace<u32, ()> {
    let config = SimConfig { duration_ticks: 10, ..SimConfig::default() };
    let mut sim = Simulation::new(&config).unwrap();
    for &(t, p) in initial {
        sim.schedule(SimTime::from_micros(t), EventKind::ReadingGenerated, EntityId(0), p).unwrap();
    }
    sim.run(&mut Echo { fanout: fanout.to_vec() }).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn engine_never_travels_back_and_keeps_fifo(
        initial in prop::collection::vec((0u64..12_000_000, any::<u32>()), 0..80),
        fanout in prop::collection::vec((prop_oneof![Just(0u64), 0u64..2_000_000], any::<u32>()), 0..80),
    ) {
        let trace = run_echo(&initial, &fanout);
        for pair in trace.records.windows(2) {
            prop_assert!(pair[0].time <= pair[1].time);
            if pair[0].time == pair[1].time {
                prop_assert!(pair[0].seq < pair[1].seq);
            }
        }
        prop_assert!(trace.records.iter().all(|r| r.time <= SimTime::from_micros(10_000_000)));
        let delivered_initial = initial.iter().filter(|(t, _)| *t <= 10_000_000).count();
        prop_assert!(trace.records.len() >= delivered_initial);
        prop_assert_eq!(trace.hash_hex(), run_echo(&initial, &fanout).hash_hex());
    }
}

#[test]
fn one_event_per_tick_for_a_thousand_ticks() {
    struct Ticker;
    impl Handler<(), ()> for Ticker {
        fn handle(&mut self, event: &SimEvent<()>, sim: &mut Simulation<(), ()>) -> Result<(), EntityFault> {
            let next = SimTime::from_micros(event.time.as_micros() + 1_000_000);
            if next < sim.horizon() {
                sim.schedule(next, EventKind::ReadingGenerated, EntityId(0), ()).map_err(|e| EntityFault(e.to_string()))?;
            }
            Ok(())
        }
    }
    let mut sim = Simulation::new(&SimConfig::default()).unwrap();
    sim.schedule(SimTime::ZERO, EventKind::ReadingGenerated, EntityId(0), ()).unwrap();
    let trace = sim.run(&mut Ticker).unwrap();
    assert_eq!(trace.records.len(), 1000);
    assert_eq!(trace.undelivered, 0);
}

// ---- ingest ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2_000))]

    #[test]
    fn parsed_plus_skipped_is_total(rows in 1usize..400, seed in any::<u64>(), junk in prop::collection::vec("[a-z0-9 .:-]{0,40}", 0..30)) {
        let mut text = synthetic_lab_rows(rows, seed);
        for j in &junk {
            text.push_str(j);
            text.push('\n');
        }
        if let Ok(parsed) = parse_dataset_str(&text, None) {
            prop_assert_eq!(parsed.records.len() + parsed.skipped, parsed.total_rows);
        }
    }

    #[test]
    fn affine_round_trip(raw in -1e6f64..1e6, scale in prop_oneof![1e-3f64..1e3, -1e3f64..-1e-3], offset in -1e3f64..1e3) {
        let m = ChannelMapping { scale, offset, ..ChannelMapping::default_body_temp() };
        let back = m.invert(m.apply(raw));
        // Cancellation in `raw * scale + offset` loses digits relative to raw
        // when the offset dominates; measure the error against that magnitude.
        let magnitude = raw.abs().max((offset / scale).abs()).max(1.0);
        prop_assert!((back - raw).abs() <= 1e-9 * magnitude, "raw {} back {}", raw, back);
    }

    #[test]
    fn generated_streams_are_monotone(seed in any::<u64>(), rate in 0.1f64..20.0, ticks in 1u64..300) {
        let spec = VitalSpec {
            synth: Some(GeneratorProfile { mean: 72.0, jitter: 10.0, exception_probability: 0.1, rate_hz: rate, source_id: 7 }),
            ..VitalSpec::banded(Channel::HRM, 50.0, 100.0)
        };
        let horizon = SimTime::from_micros(ticks * 1_000_000);
        let stream = synthesize_vitals(&spec, horizon, seed);
        prop_assert!(stream.windows(2).all(|w| w[0].t < w[1].t));
        prop_assert!(stream.iter().all(|r| r.t < horizon));

        let records = parse_dataset_str(&synthetic_lab_rows(200, seed), None).unwrap().records;
        let mapping = ChannelMapping { replay_rate: rate, source_field: LabField::Humidity, ..ChannelMapping::default_body_temp() };
        let config = SimConfig { duration_ticks: ticks, ..SimConfig::default() };
        let replay = map_to_readings(&records, &mapping, 16, &config);
        prop_assert!(replay.windows(2).all(|w| w[0].t < w[1].t));
    }
}

// ---- pipeline-level invariants ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dispositions_partition_ingested_readings(config in scenario()) {
        let readings = readings_for(&config);
        let run = simulate(&config, Mode::Filtered, &readings).unwrap();
        let c = &run.counters;
        prop_assert_eq!(c.buffered + c.sent_onward + c.alarms, c.readings);
        prop_assert_eq!(c.readings, readings.iter().filter(|r| r.t <= config.sim.horizon()).count() as u64);

        let bands: BTreeMap<Channel, (f64, f64)> = config.vitals.iter().map(|v| (v.channel, v.band().unwrap())).collect();
        for rec in &run.trace.records {
            let Payload::Reading(r) = &rec.payload else { continue };
            let (lo, hi) = bands[&r.channel];
            for e in &rec.effects {
                if let Effect::Ingested { outcome: ReadingOutcome::Filtered(d), .. } = e {
                    prop_assert_eq!(*d == Disposition::Buffered, lo < r.value && r.value < hi);
                }
            }
        }
        // Everything buffered is eventually absorbed or forwarded raw.
        prop_assert_eq!(c.absorbed + c.overflow_raw, c.buffered);
    }

    #[test]
    fn alarms_leave_at_ingestion_time(config in scenario()) {
        let readings = readings_for(&config);
        let run = simulate(&config, Mode::Managed, &readings).unwrap();
        for rec in &run.trace.records {
            let is_alarm = rec.effects.iter().any(|e| matches!(e, Effect::Ingested { outcome: ReadingOutcome::Alarm { .. }, .. }));
            let dispatched: Vec<_> = rec
                .effects
                .iter()
                .filter(|e| matches!(e, Effect::Enqueued { link: LinkName::Gsm, kind: MessageKind::Alarm, .. }))
                .collect();
            prop_assert_eq!(is_alarm, dispatched.len() == 1);
        }
    }

    #[test]
    fn summaries_match_absorbed_readings(config in scenario(), managed in any::<bool>()) {
        let readings = readings_for(&config);
        let mode = if managed { Mode::Managed } else { Mode::Filtered };
        let run = simulate(&config, mode, &readings).unwrap();
        let mut checked = 0;
        for rec in &run.trace.records {
            let Payload::PassComplete { channel, seq, summary: Some(s), .. } = &rec.payload else { continue };
            let points = run.store.absorbed_by(*channel, *seq);
            prop_assert_eq!(points.len() as u32, s.count);
            let min = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
            let max = points.iter().map(|p| p.value).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for p in &points {
                sum += p.value;
            }
            prop_assert_eq!(s.min, min);
            prop_assert_eq!(s.max, max);
            prop_assert_eq!(s.mean, (sum / points.len() as f64).clamp(min, max));
            checked += 1;
        }
        prop_assert_eq!(checked as u64, run.counters.summaries);
        let summaries = run.counters.summaries;
        let in_range = run.store.channels().all(|ch| {
            run.store.series(ch).iter().all(|p| match p.origin {
                StoreOrigin::Summary(seq) => seq < summaries,
                StoreOrigin::Exception => true,
            })
        });
        prop_assert!(in_range);
    }

    #[test]
    fn passes_respect_the_deadline(config in scenario()) {
        let readings = readings_for(&config);
        let run = simulate(&config, Mode::Filtered, &readings).unwrap();
        let bound = config.workload.deadline().as_micros() + config.workload.algorithm_time().as_micros();
        for rec in &run.trace.records {
            for e in &rec.effects {
                if let Effect::Flushed { items, processed, overflow, .. } = e {
                    prop_assert_eq!(processed + overflow, *items);
                    prop_assert!(*processed as u64 * config.workload.algorithm_time().as_micros() <= bound);
                    prop_assert!(*processed as usize <= config.workload.items_per_pass());
                }
            }
        }
    }

    #[test]
    fn link_counters_equal_delivered_payloads(config in scenario(), mode_ix in 0usize..3) {
        let readings = readings_for(&config);
        let run = simulate(&config, Mode::ALL[mode_ix], &readings).unwrap();
        let mut delivered: BTreeMap<LinkName, u64> = BTreeMap::new();
        let mut last_delivery: BTreeMap<LinkName, SimTime> = BTreeMap::new();
        for rec in &run.trace.records {
            if let Payload::Delivered { link, message } = &rec.payload {
                *delivered.entry(*link).or_default() += message.payload_bytes as u64;
                let sent = message.sent_at.unwrap();
                prop_assert_eq!(rec.time - sent, transmission_time(message.payload_bytes, if *link == LinkName::Gsm { config.links.gsm_bps } else { config.links.lorawan_bps }));
                if let Some(prev) = last_delivery.insert(*link, rec.time) {
                    prop_assert!(sent >= prev);
                }
            }
        }
        for (link, c) in &run.links {
            prop_assert_eq!(c.bytes_delivered, delivered.get(link).copied().unwrap_or(0));
        }
    }

    #[test]
    fn metrics_recompute_from_persisted_trace(config in scenario(), mode_ix in 0usize..3) {
        let readings = readings_for(&config);
        let run = simulate(&config, Mode::ALL[mode_ix], &readings).unwrap();
        let mut text = Vec::new();
        run.trace.write_jsonl(&mut text).unwrap();
        let records = Trace::<Payload, Effect>::read_jsonl(std::str::from_utf8(&text).unwrap()).unwrap();
        prop_assert_eq!(&records, &run.trace.records);
        let links = link_counters_from_trace(&records);
        prop_assert_eq!(&links, &run.links);
        let mut again = compute_metrics(run.mode, &records, &links);
        again.input_hash = run.report.input_hash.clone();
        again.trace_hash = run.report.trace_hash.clone();
        prop_assert_eq!(again, run.report);
    }

    #[test]
    fn filtering_never_adds_traffic_with_defaults(seed in any::<u64>(), ticks in 60u64..600) {
        let mut config = synthetic_config(seed, ticks, 60.0, 0.05);
        config.workload = Default::default();
        let readings = readings_for(&config);
        let base = simulate(&config, Mode::Baseline, &readings).unwrap().report;
        let filt = simulate(&config, Mode::Filtered, &readings).unwrap().report;
        prop_assert!(filt.bytes_forwarded <= base.bytes_forwarded);
    }

    #[test]
    fn identical_inputs_give_identical_traces(config in scenario(), mode_ix in 0usize..3) {
        let mode = Mode::ALL[mode_ix];
        let a = simulate(&config, mode, &readings_for(&config)).unwrap();
        let b = simulate(&config, mode, &readings_for(&config)).unwrap();
        prop_assert_eq!(a.report.trace_hash, b.report.trace_hash);
        let store = &a.store;
        let window = config.workload.report_window();
        let limits = &config.workload.slope_limits;
        prop_assert_eq!(run_analytics(store, config.sim.horizon(), window, limits, 64), run_analytics(store, config.sim.horizon(), window, limits, 64));
    }
}

#[test]
fn lorawan_congestion_does_not_delay_alarms() {
    let alarm_deliveries = |lorawan_bps: u64| {
        let mut config = synthetic_config(11, 300, 60.0, 0.3);
        config.links.lorawan_bps = lorawan_bps;
        let run = simulate(&config, Mode::Filtered, &readings_for(&config)).unwrap();
        let times: Vec<SimTime> = run
            .trace
            .records
            .iter()
            .flat_map(|r| r.effects.iter())
            .filter_map(|e| match e {
                Effect::Enqueued { link: LinkName::Gsm, delivered_at, .. } => Some(*delivered_at),
                _ => None,
            })
            .collect();
        let lora_backlog = run.report.bytes_in_flight[&LinkName::Lorawan];
        (times, lora_backlog)
    };
    let (fast, light) = alarm_deliveries(50_000);
    let (slow, heavy) = alarm_deliveries(100);
    assert!(!fast.is_empty());
    assert!(heavy > light, "the slow link should be backed up: {heavy} vs {light}");
    assert_eq!(fast, slow);
}

#[test]
fn zero_readings_give_an_undefined_reduction() {
    let config = RunConfig { mappings: Vec::new(), vitals: vec![VitalSpec::banded(Channel::BodyTemp, 36.0, 37.0)], alarms: Vec::new(), ..RunConfig::default() };
    let run = simulate(&config, Mode::Filtered, &[]).unwrap();
    assert!(!run.report.reduction_defined);
    assert_eq!(run.report.traffic_reduction_pct, 0.0);
    // Reports are still produced from an empty store.
    assert_eq!(run.report.reports, 3);
}

#[test]
fn merged_stream_is_independent_of_input_order() {
    let config = synthetic_config(3, 120, 60.0, 0.1);
    let streams: Vec<Vec<SensorReading>> = config
        .vitals
        .iter()
        .map(|v| synthesize_vitals(v, config.sim.horizon(), config.sim.seed))
        .collect();
    let mut reversed = streams.clone();
    reversed.reverse();
    assert_eq!(merge_streams(streams), merge_streams(reversed));
}

#[test]
fn shipped_default_config_matches_built_in_defaults() {
    let mut config = homesim::load_config(&support::repo_file("configs/default.toml")).unwrap();
    assert_eq!(config.dataset.as_deref().map(|p| p.canonicalize().unwrap()), Some(support::sample_dataset().canonicalize().unwrap()));
    config.dataset = None;
    assert_eq!(config, RunConfig::default());

    // The tuned config differs only in the flush period.
    let mut tuned = homesim::load_config(&support::repo_file("configs/tuned.toml")).unwrap();
    assert!(tuned.vitals.iter().all(|v| v.flush_period_s == 70.0));
    for v in &mut tuned.vitals {
        v.flush_period_s = 60.0;
    }
    tuned.dataset = None;
    assert_eq!(tuned, RunConfig::default());
}
