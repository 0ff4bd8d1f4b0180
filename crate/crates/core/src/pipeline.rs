//! The Home Monitor pipeline as a simulation handler.
//!
//! Three modes share one input stream:
//!
//! * **baseline**: no edge processing. Every reading is handled once by the
//!   Home Monitor and forwarded raw over LoRaWAN.
//! * **filtered**: stage-one range filtering and alarm detection. Flushed edge
//!   buffers go through one deadline-bounded pass; items the pass could not
//!   reach are forwarded raw to the health cloud.
//! * **managed**: as filtered, but items past the deadline are apportioned to
//!   the co-component, which absorbs them locally.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::filter::{check_alarm, filter_reading, Disposition, EdgeBuffer, LatestValues, SummaryRecord, VitalSpec};
use crate::metrics::MetricsReport;
use crate::model::{Channel, SensorReading};
use crate::network::{route, LinkCounters, LinkModel, LinkName, MessageKind, NetMessage};
use crate::sim::{EntityFault, EntityId, EventKind, Handler, SimError, SimEvent, Simulation, Trace};
use crate::time::{SimDuration, SimTime};
use crate::workload::{apportion, process_buffer, run_analytics, LocalStore, StoreOrigin};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Filtered,
    Managed,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Filtered, Mode::Managed];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Filtered => "filtered",
            Mode::Managed => "managed",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "filtered" => Ok(Mode::Filtered),
            "managed" => Ok(Mode::Managed),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// Trace entity addresses.
pub mod entity {
    use super::*;

    pub const STAGE_TWO: EntityId = EntityId(10);

    /// Edge filter instance for one channel.
    pub fn filter(channel: Channel) -> EntityId {
        EntityId(1 + channel.index() as u32)
    }

    pub fn link(name: LinkName) -> EntityId {
        match name {
            LinkName::Lorawan => EntityId(20),
            LinkName::Gsm => EntityId(21),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Reading(SensorReading),
    Flush { channel: Channel },
    /// End of a stage-two pass over a flushed buffer.
    PassComplete { channel: Channel, seq: u64, summary: Option<SummaryRecord>, overflow_items: u32, overflow_bytes: u64 },
    Report,
    Delivered { link: LinkName, message: NetMessage },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Component {
    /// The analytics component that owns stage two.
    Primary,
    /// Second computational region taking apportioned work.
    Co,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ReadingOutcome {
    /// Baseline: no edge processing.
    Unfiltered,
    Filtered(Disposition),
    Alarm { rules: Vec<String> },
}

/// What handling an event did, recorded in the trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Effect {
    Ingested { channel: Channel, outcome: ReadingOutcome },
    Flushed { channel: Channel, items: u32, processed: u32, co_processed: u32, overflow: u32 },
    Charged { component: Component, items: u32, micros: u64 },
    Enqueued { link: LinkName, kind: MessageKind, id: u64, bytes: u32, delivered_at: SimTime, depth: u64 },
    Reported { slopes: u32, flags: Vec<Channel> },
}

pub type PipelineTrace = Trace<Payload, Effect>;

/// Running totals kept while the simulation runs.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OnlineCounters {
    pub readings: u64,
    pub bytes_generated: u64,
    pub bytes_forwarded: u64,
    pub compute_us: u64,
    pub alarms: u64,
    pub buffered: u64,
    pub sent_onward: u64,
    pub flagged: u64,
    pub unfiltered: u64,
    pub absorbed: u64,
    pub co_processed: u64,
    pub overflow_raw: u64,
    pub summaries: u64,
    pub reports: u64,
}

/// Everything a finished run produces.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub mode: Mode,
    pub report: MetricsReport,
    pub trace: PipelineTrace,
    pub counters: OnlineCounters,
    pub links: BTreeMap<LinkName, LinkCounters>,
    pub store: LocalStore,
}

pub struct HomeMonitor<'a> {
    mode: Mode,
    config: &'a RunConfig,
    vitals: BTreeMap<Channel, &'a VitalSpec>,
    buffers: BTreeMap<Channel, EdgeBuffer>,
    latest: LatestValues,
    store: LocalStore,
    lorawan: LinkModel,
    gsm: LinkModel,
    counters: OnlineCounters,
    next_message: u64,
    next_summary: u64,
    horizon: SimTime,
}

fn fault(e: SimError) -> EntityFault {
    EntityFault(e.to_string())
}

impl<'a> HomeMonitor<'a> {
    pub fn new(mode: Mode, config: &'a RunConfig) -> Self {
        let vitals: BTreeMap<Channel, &VitalSpec> = config.vitals.iter().map(|v| (v.channel, v)).collect();
        let buffers = vitals
            .values()
            .filter(|v| v.band().is_some())
            .map(|v| (v.channel, EdgeBuffer::new(config.workload.buffer_storage)))
            .collect();
        HomeMonitor {
            mode,
            config,
            vitals,
            buffers,
            latest: LatestValues::default(),
            store: LocalStore::new(Some(config.workload.retention_window())),
            lorawan: LinkModel::new(LinkName::Lorawan, config.links.lorawan_bps),
            gsm: LinkModel::new(LinkName::Gsm, config.links.gsm_bps),
            counters: OnlineCounters::default(),
            next_message: 0,
            next_summary: 0,
            horizon: config.sim.horizon(),
        }
    }

    /// Schedules the input stream and the periodic timers.
    pub fn start(&self, sim: &mut Simulation<Payload, Effect>, readings: &[SensorReading]) -> Result<(), SimError> {
        for r in readings {
            sim.schedule(r.t, EventKind::ReadingGenerated, entity::filter(r.channel), Payload::Reading(r.clone()))?;
        }
        if self.mode == Mode::Baseline {
            return Ok(());
        }
        for &channel in self.buffers.keys() {
            let first = (SimTime::ZERO + self.vitals[&channel].flush_period()).min(self.horizon);
            sim.schedule(first, EventKind::FlushTimer, entity::filter(channel), Payload::Flush { channel })?;
        }
        let report_at = SimTime::ZERO + self.config.workload.report_period();
        if report_at <= self.horizon {
            sim.schedule(report_at, EventKind::AnalyticsPass, entity::STAGE_TWO, Payload::Report)?;
        }
        Ok(())
    }

    pub fn counters(&self) -> &OnlineCounters {
        &self.counters
    }

    pub fn link_counters(&self) -> BTreeMap<LinkName, LinkCounters> {
        BTreeMap::from([
            (LinkName::Lorawan, self.lorawan.counters().clone()),
            (LinkName::Gsm, self.gsm.counters().clone()),
        ])
    }

    fn link_mut(&mut self, name: LinkName) -> &mut LinkModel {
        match name {
            LinkName::Lorawan => &mut self.lorawan,
            LinkName::Gsm => &mut self.gsm,
        }
    }

    fn charge(&mut self, sim: &mut Simulation<Payload, Effect>, component: Component, items: usize) {
        if items == 0 {
            return;
        }
        let micros = self.config.workload.algorithm_time().as_micros() * items as u64;
        self.counters.compute_us += micros;
        sim.record(Effect::Charged { component, items: items as u32, micros });
    }

    fn enqueue(&mut self, sim: &mut Simulation<Payload, Effect>, kind: MessageKind, bytes: u32) -> Result<(), EntityFault> {
        let now = sim.now();
        let mut message = NetMessage::new(self.next_message, kind, bytes, now);
        self.next_message += 1;
        let link = route(kind);
        let delivered_at = self.link_mut(link).transmit(&mut message, now);
        let depth = self.link_mut(link).queue_depth(now) as u64;
        self.counters.bytes_forwarded += bytes as u64;
        sim.record(Effect::Enqueued { link, kind, id: message.id, bytes, delivered_at, depth });
        sim.schedule(delivered_at, EventKind::TransmitComplete, entity::link(link), Payload::Delivered { link, message })
            .map_err(fault)?;
        Ok(())
    }

    fn on_reading(&mut self, sim: &mut Simulation<Payload, Effect>, r: &SensorReading) -> Result<(), EntityFault> {
        self.counters.readings += 1;
        self.counters.bytes_generated += r.payload_bytes as u64;
        if self.mode == Mode::Baseline {
            self.counters.unfiltered += 1;
            sim.record(Effect::Ingested { channel: r.channel, outcome: ReadingOutcome::Unfiltered });
            self.charge(sim, Component::Primary, 1);
            return self.enqueue(sim, MessageKind::RawReading, r.payload_bytes);
        }

        self.latest.set(r.channel, r.value);
        let rules: Vec<String> = check_alarm(&self.latest, &self.config.alarms)
            .into_iter()
            .filter(|rule| rule.references(r.channel))
            .map(|rule| rule.id.clone())
            .collect();
        if !rules.is_empty() {
            self.counters.alarms += 1;
            sim.record(Effect::Ingested { channel: r.channel, outcome: ReadingOutcome::Alarm { rules } });
            return self.enqueue(sim, MessageKind::Alarm, self.config.payloads.alarm_bytes);
        }

        let spec = *self
            .vitals
            .get(&r.channel)
            .ok_or_else(|| EntityFault(format!("reading on unconfigured channel {}", r.channel)))?;
        let outcome = match self.buffers.get_mut(&r.channel) {
            Some(buffer) => {
                let window_start = buffer.opened_at();
                let outcome = filter_reading(r, spec, buffer);
                if let Some(items) = outcome.overflow {
                    self.run_pass(sim, r.channel, items, window_start)?;
                }
                outcome.disposition
            }
            None => filter_reading(r, spec, &mut EdgeBuffer::new(1)).disposition,
        };
        sim.record(Effect::Ingested { channel: r.channel, outcome: ReadingOutcome::Filtered(outcome) });
        match outcome {
            Disposition::Buffered => self.counters.buffered += 1,
            Disposition::SentOnward { flagged } => {
                self.counters.sent_onward += 1;
                self.counters.flagged += flagged as u64;
                self.charge(sim, Component::Primary, 1);
                self.store.insert(r, StoreOrigin::Exception);
                self.enqueue(sim, MessageKind::RawException, r.payload_bytes)?;
            }
        }
        Ok(())
    }

    /// One deadline-bounded pass over a flushed buffer.
    fn run_pass(
        &mut self,
        sim: &mut Simulation<Payload, Effect>,
        channel: Channel,
        items: Vec<SensorReading>,
        window_start: SimTime,
    ) -> Result<(), EntityFault> {
        if items.is_empty() {
            return Ok(());
        }
        let now = sim.now();
        let total = items.len();
        let config = self.config;
        let workload = &config.workload;
        let pass = process_buffer(items, workload);
        debug_assert!(pass.deferred.is_empty(), "edge buffers never exceed buffer_storage");
        let (co, overflow) = match self.mode {
            Mode::Managed => apportion(pass.forwarded, workload.co_component_capacity),
            _ => (Vec::new(), pass.forwarded),
        };
        let per_item = workload.algorithm_time();
        let elapsed = per_item * pass.processed.len().max(co.len()) as u64;

        let seq = self.next_summary;
        self.next_summary += 1;
        let mut absorbed = pass.processed;
        absorbed.extend(co.iter().cloned());
        for r in &absorbed {
            self.store.insert(r, StoreOrigin::Summary(seq));
        }
        let summary = SummaryRecord::summarize(channel, window_start, now, &absorbed, self.config.payloads.summary_bytes);

        sim.record(Effect::Flushed {
            channel,
            items: total as u32,
            processed: (absorbed.len() - co.len()) as u32,
            co_processed: co.len() as u32,
            overflow: overflow.len() as u32,
        });
        self.charge(sim, Component::Primary, absorbed.len() - co.len());
        self.charge(sim, Component::Co, co.len());
        self.counters.absorbed += absorbed.len() as u64;
        self.counters.co_processed += co.len() as u64;
        self.counters.overflow_raw += overflow.len() as u64;

        // Work still running at the horizon is cut off there.
        let done = (now + elapsed).min(self.horizon.max(now));
        let payload = Payload::PassComplete {
            channel,
            seq,
            summary,
            overflow_items: overflow.len() as u32,
            overflow_bytes: overflow.iter().map(|r| r.payload_bytes as u64).sum(),
        };
        sim.schedule(done, EventKind::AnalyticsPass, entity::STAGE_TWO, payload).map_err(fault)?;
        Ok(())
    }

    fn on_flush(&mut self, sim: &mut Simulation<Payload, Effect>, channel: Channel) -> Result<(), EntityFault> {
        let now = sim.now();
        let buffer = self
            .buffers
            .get_mut(&channel)
            .ok_or_else(|| EntityFault(format!("no edge buffer for {channel}")))?;
        let window_start = buffer.opened_at();
        let items = buffer.drain(now);
        self.run_pass(sim, channel, items, window_start)?;
        if now < self.horizon {
            let next = (now + self.vitals[&channel].flush_period()).min(self.horizon);
            sim.schedule(next, EventKind::FlushTimer, entity::filter(channel), Payload::Flush { channel })
                .map_err(fault)?;
        }
        Ok(())
    }

    fn on_pass_complete(
        &mut self,
        sim: &mut Simulation<Payload, Effect>,
        summary: &Option<SummaryRecord>,
        overflow_items: u32,
        overflow_bytes: u64,
    ) -> Result<(), EntityFault> {
        if let Some(summary) = summary {
            self.counters.summaries += 1;
            self.enqueue(sim, MessageKind::Summary, summary.payload_bytes)?;
        }
        if overflow_items > 0 {
            let bytes = u32::try_from(overflow_bytes)
                .map_err(|_| EntityFault(format!("overflow batch of {overflow_bytes} bytes is too large")))?;
            self.enqueue(sim, MessageKind::RawOverflow, bytes)?;
        }
        Ok(())
    }

    fn on_report(&mut self, sim: &mut Simulation<Payload, Effect>) -> Result<(), EntityFault> {
        let now = sim.now();
        let config = self.config;
        let workload = &config.workload;
        let report = run_analytics(
            &self.store,
            now,
            workload.report_window(),
            &workload.slope_limits,
            self.config.payloads.report_bytes,
        );
        self.counters.reports += 1;
        sim.record(Effect::Reported {
            slopes: report.slopes.len() as u32,
            flags: report.flags.iter().copied().collect(),
        });
        self.enqueue(sim, MessageKind::AnalyticsReport, report.payload_bytes)?;
        let next = now + workload.report_period();
        if next <= self.horizon {
            sim.schedule(next, EventKind::AnalyticsPass, entity::STAGE_TWO, Payload::Report).map_err(fault)?;
        }
        Ok(())
    }

    pub fn into_store(self) -> LocalStore {
        self.store
    }
}

impl Handler<Payload, Effect> for HomeMonitor<'_> {
    fn handle(&mut self, event: &SimEvent<Payload>, sim: &mut Simulation<Payload, Effect>) -> Result<(), EntityFault> {
        match &event.payload {
            Payload::Reading(r) => self.on_reading(sim, r),
            Payload::Flush { channel } => self.on_flush(sim, *channel),
            Payload::PassComplete { summary, overflow_items, overflow_bytes, .. } => {
                self.on_pass_complete(sim, summary, *overflow_items, *overflow_bytes)
            }
            Payload::Report => self.on_report(sim),
            Payload::Delivered { link, message } => {
                self.link_mut(*link).deliver(message);
                Ok(())
            }
        }
    }
}

/// Runs one mode over `readings` (already merged and ordered).
pub fn simulate(config: &RunConfig, mode: Mode, readings: &[SensorReading]) -> Result<RunOutput, SimError> {
    let mut sim = Simulation::new(&config.sim)?;
    let mut monitor = HomeMonitor::new(mode, config);
    monitor.start(&mut sim, readings)?;
    let trace = sim.run(&mut monitor)?;
    let counters = monitor.counters().clone();
    let links = monitor.link_counters();
    let mut report = MetricsReport::from_counters(mode, &counters, &links);
    report.input_hash = input_hash(readings);
    report.trace_hash = trace.hash_hex();
    Ok(RunOutput { mode, report, trace, counters, links, store: monitor.into_store() })
}

/// SHA-256 over the serialized input stream; identifies the inputs a report came from.
pub fn input_hash(readings: &[SensorReading]) -> String {
    let mut hasher = Sha256::new();
    for r in readings {
        hasher.update(serde_json::to_vec(r).expect("readings serialize"));
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}

/// Compute time charged per unit of simulated processing.
pub fn compute_seconds(micros: u64) -> f64 {
    SimDuration::from_micros(micros).as_secs_f64()
}
