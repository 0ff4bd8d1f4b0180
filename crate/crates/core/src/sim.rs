//! Deterministic discrete-event engine.
//!
//! Events are ordered by `(time, sequence)`. The sequence number is assigned at
//! scheduling time, so equal-time events are delivered in the order they were
//! scheduled. Events after the horizon stay in the queue and are never
//! delivered.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};
use std::fmt;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::time::{SimDuration, SimTime};

/// Run-level clock configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub duration_ticks: u64,
    pub seed: u64,
    /// Length of one tick in simulated seconds.
    pub tick_seconds: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            duration_ticks: 1000,
            seed: 42,
            tick_seconds: 1.0,
        }
    }
}

impl SimConfig {
    pub fn tick(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.tick_seconds)
    }

    /// Last instant at which events are still delivered.
    pub fn horizon(&self) -> SimTime {
        SimTime::ZERO + self.tick() * self.duration_ticks
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.duration_ticks == 0 {
            return Err(SimError::InvalidConfig("duration_ticks must be > 0".into()));
        }
        if !(self.tick_seconds.is_finite() && self.tick_seconds > 0.0) || self.tick().is_zero() {
            return Err(SimError::InvalidConfig(format!(
                "tick_seconds must be at least one microsecond, got {}",
                self.tick_seconds
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ReadingGenerated,
    FlushTimer,
    TransmitComplete,
    AnalyticsPass,
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EntityId(pub u32);

impl fmt::Display for EntityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Opaque handle returned by [`Simulation::schedule`], used for cancellation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct EventHandle(u64);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimEvent<P> {
    pub time: SimTime,
    pub sequence: u64,
    pub kind: EventKind,
    pub target: EntityId,
    pub payload: P,
}

/// A fault raised by an entity while handling an event.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct EntityFault(pub String);

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("cannot schedule at {at}: clock is already at {now}")]
    ScheduleInPast { at: SimTime, now: SimTime },
    #[error("no entity registered as {0}")]
    UnknownTarget(EntityId),
    #[error("entity {target} failed on {kind} #{sequence} at {time}: {fault}")]
    Fault {
        time: SimTime,
        sequence: u64,
        kind: EventKind,
        target: EntityId,
        fault: EntityFault,
    },
    #[error("invalid simulation config: {0}")]
    InvalidConfig(String),
}

struct Queued<P> {
    event: SimEvent<P>,
}

impl<P> PartialEq for Queued<P> {
    fn eq(&self, other: &Self) -> bool {
        self.event.sequence == other.event.sequence
    }
}

impl<P> Eq for Queued<P> {}

impl<P> PartialOrd for Queued<P> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<P> Ord for Queued<P> {
    // BinaryHeap is a max-heap; invert so the earliest (time, sequence) pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        (other.event.time, other.event.sequence).cmp(&(self.event.time, self.event.sequence))
    }
}

/// One delivered event plus whatever the handler recorded while processing it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(
    serialize = "P: Serialize, E: Serialize",
    deserialize = "P: Deserialize<'de>, E: Deserialize<'de>"
))]
pub struct TraceRecord<P, E> {
    pub time: SimTime,
    pub seq: u64,
    pub kind: EventKind,
    pub target: EntityId,
    pub payload: P,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub effects: Vec<E>,
}

/// Ordered record of every delivered event.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace<P, E> {
    pub records: Vec<TraceRecord<P, E>>,
    pub final_clock: SimTime,
    /// Events still queued (after the horizon) when the run stopped.
    pub undelivered: usize,
}

impl<P, E> Default for Trace<P, E> {
    fn default() -> Self {
        Trace {
            records: Vec::new(),
            final_clock: SimTime::ZERO,
            undelivered: 0,
        }
    }
}

impl<P: Serialize, E: Serialize> Trace<P, E> {
    /// Writes one JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut out, record)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// SHA-256 of the line-per-event serialization, hex encoded.
    pub fn hash_hex(&self) -> String {
        let mut hasher = HashWriter(Sha256::new());
        self.write_jsonl(&mut hasher).expect("hashing cannot fail");
        hex::encode(hasher.0.finalize())
    }
}

impl<P: for<'de> Deserialize<'de>, E: for<'de> Deserialize<'de>> Trace<P, E> {
    pub fn read_jsonl(text: &str) -> Result<Vec<TraceRecord<P, E>>, serde_json::Error> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect()
    }
}

struct HashWriter(Sha256);

impl Write for HashWriter {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }
    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Receives delivered events. Handlers may schedule further events and record
/// effects against the event being handled.
pub trait Handler<P, E> {
    fn handle(&mut self, event: &SimEvent<P>, sim: &mut Simulation<P, E>) -> Result<(), EntityFault>;
}

pub struct Simulation<P, E = ()> {
    clock: SimTime,
    horizon: SimTime,
    next_seq: u64,
    queue: BinaryHeap<Queued<P>>,
    cancelled: HashSet<u64>,
    effects: Vec<E>,
}

impl<P, E> Simulation<P, E> {
    pub fn new(config: &SimConfig) -> Result<Self, SimError> {
        config.validate()?;
        Ok(Simulation {
            clock: SimTime::ZERO,
            horizon: config.horizon(),
            next_seq: 0,
            queue: BinaryHeap::new(),
            cancelled: HashSet::new(),
            effects: Vec::new(),
        })
    }

    pub fn now(&self) -> SimTime {
        self.clock
    }

    pub fn horizon(&self) -> SimTime {
        self.horizon
    }

    pub fn pending(&self) -> usize {
        self.queue.len() - self.cancelled.len()
    }

    pub fn schedule(
        &mut self,
        time: SimTime,
        kind: EventKind,
        target: EntityId,
        payload: P,
    ) -> Result<EventHandle, SimError> {
        if time < self.clock {
            return Err(SimError::ScheduleInPast { at: time, now: self.clock });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Queued {
            event: SimEvent { time, sequence, kind, target, payload },
        });
        Ok(EventHandle(sequence))
    }

    /// Cancels a pending event. Returns false if it was already delivered or
    /// cancelled.
    pub fn cancel(&mut self, handle: EventHandle) -> bool {
        let pending = self.queue.iter().any(|q| q.event.sequence == handle.0);
        pending && self.cancelled.insert(handle.0)
    }

    /// Attaches an effect to the trace record of the event currently being handled.
    pub fn record(&mut self, effect: E) {
        self.effects.push(effect);
    }

    fn pop(&mut self) -> Option<SimEvent<P>> {
        while let Some(top) = self.queue.peek() {
            if top.event.time > self.horizon {
                return None;
            }
            let Queued { event } = self.queue.pop().expect("peeked");
            if self.cancelled.remove(&event.sequence) {
                continue;
            }
            return Some(event);
        }
        None
    }

    /// Delivers events in `(time, sequence)` order until the queue is empty or
    /// the next event lies past the horizon.
    pub fn run<H: Handler<P, E>>(&mut self, handler: &mut H) -> Result<Trace<P, E>, SimError> {
        let mut records = Vec::new();
        while let Some(event) = self.pop() {
            debug_assert!(event.time >= self.clock);
            self.clock = event.time;
            self.effects.clear();
            handler.handle(&event, self).map_err(|fault| SimError::Fault {
                time: event.time,
                sequence: event.sequence,
                kind: event.kind,
                target: event.target,
                fault,
            })?;
            records.push(TraceRecord {
                time: event.time,
                seq: event.sequence,
                kind: event.kind,
                target: event.target,
                payload: event.payload,
                effects: std::mem::take(&mut self.effects),
            });
        }
        Ok(Trace {
            records,
            final_clock: self.clock,
            undelivered: self.pending(),
        })
    }
}

/// A self-contained participant in an [`EntitySet`] run.
pub trait Entity<P, E> {
    /// Called once before the first event is delivered.
    fn start(&mut self, id: EntityId, sim: &mut Simulation<P, E>) -> Result<(), SimError>;
    fn handle(&mut self, event: &SimEvent<P>, sim: &mut Simulation<P, E>) -> Result<(), EntityFault>;
}

/// Entities addressed by their index.
pub struct EntitySet<P, E> {
    entities: Vec<Box<dyn Entity<P, E>>>,
}

impl<P, E> Default for EntitySet<P, E> {
    fn default() -> Self {
        EntitySet { entities: Vec::new() }
    }
}

impl<P, E> EntitySet<P, E> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, entity: Box<dyn Entity<P, E>>) -> EntityId {
        self.entities.push(entity);
        EntityId(self.entities.len() as u32 - 1)
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }
}

impl<P, E> Handler<P, E> for EntitySet<P, E> {
    fn handle(&mut self, event: &SimEvent<P>, sim: &mut Simulation<P, E>) -> Result<(), EntityFault> {
        match self.entities.get_mut(event.target.0 as usize) {
            Some(entity) => entity.handle(event, sim),
            None => Err(EntityFault(format!("no entity registered as {}", event.target))),
        }
    }
}

/// Starts every registered entity and runs the simulation to its horizon.
pub fn run<P, E>(
    config: &SimConfig,
    entities: &mut EntitySet<P, E>,
) -> Result<Trace<P, E>, SimError> {
    let mut sim = Simulation::new(config)?;
    for (index, entity) in entities.entities.iter_mut().enumerate() {
        entity.start(EntityId(index as u32), &mut sim)?;
    }
    sim.run(entities)
}
