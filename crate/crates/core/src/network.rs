//! Rate-capped FIFO links: the LoRaWAN community gateway and the GSM alarm path.
//!
//! Links are fluid: a message occupies the link for `bytes * 8 / rate`
//! seconds (rounded up to the microsecond), messages are serialised in FIFO
//! order, and nothing is ever dropped. Only configured payload bytes are
//! counted; framing headers are not modelled.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::time::{SimDuration, SimTime, MICROS_PER_SECOND};

pub const DEFAULT_LORAWAN_BPS: u64 = 50_000;
pub const DEFAULT_GSM_BPS: u64 = 9_600;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkName {
    Lorawan,
    Gsm,
}

impl LinkName {
    pub const ALL: [LinkName; 2] = [LinkName::Lorawan, LinkName::Gsm];

    pub fn as_str(self) -> &'static str {
        match self {
            LinkName::Lorawan => "lorawan",
            LinkName::Gsm => "gsm",
        }
    }
}

impl fmt::Display for LinkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MessageKind {
    /// Unfiltered reading (baseline mode).
    RawReading,
    /// Out-of-band reading forwarded after stage-two processing.
    RawException,
    /// Buffered readings the Home Monitor had no time to process.
    RawOverflow,
    Summary,
    AnalyticsReport,
    Alarm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Destination {
    HealthCloud,
    EmergencyServices,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetMessage {
    pub id: u64,
    pub kind: MessageKind,
    pub payload_bytes: u32,
    pub created_at: SimTime,
    pub sent_at: Option<SimTime>,
    pub delivered_at: Option<SimTime>,
    pub destination: Destination,
}

impl NetMessage {
    pub fn new(id: u64, kind: MessageKind, payload_bytes: u32, created_at: SimTime) -> Self {
        let destination = match kind {
            MessageKind::Alarm => Destination::EmergencyServices,
            _ => Destination::HealthCloud,
        };
        NetMessage { id, kind, payload_bytes, created_at, sent_at: None, delivered_at: None, destination }
    }
}

/// Alarms take the GSM path; everything else goes through the LoRaWAN gateway.
pub fn route(kind: MessageKind) -> LinkName {
    match kind {
        MessageKind::Alarm => LinkName::Gsm,
        _ => LinkName::Lorawan,
    }
}

/// Time to clock `bytes` onto a link of `rate_bps`, rounded up to the microsecond.
pub fn transmission_time(bytes: u32, rate_bps: u64) -> SimDuration {
    let bits_us = bytes as u128 * 8 * MICROS_PER_SECOND as u128;
    SimDuration::from_micros(bits_us.div_ceil(rate_bps as u128) as u64)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkCounters {
    pub messages_sent: u64,
    /// Bytes handed to the link.
    pub bytes_sent: u64,
    pub messages_delivered: u64,
    pub bytes_delivered: u64,
    /// Largest number of messages waiting or in transmission at once.
    pub max_queue_depth: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkModel {
    pub name: LinkName,
    pub rate_bps: u64,
    busy_until: SimTime,
    in_flight: VecDeque<SimTime>,
    counters: LinkCounters,
}

impl LinkModel {
    pub fn new(name: LinkName, rate_bps: u64) -> Self {
        assert!(rate_bps > 0, "link rate must be positive");
        LinkModel { name, rate_bps, busy_until: SimTime::ZERO, in_flight: VecDeque::new(), counters: LinkCounters::default() }
    }

    pub fn busy_until(&self) -> SimTime {
        self.busy_until
    }

    pub fn counters(&self) -> &LinkCounters {
        &self.counters
    }

    /// Messages still queued or transmitting at `now`.
    pub fn queue_depth(&self, now: SimTime) -> usize {
        self.in_flight.iter().filter(|&&d| d > now).count()
    }

    /// Starts the message at `max(now, busy_until)` and returns its delivery time.
    pub fn transmit(&mut self, msg: &mut NetMessage, now: SimTime) -> SimTime {
        assert!(msg.payload_bytes > 0, "messages carry at least one byte");
        while self.in_flight.front().is_some_and(|&d| d <= now) {
            self.in_flight.pop_front();
        }
        let start = now.max(self.busy_until);
        let delivered = start + transmission_time(msg.payload_bytes, self.rate_bps);
        msg.sent_at = Some(start);
        msg.delivered_at = Some(delivered);
        self.busy_until = delivered;
        self.in_flight.push_back(delivered);
        self.counters.messages_sent += 1;
        self.counters.bytes_sent += msg.payload_bytes as u64;
        self.counters.max_queue_depth = self.counters.max_queue_depth.max(self.in_flight.len() as u64);
        delivered
    }

    /// Records arrival of a message previously passed to [`transmit`](Self::transmit).
    pub fn deliver(&mut self, msg: &NetMessage) {
        self.counters.messages_delivered += 1;
        self.counters.bytes_delivered += msg.payload_bytes as u64;
    }
}
