//! Shared domain types: sensor channels and readings.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::time::SimTime;

/// A vital-sign or environment stream monitored in the home.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Channel {
    /// Body temperature, °C.
    BodyTemp,
    /// Heart rate, beats per minute.
    HRM,
    /// Systolic blood pressure, mmHg.
    BP,
    /// Blood glucose level, mmol/L.
    BGL,
    /// Pedometer step count.
    PED,
    /// Passive infrared motion, 0 or 1.
    PIR,
    /// Bed or chair pressure pad, 0 or 1.
    PressurePad,
}

impl Channel {
    pub const ALL: [Channel; 7] = [
        Channel::BodyTemp,
        Channel::HRM,
        Channel::BP,
        Channel::BGL,
        Channel::PED,
        Channel::PIR,
        Channel::PressurePad,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Channel::BodyTemp => "BodyTemp",
            Channel::HRM => "HRM",
            Channel::BP => "BP",
            Channel::BGL => "BGL",
            Channel::PED => "PED",
            Channel::PIR => "PIR",
            Channel::PressurePad => "PressurePad",
        }
    }

    /// Position in [`Channel::ALL`]; used as a dense index.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown channel `{0}`")]
pub struct UnknownChannel(pub String);

impl FromStr for Channel {
    type Err = UnknownChannel;

    /// Case-insensitive; accepts a few common aliases.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.trim().to_ascii_lowercase();
        let channel = match lower.as_str() {
            "bodytemp" | "temp" | "temperature" => Channel::BodyTemp,
            "hrm" | "hr" => Channel::HRM,
            "bp" => Channel::BP,
            "bgl" => Channel::BGL,
            "ped" => Channel::PED,
            "pir" => Channel::PIR,
            "pressurepad" | "pressure_pad" => Channel::PressurePad,
            _ => return Err(UnknownChannel(s.to_string())),
        };
        Ok(channel)
    }
}

/// One timestamped sample from one channel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    pub t: SimTime,
    pub channel: Channel,
    pub value: f64,
    pub source_id: u32,
    pub payload_bytes: u32,
}

impl SensorReading {
    /// Total order used when merging streams: time, then source, then channel.
    pub fn merge_key(&self) -> (SimTime, u32, Channel) {
        (self.t, self.source_id, self.channel)
    }
}

/// Merges reading streams into one sequence ordered by [`SensorReading::merge_key`].
/// The sort is stable, so readings with equal keys keep their stream order.
pub fn merge_streams(streams: Vec<Vec<SensorReading>>) -> Vec<SensorReading> {
    let mut all: Vec<SensorReading> = streams.into_iter().flatten().collect();
    all.sort_by_key(SensorReading::merge_key);
    all
}
