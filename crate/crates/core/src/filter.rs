//! Stage one: range filtering with edge buffers, and alarm detection.
//!
//! A reading strictly inside its channel's normal band is buffered at the edge
//! and later summarised; anything else (including the band edges and NaN) is
//! sent onward for stage-two processing. Alarm rules are evaluated over the
//! latest value seen on each channel.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, SensorReading};
use crate::time::{SimDuration, SimTime};

/// Generator parameters for channels synthesised instead of replayed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorProfile {
    pub mean: f64,
    /// Half-width of the uniform jitter around `mean` for in-band readings.
    pub jitter: f64,
    pub exception_probability: f64,
    /// Readings per simulated second.
    #[serde(default = "one")]
    pub rate_hz: f64,
    #[serde(default = "synthetic_source")]
    pub source_id: u32,
}

fn one() -> f64 {
    1.0
}

fn synthetic_source() -> u32 {
    1000
}

/// Per-channel configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitalSpec {
    pub channel: Channel,
    /// Exclusive lower edge of the normal band. `None` (together with
    /// `normal_high`) makes the channel pass-through.
    #[serde(default)]
    pub normal_low: Option<f64>,
    #[serde(default)]
    pub normal_high: Option<f64>,
    #[serde(default = "default_raw_payload")]
    pub raw_payload_bytes: u32,
    #[serde(default = "default_flush_period")]
    pub flush_period_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<GeneratorProfile>,
}

pub const DEFAULT_RAW_PAYLOAD_BYTES: u32 = 16;
pub const DEFAULT_FLUSH_PERIOD_S: f64 = 60.0;

fn default_raw_payload() -> u32 {
    DEFAULT_RAW_PAYLOAD_BYTES
}

fn default_flush_period() -> f64 {
    DEFAULT_FLUSH_PERIOD_S
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SpecError {
    #[error("{channel}: normal_low ({low}) must be below normal_high ({high})")]
    EmptyBand { channel: Channel, low: f64, high: f64 },
    #[error("{channel}: normal_low and normal_high must be given together")]
    HalfBand { channel: Channel },
    #[error("{channel}: {what}")]
    Invalid { channel: Channel, what: String },
}

impl VitalSpec {
    pub fn banded(channel: Channel, low: f64, high: f64) -> Self {
        VitalSpec {
            channel,
            normal_low: Some(low),
            normal_high: Some(high),
            raw_payload_bytes: DEFAULT_RAW_PAYLOAD_BYTES,
            flush_period_s: DEFAULT_FLUSH_PERIOD_S,
            synth: None,
        }
    }

    pub fn pass_through(channel: Channel) -> Self {
        VitalSpec {
            normal_low: None,
            normal_high: None,
            ..VitalSpec::banded(channel, 0.0, 0.0)
        }
    }

    pub fn band(&self) -> Option<(f64, f64)> {
        self.normal_low.zip(self.normal_high)
    }

    pub fn flush_period(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.flush_period_s)
    }

    /// Strict band membership. Pass-through channels have no in-band values.
    pub fn in_band(&self, value: f64) -> bool {
        match self.band() {
            Some((low, high)) => low < value && value < high,
            None => false,
        }
    }

    // `!(low < high)` also rejects NaN bounds.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), SpecError> {
        let channel = self.channel;
        match (self.normal_low, self.normal_high) {
            (Some(low), Some(high)) if !(low < high) => {
                return Err(SpecError::EmptyBand { channel, low, high })
            }
            (Some(_), None) | (None, Some(_)) => return Err(SpecError::HalfBand { channel }),
            _ => {}
        }
        if self.raw_payload_bytes == 0 {
            return Err(SpecError::Invalid { channel, what: "raw_payload_bytes must be positive".into() });
        }
        if !(self.flush_period_s.is_finite() && self.flush_period_s > 0.0) || self.flush_period().is_zero() {
            return Err(SpecError::Invalid { channel, what: "flush_period_s must be positive".into() });
        }
        if let Some(profile) = &self.synth {
            if self.band().is_none() {
                return Err(SpecError::Invalid {
                    channel,
                    what: "a generator profile needs a normal band".into(),
                });
            }
            if !(0.0..=1.0).contains(&profile.exception_probability) {
                return Err(SpecError::Invalid {
                    channel,
                    what: "exception_probability must lie in [0, 1]".into(),
                });
            }
            if !(profile.rate_hz.is_finite() && profile.rate_hz > 0.0) {
                return Err(SpecError::Invalid { channel, what: "rate_hz must be positive".into() });
            }
            if !(profile.jitter.is_finite() && profile.jitter >= 0.0) || !profile.mean.is_finite() {
                return Err(SpecError::Invalid {
                    channel,
                    what: "mean and jitter must be finite, jitter non-negative".into(),
                });
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Alarm rules
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn holds(self, value: f64, threshold: f64) -> bool {
        match self {
            Comparator::Lt => value < threshold,
            Comparator::Le => value <= threshold,
            Comparator::Gt => value > threshold,
            Comparator::Ge => value >= threshold,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }
}

/// Boolean combination of `(channel, comparator, threshold)` atoms.
#[derive(Clone, Debug, PartialEq)]
pub enum Predicate {
    Atom { channel: Channel, cmp: Comparator, threshold: f64 },
    Any(Vec<Predicate>),
    All(Vec<Predicate>),
}

impl Predicate {
    pub fn atom(channel: Channel, cmp: Comparator, threshold: f64) -> Self {
        Predicate::Atom { channel, cmp, threshold }
    }

    /// `None` when a referenced channel has no value yet.
    pub fn evaluate(&self, latest: &LatestValues) -> Option<bool> {
        match self {
            Predicate::Atom { channel, cmp, threshold } => {
                latest.get(*channel).map(|v| cmp.holds(v, *threshold))
            }
            Predicate::Any(parts) => {
                let mut any = false;
                for part in parts {
                    any |= part.evaluate(latest)?;
                }
                Some(any)
            }
            Predicate::All(parts) => {
                let mut all = true;
                for part in parts {
                    all &= part.evaluate(latest)?;
                }
                Some(all)
            }
        }
    }

    pub fn channels(&self) -> Vec<Channel> {
        let mut out = Vec::new();
        self.collect_channels(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect_channels(&self, out: &mut Vec<Channel>) {
        match self {
            Predicate::Atom { channel, .. } => out.push(*channel),
            Predicate::Any(parts) | Predicate::All(parts) => {
                parts.iter().for_each(|p| p.collect_channels(out))
            }
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Predicate::Atom { channel, cmp, threshold } => {
                write!(f, "{} {} {}", channel, cmp.symbol(), threshold)
            }
            Predicate::Any(parts) | Predicate::All(parts) => {
                let sep = if matches!(self, Predicate::Any(_)) { " || " } else { " && " };
                for (i, part) in parts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(sep)?;
                    }
                    if matches!(part, Predicate::Atom { .. }) {
                        write!(f, "{part}")?;
                    } else {
                        write!(f, "({part})")?;
                    }
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("bad alarm predicate at byte {pos}: {message}")]
pub struct PredicateParseError {
    pub pos: usize,
    pub message: String,
}

impl FromStr for Predicate {
    type Err = PredicateParseError;

    /// Parses expressions such as `HRM < 40 || BP < 90`. `&&` binds tighter
    /// than `||`; parentheses group.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut parser = PredicateParser { src: s, pos: 0 };
        let pred = parser.disjunction()?;
        parser.skip_ws();
        if parser.pos != s.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(pred)
    }
}

struct PredicateParser<'a> {
    src: &'a str,
    pos: usize,
}

impl PredicateParser<'_> {
    fn error(&self, message: &str) -> PredicateParseError {
        PredicateParseError { pos: self.pos, message: message.to_string() }
    }

    fn rest(&self) -> &str {
        &self.src[self.pos..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.pos = self.src.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.pos += token.len();
            true
        } else {
            false
        }
    }

    fn disjunction(&mut self) -> Result<Predicate, PredicateParseError> {
        let mut parts = vec![self.conjunction()?];
        while self.eat("||") {
            parts.push(self.conjunction()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::Any(parts) })
    }

    fn conjunction(&mut self) -> Result<Predicate, PredicateParseError> {
        let mut parts = vec![self.primary()?];
        while self.eat("&&") {
            parts.push(self.primary()?);
        }
        Ok(if parts.len() == 1 { parts.pop().unwrap() } else { Predicate::All(parts) })
    }

    fn primary(&mut self) -> Result<Predicate, PredicateParseError> {
        if self.eat("(") {
            let inner = self.disjunction()?;
            if !self.eat(")") {
                return Err(self.error("expected `)`"));
            }
            return Ok(inner);
        }
        self.skip_ws();
        let ident_len = self
            .rest()
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(self.rest().len());
        if ident_len == 0 {
            return Err(self.error("expected a channel name"));
        }
        let ident = &self.src[self.pos..self.pos + ident_len];
        let channel = ident.parse::<Channel>().map_err(|e| self.error(&e.to_string()))?;
        self.pos += ident_len;
        // Two-character comparators first.
        let cmp = if self.eat("<=") {
            Comparator::Le
        } else if self.eat(">=") {
            Comparator::Ge
        } else if self.eat("<") {
            Comparator::Lt
        } else if self.eat(">") {
            Comparator::Gt
        } else {
            return Err(self.error("expected a comparator"));
        };
        self.skip_ws();
        let num_len = self
            .rest()
            .find(|c: char| !(c.is_ascii_digit() || matches!(c, '.' | '-' | '+' | 'e' | 'E')))
            .unwrap_or(self.rest().len());
        let threshold = self.src[self.pos..self.pos + num_len]
            .parse::<f64>()
            .map_err(|_| self.error("expected a numeric threshold"))?;
        self.pos += num_len;
        Ok(Predicate::Atom { channel, cmp, threshold })
    }
}

impl Serialize for Predicate {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Predicate {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// A named alarm condition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlarmRule {
    pub id: String,
    pub when: Predicate,
}

impl AlarmRule {
    pub fn new(id: impl Into<String>, when: Predicate) -> Self {
        AlarmRule { id: id.into(), when }
    }

    /// Heart rate below 40 bpm or systolic pressure below 90 mmHg.
    pub fn default_cardiac() -> Self {
        AlarmRule::new(
            "bradycardia-or-hypotension",
            Predicate::Any(vec![
                Predicate::atom(Channel::HRM, Comparator::Lt, 40.0),
                Predicate::atom(Channel::BP, Comparator::Lt, 90.0),
            ]),
        )
    }

    pub fn references(&self, channel: Channel) -> bool {
        self.when.channels().contains(&channel)
    }
}

/// Most recent value per channel.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LatestValues([Option<f64>; 7]);

impl LatestValues {
    pub fn get(&self, channel: Channel) -> Option<f64> {
        self.0[channel.index()]
    }

    pub fn set(&mut self, channel: Channel, value: f64) {
        self.0[channel.index()] = Some(value);
    }

    pub fn with(mut self, channel: Channel, value: f64) -> Self {
        self.set(channel, value);
        self
    }
}

/// Returns the rules whose predicate holds. Rules referencing a channel with no
/// value yet are not evaluable and never trigger.
pub fn check_alarm<'r>(latest: &LatestValues, rules: &'r [AlarmRule]) -> Vec<&'r AlarmRule> {
    rules
        .iter()
        .filter(|rule| rule.when.evaluate(latest) == Some(true))
        .collect()
}

// ---------------------------------------------------------------------------
// Edge buffers and summaries
// ---------------------------------------------------------------------------

pub const DEFAULT_SUMMARY_BYTES: u32 = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBuffer {
    items: Vec<SensorReading>,
    capacity: usize,
    opened_at: SimTime,
}

impl EdgeBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "edge buffer capacity must be positive");
        EdgeBuffer { items: Vec::with_capacity(capacity), capacity, opened_at: SimTime::ZERO }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.items.len() >= self.capacity
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn items(&self) -> &[SensorReading] {
        &self.items
    }

    /// Start of the window the buffer currently covers.
    pub fn opened_at(&self) -> SimTime {
        self.opened_at
    }

    /// Empties the buffer and starts a new window at `now`.
    pub fn drain(&mut self, now: SimTime) -> Vec<SensorReading> {
        self.opened_at = now;
        std::mem::take(&mut self.items)
    }

    fn push(&mut self, reading: SensorReading) {
        debug_assert!(!self.is_full());
        debug_assert!(self.items.last().is_none_or(|last| last.t <= reading.t));
        self.items.push(reading);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Disposition {
    Buffered,
    /// Forwarded to stage two. `flagged` marks NaN values.
    SentOnward { flagged: bool },
}

/// Result of [`filter_reading`]. `overflow` carries the buffer contents that
/// were flushed to make room, if the buffer was at capacity.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterOutcome {
    pub disposition: Disposition,
    pub overflow: Option<Vec<SensorReading>>,
}

pub fn filter_reading(reading: &SensorReading, spec: &VitalSpec, buffer: &mut EdgeBuffer) -> FilterOutcome {
    debug_assert_eq!(reading.channel, spec.channel);
    if reading.value.is_nan() {
        return FilterOutcome { disposition: Disposition::SentOnward { flagged: true }, overflow: None };
    }
    if !spec.in_band(reading.value) {
        return FilterOutcome { disposition: Disposition::SentOnward { flagged: false }, overflow: None };
    }
    let overflow = buffer.is_full().then(|| buffer.drain(reading.t));
    buffer.push(reading.clone());
    FilterOutcome { disposition: Disposition::Buffered, overflow }
}

/// Fixed-size aggregate of the readings absorbed in one flush window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub channel: Channel,
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub count: u32,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub payload_bytes: u32,
}

impl SummaryRecord {
    /// `None` for an empty window.
    pub fn summarize(
        channel: Channel,
        window_start: SimTime,
        window_end: SimTime,
        readings: &[SensorReading],
        payload_bytes: u32,
    ) -> Option<SummaryRecord> {
        let first = readings.first()?;
        let (mut min, mut max, mut sum) = (first.value, first.value, 0.0);
        for r in readings {
            min = min.min(r.value);
            max = max.max(r.value);
            sum += r.value;
        }
        // Rounding can push the mean of near-identical values an ulp outside [min, max].
        let mean = (sum / readings.len() as f64).clamp(min, max);
        Some(SummaryRecord {
            channel,
            window_start,
            window_end,
            count: readings.len() as u32,
            mean,
            min,
            max,
            payload_bytes,
        })
    }
}

/// Empties the buffer into a single summary. An empty buffer yields nothing.
pub fn flush_buffer(buffer: &mut EdgeBuffer, channel: Channel, now: SimTime, payload_bytes: u32) -> Option<SummaryRecord> {
    let start = buffer.opened_at();
    let items = buffer.drain(now);
    SummaryRecord::summarize(channel, start, now, &items, payload_bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn temp(t: u64, value: f64) -> SensorReading {
        SensorReading {
            t: SimTime::from_micros(t * 1_000_000),
            channel: Channel::BodyTemp,
            value,
            source_id: 1,
            payload_bytes: 16,
        }
    }

    fn temp_spec() -> VitalSpec {
        VitalSpec::banded(Channel::BodyTemp, 36.0, 37.0)
    }

    #[test]
    fn in_band_is_buffered() {
        let mut buf = EdgeBuffer::new(100);
        let out = filter_reading(&temp(0, 36.5), &temp_spec(), &mut buf);
        assert_eq!(out.disposition, Disposition::Buffered);
        assert_eq!(buf.len(), 1);
    }

    #[test]
    fn out_of_band_is_sent_onward() {
        let mut buf = EdgeBuffer::new(100);
        let out = filter_reading(&temp(0, 38.2), &temp_spec(), &mut buf);
        assert_eq!(out.disposition, Disposition::SentOnward { flagged: false });
        assert!(buf.is_empty());
    }

    #[test]
    fn band_edges_are_sent_onward() {
        let mut buf = EdgeBuffer::new(100);
        for edge in [36.0, 37.0] {
            let out = filter_reading(&temp(0, edge), &temp_spec(), &mut buf);
            assert_eq!(out.disposition, Disposition::SentOnward { flagged: false });
        }
    }

    #[test]
    fn nan_is_flagged() {
        let mut buf = EdgeBuffer::new(100);
        let out = filter_reading(&temp(0, f64::NAN), &temp_spec(), &mut buf);
        assert_eq!(out.disposition, Disposition::SentOnward { flagged: true });
    }

    #[test]
    fn pass_through_channel_never_buffers() {
        let spec = VitalSpec::pass_through(Channel::BGL);
        let mut buf = EdgeBuffer::new(10);
        let r = SensorReading { channel: Channel::BGL, ..temp(0, 5.5) };
        assert_eq!(filter_reading(&r, &spec, &mut buf).disposition, Disposition::SentOnward { flagged: false });
    }

    #[test]
    fn overflow_flushes_then_appends() {
        let mut buf = EdgeBuffer::new(100);
        for t in 0..100 {
            let out = filter_reading(&temp(t, 36.5), &temp_spec(), &mut buf);
            assert!(out.overflow.is_none());
        }
        let out = filter_reading(&temp(100, 36.6), &temp_spec(), &mut buf);
        assert_eq!(out.overflow.as_ref().map(Vec::len), Some(100));
        assert_eq!(buf.len(), 1);
        assert_eq!(buf.opened_at(), SimTime::from_micros(100_000_000));
    }

    #[test]
    fn summary_of_seven_readings() {
        let values = [36.2, 36.3, 36.4, 36.5, 36.6, 36.7, 36.8];
        let mut buf = EdgeBuffer::new(100);
        for (i, v) in values.iter().enumerate() {
            filter_reading(&temp(i as u64, *v), &temp_spec(), &mut buf);
        }
        let s = flush_buffer(&mut buf, Channel::BodyTemp, SimTime::from_micros(60_000_000), 32).unwrap();
        // Brute-force aggregation over the same values.
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for v in values {
            lo = if v < lo { v } else { lo };
            hi = if v > hi { v } else { hi };
            sum += v;
        }
        assert_eq!(s.count, 7);
        assert_eq!(s.min, 36.2);
        assert_eq!(s.max, 36.8);
        assert_eq!((s.min, s.max), (lo, hi));
        assert_eq!(s.mean, sum / 7.0);
        assert_eq!(s.payload_bytes, 32);
        assert!(buf.is_empty());
    }

    #[test]
    fn empty_flush_emits_nothing() {
        let mut buf = EdgeBuffer::new(100);
        assert!(flush_buffer(&mut buf, Channel::BodyTemp, SimTime::ZERO, 32).is_none());
    }

    #[test]
    fn alarm_disjunction() {
        let rules = [AlarmRule::default_cardiac()];
        let fired = |hrm, bp| {
            let latest = LatestValues::default().with(Channel::HRM, hrm).with(Channel::BP, bp);
            !check_alarm(&latest, &rules).is_empty()
        };
        assert!(fired(35.0, 100.0));
        assert!(fired(60.0, 85.0));
        assert!(!fired(60.0, 120.0));
        assert!(!fired(40.0, 90.0));
    }

    #[test]
    fn alarm_needs_every_referenced_channel() {
        let rules = [AlarmRule::default_cardiac()];
        let latest = LatestValues::default().with(Channel::HRM, 30.0);
        assert!(check_alarm(&latest, &rules).is_empty());
    }

    #[test]
    fn predicate_parsing() {
        let p: Predicate = "hrm < 40 || bp < 90".parse().unwrap();
        assert_eq!(p, AlarmRule::default_cardiac().when);
        assert_eq!(p.to_string(), "HRM < 40 || BP < 90");

        let q: Predicate = "BodyTemp >= 38.5 && (HRM > 120 || BP >= 180)".parse().unwrap();
        assert_eq!(q.channels(), vec![Channel::BodyTemp, Channel::HRM, Channel::BP]);
        assert_eq!(q.to_string().parse::<Predicate>().unwrap(), q);

        assert!("HRM <".parse::<Predicate>().is_err());
        assert!("ECG < 3".parse::<Predicate>().is_err());
        assert!("(HRM < 3".parse::<Predicate>().is_err());
        assert!("HRM < 3 extra".parse::<Predicate>().is_err());
    }

    #[test]
    fn spec_validation() {
        let bad = VitalSpec::banded(Channel::BodyTemp, 37.0, 36.0);
        assert!(matches!(bad.validate(), Err(SpecError::EmptyBand { channel: Channel::BodyTemp, .. })));
        let half = VitalSpec { normal_high: None, ..temp_spec() };
        assert!(matches!(half.validate(), Err(SpecError::HalfBand { .. })));
        assert!(temp_spec().validate().is_ok());
    }
}
