//! Stage two: deadline-bounded processing of flushed edge buffers, the local
//! data store, and windowed trend analytics.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Channel, SensorReading};
use crate::time::{SimDuration, SimTime};

pub const DEFAULT_REPORT_BYTES: u32 = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorkloadParams {
    /// Longest a single processing pass may run before the remainder is handed off.
    pub analytics_deadline_s: f64,
    /// Items admitted per pass; also the edge buffer capacity.
    pub buffer_storage: usize,
    /// Simulated cost of processing one item.
    pub algorithm_time_s: f64,
    /// Items the co-component takes per pass in managed mode. `None` is unbounded.
    pub co_component_capacity: Option<usize>,
    /// Period of analytics reports sent to the health cloud.
    pub report_period_s: f64,
    /// Look-back window for trend slopes.
    pub report_window_s: f64,
    pub retention_window_s: f64,
    /// Per-channel absolute slope limits (units per second) that raise a flag.
    pub slope_limits: BTreeMap<Channel, f64>,
}

impl Default for WorkloadParams {
    fn default() -> Self {
        WorkloadParams {
            analytics_deadline_s: 0.5,
            buffer_storage: 100,
            algorithm_time_s: 0.01,
            co_component_capacity: None,
            report_period_s: 300.0,
            report_window_s: 300.0,
            retention_window_s: 86_400.0,
            slope_limits: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("workload: {0}")]
pub struct WorkloadError(pub String);

impl WorkloadParams {
    pub fn deadline(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.analytics_deadline_s)
    }

    pub fn algorithm_time(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.algorithm_time_s)
    }

    pub fn report_period(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.report_period_s)
    }

    pub fn report_window(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.report_window_s)
    }

    pub fn retention_window(&self) -> SimDuration {
        SimDuration::from_secs_f64(self.retention_window_s)
    }

    /// Upper bound on items one component finishes in a pass.
    pub fn items_per_pass(&self) -> usize {
        let per_item = self.algorithm_time().as_micros();
        let deadline = self.deadline().as_micros();
        (deadline.div_ceil(per_item) as usize).min(self.buffer_storage)
    }

    pub fn validate(&self) -> Result<(), WorkloadError> {
        let positive = |name: &str, v: f64, d: SimDuration| {
            if v.is_finite() && v > 0.0 && !d.is_zero() {
                Ok(())
            } else {
                Err(WorkloadError(format!("{name} must be positive (at least 1 µs), got {v}")))
            }
        };
        positive("analytics_deadline_s", self.analytics_deadline_s, self.deadline())?;
        positive("algorithm_time_s", self.algorithm_time_s, self.algorithm_time())?;
        positive("report_period_s", self.report_period_s, self.report_period())?;
        positive("report_window_s", self.report_window_s, self.report_window())?;
        positive("retention_window_s", self.retention_window_s, self.retention_window())?;
        if self.buffer_storage == 0 {
            return Err(WorkloadError("buffer_storage must be positive".into()));
        }
        if self.algorithm_time() > self.deadline() {
            return Err(WorkloadError(format!(
                "algorithm_time_s ({}) exceeds analytics_deadline_s ({})",
                self.algorithm_time_s, self.analytics_deadline_s
            )));
        }
        for (channel, limit) in &self.slope_limits {
            if !(limit.is_finite() && *limit >= 0.0) {
                return Err(WorkloadError(format!("slope limit for {channel} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Outcome of one processing pass.
#[derive(Clone, Debug, PartialEq)]
pub struct PassOutcome<T> {
    pub processed: Vec<T>,
    /// Admitted but unprocessed when the deadline fired; handed to the co-component.
    pub forwarded: Vec<T>,
    /// Beyond `buffer_storage`; admitted on the next pass.
    pub deferred: Vec<T>,
    /// Simulated compute charged for the pass.
    pub elapsed: SimDuration,
}

/// Processes items in order at `algorithm_time` each. The deadline is checked
/// after every item: once the elapsed time reaches the deadline the item in
/// flight completes and everything still waiting is forwarded.
pub fn process_buffer<T>(incoming: Vec<T>, params: &WorkloadParams) -> PassOutcome<T> {
    let mut items = incoming;
    let deferred = if items.len() > params.buffer_storage {
        items.split_off(params.buffer_storage)
    } else {
        Vec::new()
    };
    let per_item = params.algorithm_time();
    let deadline = params.deadline();
    let mut elapsed = SimDuration::ZERO;
    let mut processed = Vec::with_capacity(items.len());
    let mut queue = items.into_iter();
    for item in queue.by_ref() {
        processed.push(item);
        elapsed += per_item;
        if elapsed >= deadline {
            break;
        }
    }
    PassOutcome { processed, forwarded: queue.collect(), deferred, elapsed }
}

/// Splits forwarded items between the co-component (up to its capacity) and
/// whatever it cannot take.
pub fn apportion<T>(mut forwarded: Vec<T>, capacity: Option<usize>) -> (Vec<T>, Vec<T>) {
    match capacity {
        Some(cap) if forwarded.len() > cap => {
            let rest = forwarded.split_off(cap);
            (forwarded, rest)
        }
        _ => (forwarded, Vec::new()),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StoreOrigin {
    /// Absorbed from an edge buffer into the summary with this sequence number.
    Summary(u64),
    /// An out-of-band reading processed by stage two.
    Exception,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredPoint {
    pub t: SimTime,
    pub value: f64,
    pub origin: StoreOrigin,
}

/// Per-channel, time-ordered history held in the Home Monitor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LocalStore {
    series: BTreeMap<Channel, Vec<StoredPoint>>,
    retention: Option<SimDuration>,
}

impl LocalStore {
    pub fn new(retention: Option<SimDuration>) -> Self {
        LocalStore { series: BTreeMap::new(), retention }
    }

    /// Inserts keeping per-channel time order. Points older than the retention
    /// window (relative to the newest point) are dropped.
    pub fn insert(&mut self, reading: &SensorReading, origin: StoreOrigin) {
        let series = self.series.entry(reading.channel).or_default();
        let point = StoredPoint { t: reading.t, value: reading.value, origin };
        let at = series.partition_point(|p| p.t <= point.t);
        series.insert(at, point);
        if let Some(retention) = self.retention {
            let newest = series.last().map(|p| p.t).unwrap_or(SimTime::ZERO);
            let cutoff = newest.since(SimTime::ZERO).as_micros().saturating_sub(retention.as_micros());
            let keep_from = series.partition_point(|p| p.t.as_micros() < cutoff);
            if keep_from > 0 {
                series.drain(..keep_from);
            }
        }
    }

    pub fn series(&self, channel: Channel) -> &[StoredPoint] {
        self.series.get(&channel).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn channels(&self) -> impl Iterator<Item = Channel> + '_ {
        self.series.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.series.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Points absorbed into the given summary.
    pub fn absorbed_by(&self, channel: Channel, summary_seq: u64) -> Vec<StoredPoint> {
        self.series(channel)
            .iter()
            .filter(|p| p.origin == StoreOrigin::Summary(summary_seq))
            .copied()
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticsReport {
    pub window_start: SimTime,
    pub window_end: SimTime,
    /// Least-squares slope per channel, units per second.
    pub slopes: BTreeMap<Channel, f64>,
    /// Channels whose absolute slope exceeds their configured limit.
    pub flags: BTreeSet<Channel>,
    pub payload_bytes: u32,
}

/// Ordinary least-squares slope of `(t seconds, value)` pairs. `None` with
/// fewer than two points or when every point shares one timestamp.
pub fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let t_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let v_mean = points.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, v) in points {
        sxy += (t - t_mean) * (v - v_mean);
        sxx += (t - t_mean) * (t - t_mean);
    }
    let slope = sxy / sxx;
    (sxx > 0.0 && slope.is_finite()).then_some(slope)
}

/// Fits a trend per channel over points in `[now - window, now]` and flags
/// channels whose slope magnitude exceeds their limit.
pub fn run_analytics(
    store: &LocalStore,
    now: SimTime,
    window: SimDuration,
    slope_limits: &BTreeMap<Channel, f64>,
    payload_bytes: u32,
) -> AnalyticsReport {
    let start = SimTime::from_micros(now.as_micros().saturating_sub(window.as_micros()));
    let mut slopes = BTreeMap::new();
    let mut flags = BTreeSet::new();
    for channel in store.channels() {
        let points: Vec<(f64, f64)> = store
            .series(channel)
            .iter()
            .filter(|p| p.t >= start && p.t <= now && p.value.is_finite())
            .map(|p| (p.t.as_secs_f64(), p.value))
            .collect();
        if let Some(slope) = least_squares_slope(&points) {
            slopes.insert(channel, slope);
            if slope_limits.get(&channel).is_some_and(|limit| slope.abs() > *limit) {
                flags.insert(channel);
            }
        }
    }
    AnalyticsReport { window_start: start, window_end: now, slopes, flags, payload_bytes }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forty_items_fit_the_deadline() {
        let out = process_buffer((0..40).collect(), &WorkloadParams::default());
        assert_eq!(out.processed.len(), 40);
        assert!(out.forwarded.is_empty());
        assert_eq!(out.elapsed, SimDuration::from_micros(400_000));
    }

    #[test]
    fn hundred_items_split_in_half() {
        let out = process_buffer((0..100).collect::<Vec<u32>>(), &WorkloadParams::default());
        assert_eq!(out.processed, (0..50).collect::<Vec<_>>());
        assert_eq!(out.forwarded, (50..100).collect::<Vec<_>>());
        assert_eq!(out.elapsed, SimDuration::from_micros(500_000));
    }

    #[test]
    fn empty_pass() {
        let out = process_buffer(Vec::<u8>::new(), &WorkloadParams::default());
        assert!(out.processed.is_empty() && out.forwarded.is_empty());
        assert!(out.elapsed.is_zero());
    }

    #[test]
    fn in_flight_item_completes_past_the_deadline() {
        let params = WorkloadParams { analytics_deadline_s: 0.505, ..WorkloadParams::default() };
        let out = process_buffer((0..100).collect::<Vec<u32>>(), &params);
        assert_eq!(out.processed.len(), 51);
        assert_eq!(out.elapsed, SimDuration::from_micros(510_000));
        assert_eq!(params.items_per_pass(), 51);
    }

    #[test]
    fn excess_is_deferred() {
        let out = process_buffer((0..130).collect::<Vec<u32>>(), &WorkloadParams::default());
        assert_eq!(out.processed.len() + out.forwarded.len(), 100);
        assert_eq!(out.deferred, (100..130).collect::<Vec<_>>());
    }

    #[test]
    fn co_component_capacity() {
        assert_eq!(apportion(vec![1, 2, 3], None), (vec![1, 2, 3], vec![]));
        assert_eq!(apportion(vec![1, 2, 3], Some(2)), (vec![1, 2], vec![3]));
    }

    #[test]
    fn default_params_allow_fifty_per_pass() {
        assert_eq!(WorkloadParams::default().items_per_pass(), 50);
    }

    #[test]
    fn params_validation() {
        let slow = WorkloadParams { algorithm_time_s: 1.0, ..WorkloadParams::default() };
        assert!(slow.validate().is_err());
        assert!(WorkloadParams::default().validate().is_ok());
    }

    fn reading(ch: Channel, secs: u64, value: f64) -> SensorReading {
        SensorReading { t: SimTime::from_micros(secs * 1_000_000), channel: ch, value, source_id: 1, payload_bytes: 16 }
    }

    #[test]
    fn three_point_slope() {
        let mut store = LocalStore::new(None);
        for (t, v) in [(0, 36.0), (60, 36.2), (120, 36.4)] {
            store.insert(&reading(Channel::BodyTemp, t, v), StoreOrigin::Exception);
        }
        let report = run_analytics(
            &store,
            SimTime::from_micros(120_000_000),
            SimDuration::from_secs(300),
            &BTreeMap::new(),
            64,
        );
        // Closed form for equally spaced points: (v2 - v0) / (t2 - t0).
        let expected = (36.4 - 36.0) / 120.0;
        let slope = report.slopes[&Channel::BodyTemp];
        assert!((slope - 0.2 / 60.0).abs() < 1e-12);
        assert!((slope - expected).abs() < 1e-12);
        assert!(report.flags.is_empty());
    }

    #[test]
    fn constant_series_has_zero_slope_and_single_point_is_omitted() {
        let mut store = LocalStore::new(None);
        for t in 0..5 {
            store.insert(&reading(Channel::HRM, t, 70.0), StoreOrigin::Exception);
        }
        store.insert(&reading(Channel::BP, 3, 120.0), StoreOrigin::Exception);
        let limits = BTreeMap::from([(Channel::HRM, 0.0)]);
        let report = run_analytics(&store, SimTime::from_micros(5_000_000), SimDuration::from_secs(60), &limits, 64);
        assert_eq!(report.slopes.get(&Channel::HRM), Some(&0.0));
        assert!(!report.slopes.contains_key(&Channel::BP));
        assert!(report.flags.is_empty());
    }

    #[test]
    fn steep_trend_is_flagged() {
        let mut store = LocalStore::new(None);
        for t in 0..10 {
            store.insert(&reading(Channel::BodyTemp, t * 10, 36.0 + t as f64 * 0.1), StoreOrigin::Exception);
        }
        let limits = BTreeMap::from([(Channel::BodyTemp, 0.005)]);
        let report = run_analytics(&store, SimTime::from_micros(90_000_000), SimDuration::from_secs(300), &limits, 64);
        assert!(report.flags.contains(&Channel::BodyTemp));
    }

    #[test]
    fn retention_drops_old_points() {
        let mut store = LocalStore::new(Some(SimDuration::from_secs(10)));
        for t in 0..30 {
            store.insert(&reading(Channel::HRM, t, 70.0), StoreOrigin::Exception);
        }
        let s = store.series(Channel::HRM);
        assert_eq!(s.first().unwrap().t, SimTime::from_micros(19_000_000));
        assert!(s.windows(2).all(|w| w[0].t <= w[1].t));
    }
}
