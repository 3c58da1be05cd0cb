//! Split-rendering VR traffic generators.
//!
//! Downlink carries video batches (one per rendered frame) and raw PCM audio;
//! uplink carries pose/tracking and stream statistics paced by the frame rate.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Result, SimError};

pub const DEFAULT_FRAME_RATE: f64 = 90.0;
pub const DEFAULT_VIDEO_BITRATE: f64 = 100e6;
pub const VIDEO_PACKET_BYTES: u32 = 1448;
pub const AUDIO_PACKET_BYTES: u32 = 1200;
pub const AUDIO_PACKETS_PER_BATCH: u32 = 4;
pub const AUDIO_PERIOD_S: f64 = 0.025;
pub const TRACKING_PACKET_BYTES: u32 = 106;
pub const TRACKING_PACKETS_PER_FRAME: u32 = 3;
pub const STATS_PACKET_BYTES: u32 = 212;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Dl,
    Ul,
}

impl Direction {
    pub fn as_str(&self) -> &'static str {
        match self {
            Direction::Dl => "dl",
            Direction::Ul => "ul",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrafficKind {
    Video,
    Audio,
    Tracking,
    Stats,
}

impl TrafficKind {
    pub const ALL: [TrafficKind; 4] = [
        TrafficKind::Video,
        TrafficKind::Audio,
        TrafficKind::Tracking,
        TrafficKind::Stats,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            TrafficKind::Video => "video",
            TrafficKind::Audio => "audio",
            TrafficKind::Tracking => "tracking",
            TrafficKind::Stats => "stats",
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Generation law of one VR traffic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSpec {
    pub direction: Direction,
    pub kind: TrafficKind,
    /// Frames per second; paces video, tracking and stats.
    pub frame_rate: f64,
    /// Application bitrate in bit/s (video only).
    #[serde(default)]
    pub bitrate_bps: f64,
    pub packet_size: u32,
    /// Batch period in seconds for audio; ignored by frame-paced kinds.
    #[serde(default)]
    pub period_s: f64,
    /// Packets per event (ignored by video, whose batch size follows the bitrate).
    #[serde(default = "one")]
    pub packets_per_event: u32,
}

fn one() -> u32 {
    1
}

impl FlowSpec {
    pub fn video(bitrate_bps: f64, frame_rate: f64, packet_size: u32) -> Self {
        Self {
            direction: Direction::Dl,
            kind: TrafficKind::Video,
            frame_rate,
            bitrate_bps,
            packet_size,
            period_s: 0.0,
            packets_per_event: 0,
        }
    }

    /// Raw 16-bit stereo PCM at 48 kHz: 4 x 1200 B every 25 ms.
    pub fn audio(frame_rate: f64) -> Self {
        Self {
            direction: Direction::Dl,
            kind: TrafficKind::Audio,
            frame_rate,
            bitrate_bps: 0.0,
            packet_size: AUDIO_PACKET_BYTES,
            period_s: AUDIO_PERIOD_S,
            packets_per_event: AUDIO_PACKETS_PER_BATCH,
        }
    }

    pub fn tracking(frame_rate: f64) -> Self {
        Self {
            direction: Direction::Ul,
            kind: TrafficKind::Tracking,
            frame_rate,
            bitrate_bps: 0.0,
            packet_size: TRACKING_PACKET_BYTES,
            period_s: 0.0,
            packets_per_event: TRACKING_PACKETS_PER_FRAME,
        }
    }

    pub fn stats(frame_rate: f64) -> Self {
        Self {
            direction: Direction::Ul,
            kind: TrafficKind::Stats,
            frame_rate,
            bitrate_bps: 0.0,
            packet_size: STATS_PACKET_BYTES,
            period_s: 0.0,
            packets_per_event: 1,
        }
    }

    /// The four per-user flows of a split-rendering session.
    pub fn vr_session(bitrate_bps: f64, frame_rate: f64) -> Vec<FlowSpec> {
        vec![
            FlowSpec::video(bitrate_bps, frame_rate, VIDEO_PACKET_BYTES),
            FlowSpec::audio(frame_rate),
            FlowSpec::tracking(frame_rate),
            FlowSpec::stats(frame_rate),
        ]
    }

    pub fn default_session() -> Vec<FlowSpec> {
        Self::vr_session(DEFAULT_VIDEO_BITRATE, DEFAULT_FRAME_RATE)
    }

    /// Frame inter-arrival time in seconds.
    pub fn frame_interval(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Long-run mean video packets per frame.
    pub fn mean_batch(&self) -> f64 {
        self.bitrate_bps / (self.frame_rate * 8.0 * self.packet_size as f64)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(SimError::config(format!("{} flow: {what}", self.kind)));
        if !(self.frame_rate > 0.0) || !self.frame_rate.is_finite() {
            return bad("frame rate must be positive");
        }
        if self.packet_size == 0 {
            return bad("packet size must be positive");
        }
        match self.kind {
            TrafficKind::Video => {
                if !(self.bitrate_bps >= 0.0) || !self.bitrate_bps.is_finite() {
                    return bad("bitrate must be non-negative");
                }
            }
            TrafficKind::Audio => {
                if !(self.period_s > 0.0) {
                    return bad("audio period must be positive");
                }
            }
            TrafficKind::Tracking | TrafficKind::Stats => {}
        }
        Ok(())
    }
}

/// Per-frame video packet counts from a fractional accumulator.
///
/// Every count is within one packet of the mean, and the running total never
/// lags the ideal total by a full packet.
pub fn video_batch_sizes(bitrate_bps: f64, frame_rate: f64, packet_size: u32, n_frames: usize) -> Result<Vec<u32>> {
    if !(bitrate_bps >= 0.0) || !(frame_rate > 0.0) || packet_size == 0 {
        return Err(SimError::config(format!(
            "video batch sizing needs rho >= 0, phi > 0, L > 0 (got {bitrate_bps}, {frame_rate}, {packet_size})"
        )));
    }
    let mut acc = BatchAccumulator::new(bitrate_bps / (frame_rate * 8.0 * packet_size as f64));
    Ok((0..n_frames).map(|_| acc.next_batch()).collect())
}

#[derive(Debug, Clone, Copy)]
struct BatchAccumulator {
    per_frame: f64,
    carry: f64,
}

impl BatchAccumulator {
    fn new(per_frame: f64) -> Self {
        Self { per_frame, carry: 0.0 }
    }

    fn next_batch(&mut self) -> u32 {
        self.carry += self.per_frame;
        let n = self.carry.floor();
        self.carry -= n;
        n as u32
    }
}

/// A set of packets of one flow generated at the same instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArrivalBatch {
    pub time_ns: u64,
    pub count: u32,
    pub size_bytes: u32,
}

/// Lazily walks a flow's arrival instants in time order.
#[derive(Debug, Clone)]
pub struct FlowGenerator {
    spec: FlowSpec,
    offset_s: f64,
    end_ns: u64,
    /// Event counter: frames for video/stats, periods for audio, sub-frame
    /// slots for tracking.
    k: u64,
    acc: BatchAccumulator,
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

impl FlowGenerator {
    pub fn new(spec: &FlowSpec, duration_s: f64, offset_s: f64) -> Self {
        Self {
            acc: BatchAccumulator::new(spec.mean_batch()),
            spec: spec.clone(),
            offset_s,
            end_ns: secs_to_ns(duration_s.max(0.0)),
            k: 0,
        }
    }

    pub fn spec(&self) -> &FlowSpec {
        &self.spec
    }
}

impl Iterator for FlowGenerator {
    type Item = ArrivalBatch;

    fn next(&mut self) -> Option<ArrivalBatch> {
        let delta = self.spec.frame_interval();
        loop {
            let k = self.k;
            self.k += 1;
            let (t, count) = match self.spec.kind {
                TrafficKind::Video => (self.offset_s + k as f64 * delta, self.acc.next_batch()),
                TrafficKind::Audio => (
                    self.offset_s + k as f64 * self.spec.period_s,
                    self.spec.packets_per_event,
                ),
                TrafficKind::Tracking => {
                    let per = self.spec.packets_per_event.max(1) as u64;
                    let frame = k / per;
                    let j = k % per;
                    (
                        self.offset_s + frame as f64 * delta + j as f64 * delta / per as f64,
                        1,
                    )
                }
                TrafficKind::Stats => (self.offset_s + k as f64 * delta, self.spec.packets_per_event),
            };
            let time_ns = secs_to_ns(t);
            if time_ns >= self.end_ns {
                return None;
            }
            if count == 0 {
                continue;
            }
            return Some(ArrivalBatch {
                time_ns,
                count,
                size_bytes: self.spec.packet_size,
            });
        }
    }
}

/// One generated packet, before it touches any queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacketArrival {
    pub time_s: f64,
    pub direction: Direction,
    pub kind: TrafficKind,
    pub size_bytes: u32,
}

/// Time-ordered packet arrivals of a flow over `[0, duration)`.
pub fn generate_flow_events(spec: &FlowSpec, duration_s: f64, offset_s: f64) -> Vec<PacketArrival> {
    if !(duration_s > 0.0) {
        return Vec::new();
    }
    FlowGenerator::new(spec, duration_s, offset_s)
        .flat_map(|b| {
            std::iter::repeat_n(
                PacketArrival {
                    time_s: b.time_ns as f64 * 1e-9,
                    direction: spec.direction,
                    kind: spec.kind,
                    size_bytes: b.size_bytes,
                },
                b.count as usize,
            )
        })
        .collect()
}

/// Byte totals per time bin, keyed by traffic kind.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceHistogram {
    pub bin_s: f64,
    pub bins: BTreeMap<TrafficKind, Vec<u64>>,
}

impl TraceHistogram {
    pub fn n_bins(&self) -> usize {
        self.bins.values().map(Vec::len).max().unwrap_or(0)
    }

    pub fn total_bytes(&self) -> u64 {
        self.bins.values().flatten().sum()
    }

    /// Rows of `(bin_start_s, kind, bytes)` in bin-major order.
    pub fn rows(&self) -> Vec<(f64, TrafficKind, u64)> {
        let n = self.n_bins();
        let mut out = Vec::with_capacity(n * self.bins.len());
        for i in 0..n {
            for (kind, v) in &self.bins {
                out.push((i as f64 * self.bin_s, *kind, v.get(i).copied().unwrap_or(0)));
            }
        }
        out
    }
}

/// Bins packet bytes by arrival time. `span_s` fixes the minimum number of
/// bins so that idle tails show up as zeros.
pub fn trace_histogram(arrivals: &[PacketArrival], bin_s: f64, span_s: f64) -> Result<TraceHistogram> {
    if !(bin_s > 0.0) {
        return Err(SimError::config("histogram bin width must be positive"));
    }
    let min_bins = (span_s.max(0.0) / bin_s).ceil() as usize;
    let mut bins: BTreeMap<TrafficKind, Vec<u64>> = BTreeMap::new();
    for a in arrivals {
        bins.entry(a.kind).or_insert_with(|| vec![0; min_bins]);
    }
    for a in arrivals {
        let idx = (a.time_s / bin_s).floor().max(0.0) as usize;
        let v = bins.get_mut(&a.kind).expect("kind inserted above");
        if v.len() <= idx {
            v.resize(idx + 1, 0);
        }
        v[idx] += a.size_bytes as u64;
    }
    let n = bins.values().map(Vec::len).max().unwrap_or(min_bins).max(min_bins);
    for v in bins.values_mut() {
        v.resize(n, 0);
    }
    Ok(TraceHistogram { bin_s, bins })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_batch_mean_is_about_96() {
        let sizes = video_batch_sizes(100e6, 90.0, 1448, 9000).unwrap();
        let mean = sizes.iter().map(|&n| n as f64).sum::<f64>() / sizes.len() as f64;
        // 100e6 / 90 / 11584 = 95.9146
        assert!((mean - 95.9146).abs() < 0.01, "{mean}");
        assert!(sizes.iter().all(|&n| n == 95 || n == 96));
    }

    #[test]
    fn low_rate_batch_mean() {
        let sizes = video_batch_sizes(40e6, 72.0, 1448, 7200).unwrap();
        let mean = sizes.iter().map(|&n| n as f64).sum::<f64>() / sizes.len() as f64;
        // 40e6 / 72 / 11584 = 47.96
        assert!((mean - 47.96).abs() < 0.01, "{mean}");
    }

    #[test]
    fn zero_bitrate_gives_empty_batches() {
        assert!(video_batch_sizes(0.0, 90.0, 1448, 50).unwrap().iter().all(|&n| n == 0));
        assert!(video_batch_sizes(1e6, 0.0, 1448, 5).is_err());
        assert!(video_batch_sizes(1e6, 90.0, 0, 5).is_err());
        assert!(video_batch_sizes(-1.0, 90.0, 1448, 5).is_err());
    }

    #[test]
    fn video_flow_offered_load() {
        let spec = FlowSpec::video(100e6, 90.0, 1448);
        let pkts = generate_flow_events(&spec, 10.0, 0.0);
        // 10 s * 100e6 / 11584 = 86325.97 packets
        let expected = 10.0 * 100e6 / (8.0 * 1448.0);
        assert!((pkts.len() as f64 - expected).abs() <= 96.0, "{}", pkts.len());
        let load = pkts.len() as f64 * 1448.0 * 8.0 / 10.0;
        assert!((load / 100e6 - 1.0).abs() < 1e-3);
        let batches = FlowGenerator::new(&spec, 10.0, 0.0).count();
        assert_eq!(batches, 900);
    }

    #[test]
    fn tracking_flow_one_second() {
        let pkts = generate_flow_events(&FlowSpec::tracking(90.0), 1.0, 0.0);
        assert_eq!(pkts.len(), 270);
        assert!(pkts.iter().all(|p| p.size_bytes == 106 && p.direction == Direction::Ul));
        // evenly spaced at 1/270 s
        let gap = pkts[1].time_s - pkts[0].time_s;
        assert!((gap - 1.0 / 270.0).abs() < 1e-9);
    }

    #[test]
    fn audio_flow_cadence() {
        let pkts = generate_flow_events(&FlowSpec::audio(90.0), 1.0, 0.0);
        assert_eq!(pkts.len(), 160);
        assert_eq!(pkts[3].time_s, 0.0);
        assert!((pkts[4].time_s - 0.025).abs() < 1e-12);
    }

    #[test]
    fn zero_duration_is_empty() {
        for spec in FlowSpec::default_session() {
            assert!(generate_flow_events(&spec, 0.0, 0.0).is_empty());
        }
    }

    #[test]
    fn arrivals_are_sorted_and_offset() {
        for spec in FlowSpec::default_session() {
            let pkts = generate_flow_events(&spec, 0.5, 0.004);
            assert!(pkts.first().unwrap().time_s >= 0.004 - 1e-12);
            assert!(pkts.windows(2).all(|w| w[0].time_s <= w[1].time_s));
        }
    }

    #[test]
    fn uplink_bytes_per_frame() {
        let frames = 90;
        let ul: u64 = [FlowSpec::tracking(90.0), FlowSpec::stats(90.0)]
            .iter()
            .flat_map(|s| generate_flow_events(s, 1.0, 0.0))
            .map(|p| p.size_bytes as u64)
            .sum();
        assert_eq!(ul, 530 * frames);
    }

    #[test]
    fn histogram_basics() {
        let h = trace_histogram(&[], 0.001, 0.0).unwrap();
        assert_eq!(h.total_bytes(), 0);
        let one = [PacketArrival {
            time_s: 0.0,
            direction: Direction::Dl,
            kind: TrafficKind::Video,
            size_bytes: 1448,
        }];
        let h = trace_histogram(&one, 0.001, 0.0).unwrap();
        assert_eq!(h.bins[&TrafficKind::Video][0], 1448);
        assert!(trace_histogram(&one, 0.0, 1.0).is_err());
    }

    #[test]
    fn histogram_shows_frame_periodicity() {
        let spec = FlowSpec::video(100e6, 90.0, 1448);
        let pkts = generate_flow_events(&spec, 10.0, 0.0);
        let h = trace_histogram(&pkts, 0.001, 10.0).unwrap();
        let total: u64 = pkts.iter().map(|p| p.size_bytes as u64).sum();
        assert_eq!(h.total_bytes(), total);
        let v = &h.bins[&TrafficKind::Video];
        assert_eq!(v.len(), 10_000);
        let spikes: Vec<usize> = v.iter().enumerate().filter(|(_, &b)| b > 0).map(|(i, _)| i).collect();
        assert_eq!(spikes.len(), 900);
        for w in spikes.windows(2) {
            let gap = w[1] - w[0];
            assert!(gap == 11 || gap == 12, "gap {gap}");
        }
    }
}
