//! Delay percentiles and Wi-Fi Alliance VR-gaming threshold verdicts.

use serde::Serialize;
use std::fmt;

use crate::error::{Result, SimError};
use crate::traffic::{Direction, TrafficKind};

pub const DL_P75_MAX_S: f64 = 0.005;
pub const DL_P95_MAX_S: f64 = 0.010;
pub const DL_P999_MAX_S: f64 = 0.050;
pub const UL_P90_MAX_S: f64 = 0.002;
pub const UL_P999_MAX_S: f64 = 0.010;
/// Drop fraction above which a direction fails every one of its rows.
pub const MAX_DROP_FRACTION: f64 = 0.001;

/// 1-based nearest rank `ceil(p/100 * n)`, computed in integer arithmetic on
/// p rounded to a thousandth of a percent.
fn nearest_rank(p: f64, n: u64) -> Result<u64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(SimError::Domain(format!("percentile {p} outside (0, 100]")));
    }
    if n == 0 {
        return Err(SimError::EmptySamples("percentile of an empty sample set".into()));
    }
    let milli = (p * 1000.0).round() as u128;
    let rank = (milli * n as u128).div_ceil(100_000) as u64;
    Ok(rank.clamp(1, n))
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    let rank = nearest_rank(p, sorted.len() as u64)?;
    Ok(sorted[(rank - 1) as usize])
}

/// Run-length encoded delay samples (integer nanoseconds), ascending.
///
/// Packets of one A-MPDU share a generation instant and a delivery instant,
/// so this is far smaller than the raw sample list while giving identical
/// nearest-rank percentiles.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DelayDistribution {
    points: Vec<(u64, u64)>,
    total: u64,
}

impl DelayDistribution {
    pub fn from_values<I: IntoIterator<Item = u64>>(values: I) -> Self {
        let mut v: Vec<u64> = values.into_iter().collect();
        v.sort_unstable();
        let total = v.len() as u64;
        let mut points: Vec<(u64, u64)> = Vec::new();
        for x in v {
            match points.last_mut() {
                Some((val, c)) if *val == x => *c += 1,
                _ => points.push((x, 1)),
            }
        }
        Self { points, total }
    }

    pub fn merge(&mut self, other: &DelayDistribution) {
        if other.total == 0 {
            return;
        }
        let mut out = Vec::with_capacity(self.points.len() + other.points.len());
        let (mut i, mut j) = (0, 0);
        let (a, b) = (&self.points, &other.points);
        while i < a.len() || j < b.len() {
            let take_a = j >= b.len() || (i < a.len() && a[i].0 <= b[j].0);
            let (val, c) = if take_a {
                i += 1;
                a[i - 1]
            } else {
                j += 1;
                b[j - 1]
            };
            match out.last_mut() {
                Some((v, n)) if *v == val => *n += c,
                _ => out.push((val, c)),
            }
        }
        self.points = out;
        self.total += other.total;
    }

    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    pub fn percentile_ns(&self, p: f64) -> Result<u64> {
        let rank = nearest_rank(p, self.total)?;
        let mut seen = 0;
        for &(v, c) in &self.points {
            seen += c;
            if seen >= rank {
                return Ok(v);
            }
        }
        unreachable!("rank never exceeds total")
    }

    pub fn percentile(&self, p: f64) -> Result<f64> {
        Ok(self.percentile_ns(p)? as f64 * 1e-9)
    }

    pub fn mean(&self) -> Option<f64> {
        if self.total == 0 {
            return None;
        }
        let sum: u128 = self.points.iter().map(|&(v, c)| v as u128 * c as u128).sum();
        Some(sum as f64 / self.total as f64 * 1e-9)
    }

    pub fn max_ns(&self) -> Option<u64> {
        self.points.last().map(|p| p.0)
    }

    /// Expanded ascending values, for tests and sample dumps.
    pub fn expand(&self) -> Vec<u64> {
        self.points
            .iter()
            .flat_map(|&(v, c)| std::iter::repeat_n(v, c as usize))
            .collect()
    }
}

/// Delays of one traffic class plus its packet accounting.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SampleSet {
    pub delays: DelayDistribution,
    pub generated: u64,
    pub dropped: u64,
}

impl SampleSet {
    pub fn merge(&mut self, other: &SampleSet) {
        self.delays.merge(&other.delays);
        self.generated += other.generated;
        self.dropped += other.dropped;
    }

    pub fn drop_fraction(&self) -> f64 {
        if self.generated == 0 {
            0.0
        } else {
            self.dropped as f64 / self.generated as f64
        }
    }

    /// Convenience constructor from delays in seconds (rounded to ns).
    pub fn from_secs(delays_s: &[f64]) -> Self {
        let delays = DelayDistribution::from_values(delays_s.iter().map(|d| (d * 1e9).round() as u64));
        Self {
            generated: delays.len(),
            delays,
            dropped: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum KindFilter {
    Only(TrafficKind),
    All,
}

impl fmt::Display for KindFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KindFilter::Only(k) => write!(f, "{k}"),
            KindFilter::All => f.write_str("all"),
        }
    }
}

/// Percentile summary of one (direction, kind) class. Times in seconds;
/// `None` when there are no samples.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DelayReport {
    pub direction: Direction,
    pub kind: KindFilter,
    pub n_samples: u64,
    pub generated: u64,
    pub drop_count: u64,
    pub p50: Option<f64>,
    pub p75: Option<f64>,
    pub p90: Option<f64>,
    pub p95: Option<f64>,
    pub p999: Option<f64>,
    pub mean: Option<f64>,
}

impl DelayReport {
    pub fn from_set(direction: Direction, kind: KindFilter, set: &SampleSet) -> Self {
        let pct = |p| set.delays.percentile(p).ok();
        Self {
            direction,
            kind,
            n_samples: set.delays.len(),
            generated: set.generated,
            drop_count: set.dropped,
            p50: pct(50.0),
            p75: pct(75.0),
            p90: pct(90.0),
            p95: pct(95.0),
            p999: pct(99.9),
            mean: set.delays.mean(),
        }
    }
}

/// Compliance with each Wi-Fi Alliance VR-gaming delay row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WfaVerdict {
    pub dl_p75_le_5ms: bool,
    pub dl_p95_le_10ms: bool,
    pub dl_p999_le_50ms: bool,
    pub ul_p90_le_2ms: bool,
    pub ul_p999_le_10ms: bool,
    pub pass_all: bool,
}

impl WfaVerdict {
    pub fn dl_pass(&self) -> bool {
        self.dl_p75_le_5ms && self.dl_p95_le_10ms && self.dl_p999_le_50ms
    }

    pub fn ul_pass(&self) -> bool {
        self.ul_p90_le_2ms && self.ul_p999_le_10ms
    }
}

/// Evaluates the five threshold rows over DL video and UL samples. A
/// direction that dropped more than 0.1% of its packets fails all its rows.
pub fn wfa_verdict(dl_video: &SampleSet, ul: &SampleSet) -> Result<WfaVerdict> {
    if dl_video.delays.is_empty() {
        return Err(SimError::EmptySamples("no delivered downlink video packets".into()));
    }
    if ul.delays.is_empty() {
        return Err(SimError::EmptySamples("no delivered uplink packets".into()));
    }
    let dl_ok = dl_video.drop_fraction() <= MAX_DROP_FRACTION;
    let ul_ok = ul.drop_fraction() <= MAX_DROP_FRACTION;
    let row = |set: &SampleSet, ok: bool, p: f64, max: f64| -> Result<bool> {
        Ok(ok && set.delays.percentile(p)? <= max)
    };
    let dl_p75_le_5ms = row(dl_video, dl_ok, 75.0, DL_P75_MAX_S)?;
    let dl_p95_le_10ms = row(dl_video, dl_ok, 95.0, DL_P95_MAX_S)?;
    let dl_p999_le_50ms = row(dl_video, dl_ok, 99.9, DL_P999_MAX_S)?;
    let ul_p90_le_2ms = row(ul, ul_ok, 90.0, UL_P90_MAX_S)?;
    let ul_p999_le_10ms = row(ul, ul_ok, 99.9, UL_P999_MAX_S)?;
    Ok(WfaVerdict {
        dl_p75_le_5ms,
        dl_p95_le_10ms,
        dl_p999_le_50ms,
        ul_p90_le_2ms,
        ul_p999_le_10ms,
        pass_all: dl_p75_le_5ms && dl_p95_le_10ms && dl_p999_le_50ms && ul_p90_le_2ms && ul_p999_le_10ms,
    })
}
