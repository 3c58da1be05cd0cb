//! Sweep drivers (minimum MCS per bandwidth, user capacity, link splits) and
//! their CSV / manifest outputs.
//!
//! Every sweep returns the full list of evaluated points; the headline
//! summaries (minimum MCS, capacity, best split per user count) are computed
//! from those points only, so they can be recomputed from the emitted CSVs.

use rayon::prelude::*;
use serde::Serialize;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::engine::{run_seeds, station_phase, EnsembleOutput, ScenarioConfig};
use crate::error::{Result, SimError};
use crate::metrics::{wfa_verdict, DelayReport, KindFilter, WfaVerdict};
use crate::mld::Mode;
use crate::phy::{data_subcarriers, LinkConfig, McsEntry, MCS_TABLE};
use crate::traffic::{generate_flow_events, trace_histogram, Direction, PacketArrival, TraceHistogram, TrafficKind};

pub const SUMMARY_HEADER: [&str; 17] = [
    "scenario_id",
    "mode",
    "links",
    "bw_mhz",
    "mcs",
    "n_users",
    "direction",
    "kind",
    "n_samples",
    "drops",
    "p50",
    "p75",
    "p90",
    "p95",
    "p999",
    "mean",
    "pass_all",
];

pub const TRACE_HEADER: [&str; 3] = ["bin_start_s", "kind", "bytes"];

/// `n` equal-width links, written `NxBW` (e.g. `2x80`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct LinkSplit {
    pub n_links: u32,
    pub bandwidth_mhz: u32,
}

impl LinkSplit {
    pub fn new(n_links: u32, bandwidth_mhz: u32) -> Result<Self> {
        if n_links == 0 {
            return Err(SimError::config("a link split needs at least one link"));
        }
        data_subcarriers(bandwidth_mhz).map_err(|_| SimError::config(format!("unsupported bandwidth {bandwidth_mhz} MHz")))?;
        Ok(Self { n_links, bandwidth_mhz })
    }

    pub fn total_mhz(&self) -> u32 {
        self.n_links * self.bandwidth_mhz
    }

    pub fn links(&self, mcs: McsEntry) -> Vec<LinkConfig> {
        (0..self.n_links).map(|i| LinkConfig::new(i, self.bandwidth_mhz, mcs)).collect()
    }

    /// SLO is only meaningful on a single link.
    pub fn mode_for(&self, mode: Mode) -> Result<Mode> {
        if mode == Mode::Slo && self.n_links != 1 {
            return Err(SimError::config(format!("SLO cannot run on {self}")));
        }
        Ok(mode)
    }
}

impl fmt::Display for LinkSplit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.n_links, self.bandwidth_mhz)
    }
}

impl FromStr for LinkSplit {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || SimError::config(format!("bad link split '{s}' (expected e.g. 2x80)"));
        let (n, bw) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        let n = n.trim().parse().map_err(|_| bad())?;
        let bw = bw.trim().parse().map_err(|_| bad())?;
        LinkSplit::new(n, bw)
    }
}

/// Per-point ensemble budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepOptions {
    pub seeds: u32,
    pub duration_s: f64,
    pub parallel: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        Self {
            seeds: 100,
            duration_s: 10.0,
            parallel: true,
        }
    }
}

impl SweepOptions {
    fn seed_list(&self) -> Result<Vec<u64>> {
        if self.seeds == 0 {
            return Err(SimError::config("seeds must be at least 1"));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(SimError::config("duration must be positive"));
        }
        Ok((0..self.seeds as u64).collect())
    }
}

/// One evaluated configuration.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub scenario_id: String,
    pub mode: Mode,
    pub split: LinkSplit,
    pub mcs: u8,
    pub n_users: u32,
    pub config: ScenarioConfig,
    pub seeds: Vec<u64>,
    /// Pooled reports in [`crate::engine::REPORT_CLASSES`] order.
    pub reports: Vec<DelayReport>,
    pub per_seed: Vec<(u64, Vec<DelayReport>)>,
    /// `None` when a direction delivered nothing at all.
    pub verdict: Option<WfaVerdict>,
    pub conserved: bool,
}

impl SweepPoint {
    pub fn pass_all(&self) -> bool {
        self.verdict.is_some_and(|v| v.pass_all)
    }

    /// The row binding a minimum-MCS search: DL 75th ≤ 5 ms, UL 90th ≤ 2 ms.
    pub fn passes_direction(&self, direction: Direction) -> bool {
        self.verdict.is_some_and(|v| match direction {
            Direction::Dl => v.dl_p75_le_5ms,
            Direction::Ul => v.ul_p90_le_2ms,
        })
    }

    pub fn report(&self, direction: Direction, kind: KindFilter) -> Option<&DelayReport> {
        self.reports.iter().find(|r| r.direction == direction && r.kind == kind)
    }

    /// DL video 99.9th percentile in seconds.
    pub fn dl_p999(&self) -> Option<f64> {
        self.report(Direction::Dl, KindFilter::Only(TrafficKind::Video)).and_then(|r| r.p999)
    }

    pub fn ul_p999(&self) -> Option<f64> {
        self.report(Direction::Ul, KindFilter::All).and_then(|r| r.p999)
    }
}

pub fn scenario_id(mode: Mode, split: LinkSplit, mcs: u8, n_users: u32) -> String {
    format!("{mode}-{split}-mcs{mcs}-k{n_users}")
}

/// Runs one configuration over the option's seed list.
pub fn evaluate_point(config: &ScenarioConfig, opts: &SweepOptions) -> Result<SweepPoint> {
    let seeds = opts.seed_list()?;
    let split = split_of(config)?;
    let mcs = config.links[0].mcs.index;
    let ens = run_seeds(config, &seeds, opts.parallel)?;
    Ok(point_from_ensemble(config, split, mcs, ens))
}

fn split_of(config: &ScenarioConfig) -> Result<LinkSplit> {
    let first = config.links.first().ok_or_else(|| SimError::config("at least one link is required"))?;
    if config
        .links
        .iter()
        .any(|l| l.bandwidth_mhz != first.bandwidth_mhz || l.mcs != first.mcs)
    {
        return Err(SimError::config("sweeps need links of equal bandwidth and MCS"));
    }
    LinkSplit::new(config.links.len() as u32, first.bandwidth_mhz)
}

fn point_from_ensemble(config: &ScenarioConfig, split: LinkSplit, mcs: u8, ens: EnsembleOutput) -> SweepPoint {
    let dl = ens.pooled.class(Direction::Dl, KindFilter::Only(TrafficKind::Video));
    let ul = ens.pooled.class(Direction::Ul, KindFilter::All);
    SweepPoint {
        scenario_id: scenario_id(config.mode, split, mcs, config.n_stations),
        mode: config.mode,
        split,
        mcs,
        n_users: config.n_stations,
        config: config.clone(),
        verdict: wfa_verdict(&dl, &ul).ok(),
        reports: ens.pooled.reports(),
        conserved: ens.pooled.is_conserved(),
        per_seed: ens.per_seed,
        seeds: ens.seeds,
    }
}

fn sweep_config(mode: Mode, split: LinkSplit, mcs: u8, n_users: u32, opts: &SweepOptions) -> Result<ScenarioConfig> {
    let mode = split.mode_for(mode)?;
    let mut cfg = ScenarioConfig::new(mode, split.links(McsEntry::from_index(mcs)?), n_users);
    cfg.duration_s = opts.duration_s;
    cfg.seeds = opts.seeds;
    Ok(cfg)
}

fn run_points(configs: Vec<ScenarioConfig>, opts: &SweepOptions) -> Result<Vec<SweepPoint>> {
    if opts.parallel {
        configs.par_iter().map(|c| evaluate_point(c, opts)).collect()
    } else {
        configs.iter().map(|c| evaluate_point(c, opts)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    MinMcs,
    Capacity,
    LinkSplit,
    SloPair,
}

/// Points of one sweep, canonically ordered by (split, mcs, users).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub kind: SweepKind,
    pub options: SweepOptions,
    pub points: Vec<SweepPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MinMcsEntry {
    pub bandwidth_mhz: u32,
    pub min_mcs: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CapacityEntry {
    pub split: LinkSplit,
    pub mcs: u8,
    pub capacity: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossoverRow {
    pub n_users: u32,
    /// Split with the lowest DL video 99.9th percentile.
    pub best: Option<LinkSplit>,
    pub dl_p999_s: Vec<(LinkSplit, Option<f64>)>,
}

impl SweepResult {
    fn new(kind: SweepKind, options: SweepOptions, mut points: Vec<SweepPoint>) -> Self {
        points.sort_by(|a, b| (a.split, a.mcs, a.n_users).cmp(&(b.split, b.mcs, b.n_users)));
        Self { kind, options, points }
    }

    /// Lowest MCS per per-link bandwidth whose `direction` row passes.
    pub fn min_mcs(&self, direction: Direction) -> Vec<MinMcsEntry> {
        let mut bws: Vec<u32> = self.points.iter().map(|p| p.split.bandwidth_mhz).collect();
        bws.dedup();
        bws.into_iter()
            .map(|bw| MinMcsEntry {
                bandwidth_mhz: bw,
                min_mcs: self
                    .points
                    .iter()
                    .filter(|p| p.split.bandwidth_mhz == bw && p.passes_direction(direction))
                    .map(|p| p.mcs)
                    .min(),
            })
            .collect()
    }

    /// Per (split, mcs): largest K such that every K' ≤ K passes all rows.
    pub fn capacities(&self) -> Vec<CapacityEntry> {
        let mut keys: Vec<(LinkSplit, u8)> = self.points.iter().map(|p| (p.split, p.mcs)).collect();
        keys.dedup();
        keys.into_iter()
            .map(|(split, mcs)| {
                let mut curve: Vec<&SweepPoint> =
                    self.points.iter().filter(|p| p.split == split && p.mcs == mcs).collect();
                curve.sort_by_key(|p| p.n_users);
                let mut capacity = 0;
                for p in curve {
                    if p.n_users != capacity + 1 || !p.pass_all() {
                        break;
                    }
                    capacity = p.n_users;
                }
                CapacityEntry { split, mcs, capacity }
            })
            .collect()
    }

    pub fn capacity_of(&self, split: LinkSplit) -> Option<u32> {
        self.capacities().into_iter().find(|c| c.split == split).map(|c| c.capacity)
    }

    /// For every user count, the split with the lowest DL 99.9th percentile.
    pub fn crossover(&self) -> Vec<CrossoverRow> {
        let mut splits: Vec<LinkSplit> = self.points.iter().map(|p| p.split).collect();
        splits.sort();
        splits.dedup();
        let mut users: Vec<u32> = self.points.iter().map(|p| p.n_users).collect();
        users.sort_unstable();
        users.dedup();
        users
            .into_iter()
            .map(|k| {
                let dl_p999_s: Vec<(LinkSplit, Option<f64>)> = splits
                    .iter()
                    .map(|&s| {
                        let v = self.points.iter().find(|p| p.split == s && p.n_users == k).and_then(|p| p.dl_p999());
                        (s, v)
                    })
                    .collect();
                let best = dl_p999_s
                    .iter()
                    .filter_map(|(s, v)| v.map(|v| (*s, v)))
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(s, _)| s);
                CrossoverRow { n_users: k, best, dl_p999_s }
            })
            .collect()
    }

    pub fn point(&self, split: LinkSplit, mcs: u8, n_users: u32) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.split == split && p.mcs == mcs && p.n_users == n_users)
    }

    pub fn all_conserved(&self) -> bool {
        self.points.iter().all(|p| p.conserved)
    }
}

/// Single AP + single STA over every MCS at each bandwidth. MLO uses two
/// links of the listed width. Both directions come out of the same runs.
pub fn min_mcs_map(mode: Mode, bandwidths: &[u32], opts: &SweepOptions) -> Result<SweepResult> {
    if bandwidths.is_empty() {
        return Err(SimError::config("no bandwidths given"));
    }
    let n_links = match mode {
        Mode::Slo => 1,
        Mode::MloStr => 2,
    };
    let mut configs = Vec::new();
    for &bw in bandwidths {
        let split = LinkSplit::new(n_links, bw)?;
        for m in MCS_TABLE {
            configs.push(sweep_config(mode, split, m.index, 1, opts)?);
        }
    }
    Ok(SweepResult::new(SweepKind::MinMcs, *opts, run_points(configs, opts)?))
}

/// K = 1..=max_users on a fixed link set.
pub fn capacity_sweep(mode: Mode, split: LinkSplit, mcs: u8, max_users: u32, opts: &SweepOptions) -> Result<SweepResult> {
    if max_users == 0 {
        return Err(SimError::config("max_users must be at least 1"));
    }
    let configs = (1..=max_users)
        .map(|k| sweep_config(mode, split, mcs, k, opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::new(SweepKind::Capacity, *opts, run_points(configs, opts)?))
}

/// MLO capacity curves for several ways of dividing the same total bandwidth.
pub fn link_split_compare(
    total_bw_mhz: u32,
    splits: &[LinkSplit],
    mcs: u8,
    max_users: u32,
    opts: &SweepOptions,
) -> Result<SweepResult> {
    if splits.is_empty() {
        return Err(SimError::config("no link splits given"));
    }
    if let Some(s) = splits.iter().find(|s| s.total_mhz() != total_bw_mhz) {
        return Err(SimError::config(format!(
            "split {s} totals {} MHz, expected {total_bw_mhz} MHz",
            s.total_mhz()
        )));
    }
    if max_users == 0 {
        return Err(SimError::config("max_users must be at least 1"));
    }
    let mut configs = Vec::new();
    for &s in splits {
        for k in 1..=max_users {
            configs.push(sweep_config(Mode::MloStr, s, mcs, k, opts)?);
        }
    }
    Ok(SweepResult::new(SweepKind::LinkSplit, *opts, run_points(configs, opts)?))
}

/// Two independent single-link BSSs on orthogonal channels, users split as
/// evenly as possible (the first BSS takes the odd one).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SloPairComparison {
    pub bss: SweepResult,
    pub mlo: SweepResult,
}

impl SloPairComparison {
    /// Largest total N such that every N' ≤ N passes in both BSSs.
    pub fn pair_capacity(&self) -> u32 {
        let single = self.bss.capacities().first().map_or(0, |c| c.capacity);
        let swept = self.bss.points.iter().map(|p| p.n_users).max().unwrap_or(0);
        // N passes iff ceil(N/2) ≤ single; the sweep must reach ceil(N/2).
        let mut n = 0;
        while (n + 2) / 2 <= single && (n + 2) / 2 <= swept {
            n += 1;
        }
        n
    }

    pub fn mlo_capacity(&self) -> u32 {
        self.mlo.capacities().first().map_or(0, |c| c.capacity)
    }
}

pub fn slo_pair_compare(link_bw_mhz: u32, mcs: u8, max_users: u32, opts: &SweepOptions) -> Result<SloPairComparison> {
    let single = LinkSplit::new(1, link_bw_mhz)?;
    let pair = LinkSplit::new(2, link_bw_mhz)?;
    let bss = capacity_sweep(Mode::Slo, single, mcs, max_users.div_ceil(2), opts)?;
    let mlo = capacity_sweep(Mode::MloStr, pair, mcs, max_users, opts)?;
    Ok(SloPairComparison {
        bss: SweepResult { kind: SweepKind::SloPair, ..bss },
        mlo,
    })
}

/// Offered traffic of station 1 for `seed`, binned by kind.
pub fn offered_trace(config: &ScenarioConfig, seed: u64, bin_s: f64) -> Result<TraceHistogram> {
    config.validate()?;
    let phase = station_phase(seed, 1);
    let mut arrivals: Vec<PacketArrival> = config
        .flows
        .iter()
        .flat_map(|f| generate_flow_events(f, config.duration_s, phase * f.frame_interval()))
        .collect();
    arrivals.sort_by(|a, b| a.time_s.total_cmp(&b.time_s));
    trace_histogram(&arrivals, bin_s, config.duration_s)
}

fn ms(v: Option<f64>) -> String {
    v.map(|s| format!("{:.3}", s * 1e3)).unwrap_or_default()
}

fn report_fields(r: &DelayReport) -> [String; 10] {
    [
        r.direction.to_string(),
        r.kind.to_string(),
        r.n_samples.to_string(),
        r.drop_count.to_string(),
        ms(r.p50),
        ms(r.p75),
        ms(r.p90),
        ms(r.p95),
        ms(r.p999),
        ms(r.mean),
    ]
}

/// Pooled summary rows, one per (point, report class).
pub fn write_summary_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for p in points {
        for r in &p.reports {
            let mut row = vec![
                p.scenario_id.clone(),
                p.mode.to_string(),
                p.split.to_string(),
                p.split.bandwidth_mhz.to_string(),
                p.mcs.to_string(),
                p.n_users.to_string(),
            ];
            row.extend(report_fields(r));
            row.push(p.pass_all().to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Same columns per seed, with `seed` inserted after `scenario_id`.
pub fn write_per_seed_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["scenario_id", "seed"];
    header.extend(&SUMMARY_HEADER[1..16]);
    w.write_record(&header)?;
    for p in points {
        for (seed, reports) in &p.per_seed {
            for r in reports {
                let mut row = vec![
                    p.scenario_id.clone(),
                    seed.to_string(),
                    p.mode.to_string(),
                    p.split.to_string(),
                    p.split.bandwidth_mhz.to_string(),
                    p.mcs.to_string(),
                    p.n_users.to_string(),
                ];
                row.extend(report_fields(r));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// One row per point with every threshold row's outcome.
pub fn write_verdicts_csv<W: std::io::Write>(points: &[SweepPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "scenario_id",
        "mode",
        "links",
        "mcs",
        "n_users",
        "dl_p75_le_5ms",
        "dl_p95_le_10ms",
        "dl_p999_le_50ms",
        "ul_p90_le_2ms",
        "ul_p999_le_10ms",
        "pass_all",
    ])?;
    for p in points {
        let v = p.verdict.unwrap_or(WfaVerdict {
            dl_p75_le_5ms: false,
            dl_p95_le_10ms: false,
            dl_p999_le_50ms: false,
            ul_p90_le_2ms: false,
            ul_p999_le_10ms: false,
            pass_all: false,
        });
        w.write_record([
            p.scenario_id.clone(),
            p.mode.to_string(),
            p.split.to_string(),
            p.mcs.to_string(),
            p.n_users.to_string(),
            v.dl_p75_le_5ms.to_string(),
            v.dl_p95_le_10ms.to_string(),
            v.dl_p999_le_50ms.to_string(),
            v.ul_p90_le_2ms.to_string(),
            v.ul_p999_le_10ms.to_string(),
            v.pass_all.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trace_csv<W: std::io::Write>(hist: &TraceHistogram, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRACE_HEADER)?;
    for (start, kind, bytes) in hist.rows() {
        w.write_record([format!("{start:.6}"), kind.to_string(), bytes.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct ManifestScenario<'a> {
    scenario_id: &'a str,
    config: &'a ScenarioConfig,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    seeds: &'a [u64],
    scenarios: Vec<ManifestScenario<'a>>,
}

/// Everything needed to rerun the points: command line, full configs, seeds.
pub fn write_manifest(points: &[SweepPoint], command: &str, path: &Path) -> Result<()> {
    let seeds: &[u64] = points.first().map_or(&[], |p| p.seeds.as_slice());
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command,
        seeds,
        scenarios: points
            .iter()
            .map(|p| ManifestScenario {
                scenario_id: &p.scenario_id,
                config: &p.config,
            })
            .collect(),
    };
    fs::write(path, serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(())
}

/// Writes summary, per-seed, verdict and manifest files into `dir`.
pub fn write_points(points: &[SweepPoint], command: &str, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_summary_csv(points, fs::File::create(dir.join("summary.csv"))?)?;
    write_per_seed_csv(points, fs::File::create(dir.join("per_seed.csv"))?)?;
    write_verdicts_csv(points, fs::File::create(dir.join("verdicts.csv"))?)?;
    write_manifest(points, command, &dir.join("manifest.json"))
}

pub fn write_min_mcs_csv<W: std::io::Write>(mode: Mode, direction: Direction, entries: &[MinMcsEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "direction", "bw_mhz", "min_mcs"])?;
    for e in entries {
        w.write_record([
            mode.to_string(),
            direction.to_string(),
            e.bandwidth_mhz.to_string(),
            e.min_mcs.map_or_else(|| "none".to_string(), |m| m.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_capacity_csv<W: std::io::Write>(mode_of: impl Fn(LinkSplit) -> Mode, entries: &[CapacityEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["mode", "links", "mcs", "capacity"])?;
    for e in entries {
        w.write_record([
            mode_of(e.split).to_string(),
            e.split.to_string(),
            e.mcs.to_string(),
            e.capacity.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_crossover_csv<W: std::io::Write>(rows: &[CrossoverRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let splits: Vec<LinkSplit> = rows.first().map(|r| r.dl_p999_s.iter().map(|(s, _)| *s).collect()).unwrap_or_default();
    let mut header = vec!["n_users".to_string(), "best_split".to_string()];
    header.extend(splits.iter().map(|s| format!("dl_p999_{s}")));
    w.write_record(&header)?;
    for r in rows {
        let mut row = vec![r.n_users.to_string(), r.best.map(|s| s.to_string()).unwrap_or_default()];
        row.extend(r.dl_p999_s.iter().map(|(_, v)| ms(*v)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> SweepOptions {
        SweepOptions {
            seeds: 2,
            duration_s: 0.2,
            parallel: false,
        }
    }

    #[test]
    fn split_parsing() {
        let s: LinkSplit = "2x80".parse().unwrap();
        assert_eq!(s, LinkSplit { n_links: 2, bandwidth_mhz: 80 });
        assert_eq!(s.to_string(), "2x80");
        assert_eq!(s.total_mhz(), 160);
        assert!("0x80".parse::<LinkSplit>().is_err());
        assert!("2x90".parse::<LinkSplit>().is_err());
        assert!("two".parse::<LinkSplit>().is_err());
        assert!(LinkSplit::new(2, 80).unwrap().mode_for(Mode::Slo).is_err());
    }

    #[test]
    fn mismatched_totals_are_rejected() {
        let splits = ["2x80".parse().unwrap(), "4x20".parse().unwrap()];
        let err = link_split_compare(160, &splits, 11, 2, &quick()).unwrap_err();
        assert!(matches!(err, SimError::Config(_)), "{err}");
    }

    fn fake_point(split: LinkSplit, mcs: u8, k: u32, pass: bool, dl_p999: f64) -> SweepPoint {
        let cfg = ScenarioConfig::new(Mode::MloStr, split.links(McsEntry::from_index(mcs).unwrap()), k);
        let mut report = DelayReport::from_set(
            Direction::Dl,
            KindFilter::Only(TrafficKind::Video),
            &crate::metrics::SampleSet::from_secs(&[dl_p999]),
        );
        report.p999 = Some(dl_p999);
        SweepPoint {
            scenario_id: scenario_id(Mode::MloStr, split, mcs, k),
            mode: Mode::MloStr,
            split,
            mcs,
            n_users: k,
            config: cfg,
            seeds: vec![0],
            reports: vec![report],
            per_seed: Vec::new(),
            verdict: Some(WfaVerdict {
                dl_p75_le_5ms: pass,
                dl_p95_le_10ms: true,
                dl_p999_le_50ms: true,
                ul_p90_le_2ms: pass,
                ul_p999_le_10ms: true,
                pass_all: pass,
            }),
            conserved: true,
        }
    }

    #[test]
    fn capacity_requires_every_smaller_count_to_pass() {
        let s = LinkSplit::new(2, 80).unwrap();
        let pts = vec![
            fake_point(s, 11, 1, true, 0.001),
            fake_point(s, 11, 2, true, 0.001),
            fake_point(s, 11, 3, false, 0.001),
            fake_point(s, 11, 4, true, 0.001),
        ];
        let r = SweepResult::new(SweepKind::Capacity, quick(), pts);
        assert_eq!(r.capacity_of(s), Some(2));

        let pts = vec![fake_point(s, 11, 1, false, 0.001), fake_point(s, 11, 2, true, 0.001)];
        let r = SweepResult::new(SweepKind::Capacity, quick(), pts);
        assert_eq!(r.capacity_of(s), Some(0));
    }

    #[test]
    fn min_mcs_picks_lowest_passing_index() {
        let s = LinkSplit::new(1, 20).unwrap();
        let pts = (0..14).map(|m| fake_point(s, m, 1, m >= 9, 0.001)).collect();
        let r = SweepResult::new(SweepKind::MinMcs, quick(), pts);
        assert_eq!(r.min_mcs(Direction::Dl), vec![MinMcsEntry { bandwidth_mhz: 20, min_mcs: Some(9) }]);
        let pts = (0..14).map(|m| fake_point(s, m, 1, false, 0.001)).collect();
        let r = SweepResult::new(SweepKind::MinMcs, quick(), pts);
        assert_eq!(r.min_mcs(Direction::Ul)[0].min_mcs, None);
    }

    #[test]
    fn crossover_picks_lowest_tail() {
        let a = LinkSplit::new(2, 80).unwrap();
        let b = LinkSplit::new(4, 40).unwrap();
        let pts = vec![
            fake_point(a, 11, 1, true, 0.002),
            fake_point(b, 11, 1, true, 0.004),
            fake_point(a, 11, 2, true, 0.009),
            fake_point(b, 11, 2, true, 0.005),
        ];
        let r = SweepResult::new(SweepKind::LinkSplit, quick(), pts);
        let x = r.crossover();
        assert_eq!(x[0].best, Some(a));
        assert_eq!(x[1].best, Some(b));
    }

    #[test]
    fn pair_capacity_splits_users_evenly() {
        let s1 = LinkSplit::new(1, 80).unwrap();
        let s2 = LinkSplit::new(2, 80).unwrap();
        let bss = SweepResult::new(
            SweepKind::SloPair,
            quick(),
            vec![
                fake_point(s1, 11, 1, true, 0.001),
                fake_point(s1, 11, 2, true, 0.001),
                fake_point(s1, 11, 3, false, 0.001),
            ],
        );
        let mlo = SweepResult::new(SweepKind::Capacity, quick(), vec![fake_point(s2, 11, 1, true, 0.001)]);
        let cmp = SloPairComparison { bss, mlo };
        assert_eq!(cmp.pair_capacity(), 4);
        assert_eq!(cmp.mlo_capacity(), 1);
    }

    #[test]
    fn summary_rows_follow_schema() {
        let s = LinkSplit::new(1, 80).unwrap();
        let cfg = sweep_config(Mode::Slo, s, 11, 1, &quick()).unwrap();
        let p = evaluate_point(&cfg, &quick()).unwrap();
        assert!(p.conserved);
        let mut buf = Vec::new();
        write_summary_csv(std::slice::from_ref(&p), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), SUMMARY_HEADER.join(","));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first.len(), SUMMARY_HEADER.len());
        assert_eq!(&first[..8], ["slo-1x80-mcs11-k1", "slo", "1x80", "80", "11", "1", "dl", "video"]);
        let p75 = first[11];
        assert_eq!(p75.split('.').nth(1).map(str::len), Some(3), "{p75}");
        assert_eq!(text.lines().count(), 1 + crate::engine::REPORT_CLASSES.len());
    }

    #[test]
    fn trace_covers_the_whole_run() {
        let mut cfg = ScenarioConfig::new(Mode::Slo, vec![LinkConfig::new(0, 80, McsEntry::from_index(11).unwrap())], 1);
        cfg.duration_s = 1.0;
        let h = offered_trace(&cfg, 0, 0.001).unwrap();
        assert_eq!(h.n_bins(), 1000);
        // 100 Mbps of video plus audio/tracking/stats over one second.
        let video = h.bins[&TrafficKind::Video].iter().sum::<u64>();
        assert!((video as f64 * 8.0 - 1e8).abs() < 0.02e8, "{video}");
    }
}
