//! Deterministic discrete-event core.
//!
//! One run simulates a single BSS (one AP, K stations) on one or more
//! orthogonal links. Time is integer nanoseconds; events are totally ordered by
//! `(time, device, kind priority, sequence)`, and every random consumer draws
//! from its own seed-derived ChaCha stream, so a `(config, seed)` pair always
//! replays bit-for-bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap};
use std::path::Path;

use crate::error::{Result, SimError};
use crate::mac::{
    dcf_advance, transmit_outcome, AggregationLimits, DcfAction, DcfEvent, DcfPhase, DropReason, LinkState, Packet,
    BLOCK_ACK_NS, DEFAULT_PER, DIFS_NS, MAX_AMPDU_MPDUS, QUEUE_CAPACITY, SIFS_NS, SLOT_NS,
};
use crate::metrics::{DelayDistribution, DelayReport, KindFilter, SampleSet};
use crate::mld::{MldConfig, Mode, SharedQueues, Txop};
use crate::phy::{LinkBudget, LinkConfig, DEFAULT_CCA_THRESHOLD_DBM, DEFAULT_TX_POWER_DBM, MAX_PPDU_NS};
use crate::traffic::{ArrivalBatch, Direction, FlowGenerator, FlowSpec, TrafficKind};

pub const AP_DEVICE: u32 = 0;

/// STA placement: one distance for everybody or one per station.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Distances {
    Uniform(f64),
    PerStation(Vec<f64>),
}

impl Distances {
    pub fn for_station(&self, sta_index: usize) -> f64 {
        match self {
            Distances::Uniform(d) => *d,
            Distances::PerStation(v) => v[sta_index],
        }
    }
}

/// Everything needed to reproduce one simulated scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_mode")]
    pub mode: Mode,
    pub links: Vec<LinkConfig>,
    pub n_stations: u32,
    /// Flows instantiated once per station.
    #[serde(default = "FlowSpec::default_session")]
    pub flows: Vec<FlowSpec>,
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_seeds")]
    pub seeds: u32,
    #[serde(default = "default_distance")]
    pub distance_m: Distances,
    #[serde(default = "default_buffer")]
    pub buffer_packets: usize,
    #[serde(default = "default_per")]
    pub per: f64,
    #[serde(default = "default_max_ampdu")]
    pub max_ampdu: usize,
    #[serde(default = "default_max_ppdu_us")]
    pub max_ppdu_us: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power_dbm: f64,
    #[serde(default = "default_cca")]
    pub cca_threshold_dbm: f64,
}

fn default_mode() -> Mode {
    Mode::Slo
}
fn default_duration() -> f64 {
    10.0
}
fn default_seeds() -> u32 {
    100
}
fn default_distance() -> Distances {
    Distances::Uniform(3.0)
}
fn default_buffer() -> usize {
    QUEUE_CAPACITY
}
fn default_per() -> f64 {
    DEFAULT_PER
}
fn default_max_ampdu() -> usize {
    MAX_AMPDU_MPDUS
}
fn default_max_ppdu_us() -> f64 {
    MAX_PPDU_NS as f64 / 1e3
}
fn default_tx_power() -> f64 {
    DEFAULT_TX_POWER_DBM
}
fn default_cca() -> f64 {
    DEFAULT_CCA_THRESHOLD_DBM
}

impl ScenarioConfig {
    /// Default VR session for `n_stations` users over `links`.
    pub fn new(mode: Mode, links: Vec<LinkConfig>, n_stations: u32) -> Self {
        Self {
            mode,
            links,
            n_stations,
            flows: FlowSpec::default_session(),
            duration_s: default_duration(),
            seeds: default_seeds(),
            distance_m: default_distance(),
            buffer_packets: default_buffer(),
            per: default_per(),
            max_ampdu: default_max_ampdu(),
            max_ppdu_us: default_max_ppdu_us(),
            tx_power_dbm: default_tx_power(),
            cca_threshold_dbm: default_cca(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn mld(&self) -> MldConfig {
        MldConfig {
            mode: self.mode,
            links: self.links.clone(),
        }
    }

    pub fn limits(&self) -> AggregationLimits {
        AggregationLimits {
            max_mpdus: self.max_ampdu,
            max_ppdu_ns: (self.max_ppdu_us * 1e3).round() as u64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.mld().validate()?;
        if self.n_stations == 0 {
            return Err(SimError::config("n_stations must be at least 1"));
        }
        if !(self.duration_s > 0.0) || !self.duration_s.is_finite() {
            return Err(SimError::config("duration must be positive"));
        }
        if self.seeds == 0 {
            return Err(SimError::config("seeds must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.per) {
            return Err(SimError::config(format!("PER {} outside [0, 1)", self.per)));
        }
        if self.max_ampdu == 0 || self.buffer_packets == 0 {
            return Err(SimError::config("aggregation and buffer limits must be positive"));
        }
        if !(self.max_ppdu_us > 0.0) {
            return Err(SimError::config("max PPDU duration must be positive"));
        }
        for f in &self.flows {
            f.validate()?;
        }
        if let Distances::PerStation(v) = &self.distance_m {
            if v.len() != self.n_stations as usize {
                return Err(SimError::config(format!(
                    "{} distances for {} stations",
                    v.len(),
                    self.n_stations
                )));
            }
        }
        // Single collision domain: every STA must hear the AP and every other
        // STA (worst case: opposite sides of the AP).
        let dmax = (0..self.n_stations as usize)
            .map(|i| self.distance_m.for_station(i))
            .fold(0.0f64, f64::max);
        for i in 0..self.n_stations as usize {
            let d = self.distance_m.for_station(i);
            if !(d >= 0.1) {
                return Err(SimError::config(format!("station {} distance {d} m below 0.1 m", i + 1)));
            }
        }
        for l in &self.links {
            let pair = LinkBudget {
                tx_power_dbm: self.tx_power_dbm,
                cca_threshold_dbm: self.cca_threshold_dbm,
                distance_m: if self.n_stations > 1 { 2.0 * dmax } else { dmax },
            };
            if !pair.senses(l.center_freq_ghz, 0, 0)? {
                return Err(SimError::config(format!(
                    "link {}: devices {:.1} m apart are below CCA; hidden terminals are not modeled",
                    l.link_id, pair.distance_m
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum EventKind {
    ExchangeEnd { link: usize },
    Arrival { flow: usize },
    Access { link: usize, generation: u64 },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::ExchangeEnd { .. } => 0,
            EventKind::Arrival { .. } => 1,
            EventKind::Access { .. } => 2,
        }
    }
}

/// A scheduled occurrence. Ordered by `(time, device, kind priority, sequence)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Event {
    pub time_ns: u64,
    pub device_id: u32,
    pub sequence: u64,
    kind: EventKind,
}

impl Event {
    fn key(&self) -> (u64, u32, u8, u64) {
        (self.time_ns, self.device_id, self.kind.priority(), self.sequence)
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key().cmp(&other.key())
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Default)]
struct EventQueue {
    heap: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: u64,
}

impl EventQueue {
    fn schedule(&mut self, time_ns: u64, device_id: u32, kind: EventKind) -> Result<()> {
        if time_ns < self.now {
            return Err(SimError::internal(format!(
                "event {kind:?} scheduled at {time_ns} ns, before now = {} ns",
                self.now
            )));
        }
        let ev = Event {
            time_ns,
            device_id,
            sequence: self.next_seq,
            kind,
        };
        self.next_seq += 1;
        self.heap.push(Reverse(ev));
        Ok(())
    }

    fn pop(&mut self) -> Option<Event> {
        let Reverse(ev) = self.heap.pop()?;
        debug_assert!(ev.time_ns >= self.now);
        self.now = ev.time_ns;
        Some(ev)
    }

    fn peek_time(&self) -> Option<u64> {
        self.heap.peek().map(|Reverse(e)| e.time_ns)
    }
}

/// Purposes of the independent random streams.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
enum StreamKind {
    Offset = 1,
    Backoff = 2,
    Errors = 3,
}

/// Independent generator for one random consumer, derived from the run seed.
fn stream_rng(seed: u64, kind: StreamKind, device: u32, link: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((kind as u64) << 56) | ((device as u64) << 16) | link as u64);
    rng
}

/// Per-STA phase of the traffic clock, as a fraction of a frame interval.
pub fn station_phase(seed: u64, sta: u32) -> f64 {
    stream_rng(seed, StreamKind::Offset, sta, 0).gen::<f64>()
}

#[derive(Debug)]
struct Contender {
    state: LinkState,
    /// When the current contention started (entered DIFS wait).
    ready_ns: u64,
    /// Start of the slot countdown that `backoff_slots_remaining` refers to.
    count_start: u64,
    backoff_rng: ChaCha8Rng,
    error_rng: ChaCha8Rng,
}

#[derive(Debug)]
struct Device {
    queues: SharedQueues,
    links: Vec<Contender>,
}

#[derive(Debug)]
struct Transmission {
    device: usize,
    txop: Txop,
    ppdu_end: u64,
}

#[derive(Debug)]
struct Medium {
    cfg: LinkConfig,
    busy: bool,
    idle_since: u64,
    generation: u64,
    current: Vec<Transmission>,
}

#[derive(Debug)]
struct FlowInstance {
    flow_id: u32,
    direction: Direction,
    kind: TrafficKind,
    src: usize,
    dst: u32,
    queue: usize,
    generator: FlowGenerator,
    pending: Option<ArrivalBatch>,
}

/// Per-class packet accounting for one run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct FlowCounters {
    pub generated: u64,
    pub delivered: u64,
    pub dropped_buffer: u64,
    pub dropped_retry: u64,
    pub residual: u64,
}

impl FlowCounters {
    pub fn dropped(&self) -> u64 {
        self.dropped_buffer + self.dropped_retry
    }

    pub fn conserved(&self) -> bool {
        self.generated == self.delivered + self.dropped_buffer + self.dropped_retry + self.residual
    }

    fn add(&mut self, o: &FlowCounters) {
        self.generated += o.generated;
        self.delivered += o.delivered;
        self.dropped_buffer += o.dropped_buffer;
        self.dropped_retry += o.dropped_retry;
        self.residual += o.residual;
    }
}

/// Channel-access statistics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct MacCounters {
    /// Fresh backoff draws and the slots they requested.
    pub backoff_draws: u64,
    pub backoff_slots: u64,
    /// Backoff expiries that put a PPDU on air.
    pub transmissions: u64,
    /// Backoff expiries that found nothing eligible.
    pub empty_expiries: u64,
    /// PPDUs lost to simultaneous expiry.
    pub collided_ppdus: u64,
    pub mpdus_sent: u64,
    pub mpdus_failed: u64,
}

impl MacCounters {
    fn add(&mut self, o: &MacCounters) {
        self.backoff_draws += o.backoff_draws;
        self.backoff_slots += o.backoff_slots;
        self.transmissions += o.transmissions;
        self.empty_expiries += o.empty_expiries;
        self.collided_ppdus += o.collided_ppdus;
        self.mpdus_sent += o.mpdus_sent;
        self.mpdus_failed += o.mpdus_failed;
    }

    pub fn mean_backoff_slots(&self) -> f64 {
        self.backoff_slots as f64 / self.backoff_draws.max(1) as f64
    }
}

/// One delivered packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DelaySample {
    pub direction: Direction,
    pub kind: TrafficKind,
    pub station: u32,
    pub generated_ns: u64,
    pub delay_ns: u64,
}

/// Result of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub seed: u64,
    /// Delivered packets in creation order.
    pub samples: Vec<DelaySample>,
    pub counters: BTreeMap<(Direction, TrafficKind), FlowCounters>,
    pub mac: MacCounters,
}

impl RunOutput {
    pub fn is_conserved(&self) -> bool {
        self.counters.values().all(FlowCounters::conserved)
    }

    pub fn sample_sets(&self) -> BTreeMap<(Direction, TrafficKind), SampleSet> {
        let mut raw: BTreeMap<(Direction, TrafficKind), Vec<u64>> = BTreeMap::new();
        for s in &self.samples {
            raw.entry((s.direction, s.kind)).or_default().push(s.delay_ns);
        }
        self.counters
            .iter()
            .map(|(key, c)| {
                let delays = DelayDistribution::from_values(raw.remove(key).unwrap_or_default());
                (
                    *key,
                    SampleSet {
                        delays,
                        generated: c.generated,
                        dropped: c.dropped(),
                    },
                )
            })
            .collect()
    }

    /// Canonical text form of the samples (used for determinism checks and
    /// sample dumps).
    pub fn samples_csv(&self) -> String {
        let mut out = String::from("seed,station,direction,kind,generated_ns,delay_ns\n");
        for s in &self.samples {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.seed, s.station, s.direction, s.kind, s.generated_ns, s.delay_ns
            ));
        }
        out
    }
}

struct Simulation<'a> {
    cfg: &'a ScenarioConfig,
    limits: AggregationLimits,
    end_ns: u64,
    events: EventQueue,
    packets: Vec<Packet>,
    devices: Vec<Device>,
    media: Vec<Medium>,
    flows: Vec<FlowInstance>,
    counters: BTreeMap<(Direction, TrafficKind), FlowCounters>,
    mac: MacCounters,
}

impl<'a> Simulation<'a> {
    fn new(cfg: &'a ScenarioConfig, seed: u64) -> Result<Self> {
        let n_links = cfg.links.len();
        let k = cfg.n_stations;
        let mut devices = Vec::with_capacity(k as usize + 1);
        for id in 0..=k {
            let dests = if id == AP_DEVICE { (1..=k).collect() } else { vec![AP_DEVICE] };
            let links = cfg
                .links
                .iter()
                .map(|l| Contender {
                    state: LinkState::default(),
                    ready_ns: 0,
                    count_start: 0,
                    backoff_rng: stream_rng(seed, StreamKind::Backoff, id, l.link_id),
                    error_rng: stream_rng(seed, StreamKind::Errors, id, l.link_id),
                })
                .collect();
            devices.push(Device {
                queues: SharedQueues::new(dests, cfg.buffer_packets),
                links,
            });
        }
        let media = cfg
            .links
            .iter()
            .map(|l| Medium {
                cfg: *l,
                busy: false,
                idle_since: 0,
                generation: 0,
                current: Vec::new(),
            })
            .collect::<Vec<_>>();
        debug_assert_eq!(media.len(), n_links);

        let mut flows = Vec::new();
        let mut counters = BTreeMap::new();
        for sta in 1..=k {
            let phase = station_phase(seed, sta);
            for (j, spec) in cfg.flows.iter().enumerate() {
                let (src, dst) = match spec.direction {
                    Direction::Dl => (AP_DEVICE, sta),
                    Direction::Ul => (sta, AP_DEVICE),
                };
                let queue = devices[src as usize]
                    .queues
                    .queue_for(dst)
                    .ok_or_else(|| SimError::internal("missing destination queue"))?;
                let offset = phase * spec.frame_interval();
                let mut generator = FlowGenerator::new(spec, cfg.duration_s, offset);
                let pending = generator.next();
                flows.push(FlowInstance {
                    flow_id: (sta - 1) * cfg.flows.len() as u32 + j as u32,
                    direction: spec.direction,
                    kind: spec.kind,
                    src: src as usize,
                    dst,
                    queue,
                    generator,
                    pending,
                });
                counters.entry((spec.direction, spec.kind)).or_insert_with(FlowCounters::default);
            }
        }

        let mut sim = Simulation {
            cfg,
            limits: cfg.limits(),
            end_ns: (cfg.duration_s * 1e9).round() as u64,
            events: EventQueue::default(),
            packets: Vec::new(),
            devices,
            media,
            flows,
            counters,
            mac: MacCounters::default(),
        };
        for i in 0..sim.flows.len() {
            if let Some(b) = sim.flows[i].pending {
                let dev = sim.flows[i].src as u32;
                sim.events.schedule(b.time_ns, dev, EventKind::Arrival { flow: i })?;
            }
        }
        Ok(sim)
    }

    fn run(mut self, seed: u64) -> Result<RunOutput> {
        while let Some(t) = self.events.peek_time() {
            if t >= self.end_ns {
                break;
            }
            let ev = self.events.pop().expect("peeked");
            match ev.kind {
                EventKind::Arrival { flow } => self.on_arrival(flow)?,
                EventKind::Access { link, generation } => self.on_access(link, generation)?,
                EventKind::ExchangeEnd { link } => self.on_exchange_end(link)?,
            }
        }
        self.finish(seed)
    }

    fn now(&self) -> u64 {
        self.events.now
    }

    fn on_arrival(&mut self, flow: usize) -> Result<()> {
        let now = self.now();
        let batch = self.flows[flow].pending.take().ok_or_else(|| SimError::internal("arrival without batch"))?;
        let f = &self.flows[flow];
        let (src, queue) = (f.src, f.queue);
        let key = (f.direction, f.kind);
        for _ in 0..batch.count {
            let id = self.packets.len() as u32;
            let f = &self.flows[flow];
            let mut p = Packet {
                id,
                flow_id: f.flow_id,
                direction: f.direction,
                kind: f.kind,
                size_bytes: batch.size_bytes,
                src_device: src as u32,
                dst_device: f.dst,
                generated_ns: batch.time_ns,
                enqueued_ns: now,
                delivered_ns: None,
                dropped: None,
                attempt: 0,
            };
            let c = self.counters.get_mut(&key).expect("counter registered");
            c.generated += 1;
            if !self.devices[src].queues.enqueue(queue, id) {
                p.dropped = Some(DropReason::BufferFull);
                c.dropped_buffer += 1;
            }
            self.packets.push(p);
        }
        let next = self.flows[flow].generator.next();
        self.flows[flow].pending = next;
        if let Some(b) = next {
            self.events.schedule(b.time_ns, src as u32, EventKind::Arrival { flow })?;
        }
        self.wake_device(src)
    }

    /// Starts contention on every idle link of `dev` if it has eligible data.
    fn wake_device(&mut self, dev: usize) -> Result<()> {
        if !self.devices[dev].queues.has_eligible() {
            return Ok(());
        }
        let now = self.now();
        for l in 0..self.media.len() {
            let c = &mut self.devices[dev].links[l];
            if c.state.phase != DcfPhase::Idle {
                continue;
            }
            let (s, _) = dcf_advance(c.state, DcfEvent::Wake, &mut c.backoff_rng)?;
            c.state = s;
            c.ready_ns = now;
            self.reschedule(l)?;
        }
        Ok(())
    }

    /// Recomputes the earliest backoff expiry on an idle medium.
    fn reschedule(&mut self, l: usize) -> Result<()> {
        let m = &mut self.media[l];
        m.generation += 1;
        if m.busy {
            return Ok(());
        }
        let idle_since = m.idle_since;
        let generation = m.generation;
        let mut earliest: Option<u64> = None;
        for d in &mut self.devices {
            let c = &mut d.links[l];
            match c.state.phase {
                DcfPhase::DifsWait => {
                    let fresh = c.state.backoff_slots_remaining.is_none();
                    let (s, a) = dcf_advance(c.state, DcfEvent::ChannelIdleDifs, &mut c.backoff_rng)?;
                    c.state = s;
                    if let (true, DcfAction::CountDown(n)) = (fresh, a) {
                        self.mac.backoff_draws += 1;
                        self.mac.backoff_slots += n as u64;
                    }
                    c.count_start = idle_since.max(c.ready_ns) + DIFS_NS;
                }
                DcfPhase::Backoff => {}
                _ => continue,
            }
            let expiry = c.count_start + c.state.backoff_slots_remaining.unwrap_or(0) as u64 * SLOT_NS;
            earliest = Some(earliest.map_or(expiry, |e: u64| e.min(expiry)));
        }
        if let Some(t) = earliest {
            self.events.schedule(t, AP_DEVICE, EventKind::Access { link: l, generation })?;
        }
        Ok(())
    }

    fn expiry(c: &Contender) -> u64 {
        c.count_start + c.state.backoff_slots_remaining.unwrap_or(0) as u64 * SLOT_NS
    }

    fn on_access(&mut self, l: usize, generation: u64) -> Result<()> {
        if self.media[l].busy || self.media[l].generation != generation {
            return Ok(());
        }
        let t0 = self.now();
        let link_cfg = self.media[l].cfg;
        // Every device whose countdown ends within this slot transmits.
        let mut txs = Vec::new();
        for dev in 0..self.devices.len() {
            let c = &self.devices[dev].links[l];
            if c.state.phase != DcfPhase::Backoff {
                continue;
            }
            let exp = Self::expiry(c);
            if exp < t0 {
                return Err(SimError::internal(format!(
                    "device {dev} missed its backoff expiry on link {l} ({exp} < {t0})"
                )));
            }
            if exp >= t0 + SLOT_NS {
                continue;
            }
            let d = &mut self.devices[dev];
            let c = &mut d.links[l];
            let rem = c.state.backoff_slots_remaining.unwrap_or(0);
            let (s, a) = dcf_advance(c.state, DcfEvent::SlotsElapsed(rem), &mut c.backoff_rng)?;
            c.state = s;
            if a != DcfAction::Transmit {
                return Err(SimError::internal("expired backoff did not yield a transmission"));
            }
            match d.queues.allocate_txop(&self.packets, &link_cfg, self.limits)? {
                Some(txop) => {
                    self.mac.transmissions += 1;
                    self.mac.mpdus_sent += txop.ampdu.mpdus.len() as u64;
                    txs.push(Transmission {
                        device: dev,
                        ppdu_end: t0 + txop.ampdu.airtime_ns,
                        txop,
                    });
                }
                None => {
                    self.mac.empty_expiries += 1;
                    let (s, _) = dcf_advance(c.state, DcfEvent::NothingToSend, &mut c.backoff_rng)?;
                    c.state = s;
                }
            }
        }
        if txs.is_empty() {
            return self.reschedule(l);
        }
        // Medium turns busy: everyone else freezes.
        for (dev, d) in self.devices.iter_mut().enumerate() {
            let c = &mut d.links[l];
            if c.state.phase == DcfPhase::Transmitting && !txs.iter().any(|t| t.device == dev) {
                return Err(SimError::internal(format!("device {dev} transmitting outside an exchange on link {l}")));
            }
            if c.state.phase == DcfPhase::Backoff {
                let elapsed = if t0 > c.count_start {
                    ((t0 - c.count_start) / SLOT_NS) as u32
                } else {
                    0
                };
                if elapsed > 0 {
                    let (s, _) = dcf_advance(c.state, DcfEvent::SlotsElapsed(elapsed), &mut c.backoff_rng)?;
                    c.state = s;
                }
                let (s, _) = dcf_advance(c.state, DcfEvent::ChannelBusy, &mut c.backoff_rng)?;
                c.state = s;
            }
        }
        let end = txs.iter().map(|t| t.ppdu_end).max().expect("non-empty") + SIFS_NS + BLOCK_ACK_NS;
        if txs.len() > 1 {
            self.mac.collided_ppdus += txs.len() as u64;
        }
        for t in &txs {
            self.devices[t.device].links[l].state.busy_until = end;
        }
        let m = &mut self.media[l];
        m.busy = true;
        m.generation += 1;
        m.current = txs;
        self.events.schedule(end, AP_DEVICE, EventKind::ExchangeEnd { link: l })
    }

    fn on_exchange_end(&mut self, l: usize) -> Result<()> {
        let now = self.now();
        let txs = std::mem::take(&mut self.media[l].current);
        let collided = txs.len() > 1;
        let per = self.cfg.per;
        let mut touched = Vec::with_capacity(txs.len());
        for t in &txs {
            let d = &mut self.devices[t.device];
            let c = &mut d.links[l];
            let ok = transmit_outcome(t.txop.ampdu.mpdus.len(), per, collided, &mut c.error_rng);
            let summary = d.queues.release_inflight(&t.txop, &ok, &mut self.packets, t.ppdu_end)?;
            self.mac.mpdus_failed += ok.iter().filter(|s| !**s).count() as u64;
            for (m, &delivered) in t.txop.ampdu.mpdus.iter().zip(&ok) {
                let p = &self.packets[m.packet as usize];
                let c = self.counters.get_mut(&(p.direction, p.kind)).expect("counter registered");
                if delivered {
                    c.delivered += 1;
                } else if p.dropped == Some(DropReason::RetryLimit) {
                    c.dropped_retry += 1;
                }
            }
            let (s, _) = dcf_advance(c.state, DcfEvent::TxComplete, &mut c.backoff_rng)?;
            let ev = if summary.delivered > 0 {
                DcfEvent::AckReceived
            } else {
                DcfEvent::AckTimeout {
                    exhausted: summary.requeued == 0,
                }
            };
            let (s, _) = dcf_advance(s, ev, &mut c.backoff_rng)?;
            c.state = s;
            touched.push(t.device);
        }
        let m = &mut self.media[l];
        m.busy = false;
        m.idle_since = now;
        for dev in touched {
            self.wake_device(dev)?;
        }
        self.reschedule(l)
    }

    fn finish(self, seed: u64) -> Result<RunOutput> {
        let mut counters = self.counters;
        let mut tally: BTreeMap<(Direction, TrafficKind), FlowCounters> = BTreeMap::new();
        let mut samples = Vec::new();
        let station_of = |p: &Packet| if p.direction == Direction::Dl { p.dst_device } else { p.src_device };
        for p in &self.packets {
            let t = tally.entry((p.direction, p.kind)).or_default();
            t.generated += 1;
            match (p.delivered_ns, p.dropped) {
                (Some(at), None) => {
                    t.delivered += 1;
                    samples.push(DelaySample {
                        direction: p.direction,
                        kind: p.kind,
                        station: station_of(p),
                        generated_ns: p.generated_ns,
                        delay_ns: at - p.generated_ns,
                    });
                }
                (None, Some(DropReason::BufferFull)) => t.dropped_buffer += 1,
                (None, Some(DropReason::RetryLimit)) => t.dropped_retry += 1,
                (None, None) => t.residual += 1,
                (Some(_), Some(_)) => {
                    return Err(SimError::internal(format!("packet {} both delivered and dropped", p.id)));
                }
            }
        }
        let waiting: usize = self
            .devices
            .iter()
            .map(|d| (0..d.queues.queue_count()).map(|q| d.queues.queue(q).occupancy()).sum::<usize>())
            .sum();
        let mut residual_total = 0;
        for (key, c) in counters.iter_mut() {
            let t = tally.get(key).copied().unwrap_or_default();
            c.residual = t.residual;
            residual_total += t.residual;
            if c.generated != t.generated
                || c.delivered != t.delivered
                || c.dropped_buffer != t.dropped_buffer
                || c.dropped_retry != t.dropped_retry
                || !c.conserved()
            {
                return Err(SimError::internal(format!(
                    "packet conservation violated for {key:?}: counted {c:?}, found {t:?}"
                )));
            }
        }
        if residual_total as usize != waiting {
            return Err(SimError::internal(format!(
                "{residual_total} residual packets but {waiting} held in queues"
            )));
        }
        Ok(RunOutput {
            seed,
            samples,
            counters,
            mac: self.mac,
        })
    }
}

/// Simulates one seed of a scenario.
pub fn run_scenario(config: &ScenarioConfig, seed: u64) -> Result<RunOutput> {
    config.validate()?;
    Simulation::new(config, seed)?.run(seed)
}

/// Classes reported for every scenario, in output order.
pub const REPORT_CLASSES: [(Direction, KindFilter); 6] = [
    (Direction::Dl, KindFilter::Only(TrafficKind::Video)),
    (Direction::Dl, KindFilter::Only(TrafficKind::Audio)),
    (Direction::Dl, KindFilter::All),
    (Direction::Ul, KindFilter::Only(TrafficKind::Tracking)),
    (Direction::Ul, KindFilter::Only(TrafficKind::Stats)),
    (Direction::Ul, KindFilter::All),
];

/// Samples pooled by class. Merging is associative and commutative, so the
/// pooled value does not depend on which seeds ran first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PooledSamples {
    pub sets: BTreeMap<(Direction, TrafficKind), SampleSet>,
    pub counters: BTreeMap<(Direction, TrafficKind), FlowCounters>,
    pub mac: MacCounters,
}

impl PooledSamples {
    pub fn from_run(run: &RunOutput) -> Self {
        Self {
            sets: run.sample_sets(),
            counters: run.counters.clone(),
            mac: run.mac,
        }
    }

    pub fn merge(&mut self, other: &PooledSamples) {
        for (k, s) in &other.sets {
            self.sets.entry(*k).or_default().merge(s);
        }
        for (k, c) in &other.counters {
            self.counters.entry(*k).or_default().add(c);
        }
        self.mac.add(&other.mac);
    }

    /// Samples of a class; `KindFilter::All` pools every kind of the direction.
    pub fn class(&self, direction: Direction, kind: KindFilter) -> SampleSet {
        let mut out = SampleSet::default();
        for ((d, k), s) in &self.sets {
            if *d == direction && (kind == KindFilter::All || kind == KindFilter::Only(*k)) {
                out.merge(s);
            }
        }
        out
    }

    pub fn report(&self, direction: Direction, kind: KindFilter) -> DelayReport {
        DelayReport::from_set(direction, kind, &self.class(direction, kind))
    }

    pub fn reports(&self) -> Vec<DelayReport> {
        REPORT_CLASSES.iter().map(|&(d, k)| self.report(d, k)).collect()
    }

    pub fn is_conserved(&self) -> bool {
        self.counters.values().all(FlowCounters::conserved)
    }
}

/// Pooled result of several seeds plus per-seed reports for dispersion.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleOutput {
    pub seeds: Vec<u64>,
    pub pooled: PooledSamples,
    pub per_seed: Vec<(u64, Vec<DelayReport>)>,
}

/// Runs the given seeds (in parallel when `parallel`) and pools them in
/// ascending seed order.
pub fn run_seeds(config: &ScenarioConfig, seeds: &[u64], parallel: bool) -> Result<EnsembleOutput> {
    config.validate()?;
    let one = |&seed: &u64| -> Result<(u64, PooledSamples)> {
        let run = run_scenario(config, seed).map_err(|e| SimError::Seed {
            seed,
            source: Box::new(e),
        })?;
        Ok((seed, PooledSamples::from_run(&run)))
    };
    let mut results: Vec<(u64, PooledSamples)> = if parallel {
        seeds.par_iter().map(one).collect::<Result<_>>()?
    } else {
        seeds.iter().map(one).collect::<Result<_>>()?
    };
    results.sort_by_key(|(s, _)| *s);
    let mut pooled = PooledSamples::default();
    let mut per_seed = Vec::with_capacity(results.len());
    for (seed, p) in &results {
        pooled.merge(p);
        per_seed.push((*seed, p.reports()));
    }
    let mut sorted_seeds: Vec<u64> = results.iter().map(|(s, _)| *s).collect();
    sorted_seeds.dedup();
    Ok(EnsembleOutput {
        seeds: sorted_seeds,
        pooled,
        per_seed,
    })
}

/// Runs seeds `0..seeds` and pools the samples.
pub fn run_ensemble(config: &ScenarioConfig, seeds: u32, parallel: bool) -> Result<EnsembleOutput> {
    if seeds == 0 {
        return Err(SimError::config("seeds must be at least 1"));
    }
    let list: Vec<u64> = (0..seeds as u64).collect();
    run_seeds(config, &list, parallel)
}
