//! DCF-style channel access, A-MPDU framing, per-MPDU error draws and
//! drop-tail transmit queues.

use rand::Rng;
use std::collections::VecDeque;

use crate::error::{Result, SimError};
use crate::phy::{AirtimeMeter, McsEntry, MAX_PPDU_NS};
use crate::traffic::{Direction, TrafficKind};

pub const SLOT_NS: u64 = 9_000;
pub const SIFS_NS: u64 = 16_000;
pub const DIFS_NS: u64 = SIFS_NS + 2 * SLOT_NS;
pub const BLOCK_ACK_NS: u64 = 32_000;
pub const CW_MIN: u32 = 15;
pub const CW_MAX: u32 = 1023;
pub const RETRY_LIMIT: u8 = 7;
pub const MAX_AMPDU_MPDUS: usize = 1024;
pub const QUEUE_CAPACITY: usize = 5000;
pub const DEFAULT_PER: f64 = 0.10;

pub type PacketId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DropReason {
    BufferFull,
    RetryLimit,
}

/// A payload unit travelling queue -> air -> delivery. Times in nanoseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub id: PacketId,
    pub flow_id: u32,
    pub direction: Direction,
    pub kind: TrafficKind,
    pub size_bytes: u32,
    pub src_device: u32,
    pub dst_device: u32,
    pub generated_ns: u64,
    pub enqueued_ns: u64,
    pub delivered_ns: Option<u64>,
    pub dropped: Option<DropReason>,
    /// Retransmissions so far.
    pub attempt: u8,
}

impl Packet {
    pub fn delay_ns(&self) -> Option<u64> {
        self.delivered_ns.map(|d| d - self.generated_ns)
    }
}

/// Contention window after `retry_count` consecutive failures.
pub fn contention_window(retry_count: u32) -> u32 {
    let shift = retry_count.min(16);
    (((CW_MIN + 1) << shift) - 1).min(CW_MAX)
}

/// Uniform backoff in `[0, CW]`.
pub fn backoff_draw<R: Rng + ?Sized>(retry_count: u32, rng: &mut R) -> u32 {
    rng.gen_range(0..=contention_window(retry_count))
}

/// Drop-tail FIFO of packet ids. In-flight packets still count against the
/// capacity until they are released.
#[derive(Debug, Clone)]
pub struct TxQueue {
    packets: VecDeque<PacketId>,
    in_flight: usize,
    capacity: usize,
}

impl Default for TxQueue {
    fn default() -> Self {
        Self::with_capacity(QUEUE_CAPACITY)
    }
}

impl TxQueue {
    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            packets: VecDeque::new(),
            in_flight: 0,
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Packets waiting for a transmit opportunity.
    pub fn len(&self) -> usize {
        self.packets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.packets.is_empty()
    }

    pub fn in_flight(&self) -> usize {
        self.in_flight
    }

    pub fn occupancy(&self) -> usize {
        self.packets.len() + self.in_flight
    }

    pub fn head(&self) -> Option<PacketId> {
        self.packets.front().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = PacketId> + '_ {
        self.packets.iter().copied()
    }

    /// Appends at the tail; returns `false` (and does not store the packet)
    /// when the buffer is full.
    pub fn push(&mut self, id: PacketId) -> bool {
        if self.occupancy() >= self.capacity {
            return false;
        }
        self.packets.push_back(id);
        true
    }

    fn take_front(&mut self) -> Option<PacketId> {
        let id = self.packets.pop_front()?;
        self.in_flight += 1;
        Some(id)
    }

    /// Returns failed packets to the head, keeping their relative order.
    pub fn requeue_front(&mut self, ids: &[PacketId]) {
        self.release(ids.len());
        for &id in ids.iter().rev() {
            self.packets.push_front(id);
        }
    }

    /// Clears the in-flight mark of packets that left the system.
    pub fn release(&mut self, n: usize) {
        debug_assert!(n <= self.in_flight);
        self.in_flight -= n;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpduOutcome {
    Pending,
    Delivered,
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MpduRecord {
    pub packet: PacketId,
    pub attempt: u8,
    pub outcome: MpduOutcome,
}

/// Limits applied while aggregating.
#[derive(Debug, Clone, Copy)]
pub struct AggregationLimits {
    pub max_mpdus: usize,
    pub max_ppdu_ns: u64,
}

impl Default for AggregationLimits {
    fn default() -> Self {
        Self {
            max_mpdus: MAX_AMPDU_MPDUS,
            max_ppdu_ns: MAX_PPDU_NS,
        }
    }
}

/// An A-MPDU ready to go on air.
#[derive(Debug, Clone, PartialEq)]
pub struct Ampdu {
    pub mpdus: Vec<MpduRecord>,
    pub airtime_ns: u64,
}

/// Dequeues head-of-line packets into one A-MPDU, bounded by the MPDU count
/// cap and the maximum PPDU duration. Returns `None` on an empty queue.
pub fn form_ampdu(
    queue: &mut TxQueue,
    packets: &[Packet],
    mcs: McsEntry,
    bandwidth_mhz: u32,
    n_ss: u32,
    limits: AggregationLimits,
) -> Result<Option<Ampdu>> {
    if queue.is_empty() {
        return Ok(None);
    }
    let mut meter = AirtimeMeter::new(mcs, bandwidth_mhz, n_ss)?;
    let mut mpdus = Vec::new();
    while mpdus.len() < limits.max_mpdus {
        let Some(id) = queue.head() else { break };
        let pkt = &packets[id as usize];
        // The first MPDU always goes, even if it alone overruns the limit.
        if !mpdus.is_empty() && meter.airtime_with(pkt.size_bytes) > limits.max_ppdu_ns {
            break;
        }
        meter.push(pkt.size_bytes);
        queue.take_front();
        mpdus.push(MpduRecord {
            packet: id,
            attempt: pkt.attempt,
            outcome: MpduOutcome::Pending,
        });
    }
    Ok(Some(Ampdu {
        mpdus,
        airtime_ns: meter.airtime_ns(),
    }))
}

/// Per-MPDU success flags for one PPDU.
pub fn transmit_outcome<R: Rng + ?Sized>(n_mpdus: usize, per: f64, collided: bool, rng: &mut R) -> Vec<bool> {
    if collided {
        return vec![false; n_mpdus];
    }
    (0..n_mpdus).map(|_| !rng.gen_bool(per)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfPhase {
    Idle,
    DifsWait,
    Backoff,
    Transmitting,
    AwaitingAck,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfEvent {
    /// Data became available for this link.
    Wake,
    /// The medium has been idle for DIFS.
    ChannelIdleDifs,
    /// Idle backoff slots counted since the last countdown checkpoint.
    SlotsElapsed(u32),
    ChannelBusy,
    TxComplete,
    /// Block ACK came back with at least one MPDU acknowledged.
    AckReceived,
    /// No usable Block ACK. `exhausted` is set when every MPDU of the PPDU hit
    /// the retry limit and was discarded.
    AckTimeout { exhausted: bool },
    /// Backoff expired but nothing was eligible to send.
    NothingToSend,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcfAction {
    None,
    /// Wait until the medium has been idle for DIFS.
    WaitForMedium,
    /// Count down this many idle slots.
    CountDown(u32),
    /// Backoff reached zero: transmit now.
    Transmit,
}

/// Contention state of one device on one link.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinkState {
    pub phase: DcfPhase,
    /// `None` until a backoff has been drawn for the pending access.
    pub backoff_slots_remaining: Option<u32>,
    pub cw: u32,
    pub retry_count: u32,
    /// End of the current exchange (PPDU + SIFS + Block ACK) while transmitting.
    pub busy_until: u64,
}

impl Default for LinkState {
    fn default() -> Self {
        Self {
            phase: DcfPhase::Idle,
            backoff_slots_remaining: None,
            cw: CW_MIN,
            retry_count: 0,
            busy_until: 0,
        }
    }
}

impl LinkState {
    pub fn is_contending(&self) -> bool {
        matches!(self.phase, DcfPhase::DifsWait | DcfPhase::Backoff)
    }
}

/// Advances the DCF cycle by one event. Backoff draws use `rng`.
pub fn dcf_advance<R: Rng + ?Sized>(
    link: LinkState,
    event: DcfEvent,
    rng: &mut R,
) -> Result<(LinkState, DcfAction)> {
    use DcfAction as A;
    use DcfEvent as E;
    use DcfPhase as P;

    let mut next = link;
    let action = match (link.phase, event) {
        (P::Idle, E::Wake) => {
            next.phase = P::DifsWait;
            A::WaitForMedium
        }
        (P::Idle, E::ChannelBusy | E::ChannelIdleDifs | E::NothingToSend) => A::None,

        (P::DifsWait | P::Backoff, E::Wake) => A::None,
        (P::DifsWait, E::ChannelBusy) => A::None,
        (P::DifsWait | P::Backoff, E::ChannelIdleDifs) => {
            let slots = match link.backoff_slots_remaining {
                Some(s) => s,
                None => backoff_draw(link.retry_count, rng),
            };
            next.backoff_slots_remaining = Some(slots);
            next.phase = P::Backoff;
            A::CountDown(slots)
        }
        (P::Backoff, E::SlotsElapsed(n)) => {
            let remaining = link.backoff_slots_remaining.unwrap_or(0);
            if n > remaining {
                return Err(SimError::internal(format!(
                    "{n} slots elapsed with only {remaining} remaining"
                )));
            }
            next.backoff_slots_remaining = Some(remaining - n);
            if remaining == n {
                next.phase = P::Transmitting;
                A::Transmit
            } else {
                A::None
            }
        }
        (P::Backoff, E::ChannelBusy) => {
            next.phase = P::DifsWait;
            A::WaitForMedium
        }
        (P::DifsWait | P::Backoff | P::Transmitting, E::NothingToSend) => {
            next.phase = P::Idle;
            next.backoff_slots_remaining = None;
            A::None
        }

        (P::Transmitting, E::TxComplete) => {
            next.phase = P::AwaitingAck;
            next.backoff_slots_remaining = None;
            A::None
        }
        (P::Transmitting | P::AwaitingAck, E::Wake | E::ChannelBusy) => A::None,

        (P::AwaitingAck, E::AckReceived) => {
            next.phase = P::Idle;
            next.retry_count = 0;
            next.cw = CW_MIN;
            next.busy_until = 0;
            A::None
        }
        (P::AwaitingAck, E::AckTimeout { exhausted }) => {
            next.phase = P::Idle;
            if exhausted {
                next.retry_count = 0;
            } else {
                next.retry_count = link.retry_count + 1;
            }
            next.cw = contention_window(next.retry_count);
            next.busy_until = 0;
            A::None
        }

        (phase, ev) => {
            return Err(SimError::internal(format!("illegal DCF transition: {ev:?} in {phase:?}")));
        }
    };
    Ok((next, action))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{ppdu_airtime_ns, McsEntry};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pkt(id: u32, size: u32) -> Packet {
        Packet {
            id,
            flow_id: 0,
            direction: Direction::Dl,
            kind: TrafficKind::Video,
            size_bytes: size,
            src_device: 0,
            dst_device: 1,
            generated_ns: 0,
            enqueued_ns: 0,
            delivered_ns: None,
            dropped: None,
            attempt: 0,
        }
    }

    fn filled(n: usize, size: u32) -> (TxQueue, Vec<Packet>) {
        let packets: Vec<Packet> = (0..n as u32).map(|i| pkt(i, size)).collect();
        let mut q = TxQueue::with_capacity(usize::MAX);
        for p in &packets {
            assert!(q.push(p.id));
        }
        (q, packets)
    }

    #[test]
    fn timing_constants() {
        assert_eq!(DIFS_NS, 34_000);
        assert_eq!(SLOT_NS, 9_000);
        assert_eq!(SIFS_NS, 16_000);
    }

    #[test]
    fn window_doubles_and_caps() {
        assert_eq!(contention_window(0), 15);
        assert_eq!(contention_window(1), 31);
        assert_eq!(contention_window(5), 511);
        assert_eq!(contention_window(6), 1023);
        assert_eq!(contention_window(40), 1023);
    }

    #[test]
    fn backoff_mean_at_cw_min() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let draws: Vec<u32> = (0..n).map(|_| backoff_draw(0, &mut rng)).collect();
        assert!(draws.iter().all(|&d| d <= 15));
        let mean = draws.iter().map(|&d| d as f64).sum::<f64>() / n as f64;
        assert!((mean - 7.5).abs() < 0.2, "{mean}");
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert!((0..1000).map(|_| backoff_draw(9, &mut rng)).all(|d| d <= 1023));
    }

    #[test]
    fn backoff_is_seed_deterministic() {
        let a: Vec<u32> = {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..100).map(|r| backoff_draw(r % 8, &mut rng)).collect()
        };
        let b: Vec<u32> = {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..100).map(|r| backoff_draw(r % 8, &mut rng)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn queue_drop_tail() {
        let mut q = TxQueue::with_capacity(3);
        assert!(q.push(1) && q.push(2) && q.push(3));
        assert!(!q.push(4));
        assert_eq!(q.len(), 3);
        assert_eq!(TxQueue::default().capacity(), 5000);
    }

    #[test]
    fn ampdu_takes_whole_video_batch() {
        let (mut q, packets) = filled(96, 1448);
        let mcs = McsEntry::from_index(11).unwrap();
        let a = form_ampdu(&mut q, &packets, mcs, 80, 2, AggregationLimits::default())
            .unwrap()
            .unwrap();
        assert_eq!(a.mpdus.len(), 96);
        assert!(q.is_empty());
        assert_eq!(q.in_flight(), 96);
        let ids: Vec<u32> = a.mpdus.iter().map(|m| m.packet).collect();
        assert_eq!(ids, (0..96).collect::<Vec<_>>());
        assert_eq!(a.airtime_ns, ppdu_airtime_ns(std::iter::repeat_n(1448, 96), mcs, 80, 2).unwrap());
    }

    #[test]
    fn ampdu_single_packet_and_empty() {
        let (mut q, packets) = filled(1, 212);
        let mcs = McsEntry::from_index(0).unwrap();
        let a = form_ampdu(&mut q, &packets, mcs, 20, 1, AggregationLimits::default())
            .unwrap()
            .unwrap();
        assert_eq!(a.mpdus.len(), 1);
        assert!(form_ampdu(&mut q, &packets, mcs, 20, 1, AggregationLimits::default())
            .unwrap()
            .is_none());
    }

    #[test]
    fn ampdu_count_cap_binds_at_top_rate() {
        let (mut q, packets) = filled(2000, 1448);
        let mcs = McsEntry::from_index(13).unwrap();
        let full = ppdu_airtime_ns(std::iter::repeat_n(1448, 1024), mcs, 320, 2).unwrap();
        assert!(full < MAX_PPDU_NS);
        let a = form_ampdu(&mut q, &packets, mcs, 320, 2, AggregationLimits::default())
            .unwrap()
            .unwrap();
        assert_eq!(a.mpdus.len(), 1024);
        assert_eq!(q.len(), 976);
    }

    #[test]
    fn ampdu_duration_cap_binds_at_low_rate() {
        let (mut q, packets) = filled(500, 1448);
        let mcs = McsEntry::from_index(4).unwrap();
        let a = form_ampdu(&mut q, &packets, mcs, 20, 2, AggregationLimits::default())
            .unwrap()
            .unwrap();
        let n = a.mpdus.len();
        assert!(a.airtime_ns <= MAX_PPDU_NS);
        let one_more = ppdu_airtime_ns(std::iter::repeat_n(1448, n + 1), mcs, 20, 2).unwrap();
        assert!(one_more > MAX_PPDU_NS);
    }

    #[test]
    fn requeue_restores_order() {
        let (mut q, packets) = filled(10, 100);
        let mcs = McsEntry::from_index(5).unwrap();
        let a = form_ampdu(
            &mut q,
            &packets,
            mcs,
            20,
            1,
            AggregationLimits {
                max_mpdus: 4,
                max_ppdu_ns: MAX_PPDU_NS,
            },
        )
        .unwrap()
        .unwrap();
        assert_eq!(q.len(), 6);
        let ids: Vec<u32> = a.mpdus.iter().map(|m| m.packet).collect();
        q.requeue_front(&ids);
        assert_eq!(q.iter().collect::<Vec<_>>(), (0..10).collect::<Vec<_>>());
        assert_eq!(q.in_flight(), 0);
    }

    #[test]
    fn outcome_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert!(transmit_outcome(50, 0.1, true, &mut rng).iter().all(|ok| !ok));
        assert!(transmit_outcome(50, 0.0, false, &mut rng).iter().all(|&ok| ok));
        let n = 100_000;
        let fails = transmit_outcome(n, 0.10, false, &mut rng).iter().filter(|ok| !**ok).count();
        let frac = fails as f64 / n as f64;
        assert!((frac - 0.100).abs() < 0.003, "{frac}");
    }

    fn step(s: LinkState, e: DcfEvent, rng: &mut ChaCha8Rng) -> (LinkState, DcfAction) {
        dcf_advance(s, e, rng).unwrap()
    }

    #[test]
    fn dcf_full_cycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = LinkState::default();
        let (s, a) = step(s, DcfEvent::Wake, &mut rng);
        assert_eq!((s.phase, a), (DcfPhase::DifsWait, DcfAction::WaitForMedium));
        let (s, a) = step(s, DcfEvent::ChannelIdleDifs, &mut rng);
        let DcfAction::CountDown(n) = a else { panic!("{a:?}") };
        assert!(n <= 15);
        let (s, a) = step(s, DcfEvent::SlotsElapsed(n), &mut rng);
        assert_eq!((s.phase, a), (DcfPhase::Transmitting, DcfAction::Transmit));
        let (s, _) = step(s, DcfEvent::TxComplete, &mut rng);
        assert_eq!(s.phase, DcfPhase::AwaitingAck);
        let (s, _) = step(s, DcfEvent::AckReceived, &mut rng);
        assert_eq!(s, LinkState::default());
    }

    #[test]
    fn dcf_freeze_keeps_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = LinkState {
            phase: DcfPhase::DifsWait,
            backoff_slots_remaining: Some(10),
            ..Default::default()
        };
        let (s, a) = step(s, DcfEvent::ChannelIdleDifs, &mut rng);
        assert_eq!(a, DcfAction::CountDown(10));
        let (s, _) = step(s, DcfEvent::SlotsElapsed(4), &mut rng);
        let (s, a) = step(s, DcfEvent::ChannelBusy, &mut rng);
        assert_eq!((s.phase, a), (DcfPhase::DifsWait, DcfAction::WaitForMedium));
        assert_eq!(s.backoff_slots_remaining, Some(6));
        let (s, a) = step(s, DcfEvent::ChannelIdleDifs, &mut rng);
        assert_eq!(a, DcfAction::CountDown(6));
        assert_eq!(s.phase, DcfPhase::Backoff);
    }

    #[test]
    fn dcf_collision_doubles_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = LinkState {
            phase: DcfPhase::AwaitingAck,
            ..Default::default()
        };
        let (s, _) = step(s, DcfEvent::AckTimeout { exhausted: false }, &mut rng);
        assert_eq!((s.retry_count, s.cw), (1, 31));
        let s = LinkState {
            phase: DcfPhase::AwaitingAck,
            ..s
        };
        let (s, _) = step(s, DcfEvent::AckTimeout { exhausted: false }, &mut rng);
        assert_eq!((s.retry_count, s.cw), (2, 63));
        let s = LinkState {
            phase: DcfPhase::AwaitingAck,
            ..s
        };
        let (s, _) = step(s, DcfEvent::AckTimeout { exhausted: true }, &mut rng);
        assert_eq!((s.retry_count, s.cw), (0, 15));
    }

    #[test]
    fn dcf_rejects_illegal_transitions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let idle = LinkState::default();
        assert!(dcf_advance(idle, DcfEvent::TxComplete, &mut rng).is_err());
        assert!(dcf_advance(idle, DcfEvent::AckReceived, &mut rng).is_err());
        let backoff = LinkState {
            phase: DcfPhase::Backoff,
            backoff_slots_remaining: Some(2),
            ..Default::default()
        };
        assert!(dcf_advance(backoff, DcfEvent::SlotsElapsed(3), &mut rng).is_err());
    }

    #[test]
    fn saturated_transmitter_mean_backoff() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mut s = LinkState::default();
        let mut total = 0u64;
        let accesses = 10_000;
        for _ in 0..accesses {
            s = step(s, DcfEvent::Wake, &mut rng).0;
            let (n, a) = step(s, DcfEvent::ChannelIdleDifs, &mut rng);
            s = n;
            let DcfAction::CountDown(k) = a else { unreachable!() };
            total += k as u64;
            s = step(s, DcfEvent::SlotsElapsed(k), &mut rng).0;
            s = step(s, DcfEvent::TxComplete, &mut rng).0;
            s = step(s, DcfEvent::AckReceived, &mut rng).0;
        }
        let mean = total as f64 / accesses as f64;
        assert!((mean - 7.5).abs() < 0.2, "{mean}");
    }
}
