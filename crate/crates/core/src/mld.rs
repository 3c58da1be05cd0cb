//! Multi-link device layer. A device owns one set of transmit queues that
//! every one of its links serves opportunistically (MLO STR). A single link is
//! plain SLO.

use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::fmt;

use crate::error::{Result, SimError};
use crate::mac::{form_ampdu, AggregationLimits, Ampdu, DropReason, MpduOutcome, Packet, PacketId, TxQueue, RETRY_LIMIT};
use crate::phy::LinkConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    #[serde(rename = "slo", alias = "SLO")]
    Slo,
    #[serde(rename = "mlo_str", alias = "MLO_STR", alias = "mlo")]
    MloStr,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Slo => "slo",
            Mode::MloStr => "mlo",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Mode {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "slo" => Ok(Mode::Slo),
            "mlo" | "mlo_str" | "mlo-str" => Ok(Mode::MloStr),
            other => Err(SimError::config(format!("unknown mode '{other}' (expected slo or mlo)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MldConfig {
    pub mode: Mode,
    pub links: Vec<LinkConfig>,
}

impl MldConfig {
    pub fn validate(&self) -> Result<()> {
        if self.links.is_empty() {
            return Err(SimError::config("at least one link is required"));
        }
        if self.mode == Mode::Slo && self.links.len() != 1 {
            return Err(SimError::config(format!(
                "SLO requires exactly one link, got {}",
                self.links.len()
            )));
        }
        let mut ids = HashSet::new();
        for l in &self.links {
            l.validate()?;
            if !ids.insert(l.link_id) {
                return Err(SimError::config(format!("duplicate link id {}", l.link_id)));
            }
        }
        Ok(())
    }
}

/// Packets currently committed to a PPDU on some link of a device.
#[derive(Debug, Clone, Default)]
pub struct InFlightSet {
    ids: HashSet<PacketId>,
}

impl InFlightSet {
    pub fn insert(&mut self, id: PacketId) -> Result<()> {
        if !self.ids.insert(id) {
            return Err(SimError::internal(format!("packet {id} committed to two links")));
        }
        Ok(())
    }

    pub fn remove(&mut self, id: PacketId) -> Result<()> {
        if !self.ids.remove(&id) {
            return Err(SimError::internal(format!("packet {id} released but not in flight")));
        }
        Ok(())
    }

    pub fn contains(&self, id: PacketId) -> bool {
        self.ids.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A transmit opportunity won by one link: one A-MPDU for one receiver.
#[derive(Debug, Clone, PartialEq)]
pub struct Txop {
    pub queue: usize,
    pub dst_device: u32,
    pub ampdu: Ampdu,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReleaseSummary {
    pub delivered: usize,
    pub requeued: usize,
    pub dropped: usize,
}

/// Transmit side of a (possibly multi-link) device: one queue per receiver,
/// shared by all links.
#[derive(Debug, Clone)]
pub struct SharedQueues {
    queues: Vec<TxQueue>,
    dests: Vec<u32>,
    in_flight: InFlightSet,
}

impl SharedQueues {
    pub fn new(dests: Vec<u32>, capacity: usize) -> Self {
        Self {
            queues: dests.iter().map(|_| TxQueue::with_capacity(capacity)).collect(),
            dests,
            in_flight: InFlightSet::default(),
        }
    }

    pub fn queue_for(&self, dst: u32) -> Option<usize> {
        self.dests.iter().position(|&d| d == dst)
    }

    pub fn queue_count(&self) -> usize {
        self.queues.len()
    }

    pub fn queue(&self, idx: usize) -> &TxQueue {
        &self.queues[idx]
    }

    pub fn in_flight(&self) -> &InFlightSet {
        &self.in_flight
    }

    /// Drop-tail enqueue; `false` when the receiver's buffer is full.
    pub fn enqueue(&mut self, idx: usize, id: PacketId) -> bool {
        self.queues[idx].push(id)
    }

    /// Whether some queued packet is not yet committed to a link.
    pub fn has_eligible(&self) -> bool {
        self.queues.iter().any(|q| !q.is_empty())
    }

    pub fn queued(&self) -> usize {
        self.queues.iter().map(TxQueue::len).sum()
    }

    /// Queue whose head packet has waited longest; ties go to the lower
    /// queue index.
    fn oldest_head(&self, packets: &[Packet]) -> Option<usize> {
        self.queues
            .iter()
            .enumerate()
            .filter_map(|(i, q)| q.head().map(|h| (packets[h as usize].enqueued_ns, i)))
            .min()
            .map(|(_, i)| i)
    }

    /// Builds the A-MPDU for a link that just won contention and marks its
    /// packets in flight. `None` when every queued packet is already in flight
    /// elsewhere.
    pub fn allocate_txop(
        &mut self,
        packets: &[Packet],
        link: &LinkConfig,
        limits: AggregationLimits,
    ) -> Result<Option<Txop>> {
        let Some(queue) = self.oldest_head(packets) else {
            return Ok(None);
        };
        let Some(ampdu) = form_ampdu(
            &mut self.queues[queue],
            packets,
            link.mcs,
            link.bandwidth_mhz,
            link.n_ss,
            limits,
        )?
        else {
            return Ok(None);
        };
        for m in &ampdu.mpdus {
            self.in_flight.insert(m.packet)?;
        }
        Ok(Some(Txop {
            queue,
            dst_device: self.dests[queue],
            ampdu,
        }))
    }

    /// Applies per-MPDU outcomes of a finished PPDU. Delivered packets are
    /// stamped with `rx_end_ns`; failed ones go back to the head of their
    /// queue in original order unless they exhausted the retry limit.
    pub fn release_inflight(
        &mut self,
        txop: &Txop,
        success: &[bool],
        packets: &mut [Packet],
        rx_end_ns: u64,
    ) -> Result<ReleaseSummary> {
        if success.len() != txop.ampdu.mpdus.len() {
            return Err(SimError::internal("outcome bitmap length mismatch"));
        }
        let mut summary = ReleaseSummary::default();
        let mut retry = Vec::new();
        let mut gone = 0;
        for (m, &ok) in txop.ampdu.mpdus.iter().zip(success) {
            self.in_flight.remove(m.packet)?;
            let p = &mut packets[m.packet as usize];
            if ok {
                if p.delivered_ns.is_some() {
                    return Err(SimError::internal(format!("packet {} delivered twice", p.id)));
                }
                p.delivered_ns = Some(rx_end_ns);
                summary.delivered += 1;
                gone += 1;
            } else if p.attempt >= RETRY_LIMIT {
                p.dropped = Some(DropReason::RetryLimit);
                summary.dropped += 1;
                gone += 1;
            } else {
                p.attempt += 1;
                retry.push(m.packet);
            }
        }
        let q = &mut self.queues[txop.queue];
        q.release(gone);
        q.requeue_front(&retry);
        summary.requeued = retry.len();
        Ok(summary)
    }
}

/// Outcome labels for a resolved PPDU, used in traces.
pub fn outcomes(success: &[bool]) -> Vec<MpduOutcome> {
    success
        .iter()
        .map(|&ok| if ok { MpduOutcome::Delivered } else { MpduOutcome::Failed })
        .collect()
}
