//! Static PHY model: EHT MCS table, data rates, PPDU airtime and the
//! residential path-loss / CCA link budget.
//!
//! All durations are integer nanoseconds so that airtime arithmetic is exact
//! and runs are bit-for-bit reproducible.

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Result, SimError};

/// OFDM symbol duration: 12.8 us data + 0.8 us guard interval.
pub const OFDM_SYMBOL_NS: u64 = 13_600;
/// Fixed PHY preamble (legacy + EHT portions).
pub const PREAMBLE_NS: u64 = 44_000;
pub const SERVICE_BITS: u64 = 16;
pub const TAIL_BITS: u64 = 6;
pub const MAC_HEADER_BYTES: u32 = 30;
pub const FCS_BYTES: u32 = 4;
pub const MPDU_DELIMITER_BYTES: u32 = 4;
/// Maximum PPDU duration.
pub const MAX_PPDU_NS: u64 = 5_484_000;

pub const SUPPORTED_BANDWIDTHS_MHZ: [u32; 5] = [20, 40, 80, 160, 320];

pub const DEFAULT_TX_POWER_DBM: f64 = 23.0;
pub const DEFAULT_CCA_THRESHOLD_DBM: f64 = -82.0;

/// One row of the 802.11be MCS table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct McsEntry {
    pub index: u8,
    /// Coded bits per subcarrier per spatial stream.
    pub modulation_bits: u8,
    pub coding_num: u8,
    pub coding_den: u8,
}

const fn mcs(index: u8, modulation_bits: u8, coding_num: u8, coding_den: u8) -> McsEntry {
    McsEntry {
        index,
        modulation_bits,
        coding_num,
        coding_den,
    }
}

pub const MCS_TABLE: [McsEntry; 14] = [
    mcs(0, 1, 1, 2),
    mcs(1, 2, 1, 2),
    mcs(2, 2, 3, 4),
    mcs(3, 4, 1, 2),
    mcs(4, 4, 3, 4),
    mcs(5, 6, 2, 3),
    mcs(6, 6, 3, 4),
    mcs(7, 6, 5, 6),
    mcs(8, 8, 3, 4),
    mcs(9, 8, 5, 6),
    mcs(10, 10, 3, 4),
    mcs(11, 10, 5, 6),
    mcs(12, 12, 3, 4),
    mcs(13, 12, 5, 6),
];

impl McsEntry {
    pub fn from_index(index: u8) -> Result<McsEntry> {
        MCS_TABLE
            .get(index as usize)
            .copied()
            .ok_or_else(|| SimError::config(format!("MCS index {index} outside 0..=13")))
    }

    pub fn coding_rate(&self) -> f64 {
        self.coding_num as f64 / self.coding_den as f64
    }

    pub fn modulation_name(&self) -> &'static str {
        match self.modulation_bits {
            1 => "BPSK",
            2 => "QPSK",
            4 => "16-QAM",
            6 => "64-QAM",
            8 => "256-QAM",
            10 => "1024-QAM",
            _ => "4096-QAM",
        }
    }
}

impl fmt::Display for McsEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "MCS {} ({} {}/{})",
            self.index,
            self.modulation_name(),
            self.coding_num,
            self.coding_den
        )
    }
}

impl Serialize for McsEntry {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_u8(self.index)
    }
}

impl<'de> Deserialize<'de> for McsEntry {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let index = u8::deserialize(d)?;
        McsEntry::from_index(index).map_err(serde::de::Error::custom)
    }
}

/// Data subcarriers per 20/40/80/160/320 MHz EHT channel.
pub fn data_subcarriers(bandwidth_mhz: u32) -> Result<u32> {
    match bandwidth_mhz {
        20 => Ok(234),
        40 => Ok(468),
        80 => Ok(980),
        160 => Ok(1960),
        320 => Ok(3920),
        other => Err(SimError::config(format!(
            "unsupported channel bandwidth {other} MHz (expected 20, 40, 80, 160 or 320)"
        ))),
    }
}

/// Numerator and denominator of the data bits carried by one OFDM symbol.
fn bits_per_symbol_ratio(mcs: McsEntry, bandwidth_mhz: u32, n_ss: u32) -> Result<(u64, u64)> {
    if n_ss == 0 {
        return Err(SimError::config("number of spatial streams must be at least 1"));
    }
    let n_sd = data_subcarriers(bandwidth_mhz)? as u64;
    let num = n_sd * mcs.modulation_bits as u64 * mcs.coding_num as u64 * n_ss as u64;
    Ok((num, mcs.coding_den as u64))
}

/// Data bits per OFDM symbol (may be fractional only for exotic tables).
pub fn bits_per_symbol(mcs: McsEntry, bandwidth_mhz: u32, n_ss: u32) -> Result<f64> {
    let (num, den) = bits_per_symbol_ratio(mcs, bandwidth_mhz, n_ss)?;
    Ok(num as f64 / den as f64)
}

/// PHY data rate in bits per second.
pub fn phy_rate(mcs: McsEntry, bandwidth_mhz: u32, n_ss: u32) -> Result<f64> {
    Ok(bits_per_symbol(mcs, bandwidth_mhz, n_ss)? / (OFDM_SYMBOL_NS as f64 * 1e-9))
}

/// On-air size of one MPDU inside an A-MPDU: payload plus MAC header, FCS and
/// delimiter, padded to a 4-byte boundary.
pub fn mpdu_wire_bytes(payload_bytes: u32) -> u32 {
    let raw = payload_bytes + MAC_HEADER_BYTES + FCS_BYTES + MPDU_DELIMITER_BYTES;
    raw.div_ceil(4) * 4
}

/// Airtime of a PPDU carrying MPDUs with the given payload sizes.
pub fn ppdu_airtime_ns<I>(payloads: I, mcs: McsEntry, bandwidth_mhz: u32, n_ss: u32) -> Result<u64>
where
    I: IntoIterator<Item = u32>,
{
    let (num, den) = bits_per_symbol_ratio(mcs, bandwidth_mhz, n_ss)?;
    let mut n = 0usize;
    let mut bits = SERVICE_BITS + TAIL_BITS;
    for p in payloads {
        n += 1;
        bits += mpdu_wire_bytes(p) as u64 * 8;
    }
    if n == 0 {
        return Err(SimError::Domain("a PPDU must carry at least one MPDU".into()));
    }
    Ok(PREAMBLE_NS + symbols_for_bits(bits, num, den) * OFDM_SYMBOL_NS)
}

fn symbols_for_bits(bits: u64, num: u64, den: u64) -> u64 {
    (bits * den).div_ceil(num)
}

/// Airtime in seconds of `n_mpdus` equal-sized MPDUs.
pub fn ppdu_airtime(
    n_mpdus: usize,
    payload_bytes_per_mpdu: u32,
    mcs: McsEntry,
    bandwidth_mhz: u32,
    n_ss: u32,
) -> Result<f64> {
    let ns = ppdu_airtime_ns(
        std::iter::repeat_n(payload_bytes_per_mpdu, n_mpdus),
        mcs,
        bandwidth_mhz,
        n_ss,
    )?;
    Ok(ns as f64 * 1e-9)
}

/// Incremental airtime calculator used while packing an A-MPDU.
#[derive(Debug, Clone, Copy)]
pub struct AirtimeMeter {
    num: u64,
    den: u64,
    bits: u64,
    mpdus: usize,
}

impl AirtimeMeter {
    pub fn new(mcs: McsEntry, bandwidth_mhz: u32, n_ss: u32) -> Result<Self> {
        let (num, den) = bits_per_symbol_ratio(mcs, bandwidth_mhz, n_ss)?;
        Ok(Self {
            num,
            den,
            bits: SERVICE_BITS + TAIL_BITS,
            mpdus: 0,
        })
    }

    /// Airtime the PPDU would have after appending one more MPDU.
    pub fn airtime_with(&self, payload_bytes: u32) -> u64 {
        let bits = self.bits + mpdu_wire_bytes(payload_bytes) as u64 * 8;
        PREAMBLE_NS + symbols_for_bits(bits, self.num, self.den) * OFDM_SYMBOL_NS
    }

    pub fn push(&mut self, payload_bytes: u32) {
        self.bits += mpdu_wire_bytes(payload_bytes) as u64 * 8;
        self.mpdus += 1;
    }

    pub fn mpdus(&self) -> usize {
        self.mpdus
    }

    pub fn airtime_ns(&self) -> u64 {
        PREAMBLE_NS + symbols_for_bits(self.bits, self.num, self.den) * OFDM_SYMBOL_NS
    }
}

/// Per-link channel configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    #[serde(default)]
    pub link_id: u32,
    pub bandwidth_mhz: u32,
    pub mcs: McsEntry,
    #[serde(default = "default_n_ss")]
    pub n_ss: u32,
    #[serde(default = "default_center_freq")]
    pub center_freq_ghz: f64,
}

fn default_n_ss() -> u32 {
    2
}

fn default_center_freq() -> f64 {
    5.0
}

impl LinkConfig {
    pub fn new(link_id: u32, bandwidth_mhz: u32, mcs: McsEntry) -> Self {
        Self {
            link_id,
            bandwidth_mhz,
            mcs,
            n_ss: default_n_ss(),
            center_freq_ghz: default_center_freq(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        data_subcarriers(self.bandwidth_mhz)?;
        if self.n_ss == 0 {
            return Err(SimError::config(format!(
                "link {}: n_ss must be at least 1",
                self.link_id
            )));
        }
        if !(self.center_freq_ghz > 0.0) {
            return Err(SimError::config(format!(
                "link {}: center frequency must be positive",
                self.link_id
            )));
        }
        Ok(())
    }

    pub fn rate_bps(&self) -> Result<f64> {
        phy_rate(self.mcs, self.bandwidth_mhz, self.n_ss)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub cca_threshold_dbm: f64,
    pub distance_m: f64,
}

impl Default for LinkBudget {
    fn default() -> Self {
        Self {
            tx_power_dbm: DEFAULT_TX_POWER_DBM,
            cca_threshold_dbm: DEFAULT_CCA_THRESHOLD_DBM,
            distance_m: 3.0,
        }
    }
}

impl LinkBudget {
    /// Whether a receiver at this budget's distance detects energy above CCA.
    pub fn senses(&self, freq_ghz: f64, n_floors: u32, n_walls: u32) -> Result<bool> {
        let pl = path_loss_db(self.distance_m, freq_ghz, n_floors, n_walls)?;
        Ok(rx_power_dbm(self, pl) >= self.cca_threshold_dbm)
    }
}

/// TGax residential (scenario 1) path loss in dB.
pub fn path_loss_db(distance_m: f64, freq_ghz: f64, n_floors: u32, n_walls: u32) -> Result<f64> {
    if !(distance_m >= 0.1) {
        return Err(SimError::Domain(format!(
            "path loss needs distance >= 0.1 m, got {distance_m}"
        )));
    }
    if !(freq_ghz > 0.0) {
        return Err(SimError::Domain(format!("frequency must be positive, got {freq_ghz}")));
    }
    const BREAKPOINT_M: f64 = 5.0;
    let mut pl = 40.05 + 20.0 * (freq_ghz / 2.4).log10() + 20.0 * distance_m.min(BREAKPOINT_M).log10();
    if distance_m > BREAKPOINT_M {
        pl += 35.0 * (distance_m / BREAKPOINT_M).log10();
    }
    if n_floors > 0 {
        let f = n_floors as f64;
        pl += 18.3 * f.powf((f + 2.0) / (f + 1.0) - 0.46);
    }
    pl += 5.0 * n_walls as f64;
    Ok(pl)
}

pub fn rx_power_dbm(budget: &LinkBudget, pl_db: f64) -> f64 {
    budget.tx_power_dbm - pl_db
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(i: u8) -> McsEntry {
        McsEntry::from_index(i).unwrap()
    }

    #[test]
    fn table_shape() {
        assert_eq!(MCS_TABLE.len(), 14);
        for (i, e) in MCS_TABLE.iter().enumerate() {
            assert_eq!(e.index as usize, i);
            assert!([1, 2, 4, 6, 8, 10, 12].contains(&e.modulation_bits));
        }
        assert!(McsEntry::from_index(14).is_err());
    }

    #[test]
    fn rate_examples() {
        // 980 * 10 * 5/6 * 2 / 13.6 us
        let r = phy_rate(m(11), 80, 2).unwrap();
        assert!((r / 1e6 - 1200.98).abs() < 0.01, "{r}");
        // 234 * 1 * 1/2 / 13.6 us
        let r = phy_rate(m(0), 20, 1).unwrap();
        assert!((r / 1e6 - 8.6029).abs() < 1e-3, "{r}");
        assert!(matches!(phy_rate(m(3), 20, 0), Err(SimError::Config(_))));
        assert!(matches!(phy_rate(m(3), 60, 1), Err(SimError::Config(_))));
    }

    #[test]
    fn rate_monotone_in_mcs_and_linear_in_streams() {
        for bw in SUPPORTED_BANDWIDTHS_MHZ {
            for nss in 1..=4 {
                let rates: Vec<f64> = MCS_TABLE
                    .iter()
                    .map(|e| phy_rate(*e, bw, nss).unwrap())
                    .collect();
                assert!(rates.windows(2).all(|w| w[1] > w[0]));
                for e in MCS_TABLE {
                    let one = phy_rate(e, bw, nss).unwrap();
                    let two = phy_rate(e, bw, 2 * nss).unwrap();
                    assert!((two - 2.0 * one).abs() < 1e-6 * one);
                }
            }
        }
    }

    #[test]
    fn airtime_single_stats_packet() {
        // 212 B -> 250 B wire -> 252 B padded; (22 + 2016) / 117 -> 18 symbols
        let ns = ppdu_airtime_ns([212], m(0), 20, 1).unwrap();
        assert_eq!(ns, 44_000 + 18 * 13_600);
        assert_eq!(ns, 288_800);
        let s = ppdu_airtime(1, 212, m(0), 20, 1).unwrap();
        assert!((s - 288.8e-6).abs() < 1e-12);
    }

    #[test]
    fn airtime_rejects_empty() {
        assert!(ppdu_airtime(0, 212, m(0), 20, 1).is_err());
    }

    #[test]
    fn airtime_monotone_and_linear() {
        let one = ppdu_airtime_ns([1448], m(7), 40, 2).unwrap();
        let mut prev = one;
        for n in 2..200usize {
            let t = ppdu_airtime_ns(std::iter::repeat_n(1448, n), m(7), 40, 2).unwrap();
            assert!(t >= prev);
            // linear in payload bits within one symbol
            let bps = bits_per_symbol(m(7), 40, 2).unwrap();
            let ideal = (n - 1) as f64 * mpdu_wire_bytes(1448) as f64 * 8.0 / bps * 13_600.0;
            assert!(((t - one) as f64 - ideal).abs() <= 13_600.0 + 1e-6);
            prev = t;
        }
    }

    #[test]
    fn meter_matches_batch_formula() {
        let mut meter = AirtimeMeter::new(m(9), 80, 2).unwrap();
        let sizes = [1448u32, 1200, 106, 212, 1448, 33];
        for (i, s) in sizes.iter().enumerate() {
            let predicted = meter.airtime_with(*s);
            meter.push(*s);
            assert_eq!(predicted, meter.airtime_ns());
            let batch = ppdu_airtime_ns(sizes[..=i].iter().copied(), m(9), 80, 2).unwrap();
            assert_eq!(batch, meter.airtime_ns());
        }
    }

    #[test]
    fn path_loss_examples() {
        let pl = path_loss_db(5.0, 5.0, 0, 0).unwrap();
        assert!((pl - 60.40).abs() < 0.01, "{pl}");
        let pl = path_loss_db(10.0, 5.0, 0, 0).unwrap();
        assert!((pl - 70.94).abs() < 0.01, "{pl}");
        let pl = path_loss_db(5.0, 2.4, 0, 0).unwrap();
        assert!((pl - (40.05 + 20.0 * 5f64.log10())).abs() < 1e-9);
        assert!((pl - 54.03).abs() < 0.01);
        assert!(matches!(path_loss_db(0.05, 5.0, 0, 0), Err(SimError::Domain(_))));
    }

    #[test]
    fn path_loss_walls_and_floors() {
        let base = path_loss_db(8.0, 5.0, 0, 0).unwrap();
        assert!((path_loss_db(8.0, 5.0, 0, 2).unwrap() - base - 10.0).abs() < 1e-9);
        // one floor: 18.3 * 1^(...) = 18.3
        assert!((path_loss_db(8.0, 5.0, 1, 0).unwrap() - base - 18.3).abs() < 1e-9);
    }

    #[test]
    fn path_loss_continuous_at_breakpoint() {
        let below = path_loss_db(5.0 - 1e-9, 5.0, 0, 0).unwrap();
        let above = path_loss_db(5.0 + 1e-9, 5.0, 0, 0).unwrap();
        assert!((above - below).abs() < 1e-6);
        let mut prev = path_loss_db(0.1, 5.0, 0, 0).unwrap();
        for i in 1..500 {
            let d = 0.1 + i as f64 * 0.1;
            let pl = path_loss_db(d, 5.0, 0, 0).unwrap();
            assert!(pl >= prev);
            prev = pl;
        }
    }

    #[test]
    fn rx_power_and_cca() {
        let b = LinkBudget::default();
        assert_eq!(b.tx_power_dbm, 23.0);
        assert_eq!(b.cca_threshold_dbm, -82.0);
        let rx = rx_power_dbm(&b, 70.94);
        assert!((rx + 47.94).abs() < 1e-9);
        assert!(rx >= b.cca_threshold_dbm);
        assert_eq!(rx_power_dbm(&b, 0.0), 23.0);
        let rx = rx_power_dbm(&b, 110.0);
        assert_eq!(rx, -87.0);
        assert!(rx < b.cca_threshold_dbm);
    }

    #[test]
    fn default_distance_is_within_cca_range() {
        assert!(LinkBudget::default().senses(5.0, 0, 0).unwrap());
    }
}
