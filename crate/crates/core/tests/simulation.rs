use proptest::prelude::*;

use mlo_vr_sim::engine::{run_ensemble, run_scenario, run_seeds, PooledSamples, ScenarioConfig};
use mlo_vr_sim::mac::{DIFS_NS, SLOT_NS};
use mlo_vr_sim::metrics::KindFilter;
use mlo_vr_sim::mld::Mode;
use mlo_vr_sim::phy::{LinkConfig, McsEntry, OFDM_SYMBOL_NS, PREAMBLE_NS};
use mlo_vr_sim::traffic::{Direction, TrafficKind};

fn links(n: u32, bw: u32, mcs: u8) -> Vec<LinkConfig> {
    (0..n).map(|i| LinkConfig::new(i, bw, McsEntry::from_index(mcs).unwrap())).collect()
}

fn scenario(mode: Mode, n: u32, bw: u32, mcs: u8, users: u32, duration_s: f64) -> ScenarioConfig {
    let mut cfg = ScenarioConfig::new(mode, links(n, bw, mcs), users);
    cfg.duration_s = duration_s;
    cfg
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn one_link_mlo_is_slo(
        bw in prop::sample::select(vec![20u32, 40, 80, 160]),
        mcs in 5u8..14,
        users in 1u32..4,
        seed in any::<u64>(),
    ) {
        let slo = scenario(Mode::Slo, 1, bw, mcs, users, 0.25);
        let mlo = ScenarioConfig { mode: Mode::MloStr, ..slo.clone() };
        let a = run_scenario(&slo, seed).unwrap();
        let b = run_scenario(&mlo, seed).unwrap();
        prop_assert_eq!(a.samples_csv(), b.samples_csv());
        prop_assert_eq!(a.counters, b.counters);
        prop_assert_eq!(a.mac, b.mac);
    }

    #[test]
    fn every_run_conserves_packets(
        n in 1u32..4,
        bw in prop::sample::select(vec![20u32, 40, 80]),
        mcs in 0u8..14,
        users in 1u32..6,
        seed in 0u64..1000,
    ) {
        let mode = if n == 1 { Mode::Slo } else { Mode::MloStr };
        let out = run_scenario(&scenario(mode, n, bw, mcs, users, 0.2), seed).unwrap();
        prop_assert!(out.is_conserved());
        let delivered: u64 = out.counters.values().map(|c| c.delivered).sum();
        prop_assert_eq!(delivered as usize, out.samples.len());
        // A packet that joins an aggregate while its sender is already counting
        // down skips DIFS, so the floor is the shortest possible PPDU.
        let floor = PREAMBLE_NS + OFDM_SYMBOL_NS;
        prop_assert!(out.samples.iter().all(|s| s.delay_ns >= floor));
    }
}

#[test]
fn same_seed_same_bytes() {
    let cfg = scenario(Mode::MloStr, 2, 80, 11, 4, 0.5);
    let a = run_scenario(&cfg, 42).unwrap();
    let b = run_scenario(&cfg, 42).unwrap();
    assert_eq!(a.samples_csv(), b.samples_csv());
    let c = run_scenario(&cfg, 43).unwrap();
    assert_ne!(a.samples_csv(), c.samples_csv());
}

#[test]
fn ensemble_ignores_execution_order() {
    let cfg = scenario(Mode::MloStr, 2, 40, 9, 3, 0.3);
    let forward = run_seeds(&cfg, &[0, 1, 2, 3], false).unwrap();
    let shuffled = run_seeds(&cfg, &[2, 0, 3, 1], true).unwrap();
    assert_eq!(forward, shuffled);
    assert_eq!(forward.seeds, vec![0, 1, 2, 3]);
    assert_eq!(forward.per_seed.len(), 4);
    assert_eq!(forward, run_ensemble(&cfg, 4, true).unwrap());
}

#[test]
fn single_seed_ensemble_is_the_run() {
    let cfg = scenario(Mode::Slo, 1, 80, 11, 2, 0.3);
    let run = run_scenario(&cfg, 0).unwrap();
    let ens = run_ensemble(&cfg, 1, false).unwrap();
    assert_eq!(ens.pooled, PooledSamples::from_run(&run));
}

#[test]
fn pooled_sample_count_scales_with_seeds() {
    let cfg = scenario(Mode::MloStr, 2, 80, 11, 1, 1.0);
    let one = run_scenario(&cfg, 0).unwrap();
    let per_seed = one.counters[&(Direction::Dl, TrafficKind::Video)].generated as f64;
    let ens = run_ensemble(&cfg, 8, true).unwrap();
    let pooled = ens.pooled.class(Direction::Dl, KindFilter::Only(TrafficKind::Video)).generated as f64;
    // Phase-dependent batch boundaries move at most one frame per seed.
    assert!((pooled / (8.0 * per_seed) - 1.0).abs() < 0.02, "{pooled} vs {per_seed}");
}

#[test]
fn second_link_does_not_raise_tail_delay() {
    let seeds = 8;
    let slo = run_ensemble(&scenario(Mode::Slo, 1, 80, 11, 3, 2.0), seeds, true).unwrap();
    let mlo = run_ensemble(&scenario(Mode::MloStr, 2, 80, 11, 3, 2.0), seeds, true).unwrap();
    for (dir, kind) in [
        (Direction::Dl, KindFilter::Only(TrafficKind::Video)),
        (Direction::Ul, KindFilter::All),
    ] {
        let a = slo.pooled.class(dir, kind).delays.percentile(99.9).unwrap();
        let b = mlo.pooled.class(dir, kind).delays.percentile(99.9).unwrap();
        assert!(b <= a, "{dir} {kind}: MLO {b} > SLO {a}");
    }
}

#[test]
fn eight_links_never_duplicate_a_packet() {
    let mut cfg = scenario(Mode::MloStr, 8, 20, 11, 2, 1.0);
    cfg.per = 0.0;
    let out = run_scenario(&cfg, 5).unwrap();
    for c in out.counters.values() {
        assert!(c.delivered + c.dropped() + c.residual == c.generated);
        assert_eq!(c.dropped(), 0);
    }
    // Only collisions fail here, and every failure is resent as a new MPDU.
    let delivered: u64 = out.counters.values().map(|c| c.delivered).sum();
    assert!(out.mac.mpdus_sent >= delivered + out.mac.mpdus_failed);
}

#[test]
fn idle_medium_uplink_delay_is_difs_backoff_airtime() {
    use mlo_vr_sim::phy::ppdu_airtime_ns;
    use mlo_vr_sim::traffic::FlowSpec;
    let mut cfg = scenario(Mode::MloStr, 2, 80, 7, 1, 1.0);
    cfg.flows = vec![FlowSpec::tracking(90.0)];
    cfg.per = 0.0;
    let out = run_scenario(&cfg, 11).unwrap();
    let air = ppdu_airtime_ns([106], McsEntry::from_index(7).unwrap(), 80, 2).unwrap();
    let c = out.counters[&(Direction::Ul, TrafficKind::Tracking)];
    // The STA phase can push the last packets past the end of the run.
    assert!((268..=270).contains(&c.generated), "{}", c.generated);
    assert_eq!(out.samples.len() as u64 + c.residual, c.generated);
    for s in &out.samples {
        let rest = s.delay_ns - DIFS_NS - air;
        assert_eq!(rest % SLOT_NS, 0, "{}", s.delay_ns);
        assert!(rest / SLOT_NS <= 15);
    }
}
