//! Acceptance suite. Prints one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the verdict lines are always shown.
//! The process fails when a criterion fails that is not listed in
//! `KNOWN_GAPS`; a listed criterion that starts passing is reported too.

use std::collections::BTreeMap;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tdma_lorawan::config::ScenarioConfig;
use tdma_lorawan::experiment::{reproduce, Exhibit, ReproduceOptions};
use tdma_lorawan::phy::RadioConfig;
use tdma_lorawan::scheduler::{
    control_overhead_eta, AllocationRequest, Cell, ResourceGrid, Scheduler, SchedulerConfig,
};
use tdma_lorawan::sim::study::{capacity_search, cliff_midpoint, is_monotone_rising, mean_pdr, run_seeds};
use tdma_lorawan::sim::SimulationReport;
use tdma_lorawan::superframe::{is_active_frame, SuperframeConfig, SuperframePlanner};

/// Criteria whose targets the model does not reach; see the project notes.
const KNOWN_GAPS: &[u32] = &[5];

// pinned tolerances
const TOA_TOL_MS: f64 = 1e-3;
const TDMA_PDR_TARGET: f64 = 0.977;
const TDMA_PDR_TOL: f64 = 0.02;
const ALOHA_PDR_TARGET: f64 = 0.867;
const ALOHA_PDR_TOL: f64 = 0.03;
const ORACLE_SIGMAS: f64 = 3.0;
const MIN_ORACLE_TX: u64 = 100_000;
const MIN_ZERO_COLLISION_TX: u64 = 10_000;
const CLIFF_PLATEAU_PDR: f64 = 0.95;
const CLIFF_PLATEAU_FROM_MS: f64 = 10.0;
const CLIFF_LOW: (f64, f64) = (3.0, 8.0);
const CLIFF_HIGH: (f64, f64) = (30.0, 50.0);
const MONOTONE_TOL: f64 = 0.01;
const CAPACITY_THRESHOLD: f64 = 0.8;
const CAPACITY_N_MAX: usize = 400;
const TDMA_CAPACITY_BAND: (usize, usize) = (140, 175);
const ENERGY_NODES: usize = 120;
const ENERGY_REL_TOL: f64 = 0.15;
const SCHED_SEQUENCES: usize = 1000;
const SUPERFRAME_K_MAX: u32 = 6;
const ETA_TARGET: f64 = 9.3e-5;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn cfg(overrides: &[String]) -> ScenarioConfig {
    let mut c = ScenarioConfig::default();
    c.apply_overrides(overrides).expect("acceptance scenario is valid");
    c
}

fn kv(pairs: &[(&str, String)]) -> Vec<String> {
    pairs.iter().map(|(k, v)| format!("{k}={v}")).collect()
}

fn runs(c: &ScenarioConfig) -> Vec<SimulationReport> {
    run_seeds(c).expect("simulation runs")
}

// Hand evaluation of the airtime formula: symbol time 2^SF/BW, payload
// symbols 8 + max(ceil((8PL − 4SF + 28 + 16 − 20H)/(4(SF − 2DE)))·(CR + 4), 0),
// preamble n + 4.25 symbols.
fn hand_toa_ms(sf: u32, payload: u32) -> f64 {
    let ts = f64::from(1u32 << sf) / 125.0;
    let de = if ts > 16.0 { 1.0 } else { 0.0 };
    let num = 8.0 * f64::from(payload) - 4.0 * f64::from(sf) + 28.0 + 16.0;
    let den = 4.0 * (f64::from(sf) - 2.0 * de);
    let n_payload = 8.0 + ((num / den).ceil() * 5.0).max(0.0);
    (8.0 + 4.25 + n_payload) * ts
}

fn c1_airtime() -> Verdict {
    let toa = |sf| RadioConfig::new(sf, 125_000).unwrap().time_on_air_ms(10).unwrap();
    let (t9, t7) = (toa(9), toa(7));
    let pass = (t9 - 144.384).abs() <= TOA_TOL_MS
        && (t7 - 41.216).abs() <= TOA_TOL_MS
        && (t9 - hand_toa_ms(9, 10)).abs() <= TOA_TOL_MS
        && (t7 - hand_toa_ms(7, 10)).abs() <= TOA_TOL_MS
        // the published whole-ms figures round SF9 up and SF7 to nearest
        && t9.ceil() == 145.0
        && t7.round() == 41.0;
    verdict(pass, format!("SF9 {t9:.3} ms, SF7 {t7:.3} ms"))
}

fn c2_table() -> Verdict {
    let base = kv(&[("nodes", "20".into()), ("phy.sf", "9".into()), ("interval_s", "4".into()), ("duration_s", "4000".into()), ("seeds", "1..=10".into())]);
    let with = |p: &str| {
        let mut o = base.clone();
        o.push(format!("protocol={p}"));
        runs(&cfg(&o))
    };
    let (t, a) = (with("tdma"), with("aloha"));
    let (pt, pa) = (mean_pdr(&t), mean_pdr(&a));
    let every = t.iter().zip(&a).all(|(x, y)| x.metrics.pdr > y.metrics.pdr);
    let pass = (pt - TDMA_PDR_TARGET).abs() <= TDMA_PDR_TOL && (pa - ALOHA_PDR_TARGET).abs() <= ALOHA_PDR_TOL && every && t.len() >= 10;
    verdict(pass, format!("TDMA {:.2}% ALOHA {:.2}% over {} seeds, TDMA ahead in every seed: {every}", pt * 100.0, pa * 100.0, t.len()))
}

/// Success fraction over transmitted frames, pooled across seeds, and its
/// binomial standard error around `expect`.
fn pooled(reports: &[SimulationReport], expect: f64) -> (f64, f64, u64) {
    let tx: u64 = reports.iter().map(|r| r.counters.transmitted).sum();
    let ok: u64 = reports.iter().map(|r| r.counters.delivered).sum();
    let p = ok as f64 / tx as f64;
    (p, (expect * (1.0 - expect) / tx as f64).sqrt(), tx)
}

fn c3_aloha_oracle() -> Verdict {
    const N: usize = 1000;
    const SLOT_MS: f64 = 200.0;
    let toa = RadioConfig::new(9, 125_000).unwrap().time_on_air_ms(10).unwrap();
    let ideal = |protocol: &str, interval_ms: f64| {
        let per_node = 110.0;
        kv(&[
            ("protocol", protocol.into()),
            ("nodes", N.to_string()),
            ("mac.channels", "1".into()),
            ("link.capture", "false".into()),
            ("link.shadow_sigma_db", "0".into()),
            ("link.sensitivity_dbm", "-300".into()),
            ("traffic", "poisson".into()),
            ("interval_s", (interval_ms / 1000.0).to_string()),
            ("duration_s", (per_node * interval_ms / 1000.0).to_string()),
            ("tdma.slot_ms", SLOT_MS.to_string()),
            ("sync.sigma_ms", "0".into()),
            ("sync.hw_sigma_ms", "0".into()),
            ("sync.drift_ppm", "0".into()),
            ("seeds", "1".into()),
        ])
    };
    let mut lines = Vec::new();
    let mut pass = true;
    for g in [0.05, 0.1, 0.5] {
        let pure = runs(&cfg(&ideal("aloha", N as f64 * toa / g)));
        let e = (-2.0 * g).exp();
        let (p, s, tx) = pooled(&pure, e);
        let ok = (p - e).abs() <= ORACLE_SIGMAS * s && tx >= MIN_ORACLE_TX;
        pass &= ok;
        lines.push(format!("G={g} pure {p:.4}/{e:.4} ({:.1}σ)", (p - e) / s));

        let slotted = runs(&cfg(&ideal("s-aloha", N as f64 * SLOT_MS / g)));
        let e = (-g).exp();
        let (p, s, tx) = pooled(&slotted, e);
        let ok = (p - e).abs() <= ORACLE_SIGMAS * s && tx >= MIN_ORACLE_TX;
        pass &= ok;
        lines.push(format!("slotted {p:.4}/{e:.4} ({:.1}σ)", (p - e) / s));
    }
    verdict(pass, lines.join(", "))
}

fn c4_zero_collision() -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [50usize, 100, 159] {
        let c = cfg(&kv(&[
            ("protocol", "tdma".into()),
            ("nodes", n.to_string()),
            ("tdma.reuse", "false".into()),
            ("tdma.guard_ms", "55".into()),
            ("sync.sigma_ms", "2".into()),
            ("sync.drift_ppm", "20".into()),
            ("sync.interval_s", "600".into()),
            ("seeds", "1..=10".into()),
        ]));
        let rs = runs(&c);
        let collisions: u64 = rs.iter().map(|r| r.counters.lost_collision).sum();
        let min_tx = rs.iter().map(|r| r.counters.transmitted).min().unwrap_or(0);
        let ok = collisions == 0 && min_tx >= MIN_ZERO_COLLISION_TX && rs.iter().all(|r| r.status.as_str() == "ok");
        pass &= ok;
        parts.push(format!("N={n}: {collisions} collisions, ≥{min_tx} tx/run"));
    }
    verdict(pass, parts.join("; "))
}

fn c5_cliff() -> Verdict {
    let b = cfg(&[]);
    let low = tdma_lorawan::experiment::reproduce::guard_sweep(&b, 2.0).unwrap();
    let high = tdma_lorawan::experiment::reproduce::guard_sweep(&b, 20.0).unwrap();
    let m_low = cliff_midpoint(&low).unwrap_or(f64::NAN);
    let m_high = cliff_midpoint(&high).unwrap_or(f64::NAN);
    let plateau = low
        .iter()
        .filter(|p| p.value >= CLIFF_PLATEAU_FROM_MS)
        .map(|p| p.mean_pdr)
        .fold(f64::INFINITY, f64::min);
    let first_95 = low.iter().find(|p| p.mean_pdr >= CLIFF_PLATEAU_PDR).map_or(f64::NAN, |p| p.value);
    let mono = is_monotone_rising(&low, MONOTONE_TOL) && is_monotone_rising(&high, MONOTONE_TOL);
    let pass = plateau >= CLIFF_PLATEAU_PDR
        && mono
        && (CLIFF_LOW.0..=CLIFF_LOW.1).contains(&m_low)
        && (CLIFF_HIGH.0..=CLIFF_HIGH.1).contains(&m_high);
    verdict(
        pass,
        format!(
            "midpoints {m_low:.1} ms (σ=2) and {m_high:.1} ms (σ=20); min PDR for guard ≥ 10 ms {:.3}, 95% first reached at {first_95} ms; monotone {mono}",
            plateau
        ),
    )
}

fn c6_capacity() -> Verdict {
    let cap = |p: &str| {
        let c = cfg(&kv(&[("protocol", p.into()), ("phy.sf", "9".into()), ("interval_s", "4".into()), ("seeds", "1..=10".into())]));
        capacity_search(&c, CAPACITY_THRESHOLD, CAPACITY_N_MAX).unwrap().capacity
    };
    let (t, s, a) = (cap("tdma"), cap("s-aloha"), cap("aloha"));
    let pass = t > s && s > a && (TDMA_CAPACITY_BAND.0..=TDMA_CAPACITY_BAND.1).contains(&t);
    verdict(pass, format!("TDMA {t}, S-ALOHA {s}, ALOHA {a}"))
}

fn c7_energy() -> Verdict {
    let at = |p: &str| {
        let c = cfg(&kv(&[("protocol", p.into()), ("nodes", ENERGY_NODES.to_string()), ("phy.sf", "9".into()), ("seeds", "1..=10".into())]));
        let rs = runs(&c);
        rs.iter().map(|r| r.metrics.energy_per_success_mj).sum::<f64>() / rs.len() as f64
    };
    let (t, s, a) = (at("tdma"), at("s-aloha"), at("aloha"));
    // 50 mW × 144.384 ms, 10 mW × 200 ms once per 600 s (150 packets),
    // 0.01 mW for the rest of each 4 s interval
    let tx = 50.0 * 0.144384;
    let sync = 10.0 * 0.2 / 150.0;
    let sleep = 0.01 * (4.0 - 0.144384 - 0.2 / 150.0);
    let closed = tx + sync + sleep;
    let rel = (t - closed).abs() / closed;
    let pass = t < s && s < a && rel <= ENERGY_REL_TOL;
    verdict(pass, format!("TDMA {t:.3} < S-ALOHA {s:.3} < ALOHA {a:.3} mJ; closed form {closed:.3} mJ, off by {:.1}%", rel * 100.0))
}

/// Independent model of the grid for the scheduler oracle.
#[derive(Clone, Default)]
struct Shadow {
    /// dev → (channel, slots, last activity, multi)
    devs: BTreeMap<u32, (usize, Vec<usize>, f64, bool)>,
}

impl Shadow {
    fn holders(&self, c: usize, u: usize) -> usize {
        self.devs.values().filter(|d| d.0 == c && d.1.contains(&u)).count()
    }

    fn empty(&self, c: usize, u: usize) -> bool {
        (c, u) != (0, 0) && self.holders(c, u) == 0
    }

    fn oracle(&self, channels: usize, slots: usize, n: usize) -> Option<(usize, usize)> {
        let mut best: Option<((usize, usize, usize), (usize, usize))> = None;
        for c in 0..channels {
            let load = (0..slots).filter(|&u| !self.empty(c, u)).count();
            for u in 0..=slots.saturating_sub(n) {
                if (u..u + n).all(|s| self.empty(c, s)) {
                    let key = (load, u, c);
                    if best.map_or(true, |(k, _)| key < k) {
                        best = Some((key, (c, u)));
                    }
                }
            }
        }
        best.map(|(_, cell)| cell)
    }

    fn n_multi(&self) -> usize {
        self.devs.values().filter(|d| d.3).map(|d| d.1.len()).sum()
    }
}

fn c8_scheduler() -> Verdict {
    const CH: usize = 3;
    const SL: usize = 5;
    const RHO: f64 = 0.3;
    // 50 ms slots make an SF9 frame need three of them
    const SLOT_MS: f64 = 50.0;
    let quota_cells = (RHO * (CH * SL) as f64).floor() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut mismatches = 0usize;
    let mut quota_violations = 0usize;
    let mut reserved_grants = 0usize;
    let mut allocations = 0usize;
    for _ in 0..SCHED_SEQUENCES {
        let mut s = Scheduler::new(
            ResourceGrid::with_access_slot(CH, SL).unwrap(),
            SchedulerConfig {
                slot_len_ms: SLOT_MS,
                rho_max: RHO,
                ..SchedulerConfig::default()
            },
        );
        let mut shadow = Shadow::default();
        let len = rng.gen_range(1..40);
        let mut t = 0.0;
        for _ in 0..len {
            t += rng.gen_range(0.5..5.0);
            if rng.gen_bool(0.8) {
                let dev = rng.gen_range(0..20u32);
                let multi = rng.gen_bool(0.3);
                let req = AllocationRequest {
                    is_multi: multi,
                    ..AllocationRequest::single(dev, 9, 10, rng.gen_range(0..3))
                };
                shadow.devs.remove(&dev);
                let mut n = if multi { 3 } else { 1 };
                if n > 1 && shadow.n_multi() + n > quota_cells {
                    n = 1;
                }
                let expect = shadow.oracle(CH, SL, n);
                let a = s.allocate(&req, t).unwrap();
                allocations += 1;
                match expect {
                    Some((c, u)) => {
                        let want: Vec<usize> = (u..u + n).collect();
                        if a.is_reuse || a.channel_index != c || a.slot_indices != want {
                            mismatches += 1;
                        }
                    }
                    None => mismatches += usize::from(!a.is_reuse),
                }
                if a.channel_index == 0 && a.slot_indices.contains(&0) {
                    reserved_grants += 1;
                }
                let is_multi = a.slot_indices.len() > 1;
                shadow.devs.insert(dev, (a.channel_index, a.slot_indices, t, is_multi));
                if s.n_multi() > quota_cells {
                    quota_violations += 1;
                }
            } else {
                let w = rng.gen_range(0.0..30.0);
                s.reclaim_expired(t, w);
                shadow.devs.retain(|_, d| t - d.2 <= w);
            }
            for c in 0..CH {
                for u in 0..SL {
                    let held = match s.grid().cell(c, u) {
                        Cell::Held(ids) => ids.len(),
                        _ => 0,
                    };
                    if held != shadow.holders(c, u) {
                        mismatches += 1;
                    }
                }
            }
        }
    }
    let pass = mismatches == 0 && quota_violations == 0 && reserved_grants == 0;
    verdict(
        pass,
        format!("{SCHED_SEQUENCES} sequences, {allocations} grants: {mismatches} oracle mismatches, {quota_violations} quota violations, {reserved_grants} reserved grants"),
    )
}

fn c9_superframe() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut clashes = 0usize;
    let mut wrong_counts = 0usize;
    let mut placed = 0usize;
    for k_max in 0..=SUPERFRAME_K_MAX {
        for _trial in 0..20 {
            let sf = SuperframeConfig::new(k_max, 1000.0, 3);
            let mut planner = SuperframePlanner::new(sf, 2, &[(0, 0)]);
            let mut dev = 0u32;
            // fill until the first period that no longer fits
            loop {
                let k = rng.gen_range(0..=k_max);
                if planner.place(dev, 1000.0 * f64::from(1u32 << k)).is_err() {
                    break;
                }
                dev += 1;
            }
            let scheds: Vec<_> = planner.schedules().copied().collect();
            placed += scheds.len();
            let m = sf.m_super();
            for s in &scheds {
                let active = (0..m).filter(|&f| is_active_frame(s, f)).count() as u64;
                if active != m >> s.k {
                    wrong_counts += 1;
                }
                if (s.channel_index, s.slot) == (0, 0) {
                    clashes += 1;
                }
            }
            for f in 0..m {
                for c in 0..2 {
                    for slot in 0..3 {
                        let users = scheds
                            .iter()
                            .filter(|s| s.channel_index == c && s.slot == slot && is_active_frame(s, f))
                            .count();
                        if users > 1 {
                            clashes += 1;
                        }
                    }
                }
            }
        }
    }
    let pass = clashes == 0 && wrong_counts == 0;
    verdict(pass, format!("K 0..={SUPERFRAME_K_MAX}, {placed} placements: {clashes} clashes, {wrong_counts} wrong activity counts"))
}

fn c10_eta() -> Verdict {
    let eta = control_overhead_eta(4.0, 24.0 * 3600.0);
    let two_sig = {
        let e = eta.log10().floor();
        (eta / 10f64.powf(e - 1.0)).round() * 10f64.powf(e - 1.0)
    };
    let pass = (eta - 9.259e-5).abs() < 1e-8 && (two_sig - ETA_TARGET).abs() < 1e-12;
    verdict(pass, format!("η = {eta:.4e} → {two_sig:.1e}"))
}

fn c11_determinism() -> Verdict {
    let opts = ReproduceOptions {
        overrides: vec!["seeds=1..=10".into()],
        workers: 4,
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    reproduce(Exhibit::Table3, &opts, a.path()).unwrap();
    let opts = ReproduceOptions { workers: 2, ..opts };
    reproduce(Exhibit::Table3, &opts, b.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(a.path())
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    let same = !names.is_empty()
        && names.iter().all(|n| std::fs::read(a.path().join(n)).ok() == std::fs::read(b.path().join(n)).ok());
    verdict(same, format!("{} files compared", names.len()))
}

fn main() {
    type Criterion = (u32, &'static str, fn() -> Verdict);
    let all: [Criterion; 11] = [
        (1, "airtime exactness", c1_airtime),
        (2, "two-protocol table", c2_table),
        (3, "ALOHA analytic oracle", c3_aloha_oracle),
        (4, "TDMA zero collisions", c4_zero_collision),
        (5, "guard-time cliff", c5_cliff),
        (6, "capacity ordering", c6_capacity),
        (7, "energy ordering", c7_energy),
        (8, "scheduler oracle", c8_scheduler),
        (9, "superframe exhaustiveness", c9_superframe),
        (10, "control overhead", c10_eta),
        (11, "determinism", c11_determinism),
    ];
    let filter: Vec<u32> = std::env::args()
        .skip(1)
        .filter_map(|a| a.trim_start_matches('c').parse().ok())
        .collect();
    let mut unexpected = Vec::new();
    for (id, name, f) in all {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let t = Instant::now();
        let v = f();
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let note = match (v.pass, KNOWN_GAPS.contains(&id)) {
            (false, true) => " (known gap)",
            (true, true) => " (listed as a known gap but passed)",
            _ => "",
        };
        println!("[{tag}] {id:>2} {name}: {} [{:.1} s]{note}", v.detail, t.elapsed().as_secs_f64());
        if !v.pass && !KNOWN_GAPS.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
