//! Canned scenario sets behind `reproduce`.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::mac::Protocol;
use crate::sim::metrics::pdr_ci95;
use crate::sim::study::{
    capacity_search, cliff_midpoint, is_monotone_rising, mean_pdr, run_seeds, sensitivity_sweep, sweep_csv,
    SweepAxis, SweepPoint,
};
use crate::sim::SimulationReport;

use super::batch::{summary_csv, with_workers, write_atomic};
use super::reference::{compare, comparison_csv, references, Comparison, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exhibit {
    /// Two-protocol comparison at 20 nodes.
    Table3,
    /// Delivery ratio against network size.
    Fig7,
    /// Throughput against network size.
    Fig8,
    /// Energy per delivered packet against network size.
    Fig9,
    /// Guard-time and sync-error sensitivity.
    Fig10,
    /// Capacity against reporting interval.
    Fig11,
}

impl Exhibit {
    pub const ALL: [Exhibit; 6] = [
        Exhibit::Table3,
        Exhibit::Fig7,
        Exhibit::Fig8,
        Exhibit::Fig9,
        Exhibit::Fig10,
        Exhibit::Fig11,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Exhibit::Table3 => "table3",
            Exhibit::Fig7 => "fig7",
            Exhibit::Fig8 => "fig8",
            Exhibit::Fig9 => "fig9",
            Exhibit::Fig10 => "fig10",
            Exhibit::Fig11 => "fig11",
        }
    }
}

impl FromStr for Exhibit {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        Exhibit::ALL
            .into_iter()
            .find(|e| e.id() == s)
            .ok_or_else(|| SimError::UnknownExhibit(s.to_string()))
    }
}

pub const SF9_SIZES: [usize; 11] = [10, 20, 40, 60, 80, 100, 120, 140, 160, 180, 200];
pub const SF7_SIZES: [usize; 8] = [20, 50, 100, 150, 200, 300, 400, 500];
pub const ENERGY_CHECK_NODES: usize = 120;
/// Guard values swept at fixed sync error, in ms.
pub const GUARD_GRID: [f64; 41] = {
    let mut g = [0.0; 41];
    let mut i = 0;
    while i < 41 {
        g[i] = 2.5 * i as f64;
        i += 1;
    }
    g
};
pub const SIGMA_GRID: [f64; 16] = [
    0.0, 2.0, 4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0, 18.0, 20.0, 22.0, 24.0, 26.0, 28.0, 30.0,
];
pub const CAPACITY_CYCLES_S: [f64; 3] = [4.0, 16.0, 64.0];
pub const CAPACITY_THRESHOLD: f64 = 0.8;

#[derive(Debug, Clone)]
pub struct ReproduceOptions {
    /// `key=value` overrides applied to every scenario before the exhibit's own settings.
    pub overrides: Vec<String>,
    pub workers: usize,
}

impl Default for ReproduceOptions {
    fn default() -> Self {
        ReproduceOptions {
            overrides: Vec::new(),
            workers: super::batch::worker_count(),
        }
    }
}

pub struct ExhibitOutput {
    pub comparisons: Vec<Comparison>,
    /// `(file name, contents)` of the exhibit's data tables.
    pub tables: Vec<(String, String)>,
}

fn base(opts: &ReproduceOptions) -> Result<ScenarioConfig, SimError> {
    let mut c = ScenarioConfig::default();
    c.apply_overrides(&opts.overrides)?;
    Ok(c)
}

fn with(c: &ScenarioConfig, kv: &[(&str, String)]) -> Result<ScenarioConfig, SimError> {
    let mut c = c.clone();
    for (k, v) in kv {
        c.set(k, v)?;
    }
    c.validate()?;
    Ok(c)
}

fn scenario(c: &ScenarioConfig, p: Protocol, sf: u8, nodes: usize) -> Result<ScenarioConfig, SimError> {
    with(
        c,
        &[
            ("protocol", p.as_str().to_string()),
            ("phy.sf", sf.to_string()),
            ("nodes", nodes.to_string()),
        ],
    )
}

fn mean_of(rs: &[SimulationReport], f: impl Fn(&SimulationReport) -> f64) -> f64 {
    rs.iter().map(f).sum::<f64>() / rs.len().max(1) as f64
}

/// Per-packet TDMA energy with no losses: one transmission, the amortised
/// sync listen, and sleep for the rest of the interval.
pub fn tdma_energy_closed_form_mj(c: &ScenarioConfig) -> Result<f64, SimError> {
    let d = c.derived()?;
    let interval_ms = c.interval_s * 1000.0;
    let listens = interval_ms / (c.sync.interval_s * 1000.0);
    let listen_ms = listens * c.energy.listen_ms;
    let e = c.energy.tx_mw * d.toa_ms + c.energy.rx_mw * listen_ms + c.energy.sleep_mw * (interval_ms - d.toa_ms - listen_ms);
    Ok(e / 1000.0)
}

fn table3(b: &ScenarioConfig) -> Result<ExhibitOutput, SimError> {
    let tdma = run_seeds(&scenario(b, Protocol::Tdma, 9, 20)?)?;
    let aloha = run_seeds(&scenario(b, Protocol::PureAloha, 9, 20)?)?;
    let ahead = tdma
        .iter()
        .zip(&aloha)
        .filter(|(t, a)| t.metrics.pdr > a.metrics.pdr)
        .count() as f64
        / tdma.len().max(1) as f64;
    let mut obs = vec![Observation::new("tdma_vs_aloha", 20, "seeds_tdma_ahead_fraction", ahead)];
    for (name, rs) in [("tdma", &tdma), ("aloha", &aloha)] {
        let pdr = mean_pdr(rs);
        obs.push(Observation::new(name, 20, "pdr", pdr));
        obs.push(Observation::new(name, 20, "testbed_pdr", pdr));
        let tput = mean_of(rs, |r| r.metrics.throughput_kbps);
        obs.push(Observation::new(name, 20, "throughput_kbps", tput));
        obs.push(Observation::new(name, 20, "testbed_throughput_kbps", tput));
        obs.push(Observation::new(name, 20, "utilization", mean_of(rs, |r| r.metrics.utilization)));
        obs.push(Observation::new(
            name,
            20,
            "energy_mj_per_success",
            mean_of(rs, |r| r.metrics.energy_per_success_mj),
        ));
    }
    let mut data = summary_csv(&tdma);
    data.push_str(summary_csv(&aloha).split_once('\n').map_or("", |(_, rest)| rest));
    Ok(ExhibitOutput {
        comparisons: compare("table3", obs, &references()),
        tables: vec![("table3_runs.csv".into(), data)],
    })
}

#[derive(Debug, Clone)]
struct DensityPoint {
    sf: u8,
    protocol: Protocol,
    nodes: usize,
    pdr: f64,
    pdr_ci95: f64,
    throughput_kbps: f64,
    utilization: f64,
    energy_mj: f64,
    runs: usize,
}

const DENSITY_HEADER: &str =
    "sf,protocol,n_nodes,mean_pdr,pdr_ci95,mean_throughput_kbps,mean_utilization,mean_energy_mj_per_success,runs";

fn density(b: &ScenarioConfig, sf: u8, sizes: &[usize]) -> Result<Vec<DensityPoint>, SimError> {
    let mut out = Vec::new();
    for p in Protocol::ALL {
        for &n in sizes {
            let rs = run_seeds(&scenario(b, p, sf, n)?)?;
            let pdrs: Vec<f64> = rs.iter().map(|r| r.metrics.pdr).collect();
            out.push(DensityPoint {
                sf,
                protocol: p,
                nodes: n,
                pdr: mean_pdr(&rs),
                pdr_ci95: pdr_ci95(&pdrs),
                throughput_kbps: mean_of(&rs, |r| r.metrics.throughput_kbps),
                utilization: mean_of(&rs, |r| r.metrics.utilization),
                energy_mj: mean_of(&rs, |r| r.metrics.energy_per_success_mj),
                runs: rs.len(),
            });
        }
    }
    Ok(out)
}

fn density_csv(points: &[DensityPoint]) -> String {
    let mut s = String::from(DENSITY_HEADER);
    s.push('\n');
    for p in points {
        let e = if p.energy_mj.is_finite() {
            format!("{:.6}", p.energy_mj)
        } else {
            "inf".into()
        };
        let _ = writeln!(
            s,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
            p.sf, p.protocol, p.nodes, p.pdr, p.pdr_ci95, p.throughput_kbps, p.utilization, e, p.runs
        );
    }
    s
}

fn density_exhibit(
    b: &ScenarioConfig,
    id: &str,
    metric: &str,
    pick: fn(&DensityPoint) -> f64,
) -> Result<ExhibitOutput, SimError> {
    let mut points = density(b, 9, &SF9_SIZES)?;
    points.extend(density(b, 7, &SF7_SIZES)?);
    let mut obs = Vec::new();
    for p in &points {
        obs.push(Observation::new(
            format!("{}_sf{}", p.protocol, p.sf),
            p.nodes,
            metric,
            pick(p),
        ));
    }
    for (sf, sizes) in [(9u8, &SF9_SIZES[..]), (7, &SF7_SIZES[..])] {
        let n = *sizes.last().expect("non-empty size grid");
        let at = |proto| points.iter().find(|p| p.sf == sf && p.protocol == proto && p.nodes == n);
        if let (Some(t), Some(a)) = (at(Protocol::Tdma), at(Protocol::PureAloha)) {
            obs.push(Observation::new(
                "tdma_over_aloha",
                format!("sf{sf}"),
                format!("{metric}_advantage_at_largest_n"),
                pick(t) - pick(a),
            ));
        }
    }
    Ok(ExhibitOutput {
        comparisons: compare(id, obs, &references()),
        tables: vec![(format!("{id}_curves.csv"), density_csv(&points))],
    })
}

fn fig9(b: &ScenarioConfig) -> Result<ExhibitOutput, SimError> {
    let mut out = density_exhibit(b, "fig9", "energy_mj_per_success", |p| p.energy_mj)?;
    let mut obs = Vec::new();
    let mut energy = Vec::new();
    for p in [Protocol::Tdma, Protocol::SlottedAloha, Protocol::PureAloha] {
        let rs = run_seeds(&scenario(b, p, 9, ENERGY_CHECK_NODES)?)?;
        let e = mean_of(&rs, |r| r.metrics.energy_per_success_mj);
        obs.push(Observation::new(p.as_str(), ENERGY_CHECK_NODES, "energy_mj_per_success", e));
        energy.push(e);
    }
    let ordered = energy[0] < energy[1] && energy[1] < energy[2];
    obs.push(Observation::new(
        "ordering",
        ENERGY_CHECK_NODES,
        "tdma_lt_saloha_lt_aloha",
        f64::from(u8::from(ordered)),
    ));
    let closed = tdma_energy_closed_form_mj(&scenario(b, Protocol::Tdma, 9, ENERGY_CHECK_NODES)?)?;
    obs.push(Observation::new("tdma", ENERGY_CHECK_NODES, "closed_form_mj", closed));
    obs.push(Observation::new("tdma", ENERGY_CHECK_NODES, "closed_form_ratio", energy[0] / closed));
    out.comparisons.extend(compare("fig9", obs, &references()));
    Ok(out)
}

/// Guard sweep with the slot stretched to airtime plus guard.
pub fn guard_sweep(b: &ScenarioConfig, sigma_ms: f64) -> Result<Vec<SweepPoint>, SimError> {
    let c = with(
        b,
        &[
            ("protocol", "tdma".into()),
            ("tdma.slot_from_guard", "true".into()),
            ("sync.sigma_ms", sigma_ms.to_string()),
        ],
    )?;
    sensitivity_sweep(&c, &SweepAxis::GuardTime, &GUARD_GRID)
}

fn fig10(b: &ScenarioConfig) -> Result<ExhibitOutput, SimError> {
    let mut obs = Vec::new();
    let mut tables = Vec::new();
    for sigma in [2.0, 20.0] {
        let pts = guard_sweep(b, sigma)?;
        let series = format!("sigma_{sigma}");
        obs.push(Observation::new(
            &series,
            "guard",
            "cliff_midpoint_ms",
            cliff_midpoint(&pts).unwrap_or(f64::NAN),
        ));
        obs.push(Observation::new(
            &series,
            "guard",
            "monotone_within_0.01",
            f64::from(u8::from(is_monotone_rising(&pts, 0.01))),
        ));
        let tail = pts
            .iter()
            .filter(|p| p.value >= 10.0)
            .map(|p| p.mean_pdr)
            .fold(f64::INFINITY, f64::min);
        obs.push(Observation::new(&series, "guard", "min_pdr_guard_ge_10", tail));
        tables.push((format!("fig10_guard_sigma_{sigma}.csv"), sweep_csv(&SweepAxis::GuardTime, &pts)));
    }
    for guard in [10.0, 35.0] {
        let c = with(
            b,
            &[
                ("protocol", "tdma".into()),
                ("tdma.slot_from_guard", "true".into()),
                ("tdma.guard_ms", guard.to_string()),
            ],
        )?;
        let pts = sensitivity_sweep(&c, &SweepAxis::SyncSigma, &SIGMA_GRID)?;
        let worst = pts.iter().map(|p| p.mean_pdr).fold(f64::INFINITY, f64::min);
        obs.push(Observation::new(format!("guard_{guard}"), "sync_sigma", "min_pdr", worst));
        tables.push((format!("fig10_sigma_guard_{guard}.csv"), sweep_csv(&SweepAxis::SyncSigma, &pts)));
    }
    Ok(ExhibitOutput {
        comparisons: compare("fig10", obs, &references()),
        tables,
    })
}

/// Scenario for a capacity point at reporting interval `cycle_s`. Longer
/// cycles run on a 4 s base frame with a superframe deep enough to hold
/// them, and the run is stretched to cover at least 50 cycles.
pub fn capacity_scenario(b: &ScenarioConfig, p: Protocol, cycle_s: f64) -> Result<ScenarioConfig, SimError> {
    let mut kv = vec![
        ("protocol", p.as_str().to_string()),
        ("phy.sf", "9".into()),
        ("interval_s", cycle_s.to_string()),
        ("duration_s", b.duration_s.max(50.0 * cycle_s).to_string()),
    ];
    if cycle_s > 4.0 {
        let k = (cycle_s / 4.0).log2().ceil() as u32;
        kv.push(("superframe.t0_s", "4".into()));
        kv.push(("superframe.k_max", k.to_string()));
    }
    with(b, &kv)
}

fn fig11(b: &ScenarioConfig) -> Result<ExhibitOutput, SimError> {
    let mut obs = Vec::new();
    let mut data = String::from("series,interval_s,capacity,probes\n");
    let mut at4 = Vec::new();
    let series: [(&str, Protocol, bool); 4] = [
        ("aloha", Protocol::PureAloha, false),
        ("s-aloha", Protocol::SlottedAloha, false),
        ("tdma", Protocol::Tdma, false),
        ("tdma_provisioned", Protocol::Tdma, true),
    ];
    for &cycle in &CAPACITY_CYCLES_S {
        for (name, p, provisioned) in series {
            let mut c = capacity_scenario(b, p, cycle)?;
            if provisioned {
                c.set("tdma.join", "provisioned")?;
            }
            let n_max = (100.0 * cycle) as usize;
            let r = capacity_search(&c, CAPACITY_THRESHOLD, n_max)?;
            let probes: Vec<String> = r.probes.iter().map(|(n, pdr)| format!("{n}:{pdr:.4}")).collect();
            let _ = writeln!(data, "{name},{cycle},{},{}", r.capacity, probes.join(" "));
            obs.push(Observation::new(name, cycle, "capacity", r.capacity as f64));
            if cycle == 4.0 {
                at4.push((name, r.capacity));
            }
        }
    }
    let cap = |n: &str| at4.iter().find(|(s, _)| *s == n).map_or(0, |x| x.1);
    let ordered = cap("tdma") > cap("s-aloha") && cap("s-aloha") > cap("aloha");
    obs.push(Observation::new("ordering", 4, "tdma_gt_saloha_gt_aloha", f64::from(u8::from(ordered))));
    Ok(ExhibitOutput {
        comparisons: compare("fig11", obs, &references()),
        tables: vec![("fig11_capacity.csv".into(), data)],
    })
}

pub fn run_exhibit(exhibit: Exhibit, opts: &ReproduceOptions) -> Result<ExhibitOutput, SimError> {
    let b = base(opts)?;
    with_workers(opts.workers, || match exhibit {
        Exhibit::Table3 => table3(&b),
        Exhibit::Fig7 => density_exhibit(&b, "fig7", "pdr", |p| p.pdr),
        Exhibit::Fig8 => density_exhibit(&b, "fig8", "throughput_kbps", |p| p.throughput_kbps),
        Exhibit::Fig9 => fig9(&b),
        Exhibit::Fig10 => fig10(&b),
        Exhibit::Fig11 => fig11(&b),
    })?
}

/// Runs the exhibit and writes `<id>_comparison.csv` plus its data tables.
pub fn reproduce(exhibit: Exhibit, opts: &ReproduceOptions, out_dir: &Path) -> Result<Vec<Comparison>, SimError> {
    let out = run_exhibit(exhibit, opts)?;
    std::fs::create_dir_all(out_dir).map_err(|e| SimError::io(out_dir, e))?;
    for (name, body) in &out.tables {
        write_atomic(&out_dir.join(name), body)?;
    }
    write_atomic(
        &out_dir.join(format!("{}_comparison.csv", exhibit.id())),
        &comparison_csv(&out.comparisons),
    )?;
    Ok(out.comparisons)
}
