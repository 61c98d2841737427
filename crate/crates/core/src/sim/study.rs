//! Multi-run studies built on the engine: capacity search and
//! one-dimensional sensitivity sweeps.

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::sim::metrics::pdr_ci95;
use crate::sim::{run_simulation, SimulationReport};

/// Runs every seed of `cfg`, in parallel on the current rayon pool.
/// Reports come back in seed order.
pub fn run_seeds(cfg: &ScenarioConfig) -> Result<Vec<SimulationReport>, SimError> {
    cfg.seeds.par_iter().map(|&s| run_simulation(cfg, s)).collect()
}

pub fn mean_pdr(reports: &[SimulationReport]) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().map(|r| r.metrics.pdr).sum::<f64>() / reports.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct CapacityResult {
    pub capacity: usize,
    /// Every `(nodes, mean_pdr)` pair evaluated, in evaluation order.
    pub probes: Vec<(usize, f64)>,
}

/// Largest node count whose seed-averaged PDR stays at or above
/// `threshold`, by bisection on `[1, n_max]`. PDR is assumed
/// non-increasing in the node count.
pub fn capacity_search(base: &ScenarioConfig, threshold: f64, n_max: usize) -> Result<CapacityResult, SimError> {
    let mut probes = Vec::new();
    if threshold <= 0.0 {
        return Ok(CapacityResult { capacity: n_max, probes });
    }
    let mut probe = |n: usize| -> Result<bool, SimError> {
        let mut cfg = base.clone();
        cfg.nodes = n;
        let pdr = mean_pdr(&run_seeds(&cfg)?);
        probes.push((n, pdr));
        Ok(pdr >= threshold)
    };
    if n_max == 0 || !probe(1)? {
        return Ok(CapacityResult { capacity: 0, probes });
    }
    if probe(n_max)? {
        return Ok(CapacityResult { capacity: n_max, probes });
    }
    let (mut lo, mut hi) = (1, n_max);
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if probe(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(CapacityResult { capacity: lo, probes })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SweepAxis {
    SyncSigma,
    GuardTime,
    /// Any other configuration key.
    Key(String),
}

impl SweepAxis {
    pub fn parse(s: &str) -> SweepAxis {
        match s {
            "sync_sigma" | "sync.sigma_ms" => SweepAxis::SyncSigma,
            "guard_time" | "tdma.guard_ms" => SweepAxis::GuardTime,
            other => SweepAxis::Key(other.to_string()),
        }
    }

    pub fn key(&self) -> &str {
        match self {
            SweepAxis::SyncSigma => "sync.sigma_ms",
            SweepAxis::GuardTime => "tdma.guard_ms",
            SweepAxis::Key(k) => k,
        }
    }

    pub fn name(&self) -> &str {
        match self {
            SweepAxis::SyncSigma => "sync_sigma",
            SweepAxis::GuardTime => "guard_time",
            SweepAxis::Key(k) => k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub mean_pdr: f64,
    /// Half-width of the 95 % interval across seeds.
    pub pdr_ci95: f64,
    pub mean_collisions: f64,
    pub runs: usize,
}

pub const SWEEP_HEADER: &str = "axis,value,mean_pdr,pdr_ci95,mean_collisions,runs";

impl SweepPoint {
    pub fn csv_row(&self, axis: &SweepAxis) -> String {
        format!(
            "{},{},{:.6},{:.6},{:.3},{}",
            axis.name(),
            self.value,
            self.mean_pdr,
            self.pdr_ci95,
            self.mean_collisions,
            self.runs
        )
    }
}

/// One seed batch per grid value; the seed list is the same at every point.
pub fn sensitivity_sweep(base: &ScenarioConfig, axis: &SweepAxis, grid: &[f64]) -> Result<Vec<SweepPoint>, SimError> {
    if grid.is_empty() {
        return Err(SimError::Invalid("sweep grid is empty".into()));
    }
    grid.iter()
        .map(|&v| {
            let mut cfg = base.clone();
            cfg.set(axis.key(), &v.to_string())?;
            cfg.validate()?;
            let reports = run_seeds(&cfg)?;
            let pdrs: Vec<f64> = reports.iter().map(|r| r.metrics.pdr).collect();
            Ok(SweepPoint {
                value: v,
                mean_pdr: mean_pdr(&reports),
                pdr_ci95: pdr_ci95(&pdrs),
                mean_collisions: reports.iter().map(|r| r.counters.lost_collision as f64).sum::<f64>()
                    / reports.len() as f64,
                runs: reports.len(),
            })
        })
        .collect()
}

pub fn sweep_csv(axis: &SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for p in points {
        out.push_str(&p.csv_row(axis));
        out.push('\n');
    }
    out
}

/// Axis value where the curve first climbs through the level halfway
/// between its lowest and highest PDR, linearly interpolated. `None` for a
/// flat curve.
pub fn cliff_midpoint(points: &[SweepPoint]) -> Option<f64> {
    let lo = points.iter().map(|p| p.mean_pdr).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p.mean_pdr).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return None;
    }
    let level = (lo + hi) / 2.0;
    points.windows(2).find_map(|w| {
        let (a, b) = (&w[0], &w[1]);
        (a.mean_pdr < level && b.mean_pdr >= level)
            .then(|| a.value + (level - a.mean_pdr) / (b.mean_pdr - a.mean_pdr) * (b.value - a.value))
    })
}

/// True when PDR never falls by more than `tol` between consecutive points.
pub fn is_monotone_rising(points: &[SweepPoint], tol: f64) -> bool {
    points.windows(2).all(|w| w[1].mean_pdr >= w[0].mean_pdr - tol)
}
