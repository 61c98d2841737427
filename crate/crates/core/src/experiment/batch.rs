//! Multi-seed scenario execution and on-disk output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::ScenarioConfig;
use crate::error::SimError;
use crate::sim::metrics::pdr_ci95;
use crate::sim::{run_simulation, SimulationReport, REPORT_HEADER};

/// Environment variable holding the default worker count.
pub const WORKERS_ENV: &str = "TDMA_LORAWAN_WORKERS";

pub const NODE_HEADER: &str = "node,distance_m,sent,delivered,lost_collision,lost_below_sensitivity,\
dropped_stale,dropped_backoff,transmitted,energy_mj,channel,first_slot";

/// Worker count from the environment, else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T, SimError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| SimError::Internal(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Writes through a sibling temporary file so readers never see a torn file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), SimError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| SimError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SimError::io(path, e))
}

fn fmt_opt(v: Option<usize>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn node_csv(r: &SimulationReport) -> String {
    let mut s = String::from(NODE_HEADER);
    s.push('\n');
    for n in &r.per_node {
        let c = &n.counters;
        let _ = writeln!(
            s,
            "{},{:.3},{},{},{},{},{},{},{},{:.6},{},{}",
            n.node_id,
            n.distance_m,
            c.sent,
            c.delivered,
            c.lost_collision,
            c.lost_below_sensitivity,
            c.dropped_stale,
            c.dropped_backoff,
            c.transmitted,
            n.energy.total_mj(),
            fmt_opt(n.channel),
            fmt_opt(n.first_slot)
        );
    }
    s
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Seed-averaged summary line. The confidence column is taken across
/// seeds rather than across temporal segments.
pub fn aggregate_row(reports: &[SimulationReport]) -> Option<String> {
    let first = reports.first()?;
    let m = |f: &dyn Fn(&SimulationReport) -> f64| mean(reports.iter().map(f));
    let pdrs: Vec<f64> = reports.iter().map(|r| r.metrics.pdr).collect();
    let energy = m(&|r| r.metrics.energy_per_success_mj);
    let status = if reports.iter().all(|r| r.status.as_str() == "ok") {
        "ok"
    } else {
        "infeasible"
    };
    Some(format!(
        "{},{},{},{},mean,{:.3},{:.3},{:.6},{:.6},{:.6},{:.6},{},{:.3},{:.3},{:.3},{:.3},{}",
        first.protocol,
        first.nodes,
        first.sf,
        first.interval_s,
        m(&|r| r.counters.sent as f64),
        m(&|r| r.counters.delivered as f64),
        mean(pdrs.iter().copied()),
        pdr_ci95(&pdrs),
        m(&|r| r.metrics.throughput_kbps),
        m(&|r| r.metrics.utilization),
        if energy.is_finite() { format!("{energy:.6}") } else { "inf".into() },
        m(&|r| r.energy.n_sync as f64),
        m(&|r| r.counters.lost_collision as f64),
        m(&|r| r.counters.lost_below_sensitivity as f64),
        m(&|r| r.counters.dropped() as f64),
        status
    ))
}

pub fn summary_csv(reports: &[SimulationReport]) -> String {
    let mut s = String::from(REPORT_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    if let Some(agg) = aggregate_row(reports) {
        s.push_str(&agg);
        s.push('\n');
    }
    s
}

#[derive(Debug)]
pub struct ScenarioOutcome {
    pub reports: Vec<SimulationReport>,
    pub failures: Vec<(u64, SimError)>,
    pub files: Vec<PathBuf>,
}

impl ScenarioOutcome {
    pub fn infeasible_notes(&self) -> Vec<String> {
        self.reports
            .iter()
            .filter_map(|r| match &r.status {
                crate::sim::RunStatus::Infeasible(why) => Some(format!("seed {}: {why}", r.seed)),
                crate::sim::RunStatus::Ok => None,
            })
            .collect()
    }
}

fn write_run(dir: &Path, r: &SimulationReport, files: &mut Vec<PathBuf>) -> Result<(), SimError> {
    let mut put = |name: String, body: &str| -> Result<(), SimError> {
        let p = dir.join(name);
        write_atomic(&p, body)?;
        files.push(p);
        Ok(())
    };
    put(format!("seed_{}.csv", r.seed), &format!("{REPORT_HEADER}\n{}\n", r.csv_row()))?;
    put(format!("nodes_seed_{}.csv", r.seed), &node_csv(r))?;
    if let Some(t) = &r.trace_csv {
        put(format!("trace_seed_{}.csv", r.seed), t)?;
    }
    if let Some(t) = &r.fsm_csv {
        put(format!("fsm_seed_{}.csv", r.seed), t)?;
    }
    if let Some(t) = &r.audit_csv {
        put(format!("audit_seed_{}.csv", r.seed), t)?;
    }
    Ok(())
}

/// Runs every seed of `cfg` and writes `summary.csv`, one CSV per seed and
/// the effective configuration into `out_dir`. Failed seeds are collected
/// in the outcome; whatever succeeded is still written.
pub fn run_scenario(cfg: &ScenarioConfig, out_dir: &Path, workers: usize) -> Result<ScenarioOutcome, SimError> {
    cfg.validate()?;
    cfg.derived()?;
    fs::create_dir_all(out_dir).map_err(|e| SimError::io(out_dir, e))?;
    let mut files = Vec::new();
    let echo = out_dir.join("effective_config.txt");
    write_atomic(&echo, &cfg.to_config_string())?;
    files.push(echo);

    let results: Vec<(u64, Result<SimulationReport, SimError>)> = with_workers(workers, || {
        cfg.seeds.par_iter().map(|&s| (s, run_simulation(cfg, s))).collect()
    })?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in results {
        match r {
            Ok(r) => {
                write_run(out_dir, &r, &mut files)?;
                reports.push(r);
            }
            Err(e) => failures.push((seed, e)),
        }
    }
    let summary = out_dir.join("summary.csv");
    write_atomic(&summary, &summary_csv(&reports))?;
    files.push(summary);
    Ok(ScenarioOutcome { reports, failures, files })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(extra: &[&str]) -> ScenarioConfig {
        let mut c = ScenarioConfig::default();
        let mut o = vec!["duration_s=200", "seeds=1,2,3"];
        o.extend_from_slice(extra);
        c.apply_overrides(&o).unwrap();
        c
    }

    #[test]
    fn writes_one_row_per_seed_plus_mean() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_scenario(&cfg(&[]), dir.path(), 2).unwrap();
        assert!(out.failures.is_empty());
        let s = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines.len(), 1 + 3 + 1);
        assert!(lines[4].contains(",mean,"));
        for seed in 1..=3 {
            assert!(dir.path().join(format!("seed_{seed}.csv")).exists());
            assert!(dir.path().join(format!("nodes_seed_{seed}.csv")).exists());
        }
    }

    #[test]
    fn echo_reloads_to_the_same_config() {
        let dir = tempfile::tempdir().unwrap();
        let c = cfg(&["protocol=csma", "nodes=7"]);
        run_scenario(&c, dir.path(), 1).unwrap();
        let back = ScenarioConfig::load(dir.path().join("effective_config.txt")).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn worker_count_never_zero() {
        assert!(worker_count() >= 1);
    }

    #[test]
    fn aggregate_of_nothing_is_none() {
        assert!(aggregate_row(&[]).is_none());
    }

    #[test]
    fn summary_is_independent_of_worker_count() {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        run_scenario(&cfg(&["protocol=aloha"]), a.path(), 1).unwrap();
        run_scenario(&cfg(&["protocol=aloha"]), b.path(), 3).unwrap();
        assert_eq!(
            fs::read(a.path().join("summary.csv")).unwrap(),
            fs::read(b.path().join("summary.csv")).unwrap()
        );
    }
}
