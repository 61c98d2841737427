use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tdma_lorawan::config::ScenarioConfig;
use tdma_lorawan::error::SimError;
use tdma_lorawan::experiment::batch::{with_workers, write_atomic};
use tdma_lorawan::experiment::reference::Verdict;
use tdma_lorawan::experiment::{reproduce, run_scenario, worker_count, Exhibit, ReproduceOptions};
use tdma_lorawan::sim::study::{capacity_search, cliff_midpoint, sensitivity_sweep, sweep_csv, SweepAxis};

#[derive(Parser)]
#[command(name = "tdma-lorawan", version, about = "TDMA-over-LoRaWAN MAC simulator")]
struct Cli {
    /// Parallel runs (default: $TDMA_LORAWAN_WORKERS or all cores)
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run every seed of a scenario and write CSV output
    Run {
        /// Scenario file, or `-` for built-in defaults
        config: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Override a configuration key, e.g. `--set nodes=50`
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Re-run a canned exhibit and compare against reference values
    Reproduce {
        /// table3, fig7, fig8, fig9, fig10 or fig11
        exhibit: String,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Sweep one configuration key over a grid of values
    Sweep {
        config: PathBuf,
        /// sync_sigma, guard_time or any configuration key
        #[arg(long)]
        axis: String,
        /// Comma list `a,b,c` or range `start:step:end`
        #[arg(long)]
        grid: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Largest node count meeting a delivery-ratio threshold
    Capacity {
        config: PathBuf,
        #[arg(long, default_value_t = 0.8)]
        threshold: f64,
        #[arg(long, default_value_t = 400)]
        n_max: usize,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
}

fn load(path: &Path, set: &[String]) -> Result<ScenarioConfig, SimError> {
    let mut c = if path.as_os_str() == "-" {
        ScenarioConfig::default()
    } else {
        ScenarioConfig::load(path)?
    };
    c.apply_overrides(set)?;
    c.derived()?;
    Ok(c)
}

fn parse_grid(s: &str) -> Result<Vec<f64>, SimError> {
    let bad = || SimError::Invalid(format!("cannot parse grid `{s}`"));
    let num = |x: &str| x.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = s.split(':').collect();
    let grid: Vec<f64> = match parts.as_slice() {
        [start, step, end] => {
            let (a, h, b) = (num(start)?, num(step)?, num(end)?);
            if !(h > 0.0) || b < a {
                return Err(bad());
            }
            let n = ((b - a) / h + 1e-9).floor() as usize;
            (0..=n).map(|i| a + h * i as f64).collect()
        }
        [_] => s.split(',').filter(|x| !x.trim().is_empty()).map(num).collect::<Result<_, _>>()?,
        _ => return Err(bad()),
    };
    if grid.is_empty() {
        return Err(bad());
    }
    Ok(grid)
}

fn execute(cli: Cli) -> Result<ExitCode, SimError> {
    let workers = cli.workers.unwrap_or_else(worker_count);
    match cli.cmd {
        Cmd::Run { config, out, set } => {
            let cfg = load(&config, &set)?;
            let outcome = run_scenario(&cfg, &out, workers)?;
            for note in outcome.infeasible_notes() {
                eprintln!("note: {note}");
            }
            for (seed, e) in &outcome.failures {
                eprintln!("seed {seed} failed: {e}");
            }
            println!(
                "{} run(s) written to {}",
                outcome.reports.len(),
                out.display()
            );
            Ok(if outcome.failures.is_empty() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Cmd::Reproduce { exhibit, out, set } => {
            let exhibit: Exhibit = exhibit.parse()?;
            // validate overrides before starting long runs
            ScenarioConfig::default().apply_overrides(&set)?;
            let rows = reproduce(exhibit, &ReproduceOptions { overrides: set, workers }, &out)?;
            for r in &rows {
                if r.verdict() != Verdict::Info {
                    println!(
                        "{} {}/{}/{}: observed {:.4} in [{}, {}]",
                        r.verdict().as_str().to_uppercase(),
                        r.series,
                        r.x,
                        r.metric,
                        r.observed,
                        r.lower.map_or("-".into(), |v| v.to_string()),
                        r.upper.map_or("-".into(), |v| v.to_string()),
                    );
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Sweep { config, axis, grid, out, set } => {
            let cfg = load(&config, &set)?;
            let axis = SweepAxis::parse(&axis);
            let grid = parse_grid(&grid)?;
            let pts = with_workers(workers, || sensitivity_sweep(&cfg, &axis, &grid))??;
            let csv = sweep_csv(&axis, &pts);
            match out {
                Some(dir) => {
                    std::fs::create_dir_all(&dir).map_err(|e| SimError::io(&dir, e))?;
                    write_atomic(&dir.join(format!("sweep_{}.csv", axis.name())), &csv)?;
                    write_atomic(&dir.join("effective_config.txt"), &cfg.to_config_string())?;
                }
                None => print!("{csv}"),
            }
            if let Some(m) = cliff_midpoint(&pts) {
                eprintln!("cliff midpoint: {m:.3}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Capacity { config, threshold, n_max, set } => {
            let cfg = load(&config, &set)?;
            if !(0.0..1.0).contains(&threshold) {
                return Err(SimError::Invalid(format!("threshold {threshold} outside [0, 1)")));
            }
            let r = with_workers(workers, || capacity_search(&cfg, threshold, n_max))??;
            for (n, pdr) in &r.probes {
                eprintln!("n={n} pdr={pdr:.4}");
            }
            println!("{}", r.capacity);
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_forms() {
        assert_eq!(parse_grid("1,2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        assert_eq!(parse_grid("0:5:20").unwrap(), vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert!(parse_grid("0:0:20").is_err());
        assert!(parse_grid("a,b").is_err());
        assert!(parse_grid("").is_err());
    }
}
