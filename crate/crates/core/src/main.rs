use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use qgrid::harness::export::{gnuplot_script, metrics_csv, trajectory_csv};
use qgrid::harness::{load_scenario, run, sweep, ControllerKind, RunOutput, Scenario};

const EXIT_IO: u8 = 1;
const EXIT_PARSE: u8 = 2;
const EXIT_FAULT: u8 = 3;

#[derive(Parser)]
#[command(name = "qgrid", version, about = "DC microgrid controller benchmark")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one scenario and write its trajectory and metrics.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        controller: Option<ControllerKind>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run K consecutive seeds starting at the scenario seed, in parallel.
        #[arg(long, value_name = "K")]
        sweep_seeds: Option<u64>,
        /// Also write a gnuplot script next to each CSV.
        #[arg(long)]
        gnuplot: bool,
    },
    /// Run the same scenario under several controllers and print a metrics table.
    Compare {
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        controllers: Vec<ControllerKind>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::Run {
            scenario,
            seed,
            episodes,
            controller,
            out,
            sweep_seeds,
            gnuplot,
        } => {
            let sc = match prepare(&scenario, seed, episodes, controller) {
                Ok(sc) => sc,
                Err(code) => return code,
            };
            let out = out_dir(&sc, out);
            match sweep_seeds {
                Some(k) => cmd_sweep(&sc, k, &out, gnuplot),
                None => cmd_run(&sc, &out, gnuplot),
            }
        }
        Cmd::Compare {
            scenario,
            controllers,
            seed,
            episodes,
            out,
        } => {
            let sc = match prepare(&scenario, seed, episodes, None) {
                Ok(sc) => sc,
                Err(code) => return code,
            };
            cmd_compare(&sc, &controllers, out.as_deref())
        }
    }
}

fn prepare(
    path: &Path,
    seed: Option<u64>,
    episodes: Option<usize>,
    controller: Option<ControllerKind>,
) -> Result<Scenario, ExitCode> {
    let mut sc = load_scenario(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(EXIT_PARSE)
    })?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    if let Some(n) = episodes {
        if n == 0 {
            eprintln!("error: --episodes must be >= 1");
            return Err(ExitCode::from(EXIT_PARSE));
        }
        sc.episodes = n;
    }
    if let Some(c) = controller {
        sc.controller = c;
    }
    Ok(sc)
}

fn out_dir(sc: &Scenario, cli: Option<PathBuf>) -> PathBuf {
    cli.or_else(|| sc.output.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(&sc.name))
}

fn write_outputs(dir: &Path, sc: &Scenario, out: &RunOutput, gnuplot: bool) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("trajectory.csv"), trajectory_csv(&out.trajectory))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(&out.metrics))?;
    if let Some(agent) = &out.agent {
        agent.tables.dump_csv(&dir.join("tables.csv"))?;
        std::fs::write(dir.join("dbn.csv"), agent.dbn.to_csv())?;
    }
    if gnuplot {
        std::fs::write(dir.join("plot.gp"), gnuplot_script("trajectory.csv", &sc.name))?;
    }
    Ok(())
}

/// Print to stdout, ignoring a closed pipe.
fn say(line: &str) {
    let _ = writeln!(std::io::stdout(), "{line}");
}

fn summary_line(label: &str, out: &RunOutput) -> String {
    let fmt = |v: Option<f64>| v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.4}"));
    let max_os = out
        .metrics
        .segments
        .iter()
        .map(|s| s.overshoot_pct)
        .fold(0.0_f64, f64::max);
    let max_settle = out
        .metrics
        .segments
        .iter()
        .map(|s| s.settling_time)
        .try_fold(0.0_f64, |acc, t| t.map(|t| acc.max(t)));
    format!(
        "{label:<12} rmse_V={:<10} max_overshoot_pct={:<9.4} max_settling_s={:<10} reward_sum={:<14} fault={}",
        fmt(out.metrics.rmse),
        max_os,
        max_settle.map_or_else(|| "not_settled".to_string(), |t| format!("{t:.4}")),
        fmt(out.metrics.reward_sum),
        out.fault.as_ref().map_or_else(|| "none".to_string(), |f| f.to_string()),
    )
}

fn cmd_run(sc: &Scenario, dir: &Path, gnuplot: bool) -> ExitCode {
    let out = run(sc);
    if let Err(e) = write_outputs(dir, sc, &out, gnuplot) {
        eprintln!("error: writing {}: {e}", dir.display());
        return ExitCode::from(EXIT_IO);
    }
    say(&summary_line(sc.controller.name(), &out));
    say(&format!("wrote {}", dir.display()));
    if out.fault.is_some() {
        ExitCode::from(EXIT_FAULT)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_sweep(sc: &Scenario, k: u64, dir: &Path, gnuplot: bool) -> ExitCode {
    let seeds: Vec<u64> = (0..k).map(|i| sc.seed.wrapping_add(i)).collect();
    let results = sweep(sc, &seeds);
    let mut summary = String::from("seed,rmse,reward_sum,fault\n");
    let mut faulted = false;
    for (seed, out) in &results {
        let sub = dir.join(format!("seed_{seed}"));
        let sc_seed = Scenario {
            seed: *seed,
            ..sc.clone()
        };
        if let Err(e) = write_outputs(&sub, &sc_seed, out, gnuplot) {
            eprintln!("error: writing {}: {e}", sub.display());
            return ExitCode::from(EXIT_IO);
        }
        faulted |= out.fault.is_some();
        summary.push_str(&format!(
            "{seed},{},{},{}\n",
            out.metrics.rmse.map_or_else(|| "nan".into(), |v| format!("{v:.6}")),
            out.metrics.reward_sum.map_or_else(|| "nan".into(), |v| format!("{v:.6}")),
            out.fault.is_some()
        ));
        say(&summary_line(&format!("seed {seed}"), out));
    }
    if let Err(e) = std::fs::write(dir.join("sweep.csv"), summary) {
        eprintln!("error: writing sweep summary: {e}");
        return ExitCode::from(EXIT_IO);
    }
    if faulted {
        ExitCode::from(EXIT_FAULT)
    } else {
        ExitCode::SUCCESS
    }
}

fn cmd_compare(sc: &Scenario, controllers: &[ControllerKind], dir: Option<&Path>) -> ExitCode {
    let mut faulted = false;
    for &c in controllers {
        let sc_c = Scenario {
            controller: c,
            ..sc.clone()
        };
        let out = run(&sc_c);
        if let Some(dir) = dir {
            if let Err(e) = write_outputs(&dir.join(c.name()), &sc_c, &out, false) {
                eprintln!("error: writing {}: {e}", dir.display());
                return ExitCode::from(EXIT_IO);
            }
        }
        faulted |= out.fault.is_some();
        say(&summary_line(c.name(), &out));
    }
    if faulted {
        ExitCode::from(EXIT_FAULT)
    } else {
        ExitCode::SUCCESS
    }
}
