use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use platoon_mpc::experiment::{self, ExperimentError, Figure, SweepSpec};
use platoon_mpc::io;

#[derive(Parser)]
#[command(name = "platoon", version, about = "MPC vehicle-string simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario; writes trace.csv and report.csv.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "PLATOON_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Overrides the scenario's channel seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a mode x length x PER x seed grid; writes cells/ and aggregate.csv.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, env = "PLATOON_OUT_DIR", default_value = "out")]
        out: PathBuf,
        /// Replaces the sweep's seed list with this single seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Turn a sweep aggregate (or traces, for fig4) into long-format series.
    Plotdata {
        /// fig4, fig5, fig6 or fig7.
        #[arg(long)]
        figure: Figure,
        /// aggregate.csv, or one or more trace.csv files for fig4.
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        /// Output file; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.4}"))
}

fn execute(command: Command) -> Result<(), ExperimentError> {
    match command {
        Command::Run { config, out, seed } => {
            let mut cfg = experiment::load_config(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let row = experiment::run_scenario(&cfg, &out)?;
            println!(
                "{} n={} per={} seed={}: mean speed diff {} m/s, p95 error {}, max amplification {}, settle {} / {} s, min gap {} m",
                row.mode,
                row.n_vehicles,
                row.per,
                row.seed,
                fmt(row.mean_speed_diff),
                fmt(row.p95_error),
                fmt(row.max_amplification),
                fmt(row.settle_1),
                fmt(row.settle_2),
                fmt(row.min_gap),
            );
            println!("wrote {}", out.display());
        }
        Command::Sweep { config, out, seed, workers } => {
            let mut spec = SweepSpec::load(&config)?;
            if let Some(s) = seed {
                spec = spec.with_seed(s);
            }
            let rows = experiment::run_sweep(&spec, &out, workers)?;
            let failed = rows.iter().filter(|r| !r.is_ok()).count();
            println!("{} cells, {} failed; wrote {}", rows.len(), failed, experiment::aggregate_path(&out).display());
        }
        Command::Plotdata { figure, inputs, out } => {
            let data = if figure == Figure::Fig4 {
                experiment::fig4_from_traces(&inputs)?
            } else {
                let mut rows = Vec::new();
                for path in &inputs {
                    rows.extend(io::read_reports_file(path)?);
                }
                experiment::emit_plot_data(&rows, figure)?
            };
            for (series, x) in &data.missing {
                eprintln!("missing cell: {series} at x={x}");
            }
            let mut buf = Vec::new();
            experiment::write_plot_data(&data, &mut buf)?;
            match out {
                Some(path) => io::write_atomic(&path, &buf)?,
                None => print!("{}", String::from_utf8_lossy(&buf)),
            }
        }
    }
    Ok(())
}
