use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use flatsample::param::Scheme;
use flatsample::sim::{
    compare_schemes, compute_metrics, export_comparison, export_csv, export_sweep, run_closed_loop, sweep,
    SimConfig,
};
use flatsample::validate::run_validation;

#[derive(Parser)]
#[command(name = "flatsample", version, about = "Sampled-data flatness-based tracking for the planar VTOL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-loop run with one scheme; writes a CSV and a JSON sidecar.
    Simulate(Common),
    /// Runs both schemes on the same maneuver and writes a comparison report.
    Compare(Common),
    /// Runs the identity checks of the library.
    Validate(Common),
    /// Metrics for both schemes over the `sweep_ts` list.
    Sweep(Common),
}

#[derive(Args)]
struct Common {
    /// TOML config file; defaults apply for missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sampling time override (s).
    #[arg(long)]
    ts: Option<f64>,
    /// Discretization scheme override.
    #[arg(long)]
    scheme: Option<Scheme>,
    /// Output path (CSV for simulate, base name otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> flatsample::Result<SimConfig> {
        let mut cfg = match &self.config {
            Some(p) => SimConfig::load(p)?,
            None => SimConfig::default(),
        };
        if let Some(ts) = self.ts {
            cfg.ts = ts;
        }
        if let Some(s) = self.scheme {
            cfg.scheme = s;
        }
        if let Some(o) = &self.out {
            cfg.output = Some(o.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_path(cfg: &SimConfig, fallback: &str) -> PathBuf {
    cfg.output.clone().unwrap_or_else(|| PathBuf::from(fallback))
}

fn run(cli: Cli) -> flatsample::Result<bool> {
    match cli.command {
        Command::Simulate(c) => {
            let cfg = c.config()?;
            let record = run_closed_loop(&cfg)?;
            let path = out_path(&cfg, "simulation.csv");
            export_csv(&record, &path)?;
            print!("{}", flatsample::sim::metrics_table(&[compute_metrics(&record)]));
            println!("wrote {}", path.display());
            Ok(true)
        }
        Command::Compare(c) => {
            let cfg = c.config()?;
            let cmp = compare_schemes(&cfg)?;
            let base = out_path(&cfg, "compare");
            print!("{}", export_comparison(&cmp, &base)?);
            Ok(true)
        }
        Command::Validate(c) => {
            let cfg = c.config()?;
            let results = run_validation(&cfg);
            for r in &results {
                println!("{r}");
            }
            Ok(results.iter().all(|r| r.passed))
        }
        Command::Sweep(c) => {
            let cfg = c.config()?;
            let rows = sweep(&cfg)?;
            let base = out_path(&cfg, "sweep");
            print!("{}", export_sweep(&rows, &base)?);
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
