use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use log::info;

use cogrelay::cli::{parse_systems, parse_values, run_sweep, thread_pool, SweepParam, SweepSpec};
use cogrelay::scenario::ScenarioConfig;

/// Monte Carlo sweeps of the relay-assisted cognitive OFDMA downlink.
#[derive(Debug, Parser)]
#[command(name = "cogrelay", version)]
struct Args {
    /// TOML scenario file; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Swept parameter: q_act, snr, k or sigma_e2.
    #[arg(long, default_value = "q_act")]
    param: String,

    /// Comma-separated parameter values.
    #[arg(long, default_value = "0.1,0.2,0.3,0.4,0.5")]
    values: String,

    /// Comma-separated systems: proposed, no_rs, no_rs_low, naive.
    #[arg(long, default_value = "proposed,no_rs")]
    systems: String,

    /// Replications per (value, system).
    #[arg(long, default_value_t = 200)]
    trials: usize,

    /// Frames per replication; overrides the scenario file.
    #[arg(long)]
    frames: Option<usize>,

    /// Worker threads (0 = one per core).
    #[arg(long, env = "COGRELAY_WORKERS", default_value_t = 0)]
    workers: usize,

    /// Output directory.
    #[arg(long, env = "COGRELAY_OUT", default_value = "results")]
    out: PathBuf,

    /// Master seed; overrides the scenario file.
    #[arg(long)]
    seed: Option<u64>,

    /// Also write the per-frame trace table.
    #[arg(long)]
    trace: bool,
}

fn run(args: Args) -> cogrelay::Result<()> {
    let mut cfg = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    if let Some(f) = args.frames {
        cfg.frames_per_trial = f;
    }
    cfg.validate()?;
    let spec = SweepSpec {
        param: SweepParam::parse(&args.param)?,
        values: parse_values(&args.values)?,
        trials: args.trials,
        systems: parse_systems(&args.systems)?,
        out_dir: args.out.clone(),
        master_seed: args.seed.unwrap_or(cfg.seed),
        trace: args.trace,
    };
    spec.validate()?;
    let pool = thread_pool(args.workers)?;
    let (result, files) = pool.install(|| run_sweep(&cfg, &spec))?;
    info!("{} points, config {}", result.points.len(), result.config_hash);
    for p in &result.points {
        println!(
            "{}={} {:>10}: sum_log_goodput {:.3}  edge_access {:.4}  mean_goodput {:.4}",
            spec.param.name(),
            p.value,
            p.system.name(),
            p.aggregate.get("sum_log_goodput").unwrap_or(f64::NAN),
            p.aggregate.get("edge_access").unwrap_or(f64::NAN),
            p.aggregate.get("mean_goodput").unwrap_or(f64::NAN),
        );
    }
    println!("wrote {} files to {}", files.len(), spec.out_dir.display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
