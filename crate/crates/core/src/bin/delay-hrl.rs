use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use causal_delay_hrl::bench::{Experiment, Variant};
use causal_delay_hrl::orchestrator::RunConfig;

/// Run variants over seeds and write per-run logs plus a summary.
#[derive(Parser, Debug)]
#[command(name = "delay-hrl", version)]
struct Args {
    /// Built-in task name.
    #[arg(long)]
    task: Option<String>,
    /// TOML task description, overrides --task.
    #[arg(long)]
    task_file: Option<PathBuf>,
    #[arg(long)]
    tau_max: Option<usize>,
    #[arg(long)]
    sigma_delay: Option<f64>,
    /// Lag stride, only with `--variant simplified`.
    #[arg(long)]
    kappa: Option<usize>,
    /// Repeatable; defaults to dechrl.
    #[arg(long = "variant")]
    variants: Vec<Variant>,
    /// Number of seeds (0..n) unless --seed-list is given.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    #[arg(long, value_delimiter = ',')]
    seed_list: Option<Vec<u64>>,
    /// Total episode budget per run.
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long, default_value = "runs")]
    out: PathBuf,
    /// Base run configuration (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Args::parse();
    let mut base = match &args.config {
        Some(p) => match RunConfig::load(p) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Some(t) = args.task {
        base.world.task = t;
    }
    if args.task_file.is_some() {
        base.world.task_file = args.task_file;
    }
    if let Some(t) = args.tau_max {
        base.world.tau_max = t;
    }
    if let Some(s) = args.sigma_delay {
        base.world.sigma_delay = s;
    }
    if let Some(e) = args.episodes {
        base.episode_budget = e;
    }
    let variants = if args.variants.is_empty() {
        vec![base.variant]
    } else {
        args.variants
    };
    if args.kappa.is_some() && !variants.contains(&Variant::Simplified) {
        eprintln!("error: --kappa requires --variant simplified");
        return ExitCode::from(2);
    }
    base.kappa = args.kappa.or(base.kappa);
    for &v in &variants {
        let mut c = base.clone();
        c.variant = v;
        if v != Variant::Simplified {
            c.kappa = None;
        }
        if let Err(e) = c.validate() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let exp = Experiment {
        base,
        variants,
        seeds: args.seed_list.unwrap_or_else(|| (0..args.seeds).collect()),
        out: Some(args.out.clone()),
    };
    match exp.run() {
        Ok(results) => {
            for r in &results {
                println!(
                    "{:<24} seed {:<3} {:?} asr {:.3} adc {:.3}",
                    r.variant, r.seed, r.status, r.asr, r.adc
                );
            }
            println!("summary written to {}", args.out.join("summary.csv").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
