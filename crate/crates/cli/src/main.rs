use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tensegrity_gps::pipeline::{evaluate, run_baseline_gps, run_t6gps, with_workers, RunConfig, RunMode};
use tensegrity_gps::policy::PolicyCheckpoint;
use tensegrity_gps::scenario::terrain::generate_terrain;
use tensegrity_gps::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "t6gps", version, about = "Guided policy search for a 6-bar tensegrity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    T6gps,
    Baseline,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run training iterations and write a run directory.
    Train {
        /// Flat `key = value` config file; omitted keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        #[arg(long, default_value = "runs/latest")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads; 0 uses every core.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Noise-free episodes of a saved policy.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        terrain_seed: Option<u64>,
        /// Defaults to `config.toml` next to the checkpoint when present.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Generate a heightfield and report its facet statistics.
    Terrain {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Print statistics only; otherwise the heightfield is written too.
        #[arg(long)]
        stats_only: bool,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Heightfield output path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "checkpoint" => 4,
        "simulation" => 5,
        "training" => 6,
        _ => 7,
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, mode, out, seed, workers } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(m) = mode {
                cfg.mode = match m {
                    ModeArg::T6gps => RunMode::T6gps,
                    ModeArg::Baseline => RunMode::Baseline,
                };
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(w) = workers {
                cfg.workers = w;
            }
            cfg.validate()?;
            let run = with_workers(cfg.workers, || match cfg.mode {
                RunMode::T6gps => run_t6gps(&cfg, Some(&out)),
                RunMode::Baseline => run_baseline_gps(&cfg, Some(&out)),
                RunMode::Evaluate => Err(Error::Config("mode `evaluate` is run with the `evaluate` subcommand".into())),
            })??;
            for r in &run.reports {
                println!(
                    "iteration {:>3}  mean cost {:.4}  forward speed {:+.3} m/s  stuck {:.2}  pairs {}",
                    r.iteration,
                    r.stats.mean_cost,
                    r.stats.mean_forward_speed,
                    r.stats.stuck_fraction,
                    r.optimizer.pairs
                );
            }
            println!("run directory: {}", out.display());
            Ok(())
        }
        Command::Evaluate { checkpoint, episodes, terrain_seed, config, out, workers } => {
            let sibling = checkpoint.parent().map(|d| d.join("config.toml")).filter(|p| p.exists());
            let mut cfg = load_config(config.as_deref().or(sibling.as_deref()))?;
            cfg.mode = RunMode::Evaluate;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let policy = PolicyCheckpoint::load(&checkpoint)?;
            let episodes = episodes.unwrap_or(cfg.eval_episodes);
            let terrain_seed = terrain_seed.unwrap_or(cfg.terrain_seed.wrapping_add(1));
            let out = out.unwrap_or_else(|| {
                checkpoint.parent().unwrap_or(Path::new(".")).join(format!("eval_terrain_{terrain_seed}"))
            });
            let rep = with_workers(cfg.workers, || evaluate(&cfg, &policy, episodes, terrain_seed, Some(&out)))??;
            println!("{}", serde_json::to_string_pretty(&rep.report.stats)?);
            println!("evaluation directory: {}", out.display());
            Ok(())
        }
        Command::Terrain { seed, stats_only, config, out } => {
            let cfg = load_config(config.as_deref())?;
            let gen = generate_terrain(seed, cfg.terrain_targets())?;
            let summary = serde_json::json!({
                "seed": seed,
                "converged": gen.converged,
                "iterations": gen.iterations,
                "stats": gen.stats,
            });
            if stats_only {
                println!("{}", serde_json::to_string_pretty(&summary)?);
                return Ok(());
            }
            match out {
                Some(p) => {
                    gen.terrain.write_text(std::io::BufWriter::new(std::fs::File::create(&p)?))?;
                    eprintln!("{}", serde_json::to_string_pretty(&summary)?);
                }
                None => gen.terrain.write_text(std::io::stdout().lock())?,
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let line = serde_json::json!({ "error": { "category": e.category(), "message": e.to_string() } });
            eprintln!("{line}");
            ExitCode::from(exit_code(&e))
        }
    }
}
