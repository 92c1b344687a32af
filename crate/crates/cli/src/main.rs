use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use mctr_core::agent::{replay_run_dir, run_in_dir, RunOptions};
use mctr_core::config::{Ablation, RunConfig};
use mctr_core::protocol::check_corpus;
use mctr_core::sweep::sweep;

#[derive(Parser)]
#[command(
    name = "mctr",
    version,
    about = "Metacognitive test-time reasoning agent on toy games"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one agent and write its artifacts to a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// full, no_mr, no_rl or no_mr_no_rl (overrides the config).
        #[arg(long)]
        ablation: Option<String>,
        /// Master seed (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
        /// Record meta prompt/response pairs in meta_dump.jsonl.
        #[arg(long)]
        dump_meta: bool,
        /// Run directory; defaults to runs/<game>-<ablation>-seed<N>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep seeds for every ablation and print a score table.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Override run.steps_total.
        #[arg(long)]
        steps: Option<u64>,
        /// Also write the full sweep as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Tag-protocol utilities.
    Protocol {
        #[command(subcommand)]
        command: ProtocolCommand,
    },
    /// Re-check a run directory: return accounting, meta-log replay and,
    /// with --rerun, metrics reproduction.
    Replay {
        run_dir: PathBuf,
        #[arg(long)]
        rerun: bool,
    },
}

#[derive(Subcommand)]
enum ProtocolCommand {
    /// Validate a conformance corpus directory.
    Check { dir: PathBuf },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path).with_context(|| format!("loading {}", path.display()))
}

fn dispatch(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run {
            config,
            ablation,
            seed,
            dump_meta,
            out,
        } => {
            let mut cfg = load(&config)?;
            if let Some(a) = ablation {
                cfg = cfg.with_ablation(a.parse::<Ablation>()?);
            }
            if let Some(s) = seed {
                cfg = cfg.with_seed(s);
            }
            cfg.validate()?;
            let dir = out.unwrap_or_else(|| {
                PathBuf::from("runs").join(format!(
                    "{}-{}-seed{}",
                    cfg.env.game,
                    cfg.ablation(),
                    cfg.run.seed
                ))
            });
            let report = run_in_dir(&cfg, &dir, &RunOptions { dump_meta })?;
            println!(
                "{} {} seed {}: total return {}, {} episodes, {} meta cycles, {} RL rounds, {} rules",
                report.game,
                report.ablation,
                cfg.run.seed,
                report.total_return,
                report.episode_returns.len(),
                report.meta_cycles,
                report.mctrl_rounds,
                report.final_memory.len()
            );
            println!("artifacts in {}", dir.display());
            Ok(true)
        }
        Command::Bench {
            config,
            seeds,
            steps,
            json,
        } => {
            if seeds == 0 {
                bail!("--seeds must be >= 1");
            }
            let mut cfg = load(&config)?;
            if let Some(s) = steps {
                cfg.run.steps_total = s;
            }
            let base = cfg.run.seed;
            let seed_list: Vec<u64> = (base..base + seeds).collect();
            let result = sweep(&cfg, &seed_list, &Ablation::ALL)?;
            print!("{}", result.table(cfg.env.game.as_str()));
            if let Some(path) = json {
                std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
            }
            Ok(true)
        }
        Command::Protocol {
            command: ProtocolCommand::Check { dir },
        } => {
            let report = check_corpus(&dir)?;
            for case in &report.cases {
                if case.passed {
                    println!("ok    {}", case.name);
                } else {
                    println!("FAIL  {}: {}", case.name, case.message);
                }
            }
            println!("{} passed, {} failed", report.passed(), report.failed());
            Ok(report.all_passed())
        }
        Command::Replay { run_dir, rerun } => {
            let scratch = if rerun {
                Some(std::env::temp_dir().join(format!("mctr-replay-{}", std::process::id())))
            } else {
                None
            };
            let check = replay_run_dir(&run_dir, scratch.as_deref())?;
            if let Some(s) = &scratch {
                let _ = std::fs::remove_dir_all(s);
            }
            println!("steps: {}", check.steps);
            println!("meta cycles: {}", check.meta_cycles);
            println!("return accounting: {}", verdict(check.return_matches));
            println!("meta log replay: {}", verdict(check.memory_matches));
            if let Some(m) = check.metrics_match {
                println!("metrics reproduction: {}", verdict(m));
            }
            Ok(check.ok())
        }
    }
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISMATCH"
    }
}
