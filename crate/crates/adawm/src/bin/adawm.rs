//! Command-line entry point: pretraining and finetuning pipelines,
//! checkpoint evaluation, exact bound reports, tabular verification,
//! gradient checks, and learning-curve plots.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use adawm::harness::{
    export_curves, gradcheck_suite, run_eval, run_finetune, run_pretrain, ExperimentConfig,
};
use adawm::theory::{bound_report, dominance_suite, AssumptionConstants};

#[derive(Parser)]
#[command(name = "adawm", version, about = "Adaptive world-model planning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain world model, actor, and critic on the pretraining task.
    Pretrain {
        /// Experiment configuration file (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed instead of every seed in the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Finetune on the shifted task from the pretraining checkpoints.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint's agent on a task.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Task id to evaluate on (defaults to the config's finetune task).
        #[arg(long)]
        task: Option<String>,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the performance-gap bound report as JSON.
    BoundReport {
        #[arg(long, default_value_t = 0.9)]
        gamma: f64,
        /// Lookahead horizon K.
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1.0)]
        r_max: f64,
        /// One-step transition error of the learned dynamics.
        #[arg(long, default_value_t = 0.0)]
        e_p: f64,
        /// State-representation error.
        #[arg(long, default_value_t = 0.0)]
        e_x: f64,
        /// Empirical dynamics mismatch.
        #[arg(long, default_value_t = 0.0)]
        e_phat: f64,
        /// Empirical policy mismatch.
        #[arg(long, default_value_t = 0.0)]
        e_pi: f64,
    },
    /// Exact tabular verification: bound dominance over random MDP pairs.
    TabularVerify {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Finite-difference gradient check of every differentiable operation.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Render learning curves and a summary table from metrics CSVs.
    Plot {
        /// One or more metrics CSV files.
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "curves.svg")]
        out_fig: PathBuf,
        #[arg(long, default_value = "summary.txt")]
        out_table: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), String> {
    match cli.command {
        Command::Pretrain { config, seed } => {
            let cfg = ExperimentConfig::from_file(config.to_str().ok_or("non-utf8 path")?)
                .map_err(|e| e.to_string())?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
            for s in seeds {
                let path = run_pretrain(&cfg, s).map_err(|e| e.to_string())?;
                println!("seed {s}: wrote {}", path.display());
            }
            Ok(())
        }
        Command::Finetune { config, seed } => {
            let cfg = ExperimentConfig::from_file(config.to_str().ok_or("non-utf8 path")?)
                .map_err(|e| e.to_string())?;
            let seeds = seed.map(|s| vec![s]).unwrap_or_else(|| cfg.seeds.clone());
            for s in seeds {
                let path = run_finetune(&cfg, s).map_err(|e| e.to_string())?;
                println!("seed {s}: wrote {}", path.display());
            }
            Ok(())
        }
        Command::Eval { config, checkpoint, task, episodes, seed } => {
            let cfg = ExperimentConfig::from_file(config.to_str().ok_or("non-utf8 path")?)
                .map_err(|e| e.to_string())?;
            let task = task.unwrap_or_else(|| cfg.finetune_task.clone());
            let res = run_eval(&cfg, &checkpoint, &task, episodes, seed)
                .map_err(|e| e.to_string())?;
            println!(
                "task {task}: success rate {:.3}, mean ttc {:.3} over {episodes} episodes",
                res.success_rate, res.mean_ttc
            );
            Ok(())
        }
        Command::BoundReport { gamma, k, r_max, e_p, e_x, e_phat, e_pi } => {
            let c = AssumptionConstants {
                gamma,
                horizon: k,
                r_max,
                ..AssumptionConstants::default()
            };
            let report =
                bound_report(&c, e_p, e_x, e_phat, e_pi).map_err(|e| e.to_string())?;
            let json = serde_json::to_string_pretty(&report).map_err(|e| e.to_string())?;
            println!("{json}");
            Ok(())
        }
        Command::TabularVerify { instances, seed } => {
            let summary = dominance_suite(instances, seed).map_err(|e| e.to_string())?;
            println!(
                "dominance pass count {}/{} (worst gap/bound ratio {:.4})",
                summary.passes, summary.instances, summary.worst_ratio
            );
            if summary.passes != summary.instances {
                return Err(format!(
                    "{} of {} instances violated the bound",
                    summary.instances - summary.passes,
                    summary.instances
                ));
            }
            Ok(())
        }
        Command::Gradcheck { seeds, tol } => {
            let results = gradcheck_suite(seeds).map_err(|e| e.to_string())?;
            let mut worst_overall = 0.0f64;
            for (op, err) in &results {
                println!("{op:<18} max relative error {err:.3e}");
                worst_overall = worst_overall.max(*err);
            }
            if worst_overall > tol {
                return Err(format!("worst error {worst_overall:.3e} exceeds tolerance {tol:.1e}"));
            }
            println!("all {} ops within {tol:.1e}", results.len());
            Ok(())
        }
        Command::Plot { csv, out_fig, out_table } => {
            export_curves(&csv, &out_fig, &out_table).map_err(|e| e.to_string())?;
            println!("wrote {} and {}", out_fig.display(), out_table.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help and --version are successful exits; real usage errors
            // are not
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
