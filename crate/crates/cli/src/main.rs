//! Command-line interface: training, evaluation, plotting, and the
//! standalone oracle verification suite.
//!
//! Exit codes: 0 on success, 1 for configuration/usage/IO problems,
//! 2 for numeric faults, 3 for a divergence abort.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use beliefrl_core::harness::{
    default_out_root, run_eval, run_eval_nonstationary, run_oracle_check, run_plot, run_train,
    run_train_sparse, TrainConfig,
};
use beliefrl_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "beliefrl",
    version,
    about = "Meta-RL via latent-state inference: train, evaluate, plot",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct TrainArgs {
    /// Run configuration file (TOML). Missing keys take their defaults.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (default: $BELIEFRL_OUT/<verb>-seed<seed>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Dense-stage meta-training from scratch (or resumed).
    Train {
        #[command(flatten)]
        common: TrainArgs,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sparse-stage training from a dense-stage checkpoint.
    TrainSparse {
        #[command(flatten)]
        common: TrainArgs,
        /// Dense-stage checkpoint supplying the starting weights.
        #[arg(long)]
        from: PathBuf,
    },
    /// Held-out evaluation of a checkpoint; writes a JSON summary and a
    /// per-step trajectory log.
    Eval {
        /// Checkpoint to evaluate.
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluation repetitions per held-out task.
        #[arg(long, default_value_t = 3)]
        reps: usize,
    },
    /// Within-episode re-adaptation on switching-target velocity tasks.
    EvalNonstationary {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Evaluation repetitions per held-out task.
        #[arg(long, default_value_t = 3)]
        reps: usize,
        /// Steps allowed to re-enter the target band after a switch.
        #[arg(long, default_value_t = 10)]
        threshold: usize,
        /// Override the number of per-episode target velocities
        /// (targets − 1 switches); tasks are resampled to match.
        #[arg(long)]
        targets: Option<usize>,
    },
    /// Render figures from a metrics file.
    Plot {
        /// Metrics file produced by a training run.
        #[arg(long)]
        metrics: PathBuf,
        /// Directory for the rendered images.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also render the reward-decoder diagnostic from this checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run the ground-truth verification suite and report each check.
    OracleCheck,
}

fn out_or_default(out: Option<PathBuf>, leaf: String) -> PathBuf {
    out.unwrap_or_else(|| default_out_root().join(leaf))
}

fn cmd_train(common: TrainArgs, resume: Option<PathBuf>) -> Result<()> {
    let cfg = TrainConfig::load(&common.config)?;
    let out = out_or_default(common.out, format!("train-seed{}", cfg.seed));
    let a = run_train(&cfg, &out, resume.as_deref())?;
    println!(
        "trained {} iterations ({} env steps) -> {}",
        a.iterations,
        a.env_steps,
        a.out_dir.display()
    );
    if let Some(e) = &a.final_eval {
        println!(
            "final held-out eval: mean return {:.3}, last-episode success {:.2}",
            e.mean_shaped,
            e.ep_success.last().copied().unwrap_or(0.0)
        );
    }
    println!("final checkpoint: {}", a.final_checkpoint.display());
    Ok(())
}

fn cmd_train_sparse(common: TrainArgs, from: PathBuf) -> Result<()> {
    let cfg = TrainConfig::load(&common.config)?;
    let out = out_or_default(common.out, format!("sparse-seed{}", cfg.seed));
    let a = run_train_sparse(&cfg, &from, &out)?;
    println!(
        "sparse stage: {} iterations ({} env steps) -> {}",
        a.iterations,
        a.env_steps,
        a.out_dir.display()
    );
    if let Some(e) = &a.final_eval {
        println!(
            "final held-out eval: mean sparse return {:.3}, last-episode success {:.2}",
            e.mean_sparse,
            e.ep_success.last().copied().unwrap_or(0.0)
        );
    }
    println!("final checkpoint: {}", a.final_checkpoint.display());
    Ok(())
}

fn cmd_eval(checkpoint: PathBuf, out: Option<PathBuf>, reps: usize) -> Result<()> {
    let out = out_or_default(out, "eval".into());
    let a = run_eval(&checkpoint, &out, reps)?;
    let e = &a.summary;
    println!("{} trials over held-out tasks", a.num_trials);
    for (i, (s, p)) in e.ep_sparse.iter().zip(&e.ep_success).enumerate() {
        println!(
            "episode {}: mean sparse return {:.3}, success rate {:.2}",
            i + 1,
            s,
            p
        );
    }
    println!("summary: {}", a.summary_file.display());
    println!("trajectories: {}", a.trajectory_log.display());
    Ok(())
}

fn cmd_eval_nonstationary(
    checkpoint: PathBuf,
    out: Option<PathBuf>,
    reps: usize,
    threshold: usize,
    targets: Option<usize>,
) -> Result<()> {
    let out = out_or_default(out, "eval-nonstationary".into());
    let (report, file) = run_eval_nonstationary(&checkpoint, &out, reps, threshold, targets)?;
    println!(
        "{} episodes, {:.1}% re-acquired every switch within {} steps (mean {:.2} steps)",
        report.episodes.len(),
        100.0 * report.fraction_reacquired(),
        threshold,
        report.mean_steps()
    );
    println!("report: {}", file.display());
    Ok(())
}

fn cmd_plot(metrics: PathBuf, out: Option<PathBuf>, checkpoint: Option<PathBuf>) -> Result<()> {
    let out = out_or_default(out, "plots".into());
    let written = run_plot(&metrics, &out, checkpoint.as_deref())?;
    for p in &written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn cmd_oracle_check() -> Result<()> {
    let checks = run_oracle_check()?;
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} - {}", c.name, c.detail);
        if !c.passed {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(Error::numeric(
            "oracle-check",
            format!("{failed} of {} checks failed", checks.len()),
        ));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { common, resume } => cmd_train(common, resume),
        Command::TrainSparse { common, from } => cmd_train_sparse(common, from),
        Command::Eval {
            checkpoint,
            out,
            reps,
        } => cmd_eval(checkpoint, out, reps),
        Command::EvalNonstationary {
            checkpoint,
            out,
            reps,
            threshold,
            targets,
        } => cmd_eval_nonstationary(checkpoint, out, reps, threshold, targets),
        Command::Plot {
            metrics,
            out,
            checkpoint,
        } => cmd_plot(metrics, out, checkpoint),
        Command::OracleCheck => cmd_oracle_check(),
    }
}

fn main() -> ExitCode {
    // Clap's own exit conventions don't match ours (it uses 2 for usage
    // errors, which this tool reserves for numeric faults), so argument
    // errors are funneled through the same taxonomy as everything else.
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version are successful terminations.
            if e.use_stderr() {
                eprint!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
