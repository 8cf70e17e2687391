//! Run orchestration: the operations behind the command-line verbs.
//!
//! Each training run owns one output directory:
//!
//! ```text
//! out/
//!   run.toml          config actually in effect
//!   manifest.json     written before the first training step
//!   metrics.csv       one row per iteration, appended and flushed
//!   checkpoints/      ckpt_NNNN.json at the configured cadence + final.json
//!   plots/            learning curves and reward-decoder diagnostic
//!   ```
//!
//! Evaluation runs write an `eval_summary.json` (or nonstationary
//! report) plus a `trajectories.jsonl` step log into their own
//! directory. All functions return the artifact paths they produced so
//! callers never have to guess layout.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::envs::{RewardMode, TaskFamily};
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::TrainConfig;
use crate::harness::jsonl::TrajectoryLogger;
use crate::harness::metrics::{read_metrics, MetricsWriter};
use crate::harness::plot::{learning_curve_return, learning_curve_success, reward_decoder_figure};
use crate::latent::{analytic_elbo, build_affine_model, elbo_mc_estimate, perturb_posterior,
    standardized_system, trajectory_batch};
use crate::meta::{
    meta_test, nonstationary_eval, reward_decoder_trace, run_loop, EvalSummary, NonstatReport,
    PolicyKind, Stage, Trainer, TrialResult,
};
use crate::oracles::kalman::random_system;
use crate::oracles::{gaussian_kl, joint_conditional, kalman_filter, mc_gaussian_kl};
use crate::rng::{stream, Rng};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "BELIEFRL_OUT";

/// Revision stamp written into manifests.
pub const CODE_REVISION: &str = env!("CARGO_PKG_VERSION");

/// Noise-stream label for the standalone evaluation verbs, outside the
/// range of training-cadence labels (which use the iteration number).
const EVAL_VERB_LABEL: u64 = u64::MAX;

/// `$BELIEFRL_OUT`, or `runs/` beside the working directory.
pub fn default_out_root() -> PathBuf {
    std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

/// Immutable run descriptor, written before the first training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub code_revision: String,
    pub seed: u64,
    pub family: TaskFamily,
    pub stage: Stage,
    pub start_unix_seconds: u64,
    pub config_file: String,
    pub metrics_file: String,
    pub checkpoint_dir: String,
    pub plot_dir: String,
}

impl RunManifest {
    fn new(cfg: &TrainConfig, stage: Stage) -> Self {
        RunManifest {
            code_revision: CODE_REVISION.to_string(),
            seed: cfg.seed,
            family: cfg.env.family,
            stage,
            start_unix_seconds: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            config_file: "run.toml".into(),
            metrics_file: "metrics.csv".into(),
            checkpoint_dir: "checkpoints".into(),
            plot_dir: "plots".into(),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Everything a finished training run left on disk.
#[derive(Debug, Clone)]
pub struct TrainArtifacts {
    pub out_dir: PathBuf,
    pub final_checkpoint: PathBuf,
    pub metrics_file: PathBuf,
    pub plots: Vec<PathBuf>,
    /// Iterations completed over the whole run (resumes included).
    pub iterations: usize,
    pub env_steps: usize,
    /// Last held-out evaluation the cadence produced, if any.
    pub final_eval: Option<EvalSummary>,
}

fn prepare_run_dir(out_dir: &Path) -> Result<(PathBuf, PathBuf)> {
    let ckpt_dir = out_dir.join("checkpoints");
    let plot_dir = out_dir.join("plots");
    for d in [out_dir, &ckpt_dir, &plot_dir] {
        fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    Ok((ckpt_dir, plot_dir))
}

/// The shared train loop driver: metrics row per iteration, checkpoint
/// cadence, final checkpoint, plots.
fn drive(trainer: &mut Trainer, out_dir: &Path, writer: &mut MetricsWriter) -> Result<TrainArtifacts> {
    let ckpt_dir = out_dir.join("checkpoints");
    let plot_dir = out_dir.join("plots");
    let metrics_file = out_dir.join("metrics.csv");

    let mut final_eval: Option<EvalSummary> = None;
    run_loop(trainer, &mut |t, m| {
        writer.append(m)?;
        if let Some(e) = &m.eval {
            final_eval = Some(e.clone());
        }
        let every = t.cfg.schedule.checkpoint_every;
        if every > 0 && t.iter % every == 0 {
            Checkpoint::capture(t).save(ckpt_dir.join(format!("ckpt_{:04}.json", t.iter)))?;
        }
        Ok(())
    })?;

    let final_checkpoint = ckpt_dir.join("final.json");
    Checkpoint::capture(trainer).save(&final_checkpoint)?;
    let plots = emit_plots(&metrics_file, &plot_dir, Some(trainer))?;

    Ok(TrainArtifacts {
        out_dir: out_dir.to_path_buf(),
        final_checkpoint,
        metrics_file,
        plots,
        iterations: trainer.iter,
        env_steps: trainer.env_steps,
        final_eval,
    })
}

/// Dense-stage training (the `train` verb). With `resume_from`, training
/// continues from the checkpoint under `cfg` — same architecture
/// required, schedule changes allowed — and replay is refilled by
/// re-collection since buffers are not part of the archive.
pub fn run_train(cfg: &TrainConfig, out_dir: &Path, resume_from: Option<&Path>) -> Result<TrainArtifacts> {
    cfg.validate()?;
    prepare_run_dir(out_dir)?;
    cfg.save(&out_dir.join("run.toml"))?;

    let metrics_file = out_dir.join("metrics.csv");
    let manifest_file = out_dir.join("manifest.json");

    let (mut trainer, mut writer) = match resume_from {
        None => {
            RunManifest::new(cfg, Stage::Dense).save(&manifest_file)?;
            let mut t = Trainer::new(cfg)?;
            let w = MetricsWriter::create(&metrics_file)?;
            t.warmstart()?;
            (t, w)
        }
        Some(ckpt_path) => {
            let ck = Checkpoint::load(ckpt_path)?;
            let mut t = ck.resume_with(cfg)?;
            if !manifest_file.exists() {
                RunManifest::new(cfg, t.stage).save(&manifest_file)?;
            }
            let w = if metrics_file.exists() {
                MetricsWriter::append_to(&metrics_file)?
            } else {
                MetricsWriter::create(&metrics_file)?
            };
            let per_task =
                (cfg.schedule.warmstart_trajectories / cfg.tasks.num_train.max(1)).max(1);
            t.reseed_buffers(per_task)?;
            (t, w)
        }
    };
    drive(&mut trainer, out_dir, &mut writer)
}

/// Sparse-stage training (the `train-sparse` verb): start from a
/// dense-stage checkpoint's weights, filter on the sparse channel, and
/// seed replay with trials collected by the loaded policy.
pub fn run_train_sparse(cfg: &TrainConfig, dense_ckpt: &Path, out_dir: &Path) -> Result<TrainArtifacts> {
    cfg.validate()?;
    let ck = Checkpoint::load(dense_ckpt)?;
    if ck.stage != Stage::Dense {
        return Err(Error::Usage(format!(
            "sparse stage must start from a dense-stage checkpoint, this one is {:?}",
            ck.stage
        )));
    }
    prepare_run_dir(out_dir)?;
    cfg.save(&out_dir.join("run.toml"))?;
    RunManifest::new(cfg, Stage::Sparse).save(&out_dir.join("manifest.json"))?;

    let mut trainer = ck.into_stage(cfg, Stage::Sparse)?;
    let mut writer = MetricsWriter::create(&out_dir.join("metrics.csv"))?;
    trainer.seed_stage_buffers()?;
    drive(&mut trainer, out_dir, &mut writer)
}

/// What the `eval` verb wrote.
#[derive(Debug, Clone)]
pub struct EvalArtifacts {
    pub summary: EvalSummary,
    pub summary_file: PathBuf,
    pub trajectory_log: PathBuf,
    pub num_trials: usize,
}

#[derive(Serialize)]
struct EvalReport<'a> {
    checkpoint: String,
    stage: Stage,
    episodes_per_trial: usize,
    reps: usize,
    summary: &'a EvalSummary,
    trials: &'a [TrialResult],
}

/// Held-out evaluation of a checkpoint (the `eval` verb): deterministic
/// policy, stage-appropriate evidence channel, `reps` trials per held-out
/// task. Writes a JSON summary and the full per-step trajectory log.
pub fn run_eval(ckpt_path: &Path, out_dir: &Path, reps: usize) -> Result<EvalArtifacts> {
    if reps == 0 {
        return Err(Error::Usage("eval: reps must be ≥ 1".into()));
    }
    let ck = Checkpoint::load(ckpt_path)?;
    let t = ck.into_trainer()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let trials = meta_test(
        &t.model,
        &t.agent,
        &t.store,
        &t.cfg.env,
        &t.eval_tasks,
        t.cfg.schedule.episodes_per_trial,
        reps,
        t.evidence(),
        PolicyKind::Mean,
        t.cfg.seed,
        EVAL_VERB_LABEL,
    )?;

    let trajectory_log = out_dir.join("trajectories.jsonl");
    let mut logger = TrajectoryLogger::create(&trajectory_log)?;
    for trial in &trials {
        logger.log_trial(trial.rep, &trial.trajectory)?;
    }

    let results: Vec<TrialResult> = trials.iter().map(|t| t.result.clone()).collect();
    let summary = EvalSummary::from_trials(&results)?;
    let summary_file = out_dir.join("eval_summary.json");
    let report = EvalReport {
        checkpoint: ckpt_path.display().to_string(),
        stage: t.stage,
        episodes_per_trial: t.cfg.schedule.episodes_per_trial,
        reps,
        summary: &summary,
        trials: &results,
    };
    fs::write(&summary_file, serde_json::to_string_pretty(&report)?)
        .map_err(|e| Error::io(&summary_file, e))?;

    Ok(EvalArtifacts {
        num_trials: results.len(),
        summary,
        summary_file,
        trajectory_log,
    })
}

/// Within-episode re-adaptation evaluation (the `eval-nonstationary`
/// verb). `targets` overrides the number of per-episode target
/// velocities; the held-out task set is resampled under the override so
/// task parameters match the requested switching structure.
pub fn run_eval_nonstationary(
    ckpt_path: &Path,
    out_dir: &Path,
    reps: usize,
    threshold: usize,
    targets: Option<usize>,
) -> Result<(NonstatReport, PathBuf)> {
    let ck = Checkpoint::load(ckpt_path)?;
    let t = ck.into_trainer()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let mut env_cfg = t.cfg.env.clone();
    let mut tasks = t.eval_tasks.clone();
    if let Some(m) = targets {
        if m != env_cfg.veltrack_targets {
            env_cfg.veltrack_targets = m;
            let mut all = crate::envs::sample_tasks(
                &env_cfg,
                t.cfg.tasks.num_train + t.cfg.tasks.num_eval,
                t.cfg.seed,
            )?;
            tasks = all.split_off(t.cfg.tasks.num_train);
        }
    }

    let report = nonstationary_eval(
        &t.model,
        &t.agent,
        &t.store,
        &env_cfg,
        &tasks,
        reps,
        threshold,
        t.evidence(),
        t.cfg.seed,
    )?;

    #[derive(Serialize)]
    struct NonstatFile<'a> {
        checkpoint: String,
        targets: usize,
        threshold: usize,
        fraction_reacquired: f64,
        mean_steps_to_band: f64,
        report: &'a NonstatReport,
    }
    let file = out_dir.join("nonstationary_report.json");
    let body = NonstatFile {
        checkpoint: ckpt_path.display().to_string(),
        targets: env_cfg.veltrack_targets,
        threshold,
        fraction_reacquired: report.fraction_reacquired(),
        mean_steps_to_band: report.mean_steps(),
        report: &report,
    };
    fs::write(&file, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&file, e))?;
    Ok((report, file))
}

/// Render figures from a metrics file (the `plot` verb and the tail of
/// every training run). With a trainer at hand, also collects one
/// held-out trial and plots the reward decoder's predicted mean and
/// variance along it. Empty metrics produce a warning and no files.
pub fn emit_plots(metrics_file: &Path, plot_dir: &Path, diagnostic: Option<&Trainer>) -> Result<Vec<PathBuf>> {
    let rows = read_metrics(metrics_file)?;
    let mut written = Vec::new();
    if rows.is_empty() {
        eprintln!(
            "warning: {} has no metric rows, skipping plots",
            metrics_file.display()
        );
        return Ok(written);
    }
    fs::create_dir_all(plot_dir).map_err(|e| Error::io(plot_dir, e))?;

    if let Some(spec) = learning_curve_return(&rows) {
        let p = plot_dir.join("learning_curve_return.png");
        spec.save(&p)?;
        written.push(p);
    }
    if let Some(spec) = learning_curve_success(&rows) {
        let p = plot_dir.join("learning_curve_success.png");
        spec.save(&p)?;
        written.push(p);
    }

    if let Some(t) = diagnostic {
        let trials = meta_test(
            &t.model,
            &t.agent,
            &t.store,
            &t.cfg.env,
            &t.eval_tasks[..1],
            t.cfg.schedule.episodes_per_trial,
            1,
            t.evidence(),
            PolicyKind::Mean,
            t.cfg.seed,
            EVAL_VERB_LABEL - 1,
        )?;
        let traj = &trials[0].trajectory;
        let predicted = reward_decoder_trace(&t.model, &t.store, traj, t.evidence())?;
        let observed: Vec<f64> = (0..traj.len())
            .map(|i| traj.reward(RewardMode::Shaped, i))
            .collect();
        let boundaries: Vec<usize> = traj
            .boundary
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i + 1))
            .collect();
        let p = plot_dir.join("reward_decoder.png");
        reward_decoder_figure(&predicted, &observed, &boundaries).save(&p)?;
        written.push(p);
    }
    Ok(written)
}

/// The `plot` verb: figures from a metrics file, plus the decoder
/// diagnostic when a checkpoint is supplied.
pub fn run_plot(metrics_file: &Path, plot_dir: &Path, ckpt: Option<&Path>) -> Result<Vec<PathBuf>> {
    let trainer = match ckpt {
        Some(p) => Some(Checkpoint::load(p)?.into_trainer()?),
        None => None,
    };
    emit_plots(metrics_file, plot_dir, trainer.as_ref())
}

// ---------------------------------------------------------------------------
// Oracle self-check (the `oracle-check` verb)
// ---------------------------------------------------------------------------

/// One named ground-truth comparison.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn normal_dvec(n: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(rng))
}

/// Run the standalone verification suite: closed-form KL against its
/// Monte-Carlo estimate, Kalman marginals against dense joint-Gaussian
/// conditioning, and the learned-model elbo against exact linear-system
/// log-likelihoods (equality where the posterior family is exact, and
/// the lower-bound property under random perturbations).
pub fn run_oracle_check() -> Result<Vec<OracleCheck>> {
    let mut checks = Vec::new();

    // Closed-form KL vs Monte-Carlo, 100 random diagonal Gaussian pairs.
    {
        let mut rng = stream(101, "oracle/kl");
        let mut worst = 0.0f64;
        let mut failures = 0;
        for _ in 0..100 {
            let d = 1 + (rng.gen::<u64>() % 6) as usize;
            let draw = |rng: &mut Rng| -> (Vec<f64>, Vec<f64>) {
                let mu = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let var = (0..d).map(|_| 0.2 + rng.gen::<f64>() * 2.0).collect();
                (mu, var)
            };
            let (mu0, var0) = draw(&mut rng);
            let (mu1, var1) = draw(&mut rng);
            let exact = gaussian_kl(&mu0, &var0, &mu1, &var1)?;
            let (mc, se) = mc_gaussian_kl(&mu0, &var0, &mu1, &var1, 100_000, &mut rng);
            let sigmas = (mc - exact).abs() / se.max(1e-12);
            worst = worst.max(sigmas);
            if sigmas > 3.0 {
                failures += 1;
            }
        }
        checks.push(OracleCheck {
            name: "gaussian-kl-monte-carlo",
            passed: failures == 0,
            detail: format!("100 pairs x 1e5 samples, worst gap {worst:.2} standard errors"),
        });
    }

    // Kalman filter marginals vs dense joint-Gaussian conditioning.
    {
        let mut rng = stream(102, "oracle/kalman");
        let mut worst = 0.0f64;
        for _ in 0..20 {
            let sys = random_system(3, 2, 2, &mut rng);
            let actions: Vec<DVector<f64>> = (0..2).map(|_| normal_dvec(2, &mut rng)).collect();
            let (_zs, ys) = sys.simulate(&actions, &mut rng);
            let filt = kalman_filter(&sys, &ys, &actions)?;
            let (means, covs, ll) = joint_conditional(&sys, &ys, &actions)?;
            for t in 0..3 {
                worst = worst.max((&filt.means[t] - &means[t]).abs().max());
                worst = worst.max((&filt.covs[t] - &covs[t]).abs().max());
            }
            worst = worst.max((filt.log_likelihood - ll).abs());
        }
        checks.push(OracleCheck {
            name: "kalman-vs-dense-conditioning",
            passed: worst < 1e-10,
            detail: format!("20 random horizon-3 systems, worst marginal gap {worst:.2e}"),
        });
    }

    // Elbo equals the exact log-likelihood where the causal posterior
    // family contains the smoother (memoryless dynamics), and the
    // Monte-Carlo elbo agrees within its standard error.
    {
        let sys = standardized_system(3, 0.0, 24);
        let (model, store) = build_affine_model(&sys)?;
        let traj = sys.simulate(&[vec![0.4], vec![-0.2]], &mut stream(103, "oracle/elbo-sim"));
        let ll = sys.exact_log_likelihood(&traj)?;
        let closed = analytic_elbo(&sys, &model, &store, &traj)?;
        let gap = (closed - ll).abs();
        let batch = trajectory_batch(&traj);
        let (mc, se) = elbo_mc_estimate(
            &model,
            &store,
            &batch,
            100_000,
            5_000,
            &mut stream(103, "oracle/elbo-mc"),
        )?;
        let mc_gap = (mc - ll).abs();
        checks.push(OracleCheck {
            name: "elbo-exactness",
            passed: gap < 1e-9 && se < 1e-2 && mc_gap <= 3.0 * se,
            detail: format!(
                "closed-form gap {gap:.2e}; monte-carlo gap {mc_gap:.4} at se {se:.4} (1e5 samples)"
            ),
        });
    }

    // Lower-bound property: perturbed posteriors never exceed the exact
    // log-likelihood.
    {
        let sys = standardized_system(3, 0.6, 27);
        let (model, base_store) = build_affine_model(&sys)?;
        let traj = sys.simulate(&[vec![0.2], vec![-0.1]], &mut stream(104, "oracle/bound-sim"));
        let ll = sys.exact_log_likelihood(&traj)?;
        let mut rng = stream(104, "oracle/bound-perturb");
        let mut max_elbo = f64::NEG_INFINITY;
        let mut violations = 0;
        for _ in 0..100 {
            let mut store = base_store.clone();
            perturb_posterior(&model, &mut store, 0.3, &mut rng);
            let elbo = analytic_elbo(&sys, &model, &store, &traj)?;
            max_elbo = max_elbo.max(elbo);
            if !(elbo <= ll + 1e-9) {
                violations += 1;
            }
        }
        checks.push(OracleCheck {
            name: "elbo-lower-bound",
            passed: violations == 0,
            detail: format!(
                "100 perturbed posteriors, max elbo {max_elbo:.4} vs log-likelihood {ll:.4}"
            ),
        });
    }

    Ok(checks)
}
