//! The training loop and the `train` / `diagnose` commands.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::data::{batches, make_gaussian_blobs, make_two_moons, load_csv, write_atomic, BatchPlan, Dataset};
use crate::error::{Error, Result};
use crate::harness::config::{DatasetSpec, OptimizerKind, RunConfig, Settings};
use crate::harness::output::{content_hash, diagnostics_csv, metrics_csv, write_json, RecordKind, RunRecord};
use crate::models::{Batch, ModelSpec};
use crate::optim::{Adam, KoalaPlusPlus, KoalaV, Sgd};
use crate::oracle::DiagnosticsRow;
use crate::vector::{norm_sq, GradVector, ParamVector};

/// The optimizer of one run.
#[derive(Clone, Debug)]
pub enum Engine {
    Koala(KoalaPlusPlus),
    KoalaV(KoalaV),
    Sgd(Sgd),
    Adam(Adam),
}

impl Engine {
    pub fn new(cfg: &RunConfig) -> Result<Engine> {
        let b = &cfg.baseline;
        Ok(match cfg.optimizer {
            OptimizerKind::KoalaPp | OptimizerKind::KoalaPpNs => Engine::Koala(KoalaPlusPlus::new(cfg.koala)?),
            OptimizerKind::KoalaV => Engine::KoalaV(KoalaV::new(cfg.koala)?),
            OptimizerKind::Sgd => Engine::Sgd(Sgd::new(b.momentum)),
            OptimizerKind::Adam => Engine::Adam(Adam::new(b.beta1, b.beta2, b.adam_eps)),
        })
    }

    pub fn step(&mut self, loss: f64, grad: &GradVector, lr: f64) -> Result<ParamVector> {
        match self {
            Engine::Koala(o) => o.step(loss, grad, lr),
            Engine::KoalaV(o) => o.step(loss, grad, lr),
            Engine::Sgd(o) => Ok(o.step(grad, lr)),
            Engine::Adam(o) => Ok(o.step(grad, lr)),
        }
    }

    /// Measurement noise used by the most recent step.
    pub fn r_estimate(&self) -> Option<f64> {
        match self {
            Engine::Koala(o) => o.state().map(|s| s.r_last),
            Engine::KoalaV(o) => (o.step > 0).then_some(o.r_last),
            _ => None,
        }
    }
}

/// Diagnostics of the step just taken on `grad`. For the scalar-covariance
/// optimizer the surrogate is `p_{k-1} H_k`, with `p_prev` the variance
/// before the step.
fn diagnostics_after(engine: &Engine, grad: &GradVector, p_prev: f64) -> Result<Option<DiagnosticsRow>> {
    match engine {
        Engine::Koala(o) => match o.state() {
            Some(s) => DiagnosticsRow::from_step(s.step, grad, &s.v, s.s_prev, s.floor_hits).map(Some),
            None => Ok(None),
        },
        Engine::KoalaV(o) => {
            let v: Vec<f64> = grad.iter().map(|h| p_prev * h).collect();
            let s = (p_prev + o.hyper.q) * norm_sq(grad) + o.r_last;
            DiagnosticsRow::from_step(o.step, grad, &v, s, 0).map(Some)
        }
        _ => Ok(None),
    }
}

pub fn build_dataset(spec: &DatasetSpec, seed: u64) -> Result<Dataset> {
    match spec {
        DatasetSpec::TwoMoons { n, noise } => make_two_moons(*n, *noise, seed),
        DatasetSpec::GaussianBlobs { n, centers, std } => make_gaussian_blobs(*n, *centers, *std, seed),
        DatasetSpec::Csv { path, label_column } => load_csv(path, label_column),
    }
}

/// State captured when a run hits a non-finite value.
#[derive(Clone, Debug, Serialize)]
pub struct FailureSnapshot {
    pub epoch: u32,
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub theta_norm: f64,
    pub grad_norm: f64,
    pub error: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct FinalMetrics {
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub top1_err_pct: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub records: Vec<RunRecord>,
    pub diagnostics: Vec<DiagnosticsRow>,
    pub epoch_seconds: Vec<f64>,
    pub steps_per_epoch: usize,
    pub theta: ParamVector,
    pub final_metrics: FinalMetrics,
}

impl RunOutcome {
    pub fn epoch_records(&self) -> impl Iterator<Item = &RunRecord> {
        self.records.iter().filter(|r| r.kind == RecordKind::Epoch)
    }

    pub fn acute_fraction(&self) -> Option<f64> {
        if self.diagnostics.is_empty() {
            return None;
        }
        let acute = self.diagnostics.iter().filter(|d| d.is_acute()).count();
        Some(acute as f64 / self.diagnostics.len() as f64)
    }
}

#[derive(Debug)]
pub struct RunFailure {
    pub error: Error,
    pub snapshot: Option<Box<FailureSnapshot>>,
}

impl From<Error> for RunFailure {
    fn from(error: Error) -> Self {
        Self { error, snapshot: None }
    }
}

struct Evaluation {
    loss: f64,
    top1_err_pct: Option<f64>,
}

fn evaluate(model: &ModelSpec, theta: &ParamVector, batch: &Batch) -> Result<Evaluation> {
    let (loss, _) = model.loss_and_grad(theta, batch)?;
    let top1_err_pct = match model.num_classes() {
        Some(_) if !batch.is_empty() => {
            let pred = model.predict(theta, batch)?;
            let wrong = pred.iter().zip(batch.targets()).filter(|(p, y)| **p as f64 != **y).count();
            Some(100.0 * wrong as f64 / batch.len() as f64)
        }
        _ => None,
    };
    Ok(Evaluation { loss, top1_err_pct })
}

/// Runs one configuration in memory. Nothing is written to disk.
pub fn run_training(cfg: &RunConfig) -> std::result::Result<RunOutcome, RunFailure> {
    let dataset = build_dataset(&cfg.dataset, cfg.seed)?;
    if let Some(width) = cfg.model.input_width() {
        if width != dataset.width() {
            return Err(Error::DimensionMismatch {
                context: "model input width vs dataset",
                expected: width,
                got: dataset.width(),
            }
            .into());
        }
    }
    let (train, val) = dataset.split(cfg.val_fraction, cfg.seed)?;
    let val_batch = val.as_batch();
    let plan = BatchPlan {
        batch_size: cfg.batch_size,
        shuffle_seed: cfg.seed,
        drop_last: false,
    };
    plan.validate(train.len())?;
    let model = &cfg.model;
    let mut theta = model.init_params(cfg.seed);
    let mut engine = Engine::new(cfg)?;

    let mut records = Vec::new();
    let mut diagnostics = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs as usize);
    let mut step: u64 = 0;
    let mut last_train_loss = f64::NAN;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.schedule.lr_at(epoch);
        let mut loss_sum = 0.0;
        let epoch_batches = batches(&train, &plan, u64::from(epoch))?;
        for batch in &epoch_batches {
            let fail = move |error: Error, loss: f64, grad_norm: f64, theta: &ParamVector| RunFailure {
                snapshot: Some(Box::new(FailureSnapshot {
                    epoch,
                    step: step + 1,
                    loss,
                    lr,
                    theta_norm: theta.norm(),
                    grad_norm,
                    error: error.to_string(),
                })),
                error,
            };
            let (loss, grad) = model.loss_and_grad(&theta, batch).map_err(|e| fail(e, f64::NAN, f64::NAN, &theta))?;
            if !loss.is_finite() || !grad.is_finite() {
                let error = Error::NonFiniteLoss {
                    model: model.name(),
                    batch_len: batch.len(),
                };
                return Err(fail(error, loss, grad.norm(), &theta));
            }
            let p_prev = match &engine {
                Engine::KoalaV(o) => o.p,
                _ => 0.0,
            };
            if lr > 0.0 {
                let delta = engine.step(loss, &grad, lr).map_err(|e| fail(e, loss, grad.norm(), &theta))?;
                theta.apply(&delta);
                if !theta.is_finite() {
                    return Err(fail(Error::non_finite("parameters after step"), loss, grad.norm(), &theta));
                }
            }
            step += 1;
            loss_sum += loss;
            if cfg.diagnostics {
                let diag = if lr > 0.0 {
                    diagnostics_after(&engine, &grad, p_prev).map_err(|e| fail(e, loss, grad.norm(), &theta))?
                } else {
                    None
                };
                if let Some(d) = diag {
                    diagnostics.push(d);
                }
                records.push(RunRecord {
                    kind: RecordKind::Step,
                    epoch,
                    step,
                    train_loss: loss,
                    val_loss: None,
                    top1_err_pct: None,
                    lr,
                    r_estimate: engine.r_estimate(),
                    diagnostics: diag,
                });
            }
        }
        let eval = evaluate(model, &theta, &val_batch)?;
        last_train_loss = loss_sum / epoch_batches.len().max(1) as f64;
        records.push(RunRecord {
            kind: RecordKind::Epoch,
            epoch,
            step,
            train_loss: last_train_loss,
            val_loss: Some(eval.loss),
            top1_err_pct: eval.top1_err_pct,
            lr,
            r_estimate: engine.r_estimate(),
            diagnostics: None,
        });
        epoch_seconds.push(start.elapsed().as_secs_f64());
    }

    let last = records.iter().rev().find(|r| r.kind == RecordKind::Epoch);
    let final_metrics = FinalMetrics {
        train_loss: last_train_loss,
        val_loss: last.and_then(|r| r.val_loss),
        top1_err_pct: last.and_then(|r| r.top1_err_pct),
    };
    Ok(RunOutcome {
        records,
        diagnostics,
        epoch_seconds,
        steps_per_epoch: plan.batches_per_epoch(train.len()),
        theta,
        final_metrics,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    /// Fully resolved settings; `train --config manifest.json` replays them.
    pub settings: &'a Settings,
    pub config: &'a RunConfig,
    pub model: String,
    pub param_count: usize,
    pub metrics_file: &'static str,
    pub metrics_rows: usize,
    pub metrics_sha256_git: String,
    pub steps_per_epoch: usize,
    pub total_steps: u64,
    pub epoch_wall_clock_s: &'a [f64],
    #[serde(rename = "final")]
    pub final_metrics: &'a FinalMetrics,
}

fn write_failure(out: &Path, failure: &RunFailure) {
    if let Some(snapshot) = &failure.snapshot {
        // best effort: the original error is what gets reported
        let _ = std::fs::create_dir_all(out).and_then(|_| {
            write_json(&out.join("failure.json"), snapshot).map_err(|e| std::io::Error::other(e.to_string()))
        });
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

/// `train`: runs `cfg` and writes `metrics.csv` and `manifest.json` under `cfg.out`.
/// `settings` are the resolved layers `cfg` came from and go into the manifest.
pub fn cmd_train(cfg: &RunConfig, settings: &Settings) -> std::result::Result<RunOutcome, RunFailure> {
    let outcome = run_training(cfg).inspect_err(|f| write_failure(&cfg.out, f))?;
    create_out(&cfg.out)?;
    let csv = metrics_csv(&outcome.records);
    write_atomic(&cfg.out.join("metrics.csv"), csv.as_bytes())?;
    let manifest = Manifest {
        tool: "kalmanopt",
        version: env!("CARGO_PKG_VERSION"),
        settings,
        config: cfg,
        model: cfg.model.name(),
        param_count: cfg.model.param_count(),
        metrics_file: "metrics.csv",
        metrics_rows: outcome.records.len(),
        metrics_sha256_git: content_hash(csv.as_bytes()),
        steps_per_epoch: outcome.steps_per_epoch,
        total_steps: outcome.epoch_records().last().map_or(0, |r| r.step),
        epoch_wall_clock_s: &outcome.epoch_seconds,
        final_metrics: &outcome.final_metrics,
    };
    write_json(&cfg.out.join("manifest.json"), &manifest)?;
    Ok(outcome)
}

#[derive(Clone, Debug, Serialize)]
pub struct DiagnoseSummary {
    pub optimizer: OptimizerKind,
    pub model: String,
    pub steps: usize,
    pub acute_steps: usize,
    pub acute_fraction: f64,
    pub min_angle_deg: f64,
    pub max_angle_deg: f64,
    pub floor_hits: u64,
    pub eigen_pairs_sorted: bool,
}

/// `diagnose`: a diagnostics-enabled run that writes `diagnostics.csv` and `summary.json`.
pub fn cmd_diagnose(cfg: &RunConfig) -> std::result::Result<(RunOutcome, DiagnoseSummary), RunFailure> {
    if !cfg.optimizer.is_kalman() {
        return Err(Error::Config(format!("diagnose needs a Kalman optimizer, got {:?}", cfg.optimizer)).into());
    }
    let mut cfg = cfg.clone();
    cfg.diagnostics = true;
    let outcome = run_training(&cfg).inspect_err(|f| write_failure(&cfg.out, f))?;
    let rows = &outcome.diagnostics;
    let acute_steps = rows.iter().filter(|d| d.is_acute()).count();
    let summary = DiagnoseSummary {
        optimizer: cfg.optimizer,
        model: cfg.model.name(),
        steps: rows.len(),
        acute_steps,
        acute_fraction: outcome.acute_fraction().unwrap_or(0.0),
        min_angle_deg: rows.iter().map(|d| d.angle_deg).fold(f64::INFINITY, f64::min),
        max_angle_deg: rows.iter().map(|d| d.angle_deg).fold(f64::NEG_INFINITY, f64::max),
        floor_hits: rows.last().map_or(0, |d| d.floor_hits),
        eigen_pairs_sorted: rows.iter().all(|d| d.lambda1 >= d.lambda2),
    };
    create_out(&cfg.out)?;
    write_atomic(&cfg.out.join("diagnostics.csv"), diagnostics_csv(rows).as_bytes())?;
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok((outcome, summary))
}

/// Worker slots for multi-seed runs: `KALMANOPT_THREADS` if set, else the core count.
pub fn worker_slots() -> usize {
    std::env::var("KALMANOPT_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Output directory of one seed in a multi-seed run.
pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Runs `job` for each seed, at most `slots` at a time, preserving input order.
pub fn run_parallel<T, F>(seeds: &[u64], slots: usize, job: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync,
{
    let job = &job;
    let mut results = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(slots.max(1)) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk.iter().map(|&seed| scope.spawn(move || job(seed))).collect();
            for h in handles {
                results.push(h.join().expect("training worker panicked"));
            }
        });
    }
    results
}

/// Exit status contract: 0 success, 1 runtime or numeric failure, 2 usage or config error.
pub fn exit_code(error: &Error) -> u8 {
    match error {
        Error::Config(_)
        | Error::InvalidArgument(_)
        | Error::Parse { .. }
        | Error::EmptyDataset { .. }
        | Error::DimensionMismatch { .. } => 2,
        _ => 1,
    }
}
