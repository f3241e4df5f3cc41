//! `train` and `eval`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rhn_core::numerics::RngStream;
use rhn_core::train::{evaluate, fit, EpochRecord, Evaluation, FitReport};
use rhn_core::Network;

use crate::checkpoint::Checkpoint;
use crate::experiment::{Dataset, ExperimentSpec, Split};
use crate::tables::{opt_real, real, TableWriter, EVAL_HEADER, STATS_HEADER};

/// Output directory of a run: `out/run_id`, created if missing.
pub fn run_dir(spec: &ExperimentSpec) -> Result<PathBuf> {
    let dir = spec.out.join(&spec.run_id);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Seed of the training stream (masks); parameters are drawn from the spec seed itself.
pub fn training_rng(seed: u64) -> RngStream {
    RngStream::derive(seed, 1)
}

pub fn stats_row(rec: &EpochRecord) -> Vec<String> {
    let s = &rec.stats;
    let v = rec.val.as_ref();
    let gates = s
        .gate_means
        .as_ref()
        .map(|g| g.iter().map(|&x| real(x)).collect::<Vec<_>>().join(";"))
        .unwrap_or_default();
    vec![
        s.epoch.to_string(),
        real(s.lr),
        real(s.train_nll),
        opt_real(v.map(|e| e.nll)),
        opt_real(v.map(|e| e.metrics.bpc)),
        opt_real(v.map(|e| e.metrics.perplexity)),
        real(s.grad_norm_mean),
        real(s.grad_norm_max),
        gates,
    ]
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub dir: PathBuf,
    pub report: FitReport,
    /// Validation score of the best checkpoint, if there is a validation split.
    pub final_val: Option<Evaluation>,
}

impl TrainOutcome {
    /// Mean training NLL of the last epoch run.
    pub fn final_train_nll(&self) -> Option<f64> {
        self.report.records.last().map(|r| r.stats.train_nll)
    }
}

fn checkpoint(net: &Network, spec: &ExperimentSpec, epoch: usize) -> Checkpoint {
    Checkpoint::new(net.clone())
        .with_meta("run_id", &spec.run_id)
        .with_meta("epoch", epoch)
}

/// Train per `spec`, writing `stats.csv`, `best.ckpt` and `final.ckpt` under
/// the run directory. A numeric fault keeps every row written so far and the
/// checkpoints, then returns an error.
pub fn cmd_train(spec: &ExperimentSpec) -> Result<TrainOutcome> {
    let data = Dataset::load(spec)?;
    let cfg = &spec.train;
    let train = data
        .prepare(Split::Train, cfg.batch_size, cfg.seq_len)?
        .ok_or_else(|| anyhow!("training split is too small for batch_size {} and seq_len {}", cfg.batch_size, cfg.seq_len))?;
    let val = data.prepare(Split::Val, cfg.batch_size, cfg.seq_len)?;
    let mut net = spec.build_network(data.input_kind())?;
    let initial = net.clone();
    let dir = run_dir(spec)?;

    let mut stats = TableWriter::create(&dir.join("stats.csv"), STATS_HEADER)?;
    let report = fit(
        &mut net,
        train.data(),
        val.as_ref().map(|v| v.data()),
        cfg,
        &mut training_rng(cfg.seed),
        spec.patience,
        |rec| {
            stats
                .row(stats_row(rec))
                .map_err(|e| rhn_core::Error::Data(format!("writing stats: {e:#}")))
        },
    )?;

    let best = report.best.as_ref().unwrap_or(&initial);
    checkpoint(best, spec, report.best_epoch.unwrap_or(0)).save(dir.join("best.ckpt"))?;
    checkpoint(&net, spec, report.epochs_run()).save(dir.join("final.ckpt"))?;
    if let Some(msg) = &report.diverged {
        bail!("training diverged after {} completed epochs: {msg}", report.epochs_run());
    }
    let final_val = val.as_ref().map(|v| evaluate(best, v.data())).transpose()?;
    Ok(TrainOutcome { dir, report, final_val })
}

/// Score a checkpoint on one split of the spec's dataset and write `eval.csv`.
pub fn cmd_eval(spec: &ExperimentSpec, ckpt: &Path, split: Split) -> Result<Evaluation> {
    let net = Checkpoint::load(ckpt)?.network;
    let data = Dataset::load(spec)?;
    if data.input_kind() != net.input {
        bail!(
            "checkpoint expects {:?} but the dataset provides {:?}",
            net.input,
            data.input_kind()
        );
    }
    let prepared = data
        .prepare(split, spec.train.batch_size, spec.train.seq_len)?
        .ok_or_else(|| anyhow!("{} split is too small to score", split.as_str()))?;
    let e = evaluate(&net, prepared.data())?;
    let dir = run_dir(spec)?;
    let mut w = TableWriter::create(&dir.join("eval.csv"), EVAL_HEADER)?;
    w.row([
        split.as_str().to_string(),
        e.count.to_string(),
        real(e.nll),
        real(e.metrics.bpc),
        real(e.metrics.perplexity),
    ])?;
    Ok(e)
}
