//! Random-search optimisation sweeps and fixed-budget depth sweeps.

use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use rhn_core::numerics::RngStream;
use rhn_core::train::{evaluate, fit};
use rhn_core::{Family, InputKind, Network};

use crate::checkpoint::Checkpoint;
use crate::config::{ConfigError, ConfigResult, Flag, KeyValues};
use crate::experiment::{Dataset, ExperimentSpec, InitKind, Prepared, Split};
use crate::run::{run_dir, training_rng};
use crate::tables::{opt_real, real, write_table, DEPTH_SWEEP_HEADER, SWEEP_HEADER};

pub const SWEEP_KEYS: &str = "\
sweep:    architectures (default rhn,dt), depths (default 1,2,4), budgets (one per depth; default is the
          census of an RHN of width `hidden` at that depth), n_settings (default 60), seeds (default `seed`),
          lr_range (default 1e-4,1), init_std_range (default 1e-8,1e-2), bias_choices (default 0,-1,-2,-3),
          save_checkpoints; patience defaults to 100 here";

pub const DEPTH_SWEEP_KEYS: &str = "\
depth sweep: depths (default 1,2,3,4,5), budget (required), seeds (default `seed`)";

/// Exact parameter count of `spec` at hidden width `n`.
pub fn census(spec: &ExperimentSpec, input: InputKind, n: usize) -> usize {
    let mut s = spec.clone();
    s.hidden = n;
    s.network_spec(input).param_count()
}

/// Largest hidden width whose census fits `budget`, if any width does.
pub fn largest_width(spec: &ExperimentSpec, input: InputKind, budget: usize) -> Option<usize> {
    if census(spec, input, 1) > budget {
        return None;
    }
    // The census grows by at least one per unit of width.
    let (mut lo, mut hi) = (1, budget.max(1));
    while lo < hi {
        let mid = lo + (hi - lo + 1) / 2;
        if census(spec, input, mid) <= budget {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    Some(lo)
}

fn with_arch(base: &ExperimentSpec, family: Family, depth: usize) -> ExperimentSpec {
    let mut s = base.clone();
    s.family = family;
    s.depth = if family == Family::Rnn { 1 } else { depth };
    s
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("building the worker pool")
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn range(kv: &mut KeyValues, key: &str, default: (f64, f64)) -> ConfigResult<(f64, f64)> {
    match kv.take_list::<f64>(key)? {
        None => Ok(default),
        Some(v) if v.len() == 2 && v[0] > 0.0 && v[0] <= v[1] && v[1].is_finite() => Ok((v[0], v[1])),
        Some(v) => Err(invalid(format!("{key} must be two ordered positive numbers, got {v:?}"))),
    }
}

fn seeds(kv: &mut KeyValues, base: &ExperimentSpec) -> ConfigResult<Vec<u64>> {
    let s = kv.take_list::<u64>("seeds")?.unwrap_or_else(|| vec![base.train.seed]);
    if s.is_empty() {
        return Err(invalid("seeds must not be empty"));
    }
    Ok(s)
}

fn depths(kv: &mut KeyValues, default: &[usize]) -> ConfigResult<Vec<usize>> {
    let d = kv.take_list::<usize>("depths")?.unwrap_or_else(|| default.to_vec());
    if d.is_empty() || d.contains(&0) {
        return Err(invalid("depths must be a non-empty list of positive integers"));
    }
    Ok(d)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub base: ExperimentSpec,
    pub architectures: Vec<Family>,
    pub depths: Vec<usize>,
    pub budgets: Option<Vec<usize>>,
    pub n_settings: usize,
    pub seeds: Vec<u64>,
    pub lr_range: (f64, f64),
    pub init_std_range: (f64, f64),
    pub bias_choices: Vec<f64>,
    pub save_checkpoints: bool,
}

impl SweepSpec {
    pub fn take_from(kv: &mut KeyValues) -> ConfigResult<Self> {
        if !kv.contains("patience") {
            kv.set("patience", 100);
        }
        let base = ExperimentSpec::take_from(kv)?;
        let architectures = match kv.take_list::<String>("architectures")? {
            None => vec![Family::Rhn, Family::Dt],
            Some(v) => v
                .iter()
                .map(|s| s.parse().map_err(|e: rhn_core::Error| invalid(e.to_string())))
                .collect::<ConfigResult<_>>()?,
        };
        let depths = depths(kv, &[1, 2, 4])?;
        if architectures.is_empty() {
            return Err(invalid("architectures must not be empty"));
        }
        if architectures.contains(&Family::Rnn) && depths.iter().any(|&d| d > 1) {
            return Err(invalid("rnn has no recurrence depth; sweep it with depths = 1 only"));
        }
        let budgets = kv.take_list::<usize>("budgets")?;
        if let Some(b) = &budgets {
            if b.len() != depths.len() {
                return Err(invalid(format!("{} budgets for {} depths", b.len(), depths.len())));
            }
        }
        let n_settings = kv.take_or("n_settings", 60)?;
        if n_settings == 0 {
            return Err(invalid("n_settings must be >= 1"));
        }
        let spec = Self {
            architectures,
            depths,
            budgets,
            n_settings,
            seeds: seeds(kv, &base)?,
            lr_range: range(kv, "lr_range", (1e-4, 1.0))?,
            init_std_range: range(kv, "init_std_range", (1e-8, 1e-2))?,
            bias_choices: kv.take_list("bias_choices")?.unwrap_or_else(|| vec![0.0, -1.0, -2.0, -3.0]),
            save_checkpoints: kv.take_or("save_checkpoints", Flag(false))?.0,
            base,
        };
        if spec.bias_choices.is_empty() {
            return Err(invalid("bias_choices must not be empty"));
        }
        Ok(spec)
    }

    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut kv = KeyValues::parse(text)?;
        let s = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(s)
    }

    /// Budget for the `i`-th depth.
    pub fn budget(&self, i: usize, input: InputKind) -> usize {
        match &self.budgets {
            Some(b) => b[i],
            None => census(&with_arch(&self.base, Family::Rhn, self.depths[i]), input, self.base.hidden),
        }
    }
}

/// One random hyperparameter setting, shared by every architecture, depth and seed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepSetting {
    pub index: usize,
    pub lr: f64,
    pub init_std: f64,
    pub transform_bias: f64,
}

/// Setting `index`, drawn from its own stream of `seed`.
pub fn sample_setting(sweep: &SweepSpec, seed: u64, index: usize) -> SweepSetting {
    let mut rng = RngStream::derive(seed, index as u64);
    let lr = rng.log_uniform(sweep.lr_range.0, sweep.lr_range.1);
    let init_std = rng.log_uniform(sweep.init_std_range.0, sweep.init_std_range.1);
    let transform_bias = sweep.bias_choices[rng.below(sweep.bias_choices.len())];
    SweepSetting {
        index,
        lr,
        init_std,
        transform_bias,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub architecture: Family,
    pub depth: usize,
    pub setting: SweepSetting,
    pub seed: u64,
    pub hidden: usize,
    pub params: usize,
    pub best_loss: f64,
    pub best_epoch: Option<usize>,
    pub epochs_run: usize,
    pub diverged: bool,
}

impl SweepRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.architecture.to_string(),
            self.depth.to_string(),
            self.setting.index.to_string(),
            self.seed.to_string(),
            self.hidden.to_string(),
            self.params.to_string(),
            real(self.setting.lr),
            real(self.setting.init_std),
            real(self.setting.transform_bias),
            real(self.best_loss),
            self.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            self.epochs_run.to_string(),
            u8::from(self.diverged).to_string(),
        ]
    }
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<SweepRow>,
}

/// Checkpoint file name of one sweep run.
pub fn sweep_checkpoint_name(family: Family, depth: usize, setting: usize, seed: u64) -> String {
    format!("{family}-d{depth}-k{setting}-s{seed}.ckpt")
}

struct Job {
    spec: ExperimentSpec,
    setting: SweepSetting,
    width: usize,
}

fn run_job(job: &Job, train: &Prepared, input: InputKind) -> Result<(SweepRow, Network)> {
    let s = &job.spec;
    let mut net = s.build_network(input)?;
    let initial = net.clone();
    let report = fit(
        &mut net,
        train.data(),
        None,
        &s.train,
        &mut training_rng(s.train.seed),
        s.patience,
        |_| Ok(()),
    )?;
    let row = SweepRow {
        architecture: s.family,
        depth: s.depth,
        setting: job.setting,
        seed: s.train.seed,
        hidden: job.width,
        params: net.param_count(),
        best_loss: report.best_loss,
        best_epoch: report.best_epoch,
        epochs_run: report.epochs_run(),
        diverged: report.diverged.is_some(),
    };
    Ok((row, report.best.unwrap_or(initial)))
}

/// Train every (architecture, depth, setting, seed) on the training split and
/// write `sweep.csv`, sorted by those keys. Diverged runs become flagged rows.
pub fn cmd_sweep(sweep: &SweepSpec, threads: usize) -> Result<SweepOutcome> {
    let base = &sweep.base;
    let data = Dataset::load(base)?;
    let input = data.input_kind();
    let train = data
        .prepare(Split::Train, base.train.batch_size, base.train.seq_len)?
        .ok_or_else(|| anyhow!("training split is too small"))?;
    let dir = run_dir(base)?;
    let ckpt_dir = dir.join("checkpoints");
    if sweep.save_checkpoints {
        std::fs::create_dir_all(&ckpt_dir)?;
    }

    let settings: Vec<SweepSetting> = (0..sweep.n_settings)
        .map(|k| sample_setting(sweep, base.train.seed, k))
        .collect();
    let mut jobs = Vec::new();
    for &family in &sweep.architectures {
        for (i, &depth) in sweep.depths.iter().enumerate() {
            let arch = with_arch(base, family, depth);
            let budget = sweep.budget(i, input);
            let width = largest_width(&arch, input, budget)
                .ok_or_else(|| anyhow!("budget {budget} is too small for {family} at depth {depth}"))?;
            for setting in &settings {
                for &seed in &sweep.seeds {
                    let mut spec = arch.clone();
                    spec.hidden = width;
                    spec.train.lr = setting.lr;
                    spec.init = InitKind::Gaussian;
                    spec.init_scale = setting.init_std;
                    spec.transform_bias = setting.transform_bias;
                    spec.train.seed = seed;
                    jobs.push(Job {
                        spec,
                        setting: *setting,
                        width,
                    });
                }
            }
        }
    }

    let results: Vec<Result<SweepRow>> = thread_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|job| {
                let (row, best) = run_job(job, &train, input)?;
                if sweep.save_checkpoints {
                    let name = sweep_checkpoint_name(row.architecture, row.depth, row.setting.index, row.seed);
                    Checkpoint::new(best).save(ckpt_dir.join(name))?;
                }
                Ok(row)
            })
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.architecture, r.depth, r.setting.index, r.seed));
    let cells: Vec<Vec<String>> = rows.iter().map(SweepRow::cells).collect();
    write_table(&dir.join("sweep.csv"), SWEEP_HEADER, &cells)?;
    Ok(SweepOutcome { dir, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthSweepSpec {
    pub base: ExperimentSpec,
    pub depths: Vec<usize>,
    pub budget: usize,
    pub seeds: Vec<u64>,
}

impl DepthSweepSpec {
    pub fn take_from(kv: &mut KeyValues) -> ConfigResult<Self> {
        let base = ExperimentSpec::take_from(kv)?;
        Ok(Self {
            depths: depths(kv, &[1, 2, 3, 4, 5])?,
            budget: kv.take_required("budget")?,
            seeds: seeds(kv, &base)?,
            base,
        })
    }

    pub fn parse(text: &str) -> ConfigResult<Self> {
        let mut kv = KeyValues::parse(text)?;
        let s = Self::take_from(&mut kv)?;
        kv.finish()?;
        Ok(s)
    }

    /// Width and census per depth, or an error naming the first depth that
    /// cannot fit the budget.
    pub fn widths(&self, input: InputKind) -> Result<Vec<(usize, usize)>> {
        self.depths
            .iter()
            .map(|&d| {
                let arch = with_arch(&self.base, self.base.family, d);
                let w = largest_width(&arch, input, self.budget).ok_or_else(|| {
                    anyhow!("budget {} is too small for depth {d} (width 1 needs {})", self.budget, census(&arch, input, 1))
                })?;
                Ok((w, census(&arch, input, w)))
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthRow {
    pub depth: usize,
    pub seed: u64,
    pub hidden: usize,
    pub params: usize,
    pub best_epoch: Option<usize>,
    pub val_nll: Option<f64>,
    pub val_bpc: Option<f64>,
    pub val_ppl: Option<f64>,
    pub diverged: bool,
}

impl DepthRow {
    pub fn cells(&self) -> Vec<String> {
        vec![
            self.depth.to_string(),
            self.seed.to_string(),
            self.hidden.to_string(),
            self.params.to_string(),
            self.best_epoch.map(|e| e.to_string()).unwrap_or_default(),
            opt_real(self.val_nll),
            opt_real(self.val_bpc),
            opt_real(self.val_ppl),
            u8::from(self.diverged).to_string(),
        ]
    }
}

#[derive(Debug)]
pub struct DepthSweepOutcome {
    pub dir: PathBuf,
    pub rows: Vec<DepthRow>,
}

/// For each depth, train the widest model within the budget and record the
/// validation score of its best epoch. Writes `depth_sweep.csv`.
pub fn cmd_depth_sweep(ds: &DepthSweepSpec, threads: usize) -> Result<DepthSweepOutcome> {
    let base = &ds.base;
    let data = Dataset::load(base)?;
    let input = data.input_kind();
    let widths = ds.widths(input)?;
    let cfg = &base.train;
    let train = data
        .prepare(Split::Train, cfg.batch_size, cfg.seq_len)?
        .ok_or_else(|| anyhow!("training split is too small"))?;
    let Some(val) = data.prepare(Split::Val, cfg.batch_size, cfg.seq_len)? else {
        bail!("validation split is too small to score");
    };
    let dir = run_dir(base)?;

    let jobs: Vec<(usize, usize, usize, u64)> = ds
        .depths
        .iter()
        .zip(&widths)
        .flat_map(|(&d, &(w, p))| ds.seeds.iter().map(move |&s| (d, w, p, s)))
        .collect();
    let results: Vec<Result<DepthRow>> = thread_pool(threads)?.install(|| {
        jobs.par_iter()
            .map(|&(depth, hidden, params, seed)| {
                let mut spec = with_arch(base, base.family, depth);
                spec.hidden = hidden;
                spec.train.seed = seed;
                let mut net = spec.build_network(input)?;
                let report = fit(
                    &mut net,
                    train.data(),
                    Some(val.data()),
                    &spec.train,
                    &mut training_rng(seed),
                    spec.patience,
                    |_| Ok(()),
                )?;
                let scored = report.best.as_ref().map(|b| evaluate(b, val.data())).transpose()?;
                Ok(DepthRow {
                    depth,
                    seed,
                    hidden,
                    params,
                    best_epoch: report.best_epoch,
                    val_nll: scored.as_ref().map(|e| e.nll),
                    val_bpc: scored.as_ref().map(|e| e.metrics.bpc),
                    val_ppl: scored.as_ref().map(|e| e.metrics.perplexity),
                    diverged: report.diverged.is_some(),
                })
            })
            .collect()
    });
    let mut rows = results.into_iter().collect::<Result<Vec<_>>>()?;
    rows.sort_by_key(|r| (r.depth, r.seed));
    let cells: Vec<Vec<String>> = rows.iter().map(DepthRow::cells).collect();
    write_table(&dir.join("depth_sweep.csv"), DEPTH_SWEEP_HEADER, &cells)?;
    Ok(DepthSweepOutcome { dir, rows })
}
