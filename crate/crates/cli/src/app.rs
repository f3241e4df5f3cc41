//! Command-line front end.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use clap::{Parser, Subcommand};

use crate::analysis::{cmd_gates, cmd_lesion, gate_sequences, inspect, spectra, write_spectra, SpectraForm, SpectraOptions};
use crate::checkpoint::Checkpoint;
use crate::config::KeyValues;
use crate::experiment::{Dataset, ExperimentSpec, Split, EXPERIMENT_KEYS};
use crate::run::{cmd_eval, cmd_train, run_dir};
use crate::sweep::{cmd_depth_sweep, cmd_sweep, DepthSweepSpec, SweepSpec, DEPTH_SWEEP_KEYS, SWEEP_KEYS};

const AFTER_HELP: &str = "\
Configuration files hold one `key = value` per line; `#` starts a comment and
unknown keys are rejected. --seed and --out override the `seed` and `out` keys.
Outputs go to <out>/<run_id>/.

Keys:";

fn long_help() -> String {
    format!("{AFTER_HELP}\n{EXPERIMENT_KEYS}\n{SWEEP_KEYS}\n{DEPTH_SWEEP_KEYS}\n")
}

#[derive(Debug, Parser)]
#[command(name = "rhn", version, about = "Recurrent Highway Network experiments", after_long_help = long_help())]
pub struct Cli {
    /// Configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the `seed` key.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the `out` key.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model: writes stats.csv, best.ckpt and final.ckpt.
    Train,
    /// Score a checkpoint on a split of the configured dataset: writes eval.csv.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
    },
    /// Random hyperparameter search across architectures and depths: writes sweep.csv.
    Sweep,
    /// Fixed-budget sweep over recurrence depth: writes depth_sweep.csv.
    DepthSweep,
    /// Mean transform-gate activation per layer and step: writes gates.csv.
    Gates {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "val")]
        split: Split,
        /// Number of sequences to trace.
        #[arg(long, default_value_t = 4)]
        sequences: usize,
    },
    /// Training loss with each recurrence layer pushed to carry: writes lesion.csv.
    Lesion {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Jacobian discs and eigenvalues of a checkpoint, or of the configured
    /// model at initialisation: writes discs.csv, eigen.csv and summary.csv.
    Spectra {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Random state points in addition to the zero state.
        #[arg(long, default_value_t = 0)]
        points: usize,
        #[arg(long, default_value_t = 0.5)]
        state_scale: f64,
        /// `actual` (input and biases included) or `recurrent` (recurrent term only).
        #[arg(long, default_value = "actual")]
        form: SpectraForm,
    },
    /// Describe a checkpoint.
    CkptInspect { path: PathBuf },
}

impl Cli {
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(p) => KeyValues::load(p)?,
            None => KeyValues::default(),
        };
        if let Some(s) = self.seed {
            kv.set("seed", s);
        }
        if let Some(o) = &self.out {
            kv.set("out", o.display());
        }
        Ok(kv)
    }

    fn experiment(&self) -> Result<ExperimentSpec> {
        let mut kv = self.key_values()?;
        let spec = ExperimentSpec::take_from(&mut kv)?;
        kv.finish()?;
        Ok(spec)
    }
}

fn load_net(path: &Path) -> Result<rhn_core::Network> {
    Ok(Checkpoint::load(path).map_err(|e| anyhow!("{}: {e}", path.display()))?.network)
}

/// Run a parsed command line, returning the text to print.
pub fn execute(cli: &Cli) -> Result<String> {
    match &cli.command {
        Command::Train => {
            let spec = cli.experiment()?;
            let o = cmd_train(&spec)?;
            let mut msg = format!("wrote {}\n", o.dir.display());
            if let Some(nll) = o.final_train_nll() {
                let m = rhn_core::loss::metrics(nll);
                msg += &format!("final train nll {nll} bpc {} ppl {}\n", m.bpc, m.perplexity);
            }
            match &o.final_val {
                Some(v) => msg += &format!("final val nll {} bpc {} ppl {}\n", v.nll, v.metrics.bpc, v.metrics.perplexity),
                None => msg += "no validation split scored\n",
            }
            Ok(msg)
        }
        Command::Eval { checkpoint, split } => {
            let spec = cli.experiment()?;
            let e = cmd_eval(&spec, checkpoint, *split)?;
            Ok(format!(
                "{} nll {} bpc {} ppl {} over {} predictions\n",
                split.as_str(),
                e.nll,
                e.metrics.bpc,
                e.metrics.perplexity,
                e.count
            ))
        }
        Command::Sweep => {
            let mut kv = cli.key_values()?;
            let sweep = SweepSpec::take_from(&mut kv)?;
            kv.finish()?;
            let o = cmd_sweep(&sweep, cli.threads)?;
            let diverged = o.rows.iter().filter(|r| r.diverged).count();
            Ok(format!("wrote {} rows ({diverged} diverged) to {}\n", o.rows.len(), o.dir.join("sweep.csv").display()))
        }
        Command::DepthSweep => {
            let mut kv = cli.key_values()?;
            let ds = DepthSweepSpec::take_from(&mut kv)?;
            kv.finish()?;
            let o = cmd_depth_sweep(&ds, cli.threads)?;
            let mut msg = String::new();
            for r in &o.rows {
                msg += &format!(
                    "depth {} seed {} hidden {} params {} val bpc {}\n",
                    r.depth,
                    r.seed,
                    r.hidden,
                    r.params,
                    r.val_bpc.map_or("-".to_string(), |v| v.to_string())
                );
            }
            Ok(msg)
        }
        Command::Gates {
            checkpoint,
            split,
            sequences,
        } => {
            let spec = cli.experiment()?;
            let net = load_net(checkpoint)?;
            let data = Dataset::load(&spec)?;
            let seqs = gate_sequences(&data, *split, spec.train.seq_len, *sequences)?;
            let dir = run_dir(&spec)?;
            let act = cmd_gates(&net, &seqs, &dir)?;
            Ok(format!("traced {} sequences to {}\n", act.len(), dir.join("gates.csv").display()))
        }
        Command::Lesion { checkpoint } => {
            let spec = cli.experiment()?;
            let net = load_net(checkpoint)?;
            let data = Dataset::load(&spec)?;
            let train = data
                .prepare(Split::Train, spec.train.batch_size, spec.train.seq_len)?
                .ok_or_else(|| anyhow!("training split is too small"))?;
            let dir = run_dir(&spec)?;
            let rows = cmd_lesion(&net, train.data(), &dir)?;
            let mut msg = String::new();
            for r in rows {
                let label = if r.layer == 0 { "baseline".to_string() } else { format!("layer {}", r.layer) };
                msg += &format!("{label}: train nll {} (delta {})\n", r.train_nll, r.delta);
            }
            Ok(msg)
        }
        Command::Spectra {
            checkpoint,
            points,
            state_scale,
            form,
        } => {
            let spec = cli.experiment()?;
            let net = match checkpoint {
                Some(p) => load_net(p)?,
                None => spec.build_network(Dataset::load(&spec)?.input_kind())?,
            };
            let opts = SpectraOptions {
                random_points: *points,
                state_scale: *state_scale,
                form: *form,
                seed: spec.train.seed,
            };
            let pts = spectra(&net.cell, opts)?;
            let dir = run_dir(&spec)?;
            write_spectra(&pts, &dir)?;
            let failed = pts.iter().filter(|p| p.report.is_err()).count();
            Ok(format!("{} state points ({failed} failed) written to {}\n", pts.len(), dir.display()))
        }
        Command::CkptInspect { path } => inspect(path),
    }
}
