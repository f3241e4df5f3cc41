//! CSV outputs with fixed headers, and a strict reader for them.
//!
//! Reals are written in Rust's shortest round-trip form, so parsing a cell
//! back gives the exact value that was written. Missing values are empty.

use std::fs::File;
use std::path::Path;

use anyhow::{bail, Context, Result};

pub const STATS_HEADER: &[&str] = &[
    "epoch",
    "lr",
    "train_nll",
    "val_nll",
    "val_bpc",
    "val_ppl",
    "grad_norm_mean",
    "grad_norm_max",
    "gate_means",
];
pub const EVAL_HEADER: &[&str] = &["split", "count", "nll", "bpc", "perplexity"];
pub const SWEEP_HEADER: &[&str] = &[
    "architecture",
    "depth",
    "setting",
    "seed",
    "hidden",
    "params",
    "lr",
    "init_std",
    "transform_bias",
    "best_loss",
    "best_epoch",
    "epochs_run",
    "diverged",
];
pub const DEPTH_SWEEP_HEADER: &[&str] = &[
    "depth",
    "seed",
    "hidden",
    "params",
    "best_epoch",
    "val_nll",
    "val_bpc",
    "val_ppl",
    "diverged",
];
pub const GATES_HEADER: &[&str] = &["sequence", "layer", "step", "mean_transform"];
pub const LESION_HEADER: &[&str] = &["layer", "train_nll", "delta"];
pub const DISCS_HEADER: &[&str] = &["point", "row_index", "center_re", "radius"];
pub const EIGEN_HEADER: &[&str] = &["point", "re", "im"];
pub const SPECTRA_SUMMARY_HEADER: &[&str] = &[
    "point",
    "spectral_radius",
    "jacobian_norm",
    "sigma_max",
    "gamma",
    "bound",
    "mean_radius",
    "containment_gap",
    "status",
];

/// Row-at-a-time CSV writer that flushes after every row, so a crash leaves
/// every completed row on disk.
pub struct TableWriter {
    inner: csv::Writer<File>,
    width: usize,
}

impl TableWriter {
    pub fn create(path: &Path, header: &[&str]) -> Result<Self> {
        let mut inner = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        inner.write_record(header)?;
        inner.flush()?;
        Ok(Self {
            inner,
            width: header.len(),
        })
    }

    pub fn row<I, S>(&mut self, cells: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        let record = csv::ByteRecord::from_iter(cells);
        if record.len() != self.width {
            bail!("row has {} cells, table has {}", record.len(), self.width);
        }
        self.inner.write_byte_record(&record)?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Write a whole table at once.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = TableWriter::create(path, header)?;
    for r in rows {
        w.row(r)?;
    }
    Ok(())
}

/// Read a table, requiring exactly `header` and full-width rows.
pub fn read_table(path: &Path, header: &[&str]) -> Result<Vec<Vec<String>>> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if found != header {
        bail!("{}: header {:?}, expected {:?}", path.display(), found, header);
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec.with_context(|| format!("reading {}", path.display()))?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok(rows)
}

/// Shortest round-trip representation.
pub fn real(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_real(v: Option<f64>) -> String {
    v.map(real).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip_and_headers_are_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let vals = [0.1 + 0.2, 1e-300, -3.0, f64::INFINITY, 2f64.sqrt()];
        let rows: Vec<Vec<String>> = vals.iter().map(|&v| vec![real(v), String::new()]).collect();
        write_table(&p, &["a", "b"], &rows).unwrap();
        let back = read_table(&p, &["a", "b"]).unwrap();
        for (row, v) in back.iter().zip(vals) {
            assert_eq!(row[0].parse::<f64>().unwrap().to_bits(), v.to_bits());
            assert_eq!(row[1], "");
        }
        assert!(read_table(&p, &["a", "c"]).is_err());
        std::fs::write(&p, "a,b\n1,2\n3\n").unwrap();
        assert!(read_table(&p, &["a", "b"]).is_err());
    }
}
