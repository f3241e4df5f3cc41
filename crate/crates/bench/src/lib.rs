//! Seeded fixtures shared by the benchmarks.

use rhn_core::numerics::{gaussian_matrix, Matrix, RngStream};
use rhn_core::{Batch, CellSpec, Family, InitScheme, InputKind, Network, NetworkSpec, StepData};

pub const VOCAB: usize = 50;

/// Symbol-level model with embedding width equal to `hidden`.
pub fn network(family: Family, hidden: usize, depth: usize) -> Network {
    NetworkSpec {
        cell: CellSpec::rhn(hidden, hidden, depth).with_family(family),
        input: InputKind::Symbols { vocab: VOCAB },
        tied: false,
    }
    .init(InitScheme::Uniform { scale: 0.04 }, &mut RngStream::new(0))
    .expect("fixture network")
}

pub fn batch(batch: usize, steps: usize) -> Batch {
    let mut rng = RngStream::new(1);
    let mut draw = || StepData::Symbols((0..batch).map(|_| rng.below(VOCAB)).collect());
    let inputs: Vec<StepData> = (0..steps).map(|_| draw()).collect();
    let targets: Vec<StepData> = (0..steps).map(|_| draw()).collect();
    Batch::new(inputs, targets)
}

pub fn matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian_matrix(&mut RngStream::new(seed), rows, cols, 1.0).expect("fixture matrix")
}
