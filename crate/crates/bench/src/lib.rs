//! Shared inputs for the benchmarks.

use diffpogan_core::Tensor;
use rand::Rng;

/// Hidden widths benchmarked: the desk-scale width and the full default.
pub fn widths() -> [usize; 2] {
    [64, 256]
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    Tensor::matrix(
        rows,
        cols,
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}
