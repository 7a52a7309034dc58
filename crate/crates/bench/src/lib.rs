//! Shared inputs for the benchmarks.

use std::sync::Arc;

use nehari::coupling::{CouplingSpec, Decomposition};
use nehari::energy::{Field, System};
use nehari::grid::Grid;

/// Competing pair on the unit disk with `n` nodes per axis and a smooth positive state.
pub fn disk_pair(n: usize) -> (Arc<Grid>, System, Field) {
    let g = Arc::new(Grid::disk(1.0, n).expect("valid disk"));
    let spec = CouplingSpec::new(vec![vec![1.0, -1.0], vec![-1.0, 1.0]], vec![1.0, 1.0]).expect("valid coupling");
    let sys = System::new(spec, Decomposition::full(2).expect("valid decomposition")).expect("consistent system");
    let u = Field::from_fn(g.clone(), 2, |i, x, y| {
        let cx = if i == 0 { 0.4 } else { -0.4 };
        3.0 * (-((x - cx).powi(2) + y * y) / 0.1).exp()
    });
    (g, sys, u)
}
