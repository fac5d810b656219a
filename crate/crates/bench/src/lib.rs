//! Input generators shared by the benchmarks.

use neuroscope_core::{ActivationMatrix, MembershipMatrix, NodeId};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Uniform activations in `[-1, 1)`.
pub fn random_activations(rows: usize, cols: usize, seed: u64) -> ActivationMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let values = (0..rows * cols).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    ActivationMatrix::new(NodeId::from("bench"), rows, cols, values).expect("finite values")
}

/// `classes` disjoint label subsets plus `extra` overlapping subsets, each
/// holding a fixed fraction of the rows.
pub fn random_membership(rows: usize, classes: usize, extra: usize, seed: u64) -> MembershipMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lists = vec![Vec::new(); classes + extra];
    for i in 0..rows {
        lists[rng.random_range(0..classes)].push(i);
        for list in lists.iter_mut().skip(classes) {
            if rng.random_bool(0.25) {
                list.push(i);
            }
        }
    }
    let ids = (0..classes + extra).map(|k| format!("s{k}")).collect();
    MembershipMatrix::from_members(ids, lists).expect("distinct ids")
}

/// Flattened `n x dim` standard normal-ish data (sum of uniforms).
pub fn random_points(n: usize, dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * dim)
        .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).sum())
        .collect()
}
