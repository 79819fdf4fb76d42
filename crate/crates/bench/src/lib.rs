//! Shared inputs for the benchmarks.

use sdtseg::phantom::random_specs;
use sdtseg::{generate, Mask, Volume};

/// A deterministic phantom image and its truth mask on a cubic grid.
pub fn phantom(n: usize) -> (Volume, Mask) {
    generate(&random_specs(1, [n; 3], 11)[0]).expect("valid phantom")
}

/// The truth mask shifted by one voxel along x, a near-miss prediction.
pub fn shifted(m: &Mask) -> Mask {
    Mask::from_fn(*m.geometry(), |x, y, z| x > 0 && m.get(x - 1, y, z))
}
