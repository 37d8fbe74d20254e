//! Fixtures shared by the benchmarks.

use seplab_core::nn::{init_network, mlp_specs};
use seplab_core::{Dataset, Network, RandomStream};

/// `n` random 8-bit images of dimension `dim` with labels cycling over `classes`.
pub fn byte_dataset(n: usize, dim: usize, classes: u32, seed: u64) -> Dataset {
    let mut rng = RandomStream::new(seed);
    let pixels = (0..n * dim).map(|_| rng.below(256) as u8).collect();
    let labels = (0..n).map(|i| (i as u32 % classes) + 1).collect();
    Dataset::from_bytes(pixels, dim, labels, classes, "bench").expect("valid fixture")
}

pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Network {
    init_network(&mlp_specs(hidden, classes), input_dim, 0).expect("valid network")
}
