//! Seeded networks shared by the benchmarks.

use neuromerge::{Activation, FcLayer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n_in -> hidden -> n_out` network with uniform random weights.
pub fn bench_net(n_in: usize, hidden: usize, n_out: usize, act: Activation, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layer = |a: usize, b: usize, act| {
        let w = (0..a * b).map(|_| rng.random_range(-1.0..1.0)).collect();
        let bias = (0..b).map(|_| rng.random_range(-0.5..0.5)).collect();
        FcLayer::new(a, b, w, bias, act).expect("valid layer")
    };
    let hidden_layer = layer(n_in, hidden, act);
    let out = layer(hidden, n_out, Activation::Identity);
    Network::new(vec![hidden_layer, out]).expect("valid network")
}
