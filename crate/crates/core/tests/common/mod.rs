#![allow(dead_code)]

use neuromerge::{Activation, FcLayer, Network};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_layer(n_in: usize, n_out: usize, act: Activation, rng: &mut ChaCha8Rng) -> FcLayer {
    let w = (0..n_in * n_out)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let b = (0..n_out).map(|_| rng.random_range(-0.5..0.5)).collect();
    FcLayer::new(n_in, n_out, w, b, act).unwrap()
}

/// Fully connected net with `hidden` on every layer except an identity output.
pub fn random_net(sizes: &[usize], hidden: Activation, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let last = sizes.len() - 2;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let act = if k == last {
                Activation::Identity
            } else {
                hidden
            };
            random_layer(w[0], w[1], act, &mut rng)
        })
        .collect();
    Network::new(layers).unwrap()
}

pub fn random_inputs(dim: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect()
}

/// Copies hidden neuron `src` of `layer` over neuron `dst`, so the two are
/// exact duplicates.
pub fn duplicate_neuron(net: &Network, layer: usize, dst: usize, src: usize) -> Network {
    let mut layers: Vec<FcLayer> = net.layers().to_vec();
    let l = &layers[layer];
    let mut w = l.weights().to_vec();
    let mut b = l.bias().to_vec();
    let n_in = l.n_in();
    let row = l.row(src).to_vec();
    w[dst * n_in..(dst + 1) * n_in].copy_from_slice(&row);
    b[dst] = b[src];
    layers[layer] = FcLayer::new(n_in, l.n_out(), w, b, l.activation()).unwrap();
    Network::new(layers).unwrap()
}

/// Straightforward triple loop forward pass.
pub fn naive_forward(net: &Network, x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    for layer in net.layers() {
        let mut out = vec![0.0; layer.n_out()];
        for (k, o) in out.iter_mut().enumerate() {
            let mut s = layer.bias()[k];
            for (j, v) in a.iter().enumerate() {
                s += layer.weight(k, j) * v;
            }
            *o = layer.activation().apply(s);
        }
        a = out;
    }
    a
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
