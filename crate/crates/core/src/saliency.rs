//! Weight-set similarity and the pairwise saliency matrix.
//!
//! For a hidden layer with neurons `i` and `j` the saliency of removing `j`
//! in favour of `i` is `s(i, j) = <a_j^2> * sim(i, j)^2`, where `<a_j^2>` is
//! the mean squared outgoing weight of `j` over the next layer. The second
//! index is always the removal candidate; the first index survives and
//! absorbs `j`'s outgoing column.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{dot, norm, Activation, FcLayer, Network, WeightSet};

/// Value stored on the diagonal so that self-pairs never win a minimum scan.
pub const DIAGONAL_SENTINEL: f64 = f64::MAX;

pub const DEFAULT_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SimilarityMode {
    /// `||W_i - W_j||` over weights and bias together.
    RawDifference,
    /// Direction difference of the normalized non-bias weights plus a
    /// relative bias difference.
    #[default]
    NormalizedHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    pub mode: SimilarityMode,
    /// Lower bound applied to both heuristic denominators.
    pub guard: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            mode: SimilarityMode::NormalizedHeuristic,
            guard: DEFAULT_GUARD,
        }
    }
}

impl SimilarityConfig {
    pub fn raw() -> Self {
        Self {
            mode: SimilarityMode::RawDifference,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.guard > 0.0 && self.guard.is_finite()) {
            return Err(Error::invalid(format!(
                "similarity guard must be positive and finite, got {}",
                self.guard
            )));
        }
        Ok(())
    }
}

/// A similarity value with a flag for pairs where the measure is degenerate
/// (both weight-sets entirely zero).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub value: f64,
    pub degenerate: bool,
}

fn check_len(wi: &WeightSet, wj: &WeightSet) -> Result<()> {
    if wi.len() != wj.len() {
        return Err(Error::Dimension {
            expected: wi.len(),
            got: wj.len(),
        });
    }
    Ok(())
}

/// `||[W'_i, b_i] - [W'_j, b_j]||_2`.
pub fn raw_epsilon(wi: &WeightSet, wj: &WeightSet) -> Result<f64> {
    check_len(wi, wj)?;
    Ok(raw_epsilon_sq(&wi.weights, wi.bias, &wj.weights, wj.bias).sqrt())
}

fn raw_epsilon_sq(wi: &[f64], bi: f64, wj: &[f64], bj: f64) -> f64 {
    let db = bi - bj;
    wi.iter()
        .zip(wj)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        + db * db
}

/// `||n_i - n_j|| / ||W'_i + W'_j|| + |b_i - b_j| / |b_i + b_j|`, with `n_k`
/// the unit-normalized non-bias weights and both denominators clamped below
/// by `cfg.guard`. A zero weight row normalizes to the zero vector.
pub fn heuristic_similarity(
    wi: &WeightSet,
    wj: &WeightSet,
    cfg: &SimilarityConfig,
) -> Result<Similarity> {
    check_len(wi, wj)?;
    cfg.validate()?;
    let ni = wi.weight_norm();
    let nj = wj.weight_norm();
    Ok(heuristic_inner(
        &wi.weights,
        ni,
        wi.bias,
        &wj.weights,
        nj,
        wj.bias,
        cfg.guard,
    ))
}

fn heuristic_inner(
    wi: &[f64],
    ni: f64,
    bi: f64,
    wj: &[f64],
    nj: f64,
    bj: f64,
    guard: f64,
) -> Similarity {
    let inv_i = if ni > 0.0 { 1.0 / ni } else { 0.0 };
    let inv_j = if nj > 0.0 { 1.0 / nj } else { 0.0 };
    let mut diff_sq = 0.0;
    let mut sum_sq = 0.0;
    for (a, b) in wi.iter().zip(wj) {
        let d = a * inv_i - b * inv_j;
        diff_sq += d * d;
        let s = a + b;
        sum_sq += s * s;
    }
    let weight_term = diff_sq.sqrt() / sum_sq.sqrt().max(guard);
    let bias_term = (bi - bj).abs() / (bi + bj).abs().max(guard);
    Similarity {
        value: weight_term + bias_term,
        degenerate: ni == 0.0 && nj == 0.0 && bi == 0.0 && bj == 0.0,
    }
}

/// Mean over next-layer neurons of the squared outgoing weight of neuron `j`.
pub fn mean_outgoing_square(next_layer: &FcLayer, j: usize) -> Result<f64> {
    if j >= next_layer.n_in() {
        return Err(Error::NeuronOutOfRange {
            index: j,
            len: next_layer.n_in(),
        });
    }
    Ok(mean_sq_unchecked(next_layer, j))
}

fn mean_sq_unchecked(next_layer: &FcLayer, j: usize) -> f64 {
    let n = next_layer.n_out();
    (0..n)
        .map(|k| {
            let a = next_layer.weight(k, j);
            a * a
        })
        .sum::<f64>()
        / n as f64
}

/// Pairwise saliencies of one hidden layer, indexed by the layer's original
/// neuron numbering. Removed neurons stay in the index space but are marked
/// dead, and a position list maps live original indices to their current row in the
/// (compacted) network.
#[derive(Debug, Clone)]
pub struct SaliencyMatrix {
    layer_index: usize,
    n: usize,
    mode: SimilarityMode,
    values: Vec<f64>,
    sim_sq: Vec<f64>,
    mean_sq: Vec<f64>,
    live: Vec<bool>,
    order: Vec<usize>,
    degenerate_pairs: usize,
    steps: usize,
}

impl SaliencyMatrix {
    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn mode(&self) -> SimilarityMode {
        self.mode
    }

    /// Size of the original layer.
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn n_live(&self) -> usize {
        self.order.len()
    }

    pub fn is_live(&self, i: usize) -> bool {
        self.live.get(i).copied().unwrap_or(false)
    }

    /// Live original indices in current network row order.
    pub fn live_indices(&self) -> &[usize] {
        &self.order
    }

    /// Current row of original neuron `i` in the pruned layer.
    pub fn position_of(&self, i: usize) -> Option<usize> {
        if !self.is_live(i) {
            return None;
        }
        self.order.iter().position(|&o| o == i)
    }

    /// `s(i, j)`; the diagonal holds [`DIAGONAL_SENTINEL`].
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    /// Squared similarity of the pair, which surgery never changes.
    pub fn similarity_sq(&self, i: usize, j: usize) -> f64 {
        self.sim_sq[i * self.n + j]
    }

    pub fn mean_square(&self, j: usize) -> f64 {
        self.mean_sq[j]
    }

    /// Number of pairs whose heuristic similarity was degenerate.
    pub fn degenerate_pairs(&self) -> usize {
        self.degenerate_pairs
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Minimum over live off-diagonal entries as `(kept, removed, saliency)`.
    /// Ties go to the smallest removed index, then the smallest kept index.
    pub fn argmin(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for j in (0..self.n).filter(|&j| self.live[j]) {
            for i in (0..self.n).filter(|&i| self.live[i]) {
                if i == j {
                    continue;
                }
                let s = self.get(i, j);
                if best.is_none_or(|(_, _, b)| s < b) {
                    best = Some((i, j, s));
                }
            }
        }
        best
    }

    /// Marks `j` dead and drops it from the position map.
    pub(crate) fn remove(&mut self, j: usize) {
        self.live[j] = false;
        self.order.retain(|&o| o != j);
        self.steps += 1;
    }

    /// Recomputes column `i` after its outgoing weights changed.
    pub(crate) fn refresh_column(&mut self, i: usize, next_layer: &FcLayer) {
        let pos = self
            .position_of(i)
            .expect("refresh_column called on a dead neuron");
        self.mean_sq[i] = mean_sq_unchecked(next_layer, pos);
        for &k in &self.order {
            if k != i {
                self.values[k * self.n + i] = self.mean_sq[i] * self.sim_sq[k * self.n + i];
            }
        }
    }
}

/// Builds the full saliency matrix of hidden layer `layer_index`.
pub fn build_saliency_matrix(
    net: &Network,
    layer_index: usize,
    cfg: &SimilarityConfig,
) -> Result<SaliencyMatrix> {
    cfg.validate()?;
    net.check_hidden(layer_index)?;
    let layer = &net.layers()[layer_index];
    let next = &net.layers()[layer_index + 1];
    let n = layer.n_out();
    if n < 2 {
        return Err(Error::invalid(format!(
            "layer {layer_index} has {n} neuron(s); at least two are needed to form a pair"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|k| norm(layer.row(k))).collect();
    let mean_sq: Vec<f64> = (0..n).map(|j| mean_sq_unchecked(next, j)).collect();
    let mut sim_sq = vec![0.0; n * n];
    let mut degenerate_pairs = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            let (wi, bi) = (layer.row(i), layer.bias()[i]);
            let (wj, bj) = (layer.row(j), layer.bias()[j]);
            let sq = match cfg.mode {
                SimilarityMode::RawDifference => raw_epsilon_sq(wi, bi, wj, bj),
                SimilarityMode::NormalizedHeuristic => {
                    let s = heuristic_inner(wi, norms[i], bi, wj, norms[j], bj, cfg.guard);
                    if s.degenerate {
                        degenerate_pairs += 1;
                    }
                    s.value * s.value
                }
            };
            sim_sq[i * n + j] = sq;
            sim_sq[j * n + i] = sq;
        }
    }

    let mut values = vec![DIAGONAL_SENTINEL; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                values[i * n + j] = mean_sq[j] * sim_sq[i * n + j];
            }
        }
    }

    Ok(SaliencyMatrix {
        layer_index,
        n,
        mode: cfg.mode,
        values,
        sim_sq,
        mean_sq,
        live: vec![true; n],
        order: (0..n).collect(),
        degenerate_pairs,
        steps: 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ContractionReport {
    pub samples: usize,
    pub violations: usize,
}

/// Samples `(p, q)` uniformly from `[-range, range]^2` and counts violations
/// of `(h(p) - h(q))^2 <= (p - q)^2`.
pub fn verify_contraction(
    activation: Activation,
    n_samples: usize,
    range: f64,
    seed: u64,
) -> ContractionReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violations = (0..n_samples)
        .filter(|_| {
            let p: f64 = rng.random_range(-range..=range);
            let q: f64 = rng.random_range(-range..=range);
            let dh = activation.apply(p) - activation.apply(q);
            dh * dh > (p - q) * (p - q)
        })
        .count();
    ContractionReport {
        samples: n_samples,
        violations,
    }
}

/// One input's check of the output-change bound for a single merge.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundSample {
    pub x: Vec<f64>,
    pub z_full: Vec<f64>,
    pub z_pruned: Vec<f64>,
    /// `<(z_full - z_pruned)^2>` over output neurons.
    pub gap: f64,
    /// `<a_j^2> * (eps . X)^2`, the bound before Cauchy-Schwarz.
    pub dot_bound: f64,
    /// `<a_j^2> * ||eps||^2 * ||X||^2`.
    pub bound_value: f64,
    /// `||X||^2` with the bias input absorbed, i.e. `||x||^2 + 1`.
    pub x_norm_sq: f64,
}

impl BoundSample {
    // `z_full - z_pruned` is a difference of outputs, so its rounding error
    // scales with the outputs rather than with the change itself.
    const ROUNDING_ULPS: f64 = 16.0;
    const REL_SLACK: f64 = 1e-12;

    /// `gap <= dot_bound <= bound_value`, up to rounding slack.
    pub fn holds(&self) -> bool {
        let scale = self
            .z_full
            .iter()
            .chain(&self.z_pruned)
            .fold(1.0f64, |m, z| m.max(z.abs()));
        let delta = Self::ROUNDING_ULPS * f64::EPSILON * scale;
        self.gap.sqrt() <= self.dot_bound.sqrt() + delta
            && self.dot_bound <= self.bound_value * (1.0 + Self::REL_SLACK)
    }
}

/// Merges neuron `j` into `i` (with surgery) in the last hidden layer and
/// checks the output change against the raw-difference bound for each input.
///
/// `i` and `j` are current row indices. The bias is treated as a weight on a
/// constant input of 1, so `||X||^2 = ||x||^2 + 1`.
pub fn verify_bound(
    net: &Network,
    layer_index: usize,
    i: usize,
    j: usize,
    xs: &[Vec<f64>],
    mode: SimilarityMode,
) -> Result<Vec<BoundSample>> {
    if mode != SimilarityMode::RawDifference {
        return Err(Error::invalid(
            "the output-change bound is only established for raw-difference similarity",
        ));
    }
    net.check_hidden(layer_index)?;
    if layer_index + 2 != net.layers().len() {
        return Err(Error::invalid(
            "bound verification needs the pruned layer to feed the output layer directly",
        ));
    }
    let layer = &net.layers()[layer_index];
    if layer.activation() == Activation::Identity {
        return Err(Error::invalid("bound verification needs relu or sigmoid"));
    }
    let n = layer.n_out();
    for idx in [i, j] {
        if idx >= n {
            return Err(Error::NeuronOutOfRange { index: idx, len: n });
        }
    }
    if i == j {
        return Err(Error::invalid("kept and removed neuron must differ"));
    }

    let mut pruned = net.clone();
    pruned.layer_mut(layer_index + 1).add_column(i, j);
    pruned.delete_neuron_in_place(layer_index, j)?;

    let next = &net.layers()[layer_index + 1];
    let a_sq = mean_sq_unchecked(next, j);
    let eps_w: Vec<f64> = layer
        .row(j)
        .iter()
        .zip(layer.row(i))
        .map(|(a, b)| a - b)
        .collect();
    let eps_b = layer.bias()[j] - layer.bias()[i];
    let eps_sq = raw_epsilon_sq(layer.row(i), layer.bias()[i], layer.row(j), layer.bias()[j]);

    xs.iter()
        .map(|x| {
            let z_full = net.forward(x)?;
            let z_pruned = pruned.forward(x)?;
            let gap = z_full
                .iter()
                .zip(&z_pruned)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                / z_full.len() as f64;
            let proj = dot(&eps_w, x) + eps_b;
            let x_norm_sq = dot(x, x) + 1.0;
            Ok(BoundSample {
                x: x.clone(),
                z_full,
                z_pruned,
                gap,
                dot_bound: a_sq * proj * proj,
                bound_value: a_sq * eps_sq * x_norm_sq,
                x_norm_sq,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ws(w: &[f64], b: f64) -> WeightSet {
        WeightSet::new(w.to_vec(), b)
    }

    #[test]
    fn raw_epsilon_cases() {
        assert_eq!(
            raw_epsilon(&ws(&[1.0, 2.0], 3.0), &ws(&[1.0, 2.0], 3.0)).unwrap(),
            0.0
        );
        let e = raw_epsilon(&ws(&[1.0, 0.0], 0.0), &ws(&[0.0, 1.0], 0.0)).unwrap();
        assert_eq!(e, 2f64.sqrt());
        assert!(raw_epsilon(&ws(&[1.0], 0.0), &ws(&[1.0, 2.0], 0.0)).is_err());
    }

    #[test]
    fn heuristic_identical_is_zero() {
        let a = ws(&[0.3, -1.2, 4.0], 0.7);
        let s = heuristic_similarity(&a, &a, &SimilarityConfig::default()).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(!s.degenerate);
    }

    #[test]
    fn heuristic_scaled_copy() {
        let a = ws(&[3.0, 4.0], 2.0);
        let b = ws(&[2.7, 3.6], 1.8);
        let s = heuristic_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        // Direction term vanishes; bias term is 0.2 / 3.8.
        assert!((s.value - 0.2 / 3.8).abs() < 1e-12, "{}", s.value);
        assert!((s.value - 0.0526).abs() < 1e-4);
    }

    #[test]
    fn heuristic_antiparallel_is_finite() {
        let a = ws(&[1.0, 0.0], 1.0);
        let b = ws(&[-1.0, 0.0], -1.0);
        let s = heuristic_similarity(&a, &b, &SimilarityConfig::default()).unwrap();
        assert!(s.value.is_finite());
        assert!(s.value > 1e11);
    }

    #[test]
    fn heuristic_all_zero_is_degenerate() {
        let z = ws(&[0.0, 0.0], 0.0);
        let s = heuristic_similarity(&z, &z, &SimilarityConfig::default()).unwrap();
        assert_eq!(s.value, 0.0);
        assert!(s.degenerate);
    }

    #[test]
    fn guard_must_be_positive() {
        let cfg = SimilarityConfig {
            guard: 0.0,
            ..Default::default()
        };
        let a = ws(&[1.0], 1.0);
        assert!(heuristic_similarity(&a, &a, &cfg).is_err());
    }

    #[test]
    fn mean_outgoing_square_cases() {
        let single = FcLayer::from_rows(&[vec![2.0]], vec![0.0], Activation::Identity).unwrap();
        assert_eq!(mean_outgoing_square(&single, 0).unwrap(), 4.0);
        let alt = FcLayer::from_rows(
            &[vec![1.0], vec![-1.0], vec![1.0], vec![-1.0]],
            vec![0.0; 4],
            Activation::Identity,
        )
        .unwrap();
        assert_eq!(mean_outgoing_square(&alt, 0).unwrap(), 1.0);
        assert!(mean_outgoing_square(&alt, 1).is_err());
    }

    fn dup_net() -> Network {
        let hidden = FcLayer::from_rows(
            &[vec![0.5, -0.25], vec![0.5, -0.25], vec![1.0, 1.0]],
            vec![0.1, 0.1, -0.3],
            Activation::Relu,
        )
        .unwrap();
        let out = FcLayer::from_rows(
            &[vec![0.3, 0.7, 0.0], vec![1.0, -2.0, 0.0]],
            vec![0.0, 0.5],
            Activation::Identity,
        )
        .unwrap();
        Network::new(vec![hidden, out]).unwrap()
    }

    #[test]
    fn matrix_duplicate_and_dead_columns() {
        let net = dup_net();
        for cfg in [SimilarityConfig::default(), SimilarityConfig::raw()] {
            let m = build_saliency_matrix(&net, 0, &cfg).unwrap();
            assert_eq!(m.get(0, 1), 0.0);
            assert_eq!(m.get(1, 0), 0.0);
            // Neuron 2 has an all-zero outgoing column.
            assert_eq!(m.get(0, 2), 0.0);
            assert_eq!(m.get(1, 2), 0.0);
            assert_eq!(m.get(2, 2), DIAGONAL_SENTINEL);
        }
    }

    #[test]
    fn matrix_rejects_single_neuron_and_output_layer() {
        let hidden = FcLayer::from_rows(&[vec![1.0]], vec![0.0], Activation::Relu).unwrap();
        let out = FcLayer::from_rows(&[vec![1.0]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(vec![hidden, out]).unwrap();
        assert!(build_saliency_matrix(&net, 0, &SimilarityConfig::default()).is_err());
        assert!(matches!(
            build_saliency_matrix(&dup_net(), 1, &SimilarityConfig::default()),
            Err(Error::OutputLayer(1))
        ));
    }

    #[test]
    fn argmin_tie_break() {
        let net = dup_net();
        let m = build_saliency_matrix(&net, 0, &SimilarityConfig::default()).unwrap();
        // s(1,0) = s(0,1) = s(0,2) = s(1,2) = 0: smallest removed index wins.
        assert_eq!(m.argmin(), Some((1, 0, 0.0)));
    }

    #[test]
    fn contraction_hand_checks() {
        let relu = Activation::Relu;
        let d = relu.apply(3.0) - relu.apply(-2.0);
        assert_eq!(d * d, 9.0);
        assert!(d * d <= 25.0);
        let sig = Activation::Sigmoid;
        assert_eq!(sig.apply(0.4) - sig.apply(0.4), 0.0);
        for act in [Activation::Relu, Activation::Sigmoid] {
            assert_eq!(verify_contraction(act, 10_000, 20.0, 1).violations, 0);
        }
    }

    #[test]
    fn bound_exact_duplicate_is_zero() {
        let net = dup_net();
        let xs = vec![vec![0.3, -2.0], vec![5.0, 1.0]];
        let samples = verify_bound(&net, 0, 0, 1, &xs, SimilarityMode::RawDifference).unwrap();
        for s in samples {
            assert_eq!(s.bound_value, 0.0);
            assert!(s.gap <= 1e-28);
            assert!(s.holds());
        }
    }

    #[test]
    fn bound_zero_input_zero_bias() {
        let hidden = FcLayer::from_rows(
            &[vec![1.0, 2.0], vec![-1.0, 0.5]],
            vec![0.0, 0.0],
            Activation::Sigmoid,
        )
        .unwrap();
        let out = FcLayer::from_rows(&[vec![1.5, -0.5]], vec![0.0], Activation::Identity).unwrap();
        let net = Network::new(vec![hidden, out]).unwrap();
        let s = &verify_bound(
            &net,
            0,
            0,
            1,
            &[vec![0.0, 0.0]],
            SimilarityMode::RawDifference,
        )
        .unwrap()[0];
        assert_eq!(s.gap, 0.0);
        assert_eq!(s.dot_bound, 0.0);
        assert!(s.holds());
    }

    #[test]
    fn bound_rejects_heuristic_mode() {
        let net = dup_net();
        assert!(verify_bound(&net, 0, 0, 1, &[], SimilarityMode::NormalizedHeuristic).is_err());
    }

    #[test]
    fn holds_flags_real_violations() {
        let sample = |gap: f64, dot_bound: f64, bound_value: f64| BoundSample {
            x: vec![1.0],
            z_full: vec![2.0],
            z_pruned: vec![2.0 - gap.sqrt()],
            gap,
            dot_bound,
            bound_value,
            x_norm_sq: 2.0,
        };
        assert!(sample(1e-6, 1e-6, 1.0).holds());
        assert!(sample(1e-6 * (1.0 + 1e-11), 1e-6, 1.0).holds());
        assert!(!sample(1.01e-6, 1e-6, 1.0).holds());
        assert!(!sample(1e-20, 0.0, 0.0).holds());
        assert!(!sample(0.5, 0.5, 0.49).holds());
    }
}
