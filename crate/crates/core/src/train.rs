//! Fixture training and evaluation.
//!
//! Plain minibatch SGD on softmax cross-entropy over identity logits. Weight
//! decay applies to non-bias weights only. Everything is driven by an explicit
//! seed so runs are reproducible bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};

use crate::error::{Error, Result};
use crate::net::{dot, Activation, FcLayer, Network};
use crate::prune::{LayerPruner, PrunePolicy};
use crate::saliency::SimilarityConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Labelled samples with a train/val/test assignment per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n_features: usize,
    n_classes: usize,
    features: Vec<f64>,
    labels: Vec<usize>,
    splits: Vec<Split>,
}

/// Fractions of samples assigned to train and validation; the rest is test.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.6,
            val: 0.2,
        }
    }
}

/// Two-class Gaussian blobs with optional label noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub n_samples: usize,
    pub n_features: usize,
    /// Leading features that carry the class signal.
    pub n_informative: usize,
    /// Distance between the two class means when each class is one blob;
    /// the typical spread of blob centers otherwise.
    pub separation: f64,
    /// Gaussian blobs per class. One blob per class gives a linearly
    /// separable problem up to noise.
    pub clusters_per_class: usize,
    /// Probability of flipping each label.
    pub label_noise: f64,
    pub splits: SplitFractions,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // Shaped like the 57-feature, ~4300-sample spam corpus.
        Self {
            n_samples: 4300,
            n_features: 57,
            n_informative: 4,
            separation: 4.0,
            clusters_per_class: 1,
            label_noise: 0.0,
            splits: SplitFractions::default(),
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CsvOptions {
    pub skip_header: bool,
    pub splits: SplitFractions,
    pub seed: u64,
}

impl Dataset {
    pub fn new(
        n_features: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        splits: Vec<Split>,
    ) -> Result<Self> {
        if n_features == 0 || labels.is_empty() {
            return Err(Error::invalid("dataset must have samples and features"));
        }
        if features.len() != n_features * labels.len() {
            return Err(Error::Dimension {
                expected: n_features * labels.len(),
                got: features.len(),
            });
        }
        if splits.len() != labels.len() {
            return Err(Error::Dimension {
                expected: labels.len(),
                got: splits.len(),
            });
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("dataset contains non-finite features"));
        }
        let n_classes = labels.iter().max().map_or(0, |m| m + 1).max(2);
        Ok(Self {
            n_features,
            n_classes,
            features,
            labels,
            splits,
        })
    }

    /// Assigns splits by a seeded shuffle.
    pub fn with_random_splits(
        n_features: usize,
        features: Vec<f64>,
        labels: Vec<usize>,
        fractions: SplitFractions,
        seed: u64,
    ) -> Result<Self> {
        if !(fractions.train > 0.0 && fractions.val >= 0.0 && fractions.train + fractions.val < 1.0)
        {
            return Err(Error::invalid(format!(
                "invalid split fractions {fractions:?}: need train > 0 and train + val < 1"
            )));
        }
        let n = labels.len();
        let splits = random_splits(n, fractions, seed);
        Self::new(n_features, features, labels, splits)
    }

    pub fn synthetic(cfg: &SyntheticConfig) -> Result<Self> {
        if cfg.n_informative == 0 || cfg.n_informative > cfg.n_features {
            return Err(Error::invalid("n_informative must be in 1..=n_features"));
        }
        if !(0.0..=0.5).contains(&cfg.label_noise) {
            return Err(Error::invalid("label_noise must be in [0, 0.5]"));
        }
        if cfg.clusters_per_class == 0 {
            return Err(Error::invalid("clusters_per_class must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut random_direction = |len: f64| {
            let mut d: Vec<f64> = (0..cfg.n_informative)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let norm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
            d.iter_mut().for_each(|v| *v *= len / norm);
            d
        };
        // centers[class][cluster]
        let centers: Vec<Vec<Vec<f64>>> = if cfg.clusters_per_class == 1 {
            let d = random_direction(0.5 * cfg.separation);
            vec![vec![d.iter().map(|v| -v).collect()], vec![d]]
        } else {
            (0..2)
                .map(|_| {
                    (0..cfg.clusters_per_class)
                        .map(|_| random_direction(cfg.separation))
                        .collect()
                })
                .collect()
        };

        let mut features = Vec::with_capacity(cfg.n_samples * cfg.n_features);
        let mut labels = Vec::with_capacity(cfg.n_samples);
        for k in 0..cfg.n_samples {
            let class = k % 2;
            let center = &centers[class][(k / 2) % cfg.clusters_per_class];
            for f in 0..cfg.n_features {
                let z: f64 = StandardNormal.sample(&mut rng);
                features.push(z + center.get(f).copied().unwrap_or(0.0));
            }
            let flip = rng.random_bool(cfg.label_noise);
            labels.push(if flip { 1 - class } else { class });
        }
        let mut ds =
            Self::with_random_splits(cfg.n_features, features, labels, cfg.splits, cfg.seed)?;
        ds.standardize();
        Ok(ds)
    }

    /// Reads `d` feature columns followed by an integer label column, assigns
    /// splits and standardizes with train-split statistics.
    pub fn from_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<Self> {
        let path = path.as_ref();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(opts.skip_header)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_path(path)
            .map_err(|e| csv_error(path, e))?;
        let mut features = Vec::new();
        let mut labels = Vec::new();
        let mut n_features = None;
        for record in reader.records() {
            let record = record.map_err(|e| csv_error(path, e))?;
            let line = record.position().map_or(0, |p| p.line() as usize);
            let parse_err = |msg: String| Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            };
            if record.len() < 2 {
                return Err(parse_err("need at least one feature and a label".into()));
            }
            let d = record.len() - 1;
            if *n_features.get_or_insert(d) != d {
                return Err(parse_err(format!(
                    "expected {} feature columns, found {d}",
                    n_features.unwrap()
                )));
            }
            for (c, field) in record.iter().take(d).enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| parse_err(format!("column {}: bad number {field:?}", c + 1)))?;
                if !v.is_finite() {
                    return Err(parse_err(format!("column {}: non-finite value", c + 1)));
                }
                features.push(v);
            }
            let label = &record[d];
            labels.push(
                label
                    .parse::<usize>()
                    .map_err(|_| parse_err(format!("bad class label {label:?}")))?,
            );
        }
        let Some(n_features) = n_features else {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "no samples".into(),
            });
        };
        let mut ds =
            Self::with_random_splits(n_features, features, labels, opts.splits, opts.seed)?;
        ds.standardize();
        Ok(ds)
    }

    /// Zero mean, unit variance per feature using train-split statistics.
    /// Constant features are only centered.
    pub fn standardize(&mut self) {
        let train = self.indices(Split::Train);
        if train.is_empty() {
            return;
        }
        let d = self.n_features;
        let n = train.len() as f64;
        for f in 0..d {
            let mean = train.iter().map(|&i| self.features[i * d + f]).sum::<f64>() / n;
            let var = train
                .iter()
                .map(|&i| (self.features[i * d + f] - mean).powi(2))
                .sum::<f64>()
                / n;
            let sd = var.sqrt();
            let scale = if sd > 0.0 { 1.0 / sd } else { 1.0 };
            for i in 0..self.labels.len() {
                let v = &mut self.features[i * d + f];
                *v = (*v - mean) * scale;
            }
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn split_of(&self, i: usize) -> Split {
        self.splits[i]
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Majority-class rate of a split, in percent.
    pub fn majority_rate(&self, split: Split) -> f64 {
        let idx = self.indices(split);
        let mut counts = vec![0usize; self.n_classes];
        for &i in &idx {
            counts[self.labels[i]] += 1;
        }
        100.0 * counts.into_iter().max().unwrap_or(0) as f64 / idx.len().max(1) as f64
    }
}

fn random_splits(n: usize, fractions: SplitFractions, seed: u64) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(
        seed.wrapping_add(0x9E37_79B9_7F4A_7C15),
    ));
    let n_train = (fractions.train * n as f64).round() as usize;
    let n_val = (fractions.val * n as f64).round() as usize;
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    splits
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        kind => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{kind:?}"),
        },
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub hidden_units: usize,
    pub activation: Activation,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// L2 penalty on non-bias weights.
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden_units: 20,
            activation: Activation::Sigmoid,
            learning_rate: 0.05,
            epochs: 40,
            batch_size: 16,
            seed: 0,
            weight_decay: 1e-2,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.hidden_units == 0 || self.batch_size == 0 {
            return Err(Error::invalid(
                "hidden_units and batch_size must be positive",
            ));
        }
        if self.activation == Activation::Identity {
            return Err(Error::invalid("hidden layer needs relu or sigmoid"));
        }
        if self.learning_rate.is_nan()
            || self.learning_rate <= 0.0
            || self.weight_decay.is_nan()
            || self.weight_decay < 0.0
        {
            return Err(Error::invalid(
                "learning_rate must be positive and weight_decay nonnegative",
            ));
        }
        Ok(())
    }
}

/// Seeded uniform (Glorot for sigmoid, He for ReLU) initialization with zero
/// biases. `sizes` lists the input width then each layer's width; the last
/// layer gets identity activation.
pub fn init_network(sizes: &[usize], hidden: Activation, rng: &mut impl Rng) -> Result<Network> {
    if sizes.len() < 3 {
        return Err(Error::invalid(
            "need input, at least one hidden, and output sizes",
        ));
    }
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
            let limit = match act {
                Activation::Relu => (6.0 / w[0] as f64).sqrt(),
                _ => (6.0 / (w[0] + w[1]) as f64).sqrt(),
            };
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite limit");
            let weights = (0..w[0] * w[1]).map(|_| dist.sample(rng)).collect();
            FcLayer::new(w[0], w[1], weights, vec![0.0; w[1]], act)
        })
        .collect::<Result<Vec<_>>>()?;
    Network::new(layers)
}

/// Batch-averaged gradients of the cross-entropy loss, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Gradients of mean softmax cross-entropy over the given samples.
pub fn gradients(net: &Network, ds: &Dataset, batch: &[usize]) -> Gradients {
    let layers = net.layers();
    let mut gw: Vec<Vec<f64>> = layers
        .iter()
        .map(|l| vec![0.0; l.weights().len()])
        .collect();
    let mut gb: Vec<Vec<f64>> = layers.iter().map(|l| vec![0.0; l.n_out()]).collect();
    let mut loss = 0.0;

    for &i in batch {
        let x = ds.sample(i);
        // Forward, keeping pre-activations and outputs per layer.
        let mut pre: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers.len());
        for (k, layer) in layers.iter().enumerate() {
            let input = if k == 0 { x } else { &post[k - 1] };
            let z: Vec<f64> = (0..layer.n_out())
                .map(|r| dot(layer.row(r), input) + layer.bias()[r])
                .collect();
            let a = z.iter().map(|&v| layer.activation().apply(v)).collect();
            pre.push(z);
            post.push(a);
        }
        let logits = post.last().unwrap();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        let y = ds.label(i);
        loss += -(exps[y] / sum).ln();

        let last = layers.len() - 1;
        let mut delta: Vec<f64> = exps
            .iter()
            .enumerate()
            .map(|(c, e)| {
                let p = e / sum - if c == y { 1.0 } else { 0.0 };
                p * layers[last]
                    .activation()
                    .derivative(pre[last][c], post[last][c])
            })
            .collect();
        for k in (0..layers.len()).rev() {
            let layer = &layers[k];
            let input = if k == 0 { x } else { &post[k - 1] };
            let n_in = layer.n_in();
            for (r, d) in delta.iter().enumerate() {
                gb[k][r] += d;
                for (c, xin) in input.iter().enumerate() {
                    gw[k][r * n_in + c] += d * xin;
                }
            }
            if k > 0 {
                let prev = &layers[k - 1];
                delta = (0..n_in)
                    .map(|c| {
                        let back: f64 = delta
                            .iter()
                            .enumerate()
                            .map(|(r, d)| d * layer.weight(r, c))
                            .sum();
                        back * prev.activation().derivative(pre[k - 1][c], post[k - 1][c])
                    })
                    .collect();
            }
        }
    }

    let scale = 1.0 / batch.len().max(1) as f64;
    for g in gw.iter_mut().chain(gb.iter_mut()) {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Gradients {
        weights: gw,
        bias: gb,
        loss: loss * scale,
    }
}

fn apply_update_in_place(net: &mut Network, g: &Gradients, lr: f64, weight_decay: f64) {
    for k in 0..net.layers().len() {
        let layer = net.layer_mut(k);
        for (w, gw) in layer.weights_mut().iter_mut().zip(&g.weights[k]) {
            *w -= lr * (gw + weight_decay * *w);
        }
        for (b, gb) in layer.bias_mut().iter_mut().zip(&g.bias[k]) {
            *b -= lr * gb;
        }
    }
}

/// One SGD update. Weight decay is added to the weight gradients only; the
/// biases move by `-lr * grad` exactly.
pub fn sgd_update(net: &Network, g: &Gradients, lr: f64, weight_decay: f64) -> Network {
    let mut out = net.clone();
    apply_update_in_place(&mut out, g, lr, weight_decay);
    out
}

/// Trains a `d -> hidden_units -> n_classes` network on the train split.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<Network> {
    cfg.validate()?;
    let mut train_idx = ds.indices(Split::Train);
    if train_idx.is_empty() {
        return Err(Error::invalid("train split is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = init_network(
        &[ds.n_features(), cfg.hidden_units, ds.n_classes()],
        cfg.activation,
        &mut rng,
    )?;
    for epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in train_idx.chunks(cfg.batch_size) {
            let g = gradients(&net, ds, batch);
            if !g.loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    loss: g.loss,
                });
            }
            total += g.loss * batch.len() as f64;
            apply_update_in_place(&mut net, &g, cfg.learning_rate, cfg.weight_decay);
        }
        let mean = total / train_idx.len() as f64;
        if !mean.is_finite()
            || net
                .layers()
                .iter()
                .any(|l| l.weights().iter().any(|w| !w.is_finite()))
        {
            return Err(Error::Diverged { epoch, loss: mean });
        }
    }
    Ok(net)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    /// Percentage of argmax-correct predictions.
    pub accuracy: f64,
    /// `100 - accuracy`.
    pub error: f64,
    pub samples: usize,
}

/// Index of the largest value; ties resolve to the smallest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = k;
        }
    }
    best
}

pub fn evaluate(net: &Network, ds: &Dataset, split: Split) -> Result<Evaluation> {
    if net.input_dim() != ds.n_features() {
        return Err(Error::Dimension {
            expected: net.input_dim(),
            got: ds.n_features(),
        });
    }
    let idx = ds.indices(split);
    if idx.is_empty() {
        return Err(Error::invalid(format!("{} split is empty", split.name())));
    }
    let correct = idx
        .iter()
        .filter(|&&i| argmax(&net.forward_unchecked(ds.sample(i))) == ds.label(i))
        .count();
    let accuracy = 100.0 * correct as f64 / idx.len() as f64;
    Ok(Evaluation {
        accuracy,
        error: 100.0 - accuracy,
        samples: idx.len(),
    })
}

/// Prunes `layer_index` down to one neuron, measuring the error on `split`
/// before any removal and after every `every`-th step (and the last step).
pub fn error_curve(
    net: &Network,
    layer_index: usize,
    ds: &Dataset,
    split: Split,
    policy: PrunePolicy,
    cfg: &SimilarityConfig,
    every: usize,
) -> Result<Vec<(usize, f64)>> {
    if every == 0 {
        return Err(Error::invalid("evaluation interval must be positive"));
    }
    let mut pruner = LayerPruner::new(net, layer_index, policy, cfg)?;
    let mut curve = vec![(0, evaluate(net, ds, split)?.error)];
    while pruner.remaining() > 1 {
        let step = pruner.step()?.step;
        if step % every == 0 || pruner.remaining() == 1 {
            let e = evaluate(pruner.network(), ds, split)?.error;
            pruner.set_last_error(e);
            curve.push((step, e));
        }
    }
    Ok(curve)
}
