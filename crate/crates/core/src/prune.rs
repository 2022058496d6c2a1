//! Neuron removal loops.
//!
//! The saliency policies repeatedly take the minimum entry `(i, j)` of the
//! saliency matrix, delete neuron `j` and (with surgery) add `j`'s outgoing
//! column into `i`'s. Only column `i` of the matrix needs refreshing after a
//! step: similarities depend on incoming weights alone, which surgery never
//! touches, and only `<a_i^2>` changed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{norm, Network};
use crate::saliency::{build_saliency_matrix, SaliencyMatrix, SimilarityConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrunePolicy {
    /// Minimum-saliency merge with the outgoing-weight update.
    SaliencySurgery,
    /// Same selection, but the removed neuron's outgoing weights are dropped.
    SaliencyNoSurgery,
    /// Removes the neuron with the smallest `||W'_j|| * ||a_j||`.
    NaiveMagnitude,
    /// Uniformly random removal.
    Random { seed: u64 },
}

impl PrunePolicy {
    pub fn name(&self) -> &'static str {
        match self {
            PrunePolicy::SaliencySurgery => "surgery",
            PrunePolicy::SaliencyNoSurgery => "no-surgery",
            PrunePolicy::NaiveMagnitude => "magnitude",
            PrunePolicy::Random { .. } => "random",
        }
    }
}

/// One removal. Indices refer to the layer's original numbering.
#[derive(Debug, Clone, PartialEq)]
pub struct PruneStep {
    /// 1-based position in the trace.
    pub step: usize,
    /// Neuron that absorbed the removed one; `None` for policies that do not
    /// pair neurons.
    pub kept: Option<usize>,
    pub removed: usize,
    /// Score the policy minimized (saliency, magnitude score, or 0 for random).
    pub saliency: f64,
    pub test_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PruneTrace {
    pub layer_index: usize,
    pub steps: Vec<PruneStep>,
}

impl PruneTrace {
    pub fn new(layer_index: usize) -> Self {
        Self {
            layer_index,
            steps: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn saliencies(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.saliency).collect()
    }
}

fn merge_step(net: &mut Network, m: &mut SaliencyMatrix, surgery: bool) -> Result<PruneStep> {
    let layer_index = m.layer_index();
    let (kept, removed, saliency) = m
        .argmin()
        .ok_or_else(|| Error::invalid("no pair left to merge: layer has a single neuron"))?;
    let kept_pos = m.position_of(kept).expect("argmin returns live neurons");
    let removed_pos = m.position_of(removed).expect("argmin returns live neurons");
    if surgery {
        net.layer_mut(layer_index + 1)
            .add_column(kept_pos, removed_pos);
    }
    net.delete_neuron_in_place(layer_index, removed_pos)?;
    m.remove(removed);
    if surgery {
        m.refresh_column(kept, &net.layers()[layer_index + 1]);
    }
    Ok(PruneStep {
        step: m.steps_taken(),
        kept: Some(kept),
        removed,
        saliency,
        test_error: None,
    })
}

fn check_consistent(net: &Network, m: &SaliencyMatrix) -> Result<()> {
    net.check_hidden(m.layer_index())?;
    let n_out = net.layers()[m.layer_index()].n_out();
    if n_out != m.n_live() {
        return Err(Error::invalid(format!(
            "saliency matrix tracks {} live neurons but layer {} has {n_out}",
            m.n_live(),
            m.layer_index()
        )));
    }
    Ok(())
}

/// Merges the minimum-saliency pair with surgery and updates the matrix.
pub fn prune_one(
    net: &Network,
    matrix: &SaliencyMatrix,
) -> Result<(Network, SaliencyMatrix, PruneStep)> {
    check_consistent(net, matrix)?;
    let mut net = net.clone();
    let mut matrix = matrix.clone();
    let step = merge_step(&mut net, &mut matrix, true)?;
    Ok((net, matrix, step))
}

enum Selector {
    Saliency {
        matrix: SaliencyMatrix,
        surgery: bool,
    },
    Ranked {
        order: Vec<usize>,
        rng: Option<ChaCha8Rng>,
    },
}

/// Stepwise pruner over one hidden layer, for callers that need the network
/// after every removal (error curves, data-driven cutoffs).
pub struct LayerPruner {
    net: Network,
    layer_index: usize,
    selector: Selector,
    trace: PruneTrace,
}

impl LayerPruner {
    pub fn new(
        net: &Network,
        layer_index: usize,
        policy: PrunePolicy,
        cfg: &SimilarityConfig,
    ) -> Result<Self> {
        net.check_hidden(layer_index)?;
        let n = net.layers()[layer_index].n_out();
        let selector = match policy {
            PrunePolicy::SaliencySurgery | PrunePolicy::SaliencyNoSurgery => Selector::Saliency {
                matrix: build_saliency_matrix(net, layer_index, cfg)?,
                surgery: policy == PrunePolicy::SaliencySurgery,
            },
            PrunePolicy::NaiveMagnitude => Selector::Ranked {
                order: (0..n).collect(),
                rng: None,
            },
            PrunePolicy::Random { seed } => Selector::Ranked {
                order: (0..n).collect(),
                rng: Some(ChaCha8Rng::seed_from_u64(seed)),
            },
        };
        Ok(Self {
            net: net.clone(),
            layer_index,
            selector,
            trace: PruneTrace::new(layer_index),
        })
    }

    pub fn network(&self) -> &Network {
        &self.net
    }

    pub fn trace(&self) -> &PruneTrace {
        &self.trace
    }

    pub fn remaining(&self) -> usize {
        self.net.layers()[self.layer_index].n_out()
    }

    pub fn matrix(&self) -> Option<&SaliencyMatrix> {
        match &self.selector {
            Selector::Saliency { matrix, .. } => Some(matrix),
            Selector::Ranked { .. } => None,
        }
    }

    /// Records a measured error against the most recent step.
    pub fn set_last_error(&mut self, error: f64) {
        if let Some(s) = self.trace.steps.last_mut() {
            s.test_error = Some(error);
        }
    }

    pub fn step(&mut self) -> Result<PruneStep> {
        if self.remaining() < 2 {
            return Err(Error::invalid(format!(
                "layer {} has a single neuron left",
                self.layer_index
            )));
        }
        let step = match &mut self.selector {
            Selector::Saliency { matrix, surgery } => merge_step(&mut self.net, matrix, *surgery)?,
            Selector::Ranked { order, rng } => {
                let (pos, score) = match rng {
                    Some(rng) => (rng.random_range(0..order.len()), 0.0),
                    None => lowest_magnitude(&self.net, self.layer_index),
                };
                let removed = order.remove(pos);
                self.net.delete_neuron_in_place(self.layer_index, pos)?;
                PruneStep {
                    step: self.trace.len() + 1,
                    kept: None,
                    removed,
                    saliency: score,
                    test_error: None,
                }
            }
        };
        self.trace.steps.push(step.clone());
        Ok(step)
    }

    pub fn into_parts(self) -> (Network, PruneTrace) {
        (self.net, self.trace)
    }
}

// Position and score of the neuron minimizing incoming norm times outgoing
// norm; ties go to the lowest position.
fn lowest_magnitude(net: &Network, layer_index: usize) -> (usize, f64) {
    let layer = &net.layers()[layer_index];
    let next = &net.layers()[layer_index + 1];
    let mut best = (0, f64::INFINITY);
    for j in 0..layer.n_out() {
        let score = norm(layer.row(j)) * norm(&next.column(j));
        if score < best.1 {
            best = (j, score);
        }
    }
    best
}

/// Removes `count` neurons from one hidden layer under `policy`.
pub fn prune_layer(
    net: &Network,
    layer_index: usize,
    count: usize,
    policy: PrunePolicy,
    cfg: &SimilarityConfig,
) -> Result<(Network, PruneTrace)> {
    net.check_hidden(layer_index)?;
    let n_out = net.layers()[layer_index].n_out();
    if count == 0 || count >= n_out {
        return Err(Error::invalid(format!(
            "count must be in 1..={} for layer {layer_index}, got {count}",
            n_out - 1
        )));
    }
    let mut pruner = LayerPruner::new(net, layer_index, policy, cfg)?;
    for _ in 0..count {
        pruner.step()?;
    }
    Ok(pruner.into_parts())
}

/// Prunes several layers front to back. Each layer's saliency matrix is built
/// after the earlier layers have been pruned, since pruning layer `k` changes
/// the weight-sets seen by layer `k + 1`.
pub fn prune_network(
    net: &Network,
    plan: &[(usize, usize)],
    policy: PrunePolicy,
    cfg: &SimilarityConfig,
) -> Result<(Network, Vec<PruneTrace>)> {
    if plan.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::invalid(
            "prune plan must list layers in strictly ascending order",
        ));
    }
    let mut cur = net.clone();
    let mut traces = Vec::with_capacity(plan.len());
    for &(layer_index, count) in plan {
        let (next, trace) = prune_layer(&cur, layer_index, count, policy, cfg)?;
        cur = next;
        traces.push(trace);
    }
    Ok((cur, traces))
}

/// Re-applies the first `steps` removals of a trace to `net`. With `surgery`,
/// each removed neuron's outgoing column is added to its recorded partner.
pub fn replay_trace(
    net: &Network,
    trace: &PruneTrace,
    steps: usize,
    surgery: bool,
) -> Result<Network> {
    let layer_index = trace.layer_index;
    net.check_hidden(layer_index)?;
    if steps > trace.len() {
        return Err(Error::invalid(format!(
            "trace has {} steps, asked to replay {steps}",
            trace.len()
        )));
    }
    let n = net.layers()[layer_index].n_out();
    let mut order: Vec<usize> = (0..n).collect();
    let mut out = net.clone();
    for s in &trace.steps[..steps] {
        let pos = |o: usize| {
            order
                .iter()
                .position(|&x| x == o)
                .ok_or(Error::NeuronOutOfRange { index: o, len: n })
        };
        let removed_pos = pos(s.removed)?;
        if let (true, Some(kept)) = (surgery, s.kept) {
            let kept_pos = pos(kept)?;
            out.layer_mut(layer_index + 1)
                .add_column(kept_pos, removed_pos);
        }
        out.delete_neuron_in_place(layer_index, removed_pos)?;
        order.remove(removed_pos);
    }
    Ok(out)
}

/// `100 * removed / total`.
pub fn compression_percent(removed_params: u64, total_params: u64) -> Result<f64> {
    if total_params == 0 || removed_params > total_params {
        return Err(Error::invalid(format!(
            "need 0 <= removed <= total and total > 0, got {removed_params}/{total_params}"
        )));
    }
    Ok(100.0 * removed_params as f64 / total_params as f64)
}
