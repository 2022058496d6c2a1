//! Data-free neuron pruning for fully connected feedforward networks.
//!
//! Neurons in a hidden layer are removed by finding pairs whose incoming
//! weight-sets are nearly equal, deleting one of them and folding its
//! outgoing coefficients into the survivor ("surgery"). The pair to merge is
//! the minimum of the saliency `s(i, j) = <a_j^2> * sim(i, j)^2`, where
//! `<a_j^2>` is the mean squared outgoing weight of the removed neuron `j`.
//! No training or validation inputs are needed to rank removals.
//!
//! Modules:
//!
//! * [`net`]: dense layers, forward pass, ReLU rescaling, neuron deletion.
//! * [`saliency`]: pairwise similarity and the saliency matrix.
//! * [`prune`]: the merge-and-surgery loop, baseline pruners, multi-layer plans.
//! * [`cutoff`]: choosing how many neurons to remove.
//! * [`train`]: small SGD trainer, datasets and evaluation for fixtures.
//! * [`io`]: text model format, trace CSV and report files.

pub mod cutoff;
pub mod error;
pub mod io;
pub mod net;
pub mod prune;
pub mod saliency;
pub mod train;

pub use cutoff::{
    data_driven_cutoff, data_free_cutoff, histogram, CutoffEvidence, CutoffMethod, CutoffReport,
    SaliencyHistogram, DEFAULT_BINS,
};
pub use error::{Error, Result};
pub use net::{Activation, FcLayer, Network, Rescaled, WeightSet};
pub use prune::{
    compression_percent, prune_layer, prune_network, prune_one, replay_trace, LayerPruner,
    PrunePolicy, PruneStep, PruneTrace,
};
pub use saliency::{
    build_saliency_matrix, heuristic_similarity, mean_outgoing_square, raw_epsilon, verify_bound,
    verify_contraction, BoundSample, ContractionReport, SaliencyMatrix, Similarity,
    SimilarityConfig, SimilarityMode,
};
pub use train::{
    error_curve, evaluate, train, CsvOptions, Dataset, Evaluation, Split, SplitFractions,
    SyntheticConfig, TrainConfig,
};
