//! Weight compression by nearest points on an irrational-winding trajectory.
//!
//! Pairs of weights are mapped into a small box around the layer centroid,
//! snapped to the nearest of `U` points on a discretised winding line, and
//! stored as bit-packed integer indices. The crate also carries the file
//! formats, a tiny MLP runtime that decodes layers while it computes, and the
//! numerical validators used by the acceptance suite.
//!
//! # Modules
//!
//! - [`ergodic`] -- trajectory codebook and nearest-point queries
//! - [`codec`] -- grouping, ring categories, scaling, encode and decode
//! - [`bitpack`] -- LSB-first variable-width integer packing
//! - [`container`] -- NTB tensor bundles and HCMP compressed models
//! - [`inference`] -- MLP forward pass, pipelined decode, toy trainer
//! - [`analysis`] -- error statistics, ratios, error-bound validation
//! - [`percolation`] -- Monte-Carlo threshold estimation on `G_r`

pub mod analysis;
pub mod bitpack;
pub mod codec;
pub mod container;
pub mod ergodic;
pub mod error;
pub mod inference;
mod kdtree;
pub mod percolation;

pub use analysis::{compression_ratio, error_stats, validate_error_bound, ErrorBoundReport, ErrorStats};
pub use bitpack::{pack_bits, unpack_bits};
pub use codec::{
    analyze, categorize, decode_layer, decode_theta, encode_layer, encode_layer_with, group_pairs,
    scale_factor, EncodeParams, EncodedLayer, Grouping, ScalePlan, SearchMode,
};
pub use container::{
    compress_bundle, decompress_model, CompressedModel, CompressionPlan, LayerOverride, Tensor,
    TensorBundle,
};
pub use ergodic::{
    build_codebook, direction_vector, frac, generalized_tau, Codebook, CodebookConfig, Direction,
    DirectionMode, Point,
};
pub use error::{Error, Result};
pub use inference::{
    accuracy, eval_accuracy, mlp_forward, pipelined_forward, train_toy, Activation, Dataset, DenseLayer,
    MlpNetwork,
};
pub use percolation::{
    check_g2_isomorphism, estimate_threshold, percolation_trial, solve_p0, LatticeSpec,
    PercolationEstimate,
};
