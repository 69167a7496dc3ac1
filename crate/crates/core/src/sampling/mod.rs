//! Feature pulling and coarse-to-fine BEV sampling.
//!
//! Pillars of 3D points are raised over BEV anchor cells, projected into a
//! spherical-image feature map, sampled bilinearly and decoded to one logit
//! per anchor. A coarse pass over a lattice of anchors selects the top-k
//! cells; a fine pass resamples their neighbourhoods; the two are merged into
//! a dense logit map.

mod coarse_fine;
mod config;
mod decoder;
mod feature_map;
mod pillars;

pub use coarse_fine::{
    coarse_anchors, coarse_pass, combine, evaluate_anchors, fine_anchors, fine_pass, run_pipeline,
    top_k, CoarseOutput, PipelineOutput, SparseLogits,
};
pub use config::{square_pattern, CoarseSelection, SamplingConfig, BACKGROUND_LOGIT};
pub use decoder::{Decoder, LinearDecoder};
pub use feature_map::{bilinear_sample, FeatureMap};
pub use pillars::{make_pillars, pull_features, FeatureVolume, PillarFeatures, PillarSet};
