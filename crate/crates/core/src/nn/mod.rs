//! Network building blocks: parameter storage, channel attention, bottleneck
//! blocks and the two convolutional branches.

pub mod backbone;
pub mod block;
pub mod cham;
pub mod params;

pub use backbone::{
    rgb_branch_forward, score_input, srrm_forward, Backbone, BackboneConfig, FeatureKind,
    GlobalFeature,
};
pub use block::Bottleneck;
pub use cham::{cham_apply, cham_map, hidden_width, ChamParams, ChamVars};
pub use params::{kaiming_uniform, name_matches, Bound, Gradients, ManifestEntry, ParamStore};
