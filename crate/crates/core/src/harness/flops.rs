//! Analytic multiply-add counts.
//!
//! Convolutions cost `C_out·C_in·k·k·H'·W'` (bias adds are not counted),
//! linear maps `in·out`. Channel attention counts its two shared-MLP passes
//! plus one multiply-add per element for `F + M_c ⊙ F`. Pooling, activations
//! and residual additions are free.

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::Result;
use crate::fusion::{FusionConfig, FusionFlops, FusionHead, FusionKind};
use crate::nn::{hidden_width, BackboneConfig};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentFlops {
    pub name: String,
    pub macs: u64,
}

pub fn conv_macs(c_out: usize, c_in: usize, k: usize, h_out: usize, w_out: usize) -> u64 {
    (c_out * c_in * k * k) as u64 * (h_out * w_out) as u64
}

/// Per-component counts of a backbone on an `h×w` input.
pub fn backbone_flops(cfg: &BackboneConfig, h: usize, w: usize) -> Result<Vec<ComponentFlops>> {
    let shapes = cfg.feature_shapes(h, w)?;
    let mut out = Vec::new();
    let [c0, h0, w0] = shapes[0];
    out.push(ComponentFlops {
        name: "stem".into(),
        macs: conv_macs(c0, cfg.input_channels, cfg.stem_kernel, h0, w0),
    });
    let (mut c, mut hh, mut ww) = (c0, h0, w0);
    for s in 0..cfg.stage_widths.len() {
        let width = cfg.stage_widths[s];
        let mid = width / cfg.bottleneck_ratio;
        for b in 0..cfg.blocks_per_stage[s] {
            let stride = if b == 0 { cfg.stage_strides[s] } else { 1 };
            let (ho, wo) = ((hh - 1) / stride + 1, (ww - 1) / stride + 1);
            let mut macs = conv_macs(mid, c, 1, hh, ww)
                + conv_macs(mid, mid, 3, ho, wo)
                + conv_macs(width, mid, 1, ho, wo);
            if stride != 1 || c != width {
                macs += conv_macs(width, c, 1, ho, wo);
            }
            out.push(ComponentFlops {
                name: format!("s{s}.b{b}"),
                macs,
            });
            (c, hh, ww) = (width, ho, wo);
        }
        if cfg.cham[s] {
            let hid = hidden_width(width, cfg.cham_reduction)?;
            out.push(ComponentFlops {
                name: format!("s{s}.cham"),
                macs: (4 * width * hid + width * hh * ww) as u64,
            });
        }
    }
    Ok(out)
}

pub fn total(components: &[ComponentFlops]) -> u64 {
    components.iter().map(|c| c.macs).sum()
}

/// Counts for one experiment configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlopReport {
    pub semantic: u64,
    pub rgb: u64,
    pub fusion_head: u64,
    pub fusion_mlp: u64,
    pub semantic_components: Vec<ComponentFlops>,
    pub rgb_components: Vec<ComponentFlops>,
}

/// Counts for full-size scenes of `cfg`: the semantic branch sees the
/// filtered score tensor, the RGB branch the whole image.
pub fn count_flops(cfg: &ExperimentConfig) -> Result<FlopReport> {
    let win = cfg.filter_window;
    let (h, w) = (cfg.recipe.height / win, cfg.recipe.width / win);
    let semantic_components = backbone_flops(&cfg.semantic_config()?, h, w)?;
    let rgb_components = backbone_flops(&cfg.rgb_config()?, cfg.recipe.height, cfg.recipe.width)?;
    let head = FusionHead::new(
        cfg.fusion,
        cfg.semantic_config()?.output_dim(),
        cfg.recipe.num_classes,
        "fusion",
    )?
    .flops();
    Ok(FlopReport {
        semantic: total(&semantic_components),
        rgb: total(&rgb_components),
        fusion_head: head.head,
        fusion_mlp: head.mlp,
        semantic_components,
        rgb_components,
    })
}

/// Full-size semantic branch on a 224×224×150 tensor, with and without the
/// window-2 filter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullSizeFlops {
    pub unfiltered: u64,
    pub filtered: u64,
    pub ratio: f64,
}

pub fn full_size_filter_flops() -> Result<FullSizeFlops> {
    let unfiltered = total(&backbone_flops(&BackboneConfig::full_semantic(150, 1)?, 224, 224)?);
    let filtered = total(&backbone_flops(&BackboneConfig::full_semantic(150, 2)?, 112, 112)?);
    Ok(FullSizeFlops {
        unfiltered,
        filtered,
        ratio: unfiltered as f64 / filtered as f64,
    })
}

/// Head counts of each fusion variant at feature length `c`.
pub fn fusion_variant_flops(c: usize, num_classes: usize, hidden: usize) -> Result<Vec<(FusionKind, FusionFlops)>> {
    FusionKind::ALL
        .iter()
        .map(|&kind| {
            let cfg = FusionConfig {
                kind,
                hidden,
                ..FusionConfig::default()
            };
            Ok((kind, FusionHead::new(cfg, c, num_classes, "fusion")?.flops()))
        })
        .collect()
}
