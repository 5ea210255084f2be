//! Convolutional branches mapping an input tensor to a global feature vector.
//!
//! Layout: `k×k` stem conv + ReLU, then residual stages of bottleneck blocks
//! (channel attention after a stage when enabled), then global average
//! pooling. The stem feeds the first stage directly; that stage's first
//! block projects to the stage width.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::block::{conv_bias, init_conv, Bottleneck};
use super::cham::{cham_apply, cham_map, hidden_width, ChamParams, ChamVars};
use super::params::{Bound, ParamStore};
use crate::error::{Error, Result};
use crate::score::ScoreTensor;
use crate::tensor::{conv2d_output_dim, DiffTensor, Tape, Var};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub stem_kernel: usize,
    pub stem_stride: usize,
    pub stem_padding: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: Vec<usize>,
    pub stage_strides: Vec<usize>,
    /// Bottleneck inner width is `stage width / bottleneck_ratio`.
    pub bottleneck_ratio: usize,
    /// Channel attention after each stage.
    pub cham: Vec<bool>,
    pub cham_reduction: usize,
}

impl BackboneConfig {
    /// Semantic branch with ResNet-50 stages 2–4 for an `l`-label score tensor.
    ///
    /// The stride schedule is set for a `window`-filtered input: the full
    /// schedule (stem 2, stages 2/2/2) downsamples the unfiltered map by 16,
    /// and each factor of two taken by the filter turns the last remaining
    /// stride-2 stage into stride 1, so the final map stays at 1/16 of the
    /// original image.
    pub fn full_semantic(labels: usize, window: usize) -> Result<Self> {
        Self {
            input_channels: labels,
            stem_channels: 64,
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            stage_widths: vec![512, 1024, 2048],
            blocks_per_stage: vec![4, 6, 3],
            stage_strides: vec![2, 2, 2],
            bottleneck_ratio: 4,
            cham: vec![true; 3],
            cham_reduction: 16,
        }
        .adapted_to_filter(window)
    }

    /// Stand-in for the RGB branch at full size (3 input channels, no attention).
    pub fn full_rgb() -> Self {
        Self {
            input_channels: 3,
            cham: vec![false; 3],
            ..Self::full_semantic(3, 1).expect("valid")
        }
    }

    /// CPU-scale semantic branch: stem 32, stages 32/64/128, one block each.
    pub fn desk_semantic(labels: usize, window: usize) -> Result<Self> {
        Self {
            input_channels: labels,
            stem_channels: 32,
            stem_kernel: 7,
            stem_stride: 2,
            stem_padding: 3,
            stage_widths: vec![32, 64, 128],
            blocks_per_stage: vec![1, 1, 1],
            stage_strides: vec![2, 2, 2],
            bottleneck_ratio: 4,
            cham: vec![true; 3],
            cham_reduction: 16,
        }
        .adapted_to_filter(window)
    }

    pub fn desk_rgb() -> Self {
        Self {
            input_channels: 3,
            cham: vec![false; 3],
            ..Self::desk_semantic(3, 1).expect("valid")
        }
    }

    /// Absorbs a `window`-fold input reduction (a power of two) by clearing
    /// stride-2 stages from the last one backwards.
    pub fn adapted_to_filter(mut self, window: usize) -> Result<Self> {
        if window == 0 || !window.is_power_of_two() {
            return Err(Error::Config(format!(
                "filter window {window} must be a power of two"
            )));
        }
        let mut remaining = window.trailing_zeros();
        for s in self.stage_strides.iter_mut().rev() {
            if remaining == 0 {
                break;
            }
            if *s == 2 {
                *s = 1;
                remaining -= 1;
            }
        }
        if remaining > 0 {
            return Err(Error::Config(format!(
                "filter window {window} exceeds the stage downsampling"
            )));
        }
        self.validate()?;
        Ok(self)
    }

    pub fn with_cham(mut self, enabled: bool) -> Self {
        self.cham.iter_mut().for_each(|c| *c = enabled);
        self
    }

    pub fn output_dim(&self) -> usize {
        self.stage_widths.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.stage_widths.len();
        let bad = |m: String| Err(Error::Config(m));
        if n == 0 {
            return bad("at least one residual stage is required".into());
        }
        if self.blocks_per_stage.len() != n || self.stage_strides.len() != n || self.cham.len() != n
        {
            return bad(format!(
                "per-stage lists disagree: widths {n}, blocks {}, strides {}, cham {}",
                self.blocks_per_stage.len(),
                self.stage_strides.len(),
                self.cham.len()
            ));
        }
        if self.input_channels == 0 || self.stem_channels == 0 || self.stem_kernel == 0 {
            return bad("input, stem channels and stem kernel must be positive".into());
        }
        if self.stem_stride == 0 || self.stage_strides.contains(&0) {
            return bad("strides must be ≥ 1".into());
        }
        if self.blocks_per_stage.contains(&0) {
            return bad("every stage needs at least one block".into());
        }
        if self.bottleneck_ratio == 0 {
            return bad("bottleneck ratio must be ≥ 1".into());
        }
        for (i, &w) in self.stage_widths.iter().enumerate() {
            if w == 0 || w % self.bottleneck_ratio != 0 {
                return bad(format!(
                    "stage {i} width {w} not divisible by bottleneck ratio {}",
                    self.bottleneck_ratio
                ));
            }
            if self.cham[i] {
                hidden_width(w, self.cham_reduction)?;
            }
        }
        Ok(())
    }

    fn blocks(&self, prefix: &str) -> Result<Vec<Vec<Bottleneck>>> {
        let mut c = self.stem_channels;
        let mut stages = Vec::with_capacity(self.stage_widths.len());
        for (s, (&w, (&nb, &stride))) in self
            .stage_widths
            .iter()
            .zip(self.blocks_per_stage.iter().zip(&self.stage_strides))
            .enumerate()
        {
            let mut blocks = Vec::with_capacity(nb);
            for b in 0..nb {
                let st = if b == 0 { stride } else { 1 };
                blocks.push(Bottleneck::new(
                    format!("{prefix}.s{s}.b{b}"),
                    c,
                    w / self.bottleneck_ratio,
                    w,
                    st,
                )?);
                c = w;
            }
            stages.push(blocks);
        }
        Ok(stages)
    }

    /// Feature-map shape after the stem and after each stage for an `h×w` input.
    pub fn feature_shapes(&self, h: usize, w: usize) -> Result<Vec<[usize; 3]>> {
        self.validate()?;
        let dim = |n| conv2d_output_dim(n, self.stem_kernel, self.stem_stride, self.stem_padding);
        let (mut h, mut w) = match (dim(h), dim(w)) {
            (Some(a), Some(b)) if a >= 1 && b >= 1 => (a, b),
            _ => {
                return Err(Error::shape(
                    "backbone stem",
                    format!("input ≥ {}", self.stem_kernel.saturating_sub(2 * self.stem_padding)),
                    format!("{h}x{w}"),
                ))
            }
        };
        let mut shapes = vec![[self.stem_channels, h, w]];
        for (width, stride) in self.stage_widths.iter().zip(&self.stage_strides) {
            h = (h - 1) / stride + 1;
            w = (w - 1) / stride + 1;
            shapes.push([*width, h, w]);
        }
        Ok(shapes)
    }
}

/// Which branch a global feature came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Semantic,
    Rgb,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeature {
    pub values: Vec<f64>,
    pub kind: FeatureKind,
}

impl GlobalFeature {
    pub fn new(values: Vec<f64>, kind: FeatureKind) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{kind:?} global feature")));
        }
        Ok(Self { values, kind })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// A configured branch whose parameters live under `prefix` in a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: BackboneConfig,
    pub prefix: String,
    pub kind: FeatureKind,
    stages: Vec<Vec<Bottleneck>>,
}

impl Backbone {
    pub fn new(config: BackboneConfig, prefix: impl Into<String>, kind: FeatureKind) -> Result<Self> {
        config.validate()?;
        let prefix = prefix.into();
        let stages = config.blocks(&prefix)?;
        Ok(Self {
            config,
            prefix,
            kind,
            stages,
        })
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let c = &self.config;
        init_conv(
            store,
            &format!("{}.stem", self.prefix),
            c.stem_channels,
            c.input_channels,
            c.stem_kernel,
            rng,
        )?;
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                b.init(store, rng)?;
            }
            if c.cham[s] {
                ChamParams::init(c.stage_widths[s], c.cham_reduction, rng)?
                    .store(store, &self.cham_prefix(s))?;
            }
        }
        Ok(())
    }

    fn cham_prefix(&self, stage: usize) -> String {
        format!("{}.s{stage}.cham", self.prefix)
    }

    /// `C_in×H×W → [c]`.
    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let c = &self.config;
        match tape.shape(x) {
            [ch, _, _] if *ch == c.input_channels => {}
            s => {
                return Err(Error::shape(
                    "backbone input",
                    format!("{}×H×W", c.input_channels),
                    format!("{s:?}"),
                ))
            }
        }
        let mut f = conv_bias(
            tape,
            bound,
            &format!("{}.stem", self.prefix),
            x,
            c.stem_stride,
            c.stem_padding,
        )?;
        f = tape.relu(f);
        for (s, blocks) in self.stages.iter().enumerate() {
            for b in blocks {
                f = b.forward(tape, bound, f)?;
            }
            if c.cham[s] {
                let p = ChamVars::from_bound(bound, &self.cham_prefix(s))?;
                let mc = cham_map(tape, f, p)?;
                f = cham_apply(tape, f, mc)?;
            }
        }
        tape.global_avg_pool(f)
    }

    /// Inference pass on a private tape with frozen parameters.
    pub fn extract(&self, store: &ParamStore, input: DiffTensor) -> Result<GlobalFeature> {
        let mut tape = Tape::new();
        let own = store.subset(&self.prefix);
        let bound = own.bind(&mut tape, |_| false);
        let x = tape.constant(input);
        let f = self.forward(&mut tape, &bound, x)?;
        GlobalFeature::new(tape.value(f).to_vec(), self.kind)
    }
}

/// Score tensor as a `l×h×w` network input.
pub fn score_input(m: &ScoreTensor) -> DiffTensor {
    DiffTensor::new(&[m.labels(), m.height(), m.width()], m.to_chw()).expect("dims agree")
}

/// Semantic global feature `F_S` of an already filtered score tensor.
pub fn srrm_forward(m_filtered: &ScoreTensor, branch: &Backbone, store: &ParamStore) -> Result<GlobalFeature> {
    if m_filtered.labels() != branch.config.input_channels {
        return Err(Error::shape(
            "srrm_forward",
            format!("{} labels", branch.config.input_channels),
            m_filtered.labels(),
        ));
    }
    branch.extract(store, score_input(m_filtered))
}

/// RGB global feature `F_R` of a `3×H×W` image.
pub fn rgb_branch_forward(image: &DiffTensor, branch: &Backbone, store: &ParamStore) -> Result<GlobalFeature> {
    if image.shape().len() != 3 || image.shape()[0] != 3 {
        return Err(Error::shape("rgb_branch_forward", "3×H×W", format!("{:?}", image.shape())));
    }
    branch.extract(store, image.clone())
}
