use rand::Rng;

use super::params::{kaiming_uniform, Bound, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{DiffTensor, Tape, Var};

/// Convolution followed by a per-channel bias.
pub(crate) fn conv_bias(
    tape: &mut Tape,
    bound: &Bound,
    prefix: &str,
    x: Var,
    stride: usize,
    padding: usize,
) -> Result<Var> {
    let w = bound.get(&format!("{prefix}.w"))?;
    let b = bound.get(&format!("{prefix}.b"))?;
    let y = tape.conv2d(x, w, stride, padding)?;
    tape.add_channel_bias(y, b)
}

pub(crate) fn init_conv(
    store: &mut ParamStore,
    prefix: &str,
    c_out: usize,
    c_in: usize,
    k: usize,
    rng: &mut impl Rng,
) -> Result<()> {
    store.insert(
        format!("{prefix}.w"),
        kaiming_uniform(&[c_out, c_in, k, k], c_in * k * k, rng),
    )?;
    store.insert(format!("{prefix}.b"), DiffTensor::zeros(&[c_out]))
}

/// Residual bottleneck: 1×1 reduce, 3×3 (carrying the stride), 1×1 expand,
/// shortcut add, ReLU. The shortcut is a strided 1×1 projection whenever the
/// stride or channel count changes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bottleneck {
    pub prefix: String,
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
}

impl Bottleneck {
    pub fn new(
        prefix: impl Into<String>,
        in_channels: usize,
        mid_channels: usize,
        out_channels: usize,
        stride: usize,
    ) -> Result<Self> {
        if in_channels == 0 || mid_channels == 0 || out_channels == 0 || stride == 0 {
            return Err(Error::Config(format!(
                "bottleneck {in_channels}->{mid_channels}->{out_channels} stride {stride}"
            )));
        }
        Ok(Self {
            prefix: prefix.into(),
            in_channels,
            mid_channels,
            out_channels,
            stride,
        })
    }

    pub fn has_projection(&self) -> bool {
        self.stride != 1 || self.in_channels != self.out_channels
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let p = &self.prefix;
        init_conv(store, &format!("{p}.conv1"), self.mid_channels, self.in_channels, 1, rng)?;
        init_conv(store, &format!("{p}.conv2"), self.mid_channels, self.mid_channels, 3, rng)?;
        init_conv(store, &format!("{p}.conv3"), self.out_channels, self.mid_channels, 1, rng)?;
        if self.has_projection() {
            init_conv(store, &format!("{p}.proj"), self.out_channels, self.in_channels, 1, rng)?;
        }
        Ok(())
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        ((h - 1) / self.stride + 1, (w - 1) / self.stride + 1)
    }

    pub fn forward(&self, tape: &mut Tape, bound: &Bound, x: Var) -> Result<Var> {
        let c = tape.shape(x).first().copied().unwrap_or(0);
        if tape.shape(x).len() != 3 || c != self.in_channels {
            return Err(Error::shape(
                "basic_block",
                format!("{}×H×W", self.in_channels),
                format!("{:?}", tape.shape(x)),
            ));
        }
        let p = &self.prefix;
        let h = conv_bias(tape, bound, &format!("{p}.conv1"), x, 1, 0)?;
        let h = tape.relu(h);
        let h = conv_bias(tape, bound, &format!("{p}.conv2"), h, self.stride, 1)?;
        let h = tape.relu(h);
        let h = conv_bias(tape, bound, &format!("{p}.conv3"), h, 1, 0)?;
        let skip = if self.has_projection() {
            conv_bias(tape, bound, &format!("{p}.proj"), x, self.stride, 0)?
        } else {
            x
        };
        let y = tape.add(h, skip)?;
        Ok(tape.relu(y))
    }
}
