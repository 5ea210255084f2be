//! Segmentation score tensors and hard label maps.

use crate::error::{Error, Result};

/// Tolerance on per-pixel probability mass.
pub const SIMPLEX_TOLERANCE: f64 = 1e-4;

/// A `w×h×l` tensor of per-pixel label distributions.
///
/// Storage is pixel-major: the `l` scores of pixel `(x, y)` are contiguous at
/// offset `(y·w + x)·l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTensor {
    width: usize,
    height: usize,
    labels: usize,
    data: Vec<f64>,
}

impl ScoreTensor {
    /// Builds a tensor, checking that every pixel is a probability
    /// distribution (values in `[0, 1]`, sum within [`SIMPLEX_TOLERANCE`] of 1).
    pub fn new(width: usize, height: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        let t = Self::from_raw(width, height, labels, data)?;
        t.check_simplex()?;
        Ok(t)
    }

    /// Builds a tensor checking only its dimensions.
    pub fn from_raw(width: usize, height: usize, labels: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || labels == 0 {
            return Err(Error::shape(
                "ScoreTensor",
                "non-zero dims",
                format!("{width}x{height}x{labels}"),
            ));
        }
        if data.len() != width * height * labels {
            return Err(Error::shape(
                "ScoreTensor",
                format!("{} values", width * height * labels),
                data.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
            data,
        })
    }

    pub fn check_simplex(&self) -> Result<()> {
        for (i, px) in self.data.chunks(self.labels).enumerate() {
            if px.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::Config(format!(
                    "pixel {i} has a score outside [0, 1]"
                )));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > SIMPLEX_TOLERANCE {
                return Err(Error::Config(format!("pixel {i} sums to {s}")));
            }
        }
        Ok(())
    }

    /// A spatially constant tensor.
    pub fn uniform_pixels(width: usize, height: usize, pixel: &[f64]) -> Result<Self> {
        let data = pixel
            .iter()
            .copied()
            .cycle()
            .take(width * height * pixel.len())
            .collect();
        Self::new(width, height, pixel.len(), data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn labels(&self) -> usize {
        self.labels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let o = (y * self.width + x) * self.labels;
        &self.data[o..o + self.labels]
    }

    /// Largest channel score of pixel `(x, y)`.
    pub fn peak(&self, x: usize, y: usize) -> f64 {
        self.pixel(x, y)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Channel-major `l×h×w` copy for the convolutional backbone.
    pub fn to_chw(&self) -> Vec<f64> {
        let (w, h, l) = (self.width, self.height, self.labels);
        let mut out = vec![0.0; l * h * w];
        for y in 0..h {
            for x in 0..w {
                for (c, v) in self.pixel(x, y).iter().enumerate() {
                    out[(c * h + y) * w + x] = *v;
                }
            }
        }
        out
    }

    pub fn crop(&self, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Self> {
        if cw == 0 || ch == 0 || x0 + cw > self.width || y0 + ch > self.height {
            return Err(Error::shape(
                "ScoreTensor::crop",
                format!("window inside {}x{}", self.width, self.height),
                format!("{cw}x{ch} at ({x0}, {y0})"),
            ));
        }
        let mut data = Vec::with_capacity(cw * ch * self.labels);
        for y in y0..y0 + ch {
            for x in x0..x0 + cw {
                data.extend_from_slice(self.pixel(x, y));
            }
        }
        Self::from_raw(cw, ch, self.labels, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                data.extend_from_slice(self.pixel(x, y));
            }
        }
        Self {
            data,
            ..self.clone()
        }
    }

    /// Reorders channels: output channel `i` is input channel `perm[i]`.
    pub fn permute_channels(&self, perm: &[usize]) -> Result<Self> {
        let mut seen = vec![false; self.labels];
        if perm.len() != self.labels
            || perm.iter().any(|&p| p >= self.labels || std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Config(format!(
                "{perm:?} is not a permutation of {} channels",
                self.labels
            )));
        }
        let data = self
            .data
            .chunks(self.labels)
            .flat_map(|px| perm.iter().map(move |&p| px[p]))
            .collect();
        Ok(Self {
            data,
            ..self.clone()
        })
    }
}

/// Per-pixel integer labels, row-major `h` rows of `w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<usize>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                "LabelMap",
                format!("{} labels", width * height),
                labels.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            labels,
        })
    }

    pub fn filled(width: usize, height: usize, label: usize) -> Self {
        Self {
            width,
            height,
            labels: vec![label; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, x: usize, y: usize) -> usize {
        self.labels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, label: usize) {
        self.labels[y * self.width + x] = label;
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.labels
    }

    pub fn crop(&self, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Self> {
        if x0 + cw > self.width || y0 + ch > self.height {
            return Err(Error::shape(
                "LabelMap::crop",
                format!("window inside {}x{}", self.width, self.height),
                format!("{cw}x{ch} at ({x0}, {y0})"),
            ));
        }
        let labels = (y0..y0 + ch)
            .flat_map(|y| (x0..x0 + cw).map(move |x| (x, y)))
            .map(|(x, y)| self.get(x, y))
            .collect();
        Self::new(cw, ch, labels)
    }
}
