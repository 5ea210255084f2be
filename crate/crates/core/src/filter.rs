//! Adaptive confidence filtering of score tensors.
//!
//! Each non-overlapping `window×window` block is replaced by the full score
//! vector of its most confident pixel, where a pixel's confidence is its
//! largest channel score. Low-confidence mislabelled pixels therefore lose to
//! confident neighbours, and the spatial size shrinks by `window` per axis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::score::{LabelMap, ScoreTensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryPolicy {
    /// Rows and columns past the last full window are dropped.
    #[default]
    TruncateTrailing,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Window side; the stride always equals the window.
    pub window: usize,
    #[serde(default)]
    pub boundary_policy: BoundaryPolicy,
}

impl FilterConfig {
    pub fn new(window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::Config("filter window must be ≥ 1".into()));
        }
        Ok(Self {
            window,
            boundary_policy: BoundaryPolicy::TruncateTrailing,
        })
    }

    pub fn output_dims(&self, width: usize, height: usize) -> (usize, usize) {
        (width / self.window, height / self.window)
    }
}

/// Keeps, per window, the pixel whose peak score is largest (first in
/// row-major order on ties) and copies its whole score vector.
pub fn confidence_filter(m: &ScoreTensor, cfg: FilterConfig) -> Result<ScoreTensor> {
    let k = cfg.window;
    if k == 0 {
        return Err(Error::Config("filter window must be ≥ 1".into()));
    }
    if m.width() < k || m.height() < k {
        return Err(Error::shape(
            "confidence_filter",
            format!("at least {k}x{k} pixels"),
            format!("{}x{}", m.width(), m.height()),
        ));
    }
    let (ow, oh) = cfg.output_dims(m.width(), m.height());
    let mut data = Vec::with_capacity(ow * oh * m.labels());
    for wy in 0..oh {
        for wx in 0..ow {
            let mut best = (wx * k, wy * k);
            let mut best_peak = f64::NEG_INFINITY;
            for y in wy * k..(wy + 1) * k {
                for x in wx * k..(wx + 1) * k {
                    let p = m.peak(x, y);
                    if p > best_peak {
                        best_peak = p;
                        best = (x, y);
                    }
                }
            }
            data.extend_from_slice(m.pixel(best.0, best.1));
        }
    }
    ScoreTensor::from_raw(ow, oh, m.labels(), data)
}

/// Per-pixel argmax channel, lowest index on ties.
pub fn hard_labels(m: &ScoreTensor) -> LabelMap {
    let labels = m
        .data()
        .chunks(m.labels())
        .map(|px| {
            let mut best = 0;
            for (c, &v) in px.iter().enumerate() {
                if v > px[best] {
                    best = c;
                }
            }
            best
        })
        .collect();
    LabelMap::new(m.width(), m.height(), labels).expect("dims match")
}

/// Majority label per window; ties go to the smallest label.
pub fn majority_downsample(map: &LabelMap, window: usize) -> Result<LabelMap> {
    if window == 0 || map.width() < window || map.height() < window {
        return Err(Error::shape(
            "majority_downsample",
            format!("at least {window}x{window} pixels"),
            format!("{}x{}", map.width(), map.height()),
        ));
    }
    let (ow, oh) = (map.width() / window, map.height() / window);
    let mut out = Vec::with_capacity(ow * oh);
    let mut votes: Vec<(usize, usize)> = Vec::with_capacity(window * window);
    for wy in 0..oh {
        for wx in 0..ow {
            votes.clear();
            for y in wy * window..(wy + 1) * window {
                for x in wx * window..(wx + 1) * window {
                    let l = map.get(x, y);
                    match votes.iter_mut().find(|(lab, _)| *lab == l) {
                        Some(v) => v.1 += 1,
                        None => votes.push((l, 1)),
                    }
                }
            }
            let winner = votes
                .iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|v| v.0)
                .expect("non-empty window");
            out.push(winner);
        }
    }
    LabelMap::new(ow, oh, out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmbiguityStats {
    /// Fraction of full-resolution pixels whose hard label disagrees with the clean map.
    pub pre_error_rate: f64,
    /// Same after filtering, against the majority-downsampled clean map.
    pub post_error_rate: f64,
}

fn error_rate(a: &LabelMap, b: &LabelMap) -> f64 {
    let wrong = a
        .as_slice()
        .iter()
        .zip(b.as_slice())
        .filter(|(x, y)| x != y)
        .count();
    wrong as f64 / a.as_slice().len() as f64
}

pub fn ambiguity_reduction_stats(
    clean: &LabelMap,
    noisy: &ScoreTensor,
    cfg: FilterConfig,
) -> Result<AmbiguityStats> {
    if clean.width() != noisy.width() || clean.height() != noisy.height() {
        return Err(Error::shape(
            "ambiguity_reduction_stats",
            format!("{}x{}", noisy.width(), noisy.height()),
            format!("{}x{}", clean.width(), clean.height()),
        ));
    }
    let pre = error_rate(&hard_labels(noisy), clean);
    let filtered = confidence_filter(noisy, cfg)?;
    let clean_down = majority_downsample(clean, cfg.window)?;
    let post = error_rate(&hard_labels(&filtered), &clean_down);
    Ok(AmbiguityStats {
        pre_error_rate: pre,
        post_error_rate: post,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_hot_pixel(l: usize, hot: usize, p: f64) -> Vec<f64> {
        let rest = (1.0 - p) / (l - 1) as f64;
        (0..l).map(|c| if c == hot { p } else { rest }).collect()
    }

    #[test]
    fn window_one_is_identity() {
        let mut data = Vec::new();
        for i in 0..15 {
            data.extend(one_hot_pixel(3, i % 3, 0.5 + 0.03 * i as f64));
        }
        let m = ScoreTensor::new(5, 3, 3, data).unwrap();
        let out = confidence_filter(&m, FilterConfig::new(1).unwrap()).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn constant_input_halves_dims() {
        let px = [0.1, 0.7, 0.2];
        let m = ScoreTensor::uniform_pixels(6, 4, &px).unwrap();
        let out = confidence_filter(&m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!((out.width(), out.height()), (3, 2));
        for y in 0..2 {
            for x in 0..3 {
                assert_eq!(out.pixel(x, y), &px);
            }
        }
    }

    #[test]
    fn single_channel_illustration_keeps_most_confident() {
        // Window scores 0.9, 0.1 / 0.2, 0.3 on a single channel.
        let m = ScoreTensor::from_raw(2, 2, 1, vec![0.9, 0.1, 0.2, 0.3]).unwrap();
        let out = confidence_filter(&m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!(out.data(), &[0.9]);
    }

    #[test]
    fn ties_pick_row_major_first() {
        let a = one_hot_pixel(2, 0, 0.8);
        let b = one_hot_pixel(2, 1, 0.8);
        let data = [b.clone(), a.clone(), a.clone(), a].concat();
        let m = ScoreTensor::new(2, 2, 2, data).unwrap();
        let out = confidence_filter(&m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!(out.data(), b.as_slice());
    }

    #[test]
    fn odd_dims_truncate() {
        let m = ScoreTensor::uniform_pixels(5, 7, &[0.5, 0.5]).unwrap();
        let out = confidence_filter(&m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!((out.width(), out.height()), (2, 3));
        let out4 = confidence_filter(&m, FilterConfig::new(4).unwrap()).unwrap();
        assert_eq!((out4.width(), out4.height()), (1, 1));
    }

    #[test]
    fn too_small_input_is_rejected() {
        let m = ScoreTensor::uniform_pixels(3, 5, &[1.0]).unwrap();
        assert!(confidence_filter(&m, FilterConfig::new(4).unwrap()).is_err());
        assert!(FilterConfig::new(0).is_err());
    }

    #[test]
    fn hard_labels_examples() {
        let m = ScoreTensor::new(
            2,
            1,
            3,
            vec![0.2, 0.5, 0.3, 0.0, 0.0, 1.0],
        )
        .unwrap();
        assert_eq!(hard_labels(&m).as_slice(), &[1, 2]);
        let tie = ScoreTensor::new(1, 1, 3, vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(hard_labels(&tie).as_slice(), &[0]);
    }

    #[test]
    fn majority_vote_breaks_ties_low() {
        let map = LabelMap::new(2, 2, vec![3, 1, 1, 3]).unwrap();
        assert_eq!(majority_downsample(&map, 2).unwrap().as_slice(), &[1]);
        let map = LabelMap::new(2, 2, vec![3, 3, 1, 2]).unwrap();
        assert_eq!(majority_downsample(&map, 2).unwrap().as_slice(), &[3]);
    }

    #[test]
    fn zero_corruption_has_zero_error() {
        let m = ScoreTensor::uniform_pixels(4, 4, &[0.1, 0.9]).unwrap();
        let clean = LabelMap::filled(4, 4, 1);
        let s = ambiguity_reduction_stats(&clean, &m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!(s.pre_error_rate, 0.0);
        assert_eq!(s.post_error_rate, 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let m = ScoreTensor::uniform_pixels(4, 4, &[0.1, 0.9]).unwrap();
        let clean = LabelMap::filled(4, 3, 1);
        assert!(ambiguity_reduction_stats(&clean, &m, FilterConfig::new(2).unwrap()).is_err());
    }

    #[test]
    fn low_confidence_corruption_is_filtered_out() {
        // One wrong pixel per window, always less confident than its neighbours.
        let (w, h, l) = (6, 4, 4);
        let mut data = Vec::new();
        let mut clean = Vec::new();
        for y in 0..h {
            for x in 0..w {
                let truth = (x / 2 + y / 2) % l;
                clean.push(truth);
                if x % 2 == 1 && y % 2 == 0 {
                    data.extend(one_hot_pixel(l, (truth + 1) % l, 0.6));
                } else {
                    data.extend(one_hot_pixel(l, truth, 0.8));
                }
            }
        }
        let m = ScoreTensor::new(w, h, l, data).unwrap();
        let clean = LabelMap::new(w, h, clean).unwrap();
        let s = ambiguity_reduction_stats(&clean, &m, FilterConfig::new(2).unwrap()).unwrap();
        assert_eq!(s.pre_error_rate, 0.25);
        assert_eq!(s.post_error_rate, 0.0);
    }
}
