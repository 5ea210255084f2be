//! Synthetic indoor scenes whose class is carried by a relation between two
//! object regions.
//!
//! Class `k` is tied to an unordered label pair `(a_k, b_k)`: a scene of class
//! `k` contains an `a_k` region and a `b_k` region that share an edge, plus
//! optional distractor regions. Every relation label belongs to two classes,
//! so no single label identifies the class. With `decoy` set, a scene also
//! holds a pair from another class whose two regions are kept apart, so that
//! only adjacency separates the classes. Label `0` is background.
//!
//! Regions are aligned to `cell`-pixel blocks and kept `margin` pixels away
//! from the border, so label maps are constant on each cell and centre/corner
//! crops that lose at most `margin` pixels per side keep every region.

mod corpus;
mod fixture;

pub use corpus::{read_corpus, write_corpus, CorpusEntry, CorpusManifest, Split};
pub use fixture::{decode_fixture, encode_fixture, read_fixture, write_fixture, FIXTURE_MAGIC, FIXTURE_VERSION};

use std::collections::BTreeSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::hard_labels;
use crate::score::{LabelMap, ScoreTensor};
use crate::tensor::DiffTensor;

const PLACEMENT_ATTEMPTS: usize = 400;
const SCENE_ATTEMPTS: usize = 200;
/// Floor on the peak of a planted low-confidence pixel.
const MIN_CORRUPT_PEAK: f64 = 0.3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneRecipe {
    pub width: usize,
    pub height: usize,
    /// Label vocabulary size `l` (label 0 is background).
    pub labels: usize,
    pub num_classes: usize,
    /// Relation pair per class. Empty means the cycle
    /// `(1,2), (2,3), …, (n,1)` over labels `1..=n`.
    pub pairs: Vec<[usize; 2]>,
    pub cell: usize,
    pub margin: usize,
    /// Region sides in cells.
    pub min_cells: usize,
    pub max_cells: usize,
    pub max_distractors: usize,
    pub decoy: bool,
    pub clean_peak_min: f64,
    pub clean_peak_max: f64,
    /// Per-pixel probability `ρ` of a low-confidence wrong label.
    pub corruption_rate: f64,
    /// Corrupted peak relative to the least confident clean pixel of its cell.
    pub corruption_margin: f64,
    /// Standard deviation of the RGB noise.
    pub rgb_noise: f64,
    /// Per-scene probability that one relation region is confidently
    /// mislabelled in the score tensor.
    pub segmentation_failure_rate: f64,
    /// Per-scene probability that one relation region is rendered in the
    /// colour of another label.
    pub rgb_confusion_rate: f64,
    pub seed: u64,
}

impl Default for SceneRecipe {
    fn default() -> Self {
        Self {
            width: 32,
            height: 32,
            labels: 12,
            num_classes: 8,
            pairs: Vec::new(),
            cell: 2,
            margin: 4,
            min_cells: 2,
            max_cells: 3,
            max_distractors: 2,
            decoy: false,
            clean_peak_min: 0.7,
            clean_peak_max: 0.95,
            corruption_rate: 0.1,
            corruption_margin: 0.8,
            rgb_noise: 0.1,
            segmentation_failure_rate: 0.0,
            rgb_confusion_rate: 0.0,
            seed: 0,
        }
    }
}

impl SceneRecipe {
    /// Class pairs, with the default cycle filled in.
    pub fn class_pairs(&self) -> Vec<[usize; 2]> {
        if !self.pairs.is_empty() {
            return self.pairs.clone();
        }
        let n = self.num_classes;
        (0..n).map(|k| [1 + k, 1 + (k + 1) % n]).collect()
    }

    /// Labels that take part in some class relation.
    pub fn relation_labels(&self) -> Vec<usize> {
        let set: BTreeSet<usize> = self.class_pairs().iter().flatten().copied().collect();
        set.into_iter().collect()
    }

    pub fn distractor_labels(&self) -> Vec<usize> {
        let rel = self.relation_labels();
        (1..self.labels).filter(|l| !rel.contains(l)).collect()
    }

    fn is_pair(&self, a: usize, b: usize) -> bool {
        self.class_pairs()
            .iter()
            .any(|p| (p[0] == a && p[1] == b) || (p[0] == b && p[1] == a))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_classes < 2 {
            return bad("at least two classes are required".into());
        }
        if self.labels < 4 {
            return bad("at least four labels are required".into());
        }
        let pairs = self.class_pairs();
        if pairs.len() != self.num_classes {
            return bad(format!(
                "{} relation pairs for {} classes",
                pairs.len(),
                self.num_classes
            ));
        }
        let mut seen = BTreeSet::new();
        for p in &pairs {
            let (a, b) = (p[0].min(p[1]), p[0].max(p[1]));
            if a == b || a == 0 || b >= self.labels {
                return bad(format!(
                    "pair {p:?} must join two distinct labels in 1..{}",
                    self.labels
                ));
            }
            if !seen.insert((a, b)) {
                return bad(format!("pair {p:?} is used by two classes"));
            }
        }
        if self.cell == 0 || self.min_cells == 0 || self.min_cells > self.max_cells {
            return bad("cell and region sizes must be positive and ordered".into());
        }
        if self.width < 2 * self.margin + 2 * self.max_cells * self.cell
            || self.height < 2 * self.margin + 2 * self.max_cells * self.cell
        {
            return bad(format!(
                "{}x{} grid cannot hold two {}-cell regions inside a {}-pixel margin",
                self.width, self.height, self.max_cells, self.margin
            ));
        }
        let band = self.clean_peak_min..=self.clean_peak_max;
        if !(self.clean_peak_min > 1.0 / self.labels as f64) || self.clean_peak_max > 1.0 || band.is_empty() {
            return bad(format!(
                "clean peak band [{}, {}] must lie in (1/l, 1]",
                self.clean_peak_min, self.clean_peak_max
            ));
        }
        if !(0.0..1.0).contains(&self.corruption_rate) {
            return bad(format!("corruption rate {} outside [0, 1)", self.corruption_rate));
        }
        if !(self.corruption_margin > 0.0) {
            return bad("corruption margin must be positive".into());
        }
        if !(self.rgb_noise >= 0.0) {
            return bad("rgb noise must be non-negative".into());
        }
        for (what, r) in [
            ("segmentation failure", self.segmentation_failure_rate),
            ("rgb confusion", self.rgb_confusion_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return bad(format!("{what} rate {r} outside [0, 1]"));
            }
        }
        if (self.segmentation_failure_rate > 0.0 || self.rgb_confusion_rate > 0.0)
            && pairs.iter().any(|p| {
                self.substitutes(p[0], p[1]).is_empty() || self.substitutes(p[1], p[0]).is_empty()
            })
        {
            return bad("no substitute label exists for a relation region".into());
        }
        Ok(())
    }

    /// Relation labels `x` that may replace `label` next to `partner`
    /// without forming any class pair.
    fn substitutes(&self, label: usize, partner: usize) -> Vec<usize> {
        self.relation_labels()
            .into_iter()
            .filter(|&x| x != label && x != partner && !self.is_pair(x, partner))
            .collect()
    }
}

/// A `3×h×w` image, channel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != 3 * width * height {
            return Err(Error::shape(
                "RgbImage",
                format!("3x{height}x{width} values"),
                data.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn to_tensor(&self) -> DiffTensor {
        DiffTensor::new(&[3, self.height, self.width], self.data.clone()).expect("dims checked")
    }

    /// Pixel values shifted by −0.5 so the grey background maps to zero.
    pub fn to_centered_tensor(&self) -> DiffTensor {
        DiffTensor::new(&[3, self.height, self.width], self.data.iter().map(|v| v - 0.5).collect())
            .expect("dims checked")
    }

    pub fn crop(&self, x0: usize, y0: usize, cw: usize, ch: usize) -> Result<Self> {
        if cw == 0 || ch == 0 || x0 + cw > self.width || y0 + ch > self.height {
            return Err(Error::shape(
                "RgbImage::crop",
                format!("window inside {}x{}", self.width, self.height),
                format!("{cw}x{ch} at ({x0}, {y0})"),
            ));
        }
        let mut data = Vec::with_capacity(3 * cw * ch);
        for c in 0..3 {
            for y in y0..y0 + ch {
                for x in x0..x0 + cw {
                    data.push(self.get(c, x, y));
                }
            }
        }
        Self::new(cw, ch, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for c in 0..3 {
            for y in 0..self.height {
                for x in (0..self.width).rev() {
                    data.push(self.get(c, x, y));
                }
            }
        }
        Self {
            data,
            ..self.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScene {
    pub score: ScoreTensor,
    pub rgb: RgbImage,
    pub label: usize,
    pub clean_labels: LabelMap,
    /// Row-major; `true` where the score tensor's hard label is wrong.
    pub corruption_mask: Vec<bool>,
}

impl SyntheticScene {
    /// Checks dimensions, the score simplex and that the hard labels differ
    /// from the clean labels exactly on the corruption mask.
    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.score.width(), self.score.height());
        if self.rgb.width() != w
            || self.rgb.height() != h
            || self.clean_labels.width() != w
            || self.clean_labels.height() != h
            || self.corruption_mask.len() != w * h
        {
            return Err(Error::shape(
                "SyntheticScene",
                format!("{w}x{h} everywhere"),
                format!(
                    "rgb {}x{}, clean {}x{}, mask {}",
                    self.rgb.width(),
                    self.rgb.height(),
                    self.clean_labels.width(),
                    self.clean_labels.height(),
                    self.corruption_mask.len()
                ),
            ));
        }
        self.score.check_simplex()?;
        let hard = hard_labels(&self.score);
        let agree = hard
            .as_slice()
            .iter()
            .zip(self.clean_labels.as_slice())
            .zip(&self.corruption_mask)
            .all(|((h, c), m)| (h != c) == *m);
        if !agree {
            return Err(Error::Config(
                "corruption mask disagrees with hard labels".into(),
            ));
        }
        Ok(())
    }

    pub fn corrupted_pixels(&self) -> usize {
        self.corruption_mask.iter().filter(|m| **m).count()
    }
}

/// Fixed colour per label. Background is mid grey; labels 1..=26 take the
/// other points of the `{0.1, 0.5, 0.9}³` grid (pairwise distance ≥ 0.4),
/// later labels fall back to hues spaced by the golden angle.
pub fn palette(label: usize) -> [f64; 3] {
    const LEVELS: [f64; 3] = [0.1, 0.9, 0.5];
    if label == 0 {
        return [0.5, 0.5, 0.5];
    }
    if label <= 26 {
        // Saturated corners first, then points with one or two mid levels.
        let mut grid: Vec<[usize; 3]> = (0..27)
            .map(|i| [i / 9, (i / 3) % 3, i % 3])
            .filter(|c| c != &[2, 2, 2])
            .collect();
        grid.sort_by_key(|c| c.iter().filter(|&&l| l == 2).count());
        let c = grid[label - 1];
        return [LEVELS[c[0]], LEVELS[c[1]], LEVELS[c[2]]];
    }
    let hue = (label as f64 * 0.618_033_988_75).fract() * 6.0;
    let (s, v) = (0.85, if label % 2 == 0 { 0.95 } else { 0.6 });
    let c = v * s;
    let x = c * (1.0 - ((hue % 2.0) - 1.0).abs());
    let (r, g, b) = match hue as usize {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of scene `index` under `seed`.
pub fn scene_seed(seed: u64, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(index))
}

/// Axis-aligned region in cell units.
#[derive(Clone, Copy, Debug)]
struct Rect {
    x: usize,
    y: usize,
    w: usize,
    h: usize,
}

impl Rect {
    /// True when the two regions overlap or come closer than `gap` cells.
    fn near(&self, o: &Rect, gap: usize) -> bool {
        self.x < o.x + o.w + gap
            && o.x < self.x + self.w + gap
            && self.y < o.y + o.h + gap
            && o.y < self.y + self.h + gap
    }
}

struct Layout<'a> {
    recipe: &'a SceneRecipe,
    lo: usize,
    hi_x: usize,
    hi_y: usize,
    rects: Vec<(Rect, usize)>,
}

impl<'a> Layout<'a> {
    fn new(recipe: &'a SceneRecipe) -> Self {
        let c = recipe.cell;
        Self {
            recipe,
            lo: recipe.margin.div_ceil(c),
            hi_x: (recipe.width - recipe.margin) / c,
            hi_y: (recipe.height - recipe.margin) / c,
            rects: Vec::new(),
        }
    }

    fn random_size(&self, rng: &mut impl Rng) -> (usize, usize) {
        let r = self.recipe.min_cells..=self.recipe.max_cells;
        (rng.random_range(r.clone()), rng.random_range(r))
    }

    fn fits(&self, r: &Rect) -> bool {
        r.x >= self.lo && r.y >= self.lo && r.x + r.w <= self.hi_x && r.y + r.h <= self.hi_y
    }

    fn random_rect(&self, rng: &mut impl Rng) -> Option<Rect> {
        let (w, h) = self.random_size(rng);
        if self.lo + w > self.hi_x || self.lo + h > self.hi_y {
            return None;
        }
        Some(Rect {
            x: rng.random_range(self.lo..=self.hi_x - w),
            y: rng.random_range(self.lo..=self.hi_y - h),
            w,
            h,
        })
    }

    /// Places a region at least one cell away from every other region.
    fn place_apart(&mut self, label: usize, rng: &mut impl Rng) -> bool {
        for _ in 0..PLACEMENT_ATTEMPTS {
            if let Some(r) = self.random_rect(rng) {
                if self.rects.iter().all(|(o, _)| !r.near(o, 1)) {
                    self.rects.push((r, label));
                    return true;
                }
            }
        }
        false
    }

    /// Places two regions sharing an edge of at least one cell.
    fn place_touching(&mut self, a: usize, b: usize, rng: &mut impl Rng) -> bool {
        for _ in 0..PLACEMENT_ATTEMPTS {
            let Some(ra) = self.random_rect(rng) else {
                return false;
            };
            let (w, h) = self.random_size(rng);
            let rb = match rng.random_range(0..4) {
                0 if ra.x + ra.w + w <= self.hi_x => Rect {
                    x: ra.x + ra.w,
                    y: (ra.y + rng.random_range(0..ra.h)).saturating_sub(rng.random_range(0..h)),
                    w,
                    h,
                },
                1 if ra.x >= w => Rect {
                    x: ra.x - w,
                    y: (ra.y + rng.random_range(0..ra.h)).saturating_sub(rng.random_range(0..h)),
                    w,
                    h,
                },
                2 if ra.y + ra.h + h <= self.hi_y => Rect {
                    x: (ra.x + rng.random_range(0..ra.w)).saturating_sub(rng.random_range(0..w)),
                    y: ra.y + ra.h,
                    w,
                    h,
                },
                3 if ra.y >= h => Rect {
                    x: (ra.x + rng.random_range(0..ra.w)).saturating_sub(rng.random_range(0..w)),
                    y: ra.y - h,
                    w,
                    h,
                },
                _ => continue,
            };
            let shares_edge = if rb.x == ra.x + ra.w || rb.x + rb.w == ra.x {
                rb.y < ra.y + ra.h && ra.y < rb.y + rb.h
            } else {
                rb.x < ra.x + ra.w && ra.x < rb.x + rb.w
            };
            if self.fits(&rb)
                && shares_edge
                && self
                    .rects
                    .iter()
                    .all(|(o, _)| !ra.near(o, 1) && !rb.near(o, 1))
            {
                self.rects.push((ra, a));
                self.rects.push((rb, b));
                return true;
            }
        }
        false
    }

    fn paint(&self, overrides: &[(usize, usize)]) -> LabelMap {
        let c = self.recipe.cell;
        let mut map = LabelMap::filled(self.recipe.width, self.recipe.height, 0);
        for (i, (r, label)) in self.rects.iter().enumerate() {
            let l = overrides
                .iter()
                .find(|(j, _)| *j == i)
                .map_or(*label, |(_, l)| *l);
            for y in r.y * c..(r.y + r.h) * c {
                for x in r.x * c..(r.x + r.w) * c {
                    map.set(x, y, l);
                }
            }
        }
        map
    }
}

/// A distribution over `l` labels peaking at `label` with mass `peak`; the
/// remaining mass is spread by softmax weights of random logits, capped so
/// `label` stays the strict argmax.
fn peaked_pixel(l: usize, label: usize, peak: f64, rng: &mut impl Rng) -> Vec<f64> {
    let mut px = vec![0.0; l];
    if peak >= 1.0 {
        px[label] = 1.0;
        return px;
    }
    let rest = 1.0 - peak;
    let logits: Vec<f64> = (0..l).map(|_| rng.random_range(-1.0..1.0)).collect();
    let z: f64 = (0..l).filter(|&c| c != label).map(|c| logits[c].exp()).sum();
    for c in 0..l {
        px[c] = if c == label { peak } else { rest * logits[c].exp() / z };
    }
    if (0..l).any(|c| c != label && px[c] >= peak) {
        let even = rest / (l - 1) as f64;
        for (c, v) in px.iter_mut().enumerate() {
            *v = if c == label { peak } else { even };
        }
    }
    px
}

fn build_scene(recipe: &SceneRecipe, index: u64, rng: &mut ChaCha8Rng) -> Option<SyntheticScene> {
    let pairs = recipe.class_pairs();
    let k = (index % recipe.num_classes as u64) as usize;
    let [a, b] = pairs[k];
    let mut layout = Layout::new(recipe);
    if !layout.place_touching(a, b, rng) {
        return None;
    }
    if recipe.decoy {
        let others: Vec<usize> = (0..pairs.len()).filter(|&j| j != k).collect();
        let [da, db] = pairs[*others.choose(rng)?];
        if !layout.place_apart(da, rng) || !layout.place_apart(db, rng) {
            return None;
        }
    }
    let distractors = recipe.distractor_labels();
    if !distractors.is_empty() {
        for _ in 0..rng.random_range(0..=recipe.max_distractors) {
            let d = *distractors.choose(rng)?;
            if !layout.place_apart(d, rng) {
                return None;
            }
        }
    }
    let clean = layout.paint(&[]);

    // Regions 0 and 1 are the relation pair.
    let swap_region = |rng: &mut ChaCha8Rng| {
        let i = rng.random_range(0..2);
        let (label, partner) = if i == 0 { (a, b) } else { (b, a) };
        let subs = recipe.substitutes(label, partner);
        (i, *subs.choose(rng).expect("validated"))
    };
    let seg_fail = (recipe.segmentation_failure_rate > 0.0
        && rng.random_bool(recipe.segmentation_failure_rate))
    .then(|| swap_region(rng));
    let rgb_swap = (recipe.rgb_confusion_rate > 0.0 && rng.random_bool(recipe.rgb_confusion_rate))
        .then(|| swap_region(rng));
    let seen = match seg_fail {
        Some(o) => layout.paint(&[o]),
        None => clean.clone(),
    };
    let rendered = match rgb_swap {
        Some(o) => layout.paint(&[o]),
        None => clean.clone(),
    };

    let (w, h, l) = (recipe.width, recipe.height, recipe.labels);
    let peaks: Vec<f64> = (0..w * h)
        .map(|_| {
            if recipe.clean_peak_max > recipe.clean_peak_min {
                rng.random_range(recipe.clean_peak_min..recipe.clean_peak_max)
            } else {
                recipe.clean_peak_min
            }
        })
        .collect();

    // Low-confidence corruption, decided cell by cell so each cell keeps at
    // least one clean pixel. Regions already mislabelled are left alone.
    let mut corrupt = vec![false; w * h];
    let c = recipe.cell;
    for cy in (0..h).step_by(c) {
        for cx in (0..w).step_by(c) {
            let cell: Vec<usize> = (cy..(cy + c).min(h))
                .flat_map(|y| (cx..(cx + c).min(w)).map(move |x| y * w + x))
                .collect();
            let mut clean_left = cell.len();
            for &i in &cell {
                let hit = recipe.corruption_rate > 0.0 && rng.random_bool(recipe.corruption_rate);
                if hit && clean_left > 1 && seen.as_slice()[i] == clean.as_slice()[i] {
                    corrupt[i] = true;
                    clean_left -= 1;
                }
            }
        }
    }

    let mut data = Vec::with_capacity(w * h * l);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let truth = clean.get(x, y);
            let px = if corrupt[i] {
                let cy0 = y / c * c;
                let cx0 = x / c * c;
                let min_clean = (cy0..(cy0 + c).min(h))
                    .flat_map(|yy| (cx0..(cx0 + c).min(w)).map(move |xx| yy * w + xx))
                    .filter(|&j| !corrupt[j])
                    .map(|j| peaks[j])
                    .fold(f64::INFINITY, f64::min);
                let q = (recipe.corruption_margin * min_clean).clamp(MIN_CORRUPT_PEAK, 1.0);
                let mut wrong = rng.random_range(0..l - 1);
                if wrong >= truth {
                    wrong += 1;
                }
                peaked_pixel(l, wrong, q, rng)
            } else {
                peaked_pixel(l, seen.get(x, y), peaks[i], rng)
            };
            data.extend(px);
        }
    }
    let score = ScoreTensor::from_raw(w, h, l, data).ok()?;
    let mask = (0..w * h)
        .map(|i| corrupt[i] || seen.as_slice()[i] != clean.as_slice()[i])
        .collect();

    let normal = Normal::new(0.0, recipe.rgb_noise).ok()?;
    let mut rgb = Vec::with_capacity(3 * w * h);
    for ch in 0..3 {
        for y in 0..h {
            for x in 0..w {
                rgb.push(palette(rendered.get(x, y))[ch] + normal.sample(rng));
            }
        }
    }
    Some(SyntheticScene {
        score,
        rgb: RgbImage::new(w, h, rgb).ok()?,
        label: k,
        clean_labels: clean,
        corruption_mask: mask,
    })
}

/// Scene number `index` of the stream defined by `recipe`; its class is
/// `index mod num_classes`.
pub fn generate_scene(recipe: &SceneRecipe, index: u64) -> Result<SyntheticScene> {
    recipe.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(scene_seed(recipe.seed, index));
    for _ in 0..SCENE_ATTEMPTS {
        if let Some(s) = build_scene(recipe, index, &mut rng) {
            return Ok(s);
        }
    }
    Err(Error::Config(format!(
        "could not lay out scene {index} on a {}x{} grid; enlarge the grid or shrink regions",
        recipe.width, recipe.height
    )))
}

/// Scenes `start..start + n`.
pub fn generate_range(recipe: &SceneRecipe, start: u64, n: usize) -> Result<Vec<SyntheticScene>> {
    (start..start + n as u64)
        .map(|i| generate_scene(recipe, i))
        .collect()
}

pub fn generate(recipe: &SceneRecipe, n: usize) -> Result<Vec<SyntheticScene>> {
    generate_range(recipe, 0, n)
}

/// The class whose pair is 4-adjacent somewhere in `map`, if exactly one is.
pub fn rule_oracle(recipe: &SceneRecipe, map: &LabelMap) -> Option<usize> {
    let mut touching = BTreeSet::new();
    for y in 0..map.height() {
        for x in 0..map.width() {
            let l = map.get(x, y);
            for (nx, ny) in [(x + 1, y), (x, y + 1)] {
                if nx < map.width() && ny < map.height() {
                    let m = map.get(nx, ny);
                    if m != l {
                        touching.insert((l.min(m), l.max(m)));
                    }
                }
            }
        }
    }
    let hits: Vec<usize> = recipe
        .class_pairs()
        .iter()
        .enumerate()
        .filter(|(_, p)| touching.contains(&(p[0].min(p[1]), p[0].max(p[1]))))
        .map(|(k, _)| k)
        .collect();
    match hits.as_slice() {
        [k] => Some(*k),
        _ => None,
    }
}

/// Keeps channels `0..keep_k` and merges the rest into one extra "other"
/// channel. Clean labels at or above `keep_k` become `keep_k`, and the mask
/// is recomputed against the new hard labels. `keep_k = l` is the identity.
pub fn vocabulary_restrict(scene: &SyntheticScene, keep_k: usize) -> Result<SyntheticScene> {
    let l = scene.score.labels();
    if keep_k == 0 || keep_k > l {
        return Err(Error::Config(format!("keep_k {keep_k} outside 1..={l}")));
    }
    if keep_k == l {
        return Ok(scene.clone());
    }
    let mut data = Vec::with_capacity(scene.score.width() * scene.score.height() * (keep_k + 1));
    for px in scene.score.data().chunks(l) {
        data.extend_from_slice(&px[..keep_k]);
        data.push(px[keep_k..].iter().sum());
    }
    let score = ScoreTensor::new(scene.score.width(), scene.score.height(), keep_k + 1, data)?;
    let clean = LabelMap::new(
        scene.clean_labels.width(),
        scene.clean_labels.height(),
        scene
            .clean_labels
            .as_slice()
            .iter()
            .map(|&c| c.min(keep_k))
            .collect(),
    )?;
    let mask = hard_labels(&score)
        .as_slice()
        .iter()
        .zip(clean.as_slice())
        .map(|(h, c)| h != c)
        .collect();
    Ok(SyntheticScene {
        score,
        rgb: scene.rgb.clone(),
        label: scene.label,
        clean_labels: clean,
        corruption_mask: mask,
    })
}
