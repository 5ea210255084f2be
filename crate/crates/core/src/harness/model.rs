use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::filter::{confidence_filter, FilterConfig};
use crate::fusion::{classify, FusionHead, LinearVars};
use crate::nn::{kaiming_uniform, score_input, Backbone, Bound, FeatureKind, ParamStore};
use crate::score::ScoreTensor;
use crate::synth::{splitmix64, vocabulary_restrict, RgbImage, SyntheticScene};
use crate::tensor::{softmax_slice, DiffTensor, Tape, Var};

pub const SEMANTIC: &str = "semantic";
pub const RGB: &str = "rgb";
pub const FUSION: &str = "fusion";
pub const SEMANTIC_HEAD: &str = "semantic_head";
pub const RGB_HEAD: &str = "rgb_head";

/// Network inputs of one (possibly cropped) view of a scene.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    /// Filtered score tensor, `l×h'×w'`.
    pub score: DiffTensor,
    /// `3×h×w`.
    pub rgb: DiffTensor,
    pub label: usize,
}

impl Sample {
    pub fn from_parts(score: &ScoreTensor, rgb: &RgbImage, label: usize, filter: FilterConfig) -> Result<Self> {
        let filtered = confidence_filter(score, filter)?;
        Ok(Self {
            score: score_input(&filtered),
            rgb: rgb.to_centered_tensor(),
            label,
        })
    }
}

/// Class probabilities from each available head.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub fused: Vec<f64>,
    pub semantic: Option<Vec<f64>>,
    pub rgb: Option<Vec<f64>>,
}

fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl Prediction {
    pub fn class(&self) -> usize {
        argmax(&self.fused)
    }

    pub fn semantic_class(&self) -> Option<usize> {
        self.semantic.as_deref().map(argmax)
    }

    pub fn rgb_class(&self) -> Option<usize> {
        self.rgb.as_deref().map(argmax)
    }
}

/// Both branches, the fusion head, and the stage-one branch classifiers.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub semantic: Backbone,
    pub rgb: Backbone,
    pub fusion: FusionHead,
    pub filter: FilterConfig,
    pub vocabulary: Option<usize>,
    pub num_classes: usize,
    /// Branch and fusion parameters.
    pub params: ParamStore,
    /// Temporary per-branch classifiers from stage one.
    pub heads: ParamStore,
}

impl Model {
    /// Architecture from `cfg`, initialised from `seed`.
    pub fn init(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let semantic = Backbone::new(cfg.semantic_config()?, SEMANTIC, FeatureKind::Semantic)?;
        let rgb = Backbone::new(cfg.rgb_config()?, RGB, FeatureKind::Rgb)?;
        let c = semantic.config.output_dim();
        let k = cfg.recipe.num_classes;
        let fusion = FusionHead::new(cfg.fusion, c, k, FUSION)?;
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ 0x1d));
        let mut params = ParamStore::new();
        semantic.init(&mut params, &mut rng)?;
        rgb.init(&mut params, &mut rng)?;
        fusion.init(&mut params, &mut rng)?;
        let mut heads = ParamStore::new();
        for p in [SEMANTIC_HEAD, RGB_HEAD] {
            heads.insert(format!("{p}.w"), kaiming_uniform(&[k, c], c, &mut rng))?;
            heads.insert(format!("{p}.b"), DiffTensor::zeros(&[k]))?;
        }
        Ok(Self {
            semantic,
            rgb,
            fusion,
            filter: cfg.filter()?,
            vocabulary: cfg.vocabulary,
            num_classes: k,
            params,
            heads,
        })
    }

    /// Architecture from `cfg` with parameters read from a stage-two
    /// checkpoint directory (and stage-one heads when `heads_dir` is given).
    pub fn load(cfg: &ExperimentConfig, dir: &Path, heads_dir: Option<&Path>) -> Result<Self> {
        let mut m = Self::init(cfg, cfg.seed)?;
        let loaded = ParamStore::read_checkpoint(dir)?;
        m.replace_params(loaded, false)?;
        if let Some(h) = heads_dir {
            let stage1 = ParamStore::read_checkpoint(h)?;
            let mut heads = stage1.subset(SEMANTIC_HEAD);
            heads.extend(stage1.subset(RGB_HEAD))?;
            m.replace_params(heads, true)?;
        }
        Ok(m)
    }

    /// Replaces parameters, requiring the same names and shapes.
    fn replace_params(&mut self, new: ParamStore, heads: bool) -> Result<()> {
        let target = if heads { &mut self.heads } else { &mut self.params };
        if new.len() != target.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} tensors, model expects {}",
                new.len(),
                target.len()
            )));
        }
        for (name, t) in target.iter() {
            let got = new.require(name)?;
            if got.shape() != t.shape() {
                return Err(Error::shape("checkpoint", format!("{name} {:?}", t.shape()), format!("{:?}", got.shape())));
            }
        }
        *target = new;
        Ok(())
    }

    /// Applies the vocabulary restriction this model was built for.
    pub fn adapt_scene(&self, scene: &SyntheticScene) -> Result<SyntheticScene> {
        match self.vocabulary {
            Some(k) => vocabulary_restrict(scene, k),
            None => Ok(scene.clone()),
        }
    }

    pub fn sample(&self, scene: &SyntheticScene) -> Result<Sample> {
        Sample::from_parts(&scene.score, &scene.rgb, scene.label, self.filter)
    }

    pub fn head_vars(bound: &Bound, prefix: &str) -> Result<LinearVars> {
        Ok(LinearVars {
            w: bound.get(&format!("{prefix}.w"))?,
            b: bound.get(&format!("{prefix}.b"))?,
        })
    }

    /// Global features `(F_S, F_R)` of one sample on `tape`.
    pub fn features(&self, tape: &mut Tape, bound: &Bound, s: &Sample) -> Result<(Var, Var)> {
        let xs = tape.constant(s.score.clone());
        let xr = tape.constant(s.rgb.clone());
        let fs = self.semantic.forward(tape, bound, xs)?;
        let fr = self.rgb.forward(tape, bound, xr)?;
        Ok((fs, fr))
    }

    /// Inference on one view. Branch probabilities are included when stage-one
    /// heads are present.
    pub fn predict_sample(&self, s: &Sample) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, |_| false);
        let heads = self.heads.bind(&mut tape, |_| false);
        let (fs, fr) = self.features(&mut tape, &bound, s)?;
        let logits = self.fusion.forward(&mut tape, &bound, fr, fs, false, 0)?;
        let fused = softmax_slice(tape.value(logits));
        let branch = |tape: &mut Tape, f: Var, prefix: &str| -> Result<Option<Vec<f64>>> {
            if self.heads.is_empty() {
                return Ok(None);
            }
            let h = Self::head_vars(&heads, prefix)?;
            let y = classify(tape, f, h, 0.0, false, 0)?;
            Ok(Some(softmax_slice(tape.value(y))))
        };
        let semantic = branch(&mut tape, fs, SEMANTIC_HEAD)?;
        let rgb = branch(&mut tape, fr, RGB_HEAD)?;
        Ok(Prediction { fused, semantic, rgb })
    }

    /// Single full-size view.
    pub fn predict(&self, scene: &SyntheticScene) -> Result<Prediction> {
        let scene = self.adapt_scene(scene)?;
        self.predict_sample(&self.sample(&scene)?)
    }

    /// Averages class probabilities over the ten standard crops.
    pub fn predict_ten_crop(&self, scene: &SyntheticScene, crop: usize) -> Result<Prediction> {
        let scene = self.adapt_scene(scene)?;
        let views = ten_crops(&scene.score, &scene.rgb, crop)?;
        let preds = views
            .iter()
            .map(|(s, r)| self.predict_sample(&Sample::from_parts(s, r, scene.label, self.filter)?))
            .collect::<Result<Vec<_>>>()?;
        Ok(average(&preds))
    }
}

/// Element-wise mean of predictions.
pub fn average(preds: &[Prediction]) -> Prediction {
    let n = preds.len() as f64;
    let mean = |get: &dyn Fn(&Prediction) -> Option<&Vec<f64>>| -> Option<Vec<f64>> {
        let first = get(&preds[0])?;
        let mut acc = vec![0.0; first.len()];
        for p in preds {
            for (a, v) in acc.iter_mut().zip(get(p)?) {
                *a += v;
            }
        }
        Some(acc.into_iter().map(|v| v / n).collect())
    };
    Prediction {
        fused: mean(&|p| Some(&p.fused)).expect("fused always present"),
        semantic: mean(&|p| p.semantic.as_ref()),
        rgb: mean(&|p| p.rgb.as_ref()),
    }
}

/// Top-left corners of the four corner crops and the centre crop.
pub fn crop_origins(width: usize, height: usize, crop: usize) -> Result<[(usize, usize); 5]> {
    if crop == 0 || crop > width || crop > height {
        return Err(Error::shape(
            "ten_crop",
            format!("crop ≤ {width}x{height}"),
            crop,
        ));
    }
    let (dx, dy) = (width - crop, height - crop);
    Ok([(0, 0), (dx, 0), (0, dy), (dx, dy), (dx / 2, dy / 2)])
}

/// Corner and centre crops followed by their horizontal mirrors, with the
/// score tensor and the image cut at the same place.
pub fn ten_crops(score: &ScoreTensor, rgb: &RgbImage, crop: usize) -> Result<Vec<(ScoreTensor, RgbImage)>> {
    if rgb.width() != score.width() || rgb.height() != score.height() {
        return Err(Error::shape(
            "ten_crop",
            format!("{}x{}", score.width(), score.height()),
            format!("{}x{}", rgb.width(), rgb.height()),
        ));
    }
    let mut plain = Vec::with_capacity(5);
    for (x, y) in crop_origins(score.width(), score.height(), crop)? {
        plain.push((score.crop(x, y, crop, crop)?, rgb.crop(x, y, crop, crop)?));
    }
    let mirrored: Vec<_> = plain
        .iter()
        .map(|(s, r)| (s.flip_horizontal(), r.flip_horizontal()))
        .collect();
    plain.extend(mirrored);
    Ok(plain)
}
