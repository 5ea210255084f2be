//! Global integration of the RGB feature `F_R` and the semantic feature
//! `F_S`: stacking, a shared residual MLP per row, a strip depth-wise
//! convolution that mixes the two rows channel by channel, and a linear
//! classifier. Concatenation and semantic gating heads are provided for
//! comparison.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{kaiming_uniform, Bound, FeatureKind, GlobalFeature, ParamStore};
use crate::tensor::{DiffTensor, Tape, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    /// Residual MLP + strip depth-wise convolution.
    #[default]
    Dw,
    Concat,
    Gating,
}

impl FusionKind {
    pub const ALL: [FusionKind; 3] = [FusionKind::Dw, FusionKind::Concat, FusionKind::Gating];

    pub fn name(self) -> &'static str {
        match self {
            FusionKind::Dw => "dw",
            FusionKind::Concat => "concat",
            FusionKind::Gating => "gating",
        }
    }
}

impl std::str::FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dw" => Ok(FusionKind::Dw),
            "concat" => Ok(FusionKind::Concat),
            "gating" => Ok(FusionKind::Gating),
            _ => Err(Error::Config(format!(
                "unknown fusion '{s}' (expected dw, concat or gating)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    pub kind: FusionKind,
    pub hidden: usize,
    pub mlp_dropout: f64,
    pub head_dropout: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            kind: FusionKind::Dw,
            hidden: 512,
            mlp_dropout: 0.1,
            head_dropout: 0.8,
        }
    }
}

impl FusionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::Config("fusion hidden width must be positive".into()));
        }
        for (what, r) in [("mlp", self.mlp_dropout), ("head", self.head_dropout)] {
            if !(0.0..1.0).contains(&r) {
                return Err(Error::Config(format!("{what} dropout {r} outside [0, 1)")));
            }
        }
        Ok(())
    }
}

/// Multiply-add counts of a fusion head.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusionFlops {
    /// Aggregation and classifier: the figure compared across heads.
    pub head: u64,
    /// Residual MLP (depth-wise head only).
    pub mlp: u64,
}

/// Parameter tensors of the depth-wise fusion head.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub wm: DiffTensor,
    pub bm: DiffTensor,
    pub wn: DiffTensor,
    pub bn: DiffTensor,
    pub dw: DiffTensor,
    pub cls_w: DiffTensor,
    pub cls_b: DiffTensor,
}

impl FusionParams {
    /// Kaiming-uniform linear weights, zero biases, depth-wise kernel 0.5.
    pub fn init(c: usize, hidden: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        Self {
            wm: kaiming_uniform(&[hidden, c], c, rng),
            bm: DiffTensor::zeros(&[hidden]),
            wn: kaiming_uniform(&[c, hidden], hidden, rng),
            bn: DiffTensor::zeros(&[c]),
            dw: DiffTensor::full(&[2, c], 0.5),
            cls_w: kaiming_uniform(&[num_classes, c], c, rng),
            cls_b: DiffTensor::zeros(&[num_classes]),
        }
    }

    pub fn store(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        for (n, t) in [
            ("mlp.wm", &self.wm),
            ("mlp.bm", &self.bm),
            ("mlp.wn", &self.wn),
            ("mlp.bn", &self.bn),
            ("dw", &self.dw),
            ("cls.w", &self.cls_w),
            ("cls.b", &self.cls_b),
        ] {
            store.insert(format!("{prefix}.{n}"), t.clone())?;
        }
        Ok(())
    }
}

/// Residual MLP weights on a tape.
#[derive(Clone, Copy, Debug)]
pub struct MlpVars {
    pub wm: Var,
    pub bm: Var,
    pub wn: Var,
    pub bn: Var,
}

/// Linear layer weights on a tape.
#[derive(Clone, Copy, Debug)]
pub struct LinearVars {
    pub w: Var,
    pub b: Var,
}

/// Rows `[F_R; F_S]` as a `2×c` tensor.
pub fn stack_features(fr: &GlobalFeature, fs: &GlobalFeature) -> Result<DiffTensor> {
    if fr.len() != fs.len() {
        return Err(Error::shape("stack_features", fr.len(), fs.len()));
    }
    if fr.kind != FeatureKind::Rgb || fs.kind != FeatureKind::Semantic {
        return Err(Error::Config(format!(
            "stack_features expects (rgb, semantic), got ({:?}, {:?})",
            fr.kind, fs.kind
        )));
    }
    let mut v = fr.values.clone();
    v.extend_from_slice(&fs.values);
    DiffTensor::new(&[2, fr.len()], v)
}

fn vec_len(tape: &Tape, v: Var, op: &'static str) -> Result<usize> {
    match tape.shape(v) {
        [n] => Ok(*n),
        s => Err(Error::shape(op, "1-D feature", format!("{s:?}"))),
    }
}

/// `F'' = F' + gelu(Wn·drop(gelu(Wm·row + bm)) + bn)` on both rows.
pub fn residual_mlp(
    tape: &mut Tape,
    fp: Var,
    p: MlpVars,
    dropout: f64,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let c = match tape.shape(fp) {
        [2, c] => *c,
        s => return Err(Error::shape("residual_mlp", "2×c", format!("{s:?}"))),
    };
    let hidden = tape.shape(p.wm)[0];
    if tape.shape(p.wm) != [hidden, c]
        || tape.shape(p.bm) != [hidden]
        || tape.shape(p.wn) != [c, hidden]
        || tape.shape(p.bn) != [c]
    {
        return Err(Error::shape(
            "residual_mlp",
            format!("Wm {hidden}×{c}, Wn {c}×{hidden}"),
            format!("Wm {:?}, Wn {:?}", tape.shape(p.wm), tape.shape(p.wn)),
        ));
    }
    // Columns are the two rows of F'.
    let cols = tape.transpose(fp)?;
    let h = tape.matmul(p.wm, cols)?;
    let h = tape.add_channel_bias(h, p.bm)?;
    let h = tape.gelu(h);
    let h = tape.dropout(h, dropout, training, seed)?;
    let o = tape.matmul(p.wn, h)?;
    let o = tape.add_channel_bias(o, p.bn)?;
    let o = tape.gelu(o);
    let o = tape.transpose(o)?;
    tape.add(fp, o)
}

/// `F^o_m = K[0,m]·F''[0,m] + K[1,m]·F''[1,m]`.
pub fn strip_dw_conv(tape: &mut Tape, fpp: Var, k: Var) -> Result<Var> {
    if tape.shape(fpp).len() != 2 || tape.shape(fpp)[0] != 2 || tape.shape(k) != tape.shape(fpp) {
        return Err(Error::shape(
            "strip_dw_conv",
            format!("kernel {:?}", tape.shape(fpp)),
            format!("{:?}", tape.shape(k)),
        ));
    }
    let prod = tape.hadamard(fpp, k)?;
    tape.sum_rows(prod)
}

/// `W·drop(x) + b`.
pub fn classify(
    tape: &mut Tape,
    x: Var,
    p: LinearVars,
    dropout: f64,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let n = vec_len(tape, x, "classify")?;
    let k = match tape.shape(p.w) {
        [k, m] if *m == n => *k,
        s => return Err(Error::shape("classify", format!("K×{n} weights"), format!("{s:?}"))),
    };
    let x = tape.dropout(x, dropout, training, seed)?;
    let col = tape.reshape(x, &[n, 1])?;
    let y = tape.matmul(p.w, col)?;
    let y = tape.add_channel_bias(y, p.b)?;
    tape.reshape(y, &[k])
}

/// `F_R ⊙ σ(F_S) + F_R`.
pub fn semantic_gate(tape: &mut Tape, fr: Var, fs: Var) -> Result<Var> {
    let g = tape.sigmoid(fs);
    let gated = tape.hadamard(fr, g)?;
    tape.add(gated, fr)
}

/// A fusion head with its parameters stored under `prefix`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionHead {
    pub config: FusionConfig,
    pub channels: usize,
    pub num_classes: usize,
    pub prefix: String,
}

impl FusionHead {
    pub fn new(
        config: FusionConfig,
        channels: usize,
        num_classes: usize,
        prefix: impl Into<String>,
    ) -> Result<Self> {
        config.validate()?;
        if channels == 0 || num_classes == 0 {
            return Err(Error::Config(
                "fusion needs positive feature length and class count".into(),
            ));
        }
        Ok(Self {
            config,
            channels,
            num_classes,
            prefix: prefix.into(),
        })
    }

    fn classifier_inputs(&self) -> usize {
        match self.config.kind {
            FusionKind::Concat => 2 * self.channels,
            _ => self.channels,
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) -> Result<()> {
        let (c, k, p) = (self.channels, self.num_classes, &self.prefix);
        match self.config.kind {
            FusionKind::Dw => FusionParams::init(c, self.config.hidden, k, rng).store(store, p),
            _ => {
                let n = self.classifier_inputs();
                store.insert(format!("{p}.cls.w"), kaiming_uniform(&[k, n], n, rng))?;
                store.insert(format!("{p}.cls.b"), DiffTensor::zeros(&[k]))
            }
        }
    }

    fn var(&self, bound: &Bound, name: &str) -> Result<Var> {
        bound.get(&format!("{}.{name}", self.prefix))
    }

    pub fn mlp_vars(&self, bound: &Bound) -> Result<MlpVars> {
        Ok(MlpVars {
            wm: self.var(bound, "mlp.wm")?,
            bm: self.var(bound, "mlp.bm")?,
            wn: self.var(bound, "mlp.wn")?,
            bn: self.var(bound, "mlp.bn")?,
        })
    }

    pub fn classifier_vars(&self, bound: &Bound) -> Result<LinearVars> {
        Ok(LinearVars {
            w: self.var(bound, "cls.w")?,
            b: self.var(bound, "cls.b")?,
        })
    }

    /// Logits from the two global features (each of length `c`).
    pub fn forward(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        fr: Var,
        fs: Var,
        training: bool,
        seed: u64,
    ) -> Result<Var> {
        let c = self.channels;
        for (v, what) in [(fr, "F_R"), (fs, "F_S")] {
            if tape.shape(v) != [c] {
                return Err(Error::shape(
                    "fusion",
                    format!("{what} of length {c}"),
                    format!("{:?}", tape.shape(v)),
                ));
            }
        }
        let cls = self.classifier_vars(bound)?;
        let head_seed = seed ^ 0x9e37_79b9_7f4a_7c15;
        let x = match self.config.kind {
            FusionKind::Dw => {
                let fp = tape.stack(&[fr, fs])?;
                let mlp = self.mlp_vars(bound)?;
                let fpp = residual_mlp(tape, fp, mlp, self.config.mlp_dropout, training, seed)?;
                let k = self.var(bound, "dw")?;
                strip_dw_conv(tape, fpp, k)?
            }
            FusionKind::Concat => tape.concat(&[fr, fs])?,
            FusionKind::Gating => semantic_gate(tape, fr, fs)?,
        };
        classify(tape, x, cls, self.config.head_dropout, training, head_seed)
    }

    /// Analytic multiply-add counts. The strip convolution costs `3c`
    /// (two products and one accumulation per channel); the sigmoid gate
    /// carries no learned weights and is not counted.
    pub fn flops(&self) -> FusionFlops {
        let (c, k, h) = (
            self.channels as u64,
            self.num_classes as u64,
            self.config.hidden as u64,
        );
        let cls = self.classifier_inputs() as u64 * k;
        match self.config.kind {
            FusionKind::Dw => FusionFlops {
                head: 3 * c + cls,
                mlp: 2 * (2 * c * h),
            },
            _ => FusionFlops { head: cls, mlp: 0 },
        }
    }
}
