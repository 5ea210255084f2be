use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use csrrm::fusion::FusionKind;
use csrrm::harness::ablate::write_rows;
use csrrm::harness::flops::fusion_variant_flops;
use csrrm::harness::train::evaluate;
use csrrm::harness::{
    ablate, count_flops, full_size_filter_flops, load_dataset, run_experiment, AblationMatrix,
    ExperimentConfig, Model,
};
use csrrm::optim::OptimizerKind;
use csrrm::synth::{generate_range, write_corpus};

#[derive(Parser)]
#[command(name = "csrrm", version, about = "Semantic region relation scene classifier on synthetic data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus (fixtures plus manifest.json).
    Generate {
        #[command(flatten)]
        common: Common,
        /// Corpus directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Two-stage training; writes metrics.jsonl and stage1/, stage2/ checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a trained run on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
    },
    /// Train every cell of an ablation grid.
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Filter windows, e.g. 1,2,4.
        #[arg(long, value_delimiter = ',')]
        windows: Option<Vec<usize>>,
        /// Channel attention settings, e.g. true,false.
        #[arg(long = "cham-options", value_delimiter = ',')]
        cham_options: Option<Vec<bool>>,
        /// Fusion heads, e.g. dw,concat,gating.
        #[arg(long = "fusions", value_delimiter = ',')]
        fusions: Option<Vec<FusionKind>>,
        /// Vocabulary sizes; 0 keeps all labels.
        #[arg(long = "vocabularies", value_delimiter = ',')]
        vocabularies: Option<Vec<usize>>,
    },
    /// Print analytic multiply-add counts as JSON.
    Flops {
        #[command(flatten)]
        common: Common,
    },
}

/// Overrides applied on top of the TOML configuration.
#[derive(Args)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    outdir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    train_scenes: Option<usize>,
    #[arg(long)]
    test_scenes: Option<usize>,
    #[arg(long)]
    filter_window: Option<usize>,
    #[arg(long)]
    cham: Option<bool>,
    #[arg(long)]
    vocabulary: Option<usize>,
    #[arg(long)]
    fusion: Option<FusionKind>,
    #[arg(long, value_parser = parse_optimizer)]
    optimizer: Option<OptimizerKind>,
    #[arg(long)]
    max_lr: Option<f64>,
    #[arg(long)]
    stage1_epochs: Option<usize>,
    #[arg(long)]
    stage2_epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    ten_crop: Option<bool>,
}

fn parse_optimizer(s: &str) -> std::result::Result<OptimizerKind, String> {
    match s {
        "alig" => Ok(OptimizerKind::Alig),
        "sgd" => Ok(OptimizerKind::Sgd),
        _ => Err(format!("unknown optimizer '{s}' (expected alig or sgd)")),
    }
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_path(p)
                .with_context(|| format!("reading {}", p.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = &self.outdir {
            c.outdir = Some(v.clone());
        }
        if let Some(v) = self.seed {
            c.seed = v;
            c.recipe.seed = v;
        }
        if let Some(v) = &self.corpus {
            c.corpus = Some(v.clone());
        }
        macro_rules! set {
            ($($field:ident),*) => {$(if let Some(v) = self.$field { c.$field = v; })*};
        }
        set!(train_scenes, test_scenes, filter_window, stage1_epochs, stage2_epochs, batch_size, ten_crop);
        if self.cham.is_some() {
            c.cham = self.cham;
        }
        if self.vocabulary.is_some() {
            c.vocabulary = self.vocabulary;
        }
        if let Some(v) = self.fusion {
            c.fusion.kind = v;
        }
        if let Some(v) = self.optimizer {
            c.optimizer.kind = v;
        }
        if let Some(v) = self.max_lr {
            c.optimizer.max_lr = v;
        }
        c.validate()?;
        Ok(c)
    }
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn outdir(cfg: &ExperimentConfig) -> Result<&Path> {
    match cfg.outdir.as_deref() {
        Some(p) => Ok(p),
        None => bail!("--outdir (or outdir in the config) is required"),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, out } => {
            let cfg = common.load()?;
            let train = generate_range(&cfg.recipe, 0, cfg.train_scenes)?;
            let test = generate_range(&cfg.recipe, cfg.train_scenes as u64, cfg.test_scenes)?;
            let m = write_corpus(&out, &cfg.recipe, &train, &test)?;
            eprintln!("wrote {} scenes to {}", m.entries.len(), out.display());
        }
        Command::Train { common } => {
            let cfg = common.load()?;
            let dir = outdir(&cfg)?.to_path_buf();
            let out = run_experiment(&cfg, Some(&dir))?;
            let m = &out.metrics;
            if !m.freeze.holds() {
                bail!("branch parameters changed during stage 2");
            }
            print_json(&serde_json::json!({
                "train": m.train,
                "test": m.test,
                "freeze_holds": m.freeze.holds(),
                "updates": m.steps.updates,
                "max_step": m.steps.max_step,
            }))?;
        }
        Command::Eval { common } => {
            let cfg = common.load()?;
            let dir = outdir(&cfg)?;
            let heads = dir.join("stage1");
            let model = Model::load(&cfg, &dir.join("stage2"), heads.exists().then_some(heads.as_path()))?;
            let data = load_dataset(&cfg)?;
            let s = evaluate(&model, &data.test, cfg.ten_crop, cfg.crop)?;
            print_json(&serde_json::json!({
                "scenes": data.test.len(),
                "ten_crop": cfg.ten_crop,
                "accuracy": s.accuracy,
                "loss": s.loss,
            }))?;
        }
        Command::Ablate {
            common,
            windows,
            cham_options,
            fusions,
            vocabularies,
        } => {
            let cfg = common.load()?;
            let mut matrix = AblationMatrix::default();
            if let Some(v) = windows {
                matrix.windows = v;
            }
            if let Some(v) = cham_options {
                matrix.cham = v;
            }
            if let Some(v) = fusions {
                matrix.fusion = v;
            }
            if let Some(v) = vocabularies {
                matrix.vocabulary = v.into_iter().map(|k| (k != 0).then_some(k)).collect();
            }
            let data = load_dataset(&cfg)?;
            let rows = ablate(&cfg, &matrix, &data)?;
            if let Some(dir) = cfg.outdir.as_deref() {
                std::fs::create_dir_all(dir)?;
                write_rows(&rows, &dir.join("ablation.jsonl"))?;
            }
            print_json(&rows)?;
        }
        Command::Flops { common } => {
            let cfg = common.load()?;
            let report = count_flops(&cfg)?;
            let full = full_size_filter_flops()?;
            let heads: Vec<_> = fusion_variant_flops(2048, 67, 8192)?
                .into_iter()
                .map(|(k, f)| serde_json::json!({"fusion": k, "head": f.head, "mlp": f.mlp}))
                .collect();
            print_json(&serde_json::json!({
                "desk": report,
                "full_size_semantic": full,
                "full_size_fusion_heads": heads,
            }))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
