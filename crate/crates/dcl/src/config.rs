//! TOML run configuration. Every section is optional except `[data]`;
//! unknown keys anywhere are rejected. Relative data paths resolve against
//! the directory holding the config file.

use std::path::{Path, PathBuf};

use dcl_core::model::{EncoderConfig, NormKind};
use dcl_core::objectives::ContrastConfig;
use dcl_core::trainer::TrainConfig;
use serde::Deserialize;

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seed for data order, augmentation, masking and evaluation draws.
    #[serde(default)]
    pub seed: u64,
    /// Fill the `seconds` log column from the wall clock. Off by default so
    /// that logs of identical runs are byte-identical.
    #[serde(default)]
    pub wall_clock: bool,
    pub data: DataSection,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub pretrain: TrainSection,
    #[serde(default = "TrainSection::finetune_default")]
    pub finetune: TrainSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub analyze: AnalyzeSection,
    #[serde(default)]
    pub gradcheck: GradCheckSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub corpus: PathBuf,
    pub lexicon: PathBuf,
    pub vocab: PathBuf,
    pub labeled: PathBuf,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub hidden: usize,
    pub heads: usize,
    pub ff: usize,
    pub layers: usize,
    pub max_len: usize,
    pub norm: String,
    pub projection_dim: usize,
    pub projection_layers: usize,
    pub num_classes: usize,
    pub powernorm_momentum: f64,
    pub powernorm_warmup: u64,
    pub norm_eps: f64,
    /// Parameter initialization seed; defaults to the run seed.
    pub init_seed: Option<u64>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let c = EncoderConfig::small(0);
        Self {
            hidden: c.hidden,
            heads: c.heads,
            ff: c.ff,
            layers: c.layers,
            max_len: c.max_len,
            norm: c.norm.as_str().into(),
            projection_dim: c.projection_dim,
            projection_layers: c.projection_layers,
            num_classes: c.num_classes,
            powernorm_momentum: c.powernorm_momentum,
            powernorm_warmup: c.powernorm_warmup,
            norm_eps: c.norm_eps,
            init_seed: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub decay_steps: Option<u64>,
    pub batch_size: usize,
    pub steps: u64,
    pub aug_p: f64,
    pub mlm_rate: f64,
    pub tau_ema: f64,
    pub checkpoint_every: u64,
    pub temperature: f64,
    pub align_alpha: f64,
    pub uniformity_t: f64,
    pub lambda_mlm: f64,
    pub lambda_align: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        let c = t.contrast;
        Self {
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            adam_eps: t.adam_eps,
            decay_steps: t.decay_steps,
            batch_size: t.batch_size,
            steps: t.steps,
            aug_p: t.aug_p,
            mlm_rate: t.mlm_rate,
            tau_ema: t.tau_ema,
            checkpoint_every: t.checkpoint_every,
            temperature: c.temperature,
            align_alpha: c.align_alpha,
            uniformity_t: c.uniformity_t,
            lambda_mlm: c.lambda_mlm,
            lambda_align: c.lambda_align,
        }
    }
}

impl TrainSection {
    fn finetune_default() -> Self {
        Self {
            steps: 300,
            ..Self::default()
        }
    }

    pub fn to_train_config(&self, seed: u64, max_len: usize) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            adam_eps: self.adam_eps,
            decay_steps: self.decay_steps,
            batch_size: self.batch_size,
            steps: self.steps,
            seed,
            aug_p: self.aug_p,
            mlm_rate: self.mlm_rate,
            tau_ema: self.tau_ema,
            contrast: ContrastConfig {
                temperature: self.temperature,
                align_alpha: self.align_alpha,
                uniformity_t: self.uniformity_t,
                lambda_mlm: self.lambda_mlm,
                lambda_align: self.lambda_align,
            },
            max_len,
            checkpoint_every: self.checkpoint_every,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSection {
    /// Perturbations per text in the invariance test.
    pub k: usize,
    /// Cosine threshold of the invariance pass rule.
    pub eps: f64,
    /// Synonym replacement rate used to perturb texts.
    pub aug_p: f64,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            k: 5,
            eps: 0.9,
            aug_p: 0.15,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyzeSection {
    /// Normalization conditions trained and compared: `none`, `batch`
    /// (no encoder normalization, batch-axis normalization in the
    /// projection head), `layer`, `power`.
    pub conditions: Vec<String>,
    /// Pretraining steps per condition; defaults to `[pretrain] steps`.
    pub steps: Option<u64>,
    /// MLM weight while training the compared encoders.
    pub lambda_mlm: f64,
    pub n_pairs: usize,
    /// `projected` or `pooled`.
    pub representation: String,
    /// Also write an SVG scatter next to each projection CSV.
    pub svg: bool,
}

impl Default for AnalyzeSection {
    fn default() -> Self {
        Self {
            conditions: vec!["none".into(), "batch".into(), "power".into()],
            steps: None,
            lambda_mlm: 0.0,
            n_pairs: 200,
            representation: "projected".into(),
            svg: true,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradCheckSection {
    pub h: f64,
    pub tol: f64,
    /// Corpus sentences in the checked batch.
    pub sentences: usize,
    /// Check at most this many evenly spaced entries per parameter tensor;
    /// absent means every entry.
    pub max_per_tensor: Option<usize>,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            sentences: 2,
            max_per_tensor: None,
        }
    }
}

/// A compared normalization setting of the analysis command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Condition {
    Norm(NormKind),
    Batch,
}

impl Condition {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "batch" => Some(Condition::Batch),
            _ => NormKind::parse(s).map(Condition::Norm),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Condition::Norm(n) => n.as_str(),
            Condition::Batch => "batch",
        }
    }

    pub fn apply(self, cfg: &mut EncoderConfig) {
        match self {
            Condition::Norm(n) => {
                cfg.norm = n;
                cfg.projection_batch_norm = false;
            }
            Condition::Batch => {
                cfg.norm = NormKind::None;
                cfg.projection_batch_norm = true;
            }
        }
    }
}

impl RunConfig {
    /// Reads and validates a config file, resolving data paths.
    pub fn load(path: &Path) -> Result<Self> {
        let text = crate::io::read_text(path)?;
        let fail = |msg: String| CliError::Config {
            path: path.to_path_buf(),
            msg,
        };
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| fail(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.data.corpus,
            &mut cfg.data.lexicon,
            &mut cfg.data.vocab,
            &mut cfg.data.labeled,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        NormKind::parse(&cfg.model.norm).ok_or_else(|| fail(format!("unknown norm {:?} (layer|power|none)", cfg.model.norm)))?;
        for c in &cfg.analyze.conditions {
            Condition::parse(c).ok_or_else(|| fail(format!("unknown analysis condition {c:?} (none|batch|layer|power)")))?;
        }
        if !matches!(cfg.analyze.representation.as_str(), "projected" | "pooled") {
            return Err(fail("analyze.representation must be \"projected\" or \"pooled\"".into()));
        }
        if cfg.model.projection_dim != cfg.model.hidden {
            return Err(fail(format!(
                "model.projection_dim ({}) must equal model.hidden ({})",
                cfg.model.projection_dim, cfg.model.hidden
            )));
        }
        let checks = [
            cfg.encoder_config(10).validate(),
            cfg.pretrain.to_train_config(cfg.seed, 2).validate(),
            cfg.finetune.to_train_config(cfg.seed, 2).validate(),
        ];
        for c in checks {
            c.map_err(|e| fail(e.to_string()))?;
        }
        Ok(cfg)
    }

    pub fn encoder_config(&self, vocab_size: usize) -> EncoderConfig {
        let m = &self.model;
        EncoderConfig {
            vocab_size,
            hidden: m.hidden,
            layers: m.layers,
            heads: m.heads,
            ff: m.ff,
            max_len: m.max_len,
            norm: NormKind::parse(&m.norm).unwrap_or(NormKind::Power),
            projection_dim: m.projection_dim,
            projection_layers: m.projection_layers,
            projection_batch_norm: false,
            num_classes: m.num_classes,
            powernorm_momentum: m.powernorm_momentum,
            powernorm_warmup: m.powernorm_warmup,
            norm_eps: m.norm_eps,
            init_seed: m.init_seed.unwrap_or(self.seed),
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        self.pretrain.to_train_config(self.seed, self.model.max_len)
    }

    pub fn finetune_config(&self) -> TrainConfig {
        self.finetune.to_train_config(self.seed, self.model.max_len)
    }
}
