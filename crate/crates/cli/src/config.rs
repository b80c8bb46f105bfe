//! Run configuration files: flat TOML with explicit keys, unknown keys
//! rejected, and every optional field defaulting to the reference recipe.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use encoderlab::datamix::{CropConfig, CropDistribution, MixSpec};
use encoderlab::encoder::EncoderConfig;
use encoderlab::trainer::{LengthPolicy, TrainPlan};
use encoderlab::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub model: ModelSection,
    pub plan: PlanSection,
    pub data: DataSection,
    pub run: RunSection,
}

/// Either a named preset or a fully explicit architecture — exactly one.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<EncoderConfig>,
}

/// The two-phase schedule. Defaults are the reference recipe; only the step
/// budgets have no sensible universal default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct PlanSection {
    pub pretrain_steps: u64,
    pub anneal_steps: u64,
    #[serde(default = "d_base_lr")]
    pub base_lr: f64,
    #[serde(default = "d_warmup")]
    pub warmup_steps: u64,
    #[serde(default = "d_pack_len")]
    pub pack_len: usize,
    #[serde(default = "d_crop_min")]
    pub crop_min: usize,
    #[serde(default = "d_crop_max")]
    pub crop_max: usize,
    #[serde(default = "d_pretrain_masking")]
    pub pretrain_masking: f64,
    #[serde(default = "d_anneal_masking")]
    pub anneal_masking: f64,
}

fn d_base_lr() -> f64 {
    1e-4
}
fn d_warmup() -> u64 {
    2_000
}
fn d_pack_len() -> usize {
    2_048
}
fn d_crop_min() -> usize {
    12
}
fn d_crop_max() -> usize {
    8_192
}
fn d_pretrain_masking() -> f64 {
    0.50
}
fn d_anneal_masking() -> f64 {
    0.10
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct DataSection {
    /// Trained vocabulary file.
    pub vocab: PathBuf,
    /// Line-delimited document files, pooled before mixing.
    pub corpus: Vec<PathBuf>,
    /// Mixture spec TOML path, or the literal "reference".
    pub pretrain_mix: String,
    pub anneal_mix: String,
    /// Drop documents below this quality bucket before pooling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_quality: Option<u8>,
    /// Whether unlabeled documents survive the quality filter.
    #[serde(default = "d_true")]
    pub unlabeled_pass: bool,
}

fn d_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunSection {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub batch_rows: usize,
    #[serde(default = "d_ckpt_every")]
    pub checkpoint_every: u64,
}

fn d_ckpt_every() -> u64 {
    1_000
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.anchor_paths(base);
        Ok(config)
    }

    /// Resolve relative paths against the config file's directory, so a run
    /// behaves the same from any working directory.
    fn anchor_paths(&mut self, base: &Path) {
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut self.data.vocab);
        for c in &mut self.data.corpus {
            anchor(c);
        }
        anchor(&mut self.run.out_dir);
        for mix in [&mut self.data.pretrain_mix, &mut self.data.anneal_mix] {
            if mix != "reference" {
                let mut p = PathBuf::from(&*mix);
                anchor(&mut p);
                *mix = p.to_string_lossy().into_owned();
            }
        }
    }

    /// Structural validation: every problem in the file reported at once,
    /// without touching the filesystem.
    pub fn problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        match (&self.model.preset, &self.model.config) {
            (Some(_), Some(_)) => {
                problems.push("model: give either a preset or an explicit config, not both".into())
            }
            (None, None) => {
                problems.push("model: give a preset name or an explicit config".into())
            }
            (Some(name), None) => {
                if let Err(e) = EncoderConfig::preset(name) {
                    problems.push(format!("model: {e}"));
                }
            }
            (None, Some(config)) => {
                if let Err(e) = config.validate() {
                    problems.push(format!("model: {e}"));
                }
            }
        }
        let plan = &self.plan;
        if plan.pretrain_steps == 0 {
            problems.push("plan: pretrain-steps must be positive".into());
        }
        if plan.warmup_steps > plan.pretrain_steps {
            problems.push(format!(
                "plan: warmup of {} steps cannot exceed the {}-step pretrain phase",
                plan.warmup_steps, plan.pretrain_steps
            ));
        }
        if !(plan.base_lr > 0.0) {
            problems.push(format!("plan: base-lr {} must be positive", plan.base_lr));
        }
        if plan.pack_len < 2 {
            problems.push(format!("plan: pack-len {} too short (need ≥ 2)", plan.pack_len));
        }
        if plan.crop_min == 0 || plan.crop_max < plan.crop_min {
            problems.push(format!(
                "plan: crop range [{}, {}] is invalid",
                plan.crop_min, plan.crop_max
            ));
        }
        for (name, ratio) in [
            ("pretrain-masking", plan.pretrain_masking),
            ("anneal-masking", plan.anneal_masking),
        ] {
            if !(ratio > 0.0 && ratio < 1.0) {
                problems.push(format!("plan: {name} {ratio} outside (0, 1)"));
            }
        }
        if self.data.corpus.is_empty() {
            problems.push("data: corpus list is empty".into());
        }
        if let Some(q) = self.data.min_quality {
            if !(1..=4).contains(&q) {
                problems.push(format!("data: min-quality {q} outside 1..=4"));
            }
        }
        if self.run.batch_rows == 0 {
            problems.push("run: batch-rows must be positive".into());
        }
        if self.run.checkpoint_every == 0 {
            problems.push("run: checkpoint-every must be positive".into());
        }
        problems
    }

    /// File-level validation, run just before training: referenced inputs
    /// must exist and parse.
    pub fn file_problems(&self) -> Vec<String> {
        let mut problems = Vec::new();
        if !self.data.vocab.is_file() {
            problems.push(format!("data: vocab file {} not found", self.data.vocab.display()));
        }
        for c in &self.data.corpus {
            if !c.is_file() {
                problems.push(format!("data: corpus file {} not found", c.display()));
            }
        }
        for (slot, mix) in [
            ("pretrain-mix", &self.data.pretrain_mix),
            ("anneal-mix", &self.data.anneal_mix),
        ] {
            if mix != "reference" {
                match std::fs::read_to_string(mix) {
                    Err(_) => problems.push(format!("data: {slot} file {mix} not found")),
                    Ok(text) => {
                        if let Err(e) = MixSpec::from_toml_str(&text) {
                            problems.push(format!("data: {slot}: {e}"));
                        }
                    }
                }
            }
        }
        problems
    }

    pub fn model_config(&self) -> Result<EncoderConfig> {
        match (&self.model.preset, &self.model.config) {
            (Some(name), None) => EncoderConfig::preset(name),
            (None, Some(config)) => {
                config.validate()?;
                Ok(config.clone())
            }
            _ => Err(Error::Config(
                "model: give a preset name or an explicit config (exactly one)".into(),
            )),
        }
    }

    /// The full two-phase plan this config describes.
    pub fn train_plan(&self) -> TrainPlan {
        let mut plan = TrainPlan::reference(self.plan.pretrain_steps, self.plan.anneal_steps);
        plan.base_lr = self.plan.base_lr;
        plan.warmup_steps = self.plan.warmup_steps;
        plan.phases[0].masking_ratio = self.plan.pretrain_masking;
        plan.phases[0].length = LengthPolicy::Packed { seq_len: self.plan.pack_len };
        plan.phases[1].masking_ratio = self.plan.anneal_masking;
        plan.phases[1].length = LengthPolicy::Cropped(CropConfig {
            min_len: self.plan.crop_min,
            max_len: self.plan.crop_max,
            distribution: CropDistribution::Uniform,
        });
        plan
    }

    /// Plan truncated to the pretraining phase only.
    pub fn pretrain_plan(&self) -> TrainPlan {
        let mut plan = self.train_plan();
        plan.phases.truncate(1);
        plan
    }

    pub fn mix_spec(&self, slot: MixSlot) -> Result<MixSpec> {
        let (name, reference) = match slot {
            MixSlot::Pretrain => (&self.data.pretrain_mix, MixSpec::pretrain_reference as fn() -> MixSpec),
            MixSlot::Anneal => (&self.data.anneal_mix, MixSpec::anneal_reference as fn() -> MixSpec),
        };
        if name == "reference" {
            Ok(reference())
        } else {
            MixSpec::from_toml_str(&std::fs::read_to_string(name)?)
        }
    }

    /// The fully resolved form written next to the outputs: preset expanded
    /// to its explicit fields, every default made concrete.
    pub fn effective(&self) -> Result<RunConfig> {
        let mut effective = self.clone();
        effective.model = ModelSection { preset: None, config: Some(self.model_config()?) };
        Ok(effective)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixSlot {
    Pretrain,
    Anneal,
}

// ---------------------------------------------------------------------------
// Fine-tuning configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FinetuneFileConfig {
    pub model: FinetuneModelSection,
    pub task: TaskSection,
    pub data: FinetuneDataSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FinetuneModelSection {
    /// Checkpoint holding the base encoder.
    pub checkpoint: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct TaskSection {
    pub kind: TaskKindName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<usize>,
    #[serde(default = "d_pooling")]
    pub pooling: encoderlab::finetune::Pooling,
}

fn d_pooling() -> encoderlab::finetune::Pooling {
    encoderlab::finetune::Pooling::MeanOverNonPad
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKindName {
    SeqClass,
    SeqRegress,
    TokenClass,
    Retrieval,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FinetuneDataSection {
    pub vocab: PathBuf,
    pub train: PathBuf,
    pub val: PathBuf,
}

/// Optional overrides on top of the reference protocol.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct ProtocolSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_hi: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patience: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub head_only: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
}

impl FinetuneFileConfig {
    pub fn from_file(path: &Path) -> Result<FinetuneFileConfig> {
        let text = std::fs::read_to_string(path)?;
        let mut config: FinetuneFileConfig =
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let anchor = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&p);
            }
        };
        anchor(&mut config.model.checkpoint);
        anchor(&mut config.data.vocab);
        anchor(&mut config.data.train);
        anchor(&mut config.data.val);
        anchor(&mut config.run.out_dir);
        Ok(config)
    }

    pub fn head_kind(&self) -> Result<encoderlab::finetune::HeadKind> {
        use encoderlab::finetune::HeadKind;
        match self.task.kind {
            TaskKindName::SeqClass => {
                let classes = self.task.classes.ok_or_else(|| {
                    Error::Config("task: seq-class needs a \"classes\" count".into())
                })?;
                Ok(HeadKind::SeqClass { classes })
            }
            TaskKindName::SeqRegress => Ok(HeadKind::SeqRegress),
            TaskKindName::TokenClass => {
                let labels = self.task.labels.ok_or_else(|| {
                    Error::Config("task: token-class needs a \"labels\" count".into())
                })?;
                Ok(HeadKind::TokenClass { labels })
            }
            TaskKindName::Retrieval => Ok(HeadKind::RetrievalEmbed),
        }
    }

    /// Reference protocol for the task kind, with the file's overrides and
    /// then the command-line grid-size override applied.
    pub fn protocol(&self, grid_size_flag: Option<usize>) -> Result<encoderlab::finetune::FinetuneProtocol> {
        use encoderlab::finetune::{lr_grid, FinetuneProtocol};
        let mut protocol = match self.task.kind {
            TaskKindName::Retrieval => FinetuneProtocol::retrieval_reference(),
            _ => FinetuneProtocol::classification_reference(),
        };
        let p = &self.protocol;
        if let Some(v) = p.steps {
            protocol.steps = v;
        }
        if let Some(v) = p.batch {
            protocol.batch = v;
        }
        if let Some(v) = p.warmup_fraction {
            protocol.warmup_fraction = v;
        }
        if let Some(v) = p.patience {
            protocol.patience = v;
        }
        if let Some(v) = p.head_only {
            protocol.head_only = v;
        }
        if let Some(v) = p.temperature {
            protocol.temperature = v;
        }
        let lo = p.grid_lo.unwrap_or(1e-5);
        let hi = p.grid_hi.unwrap_or(1e-4);
        let size = grid_size_flag.or(p.grid_size).unwrap_or(10);
        protocol.lr_grid = match size {
            0 => return Err(Error::Config("grid-size must be positive".into())),
            1 => vec![lo],
            n => lr_grid(lo, hi, n)?,
        };
        protocol.validate()?;
        Ok(protocol)
    }
}
