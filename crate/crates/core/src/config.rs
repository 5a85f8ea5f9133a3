//! Run configuration. Every key has a default except the top-level `seed`;
//! unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderCell {
    Gru,
    Rnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_s: usize,
    pub d_h: usize,
    pub d_g: usize,
    pub d_f: usize,
    pub mask_size: usize,
    pub encoder_cell: EncoderCell,
    /// Exponent applied to the detector-score product.
    pub lambda_gamma: f64,
    pub human_threshold: f64,
    pub object_threshold: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_s: 128,
            d_h: 256,
            d_g: 256,
            d_f: 256,
            mask_size: 64,
            encoder_cell: EncoderCell::Gru,
            lambda_gamma: 1.0,
            human_threshold: 0.6,
            object_threshold: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PassingConfig {
    pub rounds: usize,
    pub enabled: bool,
    pub relation_aware: bool,
}

impl Default for PassingConfig {
    fn default() -> Self {
        PassingConfig {
            rounds: 2,
            enabled: true,
            relation_aware: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    /// Preset name applied before the explicit switches below.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<String>,
    pub sge: bool,
    /// Mean-pooled appearance vector in place of the graph embedding.
    pub cov: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        AblationConfig {
            variant: None,
            sge: true,
            cov: false,
        }
    }
}

/// Resolved module switches of one model variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Switches {
    pub sge: bool,
    pub cov: bool,
    pub rel: bool,
    pub no_rel: bool,
}

impl Switches {
    pub const FULL: Switches = Switches {
        sge: true,
        cov: false,
        rel: true,
        no_rel: false,
    };

    /// Named variants: the visual-only baseline, each component alone, the
    /// two substitutes (image-level feature, relation-agnostic passing) and
    /// the full model.
    pub fn preset(name: &str) -> Result<Switches> {
        let (sge, cov, rel, no_rel) = match name {
            "baseline" => (false, false, false, false),
            "sge" => (true, false, false, false),
            "rel" => (false, false, true, false),
            "cov" | "cov-rel" => (false, true, true, false),
            "no-rel" | "sge-no-rel" => (true, false, false, true),
            "full" => (true, false, true, false),
            other => {
                return Err(Error::Config(format!(
                    "unknown ablation variant '{other}' (expected baseline, sge, rel, cov-rel, sge-no-rel, full)"
                )))
            }
        };
        Ok(Switches {
            sge,
            cov,
            rel,
            no_rel,
        })
    }

    /// One preset or several joined with `+` (e.g. `sge+rel`), combined by
    /// enabling every switch any part enables. Conflicting combinations such
    /// as `rel+no-rel` are rejected.
    pub fn parse(spec: &str) -> Result<Switches> {
        let mut out = Switches::preset("baseline")?;
        for part in spec.split('+') {
            let s = Switches::preset(part.trim())?;
            out.sge |= s.sge;
            out.cov |= s.cov;
            out.rel |= s.rel;
            out.no_rel |= s.no_rel;
        }
        out.validate()?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rel && self.no_rel {
            return Err(Error::Config(
                "rel and no-rel cannot both be enabled".into(),
            ));
        }
        if self.sge && self.cov {
            return Err(Error::Config("sge and cov cannot both be enabled".into()));
        }
        Ok(())
    }

    pub fn passing_enabled(&self) -> bool {
        self.rel || self.no_rel
    }

    pub fn relation_aware(&self) -> bool {
        self.rel
    }
}

/// Everything that determines the parameter layout and forward computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub model: ModelConfig,
    pub switches: Switches,
    pub rounds: usize,
    pub num_interactions: usize,
    pub word_dim: usize,
}

impl Architecture {
    pub fn new(
        model: ModelConfig,
        switches: Switches,
        rounds: usize,
        num_interactions: usize,
        word_dim: usize,
    ) -> Result<Self> {
        switches.validate()?;
        if model.d_h == 0 || model.d_h % 2 != 0 {
            return Err(Error::Config(format!(
                "model.d_h must be positive and even, got {}",
                model.d_h
            )));
        }
        if [model.d_s, model.d_g, model.d_f, model.mask_size].contains(&0) {
            return Err(Error::Config("model dimensions must be positive".into()));
        }
        if switches.passing_enabled() && rounds == 0 {
            return Err(Error::Config("passing.rounds must be at least 1".into()));
        }
        if num_interactions == 0 {
            return Err(Error::Config("need at least one interaction class".into()));
        }
        if !(model.lambda_gamma >= 0.0) {
            return Err(Error::Config("model.lambda_gamma must be non-negative".into()));
        }
        Ok(Architecture {
            model,
            switches,
            rounds,
            num_interactions,
            word_dim,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub epochs: usize,
    /// Scenes per minibatch.
    pub batch_size: usize,
    pub bce_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            decay: 0.9,
            decay_every: 10,
            epochs: 50,
            batch_size: 4,
            bce_eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("train.learning_rate must be finite and >= 0".into()));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config("train.decay must lie in (0, 1]".into()));
        }
        if self.decay_every == 0 || self.batch_size == 0 {
            return Err(Error::Config(
                "train.decay_every and train.batch_size must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Step schedule: `lr0 · decay^⌊epoch / decay_every⌋`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub dir: Option<PathBuf>,
    pub relation_threshold: f64,
    pub train_split: String,
    pub test_split: String,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            dir: None,
            relation_threshold: 0.2,
            train_split: "train".into(),
            test_split: "test".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalSetting {
    Default,
    Known,
}

impl std::str::FromStr for EvalSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(EvalSetting::Default),
            "known" | "known-object" => Ok(EvalSetting::Known),
            other => Err(Error::Config(format!(
                "unknown evaluation setting '{other}' (expected default or known)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub setting: EvalSetting,
    pub iou_threshold: f64,
    pub min_score: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            setting: EvalSetting::Default,
            iou_threshold: 0.5,
            min_score: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub passing: PassingConfig,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

impl RunConfig {
    pub fn with_seed(seed: u64) -> Self {
        RunConfig {
            seed,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            passing: PassingConfig::default(),
            ablation: AblationConfig::default(),
            eval: EvalConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.resolved()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        RunConfig::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    /// Applies the ablation preset (if any) onto the explicit switches and
    /// validates the result.
    pub fn resolved(mut self) -> Result<Self> {
        if let Some(name) = self.ablation.variant.clone() {
            self.apply_switches(Switches::parse(&name)?);
        }
        self.switches().validate()?;
        self.train.validate()?;
        Ok(self)
    }

    pub fn apply_switches(&mut self, s: Switches) {
        self.ablation.sge = s.sge;
        self.ablation.cov = s.cov;
        self.passing.enabled = s.rel || s.no_rel;
        self.passing.relation_aware = !s.no_rel;
    }

    pub fn switches(&self) -> Switches {
        Switches {
            sge: self.ablation.sge,
            cov: self.ablation.cov,
            rel: self.passing.enabled && self.passing.relation_aware,
            no_rel: self.passing.enabled && !self.passing.relation_aware,
        }
    }

    pub fn architecture(&self, num_interactions: usize, word_dim: usize) -> Result<Architecture> {
        Architecture::new(
            self.model.clone(),
            self.switches(),
            self.passing.rounds,
            num_interactions,
            word_dim,
        )
    }
}
