//! Experiment configuration.
//!
//! Configs are TOML files with one section per concern. Every key is optional
//! except where noted; unknown keys are rejected so that typos in sweeps fail
//! loudly.
//!
//! ```toml
//! [experiment]
//! mode = "lautum"            # or "standard_transfer"
//! seed = 0
//! batch_size = 50
//! output = "runs/example"    # directory for metrics.csv and summary.toml
//! early_epochs = 5
//! record_wall_time = false
//!
//! [lautum]
//! lambda = 1e-4
//! alpha = 0.999
//! jitter = 1e-4
//!
//! [data]
//! kind = "synthetic"         # or "idx"
//! [data.synthetic]           # any SyntheticShiftSpec field; seed defaults to experiment.seed
//! rotation_deg = 30.0
//!
//! [split]
//! labeled_count = 20         # seed defaults to experiment.seed
//!
//! [network]
//! arch = "mlp"               # or "cnn" (needs image-shaped data)
//! hidden = [128]
//!
//! [pretrain]
//! epochs = 30
//! lr = 1e-3
//!
//! [finetune]
//! epochs = 20
//! lr = 1e-3
//! ```

use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::data::SyntheticShiftSpec;
use crate::lautum_reg::LautumRegConfig;
use crate::nn_core::AdamConfig;
use crate::{Error, Result};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "LAUTUM_OUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    StandardTransfer,
    Lautum,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::StandardTransfer => "standard_transfer",
            Mode::Lautum => "lautum",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arch {
    Mlp,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxPaths {
    pub source_train_images: PathBuf,
    pub source_train_labels: PathBuf,
    pub source_test_images: PathBuf,
    pub source_test_labels: PathBuf,
    pub target_train_images: PathBuf,
    pub target_train_labels: PathBuf,
    pub target_test_images: PathBuf,
    pub target_test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    /// Synthetic shift benchmark; a `None` seed follows the experiment seed.
    Synthetic {
        spec: SyntheticShiftSpec,
        seed: Option<u64>,
    },
    Idx(IdxPaths),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub labeled_count: usize,
    /// `None` follows the experiment seed.
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub arch: Arch,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub epochs: usize,
    pub optimizer: AdamConfig,
}

/// Validated two-stage experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    pub seed: u64,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub jitter: f64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub network: NetworkConfig,
    pub pretrain: StageConfig,
    pub finetune: StageConfig,
    /// Post-transfer epochs averaged into the early-accuracy summary.
    pub early_epochs: usize,
    pub output: PathBuf,
    /// When false the metrics' wall-time column is written as 0 so that
    /// reruns are byte-identical.
    pub record_wall_time: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let out = std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("runs"))
            .join("experiment");
        Self {
            mode: Mode::Lautum,
            seed: 0,
            batch_size: 50,
            lambda: 1e-4,
            alpha: 0.999,
            jitter: 1e-4,
            data: DataSource::Synthetic {
                spec: SyntheticShiftSpec::default(),
                seed: None,
            },
            split: SplitConfig {
                labeled_count: 20,
                seed: None,
            },
            network: NetworkConfig {
                arch: Arch::Mlp,
                hidden: vec![128],
            },
            pretrain: StageConfig {
                epochs: 30,
                optimizer: AdamConfig::default(),
            },
            finetune: StageConfig {
                epochs: 20,
                optimizer: AdamConfig::default(),
            },
            early_epochs: 5,
            output: out,
            record_wall_time: false,
        }
    }
}

impl ExperimentConfig {
    /// λ actually applied: always 0 in standard-transfer mode.
    pub fn effective_lambda(&self) -> f64 {
        match self.mode {
            Mode::StandardTransfer => 0.0,
            Mode::Lautum => self.lambda,
        }
    }

    pub fn split_seed(&self) -> u64 {
        self.split.seed.unwrap_or(self.seed)
    }

    /// Synthetic spec with its seed resolved.
    pub fn synthetic_spec(&self) -> Option<SyntheticShiftSpec> {
        match &self.data {
            DataSource::Synthetic { spec, seed } => Some(SyntheticShiftSpec {
                seed: seed.unwrap_or(self.seed),
                ..spec.clone()
            }),
            DataSource::Idx(_) => None,
        }
    }

    pub fn lautum_reg(&self) -> LautumRegConfig {
        LautumRegConfig {
            lambda: self.effective_lambda(),
            alpha: self.alpha,
            jitter: self.jitter,
            batch_size: self.batch_size,
        }
    }

    /// Human-readable legend label, e.g. `lautum, λ=0.0001`.
    pub fn label(&self) -> String {
        match self.mode {
            Mode::StandardTransfer => "standard_transfer".to_string(),
            Mode::Lautum => format!("lautum, λ={}", self.lambda),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lautum_reg().validate()?;
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.split.labeled_count == 0 {
            return Err(Error::Config("labeled_count must be positive".into()));
        }
        if self.early_epochs == 0 {
            return Err(Error::Config("early_epochs must be positive".into()));
        }
        if self.finetune.epochs == 0 {
            return Err(Error::Config("finetune.epochs must be positive".into()));
        }
        if self.network.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        for (stage, s) in [("pretrain", &self.pretrain), ("finetune", &self.finetune)] {
            let o = s.optimizer;
            if !(o.lr > 0.0) || !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
                return Err(Error::Config(format!("{stage} optimizer settings out of range: {o:?}")));
            }
        }
        if let Some(spec) = self.synthetic_spec() {
            spec.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    #[serde(default)]
    experiment: RawExperiment,
    #[serde(default)]
    lautum: RawLautum,
    #[serde(default)]
    data: Option<RawData>,
    #[serde(default)]
    split: RawSplit,
    #[serde(default)]
    network: RawNetwork,
    #[serde(default)]
    pretrain: RawStage,
    #[serde(default)]
    finetune: RawStage,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawExperiment {
    mode: Option<Mode>,
    seed: Option<u64>,
    batch_size: Option<usize>,
    output: Option<PathBuf>,
    early_epochs: Option<usize>,
    record_wall_time: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLautum {
    lambda: Option<f64>,
    alpha: Option<f64>,
    jitter: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawData {
    kind: String,
    synthetic: Option<RawSynthetic>,
    idx: Option<IdxPaths>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSynthetic {
    classes: Option<usize>,
    dim: Option<usize>,
    mean_scale: Option<f64>,
    within_std: Option<f64>,
    rotation_deg: Option<f64>,
    offset: Option<f64>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSplit {
    labeled_count: Option<usize>,
    seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNetwork {
    arch: Option<Arch>,
    hidden: Option<Vec<usize>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStage {
    epochs: Option<usize>,
    lr: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    eps: Option<f64>,
}

impl RawStage {
    fn resolve(self, default: StageConfig) -> StageConfig {
        let d = default.optimizer;
        StageConfig {
            epochs: self.epochs.unwrap_or(default.epochs),
            optimizer: AdamConfig {
                lr: self.lr.unwrap_or(d.lr),
                beta1: self.beta1.unwrap_or(d.beta1),
                beta2: self.beta2.unwrap_or(d.beta2),
                eps: self.eps.unwrap_or(d.eps),
            },
        }
    }
}

/// Parses and validates config text. Returns the config and any warnings.
pub fn parse_config_str(text: &str) -> Result<(ExperimentConfig, Vec<String>)> {
    let raw: RawFile =
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string() + &span_note(text, e.span())))?;
    let d = ExperimentConfig::default();
    let mut warnings = Vec::new();

    let mode = raw.experiment.mode.unwrap_or(d.mode);
    let mut lambda = raw.lautum.lambda.unwrap_or(d.lambda);
    if mode == Mode::StandardTransfer {
        if raw.lautum.lambda.is_some_and(|l| l != 0.0) {
            warnings.push(format!("mode standard_transfer ignores lambda = {lambda}; using 0"));
        }
        lambda = 0.0;
    }

    let data = match raw.data {
        None => d.data.clone(),
        Some(RawData { kind, synthetic, idx }) => match kind.as_str() {
            "synthetic" => {
                if idx.is_some() {
                    return Err(Error::Config("[data.idx] given but kind = \"synthetic\"".into()));
                }
                let s = synthetic.unwrap_or_default();
                let base = SyntheticShiftSpec::default();
                DataSource::Synthetic {
                    spec: SyntheticShiftSpec {
                        classes: s.classes.unwrap_or(base.classes),
                        dim: s.dim.unwrap_or(base.dim),
                        mean_scale: s.mean_scale.unwrap_or(base.mean_scale),
                        within_std: s.within_std.unwrap_or(base.within_std),
                        rotation_deg: s.rotation_deg.unwrap_or(base.rotation_deg),
                        offset: s.offset.unwrap_or(base.offset),
                        train_per_class: s.train_per_class.unwrap_or(base.train_per_class),
                        test_per_class: s.test_per_class.unwrap_or(base.test_per_class),
                        seed: 0,
                    },
                    seed: s.seed,
                }
            }
            "idx" => {
                if synthetic.is_some() {
                    return Err(Error::Config("[data.synthetic] given but kind = \"idx\"".into()));
                }
                DataSource::Idx(idx.ok_or_else(|| Error::Config("kind = \"idx\" needs a [data.idx] section".into()))?)
            }
            other => return Err(Error::Config(format!("unknown data kind {other:?}"))),
        },
    };

    let cfg = ExperimentConfig {
        mode,
        seed: raw.experiment.seed.unwrap_or(d.seed),
        batch_size: raw.experiment.batch_size.unwrap_or(d.batch_size),
        lambda,
        alpha: raw.lautum.alpha.unwrap_or(d.alpha),
        jitter: raw.lautum.jitter.unwrap_or(d.jitter),
        data,
        split: SplitConfig {
            labeled_count: raw.split.labeled_count.unwrap_or(d.split.labeled_count),
            seed: raw.split.seed,
        },
        network: NetworkConfig {
            arch: raw.network.arch.unwrap_or(d.network.arch),
            hidden: raw.network.hidden.unwrap_or(d.network.hidden),
        },
        pretrain: raw.pretrain.resolve(d.pretrain),
        finetune: raw.finetune.resolve(d.finetune),
        early_epochs: raw.experiment.early_epochs.unwrap_or(d.early_epochs),
        output: raw.experiment.output.unwrap_or(d.output),
        record_wall_time: raw.experiment.record_wall_time.unwrap_or(d.record_wall_time),
    };
    cfg.validate()?;
    Ok((cfg, warnings))
}

fn span_note(text: &str, span: Option<std::ops::Range<usize>>) -> String {
    match span {
        Some(s) => format!(" (line {})", text[..s.start.min(text.len())].lines().count().max(1)),
        None => String::new(),
    }
}

/// Reads a config file, logging any warnings.
pub fn parse_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (cfg, warnings) = parse_config_str(&text).map_err(|e| e.context(format!("config {}", path.display())))?;
    for w in warnings {
        warn!("{}: {w}", path.display());
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_takes_defaults() {
        let (cfg, warnings) = parse_config_str("").unwrap();
        assert!(warnings.is_empty());
        let d = ExperimentConfig::default();
        assert_eq!(cfg, d);
        assert_eq!(cfg.pretrain.optimizer, AdamConfig::default());
        assert_eq!(cfg.alpha, 0.999);
        assert_eq!(cfg.batch_size, 50);
    }

    #[test]
    fn minimal_config_populates_everything() {
        let text = "[experiment]\nseed = 7\n[lautum]\nlambda = 1e-6\n[split]\nlabeled_count = 50\n";
        let (cfg, _) = parse_config_str(text).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.lambda, 1e-6);
        assert_eq!(cfg.split_seed(), 7);
        assert_eq!(cfg.synthetic_spec().unwrap().seed, 7);
        assert_eq!(cfg.split.labeled_count, 50);
        assert_eq!(cfg.network.hidden, vec![128]);
    }

    #[test]
    fn range_errors() {
        assert!(matches!(
            parse_config_str("[lautum]\nalpha = 1.5\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str("[lautum]\nlambda = -1.0\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str("[split]\nlabeled_count = 0\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn unknown_keys_and_type_errors() {
        assert!(matches!(
            parse_config_str("[lautum]\nlamda = 1e-4\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse_config_str("[bogus]\n"), Err(Error::Config(_))));
        assert!(matches!(
            parse_config_str("[experiment]\nseed = \"x\"\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            parse_config_str("[data]\nkind = \"mnist\"\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn standard_mode_forces_lambda_zero() {
        let (cfg, warnings) =
            parse_config_str("[experiment]\nmode = \"standard_transfer\"\n[lautum]\nlambda = 0.01\n").unwrap();
        assert_eq!(cfg.lambda, 0.0);
        assert_eq!(cfg.effective_lambda(), 0.0);
        assert_eq!(warnings.len(), 1);
    }

    #[test]
    fn idx_section_parses() {
        let text = r#"
[data]
kind = "idx"
[data.idx]
source_train_images = "a"
source_train_labels = "b"
source_test_images = "c"
source_test_labels = "d"
target_train_images = "e"
target_train_labels = "f"
target_test_images = "g"
target_test_labels = "h"
"#;
        let (cfg, _) = parse_config_str(text).unwrap();
        assert!(matches!(cfg.data, DataSource::Idx(_)));
        assert!(cfg.synthetic_spec().is_none());
    }

    #[test]
    fn config_round_trips_through_toml_echo() {
        let cfg = ExperimentConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: ExperimentConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }
}
