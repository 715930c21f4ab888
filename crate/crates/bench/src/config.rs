//! Experiment configuration: a versioned TOML document validated before any
//! compute. Unknown keys are rejected at every level.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use whdpd_core::model::{LayerConfig, ModelConfig, ShiftedInit};
use whdpd_core::optim::fullgrad::{BbVariant, CgVariant, PolyakVariant};
use whdpd_core::optim::gauss_newton::{LmDamping, LmParams};
use whdpd_core::optim::global::{DeParams, SaParams};
use whdpd_core::optim::stochastic::StochasticMethod;
use whdpd_core::pa::{PaModel, SignalSpec};
use whdpd_core::trace::Budget;

use crate::BenchError;

pub const SCHEMA_VERSION: u32 = 1;

/// Thresholds reported by default, in dB.
pub const DEFAULT_THRESHOLDS_DB: [f64; 4] = [-30.0, -35.0, -37.0, -39.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub dataset: DatasetSpec,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub init: InitSpec,
    pub optimizer: OptimizerSpec,
    pub budget: Budget,
    /// Seeds the initializer and every randomized optimizer.
    #[serde(default)]
    pub seed: u64,
    /// Stop once train NMSE has improved this many dB over the start.
    #[serde(default)]
    pub stop_after_improvement_db: Option<f64>,
    #[serde(default = "default_thresholds")]
    pub thresholds_db: Vec<f64>,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_overfit_fractions")]
    pub overfit_fractions: Vec<f64>,
    #[serde(default)]
    pub multistart: MultistartSpec,
    /// Not part of the fingerprint.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// `[dataset]`: either a synthetic PA capture or a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSpec {
    Synthetic {
        #[serde(default = "default_m")]
        m: usize,
        #[serde(default = "default_tones")]
        tone_count: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_peak")]
        peak: f64,
        #[serde(default)]
        pa: PaModel,
    },
    File {
        path: PathBuf,
    },
}

impl DatasetSpec {
    pub fn synthetic(seed: u64) -> Self {
        Self::Synthetic { m: default_m(), tone_count: default_tones(), seed, peak: default_peak(), pa: PaModel::default() }
    }

    pub fn signal_spec(&self) -> Option<(SignalSpec, &PaModel)> {
        match self {
            Self::Synthetic { m, tone_count, seed, peak, pa } => {
                Some((SignalSpec { m: *m, tone_count: *tone_count, seed: *seed, peak: *peak }, pa))
            }
            Self::File { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    Xavier {},
    He {},
    Shifted {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default = "default_tap")]
        identity_tap: [f64; 2],
    },
}

impl Default for InitSpec {
    fn default() -> Self {
        let s = ShiftedInit::default();
        Self::Shifted { alpha: s.alpha, identity_tap: s.identity_tap }
    }
}

/// `[optimizer]`, selected by `method`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum OptimizerSpec {
    Sdm {},
    Polyak {
        variant: PolyakVariant,
        #[serde(default)]
        f_star: f64,
    },
    Bb {
        variant: BbVariant,
    },
    Raider {
        #[serde(default = "default_d_level")]
        d_level: f64,
    },
    Cg {
        variant: CgVariant,
        #[serde(default)]
        restart: Option<usize>,
    },
    Bfgs {
        #[serde(default)]
        restart: Option<usize>,
    },
    Dfp {
        #[serde(default)]
        restart: Option<usize>,
    },
    Lbfgs {
        #[serde(default = "default_history")]
        history: usize,
    },
    Tsm {
        #[serde(default = "one")]
        l: f64,
    },
    Nsgn {
        #[serde(default = "one")]
        l: f64,
    },
    /// Batch is `batch` residuals, or `batch_factor * n` when `batch` is absent.
    Ssm {
        #[serde(default)]
        batch: Option<usize>,
        #[serde(default = "default_batch_factor")]
        batch_factor: f64,
        #[serde(default = "one")]
        l0: f64,
    },
    Lm {
        #[serde(default = "default_lm_variant")]
        variant: u8,
        #[serde(default)]
        params: LmParams,
    },
    Stochastic {
        algorithm: StochasticMethod,
        #[serde(default)]
        batch_size: Option<usize>,
        #[serde(default)]
        step_size: Option<f64>,
        #[serde(default)]
        record_every: Option<u64>,
    },
    Sa {
        #[serde(default)]
        params: SaParams,
        /// Half-width of the search box `[-radius, radius]^n`.
        #[serde(default = "default_radius")]
        radius: f64,
    },
    De {
        #[serde(default)]
        params: DeParams,
        #[serde(default = "default_radius")]
        radius: f64,
    },
}

impl OptimizerSpec {
    /// Short label used in summaries.
    pub fn label(&self) -> String {
        match self {
            Self::Sdm {} => "sdm".into(),
            Self::Polyak { variant, .. } => format!("polyak_{}", enum_name(variant)),
            Self::Bb { variant } => format!("bb_{}", enum_name(variant)),
            Self::Raider { .. } => "raider".into(),
            Self::Cg { variant, .. } => format!("cg_{}", enum_name(variant)),
            Self::Bfgs { .. } => "bfgs".into(),
            Self::Dfp { .. } => "dfp".into(),
            Self::Lbfgs { history } => format!("lbfgs_{history}"),
            Self::Tsm { .. } => "tsm".into(),
            Self::Nsgn { .. } => "nsgn".into(),
            Self::Ssm { .. } => "ssm".into(),
            Self::Lm { variant, .. } => format!("lm_{variant}"),
            Self::Stochastic { algorithm, .. } => enum_name(algorithm),
            Self::Sa { .. } => "sa".into(),
            Self::De { .. } => "de".into(),
        }
    }

    fn validate(&self) -> Result<(), String> {
        match self {
            Self::Lm { variant, .. } => LmDamping::from_variant(*variant).map(|_| ()).map_err(|e| e.to_string()),
            Self::Ssm { batch: None, batch_factor, .. } if !(*batch_factor >= 0.0 && batch_factor.is_finite()) => {
                Err("ssm batch_factor must be finite and non-negative".into())
            }
            Self::Sa { params, radius } => {
                params.validate().map_err(|e| e.to_string())?;
                check_radius(*radius)
            }
            Self::De { params, radius } => {
                params.validate().map_err(|e| e.to_string())?;
                check_radius(*radius)
            }
            Self::Lbfgs { history: 0 } => Err("lbfgs history must be at least 1".into()),
            _ => Ok(()),
        }
    }
}

fn check_radius(r: f64) -> Result<(), String> {
    if r > 0.0 && r.is_finite() {
        Ok(())
    } else {
        Err(format!("box radius must be positive and finite, got {r}"))
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v).ok().and_then(|v| v.as_str().map(str::to_owned)).unwrap_or_default()
}

/// `[multistart]`: L-BFGS descents from points drawn in `[-start_radius, start_radius]^n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultistartSpec {
    pub starts: usize,
    pub start_radius: f64,
    pub iterations: u64,
    pub history: usize,
}

impl Default for MultistartSpec {
    fn default() -> Self {
        Self { starts: 8, start_radius: 0.1, iterations: 100, history: 100 }
    }
}

/// The desk-scale model: two residual layers of four blocks, 184 complex weights.
pub fn default_model() -> ModelConfig {
    let layer = LayerConfig { blocks: 4, cs_width: 5, lut_width: 5, branch_width: 5, branches: 2, gain_order: 3 };
    ModelConfig::uniform(2, layer, true)
}

fn default_thresholds() -> Vec<f64> {
    DEFAULT_THRESHOLDS_DB.to_vec()
}

fn default_train_fraction() -> f64 {
    0.75
}

fn default_overfit_fractions() -> Vec<f64> {
    vec![0.05, 0.2, 0.75]
}

fn default_m() -> usize {
    8192
}

fn default_tones() -> usize {
    16
}

fn default_peak() -> f64 {
    0.7
}

fn default_alpha() -> f64 {
    ShiftedInit::default().alpha
}

fn default_tap() -> [f64; 2] {
    ShiftedInit::default().identity_tap
}

fn default_d_level() -> f64 {
    0.2
}

fn default_history() -> usize {
    100
}

fn default_batch_factor() -> f64 {
    6.0
}

fn default_lm_variant() -> u8 {
    1
}

fn default_radius() -> f64 {
    2.0
}

fn one() -> f64 {
    1.0
}

impl ExperimentConfig {
    /// Default synthetic problem with the given optimizer and budget.
    pub fn new(optimizer: OptimizerSpec, budget: Budget) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dataset: DatasetSpec::synthetic(0),
            model: default_model(),
            init: InitSpec::default(),
            optimizer,
            budget,
            seed: 0,
            stop_after_improvement_db: None,
            thresholds_db: default_thresholds(),
            train_fraction: default_train_fraction(),
            overfit_fractions: default_overfit_fractions(),
            multistart: MultistartSpec::default(),
            output_dir: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            BenchError::Config(m) => BenchError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    /// Semantic checks that the schema cannot express.
    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if let Some((spec, pa)) = self.dataset.signal_spec() {
            spec.validate().map_err(|e| BenchError::Config(format!("dataset: {e}")))?;
            pa.validate().map_err(|e| BenchError::Config(format!("dataset.pa: {e}")))?;
        }
        self.model.validate().map_err(|e| BenchError::Config(format!("model: {e}")))?;
        self.budget.validate().map_err(|e| BenchError::Config(format!("budget: {e}")))?;
        self.optimizer.validate().map_err(|e| BenchError::Config(format!("optimizer: {e}")))?;
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie in (0, 1), got {}", self.train_fraction));
        }
        if let Some(f) = self.overfit_fractions.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
            return bad(format!("overfit fractions must lie in (0, 1), got {f}"));
        }
        if self.thresholds_db.iter().any(|t| !t.is_finite()) {
            return bad("thresholds_db must be finite".into());
        }
        if self.stop_after_improvement_db.is_some_and(|d| !(d > 0.0 && d.is_finite())) {
            return bad("stop_after_improvement_db must be positive".into());
        }
        let ms = &self.multistart;
        if ms.starts == 0 || ms.history == 0 || ms.iterations == 0 || ms.start_radius.is_nan() || ms.start_radius <= 0.0 {
            return bad("multistart needs starts, history, iterations and start_radius > 0".into());
        }
        Ok(())
    }

    /// First 16 hex digits of the SHA-256 of the canonical JSON form (keys
    /// sorted, `output_dir` dropped).
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("experiment config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
        }
        let digest = Sha256::digest(v.to_string().as_bytes());
        hex::encode(&digest[..8])
    }
}
