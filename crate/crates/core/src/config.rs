//! Run configuration: one TOML document with a section per module.
//!
//! Precedence is command-line flag, then config file, then the defaults below.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codehealth::WeightConfig;
use crate::costmodel::CostParams;
use crate::error::{Error, Result};
use crate::evaluation::{
    EvalConfig, PilotConfig, Rq1Config, DEFAULT_PILOT_MINIMUM, DEFAULT_PILOT_SIZE,
    DEFAULT_P_HAT_THRESHOLD,
};
use crate::outcomes::GeneratorConfig;
use crate::router::{Hyperparams, Thresholds};
use crate::stats::Alternative;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotSection {
    pub size: usize,
    pub minimum: usize,
    pub p_hat_threshold: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cost_ratio_override: Option<f64>,
}

impl Default for PilotSection {
    fn default() -> Self {
        Self {
            size: DEFAULT_PILOT_SIZE,
            minimum: DEFAULT_PILOT_MINIMUM,
            p_hat_threshold: DEFAULT_P_HAT_THRESHOLD,
            cost_ratio_override: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub cv_folds: usize,
    pub coverage_edges: Vec<f64>,
    pub caliper_fraction: f64,
    pub alternative: Alternative,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        let e = EvalConfig::default();
        Self {
            cv_folds: e.cv_folds,
            coverage_edges: e.coverage_edges,
            caliper_fraction: e.caliper_fraction,
            alternative: e.alternative,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rq1Section {
    pub k_list: Vec<usize>,
    pub holdout_fraction: f64,
    pub ranking_fraction: f64,
}

impl Default for Rq1Section {
    fn default() -> Self {
        let r = Rq1Config::default();
        Self {
            k_list: r.k_list,
            holdout_fraction: r.holdout_fraction,
            ranking_fraction: r.ranking_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub weights: WeightConfig,
    pub thresholds: Thresholds,
    pub costs: CostParams,
    pub classifier: Hyperparams,
    pub pilot: PilotSection,
    pub evaluation: EvaluationSection,
    pub rq1: Rq1Section,
    pub generator: GeneratorConfig,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            seed: 42,
            weights: WeightConfig::default(),
            thresholds: Thresholds::default(),
            costs: CostParams::default(),
            classifier: Hyperparams::default(),
            pilot: PilotSection::default(),
            evaluation: EvaluationSection::default(),
            rq1: Rq1Section::default(),
            generator: GeneratorConfig::default(),
        }
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        self.costs.validate()?;
        self.eval_config().validate()?;
        self.pilot_config().validate()?;
        self.generator_config().validate()
    }

    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            thresholds: self.thresholds,
            hyperparams: self.classifier.clone(),
            cv_folds: self.evaluation.cv_folds,
            coverage_edges: self.evaluation.coverage_edges.clone(),
            caliper_fraction: self.evaluation.caliper_fraction,
            alternative: self.evaluation.alternative,
            seed: self.seed,
        }
    }

    pub fn pilot_config(&self) -> PilotConfig {
        PilotConfig {
            size: self.pilot.size,
            minimum: self.pilot.minimum,
            p_hat_threshold: self.pilot.p_hat_threshold,
            cost_ratio_override: self.pilot.cost_ratio_override,
            thresholds: self.thresholds,
        }
    }

    pub fn rq1_config(&self) -> Rq1Config {
        Rq1Config {
            k_list: self.rq1.k_list.clone(),
            hyperparams: self.classifier.clone(),
            holdout_fraction: self.rq1.holdout_fraction,
            ranking_fraction: self.rq1.ranking_fraction,
            seed: self.seed,
        }
    }

    pub fn generator_config(&self) -> GeneratorConfig {
        GeneratorConfig {
            weights: self.weights,
            ..self.generator.clone()
        }
    }
}
