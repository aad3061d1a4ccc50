//! Per-task, per-tier verification outcomes.
//!
//! A tier passes a task when a strict majority of its repeated runs pass.
//! Corpora come either from recorded runs (JSON Lines, see [`Corpus::parse_jsonl`])
//! or from [`generate_corpus`], which draws outcomes from a linear-in-health
//! pass probability per tier so the strength of the health signal is an
//! explicit experiment knob.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::codehealth::{
    composite_score, SubFactor, SubFactorVector, WeightConfig, SCORE_MAX, SCORE_MIN,
};
use crate::error::{Error, Result};
use crate::featurestore::{content_hash, FeatureRecord, FeatureStore};
use crate::io::write_atomic;
use crate::rng::{self, Domain};
use crate::router::Tier;

pub const DEFAULT_RUNS_PER_TIER: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

impl Verdict {
    pub fn passed(self) -> bool {
        self == Verdict::Pass
    }

    pub fn from_bool(pass: bool) -> Self {
        if pass {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(if self.passed() { "pass" } else { "fail" })
    }
}

/// Pass iff a strict majority of `runs` pass. Run counts must be odd.
pub fn majority_pass(runs: &[Verdict]) -> Result<Verdict> {
    if runs.is_empty() {
        return Err(Error::Domain("majority vote over zero runs".into()));
    }
    if runs.len().is_multiple_of(2) {
        return Err(Error::Domain(format!(
            "majority vote needs an odd run count, got {}",
            runs.len()
        )));
    }
    let passes = runs.iter().filter(|v| v.passed()).count();
    Ok(Verdict::from_bool(2 * passes > runs.len()))
}

/// Run verdicts per tier. An empty list means the tier was not run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSet {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub light: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub standard: Vec<Verdict>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub heavy: Vec<Verdict>,
}

impl RunSet {
    pub fn runs(&self, tier: Tier) -> &[Verdict] {
        match tier {
            Tier::Light => &self.light,
            Tier::Standard => &self.standard,
            Tier::Heavy => &self.heavy,
        }
    }

    pub fn runs_mut(&mut self, tier: Tier) -> &mut Vec<Verdict> {
        match tier {
            Tier::Light => &mut self.light,
            Tier::Standard => &mut self.standard,
            Tier::Heavy => &mut self.heavy,
        }
    }

    pub fn has(&self, tier: Tier) -> bool {
        !self.runs(tier).is_empty()
    }

    /// Majority verdict of `tier`, or an error when the tier was not run.
    pub fn verdict(&self, tier: Tier) -> Result<Verdict> {
        let runs = self.runs(tier);
        if runs.is_empty() {
            return Err(Error::Domain(format!("no runs recorded for tier {tier}")));
        }
        majority_pass(runs)
    }

    pub fn total_runs(&self) -> usize {
        Tier::ALL.iter().map(|t| self.runs(*t).len()).sum()
    }

    fn validate(&self) -> std::result::Result<(), String> {
        let counts: BTreeSet<usize> = Tier::ALL
            .iter()
            .map(|t| self.runs(*t).len())
            .filter(|&n| n > 0)
            .collect();
        match counts.len() {
            0 => Err("runs present but every tier is empty".into()),
            1 => {
                let n = *counts.iter().next().unwrap();
                if n.is_multiple_of(2) {
                    Err(format!(
                        "run count {n} is even; majority vote needs an odd count"
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Err(format!("uneven run counts across tiers: {counts:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskFile {
    pub path: String,
    /// Composite health when known inline (recorded and synthetic corpora).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub health: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub task_id: String,
    pub files: Vec<TaskFile>,
    /// Difficulty proxy, e.g. ground-truth patch line count.
    pub patch_size: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs: Option<RunSet>,
}

impl TaskRecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.task_id.trim().is_empty() {
            return Err("empty task_id".into());
        }
        if self.files.is_empty() {
            return Err(format!("task {} references no files", self.task_id));
        }
        for f in &self.files {
            if let Some(h) = f.health {
                if !(SCORE_MIN..=SCORE_MAX).contains(&h) {
                    return Err(format!("health {h} of {} outside [1, 10]", f.path));
                }
            }
        }
        if let Some(c) = self.coverage {
            if !(0.0..=1.0).contains(&c) {
                return Err(format!("coverage {c} outside [0, 1]"));
            }
        }
        if let Some(runs) = &self.runs {
            runs.validate()?;
        }
        Ok(())
    }

    /// Majority verdict at `tier`; errors when outcomes are missing.
    pub fn verdict(&self, tier: Tier) -> Result<Verdict> {
        self.runs
            .as_ref()
            .ok_or_else(|| Error::Domain(format!("task {} has no outcomes", self.task_id)))?
            .verdict(tier)
    }
}

/// Validated set of tasks, sorted by task_id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    tasks: Vec<TaskRecord>,
}

impl Corpus {
    pub fn new(mut tasks: Vec<TaskRecord>) -> Result<Self> {
        for t in &tasks {
            t.validate()
                .map_err(|m| Error::Domain(format!("task {}: {m}", t.task_id)))?;
        }
        tasks.sort_by(|a, b| a.task_id.cmp(&b.task_id));
        if let Some(w) = tasks.windows(2).find(|w| w[0].task_id == w[1].task_id) {
            return Err(Error::Domain(format!("duplicate task_id {}", w[0].task_id)));
        }
        Ok(Self { tasks })
    }

    pub fn tasks(&self) -> &[TaskRecord] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn total_runs(&self) -> usize {
        self.tasks
            .iter()
            .filter_map(|t| t.runs.as_ref())
            .map(RunSet::total_runs)
            .sum()
    }

    /// True when every task has majority verdicts for all three tiers.
    pub fn has_complete_outcomes(&self) -> bool {
        self.tasks.iter().all(|t| {
            t.runs
                .as_ref()
                .is_some_and(|r| Tier::ALL.iter().all(|&tier| r.has(tier)))
        })
    }

    /// Subset of tasks whose ids satisfy `keep`.
    pub fn filter(&self, mut keep: impl FnMut(&TaskRecord) -> bool) -> Corpus {
        Corpus {
            tasks: self.tasks.iter().filter(|t| keep(t)).cloned().collect(),
        }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for t in &self.tasks {
            out.push_str(&serde_json::to_string(t).expect("task serializes"));
            out.push('\n');
        }
        out
    }

    /// Parse the JSON Lines corpus schema, reporting the 1-based line of the
    /// first problem.
    pub fn parse_jsonl(text: &str) -> Result<Self> {
        let mut tasks = Vec::new();
        let mut seen = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let task: TaskRecord = serde_json::from_str(line).map_err(|e| Error::Ingest {
                line: line_no,
                message: e.to_string(),
            })?;
            task.validate().map_err(|message| Error::Ingest {
                line: line_no,
                message,
            })?;
            if !seen.insert(task.task_id.clone()) {
                return Err(Error::Ingest {
                    line: line_no,
                    message: format!("duplicate task_id {}", task.task_id),
                });
            }
            tasks.push(task);
        }
        Corpus::new(tasks)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }
}

/// Read and validate a recorded-runs corpus file.
pub fn ingest_runs(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Corpus::parse_jsonl(&text)
}

/// Linear-in-health pass probabilities per tier:
/// `p_t(h) = clamp(base_t + slope_t * (h - 1), 0, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsymmetryParams {
    pub base_light: f64,
    pub base_standard: f64,
    pub base_heavy: f64,
    pub slope_light: f64,
    pub slope_standard: f64,
    pub slope_heavy: f64,
}

impl Default for AsymmetryParams {
    /// Light improves from 0.20 to 0.74 across the health range, standard
    /// from 0.40 to 0.85, heavy is flat at 0.85.
    fn default() -> Self {
        Self {
            base_light: 0.20,
            base_standard: 0.40,
            base_heavy: 0.85,
            slope_light: 0.06,
            slope_standard: 0.05,
            slope_heavy: 0.0,
        }
    }
}

impl AsymmetryParams {
    /// No health signal: every tier passes with probability `p`.
    pub fn null(p: f64) -> Self {
        Self {
            base_light: p,
            base_standard: p,
            base_heavy: p,
            slope_light: 0.0,
            slope_standard: 0.0,
            slope_heavy: 0.0,
        }
    }

    pub fn pass_probability(&self, tier: Tier, health: f64) -> f64 {
        let (base, slope) = match tier {
            Tier::Light => (self.base_light, self.slope_light),
            Tier::Standard => (self.base_standard, self.slope_standard),
            Tier::Heavy => (self.base_heavy, self.slope_heavy),
        };
        (base + slope * (health - SCORE_MIN)).clamp(0.0, 1.0)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.base_light,
            self.base_standard,
            self.base_heavy,
            self.slope_light,
            self.slope_standard,
            self.slope_heavy,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("asymmetry parameters must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum HealthDistribution {
    Uniform {
        low: f64,
        high: f64,
    },
    /// Equal-weight mixture of two normals, clamped to [1, 10].
    Bimodal {
        mu1: f64,
        mu2: f64,
        sigma: f64,
    },
    /// Resample from observed health values.
    Empirical {
        values: Vec<f64>,
    },
}

impl Default for HealthDistribution {
    fn default() -> Self {
        HealthDistribution::Uniform {
            low: SCORE_MIN,
            high: SCORE_MAX,
        }
    }
}

impl HealthDistribution {
    fn validate(&self) -> Result<()> {
        let in_range = |x: f64| (SCORE_MIN..=SCORE_MAX).contains(&x);
        match self {
            HealthDistribution::Uniform { low, high } => {
                if !(in_range(*low) && in_range(*high) && low <= high) {
                    return Err(Error::Config(format!(
                        "uniform health range [{low}, {high}] must lie within [1, 10]"
                    )));
                }
            }
            HealthDistribution::Bimodal { mu1, mu2, sigma } => {
                if !(mu1.is_finite() && mu2.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::Config(
                        "bimodal health needs finite means and sigma > 0".into(),
                    ));
                }
            }
            HealthDistribution::Empirical { values } => {
                if values.is_empty() || !values.iter().all(|v| in_range(*v)) {
                    return Err(Error::Config(
                        "empirical health needs a non-empty list of values in [1, 10]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        let h = match self {
            HealthDistribution::Uniform { low, high } => {
                if low == high {
                    *low
                } else {
                    rng.random_range(*low..=*high)
                }
            }
            HealthDistribution::Bimodal { mu1, mu2, sigma } => {
                let mu = if rng.random_bool(0.5) { *mu1 } else { *mu2 };
                Normal::new(mu, *sigma)
                    .expect("validated sigma")
                    .sample(rng)
            }
            HealthDistribution::Empirical { values } => values[rng.random_range(0..values.len())],
        };
        h.clamp(SCORE_MIN, SCORE_MAX)
    }
}

/// How synthetic sub-factor vectors realize a sampled health value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "factor", rename_all = "lowercase")]
pub enum SubFactorModel {
    /// Penalty spread over all weighted sub-factors in random proportions.
    Spread,
    /// Only this sub-factor is penalized; all others stay below their low knee.
    Single(SubFactor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_tasks: usize,
    pub health: HealthDistribution,
    pub asymmetry: AsymmetryParams,
    pub runs_per_tier: usize,
    pub max_files_per_task: usize,
    /// Inclusive log-uniform range for patch sizes.
    pub patch_size_min: u64,
    pub patch_size_max: u64,
    /// Attach uniform [0, 1] coverage to every task.
    pub with_coverage: bool,
    pub sub_factor_model: SubFactorModel,
    /// Supplied by the caller's weight configuration, not by parameter files.
    #[serde(skip)]
    pub weights: WeightConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            n_tasks: 300,
            health: HealthDistribution::default(),
            asymmetry: AsymmetryParams::default(),
            runs_per_tier: DEFAULT_RUNS_PER_TIER,
            max_files_per_task: 3,
            patch_size_min: 1,
            patch_size_max: 500,
            with_coverage: true,
            sub_factor_model: SubFactorModel::Spread,
            weights: WeightConfig::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_tasks == 0 {
            return Err(Error::Config("n_tasks must be at least 1".into()));
        }
        if self.runs_per_tier == 0 || self.runs_per_tier.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "runs_per_tier must be odd, got {}",
                self.runs_per_tier
            )));
        }
        if self.max_files_per_task == 0 {
            return Err(Error::Config(
                "max_files_per_task must be at least 1".into(),
            ));
        }
        if self.patch_size_min == 0 || self.patch_size_min > self.patch_size_max {
            return Err(Error::Config(
                "patch size range must satisfy 1 <= min <= max".into(),
            ));
        }
        if let SubFactorModel::Single(f) = self.sub_factor_model {
            if self.weights.ramp(f).weight <= 0.0 {
                return Err(Error::Config(format!(
                    "single-factor model needs weight on {f}"
                )));
            }
        }
        self.health.validate()?;
        self.asymmetry.validate()?;
        self.weights.validate()
    }
}

/// A generated corpus plus the feature store describing its files.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    pub store: FeatureStore,
}

/// Generate a reproducible synthetic corpus. Task `i` draws from its own
/// random stream derived from `(seed, i)`.
pub fn generate_corpus(cfg: &GeneratorConfig, seed: u64) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut store = FeatureStore::new(cfg.weights)?;
    let mut tasks = Vec::with_capacity(cfg.n_tasks);
    let width = cfg.n_tasks.to_string().len().max(4);

    for i in 0..cfg.n_tasks {
        let mut rng = rng::stream(Domain::Generator, seed, i as u64);
        let task_id = format!("synth-{i:0width$}");
        let n_files = rng.random_range(1..=cfg.max_files_per_task);
        let mut files = Vec::with_capacity(n_files);
        for j in 0..n_files {
            let target = cfg.health.sample(&mut rng);
            let sub_factors = synthesize_vector(target, cfg, &mut rng);
            let score = composite_score(&sub_factors, &cfg.weights)?;
            let path = format!("synth/{task_id}/file{j}.rs");
            let digest_input = serde_json::to_vec(&(&path, &sub_factors))?;
            store.insert_record(FeatureRecord {
                path: path.clone(),
                content_hash: content_hash(&digest_input),
                sub_factors,
                score,
                coverage: None,
                updated_at: 0,
            })?;
            files.push(TaskFile {
                path,
                health: Some(score.value),
            });
        }
        let worst = files
            .iter()
            .filter_map(|f| f.health)
            .fold(f64::INFINITY, f64::min);

        let (lo, hi) = (
            (cfg.patch_size_min as f64).ln(),
            (cfg.patch_size_max as f64).ln(),
        );
        let patch_size = if lo == hi {
            cfg.patch_size_min
        } else {
            rng.random_range(lo..=hi).exp().round() as u64
        };
        let coverage = cfg.with_coverage.then(|| rng.random_range(0.0..=1.0));

        let mut runs = RunSet::default();
        for tier in Tier::ALL {
            let p = cfg.asymmetry.pass_probability(tier, worst);
            *runs.runs_mut(tier) = (0..cfg.runs_per_tier)
                .map(|_| Verdict::from_bool(rng.random_bool(p)))
                .collect();
        }

        tasks.push(TaskRecord {
            task_id,
            files,
            patch_size,
            coverage,
            runs: Some(runs),
        });
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(tasks)?,
        store,
    })
}

/// Build a sub-factor vector whose composite score is close to `target`.
/// Count-valued factors are rounded, so the realized score can differ slightly.
fn synthesize_vector<R: Rng>(target: f64, cfg: &GeneratorConfig, rng: &mut R) -> SubFactorVector {
    let weights = &cfg.weights;
    let needed = (SCORE_MAX - target).max(0.0);
    let mut penalties = [0.0f64; 8];

    match cfg.sub_factor_model {
        SubFactorModel::Spread => {
            let shares: Vec<f64> = (0..8).map(|_| rng.random_range(0.2..=1.0)).collect();
            let total = |s: f64| -> f64 {
                SubFactor::ALL
                    .iter()
                    .zip(&shares)
                    .map(|(f, u)| weights.ramp(*f).weight * (s * u).min(1.0))
                    .sum()
            };
            let (mut lo, mut hi) = (0.0, 5.0);
            if total(hi) <= needed {
                lo = hi;
            } else {
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if total(mid) < needed {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
            }
            for (k, u) in shares.iter().enumerate() {
                penalties[k] = (lo * u).min(1.0);
            }
        }
        SubFactorModel::Single(factor) => {
            let idx = SubFactor::ALL
                .iter()
                .position(|f| *f == factor)
                .expect("known factor");
            penalties[idx] = (needed / weights.ramp(factor).weight).min(1.0);
        }
    }

    let mut v = SubFactorVector::default();
    for (k, f) in SubFactor::ALL.iter().enumerate() {
        let r = weights.ramp(*f);
        let pen = penalties[k];
        let x = if pen <= 0.0 {
            // Below the knee: no penalty, but still varied.
            rng.random_range(0.0..=1.0) * r.low.max(0.0)
        } else if pen >= 1.0 && cfg.sub_factor_model == SubFactorModel::Spread {
            r.high + rng.random_range(0.0..=0.5) * (r.high - r.low)
        } else {
            r.low + pen * (r.high - r.low)
        };
        v.set(*f, x);
    }
    v
}
