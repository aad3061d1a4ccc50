//! Task-level routing to capability tiers.
//!
//! A task is routed on the health of the worst file it touches. Policies:
//! hand-set health thresholds, a trained one-vs-rest classifier, the
//! perfect-hindsight oracle (cheapest tier whose majority verdict passes),
//! and the always-light / always-heavy / random baselines. Whenever a
//! decision cannot be made (missing features) the router errs upward and
//! picks Heavy.

mod classifier;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::codehealth::{SubFactorVector, SCORE_MAX, SCORE_MIN};
use crate::error::{Error, Result};
use crate::featurestore::FeatureStore;
use crate::outcomes::{Corpus, TaskRecord};
use crate::rng::{self, Domain, StreamRng};

pub use classifier::{
    cross_fit_decisions, predict_probabilities, route_classifier, route_on_probabilities,
    task_feature_row, train_classifier, FeatureId, Hyperparams, LogisticModel, TierModel,
    TrainingMeta,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Light = 0,
    Standard = 1,
    Heavy = 2,
}

impl Tier {
    pub const ALL: [Tier; 3] = [Tier::Light, Tier::Standard, Tier::Heavy];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(i: usize) -> Option<Tier> {
        Tier::ALL.get(i).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tier::Light => "light",
            Tier::Standard => "standard",
            Tier::Heavy => "heavy",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Features of one file as seen by the router.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileFeatures {
    pub health: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sub_factors: Option<SubFactorVector>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coverage: Option<f64>,
}

/// Immutable path -> features snapshot that routing reads from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureTable {
    files: BTreeMap<String, FileFeatures>,
}

impl FeatureTable {
    pub fn from_store(store: &FeatureStore) -> Self {
        let files = store
            .records()
            .map(|r| {
                (
                    r.path.clone(),
                    FileFeatures {
                        health: r.score.value,
                        sub_factors: Some(r.sub_factors),
                        coverage: r.coverage,
                    },
                )
            })
            .collect();
        Self { files }
    }

    /// Inline health values from a corpus, overridden by `store` records when given.
    pub fn for_corpus(corpus: &Corpus, store: Option<&FeatureStore>) -> Self {
        let mut table = FeatureTable::default();
        for task in corpus.tasks() {
            for f in &task.files {
                if let Some(h) = f.health {
                    table.files.insert(
                        f.path.clone(),
                        FileFeatures {
                            health: h,
                            sub_factors: None,
                            coverage: None,
                        },
                    );
                }
            }
        }
        if let Some(store) = store {
            table.files.extend(FeatureTable::from_store(store).files);
        }
        table
    }

    pub fn insert(&mut self, path: impl Into<String>, features: FileFeatures) {
        self.files.insert(path.into(), features);
    }

    pub fn get(&self, path: &str) -> Option<&FileFeatures> {
        self.files.get(path)
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

/// The task's worst (lowest-health) file and its features. Ties keep the
/// first file listed.
pub fn worst_file<'a>(
    task: &TaskRecord,
    table: &'a FeatureTable,
) -> Result<(&'a str, &'a FileFeatures)> {
    let mut worst: Option<(&str, &FileFeatures)> = None;
    for f in &task.files {
        let (path, features) = table.files.get_key_value(f.path.as_str()).ok_or_else(|| {
            Error::Routing(format!(
                "no features for {} (task {})",
                f.path, task.task_id
            ))
        })?;
        if worst.is_none_or(|(_, w)| features.health < w.health) {
            worst = Some((path.as_str(), features));
        }
    }
    worst.ok_or_else(|| Error::Routing(format!("task {} references no files", task.task_id)))
}

/// Minimum composite score over the task's files.
pub fn task_health(task: &TaskRecord, table: &FeatureTable) -> Result<f64> {
    worst_file(task, table).map(|(_, f)| f.health)
}

/// Heuristic cut points on worst-file health.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub light: f64,
    pub standard: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            light: 9.0,
            standard: 5.0,
        }
    }
}

impl Thresholds {
    pub fn new(light: f64, standard: f64) -> Result<Self> {
        let t = Self { light, standard };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if !(SCORE_MIN <= self.standard && self.standard <= self.light && self.light <= SCORE_MAX) {
            return Err(Error::Config(format!(
                "thresholds must satisfy 1 <= standard ({}) <= light ({}) <= 10",
                self.standard, self.light
            )));
        }
        Ok(())
    }
}

impl FromStr for Thresholds {
    type Err = Error;

    /// `"9,5"` -> light 9, standard 5.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [light, standard] = parts.as_slice() else {
            return Err(Error::Config(format!(
                "thresholds must be 'light,standard', got '{s}'"
            )));
        };
        let parse = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad threshold '{v}'")))
        };
        Thresholds::new(parse(light)?, parse(standard)?)
    }
}

pub fn route_heuristic(health: f64, thresholds: &Thresholds) -> Result<Tier> {
    thresholds.validate()?;
    Ok(if health >= thresholds.light {
        Tier::Light
    } else if health >= thresholds.standard {
        Tier::Standard
    } else {
        Tier::Heavy
    })
}

/// Oracle label of a task: the cheapest tier whose majority verdict passes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleLabel {
    pub tier: Tier,
    /// No tier passed; `tier` is Heavy by convention.
    pub all_failed: bool,
}

pub fn oracle_label(task: &TaskRecord) -> Result<OracleLabel> {
    let runs = task
        .runs
        .as_ref()
        .ok_or_else(|| Error::Routing(format!("task {} has no outcomes", task.task_id)))?;
    for tier in Tier::ALL {
        if !runs.has(tier) {
            return Err(Error::Routing(format!(
                "task {} has no outcomes for tier {tier}",
                task.task_id
            )));
        }
    }
    for tier in Tier::ALL {
        if runs.verdict(tier)?.passed() {
            return Ok(OracleLabel {
                tier,
                all_failed: false,
            });
        }
    }
    Ok(OracleLabel {
        tier: Tier::Heavy,
        all_failed: true,
    })
}

pub fn route_oracle(task: &TaskRecord) -> Result<Tier> {
    oracle_label(task).map(|l| l.tier)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineKind {
    AlwaysLight,
    AlwaysHeavy,
    Random,
}

pub fn route_baseline<R: Rng + ?Sized>(kind: BaselineKind, rng: &mut R) -> Tier {
    match kind {
        BaselineKind::AlwaysLight => Tier::Light,
        BaselineKind::AlwaysHeavy => Tier::Heavy,
        BaselineKind::Random => Tier::ALL[rng.random_range(0..Tier::ALL.len())],
    }
}

/// Policy identifiers used on the command line and in reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Heuristic,
    Classifier,
    Oracle,
    AlwaysLight,
    AlwaysHeavy,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 6] = [
        PolicyKind::Heuristic,
        PolicyKind::Classifier,
        PolicyKind::Oracle,
        PolicyKind::AlwaysLight,
        PolicyKind::AlwaysHeavy,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Heuristic => "heuristic",
            PolicyKind::Classifier => "classifier",
            PolicyKind::Oracle => "oracle",
            PolicyKind::AlwaysLight => "always-light",
            PolicyKind::AlwaysHeavy => "always-heavy",
            PolicyKind::Random => "random",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown policy '{s}'")))
    }
}

/// A fully configured routing policy.
#[derive(Debug, Clone, PartialEq)]
pub enum Policy {
    Heuristic(Thresholds),
    Classifier(Box<TierModel>),
    Oracle,
    AlwaysLight,
    AlwaysHeavy,
    Random { seed: u64 },
}

impl Policy {
    pub fn kind(&self) -> PolicyKind {
        match self {
            Policy::Heuristic(_) => PolicyKind::Heuristic,
            Policy::Classifier(_) => PolicyKind::Classifier,
            Policy::Oracle => PolicyKind::Oracle,
            Policy::AlwaysLight => PolicyKind::AlwaysLight,
            Policy::AlwaysHeavy => PolicyKind::AlwaysHeavy,
            Policy::Random { .. } => PolicyKind::Random,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoutingDecision {
    pub task_id: String,
    pub tier: Tier,
    pub policy: PolicyKind,
    /// Worst-file composite score; absent when features were missing.
    pub health_used: Option<f64>,
    pub rationale: String,
}

/// Routes tasks under one policy against a fixed feature snapshot.
pub struct Router<'a> {
    policy: &'a Policy,
    table: &'a FeatureTable,
}

impl<'a> Router<'a> {
    pub fn new(policy: &'a Policy, table: &'a FeatureTable) -> Self {
        Self { policy, table }
    }

    pub fn policy(&self) -> &Policy {
        self.policy
    }

    /// Route one task. Only the random baseline consumes `rng`.
    pub fn route(&self, task: &TaskRecord, rng: &mut StreamRng) -> Result<RoutingDecision> {
        let kind = self.policy.kind();
        let health = task_health(task, self.table);
        let decision = |tier: Tier, rationale: String| RoutingDecision {
            task_id: task.task_id.clone(),
            tier,
            policy: kind,
            health_used: health.as_ref().ok().copied(),
            rationale,
        };
        let missing = |e: &Error| {
            decision(
                Tier::Heavy,
                format!("missing features, erring to heavy: {e}"),
            )
        };

        Ok(match self.policy {
            Policy::Heuristic(th) => match &health {
                Ok(h) => decision(
                    route_heuristic(*h, th)?,
                    format!(
                        "worst-file health {h:.2} vs thresholds {}/{}",
                        th.light, th.standard
                    ),
                ),
                Err(e) => missing(e),
            },
            Policy::Classifier(model) => {
                match task_feature_row(task, self.table, &model.features) {
                    Ok(row) => {
                        let (pl, ps) = predict_probabilities(model, &row)?;
                        decision(
                            route_on_probabilities(pl, ps, model.tau),
                            format!("p_light {pl:.3}, p_standard {ps:.3}, tau {}", model.tau),
                        )
                    }
                    Err(e) => missing(&e),
                }
            }
            Policy::Oracle => {
                let label = oracle_label(task)?;
                let why = if label.all_failed {
                    "no tier passed; heavy by convention".to_string()
                } else {
                    format!("cheapest passing tier is {}", label.tier)
                };
                decision(label.tier, why)
            }
            Policy::AlwaysLight => decision(
                route_baseline(BaselineKind::AlwaysLight, rng),
                "baseline".into(),
            ),
            Policy::AlwaysHeavy => decision(
                route_baseline(BaselineKind::AlwaysHeavy, rng),
                "baseline".into(),
            ),
            Policy::Random { .. } => decision(
                route_baseline(BaselineKind::Random, rng),
                "uniform draw".into(),
            ),
        })
    }

    /// Route every task of a corpus in task_id order. Under a random policy
    /// task `i` draws from stream `i` of the policy seed.
    pub fn route_corpus(&self, corpus: &Corpus) -> Result<Vec<RoutingDecision>> {
        let seed = match self.policy {
            Policy::Random { seed } => *seed,
            _ => 0,
        };
        corpus
            .tasks()
            .iter()
            .enumerate()
            .map(|(i, t)| self.route(t, &mut rng::stream(Domain::RandomPolicy, seed, i as u64)))
            .collect()
    }
}
