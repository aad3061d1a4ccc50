//! One-vs-rest logistic tier classifier with a confidence threshold.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{oracle_label, worst_file, FeatureTable, PolicyKind, RoutingDecision, Tier};
use crate::codehealth::SubFactor;
use crate::costmodel::{charge, CostParams};
use crate::error::{Error, Result};
use crate::outcomes::{Corpus, TaskRecord};
use crate::rng::{self, Domain};

/// Features the classifier can be trained on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum FeatureId {
    SubFactor(SubFactor),
    Composite,
    PatchSize,
    Coverage,
}

impl FeatureId {
    /// The full default feature set: eight sub-factors, composite, patch size, coverage.
    pub fn all() -> Vec<FeatureId> {
        SubFactor::ALL
            .into_iter()
            .map(FeatureId::SubFactor)
            .chain([
                FeatureId::Composite,
                FeatureId::PatchSize,
                FeatureId::Coverage,
            ])
            .collect()
    }

    pub fn sub_factors() -> Vec<FeatureId> {
        SubFactor::ALL
            .into_iter()
            .map(FeatureId::SubFactor)
            .collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureId::SubFactor(s) => s.name(),
            FeatureId::Composite => "composite",
            FeatureId::PatchSize => "patch_size",
            FeatureId::Coverage => "coverage",
        }
    }
}

impl fmt::Display for FeatureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FeatureId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "composite" => Ok(FeatureId::Composite),
            "patch_size" => Ok(FeatureId::PatchSize),
            "coverage" => Ok(FeatureId::Coverage),
            other => other
                .parse::<SubFactor>()
                .map(FeatureId::SubFactor)
                .map_err(|_| Error::Config(format!("unknown feature '{other}'"))),
        }
    }
}

impl TryFrom<String> for FeatureId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<FeatureId> for String {
    fn from(f: FeatureId) -> String {
        f.name().to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub tau_grid: Vec<f64>,
    /// Share of tasks held out for choosing tau.
    pub validation_fraction: f64,
    pub features: Vec<FeatureId>,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 500,
            l2: 0.01,
            seed: 42,
            tau_grid: (0..10).map(|i| 0.5 + 0.05 * i as f64).collect(),
            validation_fraction: 0.25,
            features: FeatureId::all(),
        }
    }
}

impl Hyperparams {
    pub fn with_features(mut self, features: Vec<FeatureId>) -> Self {
        self.features = features;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.l2.is_nan() || self.l2 < 0.0 {
            return bad(format!("l2 must be non-negative, got {}", self.l2));
        }
        if self.tau_grid.is_empty() || self.tau_grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
            return bad("tau_grid must be non-empty with values in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.validation_fraction) {
            return bad(format!(
                "validation_fraction must be in [0, 1), got {}",
                self.validation_fraction
            ));
        }
        let distinct: BTreeSet<_> = self.features.iter().collect();
        if distinct.len() != self.features.len() {
            return bad("duplicate feature in feature set".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl LogisticModel {
    fn probability(&self, z: &[f64]) -> f64 {
        let s: f64 = self.intercept
            + self
                .coefficients
                .iter()
                .zip(z)
                .map(|(w, x)| w * x)
                .sum::<f64>();
        sigmoid(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub n_train: usize,
    pub n_validation: usize,
    pub light_prior: f64,
    pub standard_prior: f64,
    /// Final penalized mean log-loss of each tier model on the fitting split.
    pub light_objective: f64,
    pub standard_objective: f64,
    /// Mean savings per task versus always-heavy at the chosen tau.
    pub validation_savings: f64,
    pub costs: CostParams,
    pub hyperparams: Hyperparams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierModel {
    pub features: Vec<FeatureId>,
    /// Standardization parameters from the training split.
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
    pub light: LogisticModel,
    pub standard: LogisticModel,
    pub tau: f64,
    pub training: TrainingMeta,
}

impl TierModel {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: TierModel = serde_json::from_str(text)?;
        let d = m.features.len();
        if [
            m.means.len(),
            m.sds.len(),
            m.light.coefficients.len(),
            m.standard.coefficients.len(),
        ]
        .iter()
        .any(|&n| n != d)
        {
            return Err(Error::Config(
                "model dimensions do not match its feature list".into(),
            ));
        }
        if !(m.tau > 0.0 && m.tau < 1.0) {
            return Err(Error::Config(format!("model tau {} outside (0, 1)", m.tau)));
        }
        Ok(m)
    }

    fn standardize(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .zip(self.means.iter().zip(&self.sds))
            .map(|(x, (m, s))| x.map_or(0.0, |x| (x - m) / s))
            .collect()
    }
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Raw feature values of a task, taken from its worst file. Coverage falls
/// back to the worst file's recorded coverage and may remain absent.
pub fn task_feature_row(
    task: &TaskRecord,
    table: &FeatureTable,
    features: &[FeatureId],
) -> Result<Vec<Option<f64>>> {
    let (path, worst) = worst_file(task, table)?;
    features
        .iter()
        .map(|f| {
            Ok(match f {
                FeatureId::SubFactor(s) => Some(
                    worst
                        .sub_factors
                        .as_ref()
                        .ok_or_else(|| Error::Routing(format!(
                            "no sub-factors recorded for {path}; supply a feature store or drop sub-factor features"
                        )))?
                        .get(*s),
                ),
                FeatureId::Composite => Some(worst.health),
                FeatureId::PatchSize => Some((task.patch_size as f64).ln_1p()),
                FeatureId::Coverage => task.coverage.or(worst.coverage),
            })
        })
        .collect()
}

/// `(p_light, p_standard)` for a raw feature row. Missing values are imputed
/// with the training mean.
pub fn predict_probabilities(model: &TierModel, row: &[Option<f64>]) -> Result<(f64, f64)> {
    if row.len() != model.features.len() {
        return Err(Error::Routing(format!(
            "feature dimension mismatch: model expects {}, got {}",
            model.features.len(),
            row.len()
        )));
    }
    let z = model.standardize(row);
    Ok((model.light.probability(&z), model.standard.probability(&z)))
}

/// Cheapest confident tier: Light if `p_light >= tau`, else Standard if
/// `p_standard >= tau`, else Heavy.
pub fn route_on_probabilities(p_light: f64, p_standard: f64, tau: f64) -> Tier {
    if p_light >= tau {
        Tier::Light
    } else if p_standard >= tau {
        Tier::Standard
    } else {
        Tier::Heavy
    }
}

pub fn route_classifier(model: &TierModel, row: &[Option<f64>]) -> Result<Tier> {
    let (pl, ps) = predict_probabilities(model, row)?;
    Ok(route_on_probabilities(pl, ps, model.tau))
}

struct Example<'a> {
    task: &'a TaskRecord,
    row: Vec<Option<f64>>,
    light: bool,
    standard: bool,
}

fn standardization(rows: &[&Vec<Option<f64>>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let mut means = vec![0.0; d];
    let mut sds = vec![1.0; d];
    for j in 0..d {
        let vals: Vec<f64> = rows.iter().filter_map(|r| r[j]).collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n;
        means[j] = m;
        if var.sqrt() > 1e-12 {
            sds[j] = var.sqrt();
        }
    }
    (means, sds)
}

/// Full-batch gradient descent on mean log-loss. The L2 term is applied as a
/// proximal shrink so large penalties stay stable; the intercept is not penalized.
fn fit_logistic(x: &[Vec<f64>], y: &[bool], hp: &Hyperparams) -> LogisticModel {
    let d = x.first().map_or(hp.features.len(), Vec::len);
    let n = x.len() as f64;
    let mut model = LogisticModel {
        intercept: 0.0,
        coefficients: vec![0.0; d],
    };
    let mut grad = vec![0.0; d];
    for _ in 0..hp.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (xi, &yi) in x.iter().zip(y) {
            let r = model.probability(xi) - if yi { 1.0 } else { 0.0 };
            grad_b += r;
            for (g, v) in grad.iter_mut().zip(xi) {
                *g += r * v;
            }
        }
        let lr = hp.learning_rate;
        model.intercept -= lr * grad_b / n;
        for (w, g) in model.coefficients.iter_mut().zip(&grad) {
            *w = (*w - lr * g / n) / (1.0 + lr * hp.l2);
        }
    }
    model
}

/// Intercept-only model for a single-class training split.
fn constant_model(prior: f64, d: usize) -> LogisticModel {
    let p = prior.clamp(1e-6, 1.0 - 1e-6);
    LogisticModel {
        intercept: (p / (1.0 - p)).ln(),
        coefficients: vec![0.0; d],
    }
}

/// Mean log-loss plus `l2 / 2 * |w|^2`, the quantity gradient descent minimizes.
fn objective(model: &LogisticModel, x: &[Vec<f64>], y: &[bool], l2: f64) -> f64 {
    let loss: f64 = x
        .iter()
        .zip(y)
        .map(|(xi, &yi)| {
            let p = model.probability(xi).clamp(1e-12, 1.0 - 1e-12);
            if yi {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    loss / x.len() as f64 + 0.5 * l2 * model.coefficients.iter().map(|w| w * w).sum::<f64>()
}

struct TierFit {
    model: LogisticModel,
    prior: f64,
    objective: f64,
}

fn fit_tier(
    tier: Tier,
    x: &[Vec<f64>],
    train: &[&Example],
    validation: &[&Example],
    hp: &Hyperparams,
) -> Result<TierFit> {
    let label = |e: &Example| {
        if tier == Tier::Light {
            e.light
        } else {
            e.standard
        }
    };
    let y: Vec<bool> = train.iter().map(|e| label(e)).collect();
    let prior = y.iter().filter(|&&v| v).count() as f64 / y.len() as f64;
    if prior == 0.0 || prior == 1.0 {
        let only = prior == 1.0;
        if validation.iter().any(|e| label(e) != only) {
            return Err(Error::Training {
                tier: tier.to_string(),
                message: format!(
                    "degenerate split: every training task {} while validation tasks differ",
                    if only { "passes" } else { "fails" }
                ),
            });
        }
        let model = constant_model(prior, x.first().map_or(0, Vec::len));
        let objective = objective(&model, x, &y, hp.l2);
        return Ok(TierFit {
            model,
            prior,
            objective,
        });
    }
    let model = fit_logistic(x, &y, hp);
    let objective = objective(&model, x, &y, hp.l2);
    Ok(TierFit {
        model,
        prior,
        objective,
    })
}

fn mean_cost(
    model: &TierModel,
    tau: f64,
    tasks: &[(&Example, Vec<f64>)],
    costs: &CostParams,
) -> Result<f64> {
    let mut total = 0.0;
    for (e, z) in tasks {
        let tier = route_on_probabilities(
            model.light.probability(z),
            model.standard.probability(z),
            tau,
        );
        total += charge(costs, tier, e.task.verdict(tier)?.passed());
    }
    Ok(total / tasks.len() as f64)
}

/// Fit the Light and Standard pass models on a seeded training split and
/// choose tau on the held-out split to maximize realized savings. Savings
/// ties go to the larger tau.
pub fn train_classifier(
    corpus: &Corpus,
    table: &FeatureTable,
    hp: &Hyperparams,
    costs: &CostParams,
) -> Result<TierModel> {
    hp.validate()?;
    costs.validate()?;
    if corpus.is_empty() {
        return Err(Error::Training {
            tier: "all".into(),
            message: "empty corpus".into(),
        });
    }
    let examples: Vec<Example> = corpus
        .tasks()
        .iter()
        .map(|task| {
            oracle_label(task)?;
            Ok(Example {
                task,
                row: task_feature_row(task, table, &hp.features)?,
                light: task.verdict(Tier::Light)?.passed(),
                standard: task.verdict(Tier::Standard)?.passed(),
            })
        })
        .collect::<Result<_>>()?;

    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(Domain::ClassifierSplit, hp.seed, 0));
    let n_val = ((n as f64 * hp.validation_fraction).round() as usize).min(n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let mut val_idx = val_idx.to_vec();
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    let train: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();
    let validation: Vec<&Example> = val_idx.iter().map(|&i| &examples[i]).collect();

    let d = hp.features.len();
    let (means, sds) = standardization(&train.iter().map(|e| &e.row).collect::<Vec<_>>(), d);
    let mut model = TierModel {
        features: hp.features.clone(),
        means,
        sds,
        light: constant_model(0.5, d),
        standard: constant_model(0.5, d),
        tau: hp.tau_grid[0],
        training: TrainingMeta {
            n_train: train.len(),
            n_validation: validation.len(),
            light_prior: 0.0,
            standard_prior: 0.0,
            light_objective: 0.0,
            standard_objective: 0.0,
            validation_savings: 0.0,
            costs: *costs,
            hyperparams: hp.clone(),
        },
    };
    let x: Vec<Vec<f64>> = train.iter().map(|e| model.standardize(&e.row)).collect();
    let light = fit_tier(Tier::Light, &x, &train, &validation, hp)?;
    let standard = fit_tier(Tier::Standard, &x, &train, &validation, hp)?;
    model.light = light.model;
    model.standard = standard.model;
    model.training.light_prior = light.prior;
    model.training.standard_prior = standard.prior;
    model.training.light_objective = light.objective;
    model.training.standard_objective = standard.objective;

    let select_on = if validation.is_empty() {
        &train
    } else {
        &validation
    };
    let scored: Vec<(&Example, Vec<f64>)> = select_on
        .iter()
        .map(|e| (*e, model.standardize(&e.row)))
        .collect();
    let mut grid = hp.tau_grid.clone();
    grid.sort_by(f64::total_cmp);
    let mut best: Option<(f64, f64)> = None;
    for &tau in &grid {
        let savings = costs.heavy - mean_cost(&model, tau, &scored, costs)?;
        if best.is_none_or(|(_, s)| savings >= s - 1e-12) {
            best = Some((tau, savings));
        }
    }
    let (tau, savings) = best.expect("tau grid is non-empty");
    model.tau = tau;
    model.training.validation_savings = savings;
    Ok(model)
}

/// Out-of-fold classifier decisions: each task is routed by a model trained
/// on the other folds. Folds are assigned by a seeded shuffle.
pub fn cross_fit_decisions(
    corpus: &Corpus,
    table: &FeatureTable,
    hp: &Hyperparams,
    costs: &CostParams,
    folds: usize,
) -> Result<Vec<RoutingDecision>> {
    let n = corpus.len();
    if folds < 2 || n < 2 {
        return Err(Error::Config(format!(
            "cross-fitting needs at least 2 folds and 2 tasks (folds {folds}, tasks {n})"
        )));
    }
    let folds = folds.min(n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(Domain::CrossFit, hp.seed, 0));
    let mut fold_of = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    let tasks = corpus.tasks();
    let mut decisions: Vec<Option<RoutingDecision>> = vec![None; n];
    for k in 0..folds {
        let train = Corpus::new(
            (0..n)
                .filter(|&i| fold_of[i] != k)
                .map(|i| tasks[i].clone())
                .collect(),
        )?;
        let model = train_classifier(&train, table, hp, costs)?;
        for i in (0..n).filter(|&i| fold_of[i] == k) {
            let task = &tasks[i];
            let health = super::task_health(task, table).ok();
            let (tier, rationale) = match task_feature_row(task, table, &model.features) {
                Ok(row) => {
                    let (pl, ps) = predict_probabilities(&model, &row)?;
                    (
                        route_on_probabilities(pl, ps, model.tau),
                        format!(
                            "fold {k}: p_light {pl:.3}, p_standard {ps:.3}, tau {}",
                            model.tau
                        ),
                    )
                }
                Err(e) => (
                    Tier::Heavy,
                    format!("missing features, erring to heavy: {e}"),
                ),
            };
            decisions[i] = Some(RoutingDecision {
                task_id: task.task_id.clone(),
                tier,
                policy: PolicyKind::Classifier,
                health_used: health,
                rationale,
            });
        }
    }
    Ok(decisions
        .into_iter()
        .map(|d| d.expect("every task has a fold"))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::{RunSet, TaskFile, Verdict};
    use crate::router::FileFeatures;

    fn costs() -> CostParams {
        CostParams::new(1.0, 3.0, 15.0).unwrap()
    }

    fn toy(n: usize, pass_light: impl Fn(usize, f64) -> bool) -> (Corpus, FeatureTable) {
        let mut table = FeatureTable::default();
        let mut tasks = Vec::new();
        for i in 0..n {
            let health = if i % 2 == 0 { 10.0 } else { 1.0 };
            let path = format!("f{i}.rs");
            table.insert(
                path.clone(),
                FileFeatures {
                    health,
                    sub_factors: None,
                    coverage: None,
                },
            );
            let v = |p| vec![Verdict::from_bool(p); 3];
            tasks.push(TaskRecord {
                task_id: format!("t{i:03}"),
                files: vec![TaskFile { path, health: None }],
                patch_size: 5 + i as u64 % 7,
                coverage: Some((i % 10) as f64 / 10.0),
                runs: Some(RunSet {
                    light: v(pass_light(i, health)),
                    standard: v(true),
                    heavy: v(true),
                }),
            });
        }
        (Corpus::new(tasks).unwrap(), table)
    }

    fn small_features() -> Hyperparams {
        Hyperparams::default().with_features(vec![
            FeatureId::Composite,
            FeatureId::PatchSize,
            FeatureId::Coverage,
        ])
    }

    #[test]
    fn confident_routing_examples() {
        assert_eq!(route_on_probabilities(0.9, 0.0, 0.7), Tier::Light);
        assert_eq!(route_on_probabilities(0.2, 0.2, 0.7), Tier::Heavy);
        assert_eq!(route_on_probabilities(0.7, 0.0, 0.7), Tier::Light);
        assert_eq!(route_on_probabilities(0.69, 0.7, 0.7), Tier::Standard);
    }

    #[test]
    fn separable_toy_corpus() {
        let (corpus, table) = toy(80, |_, h| h >= 10.0);
        let model = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        let (held_out, held_table) = toy(100, |_, h| h >= 10.0);
        for t in &held_out.tasks()[80..] {
            let row = task_feature_row(t, &held_table, &model.features).unwrap();
            let tier = route_classifier(&model, &row).unwrap();
            let h = row[0].unwrap();
            assert_eq!(tier == Tier::Light, h >= 10.0, "health {h} routed {tier}");
        }
    }

    #[test]
    fn all_pass_corpus_routes_light() {
        let (corpus, table) = toy(40, |_, _| true);
        let model = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        for t in corpus.tasks() {
            let row = task_feature_row(t, &table, &model.features).unwrap();
            assert_eq!(route_classifier(&model, &row).unwrap(), Tier::Light);
        }
    }

    #[test]
    fn heavy_penalty_collapses_to_prior() {
        let (corpus, table) = toy(60, |i, h| h >= 10.0 || i % 3 == 0);
        let hp = Hyperparams {
            l2: 1e9,
            ..small_features()
        };
        let model = train_classifier(&corpus, &table, &hp, &costs()).unwrap();
        assert!(model.light.coefficients.iter().all(|w| w.abs() < 1e-9));
        let prior = model.training.light_prior;
        let (pl, _) = predict_probabilities(&model, &[Some(10.0), Some(1.0), None]).unwrap();
        assert!((pl - prior).abs() < 1e-3, "p {pl} prior {prior}");
    }

    #[test]
    fn training_is_deterministic() {
        let (corpus, table) = toy(50, |i, h| h >= 10.0 && i % 5 != 0);
        let a = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        let b = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        assert_eq!(a, b);
        assert_eq!(TierModel::from_json(&a.to_json().unwrap()).unwrap(), a);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let (corpus, table) = toy(30, |_, h| h >= 10.0);
        let model = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        assert!(route_classifier(&model, &[Some(1.0)]).is_err());
    }

    #[test]
    fn degenerate_split_names_the_tier() {
        // only one light failure; with this seed it lands in validation
        let (corpus, table) = toy(8, |i, _| i != 0);
        let hits: Vec<_> = (0..50u64)
            .filter_map(|seed| {
                let hp = Hyperparams {
                    seed,
                    validation_fraction: 0.5,
                    ..small_features()
                };
                train_classifier(&corpus, &table, &hp, &costs()).err()
            })
            .collect();
        assert!(!hits.is_empty());
        for e in hits {
            match e {
                Error::Training { tier, .. } => assert_eq!(tier, "light"),
                other => panic!("unexpected {other}"),
            }
        }
    }

    #[test]
    fn missing_coverage_is_imputed() {
        let (corpus, table) = toy(40, |_, h| h >= 10.0);
        let model = train_classifier(&corpus, &table, &small_features(), &costs()).unwrap();
        let with_mean = [Some(10.0), Some(3.0), Some(model.means[2])];
        let missing = [Some(10.0), Some(3.0), None];
        assert_eq!(
            predict_probabilities(&model, &with_mean).unwrap(),
            predict_probabilities(&model, &missing).unwrap()
        );
    }

    #[test]
    fn feature_names_round_trip() {
        for f in FeatureId::all() {
            assert_eq!(f.name().parse::<FeatureId>().unwrap(), f);
        }
        assert_eq!(FeatureId::all().len(), 11);
        assert!(Hyperparams::default()
            .with_features(vec![FeatureId::Composite; 2])
            .validate()
            .is_err());
    }

    #[test]
    fn cross_fit_covers_every_task() {
        let (corpus, table) = toy(40, |_, h| h >= 10.0);
        let d = cross_fit_decisions(&corpus, &table, &small_features(), &costs(), 5).unwrap();
        assert_eq!(d.len(), 40);
        for (dec, t) in d.iter().zip(corpus.tasks()) {
            assert_eq!(dec.task_id, t.task_id);
        }
    }
}
