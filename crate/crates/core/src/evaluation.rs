//! Policy comparison, coverage strata, the matched health effect, pilot
//! go/no-go gates, and the composite-versus-sub-factor study.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::costmodel::{charge, cost_gate, expected_cost, CostParams, RoutingMix};
use crate::error::{Error, Result};
use crate::outcomes::{Corpus, TaskRecord};
use crate::rng::{self, Domain};
use crate::router::{
    cross_fit_decisions, oracle_label, predict_probabilities, route_on_probabilities,
    task_feature_row, task_health, train_classifier, worst_file, FeatureId, FeatureTable,
    Hyperparams, Policy, PolicyKind, Router, RoutingDecision, Thresholds, Tier, TierModel,
};
use crate::stats::{
    brunner_munzel, iqr_caliper, matched_pairs, mcc, prob_superiority, shapley_importance,
    Alternative, ConfusionMatrix, EffectResult, Importance, MatchUnit,
};
use crate::SCHEMA_VERSION;

pub const DEFAULT_PILOT_SIZE: usize = 50;
pub const DEFAULT_PILOT_MINIMUM: usize = 20;
pub const DEFAULT_P_HAT_THRESHOLD: f64 = 0.56;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub thresholds: Thresholds,
    pub hyperparams: Hyperparams,
    /// Folds for out-of-fold classifier decisions when no model is supplied.
    pub cv_folds: usize,
    /// Coverage bin edges; the last bin is closed.
    pub coverage_edges: Vec<f64>,
    /// Matching caliper as a fraction of the patch-size interquartile range.
    pub caliper_fraction: f64,
    pub alternative: Alternative,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            thresholds: Thresholds::default(),
            hyperparams: Hyperparams::default(),
            cv_folds: 5,
            coverage_edges: vec![0.0, 0.3, 0.7, 1.0],
            caliper_fraction: 0.2,
            alternative: Alternative::TwoSided,
            seed: 42,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        self.hyperparams.validate()?;
        let e = &self.coverage_edges;
        if e.len() < 2
            || e.windows(2)
                .any(|w| w[0].partial_cmp(&w[1]) != Some(std::cmp::Ordering::Less))
            || e[0] < 0.0
            || e[e.len() - 1] > 1.0
        {
            return Err(Error::Config(format!(
                "coverage edges must be strictly increasing within [0, 1]: {e:?}"
            )));
        }
        if self.caliper_fraction.is_nan() || self.caliper_fraction < 0.0 {
            return Err(Error::Config(
                "caliper_fraction must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of one task under one routing decision.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TaskOutcome {
    oracle: Tier,
    routed: Tier,
    routed_passed: bool,
    success: bool,
    cost: f64,
}

fn task_outcome(task: &TaskRecord, routed: Tier, costs: &CostParams) -> Result<TaskOutcome> {
    let oracle = oracle_label(task)?.tier;
    let routed_passed = task.verdict(routed)?.passed();
    let heavy_passed = task.verdict(Tier::Heavy)?.passed();
    Ok(TaskOutcome {
        oracle,
        routed,
        routed_passed,
        success: routed_passed || heavy_passed,
        cost: charge(costs, routed, routed_passed),
    })
}

/// Realized per-task cost of `decisions` (aligned with the corpus order).
pub fn realized_costs(
    corpus: &Corpus,
    decisions: &[RoutingDecision],
    costs: &CostParams,
) -> Result<Vec<f64>> {
    aligned(corpus, decisions)?;
    corpus
        .tasks()
        .iter()
        .zip(decisions)
        .map(|(t, d)| Ok(charge(costs, d.tier, t.verdict(d.tier)?.passed())))
        .collect()
}

fn aligned(corpus: &Corpus, decisions: &[RoutingDecision]) -> Result<()> {
    if decisions.len() != corpus.len()
        || corpus
            .tasks()
            .iter()
            .zip(decisions)
            .any(|(t, d)| t.task_id != d.task_id)
    {
        return Err(Error::Evaluation(
            "decisions do not line up with the corpus".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMetrics {
    pub n_tasks: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub total_cost: f64,
    pub mean_cost: f64,
    pub cost_per_successful_task: Option<f64>,
    pub triage_accuracy: f64,
    pub over_triage_rate: f64,
    pub under_triage_rate: f64,
    pub mcc: f64,
    pub confusion: ConfusionMatrix,
    pub mix: RoutingMix,
    /// Closed-form expected cost at the realized mix.
    pub expected_cost: f64,
    pub savings_vs_heavy: f64,
}

fn metrics(outcomes: &[TaskOutcome], costs: &CostParams) -> Result<Option<PolicyMetrics>> {
    if outcomes.is_empty() {
        return Ok(None);
    }
    let n = outcomes.len();
    let nf = n as f64;
    let cm = ConfusionMatrix::from_pairs(outcomes.iter().map(|o| (o.oracle, o.routed)));
    let successes = outcomes.iter().filter(|o| o.success).count();
    let total_cost: f64 = outcomes.iter().map(|o| o.cost).sum();
    let routed = |t: Tier| outcomes.iter().filter(|o| o.routed == t).count();
    let failed = |t: Tier| {
        outcomes
            .iter()
            .filter(|o| o.routed == t && !o.routed_passed)
            .count()
    };
    let rate = |t: Tier| {
        let r = routed(t);
        if r == 0 {
            0.0
        } else {
            failed(t) as f64 / r as f64
        }
    };
    let mix = RoutingMix {
        r_light: routed(Tier::Light) as f64 / nf,
        r_standard: routed(Tier::Standard) as f64 / nf,
        f_light: rate(Tier::Light),
        f_standard: rate(Tier::Standard),
    };
    let expected = expected_cost(costs, &mix)?;
    Ok(Some(PolicyMetrics {
        n_tasks: n,
        successes,
        success_rate: successes as f64 / nf,
        total_cost,
        mean_cost: total_cost / nf,
        cost_per_successful_task: (successes > 0).then(|| total_cost / successes as f64),
        triage_accuracy: cm.correct() as f64 / nf,
        over_triage_rate: cm.over() as f64 / nf,
        under_triage_rate: cm.under() as f64 / nf,
        mcc: mcc(&cm)?,
        confusion: cm,
        mix,
        expected_cost: expected,
        savings_vs_heavy: costs.heavy - expected,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: String,
    /// Absent for the unknown-coverage stratum.
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub metrics: Option<PolicyMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub policy: PolicyKind,
    pub metrics: PolicyMetrics,
    pub strata: Vec<Stratum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    /// Compared outcome: the oracle tier ordinal (0 light .. 2 heavy).
    pub outcome: String,
    /// Tasks at or above this worst-file health form the high group.
    pub split_health: f64,
    pub caliper: f64,
    pub n_pairs: usize,
    pub unmatched_high: usize,
    pub unmatched_low: usize,
    /// x = low-health members, y = high-health members; p_hat > 0.5 means
    /// low-health tasks need more expensive tiers.
    pub result: Option<EffectResult>,
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub schema_version: u32,
    pub n_tasks: usize,
    pub costs: CostParams,
    pub seed: u64,
    /// Tasks where every tier failed; their oracle label is Heavy.
    pub all_failed_tasks: Vec<String>,
    pub policies: Vec<PolicyReport>,
    pub effect: EffectReport,
    pub gates: GateReport,
}

impl EvaluationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Aligned plain-text summary, one row per policy.
    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<13} {:>8} {:>10} {:>10} {:>9} {:>7} {:>7} {:>7}",
            "policy", "success", "cost/task", "cost/succ", "accuracy", "over", "under", "mcc"
        );
        for p in &self.policies {
            let m = &p.metrics;
            let per_success = m
                .cost_per_successful_task
                .map_or("-".to_string(), |v| format!("{v:.3}"));
            let _ = writeln!(
                s,
                "{:<13} {:>8.3} {:>10.3} {:>10} {:>9.3} {:>7.3} {:>7.3} {:>7.3}",
                p.policy.name(),
                m.success_rate,
                m.mean_cost,
                per_success,
                m.triage_accuracy,
                m.over_triage_rate,
                m.under_triage_rate,
                m.mcc
            );
        }
        let _ = writeln!(
            s,
            "gates: cost {} signal {} -> {}",
            pass_fail(self.gates.cost.passed),
            pass_fail(self.gates.signal.passed),
            if self.gates.go { "GO" } else { "NO-GO" }
        );
        s
    }
}

fn pass_fail(b: bool) -> &'static str {
    if b {
        "pass"
    } else {
        "fail"
    }
}

/// Routing decisions for one policy. A classifier without a fitted model is
/// evaluated out of fold.
pub fn policy_decisions(
    kind: PolicyKind,
    corpus: &Corpus,
    table: &FeatureTable,
    costs: &CostParams,
    cfg: &EvalConfig,
    model: Option<&TierModel>,
) -> Result<Vec<RoutingDecision>> {
    let policy = match kind {
        PolicyKind::Heuristic => Policy::Heuristic(cfg.thresholds),
        PolicyKind::Classifier => match model {
            Some(m) => Policy::Classifier(Box::new(m.clone())),
            None => {
                return cross_fit_decisions(corpus, table, &cfg.hyperparams, costs, cfg.cv_folds)
            }
        },
        PolicyKind::Oracle => Policy::Oracle,
        PolicyKind::AlwaysLight => Policy::AlwaysLight,
        PolicyKind::AlwaysHeavy => Policy::AlwaysHeavy,
        PolicyKind::Random => Policy::Random { seed: cfg.seed },
    };
    Router::new(&policy, table).route_corpus(corpus)
}

fn task_coverage(task: &TaskRecord, table: &FeatureTable) -> Option<f64> {
    task.coverage
        .or_else(|| worst_file(task, table).ok().and_then(|(_, f)| f.coverage))
}

fn stratum_index(coverage: Option<f64>, edges: &[f64]) -> usize {
    let bins = edges.len() - 1;
    match coverage {
        None => bins,
        Some(c) => (0..bins)
            .find(|&i| c >= edges[i] && (c < edges[i + 1] || (i + 1 == bins && c <= edges[i + 1])))
            .unwrap_or(bins),
    }
}

fn stratum_labels(edges: &[f64]) -> Vec<(String, Option<f64>, Option<f64>)> {
    let bins = edges.len() - 1;
    let mut out: Vec<_> = (0..bins)
        .map(|i| {
            let close = if i + 1 == bins { ']' } else { ')' };
            (
                format!("[{:.2}, {:.2}{close}", edges[i], edges[i + 1]),
                Some(edges[i]),
                Some(edges[i + 1]),
            )
        })
        .collect();
    out.push(("unknown".to_string(), None, None));
    out
}

/// Evaluate each policy against the oracle with heavy fallback.
pub fn evaluate(
    corpus: &Corpus,
    table: &FeatureTable,
    policies: &[PolicyKind],
    costs: &CostParams,
    cfg: &EvalConfig,
    model: Option<&TierModel>,
) -> Result<EvaluationReport> {
    cfg.validate()?;
    costs.validate()?;
    if corpus.is_empty() {
        return Err(Error::Evaluation("corpus is empty".into()));
    }
    if !corpus.has_complete_outcomes() {
        return Err(Error::Evaluation(
            "every task needs outcomes for all three tiers".into(),
        ));
    }
    let all_failed_tasks = corpus
        .tasks()
        .iter()
        .map(|t| Ok((t, oracle_label(t)?)))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|(_, l)| l.all_failed)
        .map(|(t, _)| t.task_id.clone())
        .collect();
    let strata_of: Vec<usize> = corpus
        .tasks()
        .iter()
        .map(|t| stratum_index(task_coverage(t, table), &cfg.coverage_edges))
        .collect();
    let labels = stratum_labels(&cfg.coverage_edges);

    let mut reports = Vec::with_capacity(policies.len());
    for &kind in policies {
        let decisions = policy_decisions(kind, corpus, table, costs, cfg, model)?;
        aligned(corpus, &decisions)?;
        let outcomes: Vec<TaskOutcome> = corpus
            .tasks()
            .iter()
            .zip(&decisions)
            .map(|(t, d)| task_outcome(t, d.tier, costs))
            .collect::<Result<_>>()?;
        let strata = labels
            .iter()
            .enumerate()
            .map(|(s, (label, lower, upper))| {
                let subset: Vec<TaskOutcome> = outcomes
                    .iter()
                    .zip(&strata_of)
                    .filter(|(_, &k)| k == s)
                    .map(|(o, _)| *o)
                    .collect();
                Ok(Stratum {
                    label: label.clone(),
                    lower: *lower,
                    upper: *upper,
                    metrics: metrics(&subset, costs)?,
                })
            })
            .collect::<Result<_>>()?;
        reports.push(PolicyReport {
            policy: kind,
            metrics: metrics(&outcomes, costs)?.expect("corpus is non-empty"),
            strata,
        });
    }

    Ok(EvaluationReport {
        schema_version: SCHEMA_VERSION,
        n_tasks: corpus.len(),
        costs: *costs,
        seed: cfg.seed,
        all_failed_tasks,
        policies: reports,
        effect: matched_effect(corpus, table, cfg)?,
        gates: compute_gates(
            corpus,
            table,
            costs,
            &PilotConfig::with_thresholds(cfg.thresholds),
        )?,
    })
}

/// Oracle-tier effect of health on patch-size-matched high/low pairs.
pub fn matched_effect(
    corpus: &Corpus,
    table: &FeatureTable,
    cfg: &EvalConfig,
) -> Result<EffectReport> {
    let split = cfg.thresholds.standard;
    let mut high = Vec::new();
    let mut low = Vec::new();
    let mut oracle = std::collections::BTreeMap::new();
    for t in corpus.tasks() {
        let Ok(h) = task_health(t, table) else {
            continue;
        };
        let unit = MatchUnit {
            id: t.task_id.clone(),
            proxy: t.patch_size as f64,
        };
        oracle.insert(t.task_id.clone(), oracle_label(t)?.tier.ordinal() as f64);
        if h >= split {
            high.push(unit);
        } else {
            low.push(unit);
        }
    }
    let proxies: Vec<f64> = high.iter().chain(&low).map(|u| u.proxy).collect();
    let caliper = iqr_caliper(&proxies, cfg.caliper_fraction);
    let mut report = EffectReport {
        outcome: "oracle tier ordinal".into(),
        split_health: split,
        caliper,
        n_pairs: 0,
        unmatched_high: high.len(),
        unmatched_low: low.len(),
        result: None,
        note: None,
    };
    if high.is_empty() || low.is_empty() {
        report.note = Some("one health group is empty".into());
        return Ok(report);
    }
    let m = matched_pairs(&high, &low, caliper)?;
    report.n_pairs = m.pairs.len();
    report.unmatched_high = m.unmatched_a.len();
    report.unmatched_low = m.unmatched_b.len();
    if m.pairs.len() < 2 {
        report.note = Some("fewer than two matched pairs".into());
        return Ok(report);
    }
    let xs: Vec<f64> = m.pairs.iter().map(|(_, l)| oracle[l]).collect();
    let ys: Vec<f64> = m.pairs.iter().map(|(h, _)| oracle[h]).collect();
    report.result = Some(brunner_munzel(&xs, &ys, cfg.alternative)?);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilotConfig {
    /// Nominal pilot size.
    pub size: usize,
    /// Smaller corpora are refused.
    pub minimum: usize,
    pub p_hat_threshold: f64,
    /// Replaces `c_L / c_H` in the cost gate when set.
    pub cost_ratio_override: Option<f64>,
    pub thresholds: Thresholds,
}

impl Default for PilotConfig {
    fn default() -> Self {
        Self {
            size: DEFAULT_PILOT_SIZE,
            minimum: DEFAULT_PILOT_MINIMUM,
            p_hat_threshold: DEFAULT_P_HAT_THRESHOLD,
            cost_ratio_override: None,
            thresholds: Thresholds::default(),
        }
    }
}

impl PilotConfig {
    pub fn with_thresholds(thresholds: Thresholds) -> Self {
        Self {
            thresholds,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.thresholds.validate()?;
        if self.minimum == 0 || self.size < self.minimum {
            return Err(Error::Config(format!(
                "pilot size {} must be at least the minimum {} (> 0)",
                self.size, self.minimum
            )));
        }
        if !(0.0..=1.0).contains(&self.p_hat_threshold) {
            return Err(Error::Config("p_hat_threshold must lie in [0, 1]".into()));
        }
        if let Some(r) = self.cost_ratio_override {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::Config(format!(
                    "cost ratio override {r} outside (0, 1)"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostGateReport {
    /// Tasks the heuristic routes Light.
    pub n_routed_light: usize,
    /// Light-tier majority pass rate on those tasks.
    pub pass_rate: Option<f64>,
    pub cost_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalGateReport {
    pub n_light_pass: usize,
    pub n_light_fail: usize,
    /// P(health of a light-pass task > health of a light-fail task).
    pub p_hat: Option<f64>,
    pub threshold: f64,
    pub passed: bool,
    /// Supplementary Brunner–Munzel test on the same grouping.
    pub brunner_munzel: Option<EffectResult>,
    /// P(light pass of a high-health task > that of a low-health task).
    pub band_grouped_p_hat: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub cost: CostGateReport,
    pub signal: SignalGateReport,
    pub go: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PilotReport {
    pub schema_version: u32,
    pub n_tasks: usize,
    pub configured_size: usize,
    pub size_matches: bool,
    pub gates: GateReport,
}

pub fn signal_gate_passes(p_hat: f64, threshold: f64) -> bool {
    p_hat >= threshold
}

/// GO requires both gates.
pub fn combine_gates(cost: &CostGateReport, signal: &SignalGateReport) -> bool {
    cost.passed && signal.passed
}

fn compute_gates(
    corpus: &Corpus,
    table: &FeatureTable,
    costs: &CostParams,
    cfg: &PilotConfig,
) -> Result<GateReport> {
    cfg.validate()?;
    let cost_ratio = cfg.cost_ratio_override.unwrap_or(costs.light_heavy_ratio());
    let mut routed_light = Vec::new();
    let mut pass_health = Vec::new();
    let mut fail_health = Vec::new();
    let mut high_light = Vec::new();
    let mut low_light = Vec::new();
    for t in corpus.tasks() {
        let runs = t
            .runs
            .as_ref()
            .filter(|r| r.has(Tier::Light) && r.has(Tier::Heavy))
            .ok_or_else(|| {
                Error::Evaluation(format!("task {} lacks light or heavy outcomes", t.task_id))
            })?;
        let light = runs.verdict(Tier::Light)?.passed();
        let h = task_health(t, table)?;
        if h >= cfg.thresholds.light {
            routed_light.push(light);
        }
        if light {
            pass_health.push(h);
        } else {
            fail_health.push(h);
        }
        let as_num = if light { 1.0 } else { 0.0 };
        if h >= cfg.thresholds.standard {
            high_light.push(as_num);
        } else {
            low_light.push(as_num);
        }
    }

    let pass_rate = (!routed_light.is_empty())
        .then(|| routed_light.iter().filter(|&&p| p).count() as f64 / routed_light.len() as f64);
    let cost_passed = match (pass_rate, cfg.cost_ratio_override) {
        (None, _) => false,
        (Some(r), None) => cost_gate(r, costs.light, costs.heavy)?.passed,
        (Some(r), Some(ratio)) => r > ratio,
    };
    let cost = CostGateReport {
        n_routed_light: routed_light.len(),
        pass_rate,
        cost_ratio,
        passed: cost_passed,
    };

    let both = !pass_health.is_empty() && !fail_health.is_empty();
    let p_hat = if both {
        Some(prob_superiority(&pass_health, &fail_health)?)
    } else {
        None
    };
    let bm = if pass_health.len() >= 2 && fail_health.len() >= 2 {
        Some(brunner_munzel(
            &pass_health,
            &fail_health,
            Alternative::TwoSided,
        )?)
    } else {
        None
    };
    let band = if !high_light.is_empty() && !low_light.is_empty() {
        Some(prob_superiority(&high_light, &low_light)?)
    } else {
        None
    };
    let signal = SignalGateReport {
        n_light_pass: pass_health.len(),
        n_light_fail: fail_health.len(),
        p_hat,
        threshold: cfg.p_hat_threshold,
        passed: p_hat.is_some_and(|p| signal_gate_passes(p, cfg.p_hat_threshold)),
        brunner_munzel: bm,
        band_grouped_p_hat: band,
    };
    let go = combine_gates(&cost, &signal);
    Ok(GateReport { cost, signal, go })
}

/// Go/no-go pilot: the light tier must beat the cost ratio on tasks the
/// heuristic routes Light, and worst-file health must separate light passes
/// from light failures by at least the `p_hat` threshold.
pub fn pilot_gates(
    corpus: &Corpus,
    table: &FeatureTable,
    costs: &CostParams,
    cfg: &PilotConfig,
) -> Result<PilotReport> {
    cfg.validate()?;
    costs.validate()?;
    if corpus.len() < cfg.minimum {
        return Err(Error::Evaluation(format!(
            "pilot corpus has {} tasks; at least {} are required",
            corpus.len(),
            cfg.minimum
        )));
    }
    Ok(PilotReport {
        schema_version: SCHEMA_VERSION,
        n_tasks: corpus.len(),
        configured_size: cfg.size,
        size_matches: corpus.len() == cfg.size,
        gates: compute_gates(corpus, table, costs, cfg)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rq1Config {
    pub k_list: Vec<usize>,
    pub hyperparams: Hyperparams,
    /// Share of tasks held out for the final comparison.
    pub holdout_fraction: f64,
    /// Share of the training split used to score feature subsets.
    pub ranking_fraction: f64,
    pub seed: u64,
}

impl Default for Rq1Config {
    fn default() -> Self {
        Self {
            k_list: vec![1, 3, 5],
            hyperparams: Hyperparams::default(),
            holdout_fraction: 0.3,
            ranking_fraction: 1.0 / 3.0,
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Variant {
    pub name: String,
    pub features: Vec<FeatureId>,
    pub holdout_mcc: f64,
    /// Mean savings per task versus always-heavy on the held-out split.
    pub holdout_savings: f64,
    pub train_mcc: f64,
    /// Mean penalized log-loss of the two tier models on their fitting data.
    pub train_objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rq1Report {
    pub schema_version: u32,
    pub n_train: usize,
    pub n_holdout: usize,
    pub importance: Vec<Importance<FeatureId>>,
    pub variants: Vec<Rq1Variant>,
}

fn split_corpus(
    corpus: &Corpus,
    fraction: f64,
    seed: u64,
    domain: Domain,
) -> Result<(Corpus, Corpus)> {
    let n = corpus.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(domain, seed, 0));
    let n_out = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
    let mut held = vec![false; n];
    for &i in &order[..n_out] {
        held[i] = true;
    }
    let pick = |want: bool| {
        Corpus::new(
            corpus
                .tasks()
                .iter()
                .zip(&held)
                .filter(|(_, &h)| h == want)
                .map(|(t, _)| t.clone())
                .collect(),
        )
    };
    Ok((pick(false)?, pick(true)?))
}

struct Fit {
    mcc: f64,
    savings: f64,
}

fn assess(
    model: &TierModel,
    corpus: &Corpus,
    table: &FeatureTable,
    costs: &CostParams,
) -> Result<Fit> {
    let mut cm = ConfusionMatrix::default();
    let mut cost = 0.0;
    for t in corpus.tasks() {
        let row = task_feature_row(t, table, &model.features)?;
        let (pl, ps) = predict_probabilities(model, &row)?;
        let tier = route_on_probabilities(pl, ps, model.tau);
        cm.add(oracle_label(t)?.tier, tier);
        cost += charge(costs, tier, t.verdict(tier)?.passed());
    }
    Ok(Fit {
        mcc: mcc(&cm)?,
        savings: costs.heavy - cost / corpus.len() as f64,
    })
}

/// Rank sub-factors by exact Shapley importance on the training split, then
/// compare top-k sub-factor classifiers against the composite-only
/// classifier on a disjoint held-out split. No new outcomes are used.
pub fn rq1_compare(
    corpus: &Corpus,
    table: &FeatureTable,
    costs: &CostParams,
    cfg: &Rq1Config,
) -> Result<Rq1Report> {
    cfg.hyperparams.validate()?;
    costs.validate()?;
    let n_sub = FeatureId::sub_factors().len();
    if let Some(&k) = cfg.k_list.iter().find(|&&k| k == 0 || k > n_sub) {
        return Err(Error::Evaluation(format!(
            "k = {k} outside 1..={n_sub} available sub-factors"
        )));
    }
    if cfg.k_list.is_empty() {
        return Ok(Rq1Report {
            schema_version: SCHEMA_VERSION,
            n_train: 0,
            n_holdout: 0,
            importance: Vec::new(),
            variants: Vec::new(),
        });
    }
    if corpus.len() < 4 {
        return Err(Error::Evaluation("corpus too small to split".into()));
    }
    let (train, holdout) =
        split_corpus(corpus, cfg.holdout_fraction, cfg.seed, Domain::HoldoutSplit)?;
    let (fit_part, rank_part) =
        split_corpus(&train, cfg.ranking_fraction, cfg.seed, Domain::RankingSplit)?;

    let subset_mcc = |subset: &[FeatureId]| -> Result<f64> {
        let hp = cfg.hyperparams.clone().with_features(subset.to_vec());
        let model = train_classifier(&fit_part, table, &hp, costs)?;
        Ok(assess(&model, &rank_part, table, costs)?.mcc)
    };
    let importance = shapley_importance(&FeatureId::sub_factors(), subset_mcc)?;

    let mut variants = Vec::new();
    let mut run = |name: String, features: Vec<FeatureId>| -> Result<()> {
        let hp = cfg.hyperparams.clone().with_features(features.clone());
        let model = train_classifier(&train, table, &hp, costs)?;
        let held = assess(&model, &holdout, table, costs)?;
        let fit = assess(&model, &train, table, costs)?;
        variants.push(Rq1Variant {
            name,
            features,
            holdout_mcc: held.mcc,
            holdout_savings: held.savings,
            train_mcc: fit.mcc,
            train_objective: 0.5
                * (model.training.light_objective + model.training.standard_objective),
        });
        Ok(())
    };
    for &k in &cfg.k_list {
        let top: Vec<FeatureId> = importance.iter().take(k).map(|i| i.feature).collect();
        run(format!("top-{k}"), top)?;
    }
    run("composite".into(), vec![FeatureId::Composite])?;

    Ok(Rq1Report {
        schema_version: SCHEMA_VERSION,
        n_train: train.len(),
        n_holdout: holdout.len(),
        importance,
        variants,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::{generate_corpus, GeneratorConfig, RunSet, TaskFile, Verdict};
    use proptest::prelude::*;

    fn costs() -> CostParams {
        CostParams::default()
    }

    fn synthetic(n: usize, seed: u64) -> (Corpus, FeatureTable) {
        let cfg = GeneratorConfig {
            n_tasks: n,
            ..Default::default()
        };
        let s = generate_corpus(&cfg, seed).unwrap();
        let table = FeatureTable::for_corpus(&s.corpus, Some(&s.store));
        (s.corpus, table)
    }

    fn task(i: usize, health: f64, light: bool, coverage: Option<f64>) -> TaskRecord {
        let v = |p| vec![Verdict::from_bool(p); 3];
        TaskRecord {
            task_id: format!("t{i:03}"),
            files: vec![TaskFile {
                path: format!("f{i}"),
                health: Some(health),
            }],
            patch_size: 10 + i as u64,
            coverage,
            runs: Some(RunSet {
                light: v(light),
                standard: v(true),
                heavy: v(true),
            }),
        }
    }

    fn all_policies() -> Vec<PolicyKind> {
        PolicyKind::ALL.to_vec()
    }

    #[test]
    fn oracle_is_perfect_and_rates_partition() {
        let (corpus, table) = synthetic(120, 5);
        let r = evaluate(
            &corpus,
            &table,
            &all_policies(),
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        for p in &r.policies {
            let m = &p.metrics;
            let c = &m.confusion;
            assert_eq!(c.correct() + c.over() + c.under(), c.total());
            assert!(
                (m.triage_accuracy + m.over_triage_rate + m.under_triage_rate - 1.0).abs() < 1e-12
            );
            if p.policy == PolicyKind::Oracle {
                assert_eq!(m.triage_accuracy, 1.0);
                assert_eq!(m.over_triage_rate, 0.0);
                assert_eq!(m.under_triage_rate, 0.0);
            }
        }
    }

    #[test]
    fn always_heavy_over_triage_counts_cheaper_oracle_labels() {
        let (corpus, table) = synthetic(100, 8);
        let r = evaluate(
            &corpus,
            &table,
            &[PolicyKind::AlwaysHeavy],
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        let cheaper = corpus
            .tasks()
            .iter()
            .filter(|t| oracle_label(t).unwrap().tier < Tier::Heavy)
            .count();
        let m = &r.policies[0].metrics;
        assert_eq!(m.under_triage_rate, 0.0);
        assert_eq!(m.over_triage_rate, cheaper as f64 / 100.0);
    }

    #[test]
    fn always_light_with_failing_light_pays_both() {
        let tasks: Vec<_> = (0..10).map(|i| task(i, 5.0, false, None)).collect();
        let corpus = Corpus::new(tasks).unwrap();
        let table = FeatureTable::for_corpus(&corpus, None);
        let r = evaluate(
            &corpus,
            &table,
            &[PolicyKind::AlwaysLight],
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        let m = &r.policies[0].metrics;
        assert_eq!(m.mean_cost, 16.0);
        assert_eq!(m.success_rate, 1.0);
    }

    #[test]
    fn strata_add_up() {
        let (corpus, table) = synthetic(150, 2);
        let r = evaluate(
            &corpus,
            &table,
            &all_policies(),
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        for p in &r.policies {
            assert_eq!(p.strata.len(), 4);
            let n: usize = p
                .strata
                .iter()
                .filter_map(|s| s.metrics.as_ref())
                .map(|m| m.n_tasks)
                .sum();
            let ok: usize = p
                .strata
                .iter()
                .filter_map(|s| s.metrics.as_ref())
                .map(|m| m.successes)
                .sum();
            assert_eq!(n, p.metrics.n_tasks);
            assert_eq!(ok, p.metrics.successes);
        }
    }

    #[test]
    fn coverage_bins() {
        let e = [0.0, 0.3, 0.7, 1.0];
        assert_eq!(stratum_index(Some(0.0), &e), 0);
        assert_eq!(stratum_index(Some(0.3), &e), 1);
        assert_eq!(stratum_index(Some(0.6999), &e), 1);
        assert_eq!(stratum_index(Some(1.0), &e), 2);
        assert_eq!(stratum_index(None, &e), 3);
        assert_eq!(stratum_labels(&e)[2].0, "[0.70, 1.00]");
    }

    #[test]
    fn report_is_byte_reproducible() {
        let (corpus, table) = synthetic(80, 3);
        let a = evaluate(
            &corpus,
            &table,
            &all_policies(),
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        let b = evaluate(
            &corpus,
            &table,
            &all_policies(),
            &costs(),
            &EvalConfig::default(),
            None,
        )
        .unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert!(a.summary_table().contains("always-heavy"));
    }

    #[test]
    fn corpus_without_outcomes_is_rejected() {
        let mut t = task(0, 5.0, true, None);
        t.runs = None;
        let corpus = Corpus::new(vec![t]).unwrap();
        let table = FeatureTable::for_corpus(&corpus, None);
        assert!(evaluate(
            &corpus,
            &table,
            &all_policies(),
            &costs(),
            &EvalConfig::default(),
            None
        )
        .is_err());
    }

    #[test]
    fn pilot_refuses_small_corpora() {
        let (corpus, table) = synthetic(19, 1);
        assert!(pilot_gates(&corpus, &table, &costs(), &PilotConfig::default()).is_err());
        let (corpus, table) = synthetic(50, 1);
        let r = pilot_gates(&corpus, &table, &costs(), &PilotConfig::default()).unwrap();
        assert!(r.size_matches);
        assert_eq!(r.configured_size, 50);
    }

    #[test]
    fn signal_gate_boundary() {
        assert!(signal_gate_passes(0.56, DEFAULT_P_HAT_THRESHOLD));
        assert!(!signal_gate_passes(0.5599, DEFAULT_P_HAT_THRESHOLD));
    }

    #[test]
    fn exact_threshold_p_hat_passes_the_pilot() {
        let mut tasks: Vec<TaskRecord> = Vec::new();
        // 25 passes at 10 and 25 fails: 22 at 10, 3 at 9 -> (3*25 + 0.5*22*25) / 625 = 0.56
        for i in 0..25 {
            tasks.push(task(i, 10.0, true, None));
        }
        for i in 25..50 {
            tasks.push(task(i, if i < 28 { 9.0 } else { 10.0 }, false, None));
        }
        let corpus = Corpus::new(tasks).unwrap();
        let table = FeatureTable::for_corpus(&corpus, None);
        let r = pilot_gates(&corpus, &table, &costs(), &PilotConfig::default()).unwrap();
        assert_eq!(r.gates.signal.p_hat, Some(0.56));
        assert!(r.gates.signal.passed);
        // routed light: 25 passes + 22 failures -> pass rate 25/47 > 1/15
        assert!(r.gates.cost.passed);
        assert!(r.gates.go);
    }

    #[test]
    fn rq1_empty_k_list_does_nothing() {
        let (corpus, table) = synthetic(30, 1);
        let cfg = Rq1Config {
            k_list: vec![],
            ..Default::default()
        };
        let r = rq1_compare(&corpus, &table, &costs(), &cfg).unwrap();
        assert!(r.variants.is_empty() && r.importance.is_empty());
        let bad = Rq1Config {
            k_list: vec![9],
            ..Default::default()
        };
        assert!(rq1_compare(&corpus, &table, &costs(), &bad).is_err());
    }

    proptest! {
        #[test]
        fn gate_conjunction(rate in 0.0f64..=1.0, ratio in 0.01f64..0.99, p in 0.0f64..=1.0, thr in 0.0f64..=1.0) {
            let cost = CostGateReport { n_routed_light: 1, pass_rate: Some(rate), cost_ratio: ratio, passed: rate > ratio };
            let signal = SignalGateReport {
                n_light_pass: 1, n_light_fail: 1, p_hat: Some(p), threshold: thr,
                passed: signal_gate_passes(p, thr), brunner_munzel: None, band_grouped_p_hat: None,
            };
            prop_assert_eq!(combine_gates(&cost, &signal), rate > ratio && p >= thr);
        }
    }
}
