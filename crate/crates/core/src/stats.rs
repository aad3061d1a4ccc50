//! Rank statistics, classification metrics, caliper matching and exact
//! Shapley importance.

use std::collections::BTreeSet;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};
use crate::router::Tier;

/// Largest feature set [`shapley_importance`] enumerates exactly.
pub const MAX_SHAPLEY_FEATURES: usize = 12;

fn check_sample(name: &str, xs: &[f64]) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Statistics(format!("sample {name} is empty")));
    }
    if xs.iter().any(|v| v.is_nan()) {
        return Err(Error::Statistics(format!("sample {name} contains NaN")));
    }
    Ok(())
}

/// 1-based ranks with ties replaced by their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = mid;
        }
        i = j + 1;
    }
    ranks
}

/// `P(X > Y) + 0.5 P(X = Y)` estimated over all `(x, y)` pairs.
pub fn prob_superiority(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_sample("x", xs)?;
    check_sample("y", ys)?;
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let ranks = midranks(&pooled);
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let rank_sum_x: f64 = ranks[..xs.len()].iter().sum();
    Ok((rank_sum_x - nx * (nx + 1.0) / 2.0) / (nx * ny))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    /// X tends to exceed Y.
    Greater,
    /// X tends to fall below Y.
    Less,
}

impl std::str::FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            other => Err(Error::Config(format!(
                "unknown alternative '{other}' (expected two-sided, greater or less)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BmStatus {
    Regular,
    /// Every value is identical across both samples.
    Degenerate,
    /// Zero within-sample rank variance with complete separation.
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EffectResult {
    pub p_hat: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// Positive when Y tends to exceed X. Absent unless `status` is regular.
    pub bm_statistic: Option<f64>,
    pub bm_df: Option<f64>,
    pub bm_p_value: f64,
    pub alternative: Alternative,
    pub status: BmStatus,
}

/// Brunner–Munzel test with a t approximation. `p_hat` is
/// [`prob_superiority`] of `xs` over `ys`.
pub fn brunner_munzel(xs: &[f64], ys: &[f64], alternative: Alternative) -> Result<EffectResult> {
    check_sample("x", xs)?;
    check_sample("y", ys)?;
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::Statistics(
            "Brunner-Munzel needs at least 2 values per sample".into(),
        ));
    }
    let (nx, ny) = (xs.len() as f64, ys.len() as f64);
    let pooled: Vec<f64> = xs.iter().chain(ys).copied().collect();
    let rc = midranks(&pooled);
    let (rcx, rcy) = rc.split_at(xs.len());
    let rx = midranks(xs);
    let ry = midranks(ys);
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mcx, mcy, mx, my) = (mean(rcx), mean(rcy), mean(&rx), mean(&ry));
    let variance = |rc: &[f64], r: &[f64], mc: f64, m: f64, n: f64| {
        rc.iter()
            .zip(r)
            .map(|(c, w)| (c - w - mc + m).powi(2))
            .sum::<f64>()
            / (n - 1.0)
    };
    let sx = variance(rcx, &rx, mcx, mx, nx);
    let sy = variance(rcy, &ry, mcy, my, ny);
    let p_hat = prob_superiority(xs, ys)?;
    let base = EffectResult {
        p_hat,
        n_x: xs.len(),
        n_y: ys.len(),
        bm_statistic: None,
        bm_df: None,
        bm_p_value: 1.0,
        alternative,
        status: BmStatus::Regular,
    };

    let spread = nx * sx + ny * sy;
    if spread <= 0.0 {
        if p_hat == 0.5 {
            return Ok(EffectResult {
                status: BmStatus::Degenerate,
                ..base
            });
        }
        let consistent = match alternative {
            Alternative::TwoSided => true,
            Alternative::Greater => p_hat > 0.5,
            Alternative::Less => p_hat < 0.5,
        };
        return Ok(EffectResult {
            bm_p_value: if consistent { 0.0 } else { 1.0 },
            status: BmStatus::Separated,
            ..base
        });
    }

    let w = nx * ny * (mcy - mcx) / ((nx + ny) * spread.sqrt());
    let df = spread.powi(2) / ((nx * sx).powi(2) / (nx - 1.0) + (ny * sy).powi(2) / (ny - 1.0));
    let t = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Statistics(e.to_string()))?;
    let (cdf, sf) = (t.cdf(w), t.sf(w));
    let p = match alternative {
        Alternative::TwoSided => (2.0 * cdf.min(sf)).min(1.0),
        Alternative::Greater => cdf,
        Alternative::Less => sf,
    };
    Ok(EffectResult {
        bm_statistic: Some(w),
        bm_df: Some(df),
        bm_p_value: p.clamp(0.0, 1.0),
        ..base
    })
}

/// Rows are oracle tiers, columns routed tiers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Tier, Tier)>) -> Self {
        let mut cm = Self::default();
        for (oracle, routed) in pairs {
            cm.add(oracle, routed);
        }
        cm
    }

    pub fn add(&mut self, oracle: Tier, routed: Tier) {
        self.counts[oracle.ordinal()][routed.ordinal()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..3).map(|i| self.counts[i][i]).sum()
    }

    /// Routed above the oracle tier.
    pub fn over(&self) -> u64 {
        (0..3)
            .flat_map(|i| (i + 1..3).map(move |j| (i, j)))
            .map(|(i, j)| self.counts[i][j])
            .sum()
    }

    /// Routed below the oracle tier.
    pub fn under(&self) -> u64 {
        (0..3)
            .flat_map(|i| (0..i).map(move |j| (i, j)))
            .map(|(i, j)| self.counts[i][j])
            .sum()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::default();
        for i in 0..3 {
            for j in 0..3 {
                t.counts[j][i] = self.counts[i][j];
            }
        }
        t
    }
}

/// Multiclass Matthews correlation. Returns 0 when the denominator vanishes.
pub fn mcc(cm: &ConfusionMatrix) -> Result<f64> {
    let s = cm.total() as f64;
    if s == 0.0 {
        return Err(Error::Statistics("MCC of an empty confusion matrix".into()));
    }
    let c = cm.correct() as f64;
    let t: Vec<f64> = (0..3)
        .map(|k| cm.counts[k].iter().sum::<u64>() as f64)
        .collect();
    let p: Vec<f64> = (0..3)
        .map(|k| (0..3).map(|i| cm.counts[i][k]).sum::<u64>() as f64)
        .collect();
    let pt: f64 = p.iter().zip(&t).map(|(a, b)| a * b).sum();
    let pp: f64 = p.iter().map(|v| v * v).sum();
    let tt: f64 = t.iter().map(|v| v * v).sum();
    let denom = ((s * s - pp) * (s * s - tt)).sqrt();
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok((c * s - pt) / denom)
}

/// A task as seen by the matcher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchUnit {
    pub id: String,
    pub proxy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matching {
    /// `(a id, b id)` pairs in the order they were formed.
    pub pairs: Vec<(String, String)>,
    pub unmatched_a: Vec<String>,
    pub unmatched_b: Vec<String>,
}

/// Greedy nearest-neighbour matching without replacement: candidate pairs
/// within the caliper are taken in order of proxy distance, ties broken by
/// the pair's ids, so the result does not depend on which group is `a`.
pub fn matched_pairs(a: &[MatchUnit], b: &[MatchUnit], caliper: f64) -> Result<Matching> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Statistics(
            "cannot match against an empty group".into(),
        ));
    }
    if caliper.is_nan() || caliper < 0.0 {
        return Err(Error::Statistics(format!(
            "caliper must be non-negative, got {caliper}"
        )));
    }
    if a.iter().chain(b).any(|u| !u.proxy.is_finite()) {
        return Err(Error::Statistics("matching proxy must be finite".into()));
    }
    let sorted = |g: &[MatchUnit]| {
        let mut v = g.to_vec();
        v.sort_by(|x, y| x.id.cmp(&y.id));
        v
    };
    let (a, b) = (sorted(a), sorted(b));
    let mut candidates: Vec<(f64, &str, &str, usize, usize)> = Vec::new();
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            let d = (x.proxy - y.proxy).abs();
            if d <= caliper {
                let (lo, hi) = if x.id <= y.id {
                    (&x.id, &y.id)
                } else {
                    (&y.id, &x.id)
                };
                candidates.push((d, lo, hi, i, j));
            }
        }
    }
    candidates.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(q.1)).then(p.2.cmp(q.2)));
    let mut used_a = vec![false; a.len()];
    let mut used_b = vec![false; b.len()];
    let mut out = Matching::default();
    for (_, _, _, i, j) in candidates {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            out.pairs.push((a[i].id.clone(), b[j].id.clone()));
        }
    }
    out.unmatched_a = a
        .iter()
        .zip(&used_a)
        .filter(|(_, u)| !**u)
        .map(|(x, _)| x.id.clone())
        .collect();
    out.unmatched_b = b
        .iter()
        .zip(&used_b)
        .filter(|(_, u)| !**u)
        .map(|(x, _)| x.id.clone())
        .collect();
    Ok(out)
}

/// Linear-interpolation quantile of a non-empty sample.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Default caliper: a fraction of the proxy's interquartile range.
pub fn iqr_caliper(proxies: &[f64], fraction: f64) -> f64 {
    if proxies.is_empty() {
        return 0.0;
    }
    fraction * (quantile(proxies, 0.75) - quantile(proxies, 0.25))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Importance<F> {
    pub feature: F,
    pub contribution: f64,
}

/// Exact Shapley values of `value_fn` over all `2^k` subsets of `features`.
/// Each subset is evaluated once; subsets are passed in the order of
/// `features`. Results are sorted by descending contribution, ties by name.
pub fn shapley_importance<F, V>(features: &[F], value_fn: V) -> Result<Vec<Importance<F>>>
where
    F: Clone + fmt::Display + Send + Sync,
    V: Fn(&[F]) -> Result<f64> + Sync,
{
    let k = features.len();
    if k > MAX_SHAPLEY_FEATURES {
        return Err(Error::Statistics(format!(
            "exact Shapley enumeration supports at most {MAX_SHAPLEY_FEATURES} features, got {k}; reduce the feature set"
        )));
    }
    let names: BTreeSet<String> = features.iter().map(ToString::to_string).collect();
    if names.len() != k {
        return Err(Error::Statistics("feature names must be distinct".into()));
    }
    let values: Vec<f64> = (0..1usize << k)
        .into_par_iter()
        .map(|mask| {
            let subset: Vec<F> = (0..k)
                .filter(|i| mask >> i & 1 == 1)
                .map(|i| features[i].clone())
                .collect();
            value_fn(&subset)
        })
        .collect::<Result<_>>()?;

    let mut fact = vec![1.0f64; k + 1];
    for i in 1..=k {
        fact[i] = fact[i - 1] * i as f64;
    }
    let mut out: Vec<Importance<F>> = (0..k)
        .map(|i| {
            let bit = 1usize << i;
            let phi = (0..1usize << k)
                .filter(|m| m & bit == 0)
                .map(|m| {
                    let s = m.count_ones() as usize;
                    fact[s] * fact[k - s - 1] / fact[k] * (values[m | bit] - values[m])
                })
                .sum();
            Importance {
                feature: features[i].clone(),
                contribution: phi,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.contribution
            .total_cmp(&a.contribution)
            .then_with(|| a.feature.to_string().cmp(&b.feature.to_string()))
    });
    Ok(out)
}
