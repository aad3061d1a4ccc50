//! Expected cost of tiered routing with a single heavy-tier fallback.
//!
//! A task routed to tier `t` costs `c_t`; if that tier's verdict fails and
//! `t` is not Heavy the task is re-run on Heavy at an extra `c_H`, whatever
//! the heavy outcome. With routing fractions `r_L, r_S` and failure rates
//! `f_L, f_S`:
//!
//! ```text
//! E[cost] = r_L (c_L + f_L c_H) + r_S (c_S + f_S c_H) + (1 - r_L - r_S) c_H
//! ```

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::outcomes::Corpus;
use crate::rng::{self, Domain};
use crate::router::{route_baseline, BaselineKind, FeatureTable, Policy, PolicyKind, Router, Tier};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostParams {
    pub light: f64,
    pub standard: f64,
    pub heavy: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            light: 1.0,
            standard: 3.0,
            heavy: 15.0,
        }
    }
}

impl CostParams {
    pub fn new(light: f64, standard: f64, heavy: f64) -> Result<Self> {
        let p = Self {
            light,
            standard,
            heavy,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.heavy.is_finite()
            && 0.0 < self.light
            && self.light < self.standard
            && self.standard < self.heavy)
        {
            return Err(Error::Config(format!(
                "costs must satisfy 0 < light ({}) < standard ({}) < heavy ({})",
                self.light, self.standard, self.heavy
            )));
        }
        Ok(())
    }

    pub fn cost(&self, tier: Tier) -> f64 {
        match tier {
            Tier::Light => self.light,
            Tier::Standard => self.standard,
            Tier::Heavy => self.heavy,
        }
    }

    /// `c_L / c_H`, the break-even light pass rate.
    pub fn light_heavy_ratio(&self) -> f64 {
        self.light / self.heavy
    }
}

impl std::str::FromStr for CostParams {
    type Err = Error;

    /// `"1,3,15"` -> light 1, standard 3, heavy 15.
    fn from_str(s: &str) -> Result<Self> {
        let vals = s
            .split(',')
            .map(|v| {
                v.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad cost '{v}'")))
            })
            .collect::<Result<Vec<_>>>()?;
        match vals.as_slice() {
            [l, s, h] => CostParams::new(*l, *s, *h),
            _ => Err(Error::Config(format!(
                "costs must be 'light,standard,heavy', got '{s}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RoutingMix {
    pub r_light: f64,
    pub r_standard: f64,
    pub f_light: f64,
    pub f_standard: f64,
}

impl RoutingMix {
    pub fn new(r_light: f64, r_standard: f64, f_light: f64, f_standard: f64) -> Result<Self> {
        let m = Self {
            r_light,
            r_standard,
            f_light,
            f_standard,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(unit(self.r_light)
            && unit(self.r_standard)
            && unit(self.f_light)
            && unit(self.f_standard))
        {
            return Err(Error::Domain(format!(
                "routing mix values must lie in [0, 1]: {self:?}"
            )));
        }
        if self.r_light + self.r_standard > 1.0 + 1e-12 {
            return Err(Error::Domain(format!(
                "r_light + r_standard = {} exceeds 1",
                self.r_light + self.r_standard
            )));
        }
        Ok(())
    }

    pub fn r_heavy(&self) -> f64 {
        1.0 - self.r_light - self.r_standard
    }
}

pub fn expected_cost(p: &CostParams, m: &RoutingMix) -> Result<f64> {
    p.validate().map_err(|e| Error::Domain(e.to_string()))?;
    m.validate()?;
    Ok(m.r_light * (p.light + m.f_light * p.heavy)
        + m.r_standard * (p.standard + m.f_standard * p.heavy)
        + (1.0 - m.r_light - m.r_standard) * p.heavy)
}

pub fn savings_vs_heavy(p: &CostParams, m: &RoutingMix) -> Result<f64> {
    p.validate().map_err(|e| Error::Domain(e.to_string()))?;
    m.validate()?;
    Ok(
        m.r_light * (p.heavy - p.light) + m.r_standard * (p.heavy - p.standard)
            - (m.r_light * m.f_light + m.r_standard * m.f_standard) * p.heavy,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostGateVerdict {
    pub pass_rate: f64,
    pub cost_ratio: f64,
    pub passed: bool,
}

/// Two-tier break-even check: light pays off iff `pass_rate > c_L / c_H`.
pub fn cost_gate(pass_rate: f64, c_light: f64, c_heavy: f64) -> Result<CostGateVerdict> {
    if !(0.0..=1.0).contains(&pass_rate) {
        return Err(Error::Domain(format!(
            "pass rate {pass_rate} outside [0, 1]"
        )));
    }
    if !(c_light > 0.0 && c_light < c_heavy && c_heavy.is_finite()) {
        return Err(Error::Domain(format!(
            "cost gate needs 0 < c_L ({c_light}) < c_H ({c_heavy})"
        )));
    }
    let cost_ratio = c_light / c_heavy;
    Ok(CostGateVerdict {
        pass_rate,
        cost_ratio,
        passed: pass_rate > cost_ratio,
    })
}

/// Cost charged for one task: the routed tier, plus a heavy re-run when a
/// lighter tier fails.
pub fn charge(p: &CostParams, routed: Tier, routed_passed: bool) -> f64 {
    if routed_passed || routed == Tier::Heavy {
        p.cost(routed)
    } else {
        p.cost(routed) + p.heavy
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct Tally {
    n: usize,
    cost: f64,
    cost_sq: f64,
    successes: usize,
    routed: [usize; 3],
    failed: [usize; 3],
}

impl Tally {
    fn add(&mut self, p: &CostParams, tier: Tier, passed: bool, heavy_passed: bool) {
        let c = charge(p, tier, passed);
        self.n += 1;
        self.cost += c;
        self.cost_sq += c * c;
        self.routed[tier.ordinal()] += 1;
        if !passed {
            self.failed[tier.ordinal()] += 1;
        }
        if passed || (tier != Tier::Heavy && heavy_passed) {
            self.successes += 1;
        }
    }

    fn merge(mut self, o: Tally) -> Tally {
        self.n += o.n;
        self.cost += o.cost;
        self.cost_sq += o.cost_sq;
        self.successes += o.successes;
        for i in 0..3 {
            self.routed[i] += o.routed[i];
            self.failed[i] += o.failed[i];
        }
        self
    }

    fn mean(&self) -> f64 {
        self.cost / self.n as f64
    }

    fn standard_error(&self) -> f64 {
        let n = self.n as f64;
        if self.n < 2 {
            return 0.0;
        }
        let var = ((self.cost_sq - self.cost * self.cost / n) / (n - 1.0)).max(0.0);
        (var / n).sqrt()
    }

    fn mix(&self) -> RoutingMix {
        let n = self.n as f64;
        let rate = |i: usize| {
            if self.routed[i] == 0 {
                0.0
            } else {
                self.failed[i] as f64 / self.routed[i] as f64
            }
        };
        RoutingMix {
            r_light: self.routed[0] as f64 / n,
            r_standard: self.routed[1] as f64 / n,
            f_light: rate(0),
            f_standard: rate(1),
        }
    }

    fn cost_per_success(&self) -> Option<f64> {
        (self.successes > 0).then(|| self.cost / self.successes as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub mean_cost: f64,
    /// Total cost over successful tasks; absent when nothing succeeded.
    pub cost_per_success: Option<f64>,
    pub success_rate: f64,
    pub mix: RoutingMix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub policy: PolicyKind,
    pub costs: CostParams,
    pub seed: u64,
    pub n_trials: usize,
    pub tasks_per_trial: usize,
    /// Pooled over all sampled tasks.
    pub mean_cost: f64,
    pub standard_error: f64,
    pub cost_per_success: Option<f64>,
    pub success_rate: f64,
    pub mix: RoutingMix,
    /// Closed-form cost at the pooled empirical mix.
    pub expected_cost_at_mix: f64,
    pub savings_vs_heavy: f64,
    pub trials: Vec<TrialResult>,
}

/// Bootstrap the corpus `n_trials` times, route each sampled task under
/// `policy` and charge it with heavy fallback. Trial `t` draws from its own
/// seeded stream, so results do not depend on thread scheduling.
pub fn simulate_policy(
    corpus: &Corpus,
    table: &FeatureTable,
    policy: &Policy,
    costs: &CostParams,
    seed: u64,
    n_trials: usize,
) -> Result<SimulationReport> {
    costs.validate()?;
    if n_trials == 0 {
        return Err(Error::Simulation("n_trials must be at least 1".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Simulation("corpus is empty".into()));
    }
    if !corpus.has_complete_outcomes() {
        return Err(Error::Simulation(
            "every task needs outcomes for all three tiers".into(),
        ));
    }
    let tasks = corpus.tasks();
    let verdicts: Vec<[bool; 3]> = tasks
        .iter()
        .map(|t| {
            Ok([
                t.verdict(Tier::Light)?.passed(),
                t.verdict(Tier::Standard)?.passed(),
                t.verdict(Tier::Heavy)?.passed(),
            ])
        })
        .collect::<Result<_>>()?;
    let fixed: Option<Vec<Tier>> = match policy {
        Policy::Random { .. } => None,
        _ => Some(
            Router::new(policy, table)
                .route_corpus(corpus)?
                .into_iter()
                .map(|d| d.tier)
                .collect(),
        ),
    };

    let n = tasks.len();
    let tallies: Vec<Tally> = (0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut r = rng::stream(Domain::Bootstrap, seed, trial as u64);
            let mut tally = Tally::default();
            for _ in 0..n {
                let i = r.random_range(0..n);
                let tier = match &fixed {
                    Some(tiers) => tiers[i],
                    None => route_baseline(BaselineKind::Random, &mut r),
                };
                let v = verdicts[i];
                tally.add(costs, tier, v[tier.ordinal()], v[2]);
            }
            tally
        })
        .collect();

    let pooled = tallies.iter().fold(Tally::default(), |a, t| a.merge(*t));
    let mix = pooled.mix();
    Ok(SimulationReport {
        policy: policy.kind(),
        costs: *costs,
        seed,
        n_trials,
        tasks_per_trial: n,
        mean_cost: pooled.mean(),
        standard_error: pooled.standard_error(),
        cost_per_success: pooled.cost_per_success(),
        success_rate: pooled.successes as f64 / pooled.n as f64,
        mix,
        expected_cost_at_mix: expected_cost(costs, &mix)?,
        savings_vs_heavy: savings_vs_heavy(costs, &mix)?,
        trials: tallies
            .iter()
            .map(|t| TrialResult {
                mean_cost: t.mean(),
                cost_per_success: t.cost_per_success(),
                success_rate: t.successes as f64 / t.n as f64,
                mix: t.mix(),
            })
            .collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixSimulation {
    pub n_tasks: usize,
    pub mean_cost: f64,
    pub standard_error: f64,
}

const MIX_CHUNK: usize = 1 << 16;

/// Sample `n_tasks` tasks from the routing process a mix describes: route
/// Light/Standard/Heavy with probabilities `r_L, r_S, 1 - r_L - r_S`, and
/// fail a lighter route with probability `f_t`.
pub fn simulate_mix(
    costs: &CostParams,
    mix: &RoutingMix,
    n_tasks: usize,
    seed: u64,
) -> Result<MixSimulation> {
    costs.validate()?;
    mix.validate()?;
    if n_tasks == 0 {
        return Err(Error::Simulation("n_tasks must be at least 1".into()));
    }
    let chunks = n_tasks.div_ceil(MIX_CHUNK);
    let pooled = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut r = rng::stream(Domain::MixSampling, seed, c as u64);
            let len = MIX_CHUNK.min(n_tasks - c * MIX_CHUNK);
            let mut tally = Tally::default();
            for _ in 0..len {
                let u: f64 = r.random();
                let (tier, fail_rate) = if u < mix.r_light {
                    (Tier::Light, mix.f_light)
                } else if u < mix.r_light + mix.r_standard {
                    (Tier::Standard, mix.f_standard)
                } else {
                    (Tier::Heavy, 0.0)
                };
                let passed = r.random::<f64>() >= fail_rate;
                tally.add(costs, tier, passed, true);
            }
            tally
        })
        .reduce(Tally::default, Tally::merge);
    Ok(MixSimulation {
        n_tasks,
        mean_cost: pooled.mean(),
        standard_error: pooled.standard_error(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::outcomes::{RunSet, TaskFile, TaskRecord, Verdict};
    use proptest::prelude::*;

    fn p() -> CostParams {
        CostParams::new(1.0, 3.0, 15.0).unwrap()
    }

    fn mix(rl: f64, rs: f64, fl: f64, fs: f64) -> RoutingMix {
        RoutingMix::new(rl, rs, fl, fs).unwrap()
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(expected_cost(&p(), &mix(0.0, 0.0, 0.3, 0.3)).unwrap(), 15.0);
        assert_eq!(expected_cost(&p(), &mix(1.0, 0.0, 0.0, 0.0)).unwrap(), 1.0);
        let m = mix(0.5, 0.3, 0.1, 0.05);
        assert!((expected_cost(&p(), &m).unwrap() - 5.375).abs() < 1e-12);
        assert!((savings_vs_heavy(&p(), &m).unwrap() - 9.625).abs() < 1e-12);
        assert_eq!(savings_vs_heavy(&p(), &RoutingMix::default()).unwrap(), 0.0);
        let loss = mix(1.0, 0.0, 1.0, 0.0);
        assert!((savings_vs_heavy(&p(), &loss).unwrap() + 1.0).abs() < 1e-12);
        assert!((p().heavy - expected_cost(&p(), &loss).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn worked_example_matches_monte_carlo() {
        let m = mix(0.5, 0.3, 0.1, 0.05);
        let sim = simulate_mix(&p(), &m, 1_000_000, 42).unwrap();
        let exact = expected_cost(&p(), &m).unwrap();
        assert!((sim.mean_cost - exact).abs() < 0.01, "{sim:?}");
        assert!((sim.mean_cost - exact).abs() < 3.0 * sim.standard_error);
    }

    #[test]
    fn invalid_inputs() {
        assert!(CostParams::new(3.0, 3.0, 15.0).unwrap_err().is_config());
        assert!(RoutingMix::new(0.7, 0.4, 0.0, 0.0).is_err());
        assert!(RoutingMix::new(0.5, 0.3, 1.1, 0.0).is_err());
        let bad = RoutingMix {
            r_light: -0.1,
            ..Default::default()
        };
        assert!(matches!(expected_cost(&p(), &bad), Err(Error::Domain(_))));
        let bad_costs = CostParams {
            light: 5.0,
            standard: 3.0,
            heavy: 15.0,
        };
        assert!(matches!(
            expected_cost(&bad_costs, &RoutingMix::default()),
            Err(Error::Domain(_))
        ));
        assert_eq!("1,3,15".parse::<CostParams>().unwrap(), p());
        assert!("1,3".parse::<CostParams>().is_err());
    }

    #[test]
    fn cost_gate_examples() {
        assert!(cost_gate(0.25, 1.0, 5.0).unwrap().passed);
        let eq = cost_gate(0.20, 1.0, 5.0).unwrap();
        assert!(!eq.passed);
        assert_eq!(eq.cost_ratio, 0.2);
        assert!(cost_gate(1.0, 14.0, 15.0).unwrap().passed);
        assert!(cost_gate(1.2, 1.0, 5.0).is_err());
    }

    fn task(i: usize, light: bool, standard: bool, heavy: bool) -> TaskRecord {
        let v = |b| vec![Verdict::from_bool(b); 3];
        TaskRecord {
            task_id: format!("t{i:03}"),
            files: vec![TaskFile {
                path: format!("f{i}"),
                health: Some(if i.is_multiple_of(2) { 9.5 } else { 3.0 }),
            }],
            patch_size: 1,
            coverage: None,
            runs: Some(RunSet {
                light: v(light),
                standard: v(standard),
                heavy: v(heavy),
            }),
        }
    }

    fn setup(tasks: Vec<TaskRecord>) -> (Corpus, FeatureTable) {
        let c = Corpus::new(tasks).unwrap();
        let t = FeatureTable::for_corpus(&c, None);
        (c, t)
    }

    #[test]
    fn baseline_policies_cost_exactly() {
        let (c, t) = setup(
            (0..20)
                .map(|i| task(i, true, i % 3 == 0, i % 4 != 0))
                .collect(),
        );
        let heavy = simulate_policy(&c, &t, &Policy::AlwaysHeavy, &p(), 1, 50).unwrap();
        assert_eq!(heavy.mean_cost, 15.0);
        let light = simulate_policy(&c, &t, &Policy::AlwaysLight, &p(), 1, 50).unwrap();
        assert_eq!(light.mean_cost, 1.0);
        assert_eq!(light.success_rate, 1.0);
    }

    #[test]
    fn simulation_converges_to_closed_form() {
        let (c, t) = setup(
            (0..50)
                .map(|i| task(i, i % 3 == 0, i % 2 == 0, i % 7 != 0))
                .collect(),
        );
        for policy in [
            Policy::Random { seed: 3 },
            Policy::Heuristic(Default::default()),
            Policy::Oracle,
        ] {
            let r = simulate_policy(&c, &t, &policy, &p(), 11, 2_000).unwrap();
            assert!(r.tasks_per_trial * r.n_trials >= 100_000);
            let diff = (r.mean_cost - r.expected_cost_at_mix).abs();
            assert!(diff <= 3.0 * r.standard_error + 1e-9, "{policy:?}: {diff}");
        }
    }

    #[test]
    fn simulation_is_reproducible_and_needs_outcomes() {
        let (c, t) = setup((0..10).map(|i| task(i, i % 2 == 0, true, true)).collect());
        let a = simulate_policy(&c, &t, &Policy::Random { seed: 0 }, &p(), 5, 20).unwrap();
        let b = simulate_policy(&c, &t, &Policy::Random { seed: 0 }, &p(), 5, 20).unwrap();
        assert_eq!(a, b);
        let mut bare = task(99, true, true, true);
        bare.runs = None;
        let (c, t) = setup(vec![bare]);
        assert!(matches!(
            simulate_policy(&c, &t, &Policy::AlwaysHeavy, &p(), 0, 1),
            Err(Error::Simulation(_))
        ));
    }

    #[test]
    fn heavy_failure_is_charged_and_unsuccessful() {
        let (c, t) = setup(vec![task(0, false, false, false)]);
        let r = simulate_policy(&c, &t, &Policy::AlwaysLight, &p(), 0, 3).unwrap();
        assert_eq!(r.mean_cost, 16.0);
        assert_eq!(r.cost_per_success, None);
        assert_eq!(r.success_rate, 0.0);
    }

    fn valid_costs() -> impl Strategy<Value = CostParams> {
        (0.01f64..10.0, 0.01f64..10.0, 0.01f64..10.0)
            .prop_map(|(a, b, c)| CostParams::new(a, a + b, a + b + c).unwrap())
    }

    fn valid_mix() -> impl Strategy<Value = RoutingMix> {
        (0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0, 0.0f64..=1.0)
            .prop_map(|(a, b, fl, fs)| mix(a, (1.0 - a) * b, fl, fs))
    }

    proptest! {
        #[test]
        fn savings_identity(p in valid_costs(), m in valid_mix()) {
            let lhs = savings_vs_heavy(&p, &m).unwrap() + expected_cost(&p, &m).unwrap();
            prop_assert!((lhs - p.heavy).abs() <= 1e-9 * p.heavy.max(1.0));
        }

        #[test]
        fn two_tier_equivalence(p in valid_costs(), fl in 0.0f64..=1.0) {
            let m = mix(1.0, 0.0, fl, 0.0);
            let s = savings_vs_heavy(&p, &m).unwrap();
            prop_assert_eq!(s > 0.0, (1.0 - fl) > p.light / p.heavy);
        }

        #[test]
        fn monotone_in_failure_rates(p in valid_costs(), m in valid_mix(), d in 0.0f64..1.0) {
            let base = expected_cost(&p, &m).unwrap();
            let fl = RoutingMix { f_light: (m.f_light + d).min(1.0), ..m };
            let fs = RoutingMix { f_standard: (m.f_standard + d).min(1.0), ..m };
            prop_assert!(expected_cost(&p, &fl).unwrap() >= base - 1e-12);
            prop_assert!(expected_cost(&p, &fs).unwrap() >= base - 1e-12);
        }

        #[test]
        fn more_light_routing_pays_below_break_even(p in valid_costs(), m in valid_mix(), d in 0.0f64..1.0) {
            prop_assume!(m.f_light < 1.0 - p.light / p.heavy);
            let more = RoutingMix { r_light: m.r_light + d * m.r_heavy(), ..m };
            prop_assert!(expected_cost(&p, &more).unwrap() <= expected_cost(&p, &m).unwrap() + 1e-12);
        }
    }
}
