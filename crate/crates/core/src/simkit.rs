//! Monte-Carlo cost model for chained retrieval on planted synthetic worlds.
//!
//! A world has `n` items. Each of the `k` steps plants a target, a tolerance set of `m`
//! items containing it, and a motivation subspace of `n_m` items containing the
//! tolerance set. Policies differ in how they look for a tolerance member:
//!
//! | policy | per step | analytic reference |
//! |---|---|---|
//! | brute force | one uniform draw | success `(m/n)^k` |
//! | sequential scan | uniform draws until a hit | calls `k * n / m` |
//! | hierarchical | best-first over a `c`-ary tree of all items | calls `k * depth(n)` when `alpha = 1` |
//! | motivation | one planning call, then best-first over the subspace | calls `k * (1 + depth(n_m))` when `alpha = 1` |
//!
//! Trials draw from independent seeded streams, so results do not depend on thread
//! scheduling.

use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{DocSource, QueryContext};
use crate::index::{tree_depth, SearchTree};
use crate::router::PlantedOracle;
use crate::search::{best_first_until, SearchError};
use crate::util::{mix64, stream_rng};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("simkit: invalid configuration: {0}")]
    Config(String),
    #[error("simkit: {0}")]
    Search(#[from] SearchError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    BruteForce,
    SequentialScan,
    Hierarchical,
    Motivation,
}

impl Policy {
    pub const ALL: [Policy; 4] = [
        Policy::BruteForce,
        Policy::SequentialScan,
        Policy::Hierarchical,
        Policy::Motivation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::BruteForce => "brute_force",
            Policy::SequentialScan => "sequential_scan",
            Policy::Hierarchical => "hierarchical",
            Policy::Motivation => "motivation",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, SimError> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| SimError::Config(format!("unknown policy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    pub k: usize,
    pub m: usize,
    pub n_m: usize,
    pub c: usize,
    pub alpha: f64,
    pub trials: usize,
    pub seed: u64,
    /// Maximum calls per trial. Brute force repeats whole attempts within it; the other
    /// policies fail a step once it is spent. Unlimited when absent.
    pub budget: Option<usize>,
}

impl SimConfig {
    pub fn new(n: usize, k: usize, m: usize) -> Self {
        SimConfig {
            n,
            k,
            m,
            n_m: n,
            c: 15,
            alpha: 1.0,
            trials: 1000,
            seed: 0,
            budget: None,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::Config(m));
        if self.k < 1 {
            return bad("k must be at least 1".into());
        }
        if self.m < 1 || self.m > self.n_m || self.n_m > self.n {
            return bad(format!("need 1 <= M <= N_m <= N, got M={} N_m={} N={}", self.m, self.n_m, self.n));
        }
        if self.c < 2 {
            return bad("c must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.trials < 1 {
            return bad("trials must be positive".into());
        }
        if self.budget == Some(0) {
            return bad("budget must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TrialRecord {
    pub calls: usize,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub policy: Policy,
    pub config: SimConfig,
    pub mean_calls: f64,
    pub successes: usize,
    pub success_rate: f64,
    pub analytic_reference: Option<f64>,
    /// Composition cost `k * m`, reported alongside rather than simulated.
    pub composition_units: usize,
    pub records: Vec<TrialRecord>,
}

/// One planted step: target, tolerance set (sorted) and, if asked for, the subspace (sorted).
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedStep {
    pub target: usize,
    pub tolerance: Vec<usize>,
    pub subspace: Vec<usize>,
}

impl PlantedStep {
    pub fn tolerates(&self, item: usize) -> bool {
        self.tolerance.binary_search(&item).is_ok()
    }
}

/// Plants one step. The subspace is a uniform `n_m`-subset, the tolerance set a uniform
/// `m`-subset of it and the target a uniform member of that; marginally the tolerance set
/// is a uniform `m`-subset of all items.
pub fn plant_step(cfg: &SimConfig, rng: &mut ChaCha8Rng, with_subspace: bool) -> PlantedStep {
    let (mut tolerance, mut subspace) = if with_subspace {
        let sub = index::sample(rng, cfg.n, cfg.n_m).into_vec();
        let tol = index::sample(rng, cfg.n_m, cfg.m).into_iter().map(|i| sub[i]).collect::<Vec<_>>();
        (tol, sub)
    } else {
        (index::sample(rng, cfg.n, cfg.m).into_vec(), Vec::new())
    };
    let target = tolerance[0];
    tolerance.sort_unstable();
    subspace.sort_unstable();
    PlantedStep {
        target,
        tolerance,
        subspace,
    }
}

/// Items `0..n` named `i<k>`; no text, no vectors.
struct Items {
    ids: Vec<String>,
}

impl Items {
    fn new(n: usize) -> Self {
        Items {
            ids: (0..n).map(|i| format!("i{i}")).collect(),
        }
    }
}

impl DocSource for Items {
    fn len(&self) -> usize {
        self.ids.len()
    }
    fn doc_id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }
    fn title(&self, _: usize) -> &str {
        ""
    }
    fn abstract_text(&self, _: usize) -> &str {
        ""
    }
    fn vector(&self, _: usize) -> &[f64] {
        &[]
    }
    fn position(&self, id: &str) -> Option<usize> {
        id.strip_prefix('i')?.parse().ok().filter(|&p| p < self.ids.len())
    }
}

struct SearchSpace {
    tree: SearchTree,
    items: Items,
}

impl SearchSpace {
    fn new(n: usize, c: usize) -> Result<Self, SimError> {
        let tree = SearchTree::synthetic(n, c).map_err(|e| SimError::Config(e.to_string()))?;
        Ok(SearchSpace { tree, items: Items::new(n) })
    }

    /// Calls spent by one best-first search for any of `tolerance` (positions in this
    /// space), steered by an oracle aimed at `target`, and whether one was found.
    fn search(
        &self,
        oracle: &PlantedOracle,
        step: usize,
        target: usize,
        tolerance: &[usize],
        budget: usize,
    ) -> Result<(usize, bool), SimError> {
        let query = QueryContext::from_background(format!("step {step}"));
        let hit = |d: usize| tolerance.binary_search(&d).is_ok();
        let r = best_first_until(&self.tree, &self.items, oracle, &query, budget, Some(target), &hit)?;
        Ok(match r.ir_calls_to_target {
            Some(c) => (c, true),
            None => (r.ir_calls, false),
        })
    }
}

fn trial_rng(cfg: &SimConfig, policy: Policy, trial: usize) -> ChaCha8Rng {
    stream_rng(cfg.seed ^ mix64(policy as u64 + 1), trial as u64)
}

fn run_trials<F>(cfg: &SimConfig, policy: Policy, f: F) -> Result<Vec<TrialRecord>, SimError>
where
    F: Fn(&mut ChaCha8Rng, usize) -> Result<TrialRecord, SimError> + Sync,
{
    (0..cfg.trials)
        .into_par_iter()
        .map(|t| f(&mut trial_rng(cfg, policy, t), t))
        .collect()
}

fn finish(cfg: &SimConfig, policy: Policy, records: Vec<TrialRecord>, analytic: Option<f64>) -> SimResult {
    let successes = records.iter().filter(|r| r.success).count();
    let total: usize = records.iter().map(|r| r.calls).sum();
    SimResult {
        policy,
        config: cfg.clone(),
        mean_calls: total as f64 / records.len() as f64,
        successes,
        success_rate: successes as f64 / records.len() as f64,
        analytic_reference: analytic,
        composition_units: cfg.k * cfg.m,
        records,
    }
}

/// k independent uniform draws per attempt; an attempt succeeds when every draw lands in
/// its step's tolerance set. With a budget, attempts repeat until one succeeds or the
/// next would not fit.
pub fn sim_brute_force(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let attempts = cfg.budget.map_or(1, |b| (b / cfg.k).max(1));
    let records = run_trials(cfg, Policy::BruteForce, |rng, _| {
        let world: Vec<PlantedStep> = (0..cfg.k).map(|_| plant_step(cfg, rng, false)).collect();
        for a in 1..=attempts {
            if world.iter().all(|s| s.tolerates(rng.gen_range(0..cfg.n))) {
                return Ok(TrialRecord { calls: a * cfg.k, success: true });
            }
        }
        Ok(TrialRecord {
            calls: attempts * cfg.k,
            success: false,
        })
    })?;
    let p = (cfg.m as f64 / cfg.n as f64).powi(cfg.k as i32);
    Ok(finish(cfg, Policy::BruteForce, records, Some(p)))
}

/// Uniform draws with replacement until a tolerance member turns up, per step.
pub fn sim_sequential_scan(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let budget = cfg.budget.unwrap_or(usize::MAX);
    let records = run_trials(cfg, Policy::SequentialScan, |rng, _| {
        let mut calls = 0usize;
        for _ in 0..cfg.k {
            let step = plant_step(cfg, rng, false);
            loop {
                if calls == budget {
                    return Ok(TrialRecord { calls, success: false });
                }
                calls += 1;
                if step.tolerates(rng.gen_range(0..cfg.n)) {
                    break;
                }
            }
        }
        Ok(TrialRecord { calls, success: true })
    })?;
    let analytic = (cfg.budget.is_none()).then(|| cfg.k as f64 * cfg.n as f64 / cfg.m as f64);
    Ok(finish(cfg, Policy::SequentialScan, records, analytic))
}

fn oracle_for(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Result<PlantedOracle, SimError> {
    PlantedOracle::new(cfg.alpha, rng.gen()).map_err(|e| SimError::Config(e.to_string()))
}

/// Best-first search with a planted oracle over a balanced tree of all `n` items.
pub fn sim_hierarchical(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let space = SearchSpace::new(cfg.n, cfg.c)?;
    let budget = cfg.budget.unwrap_or(usize::MAX);
    let records = run_trials(cfg, Policy::Hierarchical, |rng, _| {
        let oracle = oracle_for(cfg, rng)?;
        let mut calls = 0;
        for j in 0..cfg.k {
            let step = plant_step(cfg, rng, false);
            let (used, found) = space.search(&oracle, j, step.target, &step.tolerance, budget - calls)?;
            calls += used;
            if !found {
                return Ok(TrialRecord { calls, success: false });
            }
        }
        Ok(TrialRecord { calls, success: true })
    })?;
    let analytic = (cfg.alpha == 1.0).then(|| (cfg.k * tree_depth(cfg.n, cfg.c)) as f64);
    Ok(finish(cfg, Policy::Hierarchical, records, analytic))
}

/// One planning call per step, then best-first search restricted to the step's subspace.
pub fn sim_motivation(cfg: &SimConfig) -> Result<SimResult, SimError> {
    cfg.validate()?;
    let space = SearchSpace::new(cfg.n_m, cfg.c)?;
    let budget = cfg.budget.unwrap_or(usize::MAX);
    let records = run_trials(cfg, Policy::Motivation, |rng, _| {
        let oracle = oracle_for(cfg, rng)?;
        let mut calls = 0;
        for j in 0..cfg.k {
            let step = plant_step(cfg, rng, true);
            if calls == budget {
                return Ok(TrialRecord { calls, success: false });
            }
            calls += 1;
            // Leaves of the subspace tree are the subspace items in id order.
            let local = |item: usize| step.subspace.binary_search(&item).expect("tolerance lies in the subspace");
            let tolerance: Vec<usize> = step.tolerance.iter().map(|&i| local(i)).collect();
            let (used, found) = space.search(&oracle, j, local(step.target), &tolerance, budget - calls)?;
            calls += used;
            if !found {
                return Ok(TrialRecord { calls, success: false });
            }
        }
        Ok(TrialRecord { calls, success: true })
    })?;
    let analytic = (cfg.alpha == 1.0).then(|| (cfg.k * (1 + tree_depth(cfg.n_m, cfg.c))) as f64);
    Ok(finish(cfg, Policy::Motivation, records, analytic))
}

pub fn simulate(policy: Policy, cfg: &SimConfig) -> Result<SimResult, SimError> {
    match policy {
        Policy::BruteForce => sim_brute_force(cfg),
        Policy::SequentialScan => sim_sequential_scan(cfg),
        Policy::Hierarchical => sim_hierarchical(cfg),
        Policy::Motivation => sim_motivation(cfg),
    }
}

/// A grid of configurations. `n_m` defaults to `n` for each grid point when empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub policies: Vec<Policy>,
    pub n: Vec<usize>,
    pub k: Vec<usize>,
    pub m: Vec<usize>,
    #[serde(default)]
    pub n_m: Vec<usize>,
    #[serde(default = "default_c")]
    pub c: Vec<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: Vec<f64>,
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub budget: Option<usize>,
    /// Call counts at which cumulative success is reported.
    #[serde(default)]
    pub checkpoints: Vec<usize>,
}

fn default_c() -> Vec<usize> {
    vec![15]
}

fn default_alpha() -> Vec<f64> {
    vec![1.0]
}

impl Sweep {
    /// Every valid grid point; invalid combinations are skipped with a warning.
    pub fn configs(&self) -> Vec<SimConfig> {
        let mut out = Vec::new();
        for &n in &self.n {
            let n_ms = if self.n_m.is_empty() { vec![n] } else { self.n_m.clone() };
            for &k in &self.k {
                for &m in &self.m {
                    for &n_m in &n_ms {
                        for &c in &self.c {
                            for &alpha in &self.alpha {
                                let cfg = SimConfig {
                                    n,
                                    k,
                                    m,
                                    n_m,
                                    c,
                                    alpha,
                                    trials: self.trials,
                                    seed: self.seed,
                                    budget: self.budget,
                                };
                                match cfg.validate() {
                                    Ok(()) => out.push(cfg),
                                    Err(e) => log::warn!("skipping grid point {cfg:?}: {e}"),
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }

    pub fn run(&self) -> Result<Vec<SimResult>, SimError> {
        let mut out = Vec::new();
        for cfg in self.configs() {
            for &p in &self.policies {
                out.push(simulate(p, &cfg)?);
            }
        }
        Ok(out)
    }
}

/// Fraction of trials that had succeeded within each call budget.
pub fn scaling_curve(result: &SimResult, checkpoints: &[usize]) -> Vec<(usize, f64)> {
    let mut succ: Vec<usize> = result.records.iter().filter(|r| r.success).map(|r| r.calls).collect();
    succ.sort_unstable();
    let trials = result.records.len().max(1) as f64;
    checkpoints
        .iter()
        .map(|&c| (c, succ.partition_point(|&x| x <= c) as f64 / trials))
        .collect()
}

pub const RESULT_CSV_HEADER: [&str; 11] = [
    "policy",
    "N",
    "k",
    "M",
    "N_m",
    "c",
    "alpha",
    "trials",
    "mean_calls",
    "success_rate",
    "analytic_reference",
];

fn config_fields(r: &SimResult) -> Vec<String> {
    let c = &r.config;
    vec![
        r.policy.to_string(),
        c.n.to_string(),
        c.k.to_string(),
        c.m.to_string(),
        c.n_m.to_string(),
        c.c.to_string(),
        c.alpha.to_string(),
        c.trials.to_string(),
    ]
}

pub fn write_results_csv<W: std::io::Write>(results: &[SimResult], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(RESULT_CSV_HEADER)?;
    for r in results {
        let mut row = config_fields(r);
        row.push(r.mean_calls.to_string());
        row.push(r.success_rate.to_string());
        row.push(r.analytic_reference.map(|a| a.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: std::io::Write>(results: &[SimResult], checkpoints: &[usize], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<&str> = RESULT_CSV_HEADER[..8].to_vec();
    header.extend(["calls", "cumulative_success"]);
    w.write_record(&header)?;
    for r in results {
        for (calls, frac) in scaling_curve(r, checkpoints) {
            let mut row = config_fields(r);
            row.push(calls.to_string());
            row.push(frac.to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}
