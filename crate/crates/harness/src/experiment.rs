//! Single runs, seeded sweeps, horizon sweeps and hyperparameter search.

use std::collections::BTreeMap;
use std::time::Instant;

use pbrl_core::algorithms::{run_algorithm, RunOutput};
use pbrl_core::explorer::NavigatorConfig;
use pbrl_core::mdp::{optimal_policy, policy_value, LayeredMdp, NonstationaryPolicy};
use pbrl_core::preference::Oracle;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{AlgoSpec, EnvSpec, ExperimentConfig};
use crate::HarnessError;

/// Suboptimality below this counts as recovering an optimal policy.
pub const EXACT_TOL: f64 = 1e-9;

/// One evaluated run. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub env: String,
    pub algo: String,
    pub model: String,
    /// Temperature or slope of the preference model, if it has one.
    pub c: Option<f64>,
    pub budget: u64,
    pub seed: u64,
    /// `v*(s0) - v^π(s0)`.
    pub subopt: f64,
    pub steps: u64,
    pub comparisons: u64,
    pub wall_ms: u64,
}

/// A record together with the run that produced it.
#[derive(Clone, Debug)]
pub struct RunResult {
    pub record: ExperimentRecord,
    pub policy: NonstationaryPolicy,
    /// Absent for the random baseline.
    pub output: Option<RunOutput>,
}

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the comparison noise for a run seeded with `seed`.
pub fn oracle_seed(seed: u64) -> u64 {
    mix(seed ^ 0x6F72_6163_6C65)
}

/// Seed of the random baseline's policy draw.
pub fn baseline_seed(seed: u64) -> u64 {
    mix(seed ^ 0x7261_6E64_6F6D)
}

pub fn suboptimality(mdp: &LayeredMdp, policy: &NonstationaryPolicy) -> f64 {
    optimal_policy(mdp).1 - policy_value(mdp, policy, mdp.start_state())
}

/// Runs `algo` on a prepared environment.
pub fn run_on(
    config: &ExperimentConfig,
    algo: &AlgoSpec,
    mdp: &LayeredMdp,
    budget: u64,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let start = Instant::now();
    let (policy, output) = match algo.algo_config(budget, mdp.state_count(), seed) {
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(baseline_seed(seed));
            (NonstationaryPolicy::uniform_random(mdp.layer_sizes(), mdp.action_count(), &mut rng), None)
        }
        Some(algo_config) => {
            let model = config.model.build(None)?;
            let mut oracle = Oracle::new(model, mdp, oracle_seed(seed))?;
            let out = run_algorithm(mdp, &mut oracle, &algo_config)?;
            (out.policy.clone(), Some(out))
        }
    };
    let wall_ms = if config.record_wall_time { start.elapsed().as_millis() as u64 } else { 0 };
    let counters = output.as_ref().map(|o| &o.counters);
    let record = ExperimentRecord {
        env: config.env.id(),
        algo: algo.id(),
        model: config.model.label().into(),
        c: config.model.parameter(),
        budget,
        seed,
        subopt: suboptimality(mdp, &policy),
        steps: counters.map_or(0, |c| c.env_steps),
        comparisons: counters.map_or(0, |c| c.comparisons),
        wall_ms,
    };
    Ok(RunResult { record, policy, output })
}

/// Builds the environment for `seed` and runs `algo` on it.
pub fn run_one_detailed(
    config: &ExperimentConfig,
    algo: &AlgoSpec,
    budget: u64,
    seed: u64,
) -> Result<RunResult, HarnessError> {
    let mdp = config.env.build(config.env_seed_for(seed))?;
    run_on(config, algo, &mdp, budget, seed)
}

/// Runs the first configured algorithm.
pub fn run_one(config: &ExperimentConfig, budget: u64, seed: u64) -> Result<ExperimentRecord, HarnessError> {
    let algo = config.algorithms.first().ok_or_else(|| HarnessError::Config("no algorithms configured".into()))?;
    Ok(run_one_detailed(config, algo, budget, seed)?.record)
}

/// Mean and spread of one (algorithm, model, budget) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub algo: String,
    pub model: String,
    pub c: Option<f64>,
    pub budget: u64,
    pub runs: u64,
    pub mean_subopt: f64,
    /// Sample standard deviation (zero for a single run).
    pub std_subopt: f64,
    pub exact_fraction: f64,
    pub mean_steps: f64,
    pub mean_comparisons: f64,
}

impl SummaryRow {
    /// Standard error of the mean suboptimality.
    pub fn std_error(&self) -> f64 {
        self.std_subopt / (self.runs as f64).sqrt()
    }
}

/// Sample mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

type GroupKey = (String, String, String, Option<u64>, u64);
type Cell = (usize, u64, u64, Result<ExperimentRecord, HarnessError>);

/// Groups records by (env, algorithm, model, parameter, budget), in first-seen order.
pub fn summarize(records: &[ExperimentRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<GroupKey> = Vec::new();
    let mut groups: BTreeMap<GroupKey, Vec<&ExperimentRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.env.clone(), r.algo.clone(), r.model.clone(), r.c.map(f64::to_bits), r.budget);
        let slot = groups.entry(key.clone()).or_default();
        if slot.is_empty() {
            order.push(key);
        }
        slot.push(r);
    }
    order
        .into_iter()
        .map(|key| {
            let rs = &groups[&key];
            let subs: Vec<f64> = rs.iter().map(|r| r.subopt).collect();
            let (mean, std) = mean_std(&subs);
            let n = rs.len() as f64;
            SummaryRow {
                env: key.0,
                algo: key.1,
                model: key.2,
                c: key.3.map(f64::from_bits),
                budget: key.4,
                runs: rs.len() as u64,
                mean_subopt: mean,
                std_subopt: std,
                exact_fraction: subs.iter().filter(|&&s| s.abs() < EXACT_TOL).count() as f64 / n,
                mean_steps: rs.iter().map(|r| r.steps as f64).sum::<f64>() / n,
                mean_comparisons: rs.iter().map(|r| r.comparisons as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunFailure {
    pub algo: String,
    pub budget: u64,
    pub seed: u64,
    pub error: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summary: Vec<SummaryRow>,
    pub failures: Vec<RunFailure>,
}

/// Budgets of `config` resolved against its environment's state count.
pub fn resolved_budgets(config: &ExperimentConfig) -> Result<Vec<u64>, HarnessError> {
    let mdp = config.env.build(config.env_seed_for(config.seed(0)))?;
    Ok(config.budgets.resolve(mdp.state_count()))
}

/// Every algorithm × budget × repetition, run in parallel. Failed runs are
/// reported and skipped.
pub fn sweep(config: &ExperimentConfig) -> Result<SweepOutcome, HarnessError> {
    config.validate()?;
    let budgets = resolved_budgets(config)?;
    let seeds: Vec<u64> = (0..config.repetitions).map(|r| config.seed(r)).collect();
    let per_seed: Vec<Vec<Cell>> = seeds
        .par_iter()
        .map(|&seed| {
            let mdp = config.env.build(config.env_seed_for(seed));
            let mut out = Vec::new();
            for (ai, algo) in config.algorithms.iter().enumerate() {
                for &budget in &budgets {
                    let rec = match &mdp {
                        Ok(mdp) => run_on(config, algo, mdp, budget, seed).map(|r| r.record),
                        Err(e) => Err(HarnessError::Config(e.to_string())),
                    };
                    out.push((ai, budget, seed, rec));
                }
            }
            out
        })
        .collect();
    let mut cells: Vec<_> = per_seed.into_iter().flatten().collect();
    let budget_rank = |b: u64| budgets.iter().position(|&x| x == b).unwrap_or(usize::MAX);
    cells.sort_by_key(|(ai, b, seed, _)| (*ai, budget_rank(*b), *seed));
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (ai, budget, seed, rec) in cells {
        match rec {
            Ok(r) => records.push(r),
            Err(e) => failures.push(RunFailure { algo: config.algorithms[ai].id(), budget, seed, error: e.to_string() }),
        }
    }
    let summary = summarize(&records);
    Ok(SweepOutcome { records, summary, failures })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonRow {
    pub grid_size: usize,
    pub horizon: usize,
    pub states: usize,
    pub summary: SummaryRow,
}

/// Repeats the sweep on square GridWorlds of each size in `sizes`.
pub fn h_sweep(config: &ExperimentConfig, sizes: &[usize]) -> Result<Vec<HorizonRow>, HarnessError> {
    let EnvSpec::Gridworld { blocks, block_reward, .. } = config.env else {
        return Err(HarnessError::Config("horizon sweeps need a gridworld environment".into()));
    };
    let mut rows = Vec::new();
    for &size in sizes {
        let mut c = config.clone();
        c.env = EnvSpec::Gridworld { size, blocks, block_reward };
        let mdp = c.env.build(c.env_seed_for(c.seed(0)))?;
        let outcome = sweep(&c)?;
        if let Some(f) = outcome.failures.first() {
            return Err(HarnessError::Config(format!("grid size {size}: {}", f.error)));
        }
        for summary in outcome.summary {
            rows.push(HorizonRow { grid_size: size, horizon: mdp.horizon(), states: mdp.state_count(), summary });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub lr: Vec<f64>,
    pub ucb_ratio: Vec<f64>,
    pub btm_gamma: Vec<f64>,
    pub explore_prob: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            lr: vec![0.1, 0.3, 1.0],
            ucb_ratio: vec![0.01, 0.1, 1.0],
            btm_gamma: vec![0.2, 0.5, 1.0],
            explore_prob: vec![0.05, 0.1, 0.2, 0.5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HyperPoint {
    pub lr: f64,
    pub ucb_ratio: f64,
    pub btm_gamma: f64,
    pub explore_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    #[serde(flatten)]
    pub point: HyperPoint,
    pub runs: u64,
    pub mean_subopt: f64,
    pub std_subopt: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: HyperPoint,
    pub table: Vec<GridRow>,
}

impl HyperGrid {
    /// All points in lexicographic order, each axis sorted ascending.
    pub fn points(&self) -> Vec<HyperPoint> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        let (lr, ucb, gamma, explore) =
            (sorted(&self.lr), sorted(&self.ucb_ratio), sorted(&self.btm_gamma), sorted(&self.explore_prob));
        let mut out = Vec::new();
        for &lr in &lr {
            for &ucb_ratio in &ucb {
                for &btm_gamma in &gamma {
                    for &explore_prob in &explore {
                        out.push(HyperPoint { lr, ucb_ratio, btm_gamma, explore_prob });
                    }
                }
            }
        }
        out
    }
}

/// Evaluates every grid point by mean suboptimality over all of `config`'s
/// budgets, repetitions and non-baseline algorithms. Ties go to the
/// lexicographically first point.
pub fn grid_search(config: &ExperimentConfig, grid: &HyperGrid) -> Result<GridSearchResult, HarnessError> {
    let points = grid.points();
    if points.is_empty() {
        return Err(HarnessError::Config("hyperparameter grid is empty".into()));
    }
    let mut base = config.clone();
    base.algorithms.retain(|a| a.name != crate::config::AlgoName::Random);
    if base.algorithms.is_empty() {
        return Err(HarnessError::Config("grid search needs a learning algorithm".into()));
    }
    let mut table = Vec::with_capacity(points.len());
    for point in points {
        let mut c = base.clone();
        for a in &mut c.algorithms {
            a.navigator = NavigatorConfig {
                learning_rate: point.lr,
                ucb_ratio: point.ucb_ratio,
                random_explore_prob: point.explore_prob,
                delta: a.navigator.delta,
            };
            a.btm_gamma = point.btm_gamma;
        }
        let outcome = sweep(&c)?;
        if let Some(f) = outcome.failures.first() {
            return Err(HarnessError::Config(f.error.clone()));
        }
        let subs: Vec<f64> = outcome.records.iter().map(|r| r.subopt).collect();
        let (mean, std) = mean_std(&subs);
        table.push(GridRow { point, runs: subs.len() as u64, mean_subopt: mean, std_subopt: std });
    }
    let mut best = &table[0];
    for row in &table[1..] {
        if row.mean_subopt < best.mean_subopt {
            best = row;
        }
    }
    Ok(GridSearchResult { best: best.point, table })
}
