//! Generator-enhanced optimisation under equality constraints.
//!
//! The loop alternates two model constructions. Odd iterations embed the
//! current elites (re-extracting their link charges) and train on softmax
//! weights; even iterations rebuild the uniform valid-space model and train
//! on the elites with uniform weights. Every iteration samples `Q` strings,
//! keeps the `elite_count` cheapest, and records the utility.

use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bitstring::Bitstring;
use crate::builder::{embed_method2, uniform_fill, vanilla_uniform};
use crate::constraints::{ConstraintSystem, SeedSet};
use crate::error::{Error, Result};
use crate::mps::SymMps;
use crate::sample::{sample_batch, utility};
use crate::train::{train, TrainConfig, WeightedTrainingSet};

/// Black-box cost. Implementations must be deterministic within a run.
pub trait CostFunction: Sync {
    /// Costs of a batch, aligned with `xs`.
    fn evaluate(&self, xs: &[Bitstring]) -> Result<Vec<f64>>;
}

/// Wraps a plain function as a [`CostFunction`]; batches run in parallel.
pub struct FnCost<F>(pub F);

impl<F: Fn(&Bitstring) -> f64 + Sync> CostFunction for FnCost<F> {
    fn evaluate(&self, xs: &[Bitstring]) -> Result<Vec<f64>> {
        Ok(xs.par_iter().map(|x| (self.0)(x)).collect())
    }
}

/// Minus the largest gap between two 1-bits with only 0-bits between them.
pub fn negative_separation_cost(x: &Bitstring) -> f64 {
    let mut last: Option<usize> = None;
    let mut best = 0usize;
    for (i, &b) in x.bits().iter().enumerate() {
        if b == 1 {
            if let Some(j) = last {
                best = best.max(i - j);
            }
            last = Some(i);
        }
    }
    -(best as f64)
}

/// The negative-separation cost as a [`CostFunction`].
#[derive(Clone, Copy, Debug, Default)]
pub struct NegativeSeparation;

impl CostFunction for NegativeSeparation {
    fn evaluate(&self, xs: &[Bitstring]) -> Result<Vec<f64>> {
        Ok(xs.par_iter().map(negative_separation_cost).collect())
    }
}

/// The `k` cheapest samples, ties broken lexicographically. Repeats are kept
/// (and merge into larger weights).
pub fn elite_select(samples: &[(Bitstring, f64)], k: usize, temperature: f64) -> Result<WeightedTrainingSet> {
    let elites = cheapest(samples, k)?;
    WeightedTrainingSet::softmax(&elites, temperature)
}

fn cheapest(samples: &[(Bitstring, f64)], k: usize) -> Result<Vec<(Bitstring, f64)>> {
    if k == 0 || samples.is_empty() {
        return Err(Error::InvalidArgument("elite selection needs k > 0 and a nonempty batch".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    sorted.truncate(k);
    Ok(sorted)
}

/// Floor used when all elite costs coincide.
pub const MIN_TEMPERATURE: f64 = 1e-9;

/// Half the population standard deviation of the costs.
pub fn iteration_temperature(costs: &[f64]) -> f64 {
    if costs.is_empty() {
        return MIN_TEMPERATURE;
    }
    let n = costs.len() as f64;
    let mean = costs.iter().sum::<f64>() / n;
    let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / n;
    (0.5 * var.sqrt()).max(MIN_TEMPERATURE)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum TemperaturePolicy {
    /// `T = std(C(elites)) / 2`.
    HalfStd,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeoConfig {
    /// Queries per iteration.
    pub queries: usize,
    pub elite_count: usize,
    pub chi_max: usize,
    pub learning_rate: f64,
    pub sweeps_per_iter: usize,
    pub max_iters: usize,
    /// Stop when `|U_{t+1} − U_t| ≤ epsilon_rel · |U_t|`.
    pub epsilon_rel: f64,
    pub temperature: TemperaturePolicy,
    /// Select elites from the current batch together with the previous elites.
    pub union_elites: bool,
    pub seed: u64,
}

impl Default for GeoConfig {
    fn default() -> Self {
        GeoConfig {
            queries: 10_000,
            elite_count: 100,
            chi_max: 30,
            learning_rate: 0.02,
            sweeps_per_iter: 1,
            max_iters: 10,
            epsilon_rel: 1e-6,
            temperature: TemperaturePolicy::HalfStd,
            union_elites: false,
            seed: 0,
        }
    }
}

impl GeoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.queries == 0 || self.elite_count == 0 || self.elite_count > self.queries {
            return Err(Error::InvalidArgument("need 0 < elite_count ≤ queries".into()));
        }
        if !(self.epsilon_rel >= 0.0) {
            return Err(Error::InvalidArgument("epsilon must be non-negative".into()));
        }
        if let TemperaturePolicy::Fixed(t) = self.temperature {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument("fixed temperature must be positive".into()));
            }
        }
        self.train_config().validate()
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            chi_max: self.chi_max,
            sweeps: self.sweeps_per_iter,
            ..TrainConfig::default()
        }
    }
}

/// Where the valid-space model comes from.
#[derive(Clone, Debug)]
pub enum GeoStart {
    /// An exact valid-space model (e.g. the cardinality MPS); its uniform
    /// skeleton is reused for every rebuild.
    Exact(SymMps),
    /// Known valid strings; rebuilds embed the cumulative pool of seeds and elites.
    Seeds(SeedSet),
    /// Unconstrained baseline: invalid samples cost 0 and are never passed to
    /// the cost function.
    Vanilla,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Initial,
    Embed,
    Rebuild,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterationRecord {
    pub t: usize,
    pub phase: Phase,
    pub temperature: Option<f64>,
    /// NLL on the iteration's training set after training.
    pub nll: Option<f64>,
    pub utility: f64,
    pub batch_best: f64,
    pub best_cost: f64,
    pub validity_rate: f64,
    pub distinct_samples: usize,
    pub bond_dims: Vec<usize>,
    /// Wall time; excluded from reports so they reproduce exactly.
    #[serde(skip)]
    pub elapsed_ms: u128,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIters,
}

#[derive(Clone, Debug, Serialize)]
pub struct GeoOutcome {
    #[serde(serialize_with = "as_string")]
    pub best: Bitstring,
    pub best_cost: f64,
    pub utility_trace: Vec<f64>,
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
    /// Training sets (bitstring, cost) used at iterations `1..`.
    #[serde(skip)]
    pub training_sets: Vec<Vec<(Bitstring, f64)>>,
}

fn as_string<S: serde::Serializer>(x: &Bitstring, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&x.to_string())
}

impl GeoOutcome {
    /// `t,utility,best_cost` rows.
    pub fn utility_csv(&self) -> String {
        let mut out = String::from("t,utility,best_cost\n");
        for r in &self.iterations {
            out.push_str(&format!("{},{},{}\n", r.t, r.utility, r.best_cost));
        }
        out
    }
}

struct Evaluated {
    samples: Vec<(Bitstring, f64)>,
    validity_rate: f64,
    distinct: usize,
}

/// Costs every draw; each distinct valid string is evaluated once.
fn evaluate_batch(cs: &ConstraintSystem, cost: &dyn CostFunction, draws: Vec<Bitstring>) -> Result<Evaluated> {
    let mut distinct: BTreeMap<Bitstring, f64> = BTreeMap::new();
    for x in &draws {
        distinct.entry(x.clone()).or_insert(0.0);
    }
    let valid: Vec<Bitstring> = distinct.keys().filter(|x| cs.is_satisfied(x)).cloned().collect();
    let costs = cost.evaluate(&valid)?;
    if costs.len() != valid.len() {
        return Err(Error::Cost(format!("{} costs for {} bitstrings", costs.len(), valid.len())));
    }
    for (x, c) in valid.iter().zip(costs) {
        if !c.is_finite() {
            return Err(Error::Cost(format!("non-finite cost for {x}")));
        }
        distinct.insert(x.clone(), c);
    }
    let n_valid = draws.iter().filter(|x| cs.is_satisfied(x)).count();
    let validity_rate = if draws.is_empty() { 1.0 } else { n_valid as f64 / draws.len() as f64 };
    let n_distinct = distinct.len();
    let samples = draws.into_iter().map(|x| {
        let c = distinct[&x];
        (x, c)
    });
    Ok(Evaluated { samples: samples.collect(), validity_rate, distinct: n_distinct })
}

fn stream_seed(seed: u64, t: usize) -> u64 {
    seed ^ (t as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Runs the optimisation loop and returns the cheapest string seen.
pub fn geo_run(cs: &ConstraintSystem, cost: &dyn CostFunction, cfg: &GeoConfig, start: GeoStart) -> Result<GeoOutcome> {
    cfg.validate()?;
    let n = cs.num_sites();
    let (uniform, mut pool) = match &start {
        GeoStart::Exact(mps) => {
            if mps.num_sites() != n || mps.flux() != &cs.flux() {
                return Err(Error::InvalidArgument("exact model does not match the constraint system".into()));
            }
            (uniform_fill(mps)?, None)
        }
        GeoStart::Seeds(seeds) => {
            if seeds.is_empty() {
                return Err(Error::EmptySeeds);
            }
            (embed_method2(cs, seeds)?, Some(seeds.clone()))
        }
        GeoStart::Vanilla => (vanilla_uniform(n)?, None),
    };
    let vanilla = matches!(start, GeoStart::Vanilla);
    let tcfg = cfg.train_config();

    let clock = Instant::now();
    let draws = sample_batch(&uniform, cfg.queries, stream_seed(cfg.seed, 0))?.bitstrings;
    let mut batch = evaluate_batch(cs, cost, draws)?;
    let mut u = utility(&batch.samples.iter().map(|s| s.1).collect::<Vec<_>>())?;
    let (mut best, mut best_cost) = argmin(&batch.samples);
    let mut iterations = vec![IterationRecord {
        t: 0,
        phase: Phase::Initial,
        temperature: None,
        nll: None,
        utility: u,
        batch_best: best_cost,
        best_cost,
        validity_rate: batch.validity_rate,
        distinct_samples: batch.distinct,
        bond_dims: uniform.bond_dims(),
        elapsed_ms: clock.elapsed().as_millis(),
    }];
    let mut trace = vec![u];
    let mut training_sets = Vec::new();
    let mut previous: Vec<(Bitstring, f64)> = Vec::new();
    let mut stop = StopReason::MaxIters;

    for t in 1..=cfg.max_iters {
        let clock = Instant::now();
        let candidates: Vec<(Bitstring, f64)> = if cfg.union_elites {
            batch.samples.iter().cloned().chain(previous.iter().cloned()).collect()
        } else {
            batch.samples.clone()
        };
        let elites = cheapest(&candidates, cfg.elite_count)?;
        let costs: Vec<f64> = elites.iter().map(|e| e.1).collect();
        let temperature = match cfg.temperature {
            TemperaturePolicy::HalfStd => iteration_temperature(&costs),
            TemperaturePolicy::Fixed(v) => v,
        };
        let valid_elites: Vec<Bitstring> = elites.iter().map(|e| e.0.clone()).filter(|x| cs.is_satisfied(x)).collect();
        if let Some(p) = pool.as_mut() {
            p.extend(cs, valid_elites.iter().cloned())?;
        }

        let embed = t % 2 == 1;
        let (model, ts, phase) = if embed {
            let model = if vanilla {
                uniform.clone()
            } else {
                let seeds = SeedSet::new(cs, valid_elites.iter().cloned())?;
                if seeds.is_empty() {
                    return Err(Error::EmptySeeds);
                }
                embed_method2(cs, &seeds)?
            };
            (model, WeightedTrainingSet::softmax(&elites, temperature)?, Phase::Embed)
        } else {
            let model = match &pool {
                Some(p) => embed_method2(cs, p)?,
                None => uniform.clone(),
            };
            let ts = WeightedTrainingSet::uniform(elites.iter().map(|e| e.0.clone()))?;
            (model, ts, Phase::Rebuild)
        };
        let (trained, losses) = train(&model, &ts, &tcfg)?;

        let draws = sample_batch(&trained, cfg.queries, stream_seed(cfg.seed, t))?.bitstrings;
        batch = evaluate_batch(cs, cost, draws)?;
        let next_u = utility(&batch.samples.iter().map(|s| s.1).collect::<Vec<_>>())?;
        let (batch_arg, batch_best) = argmin(&batch.samples);
        if batch_best < best_cost || (batch_best == best_cost && batch_arg < best) {
            best = batch_arg;
            best_cost = batch_best;
        }
        iterations.push(IterationRecord {
            t,
            phase,
            temperature: Some(temperature),
            nll: losses.last().copied().filter(|v| v.is_finite()),
            utility: next_u,
            batch_best,
            best_cost,
            validity_rate: batch.validity_rate,
            distinct_samples: batch.distinct,
            bond_dims: trained.bond_dims(),
            elapsed_ms: clock.elapsed().as_millis(),
        });
        trace.push(next_u);
        training_sets.push(elites.clone());
        previous = elites;
        let converged = (next_u - u).abs() <= cfg.epsilon_rel * u.abs();
        u = next_u;
        if converged {
            stop = StopReason::Converged;
            break;
        }
    }
    Ok(GeoOutcome { best, best_cost, utility_trace: trace, iterations, stop, training_sets })
}

fn argmin(samples: &[(Bitstring, f64)]) -> (Bitstring, f64) {
    samples
        .iter()
        .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
        .map(|(x, c)| (x.clone(), *c))
        .expect("batches are nonempty")
}
