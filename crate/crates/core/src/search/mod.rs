//! Staged hardware-aware architecture search over UIB stages.
//!
//! Every phase either enumerates its slice of the space (when the budget
//! covers it), runs regularized evolution, or falls back to random sampling
//! when the budget is smaller than one population.

mod config;
mod oracle;
mod space;

pub use config::{Budgets, OracleConfig, SearchConfig, SearchMode};
pub use oracle::{QualityOracle, SyntheticCapacity, TableLookup};
pub use space::{Arch, BlockArch, DwChoice, Phase, SearchSpace, StageArch, StageSpace, PINNED_EXPANSION};

use std::collections::VecDeque;
use std::io;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cost::{network_cost, CostReport, DtypeWidths};
use crate::ir::{emit_netspec, IrError, NetworkSpec};
use crate::metrics::geo_mean;
use crate::roofline::{predict_latency, HardwareTarget};
use space::Encoding;

pub const POPULATION: usize = 32;
pub const TOURNAMENT: usize = 4;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("empty search space: {0}")]
    EmptySpace(String),
    #[error("invalid search config: {0}")]
    InvalidConfig(String),
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("candidate failed shape validation: {0}")]
    Invariant(#[from] IrError),
}

/// What a candidate's cost is measured in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CostFn {
    /// Total MACs.
    Macs,
    /// Roofline latency on one target, ms.
    Roofline { target: HardwareTarget },
    /// Geometric mean of roofline latencies over several targets, ms.
    GeoMean { targets: Vec<HardwareTarget> },
}

impl CostFn {
    pub fn evaluate(&self, net: &NetworkSpec, int8: &CostReport) -> Result<f64, SearchError> {
        let latency_ms = |t: &HardwareTarget| -> Result<f64, SearchError> {
            let report = if t.dtype_widths == int8.dtype_widths {
                int8.clone()
            } else {
                network_cost(net, t.dtype_widths)?
            };
            Ok(predict_latency(&report, t).total_s * 1e3)
        };
        match self {
            CostFn::Macs => Ok(int8.total_macs as f64),
            CostFn::Roofline { target } => latency_ms(target),
            CostFn::GeoMean { targets } => {
                let lats = targets.iter().map(latency_ms).collect::<Result<Vec<_>, _>>()?;
                geo_mean(&lats).map_err(|e| SearchError::InvalidConfig(e.to_string()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardConfig {
    pub cost_target: f64,
    /// Penalty weight, negative.
    pub beta: f64,
    pub cost: CostFn,
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if !(self.beta < 0.0 && self.beta.is_finite()) {
            return Err(SearchError::InvalidConfig(format!(
                "beta must be < 0, got {}",
                self.beta
            )));
        }
        if !(self.cost_target > 0.0 && self.cost_target.is_finite()) {
            return Err(SearchError::InvalidConfig(format!(
                "cost_target must be > 0, got {}",
                self.cost_target
            )));
        }
        if let CostFn::GeoMean { targets } = &self.cost {
            if targets.is_empty() {
                return Err(SearchError::InvalidConfig("geo_mean needs at least one target".into()));
            }
        }
        Ok(())
    }
}

/// `quality + beta * |cost / cost_target - 1|`.
pub fn reward(quality: f64, cost: f64, cfg: &RewardConfig) -> f64 {
    quality + cfg.beta * (cost / cfg.cost_target - 1.0).abs()
}

/// A realized, scored architecture.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Candidate {
    pub arch: Arch,
    pub net: NetworkSpec,
    pub report: CostReport,
    pub hash: String,
    pub quality: f64,
    pub cost: f64,
    pub reward: f64,
}

/// First 16 hex digits of the SHA-256 of the network's JSON form.
pub fn candidate_hash(net: &NetworkSpec) -> String {
    let digest = Sha256::digest(emit_netspec(net).as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogEntry {
    pub hash: String,
    pub quality: f64,
    pub cost: f64,
    pub reward: f64,
    pub generation: usize,
    pub phase: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub best: Candidate,
    pub log: Vec<LogEntry>,
}

impl SearchOutcome {
    /// Columns: hash, quality, cost, reward, generation, phase.
    pub fn write_log_csv<W: io::Write>(&self, writer: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["hash", "quality", "cost", "reward", "generation", "phase"])?;
        for e in &self.log {
            w.write_record([
                e.hash.clone(),
                format!("{:.12e}", e.quality),
                format!("{:.12e}", e.cost),
                format!("{:.12e}", e.reward),
                e.generation.to_string(),
                e.phase.clone(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Everything a search phase needs to score candidates.
pub struct Evaluator<'a> {
    pub space: &'a SearchSpace,
    pub oracle: &'a dyn QualityOracle,
    pub reward: &'a RewardConfig,
}

impl Evaluator<'_> {
    pub fn evaluate(&self, arch: &Arch) -> Result<Candidate, SearchError> {
        let mut net = self.space.build(arch);
        let report = network_cost(&net, DtypeWidths::INT8)?;
        let hash = candidate_hash(&net);
        net.name = format!("{}-{hash}", self.space.name);
        let quality = self.oracle.quality(&net, &report)?;
        let cost = self.reward.cost.evaluate(&net, &report)?;
        Ok(Candidate {
            arch: arch.clone(),
            reward: reward(quality, cost, self.reward),
            net,
            report,
            hash,
            quality,
            cost,
        })
    }
}

fn stream_id(phase: &Phase) -> u64 {
    match phase {
        Phase::Coarse => 1,
        Phase::Fine { .. } => 2,
        Phase::Expansion { .. } => 3,
        Phase::Joint => 4,
    }
}

fn random_genes(enc: &Encoding, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut g: Vec<usize> = (0..enc.len())
        .map(|i| rng.random_range(0..enc.cardinality(i)))
        .collect();
    enc.canonicalize(&mut g);
    g
}

/// Resample one active gene to a different value.
fn mutate(enc: &Encoding, parent: &[usize], rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut child = parent.to_vec();
    let free: Vec<usize> = (0..enc.len())
        .filter(|&i| enc.cardinality(i) > 1 && enc.is_active(parent, i))
        .collect();
    if free.is_empty() {
        return child;
    }
    let i = free[rng.random_range(0..free.len())];
    let card = enc.cardinality(i);
    let shift = rng.random_range(1..card);
    child[i] = (child[i] + shift) % card;
    enc.canonicalize(&mut child);
    child
}

fn run_phase(eval: &Evaluator, phase: Phase, budget: usize, seed: u64) -> Result<SearchOutcome, SearchError> {
    eval.space.validate()?;
    eval.reward.validate()?;
    if budget == 0 {
        return Err(SearchError::InvalidConfig("search budget must be >= 1".into()));
    }
    let label = phase.label();
    let enc = Encoding::new(eval.space, phase.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(&phase));

    let score = |batch: &[Vec<usize>]| -> Result<Vec<Candidate>, SearchError> {
        batch.par_iter().map(|g| eval.evaluate(&enc.decode(g))).collect()
    };

    let mut log = Vec::new();
    let mut best: Option<Candidate> = None;
    let mut record = |cands: Vec<Candidate>, generation: usize, log: &mut Vec<LogEntry>| -> Vec<f64> {
        let mut rewards = Vec::with_capacity(cands.len());
        for c in cands {
            log.push(LogEntry {
                hash: c.hash.clone(),
                quality: c.quality,
                cost: c.cost,
                reward: c.reward,
                generation,
                phase: label.to_string(),
            });
            rewards.push(c.reward);
            if best.as_ref().is_none_or(|b| c.reward > b.reward) {
                best = Some(c);
            }
        }
        rewards
    };

    if enc.size() <= budget as u128 {
        let all = enc.enumerate();
        let cands = score(&all)?;
        record(cands, 0, &mut log);
    } else if budget < POPULATION {
        let batch: Vec<Vec<usize>> = (0..budget).map(|_| random_genes(&enc, &mut rng)).collect();
        let cands = score(&batch)?;
        record(cands, 0, &mut log);
    } else {
        let init: Vec<Vec<usize>> = (0..POPULATION).map(|_| random_genes(&enc, &mut rng)).collect();
        let rewards = record(score(&init)?, 0, &mut log);
        let mut population: VecDeque<(Vec<usize>, f64)> = init.into_iter().zip(rewards).collect();
        let mut remaining = budget - POPULATION;
        let mut generation = 1;
        while remaining > 0 {
            let k = remaining.min(POPULATION);
            let children: Vec<Vec<usize>> = (0..k)
                .map(|_| {
                    let mut winner = rng.random_range(0..population.len());
                    for _ in 1..TOURNAMENT {
                        let j = rng.random_range(0..population.len());
                        if population[j].1 > population[winner].1 {
                            winner = j;
                        }
                    }
                    mutate(&enc, &population[winner].0, &mut rng)
                })
                .collect();
            let rewards = record(score(&children)?, generation, &mut log);
            for (g, r) in children.into_iter().zip(rewards) {
                population.push_back((g, r));
                population.pop_front();
            }
            remaining -= k;
            generation += 1;
        }
    }
    let best = best.expect("at least one candidate is evaluated");
    propagate_check(&best)?;
    Ok(SearchOutcome { best, log })
}

fn propagate_check(c: &Candidate) -> Result<(), SearchError> {
    crate::ir::propagate_shapes(&c.net)?;
    Ok(())
}

/// Search depths and filters with every block pinned to a 3x3 IB.
pub fn coarse_search(eval: &Evaluator, budget: usize, seed: u64) -> Result<SearchOutcome, SearchError> {
    run_phase(eval, Phase::Coarse, budget, seed)
}

/// Search each block's depthwise options with depths and filters taken from
/// `frozen`.
pub fn fine_search(eval: &Evaluator, frozen: &Arch, budget: usize, seed: u64) -> Result<SearchOutcome, SearchError> {
    check_frozen(eval.space, frozen)?;
    run_phase(eval, Phase::Fine { frozen: frozen.clone() }, budget, seed)
}

/// Search each block's expansion factor with everything else from `frozen`.
pub fn expansion_search(
    eval: &Evaluator,
    frozen: &Arch,
    budget: usize,
    seed: u64,
) -> Result<SearchOutcome, SearchError> {
    check_frozen(eval.space, frozen)?;
    run_phase(eval, Phase::Expansion { frozen: frozen.clone() }, budget, seed)
}

fn check_frozen(space: &SearchSpace, frozen: &Arch) -> Result<(), SearchError> {
    if frozen.stages.len() != space.stages.len() {
        return Err(SearchError::InvalidConfig(format!(
            "frozen architecture has {} stages, space has {}",
            frozen.stages.len(),
            space.stages.len()
        )));
    }
    Ok(())
}

/// Search the joint space of depths, filters, depthwise options and expansions.
pub fn one_stage_search(eval: &Evaluator, budget: usize, seed: u64) -> Result<SearchOutcome, SearchError> {
    run_phase(eval, Phase::Joint, budget, seed)
}

/// Coarse search, then fine search seeded with the coarse winner, then an
/// optional expansion search when `budgets.expansion > 0`. The log holds
/// every phase's evaluations in order.
pub fn two_stage_search(eval: &Evaluator, budgets: &Budgets, seed: u64) -> Result<SearchOutcome, SearchError> {
    let coarse = coarse_search(eval, budgets.coarse, seed)?;
    let fine = fine_search(eval, &coarse.best.arch, budgets.fine, seed)?;
    let mut log = coarse.log;
    log.extend(fine.log);
    let mut best = fine.best;
    if budgets.expansion > 0 {
        let exp = expansion_search(eval, &best.arch, budgets.expansion, seed)?;
        log.extend(exp.log);
        best = exp.best;
    }
    Ok(SearchOutcome { best, log })
}
