//! Redundancy accounting and the five-phase consensus latency.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{SystemParams, MB};
use crate::tasks::SubtaskSpec;

/// Per-subtask redundancy level `r` and redundancy-state flag `β`.
/// β = 1 is the redundancy-aware case (r < r_max); the replica count that
/// the price and the consensus pipeline see is β + r.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundancyProfile {
    pub r: Vec<u32>,
    pub beta: Vec<bool>,
}

impl RedundancyProfile {
    /// Decodes replica counts `a = β + r` with β = 1 iff a < r_max.
    pub fn from_occupancy(levels: &[u32], r_max: u32) -> Self {
        let beta: Vec<bool> = levels.iter().map(|&a| a < r_max).collect();
        let r = levels
            .iter()
            .zip(&beta)
            .map(|(&a, &b)| a - u32::from(b))
            .collect();
        Self { r, beta }
    }

    /// Every subtask at full replication.
    pub fn full(n: usize, r_max: u32) -> Self {
        Self {
            r: vec![r_max; n],
            beta: vec![false; n],
        }
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn occupancy(&self, i: usize) -> u32 {
        self.r[i] + u32::from(self.beta[i])
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum RedundancyViolation {
    #[error("profile has {profile} entries but there are {subtasks} subtasks")]
    Dimension { profile: usize, subtasks: usize },
    #[error("subtask {index}: beta + r = {occupancy} exceeds r_max = {r_max}")]
    MaxRedundancy { index: usize, occupancy: u32, r_max: u32 },
    #[error("spend {spend} exceeds budget {budget} (first exceeded at subtask {index})")]
    Budget { index: usize, spend: f64, budget: f64 },
}

pub fn check_redundancy(
    profile: &RedundancyProfile,
    subtasks: &[SubtaskSpec],
    params: &SystemParams,
) -> Result<(), RedundancyViolation> {
    if profile.r.len() != subtasks.len() || profile.beta.len() != subtasks.len() {
        return Err(RedundancyViolation::Dimension {
            profile: profile.r.len().max(profile.beta.len()),
            subtasks: subtasks.len(),
        });
    }
    let r_max = params.chain.r_max;
    for i in 0..profile.len() {
        let occ = profile.occupancy(i);
        if occ > r_max {
            return Err(RedundancyViolation::MaxRedundancy {
                index: i,
                occupancy: occ,
                r_max,
            });
        }
    }
    let u = params.chain.price_per_mb;
    let budget = params.chain.budget;
    let mut spend = 0.0;
    let mut first = None;
    for (i, s) in subtasks.iter().enumerate() {
        spend += u * f64::from(profile.occupancy(i)) * s.software_mb();
        if first.is_none() && spend > budget {
            first = Some(i);
        }
    }
    match first {
        Some(index) => Err(RedundancyViolation::Budget { index, spend, budget }),
        None => Ok(()),
    }
}

pub fn bc_spend(profile: &RedundancyProfile, subtasks: &[SubtaskSpec], u: f64) -> f64 {
    subtasks
        .iter()
        .enumerate()
        .map(|(i, s)| u * f64::from(profile.occupancy(i)) * s.software_mb())
        .sum()
}

pub fn mining_incentive(subtask: &SubtaskSpec, incentive_per_mb: f64) -> f64 {
    incentive_per_mb * subtask.data_bytes() / MB
}

/// Latency of each consensus phase, s.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusCost {
    pub broadcast: f64,
    pub pre_prepare: f64,
    pub prepare: f64,
    pub commit: f64,
    pub reply: f64,
    pub total: f64,
}

impl ConsensusCost {
    pub fn phase_sum(&self) -> f64 {
        self.broadcast + self.pre_prepare + self.prepare + self.commit + self.reply
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ChainError {
    #[error("rate must be > 0, got {0}")]
    ZeroRate(f64),
    #[error("node frequency must be > 0, got {0}")]
    ZeroFrequency(f64),
}

/// Latency split by what it scales with. Phase `i` is
/// `uplink_bits[i]/ω + link_bits[i]/ω_link + compute[i]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConsensusParts {
    pub uplink_bits: [f64; 5],
    pub link_bits: [f64; 5],
    pub compute: [f64; 5],
}

impl ConsensusParts {
    pub fn new(subtask: &SubtaskSpec, r: f64, params: &SystemParams) -> Result<Self, ChainError> {
        let c = &params.chain;
        let fk = c.primary_freq;
        if !(fk > 0.0) {
            return Err(ChainError::ZeroFrequency(fk));
        }
        let mut fmin = f64::INFINITY;
        for &f in &c.node_freqs {
            if !(f > 0.0) {
                return Err(ChainError::ZeroFrequency(f));
            }
            fmin = fmin.min(f);
        }
        let d = subtask.data_bits();
        let q = c.block_txs;
        let sig = c.sig_cycles;
        let ver = c.verify_cycles;
        let m1 = f64::from(c.num_eins.saturating_sub(1));
        let n2 = 2.0 * f64::from(c.num_faulty);
        let sv = sig + ver;
        let block = r * q * d;
        // The slowest participant bounds every max over consensus nodes.
        let vote = (n2 * sv + sig + m1 * ver) / fmin;
        Ok(Self {
            uplink_bits: [d, 0.0, 0.0, 0.0, 0.0],
            link_bits: [0.0, block, block, block, block],
            compute: [
                r * q * sv / fk,
                (sig + m1 * ver) / fk + sv * (q + 1.0) / fmin,
                vote,
                vote,
                q * sv / fmin + n2 * q * sv / fk,
            ],
        })
    }

    pub fn evaluate(&self, uplink: f64, link: f64) -> ConsensusCost {
        let ph: Vec<f64> = (0..5)
            .map(|i| {
                let mut t = self.compute[i];
                if self.uplink_bits[i] > 0.0 {
                    t += self.uplink_bits[i] / uplink;
                }
                if self.link_bits[i] > 0.0 {
                    t += self.link_bits[i] / link;
                }
                t
            })
            .collect();
        let mut cost = ConsensusCost {
            broadcast: ph[0],
            pre_prepare: ph[1],
            prepare: ph[2],
            commit: ph[3],
            reply: ph[4],
            total: 0.0,
        };
        cost.total = cost.phase_sum();
        cost
    }
}

/// Five-phase latency for `r` replicas when the user uplink runs at `rate`.
/// The block phases use the configured inter-node link, or `rate` itself
/// when none is configured.
pub fn consensus_latency(
    subtask: &SubtaskSpec,
    r: f64,
    rate: f64,
    params: &SystemParams,
) -> Result<ConsensusCost, ChainError> {
    if !(rate > 0.0) {
        return Err(ChainError::ZeroRate(rate));
    }
    let link = params.chain.link_rate.unwrap_or(rate);
    let parts = ConsensusParts::new(subtask, r, params)?;
    Ok(parts.evaluate(rate, link))
}
