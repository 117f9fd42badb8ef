//! Delay, energy and weighted cost for local, FIN and EIN execution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chain::{consensus_latency, ChainError, ConsensusParts};
use crate::config::SystemParams;
use crate::tasks::SubtaskSpec;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dest {
    Fin,
    Ein,
}

impl Dest {
    pub const ALL: [Dest; 2] = [Dest::Fin, Dest::Ein];

    pub fn cpu(self, params: &SystemParams) -> f64 {
        match self {
            Dest::Fin => params.cpu_fin,
            Dest::Ein => params.cpu_ein,
        }
    }

    pub fn cache(self, params: &SystemParams) -> f64 {
        match self {
            Dest::Fin => params.cache_fin,
            Dest::Ein => params.cache_ein,
        }
    }

    pub fn index(self) -> usize {
        match self {
            Dest::Fin => 0,
            Dest::Ein => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ExecutionCost {
    pub delay: f64,
    pub energy: f64,
    pub cost: f64,
}

impl ExecutionCost {
    pub fn weighted(delay: f64, energy: f64, params: &SystemParams) -> Self {
        Self {
            delay,
            energy,
            cost: params.delay_weight * delay + params.energy_weight * energy,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum CostError {
    #[error("rate must be > 0, got {0}")]
    ZeroRate(f64),
    #[error(transparent)]
    Chain(#[from] ChainError),
    #[error("decision cell {index} has channel {mode} but only {channels} channels exist")]
    InvalidCell { index: usize, mode: u32, channels: usize },
    #[error("{decisions} decisions, {betas} redundancy flags and {costs} cost rows must match")]
    Dimension { decisions: usize, betas: usize, costs: usize },
}

pub fn local_cost(subtask: &SubtaskSpec, params: &SystemParams) -> ExecutionCost {
    let delay = subtask.load / params.cpu_local;
    let energy = params.energy_coeff * params.cpu_local * params.cpu_local * subtask.load;
    ExecutionCost::weighted(delay, energy, params)
}

/// Pending service times at one destination, oldest first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueueState {
    pub dest: Dest,
    pub pending: VecDeque<f64>,
}

impl QueueState {
    pub fn new(dest: Dest) -> Self {
        Self {
            dest,
            pending: VecDeque::new(),
        }
    }

    pub fn with_pending(dest: Dest, pending: &[f64]) -> Self {
        Self {
            dest,
            pending: pending.iter().copied().collect(),
        }
    }

    pub fn total(&self) -> f64 {
        self.pending.iter().sum()
    }

    pub fn push(&mut self, service: f64) {
        debug_assert!(service >= 0.0);
        self.pending.push_back(service);
    }

    /// Serves `elapsed` seconds of work in FIFO order.
    pub fn drain(&mut self, elapsed: f64) {
        let mut left = elapsed;
        while let Some(front) = self.pending.front_mut() {
            if *front <= left {
                left -= *front;
                self.pending.pop_front();
            } else {
                *front -= left;
                break;
            }
        }
    }
}

/// Queue delay for service time `s` with an explicit arrival rate.
/// Utilization u = arrival / (1 / (Σ pending + s)) when the queue is
/// nonempty, else 1; delay is Σ pending + s when u >= 1, otherwise
/// u²/(1-u)·s.
pub fn queue_delay_with_arrival(queue: &QueueState, s: f64, arrival: f64) -> f64 {
    let backlog = queue.total();
    let u = if queue.pending.is_empty() {
        1.0
    } else {
        arrival * (backlog + s)
    };
    if u >= 1.0 {
        backlog + s
    } else {
        u * u / (1.0 - u) * s
    }
}

/// Queue delay with arrival rate 1/s. A nonempty queue then always has
/// u >= 1, so the result is Σ pending + s.
pub fn queue_delay(queue: &QueueState, s: f64) -> f64 {
    queue_delay_with_arrival(queue, s, 1.0 / s)
}

/// Cost of running `subtask` at `dest` with `replicas` chain copies.
pub fn remote_cost(
    dest: Dest,
    subtask: &SubtaskSpec,
    rate: f64,
    replicas: f64,
    queue: &QueueState,
    params: &SystemParams,
) -> Result<ExecutionCost, CostError> {
    if !(rate > 0.0) {
        return Err(CostError::ZeroRate(rate));
    }
    let exec = subtask.load / dest.cpu(params);
    let tx = subtask.data_bits() / rate;
    let mut delay = exec + tx;
    if params.chain.enabled {
        delay += consensus_latency(subtask, replicas, rate, params)?.total;
    }
    if params.queue_enabled {
        delay += queue_delay(queue, exec + tx);
    }
    let energy = params.tx_power * tx;
    Ok(ExecutionCost::weighted(delay, energy, params))
}

pub fn fin_cost(
    subtask: &SubtaskSpec,
    rate: f64,
    replicas: f64,
    queue_fin: &QueueState,
    params: &SystemParams,
) -> Result<ExecutionCost, CostError> {
    remote_cost(Dest::Fin, subtask, rate, replicas, queue_fin, params)
}

pub fn ein_cost(
    subtask: &SubtaskSpec,
    rate: f64,
    replicas: f64,
    queue_ein: &QueueState,
    params: &SystemParams,
) -> Result<ExecutionCost, CostError> {
    remote_cost(Dest::Ein, subtask, rate, replicas, queue_ein, params)
}

/// A remote cost written as a function of the uplink rate ω:
/// delay = `delay_bits/ω + delay_const`, energy = `energy_bits/ω`.
/// Queue backlog is frozen for the slot, which keeps this form exact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RemoteCoef {
    pub delay_bits: f64,
    pub delay_const: f64,
    pub energy_bits: f64,
    pub cost_bits: f64,
    pub cost_const: f64,
}

impl RemoteCoef {
    pub fn new(
        dest: Dest,
        subtask: &SubtaskSpec,
        replicas: f64,
        backlog: f64,
        params: &SystemParams,
    ) -> Result<Self, CostError> {
        let d = subtask.data_bits();
        let exec = subtask.load / dest.cpu(params);
        let mut delay_bits = d;
        let mut delay_const = exec;
        if params.chain.enabled {
            let parts = ConsensusParts::new(subtask, replicas, params)?;
            delay_bits += parts.uplink_bits.iter().sum::<f64>();
            let link: f64 = parts.link_bits.iter().sum();
            match params.chain.link_rate {
                Some(rate) => delay_const += link / rate,
                None => delay_bits += link,
            }
            delay_const += parts.compute.iter().sum::<f64>();
        }
        if params.queue_enabled {
            delay_bits += d;
            delay_const += backlog + exec;
        }
        let energy_bits = params.tx_power * d;
        Ok(Self {
            delay_bits,
            delay_const,
            energy_bits,
            cost_bits: params.delay_weight * delay_bits + params.energy_weight * energy_bits,
            cost_const: params.delay_weight * delay_const,
        })
    }

    pub fn cost(&self, rate: f64) -> f64 {
        self.cost_bits / rate + self.cost_const
    }

    pub fn delay(&self, rate: f64) -> f64 {
        self.delay_bits / rate + self.delay_const
    }
}

/// Offloading choice for one subtask: mode 0 is local, otherwise the
/// 1-based uplink channel; `dest` only matters when mode >= 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct OffloadDecisionCell {
    pub mode: u32,
    pub dest: Dest,
}

impl OffloadDecisionCell {
    pub const LOCAL: Self = Self {
        mode: 0,
        dest: Dest::Fin,
    };

    pub fn remote(channel: u32, dest: Dest) -> Self {
        Self { mode: channel, dest }
    }

    pub fn is_local(&self) -> bool {
        self.mode == 0
    }
}

/// Every candidate cost for one subtask. `*_full` is at r = r_max (β = 0),
/// `*_partial` at the chosen level (β = 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchCosts {
    pub local: f64,
    pub fin_full: f64,
    pub fin_partial: f64,
    pub ein_full: f64,
    pub ein_partial: f64,
}

/// Per-user slot cost: each subtask is charged exactly one branch.
pub fn slot_cost(
    decisions: &[OffloadDecisionCell],
    beta: &[bool],
    costs: &[BranchCosts],
    channels: usize,
) -> Result<f64, CostError> {
    if decisions.len() != beta.len() || decisions.len() != costs.len() {
        return Err(CostError::Dimension {
            decisions: decisions.len(),
            betas: beta.len(),
            costs: costs.len(),
        });
    }
    let mut total = 0.0;
    for (i, ((cell, &b), c)) in decisions.iter().zip(beta).zip(costs).enumerate() {
        if cell.mode as usize > channels {
            return Err(CostError::InvalidCell {
                index: i,
                mode: cell.mode,
                channels,
            });
        }
        total += match (cell.is_local(), cell.dest, b) {
            (true, _, _) => c.local,
            (false, Dest::Fin, false) => c.fin_full,
            (false, Dest::Fin, true) => c.fin_partial,
            (false, Dest::Ein, false) => c.ein_full,
            (false, Dest::Ein, true) => c.ein_partial,
        };
    }
    Ok(total)
}
