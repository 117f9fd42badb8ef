//! The redundancy-factor agent: double DQN over the request indicator with
//! a knapsack greedy step.

pub mod knapsack;
pub mod replay;
pub mod state;

use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use knapsack::{FeasibleSampler, KnapsackProblem, KnapsackSolution};
pub use replay::{ReplayMemory, RunningStats, Transition};
pub use state::{encode_state, EncodedState};

use crate::config::{AgentParams, SystemParams};
use crate::exec::{self, Exec};
use crate::rng::{RngState, RngStream};
use crate::scaa::{Batch, NetCheckpoint, NetError, Network};
use crate::tasks::TaskSet;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("agent checkpoint: {0}")]
    Checkpoint(String),
    #[error("agent checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

/// ω1(ΣC^O − ΣC^R) + ω2·J.
pub fn reward(cost_o: f64, cost_r: f64, incentive: f64, weights: [f64; 2]) -> f64 {
    weights[0] * (cost_o - cost_r) + weights[1] * incentive
}

/// r + γ·max_a Q_target(S', a); `terminal` drops the bootstrap term.
pub fn td_target(r: f64, next_max_q: f64, gamma: f64, terminal: bool) -> f64 {
    if terminal {
        r
    } else {
        r + gamma * next_max_q
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActionChoice {
    pub levels: Vec<u32>,
    /// No level vector fits the budget; `levels` is all r_min.
    pub infeasible: bool,
    pub explored: bool,
}

pub struct BrfAgent {
    pub params: AgentParams,
    problem: KnapsackProblem,
    sampler: FeasibleSampler,
    pub main: Network,
    pub target: Network,
    pub replay: ReplayMemory,
    pub rewards: RunningStats,
    /// Training slots completed.
    pub slot: u64,
    /// Length of the ε schedule in slots.
    pub schedule_slots: u64,
    pub exec: Exec,
    explore_rng: RngStream,
    dropout_rng: RngStream,
    replay_rng: RngStream,
}

impl BrfAgent {
    pub fn new(params: &SystemParams, tasks: &TaskSet, schedule_slots: u64, rng: &RngStream) -> Self {
        let problem = knapsack_problem(params, tasks);
        let a = &params.agent;
        let mut dims = vec![params.input_width()];
        dims.extend(&a.hidden);
        dims.push(problem.len());
        let mut init = rng.child("init");
        let mut main = Network::new(&dims, a.dropout, a.momentum, &mut init);
        main.huber_delta = a.huber_delta;
        let target = main.sync_target();
        Self {
            params: a.clone(),
            sampler: FeasibleSampler::new(problem.clone()),
            problem,
            main,
            target,
            replay: ReplayMemory::new(a.replay_capacity),
            rewards: RunningStats::default(),
            slot: 0,
            schedule_slots,
            exec: Exec::default(),
            explore_rng: rng.child("explore"),
            dropout_rng: rng.child("dropout"),
            replay_rng: rng.child("replay"),
        }
    }

    pub fn problem(&self) -> &KnapsackProblem {
        &self.problem
    }

    pub fn sampler(&self) -> &FeasibleSampler {
        &self.sampler
    }

    /// Linear decay from eps_start to eps_end over the first
    /// `eps_decay_frac` of the schedule, flat afterwards.
    pub fn epsilon(&self) -> f64 {
        let a = &self.params;
        let span = (a.eps_decay_frac * self.schedule_slots as f64).max(1.0);
        let t = (self.slot as f64 / span).min(1.0);
        a.eps_start + (a.eps_end - a.eps_start) * t
    }

    /// Aggregation-layer weights of a level vector: u·V_f·(a_f − c)/W with
    /// c the midpoint of the level range and W = u·max V·(r_max − r_min)/2,
    /// so every weight lies in [-1, 1]. Affine in the level, so the argmax
    /// over actions is the knapsack argmax.
    pub fn action_weights(&self, levels: &[u32]) -> Vec<f64> {
        let p = &self.problem;
        let mid = 0.5 * f64::from(p.r_min + p.r_max);
        let vmax = p.volumes.iter().copied().fold(0.0, f64::max);
        let mut scale = p.price * vmax * 0.5 * f64::from(p.r_max - p.r_min);
        if !(scale > 0.0) {
            scale = 1.0;
        }
        levels
            .iter()
            .zip(&p.volumes)
            .map(|(&a, v)| p.price * v * (f64::from(a) - mid) / scale)
            .collect()
    }

    pub fn theta(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.main.forward(input, None)
    }

    pub fn greedy(&self, input: &[f64]) -> Result<KnapsackSolution, NetError> {
        let theta = self.theta(input)?;
        Ok(self.problem.solve(&theta, self.params.objective))
    }

    /// ε-greedy over the feasible set; `explore = false` is pure greedy.
    pub fn select_action(&mut self, input: &[f64], explore: bool) -> Result<ActionChoice, NetError> {
        if explore && self.explore_rng.random::<f64>() < self.epsilon() {
            return Ok(match self.sampler.sample(&mut self.explore_rng) {
                Some(levels) => ActionChoice {
                    levels,
                    infeasible: false,
                    explored: true,
                },
                None => ActionChoice {
                    levels: vec![self.problem.r_min; self.problem.len()],
                    infeasible: true,
                    explored: true,
                },
            });
        }
        let s = self.greedy(input)?;
        Ok(ActionChoice {
            levels: s.levels,
            infeasible: s.infeasible,
            explored: false,
        })
    }

    /// Frozen-policy step: next levels and the signed change from `prev`.
    pub fn infer_policy(&self, input: &[f64], prev: &[u32]) -> Result<(Vec<u32>, Vec<i64>), NetError> {
        let levels = self.greedy(input)?.levels;
        let delta = levels
            .iter()
            .zip(prev)
            .map(|(&a, &b)| i64::from(a) - i64::from(b))
            .collect();
        Ok((levels, delta))
    }

    /// max_a Q_target(s, a) for each row of `states`, via the knapsack on
    /// the target network's Θ.
    pub fn target_max_q(&self, states: &Array2<f64>) -> Vec<f64> {
        let theta = self.target.forward_batch(states);
        exec::map_range(self.exec, theta.nrows(), |i| {
            let row = theta.row(i).to_vec();
            let best = self.problem.solve(&row, self.params.objective);
            let w = self.action_weights(&best.levels);
            row.iter().zip(&w).map(|(t, w)| t * w).sum()
        })
    }

    /// Stores the transition, trains on one minibatch once the memory holds
    /// a full batch, and syncs the target every `target_sync` slots.
    /// Returns the batch loss when a step was taken.
    pub fn step(&mut self, t: Transition) -> Result<Option<f64>, NetError> {
        self.rewards.push(t.reward);
        self.replay.push(t);
        let loss = if self.replay.len() >= self.params.batch_size {
            Some(self.learn()?)
        } else {
            None
        };
        self.slot += 1;
        if self.params.target_sync > 0 && self.slot % self.params.target_sync == 0 {
            self.target = self.main.sync_target();
        }
        Ok(loss)
    }

    fn learn(&mut self) -> Result<f64, NetError> {
        let idx = self.replay.sample_indices(self.params.batch_size, &mut self.replay_rng);
        let n = idx.len();
        let width = self.main.input_width();
        let out = self.main.output_width();
        let mut inputs = Array2::zeros((n, width));
        let mut next = Array2::zeros((n, width));
        let mut actions = Array2::zeros((n, out));
        for (row, &i) in idx.iter().enumerate() {
            let t = self.replay.get(i);
            inputs.row_mut(row).assign(&ndarray::ArrayView1::from(&t.state[..]));
            next.row_mut(row).assign(&ndarray::ArrayView1::from(&t.next_state[..]));
            actions
                .row_mut(row)
                .assign(&ndarray::Array1::from(self.action_weights(&t.action)));
        }
        let next_q = self.target_max_q(&next);
        let targets: Vec<f64> = idx
            .iter()
            .zip(&next_q)
            .map(|(&i, &q)| {
                let r = self.rewards.standardize(self.replay.get(i).reward);
                td_target(r, q, self.params.gamma, false)
            })
            .collect();
        let batch = Batch {
            inputs: &inputs,
            actions: &actions,
            targets: &targets,
        };
        self.main.train_step(&batch, self.params.lr, Some(&mut self.dropout_rng))
    }

    pub fn checkpoint(&self) -> AgentCheckpoint {
        AgentCheckpoint {
            version: 1,
            main: self.main.to_checkpoint(Some(self.dropout_rng.state())),
            target: self.target.to_checkpoint(None),
            slot: self.slot,
            schedule_slots: self.schedule_slots,
            epsilon: self.epsilon(),
            rewards: self.rewards,
            explore_rng: self.explore_rng.state(),
            replay_rng: self.replay_rng.state(),
        }
    }

    /// Restores weights, counters and RNG positions; the replay memory
    /// starts empty.
    pub fn restore(&mut self, c: &AgentCheckpoint) -> Result<(), AgentError> {
        let bad = |e: std::num::ParseIntError| AgentError::Checkpoint(e.to_string());
        let main = Network::from_checkpoint(&c.main)?;
        if main.dims() != self.main.dims() {
            return Err(AgentError::Checkpoint(format!(
                "network dims {:?} do not match this run's {:?}",
                main.dims(),
                self.main.dims()
            )));
        }
        self.main = main;
        self.target = Network::from_checkpoint(&c.target)?;
        self.slot = c.slot;
        self.schedule_slots = c.schedule_slots;
        self.rewards = c.rewards;
        if let Some(s) = &c.main.rng {
            self.dropout_rng = RngStream::from_state(s).map_err(bad)?;
        }
        self.explore_rng = RngStream::from_state(&c.explore_rng).map_err(bad)?;
        self.replay_rng = RngStream::from_state(&c.replay_rng).map_err(bad)?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), AgentError> {
        let text = serde_json::to_string(&self.checkpoint()).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(&mut self, path: &Path) -> Result<(), AgentError> {
        let text = std::fs::read_to_string(path)?;
        let c: AgentCheckpoint = serde_json::from_str(&text).map_err(|e| AgentError::Checkpoint(e.to_string()))?;
        self.restore(&c)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentCheckpoint {
    pub version: u32,
    pub main: NetCheckpoint,
    pub target: NetCheckpoint,
    pub slot: u64,
    pub schedule_slots: u64,
    pub epsilon: f64,
    pub rewards: RunningStats,
    pub explore_rng: RngState,
    pub replay_rng: RngState,
}

pub fn knapsack_problem(params: &SystemParams, tasks: &TaskSet) -> KnapsackProblem {
    let c = &params.chain;
    KnapsackProblem {
        volumes: tasks.flat().iter().map(|s| s.software_mb()).collect(),
        price: c.price_per_mb,
        budget: c.budget,
        quantum: c.budget_quantum,
        r_min: c.r_min,
        r_max: c.r_max,
    }
}
