//! The per-slot offloading game.
//!
//! Players are the active (user, subtask) cells. A cell either runs locally
//! or transmits on one of M sub-bands; cells only interfere with cells of
//! the same subtask index on the same sub-band. Given its channel, a cell
//! always sends to whichever of FIN/EIN is cheaper at the current
//! interference, so a strategy is just "local" or a channel.
//!
//! Every remote cost has the form `α/ω + c` in the uplink rate ω, which
//! makes the break-even interference λ exact and the game an ordinal
//! potential game with the potential in [`potential`].

mod dynamics;

pub use dynamics::{best_response, find_deviation, is_ne, run_to_ne, GameOutcome, TraceEntry};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::SystemParams;
use crate::cost::{Dest, ExecutionCost, OffloadDecisionCell, RemoteCoef};
use crate::radio::{cost_threshold, rate_threshold, Threshold};
use crate::tasks::SubtaskSpec;

#[derive(Debug, Error, PartialEq)]
pub enum GameError {
    #[error("convergence bound needs a positive minimum signal, got {0}")]
    ZeroSignal(f64),
    #[error("convergence bound needs pi > 0, got {0}")]
    BadPi(f64),
    #[error("convergence bound needs at least one player")]
    NoPlayers,
}

/// One player of the game.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub user: usize,
    /// Subtask index v; only cells of the same group interfere.
    pub group: usize,
    /// Flat subtask index in the task catalogue.
    pub subtask: usize,
    pub spec: SubtaskSpec,
    /// Received signal power ρ·η of the cell's user.
    pub signal: f64,
    pub local: ExecutionCost,
    /// Remote cost coefficients for FIN and EIN; `None` when excluded.
    pub remote: [Option<RemoteCoef>; 2],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Strategy {
    Local,
    /// 0-based channel index.
    Channel(u32),
}

impl Strategy {
    pub fn channel(self) -> Option<u32> {
        match self {
            Strategy::Local => None,
            Strategy::Channel(m) => Some(m),
        }
    }
}

/// Outcome of one option for one cell. Infeasible options (deadline
/// missed) always rank below feasible ones.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Eval {
    pub infeasible: bool,
    pub cost: f64,
    /// `None` for local execution.
    pub dest: Option<Dest>,
    pub rate: f64,
}

impl Eval {
    /// Strictly better than `other`, ignoring improvements below `tol`
    /// relative to `other`'s cost.
    pub fn beats(&self, other: &Eval, tol: f64) -> bool {
        match (self.infeasible, other.infeasible) {
            (false, true) => true,
            (true, false) => false,
            _ => {
                if other.cost.is_infinite() {
                    return self.cost.is_finite();
                }
                self.cost < other.cost - tol * other.cost.abs()
            }
        }
    }
}

/// A slot's game: players plus the shared radio constants.
#[derive(Clone, Debug)]
pub struct GameInstance {
    pub cells: Vec<Cell>,
    pub groups: usize,
    pub channels: usize,
    pub noise: f64,
    /// B/M, Hz.
    pub per_channel_bw: f64,
    pub deadline: Option<f64>,
    /// Relative cost decrease below which a move is not an improvement.
    pub rel_tol: f64,
    lambda: Vec<Threshold>,
    members: Vec<Vec<usize>>,
}

impl GameInstance {
    pub fn new(cells: Vec<Cell>, groups: usize, params: &SystemParams) -> Self {
        let mut g = Self {
            cells,
            groups,
            channels: params.num_channels,
            noise: params.noise_var,
            per_channel_bw: params.bandwidth / params.num_channels as f64,
            deadline: params.deadline,
            rel_tol: 1e-9,
            lambda: vec![],
            members: vec![],
        };
        g.members = vec![vec![]; groups];
        for (i, c) in g.cells.iter().enumerate() {
            g.members[c.group].push(i);
        }
        g.lambda = (0..g.cells.len()).map(|i| g.cell_threshold(i, params)).collect();
        g
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn members(&self, group: usize) -> &[usize] {
        &self.members[group]
    }

    /// Break-even interference of every cell.
    pub fn thresholds(&self) -> &[Threshold] {
        &self.lambda
    }

    /// Finite λ values as used by the potential.
    pub fn lambda_values(&self) -> Vec<f64> {
        self.lambda.iter().map(|t| t.value(self.noise)).collect()
    }

    fn local_feasible(&self, i: usize) -> bool {
        self.deadline.is_none_or(|mu| self.cells[i].local.delay <= mu)
    }

    /// Largest interference at which some destination beats local
    /// (and meets the deadline when one is set).
    fn cell_threshold(&self, i: usize, params: &SystemParams) -> Threshold {
        let c = &self.cells[i];
        let local_ok = self.local_feasible(i);
        let mut best = Threshold::Never;
        for coef in c.remote.iter().flatten() {
            let by_deadline = match self.deadline {
                None => Threshold::Finite(f64::INFINITY),
                Some(mu) => {
                    let slack = mu - coef.delay_const;
                    if slack > 0.0 {
                        rate_threshold(c.signal, coef.delay_bits / slack, params)
                    } else {
                        Threshold::Never
                    }
                }
            };
            let t = if local_ok {
                cost_threshold(c.signal, coef.cost_bits, coef.cost_const, c.local.cost, params).min(by_deadline)
            } else {
                by_deadline
            };
            best = best.max(t);
        }
        best
    }

    pub fn rate(&self, i: usize, interference: f64) -> f64 {
        let sinr = self.cells[i].signal / (interference + self.noise);
        self.per_channel_bw * crate::radio::log_capacity(1.0 + sinr)
    }

    pub fn local_eval(&self, i: usize) -> Eval {
        Eval {
            infeasible: !self.local_feasible(i),
            cost: self.cells[i].local.cost,
            dest: None,
            rate: 0.0,
        }
    }

    /// One specific destination at the given interference.
    pub fn dest_eval(&self, i: usize, dest: Dest, interference: f64) -> Option<Eval> {
        self.dest_eval_at(i, dest, self.rate(i, interference))
    }

    fn dest_eval_at(&self, i: usize, dest: Dest, rate: f64) -> Option<Eval> {
        let coef = self.cells[i].remote[dest.index()]?;
        let (cost, delay) = if rate > 0.0 {
            (coef.cost(rate), coef.delay(rate))
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        Some(Eval {
            infeasible: self.deadline.is_some_and(|mu| !(delay <= mu)),
            cost,
            dest: Some(dest),
            rate,
        })
    }

    /// Cheaper of FIN/EIN at the given interference, FIN on ties.
    pub fn remote_eval(&self, i: usize, interference: f64) -> Eval {
        let rate = self.rate(i, interference);
        let mut best: Option<Eval> = None;
        for dest in Dest::ALL {
            if let Some(e) = self.dest_eval_at(i, dest, rate) {
                best = match best {
                    Some(b) if !e.beats(&b, 0.0) => Some(b),
                    _ => Some(e),
                };
            }
        }
        best.unwrap_or(Eval {
            infeasible: true,
            cost: f64::INFINITY,
            dest: None,
            rate: 0.0,
        })
    }

    /// Interference on channel `m` seen by cell `i` (excluding itself).
    pub fn interference(&self, i: usize, m: u32, profile: &[Strategy]) -> f64 {
        let g = self.cells[i].group;
        let mut sum = 0.0;
        for &j in &self.members[g] {
            if j != i && profile[j] == Strategy::Channel(m) {
                sum += self.cells[j].signal;
            }
        }
        sum
    }

    /// Total signal on each channel within group `g`.
    pub fn channel_loads(&self, g: usize, profile: &[Strategy]) -> Vec<f64> {
        let mut loads = vec![0.0; self.channels];
        for &j in &self.members[g] {
            if let Strategy::Channel(m) = profile[j] {
                loads[m as usize] += self.cells[j].signal;
            }
        }
        loads
    }

    pub fn current_eval(&self, i: usize, profile: &[Strategy]) -> Eval {
        match profile[i] {
            Strategy::Local => self.local_eval(i),
            Strategy::Channel(m) => self.remote_eval(i, self.interference(i, m, profile)),
        }
    }

    /// Sum of every cell's current cost.
    pub fn total_cost(&self, profile: &[Strategy]) -> f64 {
        (0..self.len()).map(|i| self.current_eval(i, profile).cost).sum()
    }

    /// Resolves destinations and returns one decision per cell.
    pub fn decisions(&self, profile: &[Strategy]) -> Vec<(OffloadDecisionCell, Eval)> {
        (0..self.len())
            .map(|i| {
                let e = self.current_eval(i, profile);
                let cell = match (profile[i], e.dest) {
                    (Strategy::Channel(m), Some(d)) => OffloadDecisionCell::remote(m + 1, d),
                    _ => OffloadDecisionCell::LOCAL,
                };
                (cell, e)
            })
            .collect()
    }

    /// Decision matrix K x V; `None` for cells of idle users.
    pub fn decision_matrix(&self, profile: &[Strategy], users: usize) -> Vec<Vec<Option<OffloadDecisionCell>>> {
        let mut out = vec![vec![None; self.groups]; users];
        for (i, (d, _)) in self.decisions(profile).into_iter().enumerate() {
            let c = &self.cells[i];
            out[c.user][c.group] = Some(d);
        }
        out
    }
}

/// Half the pairwise co-channel signal products plus the local terms Ω·λ.
pub fn potential(game: &GameInstance, profile: &[Strategy]) -> f64 {
    let lam = game.lambda_values();
    potential_with(game, profile, &lam)
}

pub fn potential_with(game: &GameInstance, profile: &[Strategy], lambda: &[f64]) -> f64 {
    let mut pairs = 0.0;
    let mut local = 0.0;
    for g in 0..game.groups {
        let members = game.members(g);
        for (a, &i) in members.iter().enumerate() {
            match profile[i] {
                Strategy::Local => local += game.cells[i].signal * lambda[i],
                Strategy::Channel(m) => {
                    for &j in &members[a + 1..] {
                        if profile[j] == Strategy::Channel(m) {
                            pairs += game.cells[i].signal * game.cells[j].signal;
                        }
                    }
                }
            }
        }
    }
    pairs + local
}

/// Iteration bound (½K²Ω_max² + K(Ω_max·λ_max − Ω_min·λ_min)) / (π·Ω_min).
pub fn convergence_bound(signals: &[f64], lambdas: &[f64], pi: f64) -> Result<f64, GameError> {
    if signals.is_empty() {
        return Err(GameError::NoPlayers);
    }
    let k = signals.len() as f64;
    let om_max = signals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let om_min = signals.iter().copied().fold(f64::INFINITY, f64::min);
    if !(om_min > 0.0) {
        return Err(GameError::ZeroSignal(om_min));
    }
    if !(pi > 0.0) {
        return Err(GameError::BadPi(pi));
    }
    let l_max = lambdas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let l_min = lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((0.5 * k * k * om_max * om_max + k * (om_max * l_max - om_min * l_min)) / (pi * om_min))
}

/// Initial choice from the efficiency comparison.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InitMode {
    Local,
    Fin,
    Ein,
}

/// Compares L_L = P·F_L/(ρ·V), L_FIN = P·F_L/(F_FIN·δ_FIN) and
/// L_EIN = P·F_L/(F_EIN·δ_EIN); ties with L_L stay local.
pub fn initial_mode(spec: &SubtaskSpec, params: &SystemParams) -> InitMode {
    let base = spec.load * params.cpu_local;
    let l_local = base / (params.tx_power * spec.software);
    let l_fin = base / (params.cpu_fin * params.cache_fin);
    let l_ein = base / (params.cpu_ein * params.cache_ein);
    if l_local >= l_fin && l_local >= l_ein {
        InitMode::Local
    } else if l_fin > l_ein {
        InitMode::Fin
    } else {
        InitMode::Ein
    }
}

/// Starting profile: local cells stay local, remote cells get channels
/// round-robin within their group.
pub fn init_profile(game: &GameInstance, params: &SystemParams) -> Vec<Strategy> {
    let mut next = vec![0u32; game.groups];
    game.cells
        .iter()
        .map(|c| {
            let mode = initial_mode(&c.spec, params);
            let allowed = match mode {
                InitMode::Local => false,
                InitMode::Fin => c.remote[0].is_some(),
                InitMode::Ein => c.remote[1].is_some(),
            };
            if allowed {
                let m = next[c.group] % game.channels as u32;
                next[c.group] += 1;
                Strategy::Channel(m)
            } else {
                Strategy::Local
            }
        })
        .collect()
}
