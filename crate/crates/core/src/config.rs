//! Run parameters and the TOML configuration file.
//!
//! The file uses human units (MB, GHz, gigacycles, GB, MHz). [`load_config`]
//! converts everything to SI on load and validates it, so the rest of the
//! crate only ever sees bytes, cycles, Hz, seconds, joules and watts.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tasks::TransitionMatrix;

pub const MB: f64 = 1e6;
pub const GB: f64 = 1e9;
pub const GHZ: f64 = 1e9;
pub const GCYCLES: f64 = 1e9;
pub const MHZ: f64 = 1e6;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid `{field}`: expected {expected}, got {got}")]
    Invalid {
        field: String,
        expected: String,
        got: String,
    },
    #[error("delay and energy weights must sum to 1 (got {0} + {1})")]
    WeightsSum(f64, f64),
    #[error("transition matrix row {row} sums to {sum}, not 1")]
    NotStochastic { row: usize, sum: f64 },
    #[error("transition matrix must be {expected}x{expected}, got {rows} rows (row {row} has {cols} columns)")]
    MatrixShape {
        expected: usize,
        rows: usize,
        row: usize,
        cols: usize,
    },
}

fn invalid(field: &str, expected: &str, got: impl std::fmt::Display) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        expected: expected.to_string(),
        got: got.to_string(),
    }
}

/// Closed sampling interval `[lo, hi]` in SI units.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskPreset {
    Default,
    DataIntensive,
    ComputeIntensive,
}

/// Subtask attribute ranges (bytes, bytes, cycles).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskRanges {
    pub input: Range,
    pub software: Range,
    pub load: Range,
}

impl TaskRanges {
    pub fn preset(p: TaskPreset) -> Self {
        match p {
            TaskPreset::Default => Self {
                input: Range::new(1.0 * MB, 5.0 * MB),
                software: Range::new(1.0 * MB, 5.0 * MB),
                load: Range::new(1.0 * GCYCLES, 10.0 * GCYCLES),
            },
            TaskPreset::DataIntensive => Self {
                input: Range::new(10.0 * MB, 20.0 * MB),
                software: Range::new(0.5 * GB, 2.0 * GB),
                load: Range::new(1.0 * GCYCLES, 4.0 * GCYCLES),
            },
            TaskPreset::ComputeIntensive => Self {
                input: Range::new(1.0 * MB, 4.0 * MB),
                software: Range::new(1.0 * MB, 5.0 * MB),
                load: Range::new(5.0 * GCYCLES, 20.0 * GCYCLES),
            },
        }
    }
}

/// Consensus and pricing constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainParams {
    /// When false, consensus latency is dropped from remote costs.
    pub enabled: bool,
    /// P_BC, price units per slot.
    pub budget: f64,
    /// u, price per MB of software volume per replica.
    pub price_per_mb: f64,
    pub incentive_per_mb: f64,
    pub r_min: u32,
    pub r_max: u32,
    /// Budget discretization step for the knapsack, price units.
    pub budget_quantum: f64,
    /// Q^b, transactions per block.
    pub block_txs: f64,
    /// Signature cost, cycles.
    pub sig_cycles: f64,
    /// Message validation cost, cycles.
    pub verify_cycles: f64,
    /// m, number of EINs taking part in consensus.
    pub num_eins: u32,
    /// n, tolerated faulty nodes.
    pub num_faulty: u32,
    /// Primary node frequency F_k, Hz.
    pub primary_freq: f64,
    /// Frequencies of every consensus participant (FIN + EINs), Hz.
    pub node_freqs: Vec<f64>,
    /// Rate between BC nodes for the block phases, bit/s. `None` reuses the
    /// user's uplink rate in every phase.
    pub link_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KnapsackSense {
    Max,
    Min,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BaselineMode {
    /// C^O comes from a fresh equilibrium at full redundancy.
    Reequilibrate,
    /// C^O re-costs the C^R decisions at full redundancy.
    Hold,
}

/// Learning-agent settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentParams {
    pub reward_weights: [f64; 2],
    pub state_weights: [bool; 4],
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of training slots over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub target_sync: u64,
    pub huber_delta: f64,
    pub objective: KnapsackSense,
    pub baseline: BaselineMode,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentParams {
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub slots_per_episode: usize,
    /// Cache capacity of the single MEC server, bytes.
    pub mec_cache: f64,
}

/// Min-max bounds for the encoded state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormBounds {
    pub cpu_max: f64,
    pub cache_max: f64,
}

/// Everything a run needs, in SI units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub num_users: usize,
    pub num_subtasks: usize,
    pub num_tasks: usize,
    pub num_channels: usize,
    pub bandwidth: f64,
    pub tx_power: f64,
    pub noise_var: f64,
    pub cpu_local: f64,
    pub cpu_fin: f64,
    pub cpu_ein: f64,
    pub cache_fin: f64,
    pub cache_ein: f64,
    pub energy_coeff: f64,
    pub path_loss_exp: f64,
    /// Side of the square cell, m.
    pub cell_size: f64,
    pub delay_weight: f64,
    pub energy_weight: f64,
    /// μ, s. `None` disables the deadline filter.
    pub deadline: Option<f64>,
    pub slot_duration: f64,
    pub queue_enabled: bool,
    pub tasks: TaskRanges,
    pub chain: ChainParams,
    pub transition: TransitionMatrix,
    pub agent: AgentParams,
    pub experiment: ExperimentParams,
    pub norm: NormBounds,
    pub seed: u64,
}

impl Default for SystemParams {
    fn default() -> Self {
        ConfigFile::default()
            .into_params()
            .expect("built-in defaults are valid")
    }
}

impl SystemParams {
    /// Number of distinct subtasks F·V (the action length).
    pub fn subtask_count(&self) -> usize {
        self.num_tasks * self.num_subtasks
    }

    /// Width of the indicator input K·F.
    pub fn input_width(&self) -> usize {
        self.num_users * self.num_tasks
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |field: &str, v: f64| -> Result<(), ConfigError> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, "a finite value > 0", v))
            }
        };
        let count = |field: &str, v: usize| -> Result<(), ConfigError> {
            if v >= 1 {
                Ok(())
            } else {
                Err(invalid(field, "an integer >= 1", v))
            }
        };
        count("system.users", self.num_users)?;
        count("system.subtasks", self.num_subtasks)?;
        count("system.tasks", self.num_tasks)?;
        count("system.channels", self.num_channels)?;
        pos("system.bandwidth_mhz", self.bandwidth)?;
        pos("system.tx_power_w", self.tx_power)?;
        pos("system.noise_w", self.noise_var)?;
        pos("system.cpu_local_ghz", self.cpu_local)?;
        pos("system.cpu_fin_ghz", self.cpu_fin)?;
        pos("system.cpu_ein_ghz", self.cpu_ein)?;
        pos("system.cache_fin_gb", self.cache_fin)?;
        pos("system.cache_ein_gb", self.cache_ein)?;
        pos("system.energy_coeff", self.energy_coeff)?;
        pos("system.path_loss_exp", self.path_loss_exp)?;
        pos("system.cell_size_m", self.cell_size)?;
        pos("system.slot_s", self.slot_duration)?;
        let (wt, we) = (self.delay_weight, self.energy_weight);
        if !(0.0..=1.0).contains(&wt) {
            return Err(invalid("system.delay_weight", "a value in [0, 1]", wt));
        }
        if !(0.0..=1.0).contains(&we) {
            return Err(invalid("system.energy_weight", "a value in [0, 1]", we));
        }
        if ((wt + we) - 1.0).abs() > 1e-9 {
            return Err(ConfigError::WeightsSum(wt, we));
        }
        if let Some(mu) = self.deadline {
            pos("system.deadline_s", mu)?;
        }
        for (name, r) in [
            ("tasks.input_mb", self.tasks.input),
            ("tasks.software_mb", self.tasks.software),
            ("tasks.load_gcycles", self.tasks.load),
        ] {
            pos(name, r.lo)?;
            if r.hi < r.lo || !r.hi.is_finite() {
                return Err(invalid(name, "lo <= hi", format!("[{}, {}]", r.lo, r.hi)));
            }
        }

        let c = &self.chain;
        if c.r_min < 1 || c.r_min >= c.r_max {
            return Err(invalid(
                "chain.r_min/r_max",
                "integers with 1 <= r_min < r_max",
                format!("r_min={}, r_max={}", c.r_min, c.r_max),
            ));
        }
        if !(c.budget.is_finite() && c.budget >= 0.0) {
            return Err(invalid("chain.budget", "a finite value >= 0", c.budget));
        }
        pos("chain.price_per_mb", c.price_per_mb)?;
        if !(c.incentive_per_mb.is_finite() && c.incentive_per_mb >= 0.0) {
            return Err(invalid("chain.incentive_per_mb", "a value >= 0", c.incentive_per_mb));
        }
        pos("chain.budget_quantum", c.budget_quantum)?;
        for (name, v) in [
            ("chain.block_txs", c.block_txs),
            ("chain.sig_cycles", c.sig_cycles),
            ("chain.verify_cycles", c.verify_cycles),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(name, "a value >= 0", v));
            }
        }
        pos("chain.primary_ghz", c.primary_freq)?;
        if c.node_freqs.is_empty() {
            return Err(invalid("chain.node_ghz", "at least one node", "an empty list"));
        }
        for &f in &c.node_freqs {
            pos("chain.node_ghz", f)?;
        }
        if let Some(r) = c.link_rate {
            pos("chain.link_gbps", r)?;
        }

        let a = &self.agent;
        for (i, &w) in a.reward_weights.iter().enumerate() {
            if !(0.0..=1.0).contains(&w) {
                return Err(invalid(&format!("agent.omega[{i}]"), "a value in [0, 1]", w));
            }
        }
        if a.hidden.is_empty() || a.hidden.contains(&0) {
            return Err(invalid("agent.hidden", "non-empty list of positive widths", format!("{:?}", a.hidden)));
        }
        if !(0.0..1.0).contains(&a.dropout) {
            return Err(invalid("agent.dropout", "a value in [0, 1)", a.dropout));
        }
        if !(a.lr.is_finite() && a.lr >= 0.0) {
            return Err(invalid("agent.lr", "a value >= 0", a.lr));
        }
        if !(0.0..1.0).contains(&a.momentum) {
            return Err(invalid("agent.momentum", "a value in [0, 1)", a.momentum));
        }
        if !(a.gamma > 0.0 && a.gamma < 1.0) {
            return Err(invalid("agent.gamma", "a value in (0, 1)", a.gamma));
        }
        for (name, e) in [("agent.eps_start", a.eps_start), ("agent.eps_end", a.eps_end)] {
            if !(0.0..=1.0).contains(&e) {
                return Err(invalid(name, "a value in [0, 1]", e));
            }
        }
        if !(a.eps_decay_frac > 0.0 && a.eps_decay_frac <= 1.0) {
            return Err(invalid("agent.eps_decay_frac", "a value in (0, 1]", a.eps_decay_frac));
        }
        if a.batch_size == 0 || a.replay_capacity < a.batch_size {
            return Err(invalid(
                "agent.batch/replay",
                "1 <= batch <= replay",
                format!("batch={}, replay={}", a.batch_size, a.replay_capacity),
            ));
        }
        if a.target_sync == 0 {
            return Err(invalid("agent.target_sync", "an integer >= 1", 0));
        }
        pos("agent.huber_delta", a.huber_delta)?;
        count("experiment.slots", self.experiment.slots_per_episode)?;
        pos("experiment.mec_cache_gb", self.experiment.mec_cache)?;
        pos("norm.cpu_max_ghz", self.norm.cpu_max)?;
        pos("norm.cache_max_gb", self.norm.cache_max)?;
        if self.transition.states() != self.num_tasks + 1 {
            return Err(ConfigError::MatrixShape {
                expected: self.num_tasks + 1,
                rows: self.transition.states(),
                row: 0,
                cols: self.transition.states(),
            });
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File schema (human units).

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub seed: u64,
    pub system: SystemSection,
    pub tasks: TasksSection,
    pub chain: ChainSection,
    pub requests: RequestsSection,
    pub agent: AgentSection,
    pub experiment: ExperimentSection,
    pub norm: NormSection,
}

impl Default for ConfigFile {
    fn default() -> Self {
        Self {
            seed: 1,
            system: SystemSection::default(),
            tasks: TasksSection::default(),
            chain: ChainSection::default(),
            requests: RequestsSection::default(),
            agent: AgentSection::default(),
            experiment: ExperimentSection::default(),
            norm: NormSection::default(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub users: usize,
    pub subtasks: usize,
    pub tasks: usize,
    pub channels: usize,
    pub bandwidth_mhz: f64,
    pub tx_power_w: f64,
    pub noise_w: f64,
    pub cpu_local_ghz: f64,
    pub cpu_fin_ghz: f64,
    pub cpu_ein_ghz: f64,
    pub cache_fin_gb: f64,
    pub cache_ein_gb: f64,
    pub energy_coeff: f64,
    pub path_loss_exp: f64,
    pub cell_size_m: f64,
    pub delay_weight: f64,
    pub energy_weight: f64,
    pub deadline_s: f64,
    pub enforce_deadline: bool,
    pub slot_s: f64,
    pub queue: bool,
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            users: 30,
            subtasks: 4,
            tasks: 6,
            channels: 10,
            bandwidth_mhz: 50.0,
            tx_power_w: 0.5,
            noise_w: 2e-13,
            cpu_local_ghz: 1.0,
            cpu_fin_ghz: 60.0,
            cpu_ein_ghz: 100.0,
            cache_fin_gb: 3.0,
            cache_ein_gb: 5.0,
            energy_coeff: 5e-27,
            path_loss_exp: 3.0,
            cell_size_m: 200.0,
            delay_weight: 0.5,
            energy_weight: 0.5,
            deadline_s: 30.0,
            enforce_deadline: true,
            slot_s: 10.0,
            queue: true,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct TasksSection {
    pub preset: TaskPreset,
    pub input_mb: Option<[f64; 2]>,
    pub software_mb: Option<[f64; 2]>,
    pub load_gcycles: Option<[f64; 2]>,
}

impl Default for TasksSection {
    fn default() -> Self {
        Self {
            preset: TaskPreset::Default,
            input_mb: None,
            software_mb: None,
            load_gcycles: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainSection {
    pub enabled: bool,
    pub budget: f64,
    pub price_per_mb: f64,
    pub incentive_per_mb: f64,
    pub r_min: u32,
    pub r_max: u32,
    pub budget_quantum: f64,
    pub block_txs: f64,
    pub sig_cycles: f64,
    pub verify_cycles: f64,
    pub eins: u32,
    pub faulty: u32,
    /// Defaults to the FIN frequency.
    pub primary_ghz: Option<f64>,
    /// Defaults to the FIN frequency for the FIN and every EIN.
    pub node_ghz: Option<Vec<f64>>,
    pub link_gbps: f64,
    /// Use the user's uplink rate for the block phases instead of `link_gbps`.
    pub link_uses_uplink: bool,
}

impl Default for ChainSection {
    fn default() -> Self {
        Self {
            enabled: true,
            budget: 250.0,
            price_per_mb: 1.0,
            incentive_per_mb: 0.1,
            r_min: 1,
            r_max: 10,
            budget_quantum: 1.0,
            block_txs: 10.0,
            sig_cycles: 1e6,
            verify_cycles: 1e6,
            eins: 3,
            faulty: 1,
            primary_ghz: None,
            node_ghz: None,
            link_gbps: 5.0,
            link_uses_uplink: false,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestsSection {
    /// (F+1)x(F+1) row-stochastic matrix; uniform when absent.
    pub transition: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSection {
    pub omega: [f64; 2],
    pub chi: [bool; 4],
    pub hidden: Vec<usize>,
    pub dropout: f64,
    pub lr: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    pub eps_decay_frac: f64,
    pub replay: usize,
    pub batch: usize,
    pub target_sync: u64,
    pub huber_delta: f64,
    pub objective: KnapsackSense,
    pub baseline: BaselineMode,
}

impl Default for AgentSection {
    fn default() -> Self {
        Self {
            omega: [0.5, 0.5],
            chi: [true; 4],
            hidden: vec![128, 128],
            dropout: 0.2,
            lr: 0.0008,
            momentum: 0.0,
            gamma: 0.9,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.6,
            replay: 10_000,
            batch: 32,
            target_sync: 100,
            huber_delta: 1.0,
            objective: KnapsackSense::Max,
            baseline: BaselineMode::Reequilibrate,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub slots: usize,
    /// Defaults to the EIN cache size.
    pub mec_cache_gb: Option<f64>,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            train_episodes: 1000,
            eval_episodes: 100,
            slots: 200,
            mec_cache_gb: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormSection {
    pub cpu_max_ghz: f64,
    pub cache_max_gb: f64,
}

impl Default for NormSection {
    fn default() -> Self {
        Self {
            cpu_max_ghz: 100.0,
            cache_max_gb: 10.0,
        }
    }
}

fn range_from(field: &str, v: Option<[f64; 2]>, scale: f64, fallback: Range) -> Result<Range, ConfigError> {
    match v {
        None => Ok(fallback),
        Some([lo, hi]) => {
            if hi < lo {
                return Err(invalid(field, "lo <= hi", format!("[{lo}, {hi}]")));
            }
            Ok(Range::new(lo * scale, hi * scale))
        }
    }
}

impl ConfigFile {
    pub fn into_params(self) -> Result<SystemParams, ConfigError> {
        let s = &self.system;
        let preset = TaskRanges::preset(self.tasks.preset);
        let tasks = TaskRanges {
            input: range_from("tasks.input_mb", self.tasks.input_mb, MB, preset.input)?,
            software: range_from("tasks.software_mb", self.tasks.software_mb, MB, preset.software)?,
            load: range_from("tasks.load_gcycles", self.tasks.load_gcycles, GCYCLES, preset.load)?,
        };
        let c = &self.chain;
        let fin = s.cpu_fin_ghz * GHZ;
        let chain = ChainParams {
            enabled: c.enabled,
            budget: c.budget,
            price_per_mb: c.price_per_mb,
            incentive_per_mb: c.incentive_per_mb,
            r_min: c.r_min,
            r_max: c.r_max,
            budget_quantum: c.budget_quantum,
            block_txs: c.block_txs,
            sig_cycles: c.sig_cycles,
            verify_cycles: c.verify_cycles,
            num_eins: c.eins,
            num_faulty: c.faulty,
            primary_freq: c.primary_ghz.map_or(fin, |g| g * GHZ),
            node_freqs: match &c.node_ghz {
                Some(v) => v.iter().map(|g| g * GHZ).collect(),
                None => vec![fin; c.eins as usize + 1],
            },
            link_rate: if c.link_uses_uplink {
                None
            } else {
                Some(c.link_gbps * 1e9)
            },
        };
        let transition = match &self.requests.transition {
            Some(rows) => TransitionMatrix::new(rows.clone())?,
            None => TransitionMatrix::uniform(s.tasks + 1),
        };
        let a = &self.agent;
        let agent = AgentParams {
            reward_weights: a.omega,
            state_weights: a.chi,
            hidden: a.hidden.clone(),
            dropout: a.dropout,
            lr: a.lr,
            momentum: a.momentum,
            gamma: a.gamma,
            eps_start: a.eps_start,
            eps_end: a.eps_end,
            eps_decay_frac: a.eps_decay_frac,
            replay_capacity: a.replay,
            batch_size: a.batch,
            target_sync: a.target_sync,
            huber_delta: a.huber_delta,
            objective: a.objective,
            baseline: a.baseline,
        };
        let e = &self.experiment;
        let params = SystemParams {
            num_users: s.users,
            num_subtasks: s.subtasks,
            num_tasks: s.tasks,
            num_channels: s.channels,
            bandwidth: s.bandwidth_mhz * MHZ,
            tx_power: s.tx_power_w,
            noise_var: s.noise_w,
            cpu_local: s.cpu_local_ghz * GHZ,
            cpu_fin: fin,
            cpu_ein: s.cpu_ein_ghz * GHZ,
            cache_fin: s.cache_fin_gb * GB,
            cache_ein: s.cache_ein_gb * GB,
            energy_coeff: s.energy_coeff,
            path_loss_exp: s.path_loss_exp,
            cell_size: s.cell_size_m,
            delay_weight: s.delay_weight,
            energy_weight: s.energy_weight,
            deadline: s.enforce_deadline.then_some(s.deadline_s),
            slot_duration: s.slot_s,
            queue_enabled: s.queue,
            tasks,
            chain,
            transition,
            agent,
            experiment: ExperimentParams {
                train_episodes: e.train_episodes,
                eval_episodes: e.eval_episodes,
                slots_per_episode: e.slots,
                mec_cache: e.mec_cache_gb.map_or(s.cache_ein_gb * GB, |g| g * GB),
            },
            norm: NormBounds {
                cpu_max: self.norm.cpu_max_ghz * GHZ,
                cache_max: self.norm.cache_max_gb * GB,
            },
            seed: self.seed,
        };
        params.validate()?;
        Ok(params)
    }
}

pub fn parse_config(text: &str) -> Result<SystemParams, ConfigError> {
    let file: ConfigFile = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    file.into_params()
}

pub fn load_config(path: &Path) -> Result<SystemParams, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_table_defaults() {
        let p = parse_config("").unwrap();
        assert_eq!(p.num_users, 30);
        assert_eq!(p.bandwidth, 50e6);
        assert_eq!(p.num_channels, 10);
        assert_eq!(p.agent.gamma, 0.9);
        assert_eq!(p.agent.lr, 0.0008);
        assert_eq!(p.agent.replay_capacity, 10_000);
        assert_eq!(p.tx_power, 0.5);
        assert_eq!(p.noise_var, 2e-13);
        assert_eq!(p.cpu_fin, 60e9);
        assert_eq!(p.cpu_ein, 100e9);
        assert_eq!(p.cache_fin, 3e9);
        assert_eq!(p.cache_ein, 5e9);
        assert_eq!(p.energy_coeff, 5e-27);
        assert_eq!(p, SystemParams::default());
    }

    #[test]
    fn weights_must_sum_to_one() {
        let err = parse_config("[system]\ndelay_weight = 0.6\nenergy_weight = 0.5\n").unwrap_err();
        assert!(matches!(err, ConfigError::WeightsSum(..)));
        assert!(err.to_string().contains("weights must sum to 1"));
    }

    #[test]
    fn same_seed_same_params() {
        let a = parse_config("seed = 7").unwrap();
        let b = parse_config("seed = 7").unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seed, 7);
        let mut ra = crate::rng::RngStream::new(a.seed, "tasks");
        let mut rb = crate::rng::RngStream::new(b.seed, "tasks");
        use rand::RngCore;
        assert_eq!(ra.next_u64(), rb.next_u64());
    }

    #[test]
    fn units_are_converted() {
        let p = parse_config("[tasks]\ninput_mb = [2, 3]\n[chain]\nlink_gbps = 2\n").unwrap();
        assert_eq!(p.tasks.input, Range::new(2e6, 3e6));
        assert_eq!(p.chain.link_rate, Some(2e9));
        assert_eq!(p.chain.node_freqs, vec![60e9; 4]);
    }

    #[test]
    fn named_field_errors() {
        let err = parse_config("[chain]\nr_min = 4\nr_max = 4\n").unwrap_err();
        assert!(err.to_string().contains("chain.r_min/r_max"), "{err}");
        let err = parse_config("[agent]\ngamma = 1.0\n").unwrap_err();
        assert!(err.to_string().contains("agent.gamma"), "{err}");
        let err = parse_config("[system]\nbandwidth_mhz = -1\n").unwrap_err();
        assert!(err.to_string().contains("system.bandwidth_mhz"), "{err}");
        let err = parse_config("[system]\nbogus = 1\n").unwrap_err();
        assert!(matches!(err, ConfigError::Parse(_)));
    }

    #[test]
    fn non_stochastic_matrix_rejected() {
        let text = "[system]\ntasks = 1\n[requests]\ntransition = [[0.5, 0.4], [0, 1]]\n";
        let err = parse_config(text).unwrap_err();
        assert!(matches!(err, ConfigError::NotStochastic { row: 0, .. }), "{err}");
    }

    #[test]
    fn presets_select_ranges() {
        let p = parse_config("[tasks]\npreset = \"data-intensive\"\n").unwrap();
        assert_eq!(p.tasks.input, Range::new(10e6, 20e6));
        assert_eq!(p.tasks.software, Range::new(0.5e9, 2e9));
        let p = parse_config("[tasks]\npreset = \"compute-intensive\"\n").unwrap();
        assert_eq!(p.tasks.load, Range::new(5e9, 20e9));
    }
}
