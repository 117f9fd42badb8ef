//! Uplink model: path-loss gains, co-channel interference, Shannon rate and
//! the break-even interference at which offloading stops paying off.

use rand::Rng;
use rand_distr::Exp1;
use thiserror::Error;

use crate::config::SystemParams;
use crate::cost::{local_cost, Dest};
use crate::tasks::SubtaskSpec;

/// Rates are Shannon capacities in bit/s, so the logarithm is base 2.
pub fn log_capacity(x: f64) -> f64 {
    x.log2()
}

/// Inverse of [`log_capacity`] minus one, computed without cancellation.
fn capacity_inverse_m1(bits_per_hz: f64) -> f64 {
    (bits_per_hz * std::f64::consts::LN_2).exp_m1()
}

#[derive(Debug, Error, PartialEq)]
pub enum RadioError {
    #[error("distance must be > 0, got {0}")]
    BadDistance(f64),
    #[error("user {0} is local; interference is only defined on a channel")]
    LocalUser(usize),
    #[error("user {user} has channel {channel} but only {channels} channels exist")]
    BadChannel {
        user: usize,
        channel: u32,
        channels: usize,
    },
}

/// Per-user large-scale distance, small-scale fading and resulting gain.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelState {
    pub distance: Vec<f64>,
    pub fading: Vec<f64>,
    pub gain: Vec<f64>,
}

impl ChannelState {
    pub fn new(distance: Vec<f64>, fading: Vec<f64>, path_loss_exp: f64) -> Result<Self, RadioError> {
        let gain = distance
            .iter()
            .zip(&fading)
            .map(|(&d, &p)| channel_gain(d, p, path_loss_exp))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            distance,
            fading,
            gain,
        })
    }

    /// Gains given directly, with unit distance and fading equal to the gain.
    pub fn from_gains(gain: Vec<f64>) -> Self {
        Self {
            distance: vec![1.0; gain.len()],
            fading: gain.clone(),
            gain,
        }
    }

    /// Redraws unit-mean exponential fading for every user.
    pub fn redraw(distance: &[f64], path_loss_exp: f64, rng: &mut impl Rng) -> Self {
        let fading: Vec<f64> = distance.iter().map(|_| rng.sample::<f64, _>(Exp1)).collect();
        Self::new(distance.to_vec(), fading, path_loss_exp).expect("distances are positive")
    }

    pub fn users(&self) -> usize {
        self.gain.len()
    }
}

/// Users uniform in a square cell with the access point at the centre.
/// Distances are clamped to at least 1 m.
pub fn place_users(users: usize, cell_size: f64, rng: &mut impl Rng) -> Vec<f64> {
    let half = cell_size / 2.0;
    (0..users)
        .map(|_| {
            let x: f64 = rng.random_range(-half..half);
            let y: f64 = rng.random_range(-half..half);
            x.hypot(y).max(1.0)
        })
        .collect()
}

pub fn channel_gain(distance: f64, fading: f64, n: f64) -> Result<f64, RadioError> {
    if !(distance > 0.0) {
        return Err(RadioError::BadDistance(distance));
    }
    Ok(fading * distance.powf(-n))
}

/// Sum of ρ·η over the other users sharing `k`'s channel.
/// `assignment[k]` is 0 for local, otherwise a 1-based channel.
pub fn interference(k: usize, assignment: &[u32], channel: &ChannelState, tx_power: f64) -> Result<f64, RadioError> {
    let ch = assignment[k];
    if ch == 0 {
        return Err(RadioError::LocalUser(k));
    }
    Ok(assignment
        .iter()
        .enumerate()
        .filter(|&(n, &c)| n != k && c == ch)
        .map(|(n, _)| tx_power * channel.gain[n])
        .sum())
}

/// Rate on one of M equal sub-bands for received signal power `signal`.
pub fn shannon_rate(signal: f64, interference: f64, params: &SystemParams) -> f64 {
    let per_channel = params.bandwidth / params.num_channels as f64;
    per_channel * log_capacity(1.0 + signal / (interference + params.noise_var))
}

pub fn uplink_rate(k: usize, assignment: &[u32], channel: &ChannelState, params: &SystemParams) -> Result<f64, RadioError> {
    if assignment[k] as usize > params.num_channels {
        return Err(RadioError::BadChannel {
            user: k,
            channel: assignment[k],
            channels: params.num_channels,
        });
    }
    let r = interference(k, assignment, channel, params.tx_power)?;
    Ok(shannon_rate(params.tx_power * channel.gain[k], r, params))
}

/// Largest tolerable interference, or `Never` when even an interference-free
/// channel is not good enough.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Threshold {
    Finite(f64),
    Never,
}

impl Threshold {
    /// Interference `r` is acceptable (`r <= λ`).
    pub fn admits(self, r: f64) -> bool {
        match self {
            Threshold::Finite(l) => r <= l,
            Threshold::Never => false,
        }
    }

    /// Finite stand-in used by the potential: the `Never` case is the limit
    /// λ → -σ² of the closed form.
    pub fn value(self, noise_var: f64) -> f64 {
        match self {
            Threshold::Finite(l) => l,
            Threshold::Never => -noise_var,
        }
    }

    pub fn min(self, other: Threshold) -> Threshold {
        match (self, other) {
            (Threshold::Finite(a), Threshold::Finite(b)) => Threshold::Finite(a.min(b)),
            _ => Threshold::Never,
        }
    }

    pub fn max(self, other: Threshold) -> Threshold {
        match (self, other) {
            (Threshold::Finite(a), Threshold::Finite(b)) => Threshold::Finite(a.max(b)),
            (Threshold::Never, t) | (t, Threshold::Never) => t,
        }
    }
}

/// Interference at which the rate equals `required_rate` (bit/s).
pub fn rate_threshold(signal: f64, required_rate: f64, params: &SystemParams) -> Threshold {
    if !(required_rate.is_finite()) || required_rate < 0.0 {
        return Threshold::Never;
    }
    let per_channel = params.bandwidth / params.num_channels as f64;
    let denom = capacity_inverse_m1(required_rate / per_channel);
    if denom == 0.0 {
        return Threshold::Finite(f64::INFINITY);
    }
    Threshold::Finite(signal / denom - params.noise_var)
}

/// Break-even interference for a remote cost of the form `alpha/ω + c`
/// against local cost `local`: remote is cheaper iff interference < λ.
pub fn cost_threshold(signal: f64, alpha: f64, c: f64, local: f64, params: &SystemParams) -> Threshold {
    let margin = local - c;
    if !(margin > 0.0) {
        return Threshold::Never;
    }
    rate_threshold(signal, alpha / margin, params)
}

/// Offloading threshold with transmission and execution only (no consensus
/// or queueing): remote cost is `(I+V)(δT + δE·ρ)/ω + δT·P/F_b`.
pub fn interference_threshold(signal: f64, subtask: &SubtaskSpec, params: &SystemParams, dest: Dest) -> Threshold {
    let alpha = subtask.data_bits() * (params.delay_weight + params.energy_weight * params.tx_power);
    let c = params.delay_weight * subtask.load / dest.cpu(params);
    let local = local_cost(subtask, params).cost;
    cost_threshold(signal, alpha, c, local, params)
}
