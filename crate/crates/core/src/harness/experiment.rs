//! Training and evaluation runs.

use super::env::World;
use super::metrics::{episode_aggregate, PolicyKind, SlotMetrics};
use super::policy::{AgentMode, PolicyRunner};
use super::HarnessError;
use crate::agent::{AgentCheckpoint, BrfAgent};
use crate::config::SystemParams;
use crate::exec::{self, Exec};
use crate::rng::RngStream;

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    pub policies: Vec<PolicyKind>,
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub slots: usize,
    /// Emit per-slot rows for training episodes too (aggregates always).
    pub train_slot_rows: bool,
    pub exec: Exec,
}

impl RunOptions {
    pub fn from_params(params: &SystemParams) -> Self {
        let e = &params.experiment;
        Self {
            policies: PolicyKind::ALL.to_vec(),
            train_episodes: e.train_episodes,
            eval_episodes: e.eval_episodes,
            slots: e.slots_per_episode,
            train_slot_rows: false,
            exec: Exec::default(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ExperimentOutput {
    /// Training episodes are numbered first, evaluation episodes follow.
    pub rows: Vec<SlotMetrics>,
    /// Redundancy actions applied by the proposed policy, and how many of
    /// them failed `check_redundancy`.
    pub actions_checked: u64,
    pub action_violations: u64,
    /// Mean training loss per training episode (NaN before the first step).
    pub train_loss: Vec<f64>,
    pub agent: Option<AgentCheckpoint>,
}

impl ExperimentOutput {
    /// Episode aggregates of one policy in the evaluation phase.
    pub fn eval_aggregates(&self, policy: PolicyKind, train_episodes: usize) -> Vec<&SlotMetrics> {
        self.rows
            .iter()
            .filter(|r| r.slot == -1 && r.policy == policy && r.episode >= train_episodes)
            .collect()
    }

    pub fn eval_mean(&self, policy: PolicyKind, train_episodes: usize, f: fn(&SlotMetrics) -> f64) -> f64 {
        let rows = self.eval_aggregates(policy, train_episodes);
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len().max(1) as f64
    }
}

/// Trains the proposed policy (when selected and `train_episodes > 0`),
/// then runs every selected policy on the same slots with the agent frozen.
pub fn run_experiment(
    params: &SystemParams,
    opts: &RunOptions,
    checkpoint: Option<&AgentCheckpoint>,
) -> Result<ExperimentOutput, HarnessError> {
    params.validate()?;
    let root = RngStream::new(params.seed, "run");
    let mut world = World::new(params, &root)?;
    let with_agent = opts.policies.contains(&PolicyKind::Proposed);
    let schedule = (opts.train_episodes * opts.slots) as u64;
    let mut agent = with_agent.then(|| {
        let mut a = BrfAgent::new(params, &world.tasks, schedule, &root.child("agent"));
        a.exec = opts.exec;
        a
    });
    if let (Some(a), Some(c)) = (agent.as_mut(), checkpoint) {
        a.restore(c)?;
    }
    let mut out = ExperimentOutput::default();

    if let Some(a) = agent.as_mut() {
        let mut runner = PolicyRunner::new(PolicyKind::Proposed, &world, &root.child("train"));
        for ep in 0..opts.train_episodes {
            let mut rows = Vec::with_capacity(opts.slots);
            let (mut loss_sum, mut loss_n) = (0.0, 0usize);
            for s in 0..opts.slots {
                world.advance()?;
                let r = runner.run_slot(&world, Some(a), AgentMode::Train, ep, s)?;
                out.actions_checked += 1;
                out.action_violations += u64::from(!r.action_ok);
                if let Some(l) = r.loss {
                    loss_sum += l;
                    loss_n += 1;
                }
                rows.push(r.metrics);
            }
            out.train_loss.push(if loss_n > 0 { loss_sum / loss_n as f64 } else { f64::NAN });
            let agg = episode_aggregate(ep, PolicyKind::Proposed, &rows);
            if opts.train_slot_rows {
                out.rows.extend(rows);
            }
            out.rows.push(agg);
        }
    }

    let eval_root = root.child("eval");
    let mut runners: Vec<PolicyRunner> = opts
        .policies
        .iter()
        .map(|&k| PolicyRunner::new(k, &world, &eval_root))
        .collect();
    for e in 0..opts.eval_episodes {
        let ep = opts.train_episodes + e;
        let mut per_policy: Vec<Vec<SlotMetrics>> = vec![Vec::with_capacity(opts.slots); runners.len()];
        for s in 0..opts.slots {
            world.advance()?;
            for (i, runner) in runners.iter_mut().enumerate() {
                let r = runner.run_slot(&world, agent.as_mut(), AgentMode::Frozen, ep, s)?;
                if runner.kind == PolicyKind::Proposed {
                    out.actions_checked += 1;
                    out.action_violations += u64::from(!r.action_ok);
                }
                out.rows.push(r.metrics.clone());
                per_policy[i].push(r.metrics);
            }
        }
        for (i, runner) in runners.iter().enumerate() {
            out.rows.push(episode_aggregate(ep, runner.kind, &per_policy[i]));
        }
    }
    out.agent = agent.map(|a| a.checkpoint());
    Ok(out)
}

/// Independent runs, one per parameter set, fanned out with `exec`.
/// Results come back in input order.
pub fn run_many(
    configs: &[SystemParams],
    opts: &RunOptions,
    exec: Exec,
) -> Vec<Result<ExperimentOutput, HarnessError>> {
    exec::map(exec, configs, |p| run_experiment(p, opts, None))
}
