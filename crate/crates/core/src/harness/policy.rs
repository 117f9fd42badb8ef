//! The proposed policy and the four baselines, one slot at a time.

use rand::Rng;

use super::env::{build_game, evaluate, evaluate_fixed, solve, CellResult, Queues, SlotTotals, World};
use super::metrics::{PolicyKind, SlotMetrics};
use super::HarnessError;
use crate::agent::{knapsack_problem, reward, BrfAgent, FeasibleSampler, Transition};
use crate::chain::{bc_spend, check_redundancy, RedundancyProfile};
use crate::config::BaselineMode;
use crate::cost::{Dest, RemoteCoef};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AgentMode {
    /// ε-greedy actions, transitions stored and learned from.
    Train,
    /// Greedy actions, weights untouched.
    Frozen,
}

#[derive(Clone, Debug)]
pub struct SlotReport {
    pub metrics: SlotMetrics,
    pub levels: Vec<u32>,
    /// `check_redundancy` passed for the applied levels.
    pub action_ok: bool,
    pub loss: Option<f64>,
    pub totals: SlotTotals,
}

pub struct PolicyRunner {
    pub kind: PolicyKind,
    pub queues: Queues,
    rng: RngStream,
    sampler: Option<FeasibleSampler>,
    pending: Option<Vec<u32>>,
    prev_state: Vec<f64>,
}

impl PolicyRunner {
    pub fn new(kind: PolicyKind, world: &World, root: &RngStream) -> Self {
        let sampler = (kind == PolicyKind::OpgRand).then(|| FeasibleSampler::new(knapsack_problem(&world.params, &world.tasks)));
        Self {
            kind,
            queues: Queues::default(),
            rng: root.child(&format!("policy/{}", kind.name())),
            sampler,
            pending: None,
            prev_state: world.indicator(),
        }
    }

    fn full(world: &World) -> Vec<u32> {
        vec![world.params.chain.r_max; world.flat.len()]
    }

    /// Runs one slot on the current world. `agent` is required for the
    /// proposed policy and ignored otherwise.
    pub fn run_slot(
        &mut self,
        world: &World,
        agent: Option<&mut BrfAgent>,
        mode: AgentMode,
        episode: usize,
        slot: usize,
    ) -> Result<SlotReport, HarnessError> {
        let p = &world.params;
        let mut loss = None;
        let (levels, totals, cost_o) = match self.kind {
            PolicyKind::Proposed => {
                let agent = agent.ok_or(HarnessError::MissingAgent)?;
                let levels = match self.pending.take() {
                    Some(l) => l,
                    None => choose(agent, &self.prev_state, None, mode)?,
                };
                let game = build_game(world, &levels, &self.queues)?;
                let totals = evaluate(world, &game, &solve(&game, p));
                let cost_o = self.full_cost(world, &totals.cells)?;
                let next_state = world.indicator();
                let r = reward(cost_o, totals.cost, totals.incentive, p.agent.reward_weights);
                if mode == AgentMode::Train {
                    loss = agent.step(Transition {
                        state: std::mem::take(&mut self.prev_state),
                        action: levels.clone(),
                        reward: r,
                        next_state: next_state.clone(),
                    })?;
                }
                self.pending = Some(choose(agent, &next_state, Some(&levels), mode)?);
                self.prev_state = next_state;
                (levels, totals, cost_o)
            }
            PolicyKind::Opg => {
                let levels = Self::full(world);
                let game = build_game(world, &levels, &self.queues)?;
                let totals = evaluate(world, &game, &solve(&game, p));
                let c = totals.cost;
                (levels, totals, c)
            }
            PolicyKind::OpgRand => {
                let sampler = self.sampler.as_ref().expect("sampler built for opg-rand");
                let levels = sampler
                    .sample(&mut self.rng)
                    .unwrap_or_else(|| vec![p.chain.r_min; world.flat.len()]);
                let game = build_game(world, &levels, &self.queues)?;
                let totals = evaluate(world, &game, &solve(&game, p));
                let cost_o = self.full_cost(world, &totals.cells)?;
                (levels, totals, cost_o)
            }
            PolicyKind::Mec => {
                let levels = Self::full(world);
                let totals = mec_slot(world, &self.queues)?;
                let c = totals.cost;
                (levels, totals, c)
            }
            PolicyKind::Random => {
                let levels = Self::full(world);
                let totals = random_slot(world, &self.queues, &mut self.rng)?;
                let c = totals.cost;
                (levels, totals, c)
            }
        };
        self.queues.commit(&totals.arrivals, p.slot_duration);

        let profile = RedundancyProfile::from_occupancy(&levels, p.chain.r_max);
        let action_ok = check_redundancy(&profile, &world.flat, p).is_ok();
        let n = totals.cells.len();
        let per = |x: f64| if n == 0 { 0.0 } else { x / n as f64 };
        let [fl, ff, fe] = totals.fractions();
        let metrics = SlotMetrics {
            episode,
            slot: slot as i64,
            policy: self.kind,
            avg_cost: per(totals.cost),
            avg_latency: per(totals.delay),
            avg_energy: per(totals.energy),
            reward: reward(cost_o, totals.cost, totals.incentive, p.agent.reward_weights),
            bc_spend: bc_spend(&profile, &world.flat, p.chain.price_per_mb),
            incentive: totals.incentive,
            deadline_violations: totals.violations,
            frac_local: fl,
            frac_fin: ff,
            frac_ein: fe,
        };
        Ok(SlotReport {
            metrics,
            levels,
            action_ok,
            loss,
            totals,
        })
    }

    /// C^O: the slot's cost at full redundancy with the same queues, either
    /// re-solved or with the given decisions held.
    fn full_cost(&self, world: &World, decisions: &[CellResult]) -> Result<f64, HarnessError> {
        let game = build_game(world, &Self::full(world), &self.queues)?;
        let totals = match world.params.agent.baseline {
            BaselineMode::Reequilibrate => evaluate(world, &game, &solve(&game, &world.params)),
            BaselineMode::Hold => evaluate_fixed(world, &game, decisions),
        };
        Ok(totals.cost)
    }
}

fn choose(agent: &mut BrfAgent, state: &[f64], prev: Option<&[u32]>, mode: AgentMode) -> Result<Vec<u32>, HarnessError> {
    Ok(match mode {
        AgentMode::Train => agent.select_action(state, true)?.levels,
        AgentMode::Frozen => {
            let prev = prev.map(<[u32]>::to_vec).unwrap_or_else(|| vec![agent.problem().r_max; agent.problem().len()]);
            agent.infer_policy(state, &prev)?.0
        }
    })
}

/// Single MEC server with EIN compute at full redundancy. Channels are
/// round-robin per subtask index; a cell offloads while the MEC cost beats
/// local and the server's cache still has room, then rates are recomputed
/// with only the admitted cells on air.
pub fn mec_slot(world: &World, queues: &Queues) -> Result<SlotTotals, HarnessError> {
    let p = &world.params;
    let cells = world.active_cells();
    let r_max = f64::from(p.chain.r_max);
    let backlog = queues.ein.total();
    let m = p.num_channels as u32;
    let mut next = vec![0u32; p.num_subtasks];
    let mut chan = Vec::with_capacity(cells.len());
    let mut coefs = Vec::with_capacity(cells.len());
    for &(_, g, idx) in &cells {
        chan.push(next[g] % m);
        next[g] += 1;
        coefs.push(RemoteCoef::new(Dest::Ein, &world.flat[idx], r_max, backlog, p)?);
    }
    let interference = |i: usize, on: &[bool]| -> f64 {
        let g = cells[i].1;
        (0..cells.len())
            .filter(|&j| j != i && on[j] && cells[j].1 == g && chan[j] == chan[i])
            .map(|j| world.signal(cells[j].0))
            .sum()
    };
    let rate = |i: usize, r: f64| -> f64 { crate::radio::shannon_rate(world.signal(cells[i].0), r, p) };

    let all = vec![true; cells.len()];
    let mut admitted = vec![false; cells.len()];
    let mut used = 0.0;
    for i in 0..cells.len() {
        let idx = cells[i].2;
        let v = world.flat[idx].software;
        let cost = coefs[i].cost(rate(i, interference(i, &all)));
        if cost < world.local[idx].cost && used + v <= p.experiment.mec_cache {
            admitted[i] = true;
            used += v;
        }
    }
    let results = (0..cells.len())
        .map(|i| {
            let idx = cells[i].2;
            if admitted[i] {
                let w = rate(i, interference(i, &admitted));
                CellResult {
                    dest: Some(Dest::Ein),
                    channel: Some(chan[i]),
                    delay: coefs[i].delay(w),
                    energy: coefs[i].energy_bits / w,
                    cost: coefs[i].cost(w),
                }
            } else {
                let l = world.local[idx];
                CellResult {
                    dest: None,
                    channel: None,
                    delay: l.delay,
                    energy: l.energy,
                    cost: l.cost,
                }
            }
        })
        .collect();
    let specs: Vec<_> = cells.iter().map(|c| world.flat[c.2]).collect();
    Ok(SlotTotals::from_cells(world, &specs, results))
}

/// Uniform destination in {local, FIN, EIN} and uniform channel per cell at
/// full redundancy; a destination ruled out by the cache falls back to local.
pub fn random_slot(world: &World, queues: &Queues, rng: &mut RngStream) -> Result<SlotTotals, HarnessError> {
    let p = &world.params;
    let game = build_game(world, &vec![p.chain.r_max; world.flat.len()], queues)?;
    let decisions: Vec<CellResult> = game
        .cells
        .iter()
        .map(|c| {
            let pick = rng.random_range(0..3u8);
            let ch = rng.random_range(0..p.num_channels as u32);
            let dest = match pick {
                1 => Some(Dest::Fin),
                2 => Some(Dest::Ein),
                _ => None,
            }
            .filter(|d| c.remote[d.index()].is_some());
            CellResult {
                dest,
                channel: dest.map(|_| ch),
                delay: 0.0,
                energy: 0.0,
                cost: 0.0,
            }
        })
        .collect();
    Ok(evaluate_fixed(world, &game, &decisions))
}
