//! Shared world state and per-slot game construction.

use rand::Rng;

use super::HarnessError;
use crate::cost::{local_cost, Dest, ExecutionCost, QueueState, RemoteCoef};
use crate::config::SystemParams;
use crate::game::{init_profile, run_to_ne, Cell, GameInstance, Strategy};
use crate::radio::{place_users, ChannelState};
use crate::rng::RngStream;
use crate::tasks::{sample_tasks, step_requests, RequestState, SubtaskSpec, TaskSet};

/// Everything every policy sees identically within a slot: the task
/// catalogue, user placement, fading and requests.
#[derive(Clone, Debug)]
pub struct World {
    pub params: SystemParams,
    pub tasks: TaskSet,
    pub flat: Vec<SubtaskSpec>,
    pub local: Vec<ExecutionCost>,
    pub distances: Vec<f64>,
    pub channel: ChannelState,
    pub requests: RequestState,
    request_rng: RngStream,
    fading_rng: RngStream,
}

impl World {
    pub fn new(params: &SystemParams, root: &RngStream) -> Result<Self, HarnessError> {
        let tasks = sample_tasks(params, &mut root.child("tasks"))?;
        let flat = tasks.flat();
        let local = flat.iter().map(|s| local_cost(s, params)).collect();
        let distances = place_users(params.num_users, params.cell_size, &mut root.child("placement"));
        let mut fading_rng = root.child("fading");
        let channel = ChannelState::redraw(&distances, params.path_loss_exp, &mut fading_rng);
        Ok(Self {
            params: params.clone(),
            tasks,
            flat,
            local,
            distances,
            channel,
            requests: RequestState::idle(params.num_users),
            request_rng: root.child("requests"),
            fading_rng,
        })
    }

    /// Moves to the next slot: new requests and fresh fading.
    pub fn advance(&mut self) -> Result<(), HarnessError> {
        self.requests = step_requests(&self.requests, &self.params.transition, &mut self.request_rng)?;
        self.channel = ChannelState::redraw(&self.distances, self.params.path_loss_exp, &mut self.fading_rng);
        Ok(())
    }

    pub fn indicator(&self) -> Vec<f64> {
        crate::agent::encode_state(&self.requests, &self.tasks, &self.params).indicator
    }

    /// (user, subtask index v, flat subtask index) for every active cell,
    /// user-major.
    pub fn active_cells(&self) -> Vec<(usize, usize, usize)> {
        let v = self.params.num_subtasks;
        self.requests
            .active_users()
            .flat_map(|(k, f)| {
                let base = self.tasks.flat_index(f, 0);
                (0..v).map(move |g| (k, g, base + g))
            })
            .collect()
    }

    pub fn signal(&self, user: usize) -> f64 {
        self.params.tx_power * self.channel.gain[user]
    }

    /// Destinations each cell may use under the cache limits: walking a
    /// user's subtasks in order, a destination stays available while the
    /// cumulative software volume fits its cache.
    pub fn cache_filter(&self, cells: &[(usize, usize, usize)], caps: [f64; 2]) -> Vec<[bool; 2]> {
        let mut out = Vec::with_capacity(cells.len());
        let mut cum = 0.0;
        let mut user = usize::MAX;
        for &(k, _, idx) in cells {
            if k != user {
                user = k;
                cum = 0.0;
            }
            cum += self.flat[idx].software;
            out.push([cum <= caps[0], cum <= caps[1]]);
        }
        out
    }
}

/// FIN and EIN queues of one policy.
#[derive(Clone, Debug, PartialEq)]
pub struct Queues {
    pub fin: QueueState,
    pub ein: QueueState,
}

impl Default for Queues {
    fn default() -> Self {
        Self {
            fin: QueueState::new(Dest::Fin),
            ein: QueueState::new(Dest::Ein),
        }
    }
}

impl Queues {
    pub fn get(&self, d: Dest) -> &QueueState {
        match d {
            Dest::Fin => &self.fin,
            Dest::Ein => &self.ein,
        }
    }

    pub fn get_mut(&mut self, d: Dest) -> &mut QueueState {
        match d {
            Dest::Fin => &mut self.fin,
            Dest::Ein => &mut self.ein,
        }
    }

    /// Enqueues this slot's arrivals, then serves one slot of work.
    pub fn commit(&mut self, arrivals: &[(Dest, f64)], slot: f64) {
        for &(d, s) in arrivals {
            self.get_mut(d).push(s);
        }
        self.fin.drain(slot);
        self.ein.drain(slot);
    }
}

/// Builds the slot's game for the given replica levels (indexed by flat
/// subtask) and queue backlogs.
pub fn build_game(world: &World, levels: &[u32], queues: &Queues) -> Result<GameInstance, HarnessError> {
    let p = &world.params;
    let cells = world.active_cells();
    let allowed = world.cache_filter(&cells, [p.cache_fin, p.cache_ein]);
    let backlog = [queues.fin.total(), queues.ein.total()];
    let mut out = Vec::with_capacity(cells.len());
    for (&(k, g, idx), allow) in cells.iter().zip(&allowed) {
        let spec = world.flat[idx];
        let mut remote = [None, None];
        for d in Dest::ALL {
            if allow[d.index()] {
                remote[d.index()] = Some(RemoteCoef::new(d, &spec, f64::from(levels[idx]), backlog[d.index()], p)?);
            }
        }
        out.push(Cell {
            user: k,
            group: g,
            subtask: idx,
            spec,
            signal: world.signal(k),
            local: world.local[idx],
            remote,
        });
    }
    Ok(GameInstance::new(out, p.num_subtasks, p))
}

/// Iteration cap for the dynamics, far above what instances here need.
pub fn iteration_cap(cells: usize) -> usize {
    1000 + 50 * cells * cells
}

pub fn solve(game: &GameInstance, params: &SystemParams) -> Vec<Strategy> {
    let start = init_profile(game, params);
    run_to_ne(game, start, iteration_cap(game.len()), false).profile
}

/// What each cell ended up doing and what it cost.
#[derive(Clone, Debug, PartialEq)]
pub struct CellResult {
    pub dest: Option<Dest>,
    pub channel: Option<u32>,
    pub delay: f64,
    pub energy: f64,
    pub cost: f64,
}

/// Slot totals for one policy.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SlotTotals {
    pub cells: Vec<CellResult>,
    pub cost: f64,
    pub delay: f64,
    pub energy: f64,
    pub incentive: f64,
    pub violations: u64,
    pub arrivals: Vec<(Dest, f64)>,
}

impl SlotTotals {
    pub fn from_cells(world: &World, specs: &[SubtaskSpec], cells: Vec<CellResult>) -> Self {
        let p = &world.params;
        let mut t = SlotTotals::default();
        for (c, spec) in cells.iter().zip(specs) {
            t.cost += c.cost;
            t.delay += c.delay;
            t.energy += c.energy;
            if p.deadline.is_some_and(|mu| !(c.delay <= mu)) {
                t.violations += 1;
            }
            if let Some(d) = c.dest {
                t.incentive += crate::chain::mining_incentive(spec, p.chain.incentive_per_mb);
                t.arrivals.push((d, spec.load / d.cpu(p)));
            }
        }
        t.cells = cells;
        t
    }

    /// Fractions (local, FIN, EIN); all-local when there are no cells.
    pub fn fractions(&self) -> [f64; 3] {
        let n = self.cells.len();
        if n == 0 {
            return [1.0, 0.0, 0.0];
        }
        let mut c = [0usize; 3];
        for r in &self.cells {
            c[match r.dest {
                None => 0,
                Some(Dest::Fin) => 1,
                Some(Dest::Ein) => 2,
            }] += 1;
        }
        let fin = c[1] as f64 / n as f64;
        let ein = c[2] as f64 / n as f64;
        [1.0 - fin - ein, fin, ein]
    }
}

fn remote_result(coef: &RemoteCoef, rate: f64, dest: Dest, channel: u32) -> CellResult {
    CellResult {
        dest: Some(dest),
        channel: Some(channel),
        delay: coef.delay(rate),
        energy: coef.energy_bits / rate,
        cost: coef.cost(rate),
    }
}

fn local_result(c: &Cell) -> CellResult {
    CellResult {
        dest: None,
        channel: None,
        delay: c.local.delay,
        energy: c.local.energy,
        cost: c.local.cost,
    }
}

/// Costs of a solved profile, destinations picked by the game.
pub fn evaluate(world: &World, game: &GameInstance, profile: &[Strategy]) -> SlotTotals {
    let cells = game
        .decisions(profile)
        .into_iter()
        .enumerate()
        .map(|(i, (d, e))| {
            let c = &game.cells[i];
            match (profile[i], e.dest) {
                (Strategy::Channel(m), Some(dest)) => {
                    debug_assert_eq!(d.mode, m + 1);
                    let coef = c.remote[dest.index()].expect("chosen destination exists");
                    remote_result(&coef, e.rate, dest, m)
                }
                _ => local_result(c),
            }
        })
        .collect();
    let specs: Vec<_> = game.cells.iter().map(|c| c.spec).collect();
    SlotTotals::from_cells(world, &specs, cells)
}

/// Re-costs fixed (channel, destination) decisions on another game over the
/// same cells, e.g. the same decisions at full redundancy.
pub fn evaluate_fixed(world: &World, game: &GameInstance, decisions: &[CellResult]) -> SlotTotals {
    let profile: Vec<Strategy> = decisions
        .iter()
        .map(|d| d.channel.map_or(Strategy::Local, Strategy::Channel))
        .collect();
    let cells = decisions
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let c = &game.cells[i];
            match (d.channel, d.dest) {
                (Some(m), Some(dest)) => match c.remote[dest.index()] {
                    Some(coef) => {
                        let rate = game.rate(i, game.interference(i, m, &profile));
                        remote_result(&coef, rate, dest, m)
                    }
                    None => local_result(c),
                },
                _ => local_result(c),
            }
        })
        .collect();
    let specs: Vec<_> = game.cells.iter().map(|c| c.spec).collect();
    SlotTotals::from_cells(world, &specs, cells)
}

/// A random queue-free game with every user active: K users, M channels,
/// V subtasks per task, replica levels uniform in [r_min, r_max].
pub fn random_game(
    base: &SystemParams,
    users: usize,
    channels: usize,
    subtasks: usize,
    rng: &mut RngStream,
) -> Result<GameInstance, HarnessError> {
    let mut p = base.clone();
    p.num_users = users;
    p.num_channels = channels;
    p.num_subtasks = subtasks;
    p.queue_enabled = false;
    p.deadline = None;
    p.seed = rng.random();
    let root = RngStream::new(p.seed, "random-game");
    let mut world = World::new(&p, &root)?;
    world.requests = RequestState((0..users).map(|_| rng.random_range(1..=p.num_tasks as u32)).collect());
    let levels: Vec<u32> = (0..world.flat.len())
        .map(|_| rng.random_range(p.chain.r_min..=p.chain.r_max))
        .collect();
    build_game(&world, &levels, &Queues::default())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MB;

    #[test]
    fn cache_filter_is_per_user_prefix() {
        let mut p = SystemParams::default();
        p.num_users = 2;
        p.num_tasks = 1;
        p.num_subtasks = 3;
        let mut w = World::new(&p, &RngStream::new(1, "w")).unwrap();
        w.flat = vec![
            SubtaskSpec::new(MB, 2.0 * MB, 1e9),
            SubtaskSpec::new(MB, 2.0 * MB, 1e9),
            SubtaskSpec::new(MB, 2.0 * MB, 1e9),
        ];
        w.requests = RequestState(vec![1, 1]);
        let cells = w.active_cells();
        assert_eq!(cells.len(), 6);
        let f = w.cache_filter(&cells, [4.0 * MB, 6.0 * MB]);
        assert_eq!(f[0], [true, true]);
        assert_eq!(f[1], [true, true]);
        assert_eq!(f[2], [false, true]);
        assert_eq!(f[3], [true, true]);
    }

    #[test]
    fn queues_commit_then_drain() {
        let mut q = Queues::default();
        q.commit(&[(Dest::Fin, 3.0), (Dest::Fin, 4.0), (Dest::Ein, 1.0)], 5.0);
        assert_eq!(q.fin.total(), 2.0);
        assert_eq!(q.ein.total(), 0.0);
    }

    #[test]
    fn fixed_evaluation_reproduces_the_game() {
        let p = SystemParams::default();
        let mut rng = RngStream::new(3, "g");
        let g = random_game(&p, 8, 3, 2, &mut rng).unwrap();
        let prof = solve(&g, &p);
        let w = World::new(&p, &RngStream::new(1, "w")).unwrap();
        let a = evaluate(&w, &g, &prof);
        let b = evaluate_fixed(&w, &g, &a.cells);
        assert_eq!(a.cells, b.cells);
        let fr = a.fractions();
        assert!((fr.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
