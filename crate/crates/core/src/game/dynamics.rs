//! Best-response dynamics.

use serde::Serialize;

use super::{potential_with, Eval, GameInstance, Strategy};
use crate::cost::Dest;

/// One accepted move.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TraceEntry {
    pub iteration: usize,
    /// Potential after the move.
    pub potential: f64,
    /// Potential decrease caused by the move, from the mover's own terms
    /// (exact where differencing two large totals would round to zero).
    pub decrease: f64,
    pub cell: usize,
    pub from: Strategy,
    pub to: Strategy,
    /// Mover's cost decrease (infinite when it escapes infeasibility).
    pub gain: f64,
}

#[derive(Clone, Debug)]
pub struct GameOutcome {
    pub profile: Vec<Strategy>,
    pub iterations: usize,
    pub converged: bool,
    pub trace: Vec<TraceEntry>,
}

fn gain(cur: &Eval, new: &Eval) -> f64 {
    if cur.infeasible && !new.infeasible {
        f64::INFINITY
    } else {
        cur.cost - new.cost
    }
}

/// Best response of cell `i` against the rest of `profile`: the least
/// interfered channel (lowest index on ties) against local, local on ties.
/// Returns the response and its evaluation.
pub fn best_response(game: &GameInstance, i: usize, profile: &[Strategy]) -> (Strategy, Eval) {
    let loads = game.channel_loads(game.cells[i].group, profile);
    respond(game, i, profile[i], &loads)
}

/// Interference cell `i` would see on channel `m` given its group's loads.
fn seen(game: &GameInstance, i: usize, own: Strategy, loads: &[f64], m: u32) -> f64 {
    if own == Strategy::Channel(m) {
        (loads[m as usize] - game.cells[i].signal).max(0.0)
    } else {
        loads[m as usize]
    }
}

fn respond(game: &GameInstance, i: usize, own: Strategy, loads: &[f64]) -> (Strategy, Eval) {
    let mut best_m = None;
    let mut best_r = f64::INFINITY;
    for m in 0..game.channels as u32 {
        let r = seen(game, i, own, loads, m);
        if best_m.is_none() || r < best_r {
            best_m = Some(m);
            best_r = r;
        }
    }
    let local = game.local_eval(i);
    let Some(m) = best_m else {
        return (Strategy::Local, local);
    };
    let remote = game.remote_eval(i, best_r);
    if remote.beats(&local, 0.0) {
        (Strategy::Channel(m), remote)
    } else {
        (Strategy::Local, local)
    }
}

/// Profitable unilateral deviation of cell `i`, if any. Checks every
/// (local, channel, destination) option, not just the best response.
pub fn find_deviation(game: &GameInstance, i: usize, profile: &[Strategy]) -> Option<(Strategy, Eval)> {
    let cur = game.current_eval(i, profile);
    let tol = game.rel_tol;
    let local = game.local_eval(i);
    if profile[i] != Strategy::Local && local.beats(&cur, tol) {
        return Some((Strategy::Local, local));
    }
    for m in 0..game.channels as u32 {
        let r = game.interference(i, m, profile);
        for dest in Dest::ALL {
            if let Some(e) = game.dest_eval(i, dest, r) {
                if e.beats(&cur, tol) {
                    return Some((Strategy::Channel(m), e));
                }
            }
        }
    }
    None
}

pub fn is_ne(game: &GameInstance, profile: &[Strategy]) -> bool {
    (0..game.len()).all(|i| find_deviation(game, i, profile).is_none())
}

/// The part of the potential that depends on cell `i`'s strategy.
fn own_term(game: &GameInstance, i: usize, profile: &[Strategy], lambda: &[f64]) -> f64 {
    let w = game.cells[i].signal;
    match profile[i] {
        Strategy::Local => w * lambda[i],
        Strategy::Channel(m) => w * game.interference(i, m, profile),
    }
}

/// Runs best-response dynamics from `start`. Each iteration moves the cell
/// with the largest cost decrease (lowest index on ties); only cells sharing
/// the mover's subtask index are re-evaluated afterwards.
pub fn run_to_ne(game: &GameInstance, start: Vec<Strategy>, max_iters: usize, trace: bool) -> GameOutcome {
    let mut profile = start;
    let lambda = game.lambda_values();
    let tol = game.rel_tol;
    let candidate = |profile: &[Strategy], loads: &[f64], i: usize| -> Option<(Strategy, f64)> {
        let own = profile[i];
        let cur = match own {
            Strategy::Local => game.local_eval(i),
            Strategy::Channel(m) => game.remote_eval(i, seen(game, i, own, loads, m)),
        };
        let (s, e) = respond(game, i, own, loads);
        if s != own && e.beats(&cur, tol) {
            Some((s, gain(&cur, &e)))
        } else {
            None
        }
    };
    let mut loads: Vec<Vec<f64>> = (0..game.groups).map(|g| game.channel_loads(g, &profile)).collect();
    let mut cand: Vec<Option<(Strategy, f64)>> = (0..game.len())
        .map(|i| candidate(&profile, &loads[game.cells[i].group], i))
        .collect();
    let mut entries = vec![];
    let mut iterations = 0;
    loop {
        let mut pick: Option<(usize, Strategy, f64)> = None;
        for (i, c) in cand.iter().enumerate() {
            if let Some((s, g)) = *c {
                if pick.is_none_or(|(_, _, pg)| g > pg) {
                    pick = Some((i, s, g));
                }
            }
        }
        let Some((i, s, g)) = pick else {
            return GameOutcome {
                profile,
                iterations,
                converged: true,
                trace: entries,
            };
        };
        if iterations >= max_iters {
            return GameOutcome {
                profile,
                iterations,
                converged: false,
                trace: entries,
            };
        }
        let from = profile[i];
        let before = own_term(game, i, &profile, &lambda);
        profile[i] = s;
        iterations += 1;
        if trace {
            entries.push(TraceEntry {
                iteration: iterations,
                potential: potential_with(game, &profile, &lambda),
                decrease: before - own_term(game, i, &profile, &lambda),
                cell: i,
                from,
                to: s,
                gain: g,
            });
        }
        let grp = game.cells[i].group;
        loads[grp] = game.channel_loads(grp, &profile);
        for &j in game.members(grp) {
            cand[j] = candidate(&profile, &loads[grp], j);
        }
    }
}
