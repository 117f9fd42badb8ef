//! Quick property checks behind the `selftest` subcommand.

use ndarray::Array2;
use rand::Rng;

use crate::agent::KnapsackProblem;
use crate::config::{KnapsackSense, SystemParams};
use crate::game::{convergence_bound, init_profile, is_ne, potential, run_to_ne, Strategy};
use crate::harness::env::{iteration_cap, random_game};
use crate::rng::RngStream;
use crate::scaa::{gradient_check, Batch, Network};

#[derive(Clone, Debug)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

pub fn run_all(seed: u64) -> Vec<CheckResult> {
    vec![knapsack(seed, 200), equilibrium(seed, 50), potential_sign(seed, 1000), gradients(seed, 20)]
}

/// DP objective equals enumeration on random small instances.
pub fn knapsack(seed: u64, instances: usize) -> CheckResult {
    let mut rng = RngStream::new(seed, "selftest/knapsack");
    let mut bad = 0;
    for _ in 0..instances {
        let n = rng.random_range(1..=6);
        let r_max = rng.random_range(1..=4);
        let p = KnapsackProblem {
            volumes: (0..n).map(|_| f64::from(rng.random_range(1..=5u32))).collect(),
            price: 1.0,
            budget: f64::from(rng.random_range(0..=30u32)),
            quantum: 1.0,
            r_min: rng.random_range(1..=r_max),
            r_max,
        };
        let theta: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(-16..=40i32)) / 8.0).collect();
        let s = p.solve(&theta, KnapsackSense::Max);
        let all = p.enumerate_feasible();
        if all.is_empty() {
            bad += usize::from(!s.infeasible);
            continue;
        }
        let best = all.iter().map(|l| p.objective(&theta, l)).fold(f64::NEG_INFINITY, f64::max);
        bad += usize::from(s.objective != best || s.infeasible);
    }
    CheckResult {
        name: "knapsack",
        passed: bad == 0,
        detail: format!("{bad}/{instances} mismatches"),
    }
}

/// Dynamics reach a verified equilibrium within the iteration bound.
pub fn equilibrium(seed: u64, instances: usize) -> CheckResult {
    let base = SystemParams::default();
    let mut rng = RngStream::new(seed, "selftest/ne");
    let mut bad = 0;
    for _ in 0..instances {
        let k = rng.random_range(1..=10);
        let m = rng.random_range(1..=4);
        let v = rng.random_range(1..=3);
        let g = match random_game(&base, k, m, v, &mut rng) {
            Ok(g) => g,
            Err(_) => {
                bad += 1;
                continue;
            }
        };
        let start = init_profile(&g, &base);
        let out = run_to_ne(&g, start, iteration_cap(g.len()), true);
        let pi = out.trace.iter().map(|e| e.decrease).fold(f64::INFINITY, f64::min);
        let signals: Vec<f64> = g.cells.iter().map(|c| c.signal).collect();
        let within = out.trace.is_empty()
            || convergence_bound(&signals, &g.lambda_values(), pi).is_ok_and(|b| out.iterations as f64 <= b);
        if !(out.converged && is_ne(&g, &out.profile) && pi > 0.0 && within) {
            bad += 1;
        }
    }
    CheckResult {
        name: "equilibrium",
        passed: bad == 0,
        detail: format!("{bad}/{instances} failures"),
    }
}

/// The potential moves with the deviator's cost on random deviations.
pub fn potential_sign(seed: u64, deviations: usize) -> CheckResult {
    let base = SystemParams::default();
    let mut rng = RngStream::new(seed, "selftest/potential");
    let mut bad = 0;
    let mut done = 0;
    while done < deviations {
        let k = rng.random_range(2..=8);
        let m = rng.random_range(1..=3);
        let g = match random_game(&base, k, m, 1, &mut rng) {
            Ok(g) => g,
            Err(_) => return CheckResult {
                name: "potential",
                passed: false,
                detail: "instance construction failed".into(),
            },
        };
        let profile: Vec<Strategy> = (0..g.len())
            .map(|_| match rng.random_range(0..=m as u32) {
                0 => Strategy::Local,
                c => Strategy::Channel(c - 1),
            })
            .collect();
        for _ in 0..20 {
            let i = rng.random_range(0..g.len());
            let to = match rng.random_range(0..=m as u32) {
                0 => Strategy::Local,
                c => Strategy::Channel(c - 1),
            };
            if to == profile[i] {
                continue;
            }
            let mut after = profile.clone();
            after[i] = to;
            let df = g.current_eval(i, &after).cost - g.current_eval(i, &profile).cost;
            let dphi = potential(&g, &after) - potential(&g, &profile);
            if df.signum() != dphi.signum() && df != 0.0 {
                bad += 1;
            }
            done += 1;
        }
    }
    CheckResult {
        name: "potential",
        passed: bad == 0,
        detail: format!("{bad}/{done} sign disagreements"),
    }
}

/// Analytic gradients against central differences on random small nets.
pub fn gradients(seed: u64, nets: usize) -> CheckResult {
    let mut rng = RngStream::new(seed, "selftest/grad");
    let mut worst: f64 = 0.0;
    for _ in 0..nets {
        let dims = [rng.random_range(2..6), rng.random_range(2..6), rng.random_range(2..6), rng.random_range(1..4)];
        let net = Network::new(&dims, 0.2, 0.0, &mut rng);
        let n = rng.random_range(1..5);
        let x = Array2::from_shape_fn((n, dims[0]), |_| f64::from(rng.random_range(0..2u8)));
        let a = Array2::from_shape_fn((n, dims[3]), |_| rng.random_range(-1.0..1.0));
        let t: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mask = net.dropout_mask(n, &mut rng);
        let b = Batch {
            inputs: &x,
            actions: &a,
            targets: &t,
        };
        match gradient_check(&net, &b, Some(&mask), 1e-6) {
            Ok(e) => worst = worst.max(e),
            Err(_) => worst = f64::INFINITY,
        }
    }
    CheckResult {
        name: "gradients",
        passed: worst < 1e-4,
        detail: format!("max relative error {worst:.2e}"),
    }
}
