use proptest::prelude::*;

use coinsim::agent::{KnapsackProblem, ReplayMemory, RunningStats, Transition};
use coinsim::chain::{check_redundancy, consensus_latency, RedundancyProfile};
use coinsim::config::{KnapsackSense, SystemParams, MB};
use coinsim::cost::{local_cost, remote_cost, Dest, QueueState};
use coinsim::game::{potential, Strategy};
use coinsim::harness::{random_game, run_experiment, PolicyKind, RunOptions};
use coinsim::radio::{interference, shannon_rate, ChannelState};
use coinsim::rng::RngStream;
use coinsim::scaa::{huber_grad, huber_loss, q_value};
use coinsim::tasks::SubtaskSpec;

fn spec(i_mb: f64, v_mb: f64, gcycles: f64) -> SubtaskSpec {
    SubtaskSpec::new(i_mb * MB, v_mb * MB, gcycles * 1e9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn rate_monotone(signal in 1e-10f64..1e-5, i in 0.0f64..1e-6, extra in 1e-9f64..1e-6) {
        let p = SystemParams::default();
        prop_assert!(shannon_rate(signal, i + extra, &p) < shannon_rate(signal, i, &p));
        prop_assert!(shannon_rate(signal + extra, i, &p) > shannon_rate(signal, i, &p));
    }

    #[test]
    fn interference_ignores_peer_order(gains in prop::collection::vec(1e-9f64..1e-5, 2..8), seed in any::<u64>()) {
        let n = gains.len();
        let mut order: Vec<usize> = (1..n).collect();
        let mut rng = RngStream::new(seed, "perm");
        use rand::seq::SliceRandom;
        order.shuffle(&mut rng);
        let mut permuted = vec![gains[0]];
        permuted.extend(order.iter().map(|&j| gains[j]));
        let assign = vec![1u32; n];
        let a = interference(0, &assign, &ChannelState::from_gains(gains), 0.5).unwrap();
        let b = interference(0, &assign, &ChannelState::from_gains(permuted), 0.5).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn consensus_monotone(
        i_mb in 0.1f64..10.0, v_mb in 0.1f64..10.0, r in 0u32..20,
        q in 0u32..20, nf in 0u32..3, w in 1e5f64..1e9,
    ) {
        let mut p = SystemParams::default();
        p.chain.block_txs = f64::from(q);
        p.chain.num_faulty = nf;
        let s = spec(i_mb, v_mb, 1.0);
        let base = consensus_latency(&s, f64::from(r), w, &p).unwrap();
        prop_assert!((base.total - base.phase_sum()).abs() <= 1e-12 * base.total);
        prop_assert!(consensus_latency(&s, f64::from(r + 1), w, &p).unwrap().total >= base.total);
        prop_assert!(consensus_latency(&spec(i_mb + 1.0, v_mb, 1.0), f64::from(r), w, &p).unwrap().total >= base.total);
        prop_assert!(consensus_latency(&s, f64::from(r), w * 2.0, &p).unwrap().total < base.total);
        let mut pq = p.clone();
        pq.chain.block_txs += 1.0;
        prop_assert!(consensus_latency(&s, f64::from(r), w, &pq).unwrap().total >= base.total);
        let mut pf = p.clone();
        pf.chain.num_faulty += 1;
        prop_assert!(consensus_latency(&s, f64::from(r), w, &pf).unwrap().total >= base.total);
    }

    #[test]
    fn redundancy_check_matches_constraints(
        vols in prop::collection::vec(1u32..5, 1..5),
        occ in prop::collection::vec(1u32..6, 5),
        budget in 0u32..40,
    ) {
        let mut p = SystemParams::default();
        p.chain.r_max = 4;
        p.chain.price_per_mb = 1.0;
        p.chain.budget = f64::from(budget);
        let subs: Vec<_> = vols.iter().map(|&v| spec(1.0, f64::from(v), 1.0)).collect();
        let occ = &occ[..subs.len()];
        // Encode occupancy as r with beta = 0, so beta + r = occ.
        let profile = RedundancyProfile { r: occ.to_vec(), beta: vec![false; occ.len()] };
        let spend: u32 = vols.iter().zip(occ).map(|(v, o)| v * o).sum();
        let expected = occ.iter().all(|&o| o <= 4) && spend <= budget;
        prop_assert_eq!(check_redundancy(&profile, &subs, &p).is_ok(), expected);
    }

    #[test]
    fn costs_non_negative(i_mb in 0.1f64..10.0, v_mb in 0.1f64..10.0, g in 0.1f64..20.0, w in 1e4f64..1e9, r in 1u32..10) {
        let p = SystemParams::default();
        let s = spec(i_mb, v_mb, g);
        let l = local_cost(&s, &p);
        prop_assert!(l.delay >= 0.0 && l.energy >= 0.0 && l.cost >= 0.0);
        for d in Dest::ALL {
            let q = QueueState::with_pending(d, &[0.5, 1.0]);
            let c = remote_cost(d, &s, w, f64::from(r), &q, &p).unwrap();
            prop_assert!(c.delay >= 0.0 && c.energy >= 0.0 && c.cost >= 0.0);
        }
    }

    #[test]
    fn q_value_is_linear(theta in prop::collection::vec(-5.0f64..5.0, 1..8), seed in any::<u64>()) {
        use rand::Rng;
        let mut rng = RngStream::new(seed, "q");
        let a: Vec<f64> = theta.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = theta.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let lhs = q_value(&theta, &ab).unwrap();
        let rhs = q_value(&theta, &a).unwrap() + q_value(&theta, &b).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
    }

    #[test]
    fn standardization_keeps_order(xs in prop::collection::vec(-100.0f64..100.0, 2..30), a in -100.0f64..100.0, b in -100.0f64..100.0) {
        let mut s = RunningStats::default();
        for x in xs {
            s.push(x);
        }
        prop_assert_eq!(a < b, s.standardize(a) < s.standardize(b));
    }

    #[test]
    fn replay_capacity(cap in 1usize..50, extra in 0usize..50) {
        let mut m = ReplayMemory::new(cap);
        for i in 0..cap + extra + 1 {
            m.push(Transition { state: vec![i as f64], action: vec![1], reward: 0.0, next_state: vec![] });
            prop_assert!(m.len() <= cap);
        }
        prop_assert!(m.iter().all(|t| t.state[0] != 0.0));
        prop_assert_eq!(m.get(0).state[0], (extra + 1) as f64);
    }
}

/// Every level vector within budget, enumerated independently of the crate.
fn brute_force_best(vols: &[u32], theta: &[f64], r_min: u32, r_max: u32, budget: u32) -> Option<f64> {
    let n = vols.len();
    let mut best: Option<f64> = None;
    let mut levels = vec![r_min; n];
    loop {
        let spend: u32 = vols.iter().zip(&levels).map(|(v, a)| v * a).sum();
        if spend <= budget {
            let obj: f64 = (0..n).map(|f| f64::from(levels[f]) * f64::from(vols[f]) * theta[f]).sum();
            best = Some(best.map_or(obj, |b: f64| b.max(obj)));
        }
        let mut f = 0;
        loop {
            if f == n {
                return best;
            }
            if levels[f] < r_max {
                levels[f] += 1;
                break;
            }
            levels[f] = r_min;
            f += 1;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn knapsack_matches_brute_force(
        vols in prop::collection::vec(1u32..6, 1..7),
        theta_q in prop::collection::vec(-16i32..40, 6),
        r_min in 1u32..3, span in 0u32..3, budget in 0u32..31,
    ) {
        let r_max = (r_min + span).min(4);
        let theta: Vec<f64> = theta_q[..vols.len()].iter().map(|&t| f64::from(t) / 8.0).collect();
        let p = KnapsackProblem {
            volumes: vols.iter().map(|&v| f64::from(v)).collect(),
            price: 1.0,
            budget: f64::from(budget),
            quantum: 1.0,
            r_min,
            r_max,
        };
        let s = p.solve(&theta, KnapsackSense::Max);
        match brute_force_best(&vols, &theta, r_min, r_max, budget) {
            None => prop_assert!(s.infeasible),
            Some(best) => {
                prop_assert!(!s.infeasible);
                prop_assert!((s.objective - best).abs() <= 1e-9 * (1.0 + best.abs()), "{} vs {}", s.objective, best);
                prop_assert!(p.spend(&s.levels) <= f64::from(budget));
            }
        }
    }

    #[test]
    fn potential_tracks_deviator_cost(seed in any::<u64>(), k in 2usize..7, m in 1usize..4, v in 1usize..3) {
        use rand::Rng;
        let mut rng = RngStream::new(seed, "deviation");
        let g = random_game(&SystemParams::default(), k, m, v, &mut rng).unwrap();
        let draw = |rng: &mut RngStream| match rng.random_range(0..=m as u32) {
            0 => Strategy::Local,
            c => Strategy::Channel(c - 1),
        };
        let profile: Vec<Strategy> = (0..g.len()).map(|_| draw(&mut rng)).collect();
        let i = rng.random_range(0..g.len());
        let to = draw(&mut rng);
        prop_assume!(to != profile[i]);
        let mut after = profile.clone();
        after[i] = to;
        let df = g.current_eval(i, &after).cost - g.current_eval(i, &profile).cost;
        let dphi = potential(&g, &after) - potential(&g, &profile);
        prop_assert!(df == 0.0 || df.signum() == dphi.signum(), "df {} dphi {}", df, dphi);
    }
}

fn small_run(policies: Vec<PolicyKind>, seed: u64) -> coinsim::harness::ExperimentOutput {
    let mut p = SystemParams::default();
    p.seed = seed;
    p.num_users = 6;
    let mut o = RunOptions::from_params(&p);
    o.policies = policies;
    o.train_episodes = 1;
    o.eval_episodes = 2;
    o.slots = 15;
    run_experiment(&p, &o, None).unwrap()
}

#[test]
fn fractions_sum_to_one() {
    let out = small_run(PolicyKind::ALL.to_vec(), 4);
    for r in &out.rows {
        let s = r.frac_local + r.frac_fin + r.frac_ein;
        assert!((s - 1.0).abs() < 1e-12, "{r:?}");
        assert!(r.frac_local >= 0.0 && r.frac_fin >= 0.0 && r.frac_ein >= 0.0);
    }
}

#[test]
fn opg_spend_is_constant() {
    let out = small_run(vec![PolicyKind::Opg], 5);
    let spends: Vec<f64> = out.rows.iter().filter(|r| r.slot >= 0).map(|r| r.bc_spend).collect();
    assert!(!spends.is_empty());
    assert!(spends.iter().all(|&s| s == spends[0]));
}

#[test]
fn evaluation_leaves_weights_alone() {
    let trained = small_run(vec![PolicyKind::Proposed], 6).agent.unwrap();
    let mut p = SystemParams::default();
    p.seed = 6;
    p.num_users = 6;
    let mut o = RunOptions::from_params(&p);
    o.policies = vec![PolicyKind::Proposed, PolicyKind::Opg];
    o.train_episodes = 0;
    o.eval_episodes = 2;
    o.slots = 15;
    let out = run_experiment(&p, &o, Some(&trained)).unwrap();
    let after = out.agent.unwrap();
    assert_eq!(after.main.weights, trained.main.weights);
    assert_eq!(after.main.biases, trained.main.biases);
    assert_eq!(after.target.weights, trained.target.weights);
}

#[test]
fn huber_is_continuous_at_delta() {
    for d in [0.5, 1.0, 2.0] {
        let h = 1e-9;
        assert!((huber_loss(d - h, d) - huber_loss(d + h, d)).abs() < 1e-8);
        assert_eq!(huber_grad(d, d), d);
        assert!((huber_grad(d + h, d) - d).abs() < 1e-12 && (huber_grad(d - h, d) - d).abs() < 1e-8);
    }
}
