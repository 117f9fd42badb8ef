use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use coinsim::agent::AgentCheckpoint;
use coinsim::config::{load_config, SystemParams};
use coinsim::exec::Exec;
use coinsim::game::{convergence_bound, init_profile, potential, run_to_ne};
use coinsim::harness::env::{build_game, iteration_cap, Queues, World};
use coinsim::harness::{emit_csv, run_experiment, run_many, PolicyKind, RunOptions, SlotMetrics};
use coinsim::rng::RngStream;
use coinsim::selftest;

#[derive(Parser)]
#[command(name = "coinsim", version, about = "Blockchain-assisted partial offloading simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Comma-separated: proposed, opg, opg-rand, mec, random.
    #[arg(long, value_delimiter = ',')]
    policies: Option<Vec<PolicyKind>>,
    /// Episodes for this phase (training for `train`, evaluation otherwise).
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    slots: Option<usize>,
    /// Run sequentially instead of on the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train the redundancy agent and write a checkpoint.
    Train {
        #[command(flatten)]
        common: Common,
        /// Also write one row per training slot.
        #[arg(long)]
        slot_rows: bool,
    },
    /// Compare the frozen policy with the baselines.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Agent checkpoint; without one the agent is trained first.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        train_episodes: Option<usize>,
    },
    /// Train and evaluate over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<u32>,
        #[arg(long)]
        train_episodes: Option<usize>,
    },
    /// Solve one slot's offloading game and dump the potential trace.
    NeDemo {
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in property checks.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepParam {
    RMax,
    Users,
    Subtasks,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::RMax => "r_max",
            SweepParam::Users => "users",
            SweepParam::Subtasks => "subtasks",
        }
    }

    fn apply(self, p: &mut SystemParams, v: u32) {
        match self {
            SweepParam::RMax => p.chain.r_max = v,
            SweepParam::Users => p.num_users = v as usize,
            SweepParam::Subtasks => p.num_subtasks = v as usize,
        }
    }
}

fn load(common: &Common) -> Result<SystemParams> {
    let mut p = match &common.config {
        Some(path) => load_config(path)?,
        None => SystemParams::default(),
    };
    if let Some(s) = common.seed {
        p.seed = s;
    }
    Ok(p)
}

fn options(common: &Common, p: &SystemParams) -> RunOptions {
    let mut o = RunOptions::from_params(p);
    if let Some(pol) = &common.policies {
        o.policies = pol.clone();
    }
    if let Some(s) = common.slots {
        o.slots = s;
    }
    if common.sequential {
        o.exec = Exec::Sequential;
    }
    o
}

fn out_dir(common: &Common) -> Result<&Path> {
    std::fs::create_dir_all(&common.out_dir).with_context(|| format!("creating {}", common.out_dir.display()))?;
    Ok(&common.out_dir)
}

fn summarize(rows: &[SlotMetrics], first_episode: usize) {
    for kind in PolicyKind::ALL {
        let agg: Vec<_> = rows
            .iter()
            .filter(|r| r.slot == -1 && r.policy == kind && r.episode >= first_episode)
            .collect();
        if agg.is_empty() {
            continue;
        }
        let n = agg.len() as f64;
        let cost = agg.iter().map(|r| r.avg_cost).sum::<f64>() / n;
        let reward = agg.iter().map(|r| r.reward).sum::<f64>() / n;
        let local = agg.iter().map(|r| r.frac_local).sum::<f64>() / n;
        println!("{kind:>9}  cost {cost:10.4}  reward {reward:10.4}  local {local:6.3}");
    }
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { common, slot_rows } => {
            let p = load(&common)?;
            let mut o = options(&common, &p);
            o.policies = vec![PolicyKind::Proposed];
            o.eval_episodes = 0;
            o.train_slot_rows = slot_rows;
            if let Some(e) = common.episodes {
                o.train_episodes = e;
            }
            let dir = out_dir(&common)?;
            let t = Instant::now();
            let out = run_experiment(&p, &o, None)?;
            emit_csv(&out.rows, &dir.join("train.csv"))?;
            let ckpt = out.agent.expect("training keeps an agent");
            std::fs::write(dir.join("agent.json"), serde_json::to_string(&ckpt)?)?;
            eprintln!(
                "trained {} episodes x {} slots in {:.1}s; {} actions, {} constraint violations",
                o.train_episodes,
                o.slots,
                t.elapsed().as_secs_f64(),
                out.actions_checked,
                out.action_violations
            );
        }
        Command::Eval {
            common,
            checkpoint,
            train_episodes,
        } => {
            let p = load(&common)?;
            let mut o = options(&common, &p);
            if let Some(e) = common.episodes {
                o.eval_episodes = e;
            }
            let ckpt: Option<AgentCheckpoint> = match &checkpoint {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    Some(serde_json::from_str(&text)?)
                }
                None => None,
            };
            o.train_episodes = if ckpt.is_some() { 0 } else { train_episodes.unwrap_or(o.train_episodes) };
            let dir = out_dir(&common)?;
            let out = run_experiment(&p, &o, ckpt.as_ref())?;
            let eval: Vec<SlotMetrics> = out
                .rows
                .iter()
                .filter(|r| r.episode >= o.train_episodes)
                .cloned()
                .collect();
            emit_csv(&eval, &dir.join("eval.csv"))?;
            summarize(&eval, o.train_episodes);
        }
        Command::Sweep {
            common,
            param,
            values,
            train_episodes,
        } => {
            let base = load(&common)?;
            let mut o = options(&common, &base);
            if let Some(e) = common.episodes {
                o.eval_episodes = e;
            }
            if let Some(e) = train_episodes {
                o.train_episodes = e;
            }
            let configs: Vec<SystemParams> = values
                .iter()
                .map(|&v| {
                    let mut p = base.clone();
                    param.apply(&mut p, v);
                    p
                })
                .collect();
            let dir = out_dir(&common)?;
            let results = run_many(&configs, &o, o.exec);
            let mut summary = csv::Writer::from_path(dir.join("sweep_summary.csv"))?;
            summary.write_record(["param", "value", "policy", "mean_cost", "mean_reward"])?;
            for (v, r) in values.iter().zip(results) {
                let out = r?;
                let eval: Vec<SlotMetrics> = out
                    .rows
                    .iter()
                    .filter(|r| r.episode >= o.train_episodes)
                    .cloned()
                    .collect();
                emit_csv(&eval, &dir.join(format!("sweep_{}_{v}.csv", param.name())))?;
                for kind in &o.policies {
                    let cost = out.eval_mean(*kind, o.train_episodes, |r| r.avg_cost);
                    let reward = out.eval_mean(*kind, o.train_episodes, |r| r.reward);
                    summary.write_record([
                        param.name().to_string(),
                        v.to_string(),
                        kind.name().to_string(),
                        format!("{cost:.6}"),
                        format!("{reward:.6}"),
                    ])?;
                    println!("{}={v:<4} {kind:>9}  cost {cost:10.4}  reward {reward:10.4}", param.name());
                }
            }
            summary.flush()?;
        }
        Command::NeDemo { common } => {
            let p = load(&common)?;
            let mut world = World::new(&p, &RngStream::new(p.seed, "run"))?;
            while world.active_cells().is_empty() {
                world.advance()?;
            }
            let levels = vec![p.chain.r_max; world.flat.len()];
            let game = build_game(&world, &levels, &Queues::default())?;
            let start = init_profile(&game, &p);
            let phi0 = potential(&game, &start);
            let out = run_to_ne(&game, start, iteration_cap(game.len()), true);
            if !out.converged {
                bail!("no equilibrium within {} iterations", out.iterations);
            }
            let dir = out_dir(&common)?;
            let mut w = csv::Writer::from_path(dir.join("ne_trace.csv"))?;
            w.write_record(["iteration", "potential", "mover", "delta_cost"])?;
            w.write_record(["0".to_string(), format!("{phi0:.6e}"), String::new(), String::new()])?;
            for e in &out.trace {
                w.write_record([
                    e.iteration.to_string(),
                    format!("{:.6e}", e.potential),
                    e.cell.to_string(),
                    format!("{:.6}", e.gain),
                ])?;
            }
            w.flush()?;
            let pi = out.trace.iter().map(|e| e.decrease).fold(f64::INFINITY, f64::min);
            let signals: Vec<f64> = game.cells.iter().map(|c| c.signal).collect();
            print!("{} cells, {} moves", game.len(), out.iterations);
            if let Ok(b) = convergence_bound(&signals, &game.lambda_values(), pi) {
                print!(", bound {b:.1}");
            }
            println!(", total cost {:.4}", game.total_cost(&out.profile));
        }
        Command::Selftest { seed } => {
            let mut failed = 0;
            for r in selftest::run_all(seed) {
                println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
                failed += usize::from(!r.passed);
            }
            if failed > 0 {
                bail!("{failed} check(s) failed");
            }
        }
    }
    Ok(())
}
