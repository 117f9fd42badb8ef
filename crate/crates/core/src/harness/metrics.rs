//! Per-slot metrics and the CSV format.

use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Proposed,
    Opg,
    OpgRand,
    Mec,
    Random,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::Proposed,
        PolicyKind::Opg,
        PolicyKind::OpgRand,
        PolicyKind::Mec,
        PolicyKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PolicyKind::Proposed => "proposed",
            PolicyKind::Opg => "opg",
            PolicyKind::OpgRand => "opg-rand",
            PolicyKind::Mec => "mec",
            PolicyKind::Random => "random",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| format!("unknown policy `{s}` (expected one of proposed, opg, opg-rand, mec, random)"))
    }
}

/// One CSV row. `slot` is -1 on episode aggregates. Averages are per
/// active subtask; `reward`, `bc_spend` and `incentive` are slot totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub episode: usize,
    pub slot: i64,
    pub policy: PolicyKind,
    pub avg_cost: f64,
    pub avg_latency: f64,
    pub avg_energy: f64,
    pub reward: f64,
    pub bc_spend: f64,
    pub incentive: f64,
    pub deadline_violations: u64,
    pub frac_local: f64,
    pub frac_fin: f64,
    pub frac_ein: f64,
}

pub const CSV_HEADER: [&str; 13] = [
    "episode",
    "slot",
    "policy",
    "avg_cost",
    "avg_latency",
    "avg_energy",
    "reward",
    "bc_spend",
    "incentive",
    "deadline_violations",
    "frac_local",
    "frac_fin",
    "frac_ein",
];

impl SlotMetrics {
    pub fn fractions_ok(&self) -> bool {
        (self.frac_local + self.frac_fin + self.frac_ein - 1.0).abs() <= 1e-9
    }

    fn record(&self) -> [String; 13] {
        let f = |x: f64| format!("{x:.6}");
        [
            self.episode.to_string(),
            self.slot.to_string(),
            self.policy.name().to_string(),
            f(self.avg_cost),
            f(self.avg_latency),
            f(self.avg_energy),
            f(self.reward),
            f(self.bc_spend),
            f(self.incentive),
            self.deadline_violations.to_string(),
            f(self.frac_local),
            f(self.frac_fin),
            f(self.frac_ein),
        ]
    }
}

/// Means of the slot rows (violations are summed), tagged `slot = -1`.
pub fn episode_aggregate(episode: usize, policy: PolicyKind, rows: &[SlotMetrics]) -> SlotMetrics {
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&SlotMetrics) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mut m = SlotMetrics {
        episode,
        slot: -1,
        policy,
        avg_cost: mean(|r| r.avg_cost),
        avg_latency: mean(|r| r.avg_latency),
        avg_energy: mean(|r| r.avg_energy),
        reward: mean(|r| r.reward),
        bc_spend: mean(|r| r.bc_spend),
        incentive: mean(|r| r.incentive),
        deadline_violations: rows.iter().map(|r| r.deadline_violations).sum(),
        frac_local: mean(|r| r.frac_local),
        frac_fin: mean(|r| r.frac_fin),
        frac_ein: mean(|r| r.frac_ein),
    };
    if rows.is_empty() {
        m.frac_local = 1.0;
    }
    m
}

pub fn write_csv<W: Write>(rows: &[SlotMetrics], out: W) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in rows {
        w.write_record(r.record())?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_csv(rows: &[SlotMetrics], path: &Path) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path).map_err(|source| HarnessError::File {
        path: path.display().to_string(),
        source,
    })?;
    write_csv(rows, std::io::BufWriter::new(file))
}

pub fn read_csv(path: &Path) -> Result<Vec<SlotMetrics>, HarnessError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<SlotMetrics>, _>>()?;
    Ok(rows)
}
