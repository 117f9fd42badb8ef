//! Task catalogue and the per-user request chain.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, Range, SystemParams, MB};

/// One subtask ⟨I, V, P⟩: input bytes, software bytes, cycles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtaskSpec {
    pub input: f64,
    pub software: f64,
    pub load: f64,
}

impl SubtaskSpec {
    pub fn new(input: f64, software: f64, load: f64) -> Self {
        Self {
            input,
            software,
            load,
        }
    }

    /// I + V in bytes.
    pub fn data_bytes(&self) -> f64 {
        self.input + self.software
    }

    /// I + V in bits.
    pub fn data_bits(&self) -> f64 {
        8.0 * self.data_bytes()
    }

    pub fn software_mb(&self) -> f64 {
        self.software / MB
    }
}

/// F tasks of V subtasks each. Task ids are 1-based in requests; the flat
/// subtask index of (task f, subtask v) is `(f-1)·V + v`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub tasks: Vec<Vec<SubtaskSpec>>,
}

impl TaskSet {
    pub fn num_tasks(&self) -> usize {
        self.tasks.len()
    }

    pub fn subtasks_per_task(&self) -> usize {
        self.tasks.first().map_or(0, Vec::len)
    }

    /// Flat list in subtask-index order.
    pub fn flat(&self) -> Vec<SubtaskSpec> {
        self.tasks.iter().flatten().copied().collect()
    }

    /// Subtask `v` of task id `f` (1-based).
    pub fn get(&self, f: u32, v: usize) -> &SubtaskSpec {
        &self.tasks[f as usize - 1][v]
    }

    pub fn flat_index(&self, f: u32, v: usize) -> usize {
        (f as usize - 1) * self.subtasks_per_task() + v
    }
}

fn draw(rng: &mut impl Rng, r: Range) -> f64 {
    if r.lo == r.hi {
        r.lo
    } else {
        rng.random_range(r.lo..=r.hi)
    }
}

pub fn sample_tasks(params: &SystemParams, rng: &mut impl Rng) -> Result<TaskSet, ConfigError> {
    let t = &params.tasks;
    for (name, r) in [("tasks.input", t.input), ("tasks.software", t.software), ("tasks.load", t.load)] {
        if r.hi < r.lo || r.lo <= 0.0 {
            return Err(ConfigError::Invalid {
                field: name.to_string(),
                expected: "0 < lo <= hi".to_string(),
                got: format!("[{}, {}]", r.lo, r.hi),
            });
        }
    }
    let tasks = (0..params.num_tasks)
        .map(|_| {
            (0..params.num_subtasks)
                .map(|_| {
                    let input = draw(rng, t.input);
                    let software = draw(rng, t.software);
                    let load = draw(rng, t.load);
                    SubtaskSpec::new(input, software, load)
                })
                .collect()
        })
        .collect();
    Ok(TaskSet { tasks })
}

/// Current request per user: 0 = idle, otherwise a task id in 1..=F.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RequestState(pub Vec<u32>);

impl RequestState {
    pub fn idle(users: usize) -> Self {
        Self(vec![0; users])
    }

    pub fn users(&self) -> usize {
        self.0.len()
    }

    pub fn active_users(&self) -> impl Iterator<Item = (usize, u32)> + '_ {
        self.0.iter().enumerate().filter(|(_, &f)| f > 0).map(|(k, &f)| (k, f))
    }
}

/// Row-stochastic (F+1)x(F+1) matrix over request states.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct TransitionMatrix {
    rows: Vec<Vec<f64>>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self, ConfigError> {
        let n = rows.len();
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(ConfigError::MatrixShape {
                    expected: n,
                    rows: n,
                    row: i,
                    cols: row.len(),
                });
            }
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(ConfigError::Invalid {
                    field: format!("requests.transition[{i}]"),
                    expected: "finite probabilities >= 0".to_string(),
                    got: format!("{row:?}"),
                });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(ConfigError::NotStochastic { row: i, sum });
            }
        }
        Ok(Self { rows })
    }

    pub fn uniform(states: usize) -> Self {
        Self {
            rows: vec![vec![1.0 / states as f64; states]; states],
        }
    }

    pub fn identity(states: usize) -> Self {
        let rows = (0..states)
            .map(|i| (0..states).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self { rows }
    }

    pub fn states(&self) -> usize {
        self.rows.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    fn sample_row(&self, i: usize, rng: &mut impl Rng) -> u32 {
        let row = &self.rows[i];
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut last = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last = j;
                if u < acc {
                    return j as u32;
                }
            }
        }
        // u landed in the rounding gap above the last partial sum.
        last as u32
    }
}

impl TryFrom<Vec<Vec<f64>>> for TransitionMatrix {
    type Error = ConfigError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Self::new(rows)
    }
}

impl From<TransitionMatrix> for Vec<Vec<f64>> {
    fn from(m: TransitionMatrix) -> Self {
        m.rows
    }
}

pub fn step_requests(
    current: &RequestState,
    matrix: &TransitionMatrix,
    rng: &mut impl Rng,
) -> Result<RequestState, ConfigError> {
    let n = matrix.states();
    let mut next = Vec::with_capacity(current.users());
    for (k, &s) in current.0.iter().enumerate() {
        if s as usize >= n {
            return Err(ConfigError::Invalid {
                field: format!("requests[{k}]"),
                expected: format!("a state below {n}"),
                got: s.to_string(),
            });
        }
        next.push(matrix.sample_row(s as usize, rng));
    }
    Ok(RequestState(next))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{parse_config, TaskPreset, TaskRanges, GCYCLES};
    use crate::rng::RngStream;

    #[test]
    fn data_intensive_preset_ranges() {
        let mut p = SystemParams::default();
        p.tasks = TaskRanges::preset(TaskPreset::DataIntensive);
        let ts = sample_tasks(&p, &mut RngStream::new(1, "tasks")).unwrap();
        for s in ts.flat() {
            assert!((10.0 * MB..=20.0 * MB).contains(&s.input));
            assert!((1.0 * GCYCLES..=4.0 * GCYCLES).contains(&s.load));
        }
    }

    #[test]
    fn compute_intensive_preset_ranges() {
        let mut p = SystemParams::default();
        p.tasks = TaskRanges::preset(TaskPreset::ComputeIntensive);
        let ts = sample_tasks(&p, &mut RngStream::new(2, "tasks")).unwrap();
        for s in ts.flat() {
            assert!((1.0 * MB..=4.0 * MB).contains(&s.input));
            assert!((5.0 * GCYCLES..=20.0 * GCYCLES).contains(&s.load));
        }
    }

    #[test]
    fn collapsed_range_is_exact() {
        let p = parse_config("[tasks]\ninput_mb = [5, 5]\nsoftware_mb = [5, 5]\nload_gcycles = [5, 5]\n").unwrap();
        let ts = sample_tasks(&p, &mut RngStream::new(3, "tasks")).unwrap();
        for s in ts.flat() {
            assert_eq!(s.input, 5.0 * MB);
            assert_eq!(s.software, 5.0 * MB);
            assert_eq!(s.load, 5.0 * GCYCLES);
        }
    }

    #[test]
    fn inverted_range_is_an_error() {
        let mut p = SystemParams::default();
        p.tasks.load = Range::new(3.0, 2.0);
        assert!(sample_tasks(&p, &mut RngStream::new(3, "tasks")).is_err());
    }

    #[test]
    fn same_seed_same_tasks() {
        let p = SystemParams::default();
        let a = sample_tasks(&p, &mut RngStream::new(9, "tasks")).unwrap();
        let b = sample_tasks(&p, &mut RngStream::new(9, "tasks")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.num_tasks(), 6);
        assert_eq!(a.subtasks_per_task(), 4);
    }

    #[test]
    fn identity_chain_is_absorbing() {
        let m = TransitionMatrix::identity(4);
        let s = RequestState(vec![0, 1, 2, 3, 2]);
        let next = step_requests(&s, &m, &mut RngStream::new(1, "req")).unwrap();
        assert_eq!(next, s);
    }

    #[test]
    fn deterministic_row_goes_idle() {
        let mut rows = vec![vec![0.0; 4]; 4];
        for r in rows.iter_mut() {
            r[0] = 1.0;
        }
        let m = TransitionMatrix::new(rows).unwrap();
        let s = RequestState(vec![3, 1, 2, 0]);
        let next = step_requests(&s, &m, &mut RngStream::new(1, "req")).unwrap();
        assert_eq!(next, RequestState::idle(4));
    }

    #[test]
    fn uniform_chain_frequencies() {
        let states = 7;
        let m = TransitionMatrix::uniform(states);
        let mut rng = RngStream::new(11, "req");
        let mut s = RequestState(vec![0]);
        let mut counts = vec![0usize; states];
        let n = 100_000;
        for _ in 0..n {
            s = step_requests(&s, &m, &mut rng).unwrap();
            counts[s.0[0] as usize] += 1;
        }
        let expected = n as f64 / states as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // 6 degrees of freedom, 99.9% quantile.
        assert!(chi2 < 22.46, "chi2 = {chi2}");
        for &c in &counts {
            assert!((c as f64 / expected - 1.0).abs() < 0.02, "{counts:?}");
        }
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(matches!(
            TransitionMatrix::new(vec![vec![0.5, 0.5], vec![0.2, 0.7]]),
            Err(ConfigError::NotStochastic { row: 1, .. })
        ));
        assert!(TransitionMatrix::new(vec![vec![1.0], vec![0.0, 1.0]]).is_err());
        assert!(TransitionMatrix::new(vec![vec![1.0 + 1e-12, -1e-12], vec![0.0, 1.0]]).is_err());
    }
}
