//! Greedy redundancy action as a multiple-choice knapsack.
//!
//! Each subtask f picks a replica level a_f in [r_min, r_max] with weight
//! u·a_f·V_f (in budget quanta) and value u·a_f·V_f·Θ_f. The DP runs over
//! (subtask, residual budget) and returns the best level vector.

use rand::Rng;

use crate::config::KnapsackSense;

#[derive(Clone, Debug)]
pub struct KnapsackProblem {
    /// Software volume per subtask, MB.
    pub volumes: Vec<f64>,
    pub price: f64,
    pub budget: f64,
    pub quantum: f64,
    pub r_min: u32,
    pub r_max: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KnapsackSolution {
    pub levels: Vec<u32>,
    pub objective: f64,
    /// Even all-r_min exceeds the budget; `levels` is all r_min.
    pub infeasible: bool,
}

impl KnapsackProblem {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }

    pub fn level_count(&self) -> usize {
        (self.r_max - self.r_min + 1) as usize
    }

    /// Budget in whole quanta.
    pub fn capacity(&self) -> usize {
        (self.budget / self.quantum + 1e-9).floor().max(0.0) as usize
    }

    /// Quantized weight of level `a` for subtask `f`, rounded up so a DP
    /// solution never overspends the real budget.
    pub fn weight(&self, f: usize, a: u32) -> usize {
        let w = self.price * f64::from(a) * self.volumes[f] / self.quantum;
        (w - 1e-9).ceil().max(0.0) as usize
    }

    pub fn spend(&self, levels: &[u32]) -> f64 {
        levels
            .iter()
            .zip(&self.volumes)
            .map(|(&a, v)| self.price * f64::from(a) * v)
            .sum()
    }

    pub fn objective(&self, theta: &[f64], levels: &[u32]) -> f64 {
        levels
            .iter()
            .enumerate()
            .map(|(f, &a)| self.price * f64::from(a) * self.volumes[f] * theta[f])
            .sum()
    }

    fn min_weight(&self) -> usize {
        (0..self.len()).map(|f| self.weight(f, self.r_min)).sum()
    }

    pub fn solve(&self, theta: &[f64], sense: KnapsackSense) -> KnapsackSolution {
        assert_eq!(theta.len(), self.len(), "theta length");
        let n = self.len();
        let cap = self.capacity();
        if self.min_weight() > cap {
            let levels = vec![self.r_min; n];
            return KnapsackSolution {
                objective: self.objective(theta, &levels),
                levels,
                infeasible: true,
            };
        }
        let sign = match sense {
            KnapsackSense::Max => 1.0,
            KnapsackSense::Min => -1.0,
        };
        // Subtasks whose value can only fall as the level rises sit at r_min.
        let fixed: Vec<bool> = theta.iter().map(|&t| sign * t <= 0.0).collect();
        let base: usize = (0..n).filter(|&f| fixed[f]).map(|f| self.weight(f, self.r_min)).sum();
        let cap = cap - base;
        let free: Vec<usize> = (0..n).filter(|&f| !fixed[f]).collect();

        let mut levels = vec![self.r_min; n];
        if free.iter().map(|&f| self.weight(f, self.r_max)).sum::<usize>() <= cap {
            for &f in &free {
                levels[f] = self.r_max;
            }
            return KnapsackSolution {
                objective: self.objective(theta, &levels),
                levels,
                infeasible: false,
            };
        }

        let width = cap + 1;
        let mut dp = vec![0.0f64; width];
        let mut next = vec![f64::NEG_INFINITY; width];
        let mut choice = vec![0u32; free.len() * width];
        for (i, &f) in free.iter().enumerate() {
            next.fill(f64::NEG_INFINITY);
            let row = &mut choice[i * width..(i + 1) * width];
            for a in self.r_min..=self.r_max {
                let w = self.weight(f, a);
                if w > cap {
                    break;
                }
                let v = sign * self.price * f64::from(a) * self.volumes[f] * theta[f];
                for ((n, r), &d) in next[w..].iter_mut().zip(&mut row[w..]).zip(&dp[..width - w]) {
                    if d + v > *n {
                        *n = d + v;
                        *r = a;
                    }
                }
            }
            std::mem::swap(&mut dp, &mut next);
        }

        let mut c = cap;
        for (i, &f) in free.iter().enumerate().rev() {
            let a = choice[i * width + c];
            levels[f] = a;
            c -= self.weight(f, a);
        }
        KnapsackSolution {
            objective: self.objective(theta, &levels),
            levels,
            infeasible: false,
        }
    }

    /// Every level vector within budget, in lexicographic order.
    pub fn enumerate_feasible(&self) -> Vec<Vec<u32>> {
        let cap = self.capacity();
        let mut out = vec![];
        let mut cur = vec![self.r_min; self.len()];
        fn rec(p: &KnapsackProblem, f: usize, used: usize, cap: usize, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if f == p.len() {
                out.push(cur.clone());
                return;
            }
            for a in p.r_min..=p.r_max {
                let w = used + p.weight(f, a);
                if w <= cap {
                    cur[f] = a;
                    rec(p, f + 1, w, cap, cur, out);
                }
            }
        }
        rec(self, 0, 0, cap, &mut cur, &mut out);
        out
    }
}

/// Uniform sampler over the budget-feasible level vectors. `ways[f][c]`
/// counts the completions of subtasks f.. within c quanta; counts are
/// floats because they grow like `levels^F`.
#[derive(Clone, Debug)]
pub struct FeasibleSampler {
    problem: KnapsackProblem,
    ways: Vec<Vec<f64>>,
}

impl FeasibleSampler {
    pub fn new(problem: KnapsackProblem) -> Self {
        let n = problem.len();
        let width = problem.capacity() + 1;
        let mut ways = vec![vec![0.0; width]; n + 1];
        ways[n].fill(1.0);
        for f in (0..n).rev() {
            for c in 0..width {
                let mut total = 0.0;
                for a in problem.r_min..=problem.r_max {
                    let w = problem.weight(f, a);
                    if w <= c {
                        total += ways[f + 1][c - w];
                    }
                }
                ways[f][c] = total;
            }
        }
        Self { problem, ways }
    }

    pub fn problem(&self) -> &KnapsackProblem {
        &self.problem
    }

    /// Number of feasible actions.
    pub fn count(&self) -> f64 {
        self.ways[0][self.problem.capacity()]
    }

    /// `None` when nothing fits the budget.
    pub fn sample(&self, rng: &mut impl Rng) -> Option<Vec<u32>> {
        let p = &self.problem;
        let mut c = p.capacity();
        if self.ways[0][c] == 0.0 {
            return None;
        }
        let mut levels = Vec::with_capacity(p.len());
        for f in 0..p.len() {
            let total = self.ways[f][c];
            let mut u = rng.random::<f64>() * total;
            let mut pick = None;
            for a in p.r_min..=p.r_max {
                let w = p.weight(f, a);
                if w > c {
                    break;
                }
                let n = self.ways[f + 1][c - w];
                if n > 0.0 {
                    pick = Some((a, w));
                    if u < n {
                        break;
                    }
                    u -= n;
                }
            }
            let (a, w) = pick.expect("positive count implies a feasible level");
            levels.push(a);
            c -= w;
        }
        Some(levels)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn problem(volumes: &[f64], budget: f64, r_min: u32, r_max: u32) -> KnapsackProblem {
        KnapsackProblem {
            volumes: volumes.to_vec(),
            price: 1.0,
            budget,
            quantum: 1.0,
            r_min,
            r_max,
        }
    }

    fn brute_best(p: &KnapsackProblem, theta: &[f64]) -> f64 {
        p.enumerate_feasible()
            .iter()
            .map(|l| p.objective(theta, l))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn worked_example() {
        let p = problem(&[1.0, 2.0], 5.0, 1, 3);
        let s = p.solve(&[3.0, 5.0], KnapsackSense::Max);
        assert_eq!(s.levels, vec![1, 2]);
        assert_eq!(s.objective, 23.0);
        assert_eq!(brute_best(&p, &[3.0, 5.0]), 23.0);
    }

    #[test]
    fn slack_budget_gives_r_max() {
        let p = problem(&[1.0, 2.0, 4.0], 3.0 * 7.0, 1, 3);
        let s = p.solve(&[1.0, 0.5, 2.0], KnapsackSense::Max);
        assert_eq!(s.levels, vec![3, 3, 3]);
    }

    #[test]
    fn negative_theta_held_at_r_min() {
        let p = problem(&[1.0, 2.0, 1.0], 12.0, 1, 3);
        let theta = [2.0, -1.0, 1.0];
        let s = p.solve(&theta, KnapsackSense::Max);
        assert_eq!(s.levels[1], 1);
        assert_eq!(s.objective, brute_best(&p, &theta));
    }

    #[test]
    fn empty_budget_is_flagged() {
        let p = problem(&[1.0, 2.0], 0.0, 1, 3);
        let s = p.solve(&[1.0, 1.0], KnapsackSense::Max);
        assert!(s.infeasible);
        assert_eq!(s.levels, vec![1, 1]);
        assert!(FeasibleSampler::new(p).sample(&mut RngStream::new(1, "s")).is_none());
    }

    #[test]
    fn min_sense_prefers_low_value() {
        let p = problem(&[1.0, 1.0], 6.0, 1, 3);
        let s = p.solve(&[1.0, -1.0], KnapsackSense::Min);
        assert_eq!(s.levels, vec![1, 3]);
    }

    #[test]
    fn ties_break_to_lower_levels() {
        let p = problem(&[1.0, 1.0], 6.0, 1, 3);
        let s = p.solve(&[0.0, 0.0], KnapsackSense::Max);
        assert_eq!(s.levels, vec![1, 1]);
    }

    #[test]
    fn sampler_counts_and_uniformity() {
        let p = problem(&[1.0, 2.0, 1.0], 7.0, 1, 3);
        let all = p.enumerate_feasible();
        let sampler = FeasibleSampler::new(p);
        assert_eq!(sampler.count(), all.len() as f64);
        let mut rng = RngStream::new(4, "sampler");
        let n = 60_000;
        let mut hits = std::collections::HashMap::new();
        for _ in 0..n {
            *hits.entry(sampler.sample(&mut rng).unwrap()).or_insert(0usize) += 1;
        }
        assert_eq!(hits.len(), all.len());
        let expected = n as f64 / all.len() as f64;
        let chi2: f64 = hits.values().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 99.9% quantile of chi-square with len-1 degrees of freedom is well
        // below 3·(len-1) for these sizes.
        assert!(chi2 < 3.0 * (all.len() - 1) as f64 + 20.0, "chi2 {chi2}, {} actions", all.len());
    }
}
