//! Agent state: the request indicator fed to the network and the
//! per-user weighted resource summary.

use crate::config::{Range, SystemParams};
use crate::tasks::{RequestState, SubtaskSpec, TaskSet};

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedState {
    /// S_{t,k}: per-user sum over the requested subtasks of
    /// χ0·S0 + χ1·S1 + χ2·S2 + χ3·S3; 0 for idle users.
    pub per_user: Vec<f64>,
    /// X_t: K·F indicator, row k has a 1 at the requested task.
    pub indicator: Vec<f64>,
}

fn minmax(x: f64, r: Range) -> f64 {
    if r.hi > r.lo {
        ((x - r.lo) / (r.hi - r.lo)).clamp(0.0, 1.0)
    } else {
        0.0
    }
}

/// Normalized components (S0, S1, S2, S3) of one subtask: user CPU,
/// subtask attributes, node CPUs, node caches.
pub fn components(spec: &SubtaskSpec, params: &SystemParams) -> [f64; 4] {
    let n = &params.norm;
    let t = &params.tasks;
    let s0 = (params.cpu_local / n.cpu_max).clamp(0.0, 1.0);
    let s1 = (minmax(spec.input, t.input) + minmax(spec.software, t.software) + minmax(spec.load, t.load)) / 3.0;
    let s2 = ((params.cpu_fin + params.cpu_ein) / (2.0 * n.cpu_max)).clamp(0.0, 1.0);
    let s3 = ((params.cache_fin + params.cache_ein) / (2.0 * n.cache_max)).clamp(0.0, 1.0);
    [s0, s1, s2, s3]
}

pub fn subtask_value(spec: &SubtaskSpec, params: &SystemParams) -> f64 {
    let chi = params.agent.state_weights;
    components(spec, params)
        .iter()
        .zip(chi)
        .map(|(s, on)| if on { *s } else { 0.0 })
        .sum()
}

pub fn encode_state(requests: &RequestState, tasks: &TaskSet, params: &SystemParams) -> EncodedState {
    let f = tasks.num_tasks();
    let mut indicator = vec![0.0; requests.users() * f];
    let mut per_user = vec![0.0; requests.users()];
    for (k, task) in requests.active_users() {
        indicator[k * f + task as usize - 1] = 1.0;
        per_user[k] = tasks.tasks[task as usize - 1]
            .iter()
            .map(|s| subtask_value(s, params))
            .sum();
    }
    EncodedState { per_user, indicator }
}
