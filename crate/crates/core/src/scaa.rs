//! The state-coding / action-aggregate network.
//!
//! A ReLU MLP maps the request indicator vector to one value Θ_f per
//! subtask; the last layer has no activation. The Q value of a redundancy
//! action is the dot product of the action's weights with Θ, so Q is
//! linear in the action and the greedy action is a knapsack.

use std::path::Path;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngState;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch in {what}: expected {expected}, got {got}")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("non-finite loss or gradient, step rejected")]
    NonFinite,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint I/O: {0}")]
    Io(#[from] std::io::Error),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), NetError> {
    if expected == got {
        Ok(())
    } else {
        Err(NetError::Shape { what, expected, got })
    }
}

/// `out x in` weights and `out` biases.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            w: Array2::zeros((outputs, inputs)),
            b: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.w.nrows()
    }
}

pub fn huber_loss(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

pub fn huber_grad(e: f64, delta: f64) -> f64 {
    e.clamp(-delta, delta)
}

/// Σ_f a_f·Θ_f.
pub fn q_value(theta: &[f64], action: &[f64]) -> Result<f64, NetError> {
    check_len("action", theta.len(), action.len())?;
    Ok(theta.iter().zip(action).map(|(t, a)| t * a).sum())
}

/// One training batch: inputs `n x in`, action weights `n x out`, targets.
pub struct Batch<'a> {
    pub inputs: &'a Array2<f64>,
    pub actions: &'a Array2<f64>,
    pub targets: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<Layer>,
    pub dropout: f64,
    pub momentum: f64,
    pub huber_delta: f64,
    velocity: Vec<Layer>,
}

impl Network {
    /// Weights and biases uniform in ±1/√fan_in.
    pub fn new(dims: &[usize], dropout: f64, momentum: f64, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output widths");
        let layers = dims
            .windows(2)
            .map(|d| {
                let bound = 1.0 / (d[0] as f64).sqrt();
                let mut l = Layer::zeros(d[0], d[1]);
                l.w.mapv_inplace(|_| rng.random_range(-bound..bound));
                l.b.mapv_inplace(|_| rng.random_range(-bound..bound));
                l
            })
            .collect();
        Self::from_layers(layers, dropout, momentum)
    }

    pub fn from_layers(layers: Vec<Layer>, dropout: f64, momentum: f64) -> Self {
        let velocity = layers.iter().map(|l| Layer::zeros(l.inputs(), l.outputs())).collect();
        Self {
            layers,
            dropout,
            momentum,
            huber_delta: 1.0,
            velocity,
        }
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_width()];
        d.extend(self.layers.iter().map(Layer::outputs));
        d
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().map_or(0, Layer::outputs)
    }

    /// Inverted-dropout mask for `n` inputs: each unit is zeroed with
    /// probability p and survivors are scaled by 1/(1-p).
    pub fn dropout_mask<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Array2<f64> {
        let keep = 1.0 - self.dropout;
        let scale = if keep > 0.0 { 1.0 / keep } else { 0.0 };
        Array2::from_shape_fn((n, self.input_width()), |_| {
            if rng.random::<f64>() < keep {
                scale
            } else {
                0.0
            }
        })
    }

    /// Θ for one input; dropout is applied only when `rng` is given.
    pub fn forward(&self, input: &[f64], rng: Option<&mut dyn rand::RngCore>) -> Result<Vec<f64>, NetError> {
        check_len("input", self.input_width(), input.len())?;
        let mut x = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        if let (Some(rng), true) = (rng, self.dropout > 0.0) {
            x *= &self.dropout_mask(1, rng);
        }
        Ok(self.forward_batch(&x).row(0).to_vec())
    }

    /// Θ for every row of `x`, no dropout.
    pub fn forward_batch(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut a = x.to_owned();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = a.dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        a
    }

    /// Mean Huber loss of `q_value(Θ(x), a)` against the targets and its
    /// gradient for every layer. `mask` multiplies the inputs.
    pub fn loss_and_grad(&self, batch: &Batch, mask: Option<&Array2<f64>>) -> Result<(f64, Vec<Layer>), NetError> {
        let n = batch.inputs.nrows();
        if n == 0 {
            return Err(NetError::EmptyBatch);
        }
        check_len("input", self.input_width(), batch.inputs.ncols())?;
        check_len("action", self.output_width(), batch.actions.ncols())?;
        check_len("actions rows", n, batch.actions.nrows())?;
        check_len("targets", n, batch.targets.len())?;

        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(match mask {
            Some(m) => batch.inputs * m,
            None => batch.inputs.to_owned(),
        });
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&l.w.t());
            z += &l.b;
            if i < last {
                z.mapv_inplace(|v| v.max(0.0));
            }
            acts.push(z);
        }
        let theta = &acts[self.layers.len()];
        let q = (theta * batch.actions).sum_axis(Axis(1));
        let mut loss = 0.0;
        let mut dq = Array1::zeros(n);
        for i in 0..n {
            let e = q[i] - batch.targets[i];
            loss += huber_loss(e, self.huber_delta);
            dq[i] = huber_grad(e, self.huber_delta) / n as f64;
        }
        loss /= n as f64;

        let mut grads: Vec<Layer> = Vec::with_capacity(self.layers.len());
        let mut dz = batch.actions * &dq.insert_axis(Axis(1));
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let gw = dz.t().dot(&acts[i]);
            let gb = dz.sum_axis(Axis(0));
            grads.push(Layer { w: gw, b: gb });
            if i > 0 {
                let mut da = dz.dot(&l.w);
                // ReLU derivative from the stored post-activation.
                da.zip_mut_with(&acts[i], |d, &a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                dz = da;
            }
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// One SGD step (with momentum when configured). Returns the batch loss
    /// before the update. Non-finite loss or gradients leave the weights
    /// untouched.
    pub fn train_step(&mut self, batch: &Batch, lr: f64, rng: Option<&mut dyn rand::RngCore>) -> Result<f64, NetError> {
        let mask = match rng {
            Some(rng) if self.dropout > 0.0 => Some(self.dropout_mask(batch.inputs.nrows(), rng)),
            _ => None,
        };
        let (loss, grads) = self.loss_and_grad(batch, mask.as_ref())?;
        let finite = loss.is_finite()
            && grads
                .iter()
                .all(|g| g.w.iter().all(|v| v.is_finite()) && g.b.iter().all(|v| v.is_finite()));
        if !finite {
            return Err(NetError::NonFinite);
        }
        if lr == 0.0 {
            return Ok(loss);
        }
        let mu = self.momentum;
        for ((l, v), g) in self.layers.iter_mut().zip(&mut self.velocity).zip(&grads) {
            if mu == 0.0 {
                l.w.scaled_add(-lr, &g.w);
                l.b.scaled_add(-lr, &g.b);
            } else {
                v.w.mapv_inplace(|x| x * mu);
                v.w += &g.w;
                v.b.mapv_inplace(|x| x * mu);
                v.b += &g.b;
                l.w.scaled_add(-lr, &v.w);
                l.b.scaled_add(-lr, &v.b);
            }
        }
        Ok(loss)
    }

    /// Deep copy for the target network.
    pub fn sync_target(&self) -> Network {
        self.clone()
    }

    pub fn to_checkpoint(&self, rng: Option<RngState>) -> NetCheckpoint {
        let flat = |a: &Array2<f64>| a.iter().copied().collect::<Vec<_>>();
        NetCheckpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims(),
            dropout: self.dropout,
            momentum: self.momentum,
            huber_delta: self.huber_delta,
            weights: self.layers.iter().map(|l| flat(&l.w)).collect(),
            biases: self.layers.iter().map(|l| l.b.to_vec()).collect(),
            velocity_w: self.velocity.iter().map(|l| flat(&l.w)).collect(),
            velocity_b: self.velocity.iter().map(|l| l.b.to_vec()).collect(),
            rng,
        }
    }

    pub fn from_checkpoint(c: &NetCheckpoint) -> Result<Self, NetError> {
        if c.version != CHECKPOINT_VERSION {
            return Err(NetError::Checkpoint(format!("unsupported version {}", c.version)));
        }
        let n = c.dims.len().saturating_sub(1);
        if n == 0 || [c.weights.len(), c.biases.len(), c.velocity_w.len(), c.velocity_b.len()] != [n; 4] {
            return Err(NetError::Checkpoint("layer count does not match dims".into()));
        }
        let build = |w: &[f64], b: &[f64], i: usize| -> Result<Layer, NetError> {
            let shape = (c.dims[i + 1], c.dims[i]);
            let w = Array2::from_shape_vec(shape, w.to_vec())
                .map_err(|e| NetError::Checkpoint(format!("layer {i} weights: {e}")))?;
            check_len("checkpoint bias", shape.0, b.len())?;
            Ok(Layer {
                w,
                b: Array1::from(b.to_vec()),
            })
        };
        let layers = (0..n)
            .map(|i| build(&c.weights[i], &c.biases[i], i))
            .collect::<Result<Vec<_>, _>>()?;
        let velocity = (0..n)
            .map(|i| build(&c.velocity_w[i], &c.velocity_b[i], i))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            layers,
            dropout: c.dropout,
            momentum: c.momentum,
            huber_delta: c.huber_delta,
            velocity,
        })
    }

    pub fn save(&self, path: &Path, rng: Option<RngState>) -> Result<(), NetError> {
        let text = serde_json::to_string(&self.to_checkpoint(rng)).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<(Self, Option<RngState>), NetError> {
        let text = std::fs::read_to_string(path)?;
        let c: NetCheckpoint = serde_json::from_str(&text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        Ok((Self::from_checkpoint(&c)?, c.rng))
    }
}

/// Versioned JSON checkpoint; weight arrays are row-major `out x in`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    pub dropout: f64,
    pub momentum: f64,
    pub huber_delta: f64,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub velocity_w: Vec<Vec<f64>>,
    pub velocity_b: Vec<Vec<f64>>,
    pub rng: Option<RngState>,
}

/// Largest relative error between analytic and central-difference
/// gradients over every parameter, using `mask` for dropout.
pub fn gradient_check(net: &Network, batch: &Batch, mask: Option<&Array2<f64>>, h: f64) -> Result<f64, NetError> {
    let (_, grads) = net.loss_and_grad(batch, mask)?;
    let mut probe = net.clone();
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, plus: f64, minus: f64| {
        let numeric = (plus - minus) / (2.0 * h);
        let scale = analytic.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((analytic - numeric).abs() / scale);
    };
    for li in 0..net.layers.len() {
        for idx in 0..net.layers[li].w.len() {
            let (r, c) = (idx / net.layers[li].inputs(), idx % net.layers[li].inputs());
            let orig = probe.layers[li].w[[r, c]];
            probe.layers[li].w[[r, c]] = orig + h;
            let plus = probe.loss_and_grad(batch, mask)?.0;
            probe.layers[li].w[[r, c]] = orig - h;
            let minus = probe.loss_and_grad(batch, mask)?.0;
            probe.layers[li].w[[r, c]] = orig;
            compare(grads[li].w[[r, c]], plus, minus);
        }
        for j in 0..net.layers[li].b.len() {
            let orig = probe.layers[li].b[j];
            probe.layers[li].b[j] = orig + h;
            let plus = probe.loss_and_grad(batch, mask)?.0;
            probe.layers[li].b[j] = orig - h;
            let minus = probe.loss_and_grad(batch, mask)?.0;
            probe.layers[li].b[j] = orig;
            compare(grads[li].b[j], plus, minus);
        }
    }
    Ok(worst)
}
