//! Learned steering: a small multilayer perceptron maps a relative state
//! delta to a constant control and duration. Training minimizes a weighted
//! sum of control-space error and, for the first-order system, the endpoint
//! error of a differentiable closed-form rollout of the predicted control.
//!
//! Everything is implemented directly over `Vec<f64>`: the architecture is
//! fixed (two hidden blocks of linear + batch-norm + tanh, and a tanh output
//! layer), so hand-written backpropagation stays small and testable against
//! central differences.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::path::Path;

use crate::dataset::{ControlDataset, DatasetEntry};
use crate::dynamics::{
    Control, PropagationStep, StateDelta, SystemOrder, SystemSpec,
};
use crate::error::{Error, Result};

/// Fully connected layer; weights are row-major `out_dim x in_dim`.
#[derive(Clone, Serialize, Deserialize)]
struct Linear {
    w: Vec<f64>,
    b: Vec<f64>,
    in_dim: usize,
    out_dim: usize,
}

impl Linear {
    fn new(in_dim: usize, out_dim: usize, rng: &mut impl Rng) -> Self {
        // Xavier-uniform initialization.
        let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
        Linear {
            w: (0..in_dim * out_dim)
                .map(|_| rng.gen_range(-limit..limit))
                .collect(),
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// `x` is `n x in_dim` flat; returns `n x out_dim` flat.
    fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; n * self.out_dim];
        for s in 0..n {
            for o in 0..self.out_dim {
                let mut acc = self.b[o];
                let row = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let xin = &x[s * self.in_dim..(s + 1) * self.in_dim];
                for (wi, xi) in row.iter().zip(xin) {
                    acc += wi * xi;
                }
                out[s * self.out_dim + o] = acc;
            }
        }
        out
    }

    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(
        &self,
        x: &[f64],
        dz: &[f64],
        n: usize,
        dw: &mut [f64],
        db: &mut [f64],
    ) -> Vec<f64> {
        let mut dx = vec![0.0; n * self.in_dim];
        for s in 0..n {
            let xin = &x[s * self.in_dim..(s + 1) * self.in_dim];
            for o in 0..self.out_dim {
                let g = dz[s * self.out_dim + o];
                db[o] += g;
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let dwrow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    dwrow[i] += g * xin[i];
                    dx[s * self.in_dim + i] += g * wrow[i];
                }
            }
        }
        dx
    }

    fn params(&self) -> usize {
        self.w.len() + self.b.len()
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

/// Batch normalization over the batch dimension, with running statistics for
/// inference.
#[derive(Clone, Serialize, Deserialize)]
struct BatchNorm {
    gamma: Vec<f64>,
    beta: Vec<f64>,
    run_mean: Vec<f64>,
    run_var: Vec<f64>,
    dim: usize,
}

/// Per-batch cache needed by the backward pass.
struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            run_mean: vec![0.0; dim],
            run_var: vec![1.0; dim],
            dim,
        }
    }

    fn forward_train(&mut self, x: &[f64], n: usize, update_stats: bool) -> (Vec<f64>, BnCache) {
        let d = self.dim;
        let mut mean = vec![0.0; d];
        let mut var = vec![0.0; d];
        for s in 0..n {
            for j in 0..d {
                mean[j] += x[s * d + j];
            }
        }
        for m in &mut mean {
            *m /= n as f64;
        }
        for s in 0..n {
            for j in 0..d {
                let c = x[s * d + j] - mean[j];
                var[j] += c * c;
            }
        }
        for v in &mut var {
            *v /= n as f64;
        }
        if update_stats {
            for j in 0..d {
                self.run_mean[j] = (1.0 - BN_MOMENTUM) * self.run_mean[j] + BN_MOMENTUM * mean[j];
                self.run_var[j] = (1.0 - BN_MOMENTUM) * self.run_var[j] + BN_MOMENTUM * var[j];
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; n * d];
        let mut out = vec![0.0; n * d];
        for s in 0..n {
            for j in 0..d {
                let h = (x[s * d + j] - mean[j]) * inv_std[j];
                xhat[s * d + j] = h;
                out[s * d + j] = self.gamma[j] * h + self.beta[j];
            }
        }
        (out, BnCache { xhat, inv_std })
    }

    fn forward_infer(&self, x: &[f64], n: usize) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; n * d];
        for s in 0..n {
            for j in 0..d {
                let h = (x[s * d + j] - self.run_mean[j]) / (self.run_var[j] + BN_EPS).sqrt();
                out[s * d + j] = self.gamma[j] * h + self.beta[j];
            }
        }
        out
    }

    fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        n: usize,
        dgamma: &mut [f64],
        dbeta: &mut [f64],
    ) -> Vec<f64> {
        let d = self.dim;
        let mut sum_dy = vec![0.0; d];
        let mut sum_dy_xhat = vec![0.0; d];
        for s in 0..n {
            for j in 0..d {
                let g = dy[s * d + j];
                sum_dy[j] += g;
                sum_dy_xhat[j] += g * cache.xhat[s * d + j];
            }
        }
        for j in 0..d {
            dgamma[j] += sum_dy_xhat[j];
            dbeta[j] += sum_dy[j];
        }
        let mut dx = vec![0.0; n * d];
        let nf = n as f64;
        for s in 0..n {
            for j in 0..d {
                let g = dy[s * d + j];
                dx[s * d + j] = self.gamma[j] * cache.inv_std[j]
                    * (g - sum_dy[j] / nf - cache.xhat[s * d + j] * sum_dy_xhat[j] / nf);
            }
        }
        dx
    }

    fn params(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }
}

/// Input/output scaling so every network quantity lives near [-1, 1].
#[derive(Clone, Copy, Serialize, Deserialize)]
struct Scales {
    reach: f64,
    u_mid: f64,
    u_half: f64,
    t_mid: f64,
    t_half: f64,
    v_max: f64,
}

impl Scales {
    fn from_spec(spec: &SystemSpec) -> Self {
        Scales {
            reach: spec.max_reach(),
            u_mid: 0.5 * (spec.u_min + spec.u_max),
            u_half: 0.5 * (spec.u_max - spec.u_min),
            t_mid: 0.5 * (spec.t_min + spec.t_max),
            t_half: 0.5 * (spec.t_max - spec.t_min),
            v_max: spec.v_max.abs().max(spec.v_min.abs()).max(1e-9),
        }
    }
}

/// Training hyperparameters.
#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub val_split: f64,
    pub w_control: f64,
    pub w_state: f64,
    pub seed: u64,
}

impl TrainConfig {
    pub fn for_order(order: SystemOrder) -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 2000,
            patience: 200,
            val_split: 0.1,
            w_control: 1.0,
            w_state: match order {
                SystemOrder::First => 0.5,
                SystemOrder::Second => 0.0,
            },
            seed: 0,
        }
    }
}

/// Loss curve and outcome of a training run.
#[derive(Clone, Debug, Default)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// The steering network.
#[derive(Clone, Serialize, Deserialize)]
pub struct MlpController {
    pub order: SystemOrder,
    l1: Linear,
    bn1: BatchNorm,
    l2: Linear,
    bn2: BatchNorm,
    l3: Linear,
    scales: Scales,
    /// True once batch-norm has been folded into the linear layers.
    folded: bool,
}

/// Hidden sizes per system order.
pub fn default_hidden(order: SystemOrder) -> (usize, usize) {
    match order {
        SystemOrder::First => (64, 16),
        SystemOrder::Second => (64, 32),
    }
}

fn input_dim(order: SystemOrder) -> usize {
    match order {
        SystemOrder::First => 3,
        SystemOrder::Second => 7,
    }
}

/// sinc-like terms of the constant-control arc, stable near zero turn rate.
/// Returns (s, s', q, q') for s = sin(z)/z and q = (1 - cos(z))/z.
fn arc_terms(z: f64) -> (f64, f64, f64, f64) {
    if z.abs() < 1e-2 {
        // Below the cutoff the direct formulas lose digits to cancellation
        // in (1 - cos z); the series are accurate to ~1e-16 here.
        let z2 = z * z;
        let z4 = z2 * z2;
        (
            1.0 - z2 / 6.0 + z4 / 120.0 - z2 * z4 / 5040.0,
            -z / 3.0 + z * z2 / 30.0 - z * z4 / 840.0,
            z / 2.0 - z * z2 / 24.0 + z * z4 / 720.0,
            0.5 - z2 / 8.0 + z4 / 144.0,
        )
    } else {
        let s = z.sin() / z;
        let q = (1.0 - z.cos()) / z;
        (s, (z.cos() - s) / z, q, (z.sin() - q) / z)
    }
}

/// Closed-form first-order rollout from the origin pose: position and heading
/// after driving wheel velocities (a, b) for time t with axle length `axle`.
pub fn first_order_endpoint(a: f64, b: f64, t: f64, axle: f64) -> (f64, f64, f64) {
    let v = 0.5 * (a + b);
    let w = (b - a) / axle;
    let z = w * t;
    let (s, _, q, _) = arc_terms(z);
    (v * t * s, v * t * q, z)
}

/// Endpoint plus its Jacobian with respect to (a, b, t); rows are
/// (x, y, theta).
fn first_order_endpoint_jac(a: f64, b: f64, t: f64, axle: f64) -> ([f64; 3], [[f64; 3]; 3]) {
    let v = 0.5 * (a + b);
    let w = (b - a) / axle;
    let z = w * t;
    let (s, ds, q, dq) = arc_terms(z);
    let x = v * t * s;
    let y = v * t * q;
    // Partials with respect to (v, w, t), then chain to (a, b, t).
    let dx = [t * s, v * t * t * ds, v * s + v * t * ds * w];
    let dy = [t * q, v * t * t * dq, v * q + v * t * dq * w];
    let dth = [0.0, t, w];
    let chain = |g: [f64; 3]| {
        [
            0.5 * g[0] - g[1] / axle,
            0.5 * g[0] + g[1] / axle,
            g[2],
        ]
    };
    ([x, y, z], [chain(dx), chain(dy), chain(dth)])
}

struct ForwardCache {
    x: Vec<f64>,
    z1: Vec<f64>,
    a1: Vec<f64>,
    bc1: BnCache,
    a1t: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    bc2: BnCache,
    a2t: Vec<f64>,
    out: Vec<f64>,
}

/// One training target: normalized controls plus the raw pose delta for the
/// state loss.
struct Target {
    u: [f64; 3],
    pose: [f64; 3],
}

impl MlpController {
    pub fn new(spec: &SystemSpec, hidden: (usize, usize), rng: &mut impl Rng) -> Self {
        let din = input_dim(spec.order);
        MlpController {
            order: spec.order,
            l1: Linear::new(din, hidden.0, rng),
            bn1: BatchNorm::new(hidden.0),
            l2: Linear::new(hidden.0, hidden.1, rng),
            bn2: BatchNorm::new(hidden.1),
            l3: Linear::new(hidden.1, 3, rng),
            scales: Scales::from_spec(spec),
            folded: false,
        }
    }

    pub fn param_count(&self) -> usize {
        self.l1.params() + self.bn1.params() + self.l2.params() + self.bn2.params()
            + self.l3.params()
    }

    /// Polar input features, each roughly in [-1, 1].
    pub fn features(&self, q: &StateDelta) -> Vec<f64> {
        let r = (q.dx * q.dx + q.dy * q.dy).sqrt();
        let phi = if r > 1e-12 { q.dy.atan2(q.dx) } else { 0.0 };
        let mut f = vec![r / self.scales.reach, phi / PI, q.dtheta / PI];
        if self.order == SystemOrder::Second {
            f.extend([
                q.v_l_init / self.scales.v_max,
                q.v_r_init / self.scales.v_max,
                q.v_l_goal / self.scales.v_max,
                q.v_r_goal / self.scales.v_max,
            ]);
        }
        f
    }

    fn decode(&self, o: &[f64]) -> PropagationStep {
        PropagationStep::new(
            Control::new(
                self.scales.u_mid + self.scales.u_half * o[0],
                self.scales.u_mid + self.scales.u_half * o[1],
            ),
            self.scales.t_mid + self.scales.t_half * o[2],
        )
    }

    /// Inference: one constant control and duration for the given delta.
    pub fn predict(&self, q: &StateDelta) -> PropagationStep {
        let f = self.features(q);
        let n = 1;
        let z1 = self.l1.forward(&f, n);
        let h1 = if self.folded { z1 } else { self.bn1.forward_infer(&z1, n) };
        let a1: Vec<f64> = h1.iter().map(|v| v.tanh()).collect();
        let z2 = self.l2.forward(&a1, n);
        let h2 = if self.folded { z2 } else { self.bn2.forward_infer(&z2, n) };
        let a2: Vec<f64> = h2.iter().map(|v| v.tanh()).collect();
        let z3 = self.l3.forward(&a2, n);
        let o: Vec<f64> = z3.iter().map(|v| v.tanh()).collect();
        self.decode(&o)
    }

    /// Folds batch-norm statistics into the adjacent linear layers; inference
    /// output is unchanged but each block becomes a plain affine + tanh.
    pub fn fold_batch_norm(&mut self) {
        if self.folded {
            return;
        }
        for (lin, bn) in [(&mut self.l1, &self.bn1), (&mut self.l2, &self.bn2)] {
            for o in 0..lin.out_dim {
                let scale = bn.gamma[o] / (bn.run_var[o] + BN_EPS).sqrt();
                for i in 0..lin.in_dim {
                    lin.w[o * lin.in_dim + i] *= scale;
                }
                lin.b[o] = scale * (lin.b[o] - bn.run_mean[o]) + bn.beta[o];
            }
        }
        self.folded = true;
    }

    fn forward_train(&mut self, x: Vec<f64>, n: usize, update_stats: bool) -> ForwardCache {
        let z1 = self.l1.forward(&x, n);
        let (a1, bc1) = self.bn1.forward_train(&z1, n, update_stats);
        let a1t: Vec<f64> = a1.iter().map(|v| v.tanh()).collect();
        let z2 = self.l2.forward(&a1t, n);
        let (a2, bc2) = self.bn2.forward_train(&z2, n, update_stats);
        let a2t: Vec<f64> = a2.iter().map(|v| v.tanh()).collect();
        let z3 = self.l3.forward(&a2t, n);
        let out: Vec<f64> = z3.iter().map(|v| v.tanh()).collect();
        ForwardCache {
            x,
            z1,
            a1,
            bc1,
            a1t,
            z2,
            a2,
            bc2,
            a2t,
            out,
        }
    }

    /// Loss and the output-layer gradient dL/d(out).
    fn loss_and_dout(
        &self,
        out: &[f64],
        targets: &[Target],
        w_control: f64,
        w_state: f64,
    ) -> (f64, Vec<f64>) {
        let n = targets.len();
        let mut loss = 0.0;
        let mut dout = vec![0.0; out.len()];
        let denom = (3 * n) as f64;
        for (s, tgt) in targets.iter().enumerate() {
            let o = &out[s * 3..s * 3 + 3];
            for k in 0..3 {
                let e = o[k] - tgt.u[k];
                loss += w_control * e * e / denom;
                dout[s * 3 + k] += w_control * 2.0 * e / denom;
            }
            if w_state > 0.0 {
                let a = self.scales.u_mid + self.scales.u_half * o[0];
                let b = self.scales.u_mid + self.scales.u_half * o[1];
                let t = self.scales.t_mid + self.scales.t_half * o[2];
                let (end, jac) = first_order_endpoint_jac(a, b, t, 1.0);
                let osc = [self.scales.u_half, self.scales.u_half, self.scales.t_half];
                // Planar terms: scaled squared error.
                for r in 0..2 {
                    let e = (end[r] - tgt.pose[r]) / self.scales.reach;
                    loss += w_state * e * e / denom;
                    let g = w_state * 2.0 * e / (denom * self.scales.reach);
                    for k in 0..3 {
                        dout[s * 3 + k] += g * jac[r][k] * osc[k];
                    }
                }
                // Heading term: 2(1 - cos d)/pi^2 equals the squared wrapped
                // error to second order but is smooth across the wrap.
                let dth = end[2] - tgt.pose[2];
                loss += w_state * 2.0 * (1.0 - dth.cos()) / (PI * PI) / denom;
                let g = w_state * 2.0 * dth.sin() / (PI * PI) / denom;
                for k in 0..3 {
                    dout[s * 3 + k] += g * jac[2][k] * osc[k];
                }
            }
        }
        (loss, dout)
    }

    /// Full forward/backward on one batch; gradients are written into `grads`
    /// in parameter order. Used by Adam and by the finite-difference tests.
    fn loss_and_grad(
        &mut self,
        x: Vec<f64>,
        targets: &[Target],
        w_control: f64,
        w_state: f64,
        update_stats: bool,
        grads: &mut Grads,
    ) -> f64 {
        let n = targets.len();
        let c = self.forward_train(x, n, update_stats);
        let (loss, dout) = self.loss_and_dout(&c.out, targets, w_control, w_state);
        // tanh output.
        let dz3: Vec<f64> = dout
            .iter()
            .zip(&c.out)
            .map(|(g, o)| g * (1.0 - o * o))
            .collect();
        let da2t = self.l3.backward(&c.a2t, &dz3, n, &mut grads.w3, &mut grads.b3);
        let da2: Vec<f64> = da2t
            .iter()
            .zip(&c.a2t)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let dz2 = self
            .bn2
            .backward(&c.bc2, &da2, n, &mut grads.g2, &mut grads.be2);
        let da1t = self.l2.backward(&c.a1t, &dz2, n, &mut grads.w2, &mut grads.b2);
        let da1: Vec<f64> = da1t
            .iter()
            .zip(&c.a1t)
            .map(|(g, a)| g * (1.0 - a * a))
            .collect();
        let dz1 = self
            .bn1
            .backward(&c.bc1, &da1, n, &mut grads.g1, &mut grads.be1);
        let _ = self.l1.backward(&c.x, &dz1, n, &mut grads.w1, &mut grads.b1);
        let _ = (&c.z1, &c.z2, &c.a1, &c.a2);
        loss
    }

    fn make_targets(&self, entries: &[&DatasetEntry]) -> (Vec<f64>, Vec<Target>) {
        let din = input_dim(self.order);
        let mut x = Vec::with_capacity(entries.len() * din);
        let mut t = Vec::with_capacity(entries.len());
        for e in entries {
            x.extend(self.features(&e.key));
            t.push(Target {
                u: [
                    (e.step.control.a - self.scales.u_mid) / self.scales.u_half,
                    (e.step.control.b - self.scales.u_mid) / self.scales.u_half,
                    (e.step.duration - self.scales.t_mid) / self.scales.t_half,
                ],
                pose: [e.key.dx, e.key.dy, e.key.dtheta],
            });
        }
        (x, t)
    }

    /// Validation loss in inference mode (running statistics).
    fn eval_loss(&self, entries: &[&DatasetEntry], w_control: f64, w_state: f64) -> f64 {
        if entries.is_empty() {
            return 0.0;
        }
        let (x, targets) = self.make_targets(entries);
        let n = entries.len();
        let z1 = self.l1.forward(&x, n);
        let a1: Vec<f64> = self.bn1.forward_infer(&z1, n).iter().map(|v| v.tanh()).collect();
        let z2 = self.l2.forward(&a1, n);
        let a2: Vec<f64> = self.bn2.forward_infer(&z2, n).iter().map(|v| v.tanh()).collect();
        let out: Vec<f64> = self.l3.forward(&a2, n).iter().map(|v| v.tanh()).collect();
        self.loss_and_dout(&out, &targets, w_control, w_state).0
    }

    /// Audit hook: compares the analytic training gradient against central
    /// finite differences on `slices` randomly chosen parameters, over one
    /// batch of dataset entries. Returns the worst relative error found.
    pub fn gradient_check(
        &self,
        ds: &ControlDataset,
        batch: usize,
        slices: usize,
        w_state: f64,
        rng: &mut impl Rng,
    ) -> Result<f64> {
        if self.folded {
            return Err(Error::InvalidConfig(
                "cannot gradient-check a folded controller".into(),
            ));
        }
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let entries: Vec<&DatasetEntry> = (0..batch.max(1))
            .map(|_| ds.entry(rng.gen_range(0..ds.len())))
            .collect();
        let mut net = self.clone();
        let (x, targets) = net.make_targets(&entries);
        let mut grads = Grads::zeros(&net);
        net.loss_and_grad(x.clone(), &targets, 1.0, w_state, false, &mut grads);
        let analytic = grads.flat();

        fn block_mut(n: &mut MlpController, b: usize) -> &mut Vec<f64> {
            match b {
                0 => &mut n.l1.w,
                1 => &mut n.l1.b,
                2 => &mut n.bn1.gamma,
                3 => &mut n.bn1.beta,
                4 => &mut n.l2.w,
                5 => &mut n.l2.b,
                6 => &mut n.bn2.gamma,
                7 => &mut n.bn2.beta,
                8 => &mut n.l3.w,
                _ => &mut n.l3.b,
            }
        }
        let lens: Vec<usize> = (0..10).map(|b| block_mut(&mut net, b).len()).collect();
        let total: usize = lens.iter().sum();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        for _ in 0..slices {
            let flat = rng.gen_range(0..total);
            let (mut b, mut off) = (0usize, flat);
            while off >= lens[b] {
                off -= lens[b];
                b += 1;
            }
            let orig = block_mut(&mut net, b)[off];
            let mut eval = |val: f64| {
                block_mut(&mut net, b)[off] = val;
                let mut probe = net.clone();
                let mut g = Grads::zeros(&probe);
                probe.loss_and_grad(x.clone(), &targets, 1.0, w_state, false, &mut g)
            };
            let lp = eval(orig + h);
            let lm = eval(orig - h);
            block_mut(&mut net, b)[off] = orig;
            let num = (lp - lm) / (2.0 * h);
            let ana = analytic[flat];
            let denom = num.abs().max(ana.abs()).max(1e-6);
            worst = worst.max((num - ana).abs() / denom);
        }
        Ok(worst)
    }

    /// Trains with Adam and early stopping on a validation split; the weights
    /// from the best validation epoch are restored at the end.
    pub fn train(&mut self, ds: &ControlDataset, cfg: &TrainConfig) -> Result<TrainReport> {
        if self.folded {
            return Err(Error::InvalidConfig(
                "cannot train a controller after batch-norm folding".into(),
            ));
        }
        if ds.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut idx: Vec<usize> = (0..ds.len()).collect();
        idx.shuffle(&mut rng);
        let n_val = ((ds.len() as f64 * cfg.val_split).round() as usize).min(ds.len() - 1);
        let (val_idx, train_idx) = idx.split_at(n_val);
        let val: Vec<&DatasetEntry> = val_idx.iter().map(|&i| ds.entry(i)).collect();
        let mut train: Vec<usize> = train_idx.to_vec();

        let mut adam = Adam::new(self, cfg.learning_rate);
        let mut report = TrainReport {
            best_val_loss: f64::INFINITY,
            ..TrainReport::default()
        };
        let mut best: Option<MlpController> = None;
        let mut since_best = 0usize;
        for epoch in 0..cfg.max_epochs {
            train.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for chunk in train.chunks(cfg.batch_size.max(2)) {
                if chunk.len() < 2 {
                    continue; // batch-norm needs at least two samples
                }
                let entries: Vec<&DatasetEntry> = chunk.iter().map(|&i| ds.entry(i)).collect();
                let (x, targets) = self.make_targets(&entries);
                let mut grads = Grads::zeros(self);
                let loss = self.loss_and_grad(
                    x,
                    &targets,
                    cfg.w_control,
                    cfg.w_state,
                    true,
                    &mut grads,
                );
                if !loss.is_finite() {
                    return Err(Error::Diverged { epoch });
                }
                adam.step(self, &grads);
                epoch_loss += loss;
                batches += 1;
            }
            epoch_loss /= batches.max(1) as f64;
            let vl = if val.is_empty() {
                epoch_loss
            } else {
                self.eval_loss(&val, cfg.w_control, cfg.w_state)
            };
            report.train_loss.push(epoch_loss);
            report.val_loss.push(vl);
            report.epochs_run = epoch + 1;
            if vl < report.best_val_loss - 1e-12 {
                report.best_val_loss = vl;
                report.best_epoch = epoch;
                best = Some(self.clone());
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= cfg.patience {
                    break;
                }
            }
        }
        if let Some(b) = best {
            *self = b;
        }
        Ok(report)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Flat gradient buffers mirroring the parameter layout.
struct Grads {
    w1: Vec<f64>,
    b1: Vec<f64>,
    g1: Vec<f64>,
    be1: Vec<f64>,
    w2: Vec<f64>,
    b2: Vec<f64>,
    g2: Vec<f64>,
    be2: Vec<f64>,
    w3: Vec<f64>,
    b3: Vec<f64>,
}

impl Grads {
    fn zeros(net: &MlpController) -> Self {
        Grads {
            w1: vec![0.0; net.l1.w.len()],
            b1: vec![0.0; net.l1.b.len()],
            g1: vec![0.0; net.bn1.gamma.len()],
            be1: vec![0.0; net.bn1.beta.len()],
            w2: vec![0.0; net.l2.w.len()],
            b2: vec![0.0; net.l2.b.len()],
            g2: vec![0.0; net.bn2.gamma.len()],
            be2: vec![0.0; net.bn2.beta.len()],
            w3: vec![0.0; net.l3.w.len()],
            b3: vec![0.0; net.l3.b.len()],
        }
    }

    fn flat(&self) -> Vec<f64> {
        [
            &self.w1, &self.b1, &self.g1, &self.be1, &self.w2, &self.b2, &self.g2, &self.be2,
            &self.w3, &self.b3,
        ]
        .iter()
        .flat_map(|v| v.iter().copied())
        .collect()
    }
}

/// Adam optimizer state over the same flat layout as [`Grads`].
struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    fn new(net: &MlpController, lr: f64) -> Self {
        let n = net.param_count();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, net: &mut MlpController, grads: &Grads) {
        self.t += 1;
        let g = grads.flat();
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let mut k = 0usize;
        let apply = |p: &mut [f64], m: &mut [f64], v: &mut [f64], k: &mut usize| {
            for pi in p.iter_mut() {
                let gi = g[*k];
                m[*k] = b1 * m[*k] + (1.0 - b1) * gi;
                v[*k] = b2 * v[*k] + (1.0 - b2) * gi * gi;
                let mh = m[*k] / bc1;
                let vh = v[*k] / bc2;
                *pi -= lr * mh / (vh.sqrt() + eps);
                *k += 1;
            }
        };
        apply(&mut net.l1.w, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.l1.b, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.bn1.gamma, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.bn1.beta, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.l2.w, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.l2.b, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.bn2.gamma, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.bn2.beta, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.l3.w, &mut self.m, &mut self.v, &mut k);
        apply(&mut net.l3.b, &mut self.m, &mut self.v, &mut k);
        debug_assert_eq!(k, g.len());
    }
}

/// Nearest-entry lookup baseline: the control of the closest dataset entry.
pub fn lookup_control(ds: &ControlDataset, q: &StateDelta) -> Result<PropagationStep> {
    Ok(ds.nearest(q)?.step)
}

/// Endpoint errors for one evaluation query.
#[derive(Clone, Copy, Debug)]
pub struct EvalRow {
    pub err_x: f64,
    pub err_y: f64,
    pub err_theta: f64,
    pub d_e: f64,
    pub d_r: f64,
    pub within_eps: bool,
}

/// Endpoint-accuracy report for a steering function.
#[derive(Clone, Debug, Default)]
pub struct EvalReport {
    pub queries: usize,
    pub within_eps: f64,
    pub mean_d_e: f64,
    pub mean_d_r: f64,
    pub rows: Vec<EvalRow>,
}

impl EvalReport {
    /// One CSV row per query.
    pub fn rows_to_csv(&self) -> String {
        let mut out = String::from("err_x,err_y,err_theta,d_e,d_r,within_eps\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.err_x, r.err_y, r.err_theta, r.d_e, r.d_r, r.within_eps as u8
            ));
        }
        out
    }
}

/// Evaluates a steering function on dataset keys: the predicted step is
/// propagated from the entry's anchor velocities and the endpoint compared
/// against the intended target.
pub fn eval_controller<F>(
    spec: &SystemSpec,
    eps: &crate::dynamics::Epsilons,
    ds: &ControlDataset,
    limit: usize,
    mut steer: F,
) -> Result<EvalReport>
where
    F: FnMut(&StateDelta) -> Result<PropagationStep>,
{
    let mut report = EvalReport::default();
    let n = ds.len().min(limit.max(1));
    for i in 0..n {
        let e = ds.entry(i);
        let step = steer(&e.key)?;
        let start = crate::dynamics::State::with_velocities(
            0.0,
            0.0,
            0.0,
            e.key.v_l_init,
            e.key.v_r_init,
        );
        let step = PropagationStep::new(step.control, step.duration.clamp(spec.t_min, spec.t_max));
        let end = crate::dynamics::propagate(spec, &start, &step)?;
        let goal = e.endpoint();
        let d_e = crate::dynamics::d_e(&end, &goal);
        let d_r = spec.d_r(&end, &goal);
        let within = spec.within_eps(&end, &goal, eps);
        report.rows.push(EvalRow {
            err_x: (end.x - goal.x).abs(),
            err_y: (end.y - goal.y).abs(),
            err_theta: crate::dynamics::angle_diff(end.theta, goal.theta).abs(),
            d_e,
            d_r,
            within_eps: within,
        });
        report.mean_d_e += d_e;
        report.mean_d_r += d_r;
        if within {
            report.within_eps += 1.0;
        }
    }
    report.queries = n;
    report.mean_d_e /= n as f64;
    report.mean_d_r /= n as f64;
    report.within_eps /= n as f64;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::GenerateConfig;
    use crate::dynamics::{angle_diff, propagate, Epsilons, State};
    use approx::assert_abs_diff_eq;

    fn fo_spec() -> SystemSpec {
        SystemSpec::first_order_default()
    }

    fn tiny_dataset(seed: u64) -> (SystemSpec, Epsilons, ControlDataset) {
        let spec = fo_spec();
        let eps = Epsilons::first_order_default();
        let cfg = GenerateConfig {
            durations: vec![1.0, 2.5, 4.0],
            max_random_samples: 2_000,
            seed,
            ..GenerateConfig::default()
        };
        let (ds, _) = ControlDataset::generate(&spec, &eps, &cfg).unwrap();
        (spec, eps, ds)
    }

    #[test]
    fn closed_form_rollout_matches_rk4() {
        let spec = fo_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let t = rng.gen_range(0.5..5.0);
            let (x, y, th) = first_order_endpoint(a, b, t, spec.axle_length);
            let end = propagate(
                &spec,
                &State::pose(0.0, 0.0, 0.0),
                &PropagationStep::new(Control::new(a, b), t),
            )
            .unwrap();
            assert_abs_diff_eq!(x, end.x, epsilon = 1e-7);
            assert_abs_diff_eq!(y, end.y, epsilon = 1e-7);
            assert_abs_diff_eq!(angle_diff(th, end.theta), 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn rollout_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = rng.gen_range(-1.0..1.0);
            let b = rng.gen_range(-1.0..1.0);
            let t = rng.gen_range(0.5..5.0);
            let (_, jac) = first_order_endpoint_jac(a, b, t, 1.0);
            let h = 1e-6;
            let f = |a: f64, b: f64, t: f64| {
                let (x, y, th) = first_order_endpoint(a, b, t, 1.0);
                [x, y, th]
            };
            let num = [
                f(a + h, b, t)
                    .iter()
                    .zip(f(a - h, b, t))
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect::<Vec<_>>(),
                f(a, b + h, t)
                    .iter()
                    .zip(f(a, b - h, t))
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect::<Vec<_>>(),
                f(a, b, t + h)
                    .iter()
                    .zip(f(a, b, t - h))
                    .map(|(p, m)| (p - m) / (2.0 * h))
                    .collect::<Vec<_>>(),
            ];
            for r in 0..3 {
                for c in 0..3 {
                    assert_abs_diff_eq!(jac[r][c], num[c][r], epsilon = 1e-4);
                }
            }
        }
    }

    /// Exercises the straight-line branch where the turn rate vanishes.
    #[test]
    fn rollout_straight_line_limit() {
        let (x, y, th) = first_order_endpoint(0.8, 0.8, 2.0, 1.0);
        assert_abs_diff_eq!(x, 1.6, epsilon = 1e-12);
        assert_abs_diff_eq!(y, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(th, 0.0, epsilon = 1e-12);
        // The series expansion agrees with the exact branch just above the
        // switch point, so the two meet continuously.
        for z in [1.01e-2, 2e-2, 0.1] {
            let (s, ds, q, dq) = arc_terms(z);
            let z2 = z * z;
            let z4 = z2 * z2;
            assert_abs_diff_eq!(s, 1.0 - z2 / 6.0 + z4 / 120.0 - z2 * z4 / 5040.0, epsilon = 1e-9);
            assert_abs_diff_eq!(ds, -z / 3.0 + z * z2 / 30.0 - z * z4 / 840.0, epsilon = 1e-9);
            assert_abs_diff_eq!(q, z / 2.0 - z * z2 / 24.0 + z * z4 / 720.0, epsilon = 1e-9);
            assert_abs_diff_eq!(dq, 0.5 - z2 / 8.0 + z4 / 144.0, epsilon = 1e-9);
        }
    }

    fn numeric_grad_check(spec: &SystemSpec, w_state: f64, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = MlpController::new(spec, (8, 4), &mut rng);
        let n = 16;
        let din = input_dim(spec.order);
        let x: Vec<f64> = (0..n * din).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let targets: Vec<Target> = (0..n)
            .map(|_| Target {
                u: [
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                    rng.gen_range(-0.9..0.9),
                ],
                pose: [
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-3.0..3.0),
                    rng.gen_range(-2.0..2.0),
                ],
            })
            .collect();
        let mut grads = Grads::zeros(&net);
        let _ = net.loss_and_grad(x.clone(), &targets, 1.0, w_state, false, &mut grads);
        let analytic = grads.flat();

        // Central differences over every parameter, walked in the same block
        // order as Grads::flat.
        fn block_mut(n: &mut MlpController, b: usize) -> &mut Vec<f64> {
            match b {
                0 => &mut n.l1.w,
                1 => &mut n.l1.b,
                2 => &mut n.bn1.gamma,
                3 => &mut n.bn1.beta,
                4 => &mut n.l2.w,
                5 => &mut n.l2.b,
                6 => &mut n.bn2.gamma,
                7 => &mut n.bn2.beta,
                8 => &mut n.l3.w,
                _ => &mut n.l3.b,
            }
        }
        let h = 1e-5;
        let mut k = 0usize;
        let mut worst: f64 = 0.0;
        for b in 0..10 {
            let len = block_mut(&mut net, b).len();
            for i in 0..len {
                let orig = block_mut(&mut net, b)[i];
                let eval = |val: f64, net: &mut MlpController| {
                    block_mut(net, b)[i] = val;
                    let mut probe = net.clone();
                    let mut g = Grads::zeros(&probe);
                    probe.loss_and_grad(x.clone(), &targets, 1.0, w_state, false, &mut g)
                };
                let lp = eval(orig + h, &mut net);
                let lm = eval(orig - h, &mut net);
                block_mut(&mut net, b)[i] = orig;
                let num = (lp - lm) / (2.0 * h);
                let denom = analytic[k].abs().max(num.abs()).max(1e-6);
                worst = worst.max((analytic[k] - num).abs() / denom);
                k += 1;
            }
        }
        assert_eq!(k, analytic.len());
        assert!(worst < 1e-4, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_check_control_loss() {
        numeric_grad_check(&fo_spec(), 0.0, 3);
    }

    #[test]
    fn gradient_check_with_state_loss() {
        numeric_grad_check(&fo_spec(), 0.5, 4);
    }

    #[test]
    fn gradient_check_second_order_inputs() {
        numeric_grad_check(&SystemSpec::second_order_default(), 0.0, 5);
    }

    #[test]
    fn training_reduces_loss_and_predicts_controls() {
        let (spec, eps, ds) = tiny_dataset(7);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut net = MlpController::new(&spec, (32, 16), &mut rng);
        let cfg = TrainConfig {
            max_epochs: 400,
            patience: 400,
            seed: 7,
            ..TrainConfig::for_order(spec.order)
        };
        let report = net.train(&ds, &cfg).unwrap();
        assert!(report.epochs_run > 10);
        let first = report.train_loss[0];
        let last = report.best_val_loss;
        assert!(
            last < 0.5 * first,
            "loss did not improve: {first} -> {last}"
        );
        // The trained network steers near targets better than chance: compare
        // endpoint error against predicting "drive straight ahead" everywhere.
        let learned = eval_controller(&spec, &eps, &ds, 200, |q| Ok(net.predict(q))).unwrap();
        let naive = eval_controller(&spec, &eps, &ds, 200, |_| {
            Ok(PropagationStep::new(Control::new(1.0, 1.0), 2.75))
        })
        .unwrap();
        assert!(
            learned.mean_d_e < 0.5 * naive.mean_d_e,
            "learned {} vs naive {}",
            learned.mean_d_e,
            naive.mean_d_e
        );
    }

    #[test]
    fn training_is_deterministic() {
        let (spec, _, ds) = tiny_dataset(8);
        let cfg = TrainConfig {
            max_epochs: 30,
            seed: 9,
            ..TrainConfig::for_order(spec.order)
        };
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut net = MlpController::new(&spec, (16, 8), &mut rng);
            net.train(&ds, &cfg).unwrap();
            net.predict(&StateDelta::pose(2.0, 1.0, 0.5))
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn folding_preserves_inference() {
        let (spec, _, ds) = tiny_dataset(10);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = MlpController::new(&spec, (16, 8), &mut rng);
        let cfg = TrainConfig {
            max_epochs: 20,
            seed: 3,
            ..TrainConfig::for_order(spec.order)
        };
        net.train(&ds, &cfg).unwrap();
        let mut folded = net.clone();
        folded.fold_batch_norm();
        let mut q_rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let q = StateDelta::pose(
                q_rng.gen_range(-5.0..5.0),
                q_rng.gen_range(-5.0..5.0),
                q_rng.gen_range(-PI..PI),
            );
            let a = net.predict(&q);
            let b = folded.predict(&q);
            assert_abs_diff_eq!(a.control.a, b.control.a, epsilon = 1e-9);
            assert_abs_diff_eq!(a.control.b, b.control.b, epsilon = 1e-9);
            assert_abs_diff_eq!(a.duration, b.duration, epsilon = 1e-9);
        }
        assert!(folded.train(&ds, &cfg).is_err(), "folded nets are frozen");
    }

    #[test]
    fn save_load_round_trip() {
        let spec = fo_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let net = MlpController::new(&spec, (16, 8), &mut rng);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        net.save(&path).unwrap();
        let back = MlpController::load(&path).unwrap();
        let q = StateDelta::pose(1.0, -2.0, 0.3);
        assert_eq!(net.predict(&q), back.predict(&q));
    }

    #[test]
    fn lookup_control_is_exact_on_keys() {
        let (spec, eps, ds) = tiny_dataset(11);
        for i in (0..ds.len()).step_by(7) {
            let e = ds.entry(i);
            let step = lookup_control(&ds, &e.key).unwrap();
            assert_eq!(step, e.step);
        }
        // Nearest lookup reproduces every key endpoint exactly.
        let report = eval_controller(&spec, &eps, &ds, 100, |q| lookup_control(&ds, q)).unwrap();
        assert!(report.within_eps > 0.999, "{report:?}");
        assert!(report.mean_d_e < 1e-9);
    }

    #[test]
    fn predictions_respect_bounds() {
        let spec = fo_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = MlpController::new(&spec, (16, 8), &mut rng);
        for _ in 0..200 {
            let q = StateDelta::pose(
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-10.0..10.0),
                rng.gen_range(-PI..PI),
            );
            let s = net.predict(&q);
            assert!(s.control.a >= spec.u_min && s.control.a <= spec.u_max);
            assert!(s.control.b >= spec.u_min && s.control.b <= spec.u_max);
            assert!(s.duration >= spec.t_min && s.duration <= spec.t_max);
        }
    }
}
