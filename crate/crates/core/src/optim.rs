//! SGD with Nesterov momentum for G, Adam for each D_i, and the polynomial
//! learning-rate decay both share.

use crate::error::{Error, Result};
use crate::networks::{ParamKind, ParamSet};

/// Initial learning rate of the segmentation network.
pub const G_BASE_LR: f64 = 2.5e-4;
/// Initial learning rate of every discriminator.
pub const D_BASE_LR: f64 = 1e-4;
/// Initial G learning rate for training from random initialization, as
/// opposed to fine-tuning a pretrained backbone at `G_BASE_LR`.
pub const G_SCRATCH_LR: f64 = 1e-2;
pub const POLY_POWER: f64 = 0.9;

/// `lr(t) = base_lr · (1 − t/total_steps)^power`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolySchedule {
    pub base_lr: f64,
    pub power: f64,
    pub total_steps: u64,
}

impl PolySchedule {
    pub fn new(base_lr: f64, total_steps: u64) -> Self {
        PolySchedule {
            base_lr,
            power: POLY_POWER,
            total_steps,
        }
    }

    pub fn lr(&self, t: u64) -> Result<f64> {
        if t > self.total_steps {
            return Err(Error::Config(format!(
                "step {t} beyond schedule length {}",
                self.total_steps
            )));
        }
        if self.total_steps == 0 {
            return Ok(self.base_lr);
        }
        let remaining = 1.0 - t as f64 / self.total_steps as f64;
        Ok(self.base_lr * remaining.powf(self.power))
    }
}

fn grad_of<'a>(params: &'a ParamSet, i: usize) -> Result<&'a [f32]> {
    params.tensor(i).grad().ok_or_else(|| {
        Error::Config(format!("missing gradient for parameter {}", params.names()[i]))
    })
}

fn check_buffers(params: &ParamSet, buffers: &[Vec<f32>], what: &str) -> Result<()> {
    let ok = buffers.len() == params.len()
        && buffers
            .iter()
            .enumerate()
            .all(|(i, b)| b.len() == params.tensor(i).numel());
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} buffers do not mirror the parameter set")))
    }
}

/// Nesterov-momentum SGD with decoupled-from-bias weight decay.
///
/// For weights, `g' = g + wd·p`; biases use `g' = g`. Then
/// `v ← μ·v + g'` and `p ← p − lr·(g' + μ·v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SgdState {
    pub momentum: f32,
    pub weight_decay: f32,
    pub nesterov: bool,
    pub velocity: Vec<Vec<f32>>,
}

impl SgdState {
    pub const MOMENTUM: f32 = 0.9;
    pub const WEIGHT_DECAY: f32 = 1e-4;

    pub fn new(params: &ParamSet) -> Self {
        Self::with_hyper(params, Self::MOMENTUM, Self::WEIGHT_DECAY)
    }

    pub fn with_hyper(params: &ParamSet, momentum: f32, weight_decay: f32) -> Self {
        SgdState {
            momentum,
            weight_decay,
            nesterov: true,
            velocity: (0..params.len())
                .map(|i| vec![0.0; params.tensor(i).numel()])
                .collect(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        check_buffers(params, &self.velocity, "momentum")?;
        let lr = lr as f32;
        for i in 0..params.len() {
            let decay = match params.kind(i) {
                ParamKind::Weight => self.weight_decay,
                ParamKind::Bias => 0.0,
            };
            grad_of(params, i)?;
            let (p, grad) = params.tensor_mut(i).data_and_grad();
            let grad = grad.expect("checked above");
            let v = &mut self.velocity[i];
            for ((p, v), g) in p.iter_mut().zip(v.iter_mut()).zip(grad) {
                let g = g + decay * *p;
                *v = self.momentum * *v + g;
                let step = if self.nesterov { g + self.momentum * *v } else { *v };
                *p -= lr * step;
            }
        }
        Ok(())
    }
}

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub step: u64,
    pub first: Vec<Vec<f32>>,
    pub second: Vec<Vec<f32>>,
}

impl AdamState {
    pub const BETA1: f32 = 0.9;
    pub const BETA2: f32 = 0.99;
    pub const EPS: f32 = 1e-8;

    pub fn new(params: &ParamSet) -> Self {
        let zeros = || -> Vec<Vec<f32>> {
            (0..params.len())
                .map(|i| vec![0.0; params.tensor(i).numel()])
                .collect()
        };
        AdamState {
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            eps: Self::EPS,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, lr: f64) -> Result<()> {
        check_buffers(params, &self.first, "first-moment")?;
        check_buffers(params, &self.second, "second-moment")?;
        for i in 0..params.len() {
            grad_of(params, i)?;
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - f64::from(self.beta1).powi(t);
        let c2 = 1.0 - f64::from(self.beta2).powi(t);
        // p −= lr·m̂/(√v̂ + ε) with m̂ = m/c1, v̂ = v/c2, folded into two constants.
        let step_size = (lr / c1) as f32;
        let inv_sqrt_c2 = (1.0 / c2.sqrt()) as f32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for i in 0..params.len() {
            let (p, grad) = params.tensor_mut(i).data_and_grad();
            let grad = grad.expect("checked above");
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            let n = p.len();
            let (m, v, grad) = (&mut m[..n], &mut v[..n], &grad[..n]);
            for j in 0..n {
                let g = grad[j];
                m[j] = b1 * m[j] + (1.0 - b1) * g;
                v[j] = b2 * v[j] + (1.0 - b2) * g * g;
                p[j] -= step_size * m[j] / (v[j].sqrt() * inv_sqrt_c2 + eps);
            }
        }
        Ok(())
    }
}
