//! Per-channel batch normalization.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Running statistics owned by one batch-norm site.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: T,
    /// Variance floor; variances below it are clamped up to it.
    pub eps: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: T::lit(0.1),
            eps: T::lit(1e-5),
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }
}

pub(crate) struct BnSaved<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    /// Channels whose variance was below the floor: their scale is constant
    /// with respect to the input.
    clamped: Vec<bool>,
    mode: BnMode,
    channels: usize,
    plane: usize,
}

fn forward<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, state: &mut BatchNormState<T>, mode: BnMode) -> Result<(Tensor<T>, BnSaved<T>)> {
    let [n, c, h, w] = x.shape();
    let plane = h * w;
    if gamma.len() != c || beta.len() != c || state.channels() != c {
        return Err(Error::shape(
            "batch_norm",
            format!("{c} channels but gamma={}, beta={}, state={}", gamma.len(), beta.len(), state.channels()),
        ));
    }
    let count = n * plane;
    if count == 0 {
        return Err(Error::invalid("batch_norm", "channel has no elements"));
    }
    let xs = x.data();
    let mut inv_std = vec![T::zero(); c];
    let mut clamped = vec![false; c];
    let mut mean = vec![T::zero(); c];
    let m = T::from_usize(count).unwrap();
    for ch in 0..c {
        let (mu, var) = match mode {
            BnMode::Train => {
                let mut s = T::zero();
                for img in 0..n {
                    s = s + xs[(img * c + ch) * plane..][..plane].iter().copied().sum::<T>();
                }
                let mu = s / m;
                let mut ss = T::zero();
                for img in 0..n {
                    for &v in &xs[(img * c + ch) * plane..][..plane] {
                        ss = ss + (v - mu) * (v - mu);
                    }
                }
                let var = ss / m;
                let unbiased = if count > 1 { ss / T::from_usize(count - 1).unwrap() } else { var };
                let mom = state.momentum;
                state.running_mean[ch] = (T::one() - mom) * state.running_mean[ch] + mom * mu;
                state.running_var[ch] = (T::one() - mom) * state.running_var[ch] + mom * unbiased;
                (mu, var)
            }
            BnMode::Eval => (state.running_mean[ch], state.running_var[ch]),
        };
        clamped[ch] = var < state.eps;
        inv_std[ch] = T::one() / var.max(state.eps).sqrt();
        mean[ch] = mu;
    }
    let mut xhat = vec![T::zero(); xs.len()];
    let mut out = Tensor::zeros(x.shape());
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * plane;
            let (g, b) = (gamma.data()[ch], beta.data()[ch]);
            for i in off..off + plane {
                let xh = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = xh;
                out.data_mut()[i] = g * xh + b;
            }
        }
    }
    Ok((out, BnSaved { xhat, inv_std, clamped, mode, channels: c, plane }))
}

pub(super) fn backward<T: Real>(gamma: &Tensor<T>, saved: &BnSaved<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let BnSaved { xhat, inv_std, clamped, mode, channels: c, plane } = saved;
    let (c, plane) = (*c, *plane);
    let n = dy.len() / (c * plane);
    let m = T::from_usize(n * plane).unwrap();
    let dys = dy.data();
    let mut dx = Tensor::zeros(dy.shape());
    let mut dgamma = Tensor::zeros([c, 1, 1, 1]);
    let mut dbeta = Tensor::zeros([c, 1, 1, 1]);
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for img in 0..n {
            let off = (img * c + ch) * plane;
            for i in off..off + plane {
                sum_dy = sum_dy + dys[i];
                sum_dy_xhat = sum_dy_xhat + dys[i] * xhat[i];
            }
        }
        dgamma.data_mut()[ch] = sum_dy_xhat;
        dbeta.data_mut()[ch] = sum_dy;
        let g = gamma.data()[ch];
        let s = inv_std[ch];
        for img in 0..n {
            let off = (img * c + ch) * plane;
            for i in off..off + plane {
                dx.data_mut()[i] = match (mode, clamped[ch]) {
                    (BnMode::Eval, _) => g * s * dys[i],
                    (BnMode::Train, true) => g * s * (dys[i] - sum_dy / m),
                    (BnMode::Train, false) => g * s * (dys[i] - sum_dy / m - xhat[i] * sum_dy_xhat / m),
                };
            }
        }
    }
    (dx, dgamma, dbeta)
}

impl<T: Real> Graph<T> {
    /// Normalize each channel with batch (train) or running (eval) statistics.
    /// Train mode also folds the batch statistics into `state`.
    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, state: &mut BatchNormState<T>, mode: BnMode) -> Result<Var> {
        let (value, saved) = forward(self.value(x), self.value(gamma), self.value(beta), state, mode)?;
        Ok(self.push(value, Op::BatchNorm { x, gamma, beta, saved }, &[x, gamma, beta]))
    }
}
