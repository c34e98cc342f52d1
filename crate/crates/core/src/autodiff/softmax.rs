use super::{Graph, Op, Var};
use crate::tensor::{Real, Tensor};

/// In-place max-subtracted softmax over one row. Returns the row's
/// log-sum-exp so callers can rebuild probabilities later.
pub(crate) fn softmax_row<T: Real>(row: &mut [T]) -> T {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum = sum + *v;
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
    max + sum.ln()
}

pub(super) fn backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let n = y.shape()[3].max(1);
    let mut dx = Tensor::zeros(y.shape());
    for ((yr, gr), dr) in y.data().chunks(n).zip(dy.data().chunks(n)).zip(dx.data_mut().chunks_mut(n)) {
        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        for ((d, &a), &b) in dr.iter_mut().zip(yr).zip(gr) {
            *d = a * (b - dot);
        }
    }
    dx
}

impl<T: Real> Graph<T> {
    /// Softmax along the last (width) axis.
    pub fn softmax_lastdim(&mut self, x: Var) -> Var {
        let mut value = self.value(x).clone();
        let n = value.shape()[3].max(1);
        for row in value.data_mut().chunks_mut(n) {
            softmax_row(row);
        }
        self.push(value, Op::Softmax { x }, &[x])
    }
}
