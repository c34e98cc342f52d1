use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

const GELU_CUBIC: f64 = 0.044715;
// sqrt(2 / pi)
const GELU_SCALE: f64 = 0.797_884_560_802_865_4;

/// Tanh-approximated GELU, evaluated as `x * sigmoid(2u)` with
/// `u = sqrt(2/pi) * (x + 0.044715 x^3)`, which equals `0.5 x (1 + tanh u)`.
pub fn gelu<T: Real>(x: T) -> T {
    x * logistic(T::lit(2.0 * GELU_SCALE) * (x + T::lit(GELU_CUBIC) * x * x * x))
}

pub fn gelu_grad<T: Real>(x: T) -> T {
    let s = logistic(T::lit(2.0 * GELU_SCALE) * (x + T::lit(GELU_CUBIC) * x * x * x));
    let du = T::lit(2.0 * GELU_SCALE) * (T::one() + T::lit(3.0 * GELU_CUBIC) * x * x);
    s + x * s * (T::one() - s) * du
}

fn logistic<T: Real>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

pub(super) fn gelu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor::from_fn(x.shape(), |i| gelu_grad(x.data()[i]) * dy.data()[i])
}

pub(super) fn l1_backward<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, upstream: T) -> Tensor<T> {
    let scale = upstream / T::from_usize(pred.len()).unwrap();
    Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i] - target.data()[i];
        if d > T::zero() {
            scale
        } else if d < T::zero() {
            -scale
        } else {
            T::zero()
        }
    })
}

fn same_shape<T: Real>(g: &Graph<T>, op: &'static str, a: Var, b: Var) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return Err(Error::shape(op, format!("{:?} vs {:?}", g.shape(a), g.shape(b))));
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    /// The model's smooth activation (tanh-approximated GELU).
    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu);
        self.push(value, Op::Gelu { x }, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let mut value = self.value(a).clone();
        value.add_assign(self.value(b));
        Ok(self.push(value, Op::Add { a, b }, &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "sub", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let value = Tensor::from_fn(x.shape(), |i| x.data()[i] - y.data()[i]);
        Ok(self.push(value, Op::Sub { a, b }, &[a, b]))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale { x, factor }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::full([1, 1, 1, 1], self.value(x).sum());
        self.push(value, Op::Sum { x }, &[x])
    }

    /// Mean absolute error; the subgradient at exact ties is zero.
    pub fn l1_loss(&mut self, pred: Var, target: Var) -> Result<Var> {
        same_shape(self, "l1_loss", pred, target)?;
        let (p, t) = (self.value(pred), self.value(target));
        let total: T = p.data().iter().zip(t.data()).map(|(&a, &b)| (a - b).abs()).sum();
        let value = Tensor::full([1, 1, 1, 1], total / T::from_usize(p.len().max(1)).unwrap());
        Ok(self.push(value, Op::L1 { pred, target }, &[pred, target]))
    }
}
