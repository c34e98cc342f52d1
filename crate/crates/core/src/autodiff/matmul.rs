use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{numel, MatMut, MatRef, Real, Shape, Tensor};

/// `(b, c, m, k) x (b, c, k, n) -> (b, c, m, n)` with optional transposes of
/// either operand's trailing matrix.
fn bmm<T: Real>(a: &Tensor<T>, ta: bool, b: &Tensor<T>, tb: bool) -> Tensor<T> {
    let [bs, cs, ar, ac] = a.shape();
    let [_, _, br, bc] = b.shape();
    let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
    let n = if tb { br } else { bc };
    let mut out = Tensor::zeros([bs, cs, m, n]);
    for i in 0..bs * cs {
        let mut am = MatRef::new(a.data(), i * ar * ac, ac, 1);
        if ta {
            am = am.t();
        }
        let mut bm = MatRef::new(b.data(), i * br * bc, bc, 1);
        if tb {
            bm = bm.t();
        }
        T::gemm(m, k, n, T::one(), am, bm, T::zero(), MatMut::new(out.data_mut(), i * m * n, n, 1));
    }
    out
}

pub(super) fn backward<T: Real>(a: &Tensor<T>, b: &Tensor<T>, dy: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    (bmm(dy, false, b, true), bmm(a, true, dy, false))
}

pub(super) fn transpose_last<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let [b, c, h, w] = x.shape();
    let mut out = Tensor::zeros([b, c, w, h]);
    for i in 0..b * c {
        let src = &x.data()[i * h * w..][..h * w];
        let dst = &mut out.data_mut()[i * h * w..][..h * w];
        for r in 0..h {
            for col in 0..w {
                dst[col * h + r] = src[r * w + col];
            }
        }
    }
    out
}

impl<T: Real> Graph<T> {
    /// Batched product over the last two axes.
    pub fn batched_matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa[0] != sb[0] || sa[1] != sb[1] || sa[3] != sb[2] {
            return Err(Error::shape("batched_matmul", format!("{sa:?} x {sb:?}: inner or batch extents disagree")));
        }
        let value = bmm(self.value(a), false, self.value(b), false);
        Ok(self.push(value, Op::BatchedMatmul { a, b }, &[a, b]))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, x: Var) -> Var {
        let value = transpose_last(self.value(x));
        self.push(value, Op::Transpose { x }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Shape) -> Result<Var> {
        if numel(&shape) != numel(&self.shape(x)) {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape(x))));
        }
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(value, Op::Reshape { x }, &[x]))
    }
}
