//! Grouped 2-D convolution with "same" zero padding, lowered to GEMM through
//! im2col. Pointwise kernels skip the lowering and multiply the input planes
//! directly.

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{MatMut, MatRef, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub groups: usize,
    pub kernel: usize,
}

fn validate<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, groups: usize) -> Result<ConvSpec> {
    let [_, cin, _, _] = x.shape();
    let [cout, cin_g, kh, kw] = w.shape();
    if groups == 0 || cin % groups != 0 || cout % groups != 0 {
        return Err(Error::shape("conv2d", format!("{groups} groups do not divide in={cin} out={cout} channels")));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::shape("conv2d", format!("kernel must be square and odd, got {kh}x{kw}")));
    }
    if cin_g != cin / groups {
        return Err(Error::shape(
            "conv2d",
            format!("weight expects {cin_g} input channels per group, input provides {} ({cin} over {groups} groups)", cin / groups),
        ));
    }
    if let Some(b) = b {
        if b.len() != cout {
            return Err(Error::shape("conv2d", format!("bias has {} entries for {cout} output channels", b.len())));
        }
    }
    Ok(ConvSpec { groups, kernel: kh })
}

/// Unfold one group of one image into a `(cin_g * k * k) x (h * w)` matrix.
fn im2col<T: Real>(x: &[T], cin_g: usize, h: usize, w: usize, k: usize, cols: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin_g {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &mut cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    let dst = &mut row[oy * w..(oy + 1) * w];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = ox as isize + dx;
                        *d = if ix < 0 || ix >= w as isize { T::zero() } else { src[ix as usize] };
                    }
                }
            }
        }
    }
}

/// Inverse scatter of [`im2col`], accumulating into `x`.
fn col2im<T: Real>(cols: &[T], cin_g: usize, h: usize, w: usize, k: usize, x: &mut [T]) {
    let pad = (k / 2) as isize;
    let hw = h * w;
    for c in 0..cin_g {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..k {
            for kx in 0..k {
                let row = &cols[((c * k + ky) * k + kx) * hw..][..hw];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                for oy in 0..h {
                    let iy = oy as isize + dy;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..w {
                        let ix = ox as isize + dx;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] = plane[iy as usize * w + ix as usize] + row[oy * w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Plain forward convolution, usable outside a graph.
pub fn conv2d_forward<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>, groups: usize) -> Result<Tensor<T>> {
    let spec = validate(x, w, b, groups)?;
    let [n, cin, h, wd] = x.shape();
    let cout = w.shape()[0];
    let (cin_g, cout_g, k) = (cin / groups, cout / groups, spec.kernel);
    let hw = h * wd;
    let kdim = cin_g * k * k;

    let mut out = Tensor::zeros([n, cout, h, wd]);
    if let Some(b) = b {
        for (plane, &bias) in out.data_mut().chunks_mut(hw).zip(b.data().iter().cycle()) {
            plane.fill(bias);
        }
    }
    let beta = if b.is_some() { T::one() } else { T::zero() };
    let mut cols = if k > 1 { vec![T::zero(); kdim * hw] } else { Vec::new() };
    for img in 0..n {
        for g in 0..groups {
            let x_off = (img * cin + g * cin_g) * hw;
            let y_off = (img * cout + g * cout_g) * hw;
            let wmat = MatRef::new(w.data(), g * cout_g * kdim, kdim, 1);
            let xmat = if k == 1 {
                MatRef::new(x.data(), x_off, hw, 1)
            } else {
                im2col(&x.data()[x_off..x_off + cin_g * hw], cin_g, h, wd, k, &mut cols);
                MatRef::new(&cols, 0, hw, 1)
            };
            T::gemm(cout_g, kdim, hw, T::one(), wmat, xmat, beta, MatMut::new(out.data_mut(), y_off, hw, 1));
        }
    }
    Ok(out)
}

/// Gradients for (x, w, b), each computed only when requested.
pub(super) fn backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    spec: ConvSpec,
    want_x: bool,
    want_w: bool,
    want_b: bool,
) -> [Option<Tensor<T>>; 3] {
    let [n, cin, h, wd] = x.shape();
    let cout = w.shape()[0];
    let ConvSpec { groups, kernel: k } = spec;
    let (cin_g, cout_g) = (cin / groups, cout / groups);
    let hw = h * wd;
    let kdim = cin_g * k * k;

    let mut dx = want_x.then(|| Tensor::zeros(x.shape()));
    let mut dw = want_w.then(|| Tensor::zeros(w.shape()));
    let db = want_b.then(|| {
        let mut db = Tensor::zeros([cout, 1, 1, 1]);
        for (i, plane) in dy.data().chunks(hw).enumerate() {
            let c = i % cout;
            db.data_mut()[c] = db.data()[c] + plane.iter().copied().sum::<T>();
        }
        db
    });

    let mut cols = if k > 1 { vec![T::zero(); kdim * hw] } else { Vec::new() };
    let mut dcols = if k > 1 && want_x { vec![T::zero(); kdim * hw] } else { Vec::new() };
    for img in 0..n {
        for g in 0..groups {
            let x_off = (img * cin + g * cin_g) * hw;
            let y_off = (img * cout + g * cout_g) * hw;
            let dymat = MatRef::new(dy.data(), y_off, hw, 1);
            let wmat = MatRef::new(w.data(), g * cout_g * kdim, kdim, 1);
            if let Some(dw) = dw.as_mut() {
                let xmat = if k == 1 {
                    MatRef::new(x.data(), x_off, hw, 1)
                } else {
                    im2col(&x.data()[x_off..x_off + cin_g * hw], cin_g, h, wd, k, &mut cols);
                    MatRef::new(&cols, 0, hw, 1)
                };
                // dW_g += dY_g * X_g^T
                T::gemm(cout_g, hw, kdim, T::one(), dymat, xmat.t(), T::one(), MatMut::new(dw.data_mut(), g * cout_g * kdim, kdim, 1));
            }
            if let Some(dx) = dx.as_mut() {
                if k == 1 {
                    T::gemm(cin_g, cout_g, hw, T::one(), wmat.t(), dymat, T::one(), MatMut::new(dx.data_mut(), x_off, hw, 1));
                } else {
                    T::gemm(kdim, cout_g, hw, T::one(), wmat.t(), dymat, T::zero(), MatMut::new(&mut dcols, 0, hw, 1));
                    col2im(&dcols, cin_g, h, wd, k, &mut dx.data_mut()[x_off..x_off + cin_g * hw]);
                }
            }
        }
    }
    [dx, dw, db]
}

impl<T: Real> Graph<T> {
    /// Grouped convolution with odd square kernel and "same" zero padding.
    /// `w` is `(out, in / groups, k, k)`; `b` holds one entry per output channel.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, groups: usize) -> Result<Var> {
        let value = conv2d_forward(self.value(x), self.value(w), b.map(|b| self.value(b)), groups)?;
        let spec = ConvSpec { groups, kernel: self.shape(w)[2] };
        let mut inputs = vec![x, w];
        inputs.extend(b);
        Ok(self.push(value, Op::Conv2d { x, w, b, spec }, &inputs))
    }
}
