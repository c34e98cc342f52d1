//! Region bookkeeping: spatial block means, top-k selection, gathering whole
//! regions, and the channel/space to batch rearrangement.

use std::cmp::Ordering;

use super::{Graph, Op, Var};
use crate::error::{Error, Result};
use crate::tensor::{IndexTensor, Real, Shape, Tensor};

/// Non-overlapping grid of `rows x cols` spatial blocks, enumerated row-major.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Grid {
    pub rows: usize,
    pub cols: usize,
}

impl Grid {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    pub fn regions(&self) -> usize {
        self.rows * self.cols
    }

    pub(crate) fn check(&self, op: &'static str, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.rows == 0 || self.cols == 0 || h % self.rows != 0 || w % self.cols != 0 {
            return Err(Error::shape(op, format!("{h}x{w} is not divisible by a {}x{} region grid", self.rows, self.cols)));
        }
        Ok((h / self.rows, w / self.cols))
    }
}

fn region_mean_kernel<T: Real>(x: &Tensor<T>, grid: Grid) -> Result<Tensor<T>> {
    let [n, c, h, w] = x.shape();
    let (bh, bw) = grid.check("region_mean", h, w)?;
    let inv = T::one() / T::from_usize(bh * bw).unwrap();
    let mut out = Tensor::zeros([n, c, grid.rows, grid.cols]);
    for p in 0..n * c {
        let plane = &x.data()[p * h * w..][..h * w];
        for r in 0..grid.rows {
            for q in 0..grid.cols {
                let mut s = T::zero();
                for y in r * bh..(r + 1) * bh {
                    s = s + plane[y * w + q * bw..y * w + (q + 1) * bw].iter().copied().sum::<T>();
                }
                out.data_mut()[(p * grid.rows + r) * grid.cols + q] = s * inv;
            }
        }
    }
    Ok(out)
}

pub(super) fn region_mean_backward<T: Real>(shape: Shape, grid: Grid, dy: &Tensor<T>) -> Tensor<T> {
    let [_, _, h, w] = shape;
    let (bh, bw) = (h / grid.rows, w / grid.cols);
    let inv = T::one() / T::from_usize(bh * bw).unwrap();
    Tensor::from_fn(shape, |i| {
        let x = i % w;
        let y = (i / w) % h;
        let p = i / (h * w);
        dy.data()[(p * grid.rows + y / bh) * grid.cols + x / bw] * inv
    })
}

/// Indices of the `k` largest entries of every last-axis row, ordered by
/// descending score; equal scores resolve to the lower index first.
pub fn topk_lastdim<T: Real>(scores: &Tensor<T>, k: usize) -> Result<IndexTensor> {
    let [n, c, h, w] = scores.shape();
    if k == 0 || k > w {
        return Err(Error::invalid("topk_lastdim", format!("k={k} outside 1..={w}")));
    }
    let mut data = Vec::with_capacity(n * c * h * k);
    let mut order: Vec<usize> = Vec::with_capacity(w);
    for row in scores.data().chunks(w) {
        order.clear();
        order.extend(0..w);
        order.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(Ordering::Equal).then(a.cmp(&b)));
        data.extend_from_slice(&order[..k]);
    }
    Ok(IndexTensor { shape: [n, c, h, k], data })
}

pub(super) fn gather_backward<T: Real>(shape: Shape, index: &[usize], dy: &Tensor<T>) -> Tensor<T> {
    let block = shape[1] * shape[2] * shape[3];
    let mut dx = Tensor::zeros(shape);
    for (slot, &src) in index.iter().enumerate() {
        let from = &dy.data()[slot * block..][..block];
        for (d, &g) in dx.data_mut()[src * block..][..block].iter_mut().zip(from) {
            *d = *d + g;
        }
    }
    dx
}

pub(super) fn split_batch<T: Real>(dy: &Tensor<T>, shapes: &[Shape]) -> Vec<Tensor<T>> {
    let mut offset = 0;
    shapes
        .iter()
        .map(|s| {
            let len: usize = s.iter().product();
            let t = Tensor::from_vec(*s, dy.data()[offset..offset + len].to_vec()).expect("split sizes");
            offset += len;
            t
        })
        .collect()
}

/// `(n, groups * c, H, W) -> (n * groups * regions, c, H / rows, W / cols)`.
pub(super) fn to_batch_kernel<T: Real>(x: &Tensor<T>, groups: usize, grid: Grid) -> Tensor<T> {
    let [n, gc, h, w] = x.shape();
    let c = gc / groups;
    let (bh, bw) = (h / grid.rows, w / grid.cols);
    let regions = grid.regions();
    let mut out = Tensor::zeros([n * groups * regions, c, bh, bw]);
    let dst = out.data_mut();
    let mut o = 0;
    for img in 0..n {
        for g in 0..groups {
            for r in 0..regions {
                let (y0, x0) = ((r / grid.cols) * bh, (r % grid.cols) * bw);
                for ch in 0..c {
                    let plane = &x.data()[(img * gc + g * c + ch) * h * w..][..h * w];
                    for y in 0..bh {
                        dst[o..o + bw].copy_from_slice(&plane[(y0 + y) * w + x0..][..bw]);
                        o += bw;
                    }
                }
            }
        }
    }
    out
}

/// Exact inverse of [`to_batch_kernel`].
pub(super) fn from_batch_kernel<T: Real>(x: &Tensor<T>, groups: usize, grid: Grid) -> Tensor<T> {
    let [b, c, bh, bw] = x.shape();
    let regions = grid.regions();
    let n = b / (groups * regions);
    let (h, w) = (bh * grid.rows, bw * grid.cols);
    let gc = groups * c;
    let mut out = Tensor::zeros([n, gc, h, w]);
    let mut o = 0;
    for img in 0..n {
        for g in 0..groups {
            for r in 0..regions {
                let (y0, x0) = ((r / grid.cols) * bh, (r % grid.cols) * bw);
                for ch in 0..c {
                    let base = (img * gc + g * c + ch) * h * w;
                    for y in 0..bh {
                        let start = base + (y0 + y) * w + x0;
                        out.data_mut()[start..start + bw].copy_from_slice(&x.data()[o..o + bw]);
                        o += bw;
                    }
                }
            }
        }
    }
    out
}

pub(super) fn crop_backward<T: Real>(shape: Shape, top: usize, left: usize, dy: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = shape;
    let [_, _, oh, ow] = dy.shape();
    let mut dx = Tensor::zeros(shape);
    for p in 0..n * c {
        for y in 0..oh {
            let dst = p * h * w + (top + y) * w + left;
            dx.data_mut()[dst..dst + ow].copy_from_slice(&dy.data()[(p * oh + y) * ow..][..ow]);
        }
    }
    dx
}

impl<T: Real> Graph<T> {
    /// Arithmetic mean of every grid block: `(n, c, H, W) -> (n, c, rows, cols)`.
    pub fn region_mean(&mut self, x: Var, grid: Grid) -> Result<Var> {
        let value = region_mean_kernel(self.value(x), grid)?;
        Ok(self.push(value, Op::RegionMean { x, grid }, &[x]))
    }

    /// Select whole batch entries of a region-major tensor, in index order.
    /// Repeated indices duplicate the entry; gradients scatter back additively.
    pub fn gather_regions(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        let [b, c, h, w] = self.shape(x);
        if let Some(&bad) = index.iter().find(|&&i| i >= b) {
            return Err(Error::invalid("gather_regions", format!("index {bad} out of range for {b} regions")));
        }
        let block = c * h * w;
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(index.len() * block);
        for &i in index {
            data.extend_from_slice(&src[i * block..(i + 1) * block]);
        }
        let value = Tensor::from_vec([index.len(), c, h, w], data)?;
        Ok(self.push(value, Op::Gather { x, index: index.to_vec() }, &[x]))
    }

    /// Stack tensors of equal per-entry shape along the batch axis.
    pub fn concat_batch(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat_batch", "no inputs"))?;
        let [_, c, h, w] = self.shape(first);
        let mut batch = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s[1..] != [c, h, w] {
                return Err(Error::shape("concat_batch", format!("{s:?} vs [_, {c}, {h}, {w}]")));
            }
            batch += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::from_vec([batch, c, h, w], data)?;
        Ok(self.push(value, Op::ConcatBatch { parts: parts.to_vec() }, parts))
    }

    /// Move colour groups and spatial blocks into the batch axis:
    /// `(n, groups * c, H, W) -> (n * groups * regions, c, H / rows, W / cols)`,
    /// batch entry `(img * groups + group) * regions + region`.
    pub fn to_batch(&mut self, x: Var, groups: usize, grid: Grid) -> Result<Var> {
        let [_, gc, h, w] = self.shape(x);
        if groups == 0 || gc % groups != 0 {
            return Err(Error::shape("to_batch", format!("{gc} channels do not split into {groups} groups")));
        }
        grid.check("to_batch", h, w)?;
        let value = to_batch_kernel(self.value(x), groups, grid);
        Ok(self.push(value, Op::ToBatch { x, groups, grid }, &[x]))
    }

    /// Inverse of [`Graph::to_batch`].
    pub fn from_batch(&mut self, x: Var, groups: usize, grid: Grid) -> Result<Var> {
        let b = self.shape(x)[0];
        if groups == 0 || grid.regions() == 0 || b % (groups * grid.regions()) != 0 {
            return Err(Error::shape("from_batch", format!("batch {b} is not a multiple of {groups} groups x {} regions", grid.regions())));
        }
        let value = from_batch_kernel(self.value(x), groups, grid);
        Ok(self.push(value, Op::FromBatch { x, groups, grid }, &[x]))
    }

    /// Spatial window `[top, top + h) x [left, left + w)`.
    pub fn crop(&mut self, x: Var, top: usize, left: usize, h: usize, w: usize) -> Result<Var> {
        let [n, c, ih, iw] = self.shape(x);
        if top + h > ih || left + w > iw {
            return Err(Error::shape("crop", format!("window {h}x{w} at ({top},{left}) exceeds {ih}x{iw}")));
        }
        let src = self.value(x);
        let mut value = Tensor::zeros([n, c, h, w]);
        for p in 0..n * c {
            for y in 0..h {
                let s = p * ih * iw + (top + y) * iw + left;
                value.data_mut()[(p * h + y) * w..][..w].copy_from_slice(&src.data()[s..s + w]);
            }
        }
        Ok(self.push(value, Op::Crop { x, top, left }, &[x]))
    }
}
