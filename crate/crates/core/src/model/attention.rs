//! Region routing and routed attention on region-major features.
//!
//! Features reach this module already rearranged so that every batch entry is
//! one spatial region of one colour map: `(groups * regions, c, h, w)`.

use crate::autodiff::{topk_lastdim, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{IndexTensor, Real, Tensor};

/// Coarse routing decision for every region.
#[derive(Clone, Debug, PartialEq)]
pub struct RoutingIndex<T> {
    /// Region-to-region affinity of mean query and mean key, `(groups, 1, R, R)`.
    pub affinity: Tensor<T>,
    /// The `k` best regions per query region, `(groups, 1, R, k)`.
    pub index: IndexTensor,
}

impl<T> RoutingIndex<T> {
    pub fn groups(&self) -> usize {
        self.index.shape[0]
    }

    pub fn regions(&self) -> usize {
        self.index.shape[2]
    }

    pub fn topk(&self) -> usize {
        self.index.shape[3]
    }

    /// Routed source regions of query region `region` in `group`.
    pub fn sources(&self, group: usize, region: usize) -> &[usize] {
        self.index.row(group * self.regions() + region)
    }
}

/// Per-entry spatial mean: one `c`-vector per region.
fn entry_means<T: Real>(x: &Tensor<T>) -> Vec<T> {
    let [b, c, h, w] = x.shape();
    let plane = h * w;
    let inv = T::one() / T::from_usize(plane.max(1)).unwrap();
    (0..b * c).map(|p| x.data()[p * plane..(p + 1) * plane].iter().copied().sum::<T>() * inv).collect()
}

/// Mean-pool queries and keys per region, score every region pair by the dot
/// product of the pooled vectors, and keep the `topk` best key regions per
/// query region (ties to the lower index).
pub fn region_route<T: Real>(q: &Tensor<T>, k: &Tensor<T>, regions: usize, topk: usize) -> Result<RoutingIndex<T>> {
    let [b, c, _, _] = q.shape();
    if q.shape() != k.shape() {
        return Err(Error::shape("region_route", format!("q {:?} vs k {:?}", q.shape(), k.shape())));
    }
    if regions == 0 || b % regions != 0 {
        return Err(Error::shape("region_route", format!("batch {b} is not a multiple of {regions} regions")));
    }
    if topk == 0 || topk > regions {
        return Err(Error::invalid("region_route", format!("k={topk} outside 1..={regions}")));
    }
    let groups = b / regions;
    let (qm, km) = (entry_means(q), entry_means(k));
    let affinity = Tensor::from_fn([groups, 1, regions, regions], |i| {
        let j = i % regions;
        let r = (i / regions) % regions;
        let g = i / (regions * regions);
        let qa = &qm[(g * regions + r) * c..][..c];
        let ka = &km[(g * regions + j) * c..][..c];
        qa.iter().zip(ka).map(|(&a, &b)| a * b).sum()
    });
    let index = topk_lastdim(&affinity, topk)?;
    Ok(RoutingIndex { affinity, index })
}

impl<T: Real> Graph<T> {
    /// Reference formulation of routed attention built only from the generic
    /// primitives (gather, batched matmul, softmax). Numerically equivalent to
    /// [`Graph::fine_attention`] but materialises every probability matrix.
    pub fn fine_attention_composed(&mut self, q: Var, k: Var, v: Var, routing: &IndexTensor) -> Result<Var> {
        let [b, c, h, w] = self.shape(q);
        crate::autodiff::validate_routing(self.shape(q), routing)?;
        let [groups, _, regions, topk] = routing.shape;
        let tokens = h * w;
        let scale = T::one() / T::from_usize(c).unwrap().sqrt();
        let mut outs = Vec::with_capacity(b);
        for g in 0..groups {
            for r in 0..regions {
                let src: Vec<usize> = routing.row(g * regions + r).iter().map(|s| g * regions + s).collect();
                let qr = self.gather_regions(q, &[g * regions + r])?;
                let qr = self.reshape(qr, [1, 1, c, tokens])?;
                let qr = self.transpose(qr);

                let kg = self.gather_regions(k, &src)?;
                let kg = self.reshape(kg, [topk, 1, c, tokens])?;
                let kg = self.transpose(kg);
                let kg = self.reshape(kg, [1, 1, topk * tokens, c])?;
                let kt = self.transpose(kg);

                let vg = self.gather_regions(v, &src)?;
                let vg = self.reshape(vg, [topk, 1, c, tokens])?;
                let vg = self.transpose(vg);
                let vg = self.reshape(vg, [1, 1, topk * tokens, c])?;

                let logits = self.batched_matmul(qr, kt)?;
                let logits = self.scale(logits, scale);
                let probs = self.softmax_lastdim(logits);
                let o = self.batched_matmul(probs, vg)?;
                let o = self.transpose(o);
                outs.push(self.reshape(o, [1, c, h, w])?);
            }
        }
        self.concat_batch(&outs)
    }
}
