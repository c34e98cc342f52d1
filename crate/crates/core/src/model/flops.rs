//! Analytic multiply-accumulate counts.
//!
//! Layer MACs follow the usual profiler convention: a convolution costs one
//! MAC per weight per output pixel and a batch-norm one per element. The
//! parameter-free products inside attention are tallied separately.

use super::{LsNetConfig, COLORS};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlopLedger {
    /// Per-layer MACs, in forward order.
    pub layers: Vec<(String, u64)>,
    /// Region affinity and routed attention products.
    pub attention: u64,
}

impl FlopLedger {
    pub fn layer_total(&self) -> u64 {
        self.layers.iter().map(|(_, m)| m).sum()
    }

    pub fn total(&self) -> u64 {
        self.layer_total() + self.attention
    }
}

pub fn flop_count(config: &LsNetConfig, h: usize, w: usize) -> FlopLedger {
    let (ph, pw) = config.padded_size(h, w);
    let px = (ph * pw) as u64;
    let l = config.lift_channels as u64;
    let c = COLORS as u64;
    let regions = config.grid.regions() as u64;
    let mut layers = vec![("pos_conv".to_string(), px * c * c * 9)];
    let mut attention = 0;
    for branch in config.branches() {
        let mut add = |name: &str, macs: u64| layers.push((format!("{branch}.{name}"), macs));
        add("lift", px * c * l);
        if config.ablation.uses_attention() {
            add("qkv", 3 * c * px * l * l);
            add("qkv_bn", 3 * c * px * l);
            add("proj", c * px * l * l);
            add("merge", 2 * c * px * l * l);
            let keys = config.topk as u64 * px / regions;
            attention += c * regions * regions * l + 2 * c * px * keys * l;
        } else {
            add("merge", c * px * l * l);
        }
        add("head", c * px * l);
    }
    FlopLedger { layers, attention }
}
