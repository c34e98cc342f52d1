//! Shared fixtures for the criterion benchmarks under `benches/`.

use lsnet_core::autodiff::Grid;
use lsnet_core::model::{LsNet, LsNetConfig};
use lsnet_core::physics::synthetic_clean;
use lsnet_core::tensor::Tensor;
use lsnet_core::Image;

/// Deterministic pseudo-random tensor in `[-1, 1)` (no RNG dependency).
pub fn tensor(shape: [usize; 4], seed: u64) -> Tensor<f32> {
    let mut s = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape, |_| {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((s >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}

pub fn model(grid: usize, topk: usize) -> LsNet<f32> {
    LsNet::new(LsNetConfig { grid: Grid::new(grid, grid), topk, ..Default::default() }, 0).expect("valid config")
}

pub fn scene(size: usize) -> Image {
    synthetic_clean(size, size, 1)
}
