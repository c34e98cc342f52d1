//! Routed attention against brute-force oracles.

mod common;

use lsnet_core::autodiff::{Graph, Grid};
use lsnet_core::model::region_route;
use lsnet_core::tensor::{IndexTensor, Real, Tensor};

fn image(c: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    common::random_tensor([1, c, h, w], seed)
}

/// Rearrange, attend with the routed kernel, rearrange back.
fn routed<T: Real>(q: &Tensor<f64>, k: &Tensor<f64>, v: &Tensor<f64>, grid: Grid, routing: Option<&IndexTensor>, composed: bool) -> Tensor<f64> {
    let mut g = Graph::<T>::new();
    let [q, k, v] = [q, k, v].map(|t| g.constant(Tensor::cast(t)));
    let [qb, kb, vb] = [q, k, v].map(|x| g.to_batch(x, 1, grid).unwrap());
    let r = grid.regions();
    let full = IndexTensor { shape: [1, 1, r, r], data: (0..r).flat_map(|_| (0..r).rev()).collect() };
    let routing = routing.unwrap_or(&full);
    let y = if composed { g.fine_attention_composed(qb, kb, vb, routing) } else { g.fine_attention(qb, kb, vb, routing) }.unwrap();
    let y = g.from_batch(y, 1, grid).unwrap();
    Tensor::cast(g.value(y))
}

#[test]
fn all_regions_routed_equals_dense_attention() {
    for (seed, c, grid) in [(1, 4, Grid::new(2, 2)), (2, 3, Grid::new(4, 4)), (3, 8, Grid::new(2, 4))] {
        let (q, k, v) = (image(c, 16, 16, seed), image(c, 16, 16, seed + 10), image(c, 16, 16, seed + 20));
        let oracle = common::dense_attention(&q, &k, &v);
        let fused = routed::<f64>(&q, &k, &v, grid, None, false);
        let composed = routed::<f64>(&q, &k, &v, grid, None, true);
        let fused32 = routed::<f32>(&q, &k, &v, grid, None, false);
        assert!(fused.max_abs_diff(&oracle) < 1e-12, "{:e}", fused.max_abs_diff(&oracle));
        assert!(composed.max_abs_diff(&oracle) < 1e-12);
        assert!(fused32.max_abs_diff(&oracle) < 1e-6, "f32 {:e}", fused32.max_abs_diff(&oracle));
    }
}

#[test]
fn routed_subset_matches_masked_oracle() {
    let grid = Grid::new(2, 2);
    let (q, k, v) = (image(4, 8, 8, 5), image(4, 8, 8, 6), image(4, 8, 8, 7));
    let mut g = Graph::<f64>::new();
    let [qv, kv] = [&q, &k].map(|t| g.constant(t.clone()));
    let [qb, kb] = [qv, kv].map(|x| g.to_batch(x, 1, grid).unwrap());
    let route = region_route(g.value(qb), g.value(kb), 4, 2).unwrap();
    let fused = routed::<f64>(&q, &k, &v, grid, Some(&route.index), false);
    let composed = routed::<f64>(&q, &k, &v, grid, Some(&route.index), true);
    assert!(fused.max_abs_diff(&composed) < 1e-12);

    // Oracle: dense attention restricted to pixels inside the routed regions.
    let n = 64;
    let region_of = |p: usize| (p / 8 / 4) * 2 + (p % 8) / 4;
    for i in 0..n {
        let allowed = route.sources(0, region_of(i));
        let keys: Vec<usize> = (0..n).filter(|j| allowed.contains(&region_of(*j))).collect();
        let logits: Vec<f64> = keys.iter().map(|&j| (0..4).map(|c| q.data()[c * n + i] * k.data()[c * n + j]).sum::<f64>() / 2.0).collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
        for c in 0..4 {
            let want: f64 = keys.iter().zip(&logits).map(|(&j, l)| (l - m).exp() / z * v.data()[c * n + j]).sum();
            assert!((fused.data()[c * n + i] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn routing_picks_highest_affinity() {
    let grid = Grid::new(2, 2);
    let (q, k) = (image(3, 8, 8, 11), image(3, 8, 8, 12));
    let mut g = Graph::<f64>::new();
    let [qv, kv] = [&q, &k].map(|t| g.constant(t.clone()));
    let [qb, kb] = [qv, kv].map(|x| g.to_batch(x, 1, grid).unwrap());
    let route = region_route(g.value(qb), g.value(kb), 4, 3).unwrap();
    for r in 0..4 {
        let row: Vec<f64> = (0..4).map(|s| route.affinity.data()[r * 4 + s]).collect();
        let picked = route.sources(0, r);
        let worst_picked = picked.iter().map(|&s| row[s]).fold(f64::INFINITY, f64::min);
        let best_left = (0..4).filter(|s| !picked.contains(s)).map(|s| row[s]).fold(f64::NEG_INFINITY, f64::max);
        assert!(worst_picked >= best_left);
    }
}
