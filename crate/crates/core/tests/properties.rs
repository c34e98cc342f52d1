//! Property tests of engine, model, physics, metric and pipeline invariants.

use lsnet_core::autodiff::{conv2d_forward, BnMode, Graph, Grid};
use lsnet_core::metrics::{psnr, ssim, uiqm_components, MetricsConfig};
use lsnet_core::model::{Ablation, LsNet, LsNetConfig};
use lsnet_core::physics::{dark_channel, dcp_recover, degrade, synthetic_clean, synthetic_depth, DepthKind, SceneModel};
use lsnet_core::pipeline::data::epoch_batches;
use lsnet_core::pipeline::hist::histogram;
use lsnet_core::pipeline::Checkpoint;
use lsnet_core::tensor::Tensor;
use lsnet_core::Image;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tensor(shape: [usize; 4], seed: u64, scale: f64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-scale..scale))
}

fn small_model<T: lsnet_core::Real>(seed: u64, ablation: Ablation) -> LsNet<T> {
    let cfg = LsNetConfig { lift_channels: 4, grid: Grid::new(2, 2), ablation, ..Default::default() };
    LsNet::new(cfg, seed).unwrap()
}

fn input<T: lsnet_core::Real>(n: usize, h: usize, w: usize, seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn([n, 3, h, w], |_| T::from_f64(rng.random_range(0.0..1.0)).unwrap())
}

fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, groups: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = x.shape();
    let [cout, cg, k, _] = w.shape();
    let pad = (k / 2) as isize;
    let og = cout / groups;
    let mut out = Tensor::zeros([n, cout, h, wd]);
    for b in 0..n {
        for o in 0..cout {
            let g = o / og;
            for y in 0..h {
                for xx in 0..wd {
                    let mut s = 0.0;
                    for ci in 0..cg {
                        for ky in 0..k {
                            for kx in 0..k {
                                let (sy, sx) = (y as isize + ky as isize - pad, xx as isize + kx as isize - pad);
                                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < wd {
                                    s += w.at(o, ci, ky, kx) * x.at(b, g * cg + ci, sy as usize, sx as usize);
                                }
                            }
                        }
                    }
                    let i = out.index(b, o, y, xx);
                    out.data_mut()[i] = s;
                }
            }
        }
        let _ = cin;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn conv_matches_naive_loops(seed in 0u64..1000, n in 1usize..=4, g in 1usize..=2, cg in 1usize..=4, og in 1usize..=4, h in 1usize..=16, w in 1usize..=16, k in prop::sample::select(vec![1usize, 3])) {
        let x = tensor([n, g * cg, h, w], seed, 1.0);
        let wt = tensor([g * og, cg, k, k], seed + 1, 1.0);
        let got = conv2d_forward(&x, &wt, None, g).unwrap();
        prop_assert!(got.max_abs_diff(&naive_conv(&x, &wt, g)) < 1e-6);
    }

    #[test]
    fn bmm_matches_naive_loops(seed in 0u64..1000, b in 1usize..=4, c in 1usize..=8, m in 1usize..=16, k in 1usize..=16, n in 1usize..=16) {
        let a = tensor([b, c, m, k], seed, 1.0);
        let bb = tensor([b, c, k, n], seed + 7, 1.0);
        let mut g = Graph::new();
        let (av, bv) = (g.constant(a.clone()), g.constant(bb.clone()));
        let y = g.batched_matmul(av, bv).unwrap();
        let got = g.value(y);
        for i in 0..b { for j in 0..c { for r in 0..m { for q in 0..n {
            let want: f64 = (0..k).map(|t| a.at(i, j, r, t) * bb.at(i, j, t, q)).sum();
            prop_assert!((got.at(i, j, r, q) - want).abs() < 1e-6);
        }}}}
    }

    #[test]
    fn softmax_rows_sum_to_one(seed in 0u64..1000, len in 1usize..40, big in any::<bool>()) {
        let scale = if big { 1e4 } else { 5.0 };
        let mut g = Graph::<f32>::new();
        let x = g.constant(Tensor::cast(&tensor([2, 1, 3, len], seed, scale)));
        let y = g.softmax_lastdim(x);
        for row in g.value(y).data().chunks(len) {
            prop_assert!((row.iter().map(|v| *v as f64).sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn gather_backward_conserves_mass(seed in 0u64..1000, idx in prop::collection::vec(0usize..5, 1..9)) {
        let mut g = Graph::new();
        let x = g.param(tensor([5, 2, 2, 2], seed, 1.0));
        let y = g.gather_regions(x, &idx).unwrap();
        let w = g.constant(tensor([idx.len(), 2, 2, 2], seed + 3, 1.0));
        // incoming gradient equals w
        let l = g.sub(y, w).unwrap();
        let l = g.l1_loss(l, w).unwrap();
        let grads = g.backward(l).unwrap();
        let _ = grads;
        let mut g2 = Graph::new();
        let x2 = g2.param(tensor([5, 2, 2, 2], seed, 1.0));
        let y2 = g2.gather_regions(x2, &idx).unwrap();
        let s = g2.sum(y2);
        let grads = g2.backward(s).unwrap();
        prop_assert_eq!(grads.get(x2).unwrap().sum(), (idx.len() * 8) as f64);
    }

    #[test]
    fn to_from_batch_round_trip(seed in 0u64..1000, n in 1usize..3, groups in 1usize..4, c in 1usize..3, rows in 1usize..4, cols in 1usize..4, bh in 1usize..4, bw in 1usize..4) {
        let grid = Grid::new(rows, cols);
        let x = tensor([n, groups * c, rows * bh, cols * bw], seed, 1.0);
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let b = g.to_batch(v, groups, grid).unwrap();
        prop_assert_eq!(g.shape(b), [n * groups * rows * cols, c, bh, bw]);
        let back = g.from_batch(b, groups, grid).unwrap();
        prop_assert_eq!(g.value(back), &x);
    }

    #[test]
    fn residual_identity(seed in 0u64..10_000, h in 2usize..13, w in 2usize..13, n in 1usize..3, topk in 1usize..=4) {
        let mut m: LsNet<f32> = small_model(seed, Ablation::FULL);
        m.config.topk = topk;
        let x = input::<f32>(n, h, w, seed ^ 0x55);
        for mode in [BnMode::Train, BnMode::Eval] {
            let d = m.run(&x, mode).unwrap();
            for i in 0..x.len() {
                let (ii, dx, ox, j) = (d.input.data()[i], d.dx.data()[i], d.ox.data()[i], d.output.data()[i]);
                prop_assert_eq!(j.to_bits(), ((ii + dx) - ox).to_bits());
            }
        }
    }

    #[test]
    fn batch_permutation_consistency(seed in 0u64..1000) {
        let mut m: LsNet<f64> = small_model(seed, Ablation::FULL);
        let sites: Vec<String> = m.params.norms().iter().map(|(n, _)| n.clone()).collect();
        for site in &sites {
            let st = m.params.norm_mut(site).unwrap();
            st.running_mean.iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
            st.running_var.iter_mut().for_each(|v| *v = 0.7);
        }
        let x = input::<f64>(3, 8, 8, seed);
        let plane = 3 * 64;
        let perm = [2usize, 0, 1];
        let xp = Tensor::from_vec([3, 3, 8, 8], perm.iter().flat_map(|&p| x.data()[p * plane..(p + 1) * plane].to_vec()).collect()).unwrap();
        let a = m.enhance(&x).unwrap().output;
        let b = m.enhance(&xp).unwrap().output;
        for (i, &p) in perm.iter().enumerate() {
            prop_assert_eq!(&b.data()[i * plane..(i + 1) * plane], &a.data()[p * plane..(p + 1) * plane]);
        }
    }

    #[test]
    fn ablated_maps_are_zero(seed in 0u64..1000) {
        let x = input::<f32>(1, 8, 8, seed);
        let mut m: LsNet<f32> = small_model(seed, "wo_dx".parse().unwrap());
        prop_assert!(m.enhance(&x).unwrap().dx.data().iter().all(|v| *v == 0.0));
        let mut m: LsNet<f32> = small_model(seed, "wo_ox".parse().unwrap());
        prop_assert!(m.enhance(&x).unwrap().ox.data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn degradation_components_add_up(seed in 0u64..1000, size in 4usize..24, radial in any::<bool>(), fs in 0.0f64..1.0) {
        let kind = if radial { DepthKind::Radial } else { DepthKind::Ramp };
        let clean = synthetic_clean(size, size, seed);
        let depth = synthetic_depth(size, size, kind, 0.5, 3.0, seed);
        let mut scene = SceneModel::new(clean, depth, [0.8, 0.2, 0.4], [0.1, 0.6, 0.7]).unwrap();
        scene.fs_gain = fs;
        let c = degrade(&scene).unwrap();
        for i in 0..c.total.data().len() {
            let (t, d, f, b) = (c.total.data()[i], c.direct.data()[i], c.forward_scatter.data()[i], c.backscatter.data()[i]);
            prop_assert_eq!(t, d + f + b);
            prop_assert!((t - d - f - b).abs() <= 4.0 * f64::EPSILON);
        }
    }

    #[test]
    fn deeper_water_moves_toward_ambient(seed in 0u64..1000, extra in 0.01f64..2.0) {
        let clean = synthetic_clean(10, 10, seed);
        let depth = synthetic_depth(10, 10, DepthKind::Radial, 0.2, 2.0, seed);
        let deeper: Vec<f64> = depth.iter().map(|d| d + extra).collect();
        let a = [0.1, 0.6, 0.7];
        let near = degrade(&SceneModel::new(clean.clone(), depth, [0.8, 0.2, 0.4], a).unwrap()).unwrap().total;
        let far = degrade(&SceneModel::new(clean, deeper, [0.8, 0.2, 0.4], a).unwrap()).unwrap().total;
        for c in 0..3 {
            for (n, f) in near.channel(c).iter().zip(far.channel(c)) {
                prop_assert!((f - a[c]).abs() <= (n - a[c]).abs() + 1e-15);
            }
        }
    }

    #[test]
    fn exact_inversion_with_true_parameters(seed in 0u64..1000, size in 4usize..20) {
        let clean = synthetic_clean(size, size, seed);
        let depth = synthetic_depth(size, size, DepthKind::Ramp, 0.5, 2.5, seed);
        let scene = SceneModel::new(clean.clone(), depth, [0.8, 0.2, 0.4], [0.1, 0.6, 0.7]).unwrap();
        let t = scene.transmission();
        let raw = degrade(&scene).unwrap().total;
        let back = dcp_recover(&raw, scene.ambient, &t, 1e-12).unwrap();
        prop_assert!(back.data().iter().zip(clean.data()).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn dark_channel_shrinks_with_radius(seed in 0u64..1000, r in 0usize..5) {
        let img = synthetic_clean(17, 13, seed);
        let small = dark_channel(&img, r);
        let large = dark_channel(&img, r + 1);
        prop_assert!(large.iter().zip(&small).all(|(l, s)| l <= s));
    }

    #[test]
    fn metric_symmetries(seed in 0u64..1000, shift in 0.0f64..0.5, gray in -0.3f64..0.3) {
        let cfg = MetricsConfig::default();
        let x = synthetic_clean(24, 24, seed);
        let y = synthetic_clean(24, 24, seed + 1);
        prop_assert_eq!(psnr(&x, &y, 1.0, &cfg).unwrap(), psnr(&y, &x, 1.0, &cfg).unwrap());
        prop_assert_eq!(ssim(&x, &y, 1.0, &cfg).unwrap(), ssim(&y, &x, 1.0, &cfg).unwrap());
        // the luminance term only stays put while local means agree and stay
        // well above the stabilising constant, as for a distorted copy
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noisy = Image::from_planar(24, 24, x.data().iter().map(|v| v + 0.05 * (rng.random::<f64>() - 0.5)).collect()).unwrap();
        let (xs, ns) = (x.map(|v| v + shift), noisy.map(|v| v + shift));
        prop_assert!((ssim(&xs, &ns, 1.0, &cfg).unwrap() - ssim(&x, &noisy, 1.0, &cfg).unwrap()).abs() < 1e-3);
        let xs = x.map(|v| v + gray);
        prop_assert!((uiqm_components(&xs, &cfg).uicm - uiqm_components(&x, &cfg).uicm).abs() < 1e-9);
        let again = uiqm_components(&x, &cfg);
        prop_assert_eq!(again, uiqm_components(&x, &cfg));
    }

    #[test]
    fn psnr_falls_with_noise(seed in 0u64..1000) {
        let cfg = MetricsConfig::default();
        let x = synthetic_clean(16, 16, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise: Vec<f64> = (0..x.data().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scores: Vec<f64> = [0.01, 0.02, 0.05, 0.1, 0.2].iter().map(|&a| {
            let y = Image::from_planar(16, 16, x.data().iter().zip(&noise).map(|(v, n)| v + a * n).collect()).unwrap();
            psnr(&x, &y, 1.0, &cfg).unwrap()
        }).collect();
        prop_assert!(scores.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn histogram_mass_is_pixel_count(seed in 0u64..1000, w in 1usize..30, h in 1usize..30) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = Image::from_fn(w, h, |_, _, _| rng.random_range(-1.5..1.5));
        for (lo, hi) in [(0.0, 1.0), (-1.0, 1.0)] {
            for c in histogram(&img, lo, hi) {
                prop_assert_eq!(c.iter().sum::<u64>(), (w * h) as u64);
            }
        }
    }

    #[test]
    fn epoch_order_is_a_seeded_permutation(len in 1usize..50, bs in 1usize..10, seed in any::<u64>(), epoch in 0u64..100) {
        let a = epoch_batches(len, bs, seed, epoch).unwrap();
        prop_assert_eq!(&a, &epoch_batches(len, bs, seed, epoch).unwrap());
        let mut all = a.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..len).collect::<Vec<_>>());
        prop_assert!(a.iter().rev().skip(1).all(|b| b.len() == bs));
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in 0u64..1000) {
        let model: LsNet<f32> = small_model(seed, Ablation::FULL);
        let c = Checkpoint { model, step: seed, optimizer: None };
        let bytes = c.to_bytes();
        prop_assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    }
}

#[test]
fn every_enabled_group_receives_gradient() {
    for (name, ablation) in Ablation::table() {
        let mut m: LsNet<f64> = small_model(3, ablation);
        let x = input::<f64>(2, 8, 8, 1);
        let y = input::<f64>(2, 8, 8, 2);
        let mut g = Graph::new();
        let fv = m.forward_graph(&mut g, &x, BnMode::Train).unwrap();
        let t = g.constant(y);
        let l = g.l1_loss(fv.output, t).unwrap();
        let grads = g.backward(l).unwrap();
        let mut live = std::collections::BTreeMap::<String, bool>::new();
        for (e, v) in m.params.entries().iter().zip(fv.bound.vars()) {
            let nonzero = grads.get(*v).is_some_and(|t| t.data().iter().any(|x| *x != 0.0));
            *live.entry(e.group.clone()).or_default() |= nonzero;
        }
        for (group, ok) in live {
            assert!(ok, "{name}: group {group} got no gradient");
        }
    }
}

#[test]
fn seeded_forward_backward_is_bit_identical() {
    let run = || {
        let mut m: LsNet<f32> = small_model(21, Ablation::FULL);
        let x = input::<f32>(2, 10, 6, 4);
        let mut g = Graph::new();
        let fv = m.forward_graph(&mut g, &x, BnMode::Train).unwrap();
        let t = g.constant(input::<f32>(2, 10, 6, 5));
        let l = g.l1_loss(fv.output, t).unwrap();
        let grads = g.backward(l).unwrap();
        let gs: Vec<Tensor<f32>> = fv.bound.vars().iter().map(|v| grads.get(*v).unwrap().clone()).collect();
        let mut adam = lsnet_core::optim::AdamState::new(Default::default(), m.params.tensors());
        let refs: Vec<&Tensor<f32>> = gs.iter().collect();
        adam.step(&mut m.params.tensors_mut(), &refs).unwrap();
        (g.value(fv.output).clone(), gs, m.params.tensors().cloned().collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}

#[test]
fn topk_ablation_drops_attention_groups() {
    let full: LsNet<f32> = small_model(0, Ablation::FULL);
    let wo: LsNet<f32> = small_model(0, "wo_topk".parse().unwrap());
    assert!(wo.params.count() < full.params.count());
    let ledger = wo.param_count();
    assert!(ledger.groups.iter().all(|(g, _)| !g.contains("qkv") && !g.contains("proj")));
}
