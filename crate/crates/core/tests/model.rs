//! Model stages against compositions of primitives and closed forms.

mod common;

use lsnet_core::autodiff::{BatchNormState, BnMode, Graph, Grid, Var};
use lsnet_core::model::{region_route, reflect_pad, LsNet, LsNetConfig};
use lsnet_core::tensor::{IndexTensor, Tensor};

fn gelu_tanh(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x)).tanh())
}

fn input(n: usize, h: usize, w: usize, seed: u64) -> Tensor<f64> {
    common::random_tensor([n, 3, h, w], seed).map(|v| 0.5 + 0.5 * v)
}

fn positional(model: &mut LsNet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let fv = model.forward_graph(&mut g, x, BnMode::Eval).unwrap();
    g.value(fv.positional).clone()
}

#[test]
fn positional_maps_zero_identity_and_random() {
    let mut m = LsNet::<f64>::new(LsNetConfig::default(), 1).unwrap();
    m.params.get_mut("pos_conv.bias").unwrap().data_mut().fill(0.0);
    let zero = Tensor::zeros([1, 3, 8, 8]);
    assert!(positional(&mut m, &zero).data().iter().all(|v| *v == 0.0));

    let mut id = Tensor::zeros([3, 3, 3, 3]);
    for c in 0..3 {
        let i = id.index(c, c, 1, 1);
        id.data_mut()[i] = 1.0;
    }
    m.params.assign("pos_conv.weight", id).unwrap();
    let x = input(2, 8, 8, 3);
    let e = positional(&mut m, &x);
    for (a, b) in e.data().iter().zip(x.data()) {
        assert!((a - gelu_tanh(*b)).abs() < 1e-12);
    }

    let mut m = LsNet::<f64>::new(LsNetConfig::default(), 2).unwrap();
    let x = input(1, 6, 10, 4);
    let e = positional(&mut m, &x);
    let w = m.params.get("pos_conv.weight").unwrap().clone();
    let b = m.params.get("pos_conv.bias").unwrap().clone();
    let xp = reflect_pad(&x, 0, 0);
    let (h, wd) = (6usize, 10usize);
    for o in 0..3 {
        for y in 0..h {
            for xx in 0..wd {
                let mut s = b.data()[o];
                for c in 0..3 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (sy, sx) = (y as isize + ky as isize - 1, xx as isize + kx as isize - 1);
                            if (0..h as isize).contains(&sy) && (0..wd as isize).contains(&sx) {
                                s += w.at(o, c, ky, kx) * xp.at(0, c, sy as usize, sx as usize);
                            }
                        }
                    }
                }
                assert!((e.at(0, o, y, xx) - gelu_tanh(s)).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn qkv_with_identity_weights_and_unit_stats_is_gelu() {
    let mut g = Graph::<f64>::new();
    let x = input(4, 2, 2, 9);
    let xv = g.constant(x.clone());
    let mut wid = Tensor::zeros([3, 3, 1, 1]);
    (0..3).for_each(|c| wid.data_mut()[c * 3 + c] = 1.0);
    let w = g.param(wid);
    let b = g.param(Tensor::zeros([3, 1, 1, 1]));
    let gamma = g.param(Tensor::full([3, 1, 1, 1], 1.0));
    let beta = g.param(Tensor::zeros([3, 1, 1, 1]));
    let mut st = BatchNormState::new(3);
    let y = g.conv2d(xv, w, Some(b), 1).unwrap();
    let y = g.batch_norm(y, gamma, beta, &mut st, BnMode::Eval).unwrap();
    let y = g.gelu(y);
    for (a, v) in g.value(y).data().iter().zip(x.data()) {
        assert!((a - gelu_tanh(*v)).abs() < 1e-5);
    }
}

/// The whole forward pass rebuilt from graph primitives and parameter names.
fn manual_forward(m: &mut LsNet<f64>, x: &Tensor<f64>) -> Tensor<f64> {
    let mut g = Graph::new();
    let p = |g: &mut Graph<f64>, m: &LsNet<f64>, n: &str| g.constant(m.params.get(n).unwrap().clone());
    let xv = g.constant(x.clone());
    let (pw, pb) = (p(&mut g, m, "pos_conv.weight"), p(&mut g, m, "pos_conv.bias"));
    let e = g.conv2d(xv, pw, Some(pb), 1).unwrap();
    let e = g.gelu(e);
    let grid = m.config.grid;
    let mut maps: Vec<Var> = Vec::new();
    for br in ["comp", "over"] {
        let n = |s: &str| format!("{br}.{s}");
        let (lw, lb) = (p(&mut g, m, &n("lift.weight")), p(&mut g, m, &n("lift.bias")));
        let lifted = g.conv2d(e, lw, Some(lb), 3).unwrap();
        let lifted = g.gelu(lifted);
        let xb = g.to_batch(lifted, 3, grid).unwrap();
        let mut qkv = Vec::new();
        for which in ["q", "k", "v"] {
            let (w, b) = (p(&mut g, m, &n(&format!("{which}.weight"))), p(&mut g, m, &n(&format!("{which}.bias"))));
            let y = g.conv2d(xb, w, Some(b), 1).unwrap();
            let (ga, be) = (p(&mut g, m, &n(&format!("{which}_bn.gamma"))), p(&mut g, m, &n(&format!("{which}_bn.beta"))));
            let mut st = BatchNormState::new(g.shape(y)[1]);
            let y = g.batch_norm(y, ga, be, &mut st, BnMode::Train).unwrap();
            qkv.push(g.gelu(y));
        }
        let rt = region_route(g.value(qkv[0]), g.value(qkv[1]), grid.regions(), m.config.topk).unwrap();
        let att = g.fine_attention_composed(qkv[0], qkv[1], qkv[2], &rt.index).unwrap();
        let (prw, prb) = (p(&mut g, m, &n("proj.weight")), p(&mut g, m, &n("proj.bias")));
        let att = g.conv2d(att, prw, Some(prb), 1).unwrap();
        let attended = g.from_batch(att, 3, grid).unwrap();
        let (mlw, mb, maw) = (p(&mut g, m, &n("merge.lifted_weight")), p(&mut g, m, &n("merge.bias")), p(&mut g, m, &n("merge.attended_weight")));
        let a = g.conv2d(lifted, mlw, Some(mb), 3).unwrap();
        let b = g.conv2d(attended, maw, None, 3).unwrap();
        let merged = g.add(a, b).unwrap();
        let merged = g.gelu(merged);
        let (hw, hb) = (p(&mut g, m, &n("head.weight")), p(&mut g, m, &n("head.bias")));
        maps.push(g.conv2d(merged, hw, Some(hb), 3).unwrap());
    }
    let j = g.add(xv, maps[0]).unwrap();
    let j = g.sub(j, maps[1]).unwrap();
    g.value(j).clone()
}

#[test]
fn forward_equals_primitive_composition() {
    for (seed, grid) in [(5, Grid::new(2, 2)), (6, Grid::new(4, 2))] {
        let mut m = LsNet::<f64>::new(LsNetConfig { grid, ..Default::default() }, seed).unwrap();
        let x = input(2, 8, 8, seed);
        let want = manual_forward(&mut m, &x);
        let got = m.run(&x, BnMode::Train).unwrap().output;
        assert!(got.max_abs_diff(&want) < 1e-12, "{:e}", got.max_abs_diff(&want));
    }
}

#[test]
fn constant_values_give_constant_output() {
    let mut g = Graph::<f64>::new();
    let q = g.constant(common::random_tensor([4, 3, 2, 2], 1));
    let k = g.constant(common::random_tensor([4, 3, 2, 2], 2));
    let v = g.constant(Tensor::full([4, 3, 2, 2], 0.37));
    let routing = IndexTensor { shape: [1, 1, 4, 2], data: vec![0, 1, 2, 3, 1, 1, 3, 0] };
    let y = g.fine_attention(q, k, v, &routing).unwrap();
    assert!(g.value(y).data().iter().all(|a| (a - 0.37).abs() < 1e-15));
}

#[test]
fn single_region_is_global_attention() {
    let q = common::random_tensor([1, 4, 6, 6], 7);
    let k = common::random_tensor([1, 4, 6, 6], 8);
    let v = common::random_tensor([1, 4, 6, 6], 9);
    let mut g = Graph::<f64>::new();
    let [qv, kv, vv] = [&q, &k, &v].map(|t| g.constant(t.clone()));
    let route = region_route(g.value(qv), g.value(kv), 1, 1).unwrap();
    assert_eq!(route.index.data, vec![0]);
    let y = g.fine_attention(qv, kv, vv, &route.index).unwrap();
    assert!(g.value(y).max_abs_diff(&common::dense_attention(&q, &k, &v)) < 1e-12);
}

#[test]
fn default_layout_sizes() {
    let mut g = Graph::<f32>::new();
    let x = g.constant(Tensor::zeros([2, 48, 8, 8]));
    let b = g.to_batch(x, 3, Grid::new(2, 2)).unwrap();
    assert_eq!(g.shape(b), [2 * 3 * 4, 16, 4, 4]);
}
