//! The enhancement network.
//!
//! An input image `I` is split into two residual maps: a compensation map
//! `dx` that adds back attenuated light and an over-exposure map `ox` that
//! removes scattered light. The output is `J = I + dx - ox`.
//!
//! Each branch lifts every colour channel to a small feature space, runs
//! region-routed attention over it (shared weights across colours), merges
//! the attended and lifted features, and projects back to one channel per
//! colour.

mod attention;
mod flops;
mod params;

pub use attention::{region_route, RoutingIndex};
pub use flops::{flop_count, FlopLedger};
pub use params::{BoundParams, LsNetParams, ParamEntry, ParamLedger};

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{BnMode, Graph, Grid, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Colour groups: one per RGB channel.
pub const COLORS: usize = 3;

/// Components removed for an ablation run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct Ablation {
    /// Drop the identity skip: `J = dx - ox`.
    pub no_x: bool,
    pub no_dx: bool,
    pub no_ox: bool,
    /// Remove routed attention; branches keep only their pointwise path.
    pub no_topk: bool,
}

impl Ablation {
    pub const FULL: Ablation = Ablation { no_x: false, no_dx: false, no_ox: false, no_topk: false };

    /// The five variants of the ablation table, in table order.
    pub fn table() -> [(&'static str, Ablation); 5] {
        [
            ("wo_x", Ablation { no_x: true, ..Self::FULL }),
            ("wo_dx", Ablation { no_dx: true, ..Self::FULL }),
            ("wo_ox", Ablation { no_ox: true, ..Self::FULL }),
            ("wo_topk", Ablation { no_topk: true, ..Self::FULL }),
            ("full", Self::FULL),
        ]
    }

    pub fn uses_attention(&self) -> bool {
        !self.no_topk
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        for (on, name) in [(self.no_x, "wo_x"), (self.no_dx, "wo_dx"), (self.no_ox, "wo_ox"), (self.no_topk, "wo_topk")] {
            if on {
                parts.push(name);
            }
        }
        if parts.is_empty() {
            write!(f, "full")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

impl FromStr for Ablation {
    type Err = Error;

    /// `full`, or `+`-joined names from `wo_x`, `wo_dx`, `wo_ox`, `wo_topk`.
    fn from_str(s: &str) -> Result<Self> {
        let mut a = Ablation::FULL;
        let s = s.trim();
        if s == "full" || s.is_empty() {
            return Ok(a);
        }
        for part in s.split('+') {
            match part.trim() {
                "wo_x" => a.no_x = true,
                "wo_dx" => a.no_dx = true,
                "wo_ox" => a.no_ox = true,
                "wo_topk" => a.no_topk = true,
                other => return Err(Error::Config(format!("unknown ablation `{other}`"))),
            }
        }
        Ok(a)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsNetConfig {
    /// Feature width per colour channel.
    pub lift_channels: usize,
    pub grid: Grid,
    /// Routed regions per query region.
    pub topk: usize,
    pub ablation: Ablation,
    /// Training resolution `(height, width)`.
    pub input_size: (usize, usize),
}

impl Default for LsNetConfig {
    fn default() -> Self {
        Self { lift_channels: 16, grid: Grid::new(2, 2), topk: 2, ablation: Ablation::FULL, input_size: (256, 256) }
    }
}

impl LsNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lift_channels == 0 {
            return Err(Error::Config("lift_channels must be positive".into()));
        }
        let r = self.grid.regions();
        if r == 0 {
            return Err(Error::Config("region grid must be non-empty".into()));
        }
        if self.topk == 0 || self.topk > r {
            return Err(Error::Config(format!("topk={} outside 1..={r}", self.topk)));
        }
        if self.ablation.no_dx && self.ablation.no_ox && self.ablation.no_x {
            return Err(Error::Config("ablation removes every term of the output".into()));
        }
        Ok(())
    }

    /// Names of the branches present, in parameter order.
    pub fn branches(&self) -> Vec<&'static str> {
        let mut b = Vec::new();
        if !self.ablation.no_dx {
            b.push("comp");
        }
        if !self.ablation.no_ox {
            b.push("over");
        }
        b
    }

    /// Padded extent of an `h x w` input: the next multiple of the grid.
    pub fn padded_size(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.grid.rows) * self.grid.rows, w.div_ceil(self.grid.cols) * self.grid.cols)
    }
}

/// Result of one forward pass, batch-shaped `(n, 3, H, W)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Decomposition<T> {
    pub input: Tensor<T>,
    pub dx: Tensor<T>,
    pub ox: Tensor<T>,
    pub output: Tensor<T>,
    /// Routing per branch, in branch order.
    pub routing: Vec<RoutingIndex<T>>,
}

/// Graph handles produced by [`LsNet::forward_graph`].
pub struct ForwardVars<T> {
    pub bound: BoundParams,
    /// Positional maps of the padded input, one channel per colour.
    pub positional: Var,
    pub output: Var,
    pub dx: Option<Var>,
    pub ox: Option<Var>,
    pub routing: Vec<RoutingIndex<T>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LsNet<T> {
    pub config: LsNetConfig,
    pub params: LsNetParams<T>,
}

/// Reflect-pad the bottom and right edges (mirror without repeating the edge).
pub fn reflect_pad<T: Real>(x: &Tensor<T>, ph: usize, pw: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    if h + ph == h && w + pw == w {
        return x.clone();
    }
    let mirror = |i: usize, len: usize| -> usize {
        if len == 1 {
            return 0;
        }
        let period = 2 * (len - 1);
        let m = i % period;
        if m < len {
            m
        } else {
            period - m
        }
    };
    let (oh, ow) = (h + ph, w + pw);
    Tensor::from_fn([n, c, oh, ow], |i| {
        let xx = i % ow;
        let yy = (i / ow) % oh;
        let p = i / (oh * ow);
        x.data()[(p * h + mirror(yy, h)) * w + mirror(xx, w)]
    })
}

impl<T: Real> LsNet<T> {
    pub fn new(config: LsNetConfig, seed: u64) -> Result<Self> {
        let params = LsNetParams::init(&config, seed)?;
        Ok(Self { config, params })
    }

    pub fn param_count(&self) -> ParamLedger {
        self.params.ledger()
    }

    /// Record the forward pass on `graph`. `input` is `(n, 3, H, W)`; any
    /// extent works, the network pads internally to the region grid.
    pub fn forward_graph(&mut self, graph: &mut Graph<T>, input: &Tensor<T>, mode: BnMode) -> Result<ForwardVars<T>> {
        let [_, c, h, w] = input.shape();
        if c != COLORS {
            return Err(Error::shape("lsnet", format!("expected 3 colour channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::shape("lsnet", "empty image"));
        }
        let bound = self.params.bind(graph);
        let (ph, pw) = self.config.padded_size(h, w);
        let x = graph.constant(input.clone());
        let xp = graph.constant(reflect_pad(input, ph - h, pw - w));

        let e = graph.conv2d(xp, bound.var("pos_conv.weight"), Some(bound.var("pos_conv.bias")), 1)?;
        let e = graph.gelu(e);

        let mut maps = Vec::new();
        let mut routing = Vec::new();
        for branch in self.config.branches() {
            let (map, rt) = self.branch(graph, &bound, branch, e, mode)?;
            let map = if (ph, pw) != (h, w) { graph.crop(map, 0, 0, h, w)? } else { map };
            graph.set_label(map, format!("{branch}.map"));
            maps.push(map);
            routing.extend(rt);
        }
        let mut it = maps.into_iter();
        let dx = if self.config.ablation.no_dx { None } else { it.next() };
        let ox = if self.config.ablation.no_ox { None } else { it.next() };

        let mut out = if self.config.ablation.no_x { None } else { Some(x) };
        if let Some(d) = dx {
            out = Some(match out {
                Some(o) => graph.add(o, d)?,
                None => d,
            });
        }
        if let Some(o_map) = ox {
            out = Some(match out {
                Some(o) => graph.sub(o, o_map)?,
                None => graph.scale(o_map, -T::one()),
            });
        }
        let output = out.ok_or_else(|| Error::Config("ablation removes every term of the output".into()))?;
        Ok(ForwardVars { bound, positional: e, output, dx, ox, routing })
    }

    fn branch(&mut self, g: &mut Graph<T>, p: &BoundParams, name: &str, e: Var, mode: BnMode) -> Result<(Var, Option<RoutingIndex<T>>)> {
        let n = |s: &str| p.var(&format!("{name}.{s}"));
        let lifted = g.conv2d(e, n("lift.weight"), Some(n("lift.bias")), COLORS)?;
        let lifted = g.gelu(lifted);
        let mut merged = g.conv2d(lifted, n("merge.lifted_weight"), Some(n("merge.bias")), COLORS)?;
        let mut routing = None;
        if self.config.ablation.uses_attention() {
            let grid = self.config.grid;
            let xb = g.to_batch(lifted, COLORS, grid)?;
            let mut qkv = Vec::with_capacity(3);
            for which in ["q", "k", "v"] {
                let y = g.conv2d(xb, n(&format!("{which}.weight")), Some(n(&format!("{which}.bias"))), 1)?;
                let state = self.params.norm_mut(&format!("{name}.{which}_bn"))?;
                let y = g.batch_norm(y, n(&format!("{which}_bn.gamma")), n(&format!("{which}_bn.beta")), state, mode)?;
                qkv.push(g.gelu(y));
            }
            let (q, k, v) = (qkv[0], qkv[1], qkv[2]);
            let rt = region_route(g.value(q), g.value(k), grid.regions(), self.config.topk)?;
            let att = g.fine_attention(q, k, v, &rt.index)?;
            let att = g.conv2d(att, n("proj.weight"), Some(n("proj.bias")), 1)?;
            let attended = g.from_batch(att, COLORS, grid)?;
            let extra = g.conv2d(attended, n("merge.attended_weight"), None, COLORS)?;
            merged = g.add(merged, extra)?;
            routing = Some(rt);
        }
        let merged = g.gelu(merged);
        let map = g.conv2d(merged, n("head.weight"), Some(n("head.bias")), COLORS)?;
        Ok((map, routing))
    }

    /// Inference with running batch statistics.
    pub fn enhance(&mut self, input: &Tensor<T>) -> Result<Decomposition<T>> {
        self.run(input, BnMode::Eval)
    }

    pub fn run(&mut self, input: &Tensor<T>, mode: BnMode) -> Result<Decomposition<T>> {
        let mut g = Graph::new();
        let fv = self.forward_graph(&mut g, input, mode)?;
        let zeros = || Tensor::zeros(input.shape());
        Ok(Decomposition {
            input: input.clone(),
            dx: fv.dx.map(|v| g.value(v).clone()).unwrap_or_else(zeros),
            ox: fv.ox.map(|v| g.value(v).clone()).unwrap_or_else(zeros),
            output: g.value(fv.output).clone(),
            routing: fv.routing,
        })
    }
}
