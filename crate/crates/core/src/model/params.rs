//! Named parameter store with a fixed registration order.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LsNetConfig;
use crate::autodiff::{BatchNormState, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry<T> {
    pub name: String,
    /// Ledger group the tensor is counted under.
    pub group: String,
    pub tensor: Tensor<T>,
}

/// Every trainable tensor plus the batch-norm running statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct LsNetParams<T> {
    entries: Vec<ParamEntry<T>>,
    norms: Vec<(String, BatchNormState<T>)>,
}

/// Parameter counts per group, in registration order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLedger {
    pub groups: Vec<(String, usize)>,
}

impl ParamLedger {
    pub fn total(&self) -> usize {
        self.groups.iter().map(|(_, n)| n).sum()
    }

    pub fn get(&self, group: &str) -> Option<usize> {
        self.groups.iter().find(|(g, _)| g == group).map(|(_, n)| *n)
    }
}

/// Graph handles of every parameter, aligned with the store's order.
pub struct BoundParams {
    vars: Vec<Var>,
    index: BTreeMap<String, usize>,
}

impl BoundParams {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, name: &str) -> Var {
        self.vars[self.index[name]]
    }
}

struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    fn uniform<T: Real>(&mut self, shape: Shape, fan_in: usize) -> Tensor<T> {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| T::lit(self.rng.random_range(-bound..=bound)))
    }
}

impl<T: Real> LsNetParams<T> {
    /// Allocate and initialise every tensor the configuration needs.
    pub fn init(config: &LsNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut p = Self { entries: Vec::new(), norms: Vec::new() };
        let mut init = Init { rng: ChaCha8Rng::seed_from_u64(seed) };
        let l = config.lift_channels;

        p.push("pos_conv.weight", "pos_conv", init.uniform([3, 3, 3, 3], 27));
        p.push("pos_conv.bias", "pos_conv", init.uniform([3, 1, 1, 1], 27));
        for branch in config.branches() {
            let g = |s: &str| format!("{branch}.{s}");
            p.push(&g("lift.weight"), &g("lift"), init.uniform([3 * l, 1, 1, 1], 1));
            p.push(&g("lift.bias"), &g("lift"), init.uniform([3 * l, 1, 1, 1], 1));
            if config.ablation.uses_attention() {
                for name in ["q", "k", "v"] {
                    p.push(&g(&format!("{name}.weight")), &g("qkv"), init.uniform([l, l, 1, 1], l));
                    p.push(&g(&format!("{name}.bias")), &g("qkv"), init.uniform([l, 1, 1, 1], l));
                }
                for name in ["q", "k", "v"] {
                    p.push(&g(&format!("{name}_bn.gamma")), &g("qkv_bn"), Tensor::full([l, 1, 1, 1], T::one()));
                    p.push(&g(&format!("{name}_bn.beta")), &g("qkv_bn"), Tensor::zeros([l, 1, 1, 1]));
                    p.norms.push((g(&format!("{name}_bn")), BatchNormState::new(l)));
                }
                p.push(&g("proj.weight"), &g("proj"), init.uniform([l, l, 1, 1], l));
                p.push(&g("proj.bias"), &g("proj"), init.uniform([l, 1, 1, 1], l));
            }
            let merge_fan_in = if config.ablation.uses_attention() { 2 * l } else { l };
            p.push(&g("merge.lifted_weight"), &g("merge"), init.uniform([3 * l, l, 1, 1], merge_fan_in));
            if config.ablation.uses_attention() {
                p.push(&g("merge.attended_weight"), &g("merge"), init.uniform([3 * l, l, 1, 1], merge_fan_in));
            }
            p.push(&g("merge.bias"), &g("merge"), init.uniform([3 * l, 1, 1, 1], merge_fan_in));
            p.push(&g("head.weight"), &g("head"), init.uniform([3, l, 1, 1], l));
            p.push(&g("head.bias"), &g("head"), init.uniform([3, 1, 1, 1], l));
        }
        Ok(p)
    }

    fn push(&mut self, name: &str, group: &str, tensor: Tensor<T>) {
        self.entries.push(ParamEntry { name: name.to_string(), group: group.to_string(), tensor });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries.iter_mut().find(|e| e.name == name).map(|e| &mut e.tensor)
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.entries.iter().map(|e| &e.tensor)
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.entries.iter_mut().map(|e| &mut e.tensor).collect()
    }

    pub fn norms(&self) -> &[(String, BatchNormState<T>)] {
        &self.norms
    }

    pub fn norm_mut(&mut self, name: &str) -> Result<&mut BatchNormState<T>> {
        self.norms
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Config(format!("no batch-norm state named {name}")))
    }

    /// Replace a tensor's values, keeping its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self.get_mut(name).ok_or_else(|| Error::Checkpoint(format!("unknown parameter {name}")))?;
        if slot.shape() != value.shape() {
            return Err(Error::Checkpoint(format!("parameter {name}: stored {:?}, model expects {:?}", value.shape(), slot.shape())));
        }
        *slot = value;
        Ok(())
    }

    pub fn ledger(&self) -> ParamLedger {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for e in &self.entries {
            match groups.iter_mut().find(|(g, _)| *g == e.group) {
                Some((_, n)) => *n += e.tensor.len(),
                None => groups.push((e.group.clone(), e.tensor.len())),
            }
        }
        ParamLedger { groups }
    }

    pub fn count(&self) -> usize {
        self.entries.iter().map(|e| e.tensor.len()).sum()
    }

    pub fn bind(&self, graph: &mut Graph<T>) -> BoundParams {
        let mut vars = Vec::with_capacity(self.entries.len());
        let mut index = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            vars.push(graph.param_named(e.tensor.clone(), e.name.clone()));
            index.insert(e.name.clone(), i);
        }
        BoundParams { vars, index }
    }

    pub fn cast<U: Real>(&self) -> LsNetParams<U> {
        LsNetParams {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry { name: e.name.clone(), group: e.group.clone(), tensor: Tensor::cast(&e.tensor) })
                .collect(),
            norms: self
                .norms
                .iter()
                .map(|(n, s)| {
                    let conv = |v: &[T]| v.iter().map(|x| U::lit(x.to_f64_lossy())).collect();
                    (
                        n.clone(),
                        BatchNormState {
                            running_mean: conv(&s.running_mean),
                            running_var: conv(&s.running_var),
                            momentum: U::lit(s.momentum.to_f64_lossy()),
                            eps: U::lit(s.eps.to_f64_lossy()),
                        },
                    )
                })
                .collect(),
        }
    }
}
