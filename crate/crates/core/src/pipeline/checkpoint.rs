//! Binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "LSNT" | u32 version | u32 len, model config text | u64 step
//! | table: u32 count, then per tensor: u32 name len, name, 4 x u32 dims, f32 data
//! | u8 has_optimizer [ | 4 x f64 adam config | u64 adam step | table (moments) ]
//! ```
//!
//! The parameter table holds trainable tensors in model order followed by
//! batch-norm running statistics (`<site>.running_mean`, `<site>.running_var`).
//! The moment table names entries `m:<param>` and `v:<param>`.

use std::path::Path;

use super::config::{model_config_text, parse_model_config};
use crate::error::{Error, Result};
use crate::model::LsNet;
use crate::optim::{AdamConfig, AdamState};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"LSNT";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: LsNet<f32>,
    pub step: u64,
    pub optimizer: Option<AdamState<f32>>,
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_table(out: &mut Vec<u8>, table: &[(String, &Tensor<f32>)]) {
    put_u32(out, table.len() as u32);
    for (name, t) in table {
        put_u32(out, name.len() as u32);
        out.extend_from_slice(name.as_bytes());
        for d in t.shape() {
            put_u32(out, d as u32);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| Error::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("name is not UTF-8".into()))
    }

    fn table(&mut self) -> Result<Vec<(String, Tensor<f32>)>> {
        let count = self.u32()?;
        let mut out = Vec::new();
        for _ in 0..count {
            let name = self.string()?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                *d = self.u32()? as usize;
            }
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?;
            let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint(format!("{name}: shape overflows")))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            out.push((name, Tensor::from_vec(shape, data)?));
        }
        Ok(out)
    }
}

fn norm_tensors(model: &LsNet<f32>) -> Vec<(String, Tensor<f32>)> {
    let mut out = Vec::new();
    for (name, st) in model.params.norms() {
        let c = st.channels();
        out.push((format!("{name}.running_mean"), Tensor::from_vec([c, 1, 1, 1], st.running_mean.clone()).expect("length matches")));
        out.push((format!("{name}.running_var"), Tensor::from_vec([c, 1, 1, 1], st.running_var.clone()).expect("length matches")));
    }
    out
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        put_u32(&mut out, VERSION);
        let cfg = model_config_text(&self.model.config);
        put_u32(&mut out, cfg.len() as u32);
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        let norms = norm_tensors(&self.model);
        let mut table: Vec<(String, &Tensor<f32>)> = self.model.params.entries().iter().map(|e| (e.name.clone(), &e.tensor)).collect();
        table.extend(norms.iter().map(|(n, t)| (n.clone(), t)));
        put_table(&mut out, &table);
        match &self.optimizer {
            None => out.push(0),
            Some(opt) => {
                out.push(1);
                let c = opt.config;
                for v in [c.lr, c.beta1, c.beta2, c.eps] {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                out.extend_from_slice(&opt.step.to_le_bytes());
                let names: Vec<&str> = self.model.params.names().collect();
                let mut moments: Vec<(String, &Tensor<f32>)> = Vec::new();
                for (i, n) in names.iter().enumerate() {
                    moments.push((format!("m:{n}"), &opt.first[i]));
                    moments.push((format!("v:{n}"), &opt.second[i]));
                }
                put_table(&mut out, &moments);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).ok() != Some(MAGIC.as_slice()) {
            return Err(Error::Checkpoint("missing LSNT magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version} (expected {VERSION})")));
        }
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
        let config = parse_model_config(cfg_text)?;
        let step = r.u64()?;
        let mut model = LsNet::<f32>::new(config, 0)?;
        let table = r.table()?;
        let expected = model.params.len() + 2 * model.params.norms().len();
        if table.len() != expected {
            return Err(Error::Checkpoint(format!("{} tensors stored, model needs {expected}", table.len())));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (name, t) in table {
            if !seen.insert(name.clone()) {
                return Err(Error::Checkpoint(format!("tensor {name} stored twice")));
            }
            if let Some(site) = name.strip_suffix(".running_mean") {
                let st = model.params.norm_mut(site).map_err(|_| Error::Checkpoint(format!("unknown tensor {name}")))?;
                if t.len() != st.channels() {
                    return Err(Error::Checkpoint(format!("{name}: {} values for {} channels", t.len(), st.channels())));
                }
                st.running_mean = t.into_vec();
            } else if let Some(site) = name.strip_suffix(".running_var") {
                let st = model.params.norm_mut(site).map_err(|_| Error::Checkpoint(format!("unknown tensor {name}")))?;
                if t.len() != st.channels() {
                    return Err(Error::Checkpoint(format!("{name}: {} values for {} channels", t.len(), st.channels())));
                }
                st.running_var = t.into_vec();
            } else {
                model.params.assign(&name, t)?;
            }
        }
        let optimizer = match r.u8()? {
            0 => None,
            1 => {
                let config = AdamConfig { lr: r.f64()?, beta1: r.f64()?, beta2: r.f64()?, eps: r.f64()? };
                let adam_step = r.u64()?;
                let mut state = AdamState::new(config, model.params.tensors());
                state.step = adam_step;
                let moments = r.table()?;
                if moments.len() != 2 * model.params.len() {
                    return Err(Error::Checkpoint(format!("{} optimizer tensors for {} parameters", moments.len(), model.params.len())));
                }
                let names: Vec<String> = model.params.names().map(str::to_string).collect();
                for (i, pair) in moments.chunks(2).enumerate() {
                    let (m, v) = (&pair[0], &pair[1]);
                    if m.0 != format!("m:{}", names[i]) || v.0 != format!("v:{}", names[i]) {
                        return Err(Error::Checkpoint(format!("optimizer entries {} / {} out of order", m.0, v.0)));
                    }
                    if m.1.shape() != state.first[i].shape() || v.1.shape() != state.first[i].shape() {
                        return Err(Error::Checkpoint(format!("optimizer moments for {} have the wrong shape", names[i])));
                    }
                    state.first[i] = m.1.clone();
                    state.second[i] = v.1.clone();
                }
                Some(state)
            }
            f => return Err(Error::Checkpoint(format!("bad optimizer flag {f}"))),
        };
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { model, step, optimizer })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::Write { path: path.to_path_buf(), reason: e.to_string() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::from_bytes(&bytes)
    }
}
