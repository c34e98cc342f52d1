//! Manifests, loaded samples, batching and the synthetic paired dataset.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::SceneConfig;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::physics::{degrade, synthetic_clean, synthetic_depth, SceneModel};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Data(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub split: Split,
    pub raw: PathBuf,
    pub reference: Option<PathBuf>,
}

/// Lines of `split,raw[,reference]`; `#` starts a comment. Relative paths
/// resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Read { path: path.to_path_buf(), reason: e.to_string() })?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if !(2..=3).contains(&fields.len()) || fields[1].is_empty() {
                return Err(Error::Data(format!("manifest line {}: expected `split,raw[,reference]`", no + 1)));
            }
            let resolve = |p: &str| if Path::new(p).is_absolute() { PathBuf::from(p) } else { base.join(p) };
            entries.push(ManifestEntry {
                split: fields[0].parse()?,
                raw: resolve(fields[1]),
                reference: fields.get(2).filter(|s| !s.is_empty()).map(|s| resolve(s)),
            });
        }
        if entries.is_empty() {
            return Err(Error::Data("manifest has no entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(e.split.name());
            out.push(',');
            out.push_str(&rel(&e.raw));
            if let Some(r) = &e.reference {
                out.push(',');
                out.push_str(&rel(r));
            }
            out.push('\n');
        }
        out
    }
}

/// One decoded raw image with its optional reference.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub name: String,
    pub raw: Image,
    pub reference: Option<Image>,
}

/// Decode every entry of `split` (all entries if `None`), resizing to
/// `(height, width)` when given.
pub fn load_samples(manifest: &DatasetManifest, split: Option<Split>, resolution: Option<(usize, usize)>) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for e in manifest.entries.iter().filter(|e| split.is_none_or(|s| e.split == s)) {
        let mut raw = Image::load(&e.raw)?;
        let mut reference = e.reference.as_deref().map(Image::load).transpose()?;
        if let Some(r) = &reference {
            if resolution.is_none() && !r.same_size(&raw) {
                return Err(Error::Data(format!(
                    "{}: raw is {}x{} but reference {} is {}x{}",
                    e.raw.display(),
                    raw.width(),
                    raw.height(),
                    e.reference.as_ref().unwrap().display(),
                    r.width(),
                    r.height()
                )));
            }
        }
        if let Some((h, w)) = resolution {
            raw = raw.resize(w, h);
            reference = reference.map(|r| r.resize(w, h));
        }
        let name = e.raw.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.push(Sample { name, raw, reference });
    }
    Ok(out)
}

/// Shuffled batches of indices for one epoch; the order depends only on
/// `(seed, epoch)`.
pub fn epoch_batches(len: usize, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if len == 0 {
        return Err(Error::Data("dataset is empty".into()));
    }
    if batch_size == 0 {
        return Err(Error::Config("batch_size must be at least 1".into()));
    }
    let mut order: Vec<usize> = (0..len).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Stack raw images and references of the chosen samples.
pub fn stack<T: Real>(samples: &[Sample], idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let raws: Vec<&Image> = idx.iter().map(|&i| &samples[i].raw).collect();
    let refs = idx
        .iter()
        .map(|&i| samples[i].reference.as_ref().ok_or_else(|| Error::Data(format!("{} has no reference image", samples[i].name))))
        .collect::<Result<Vec<&Image>>>()?;
    Ok((Image::batch(&raws)?, Image::batch(&refs)?))
}

/// A degraded/clean pair plus the scene that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPair {
    pub sample: Sample,
    pub depth: Vec<f64>,
}

/// Seeded clean scenes degraded by the formation model.
pub fn synthetic_pairs(scene: &SceneConfig, seed: u64) -> Result<Vec<SyntheticPair>> {
    (0..scene.count)
        .map(|i| {
            let s = seed.wrapping_mul(1_000_003).wrapping_add(i as u64);
            let clean = synthetic_clean(scene.size, scene.size, s);
            let depth = synthetic_depth(scene.size, scene.size, scene.depth_kind, scene.depth_near, scene.depth_far, s);
            let mut model = SceneModel::new(clean.clone(), depth.clone(), scene.eta, scene.ambient)?;
            model.fs_gain = scene.fs_gain;
            let raw = degrade(&model)?.total;
            Ok(SyntheticPair { sample: Sample { name: format!("synth_{i:03}"), raw, reference: Some(clean) }, depth })
        })
        .collect()
}

/// Split the synthetic set: the last `val_count` entries validate.
pub fn synthetic_split(scene: &SceneConfig, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if scene.val_count >= scene.count {
        return Err(Error::Config(format!("val_count {} leaves no training images out of {}", scene.val_count, scene.count)));
    }
    let mut all: Vec<Sample> = synthetic_pairs(scene, seed)?.into_iter().map(|p| p.sample).collect();
    let val = all.split_off(scene.count - scene.val_count);
    Ok((all, val))
}

/// Write a synthetic set as PNG files plus `manifest.txt`.
pub fn write_synthetic(scene: &SceneConfig, seed: u64, dir: &Path) -> Result<PathBuf> {
    let werr = |e: std::io::Error| Error::Write { path: dir.to_path_buf(), reason: e.to_string() };
    std::fs::create_dir_all(dir.join("raw")).map_err(werr)?;
    std::fs::create_dir_all(dir.join("clean")).map_err(werr)?;
    let pairs = synthetic_pairs(scene, seed)?;
    let mut manifest = DatasetManifest::default();
    let n = pairs.len();
    for (i, p) in pairs.iter().enumerate() {
        let raw = dir.join("raw").join(format!("{}.png", p.sample.name));
        let clean = dir.join("clean").join(format!("{}.png", p.sample.name));
        p.sample.raw.save(&raw)?;
        p.sample.reference.as_ref().expect("synthetic pairs carry references").save(&clean)?;
        let split = if i + scene.val_count >= n { Split::Val } else { Split::Train };
        manifest.entries.push(ManifestEntry { split, raw, reference: Some(clean) });
    }
    let path = dir.join("manifest.txt");
    std::fs::write(&path, manifest.to_text(dir)).map_err(|e| Error::Write { path: path.clone(), reason: e.to_string() })?;
    Ok(path)
}
