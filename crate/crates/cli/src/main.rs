use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use lsnet_core::physics::{degrade, synthetic_depth, SceneModel};
use lsnet_core::pipeline::data::write_synthetic;
use lsnet_core::pipeline::eval::ablation_table;
use lsnet_core::pipeline::train::curve_csv;
use lsnet_core::pipeline::{
    ablate, config::config_text, enhance, evaluate, load_samples, synthetic_split, train, Checkpoint, DatasetManifest, Enhanced, HistogramReport, PipelineConfig, Sample, Split,
};
use lsnet_core::{Error, Image};

/// Underwater image enhancement with a lightweight selective-attention network.
#[derive(Parser, Debug)]
#[command(name = "lsnet", version)]
struct Cli {
    #[command(flatten)]
    shared: Shared,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Shared {
    /// Seed for initialisation, shuffling and synthetic data (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "lsnet-out")]
    out: PathBuf,

    /// Extra `key=value` overrides applied after the config file; goes before the subcommand.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes best.lsnt, final.lsnt and curve.csv.
    Train {
        /// Dataset manifest; the synthetic set is used when omitted.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Enhance images with a trained checkpoint.
    Enhance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Also write the dx and ox maps.
        #[arg(long)]
        decomposition: bool,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Score images, enhanced by a checkpoint when one is given.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Restrict to one split (train, val or test).
        #[arg(long)]
        split: Option<Split>,
    },
    /// Train the full model and the four ablations under one seed.
    Ablate {
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Degrade clean images, or write the synthetic dataset when no inputs are given.
    Degrade { inputs: Vec<PathBuf> },
    /// Per-channel histograms of images, and of their enhancement when a checkpoint is given.
    Hist {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
}

fn load_config(shared: &Shared) -> Result<PipelineConfig> {
    let mut cfg = match &shared.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    for kv in &shared.overrides {
        let (k, v) = kv.split_once('=').ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(s) = shared.seed {
        cfg.train.seed = s;
    }
    cfg.train.validate()?;
    Ok(cfg)
}

fn write(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Write { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(())
}

fn out_dir(shared: &Shared) -> Result<&Path> {
    std::fs::create_dir_all(&shared.out).map_err(|e| Error::Write { path: shared.out.clone(), reason: e.to_string() })?;
    Ok(&shared.out)
}

/// Train/val samples from a manifest, or the synthetic set.
fn paired_data(cfg: &PipelineConfig, manifest: Option<&Path>) -> Result<(Vec<Sample>, Vec<Sample>)> {
    match manifest {
        Some(m) => {
            let m = DatasetManifest::load(m)?;
            let res = Some(cfg.train.resolution);
            Ok((load_samples(&m, Some(Split::Train), res)?, load_samples(&m, Some(Split::Val), res)?))
        }
        None => Ok(synthetic_split(&cfg.scene, cfg.train.seed)?),
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "image".into())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.shared)?;
    match cli.command {
        Command::Train { manifest } => {
            let (tr, val) = paired_data(&cfg, manifest.as_deref())?;
            let out = out_dir(&cli.shared)?;
            eprintln!("training on {} images, validating on {}", tr.len(), val.len());
            let outcome = train(&cfg.train, &tr, &val, |p| match p.val_psnr {
                Some(v) => eprintln!("epoch {:>5}  loss {:.6}  val psnr {v:.3}", p.epoch, p.train_loss),
                None => eprintln!("epoch {:>5}  loss {:.6}", p.epoch, p.train_loss),
            })?;
            Checkpoint { model: outcome.model, step: outcome.steps, optimizer: Some(outcome.optimizer) }.save(&out.join("final.lsnt"))?;
            Checkpoint { model: outcome.best, step: outcome.steps, optimizer: None }.save(&out.join("best.lsnt"))?;
            write(&out.join("curve.csv"), &curve_csv(&outcome.curve))?;
            write(&out.join("config.txt"), &config_text(&cfg))?;
            println!("initial loss {:.6}, final loss {:.6}", outcome.initial_loss, outcome.final_loss);
            if let Some(b) = outcome.best_val_psnr {
                println!("best validation psnr {b:.4} dB");
            }
        }
        Command::Enhance { checkpoint, decomposition, inputs } => {
            let mut model = Checkpoint::load(&checkpoint)?.model;
            let out = out_dir(&cli.shared)?;
            for input in &inputs {
                let e = enhance(&mut model, &Image::load(input)?)?;
                let name = stem(input);
                e.output.save(&out.join(format!("{name}.png")))?;
                if decomposition {
                    Enhanced::visualize(&e.dx).save(&out.join(format!("{name}_dx.png")))?;
                    Enhanced::visualize(&e.ox).save(&out.join(format!("{name}_ox.png")))?;
                }
            }
            println!("enhanced {} images into {}", inputs.len(), out.display());
        }
        Command::Eval { checkpoint, manifest, split } => {
            let samples = match &manifest {
                Some(m) => load_samples(&DatasetManifest::load(m)?, split, None)?,
                None => synthetic_split(&cfg.scene, cfg.train.seed)?.1,
            };
            let mut model = checkpoint.as_deref().map(Checkpoint::load).transpose()?.map(|c| c.model);
            let report = evaluate(model.as_mut(), &samples)?;
            if report.is_mixed() {
                eprintln!("warning: manifest mixes paired and raw-only images; psnr/ssim means cover the paired subset only");
            }
            let csv = report.to_csv();
            write(&out_dir(&cli.shared)?.join("metrics.csv"), &csv)?;
            print!("{csv}");
        }
        Command::Ablate { manifest } => {
            let (tr, val) = paired_data(&cfg, manifest.as_deref())?;
            let runs = ablate(&cfg.train, &tr, &val, |name, p| {
                if let Some(v) = p.val_psnr {
                    eprintln!("{name:>8} epoch {:>5}  loss {:.6}  val psnr {v:.3}", p.epoch, p.train_loss);
                }
            })?;
            let out = out_dir(&cli.shared)?;
            for r in &runs {
                write(&out.join(format!("{}_metrics.csv", r.name)), &r.report.to_csv())?;
            }
            let table = ablation_table(&runs);
            write(&out.join("ablation.csv"), &table)?;
            print!("{table}");
        }
        Command::Degrade { inputs } => {
            let out = out_dir(&cli.shared)?;
            if inputs.is_empty() {
                let manifest = write_synthetic(&cfg.scene, cfg.train.seed, out)?;
                println!("wrote {}", manifest.display());
            } else {
                let s = &cfg.scene;
                for (i, input) in inputs.iter().enumerate() {
                    let clean = Image::load(input)?;
                    let depth = synthetic_depth(clean.width(), clean.height(), s.depth_kind, s.depth_near, s.depth_far, cfg.train.seed.wrapping_add(i as u64));
                    let mut scene = SceneModel::new(clean, depth, s.eta, s.ambient)?;
                    scene.fs_gain = s.fs_gain;
                    degrade(&scene)?.total.save(&out.join(format!("{}.png", stem(input))))?;
                }
                println!("degraded {} images into {}", inputs.len(), out.display());
            }
        }
        Command::Hist { checkpoint, inputs } => {
            let raws = inputs.iter().map(|p| Image::load(p)).collect::<lsnet_core::Result<Vec<_>>>()?;
            let raw_refs: Vec<&Image> = raws.iter().collect();
            let report = match checkpoint {
                Some(c) => {
                    let mut model = Checkpoint::load(&c)?.model;
                    let enhanced = raws.iter().map(|r| enhance(&mut model, r)).collect::<lsnet_core::Result<Vec<_>>>()?;
                    let outs: Vec<&Image> = enhanced.iter().map(|e| &e.output).collect();
                    let changes: Vec<Image> = enhanced.iter().map(Enhanced::net_change).collect();
                    let change_refs: Vec<&Image> = changes.iter().collect();
                    HistogramReport::new(&raw_refs, Some((&outs, &change_refs)))
                }
                None => HistogramReport::new(&raw_refs, None),
            };
            let out = out_dir(&cli.shared)?;
            write(&out.join("hist.csv"), &report.to_csv())?;
            report.save_plot(&out.join("hist.png"))?;
            println!("wrote {} and {}", out.join("hist.csv").display(), out.join("hist.png").display());
        }
    }
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::NonFinite { .. }) => 3,
        Some(Error::Config(_) | Error::InvalidArgument { .. }) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        return ExitCode::from(exit_code(&e));
    }
    ExitCode::SUCCESS
}
