use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Deserialize;

use sdtseg::model::{prepare_pair, Checkpoint, TrainState, TrainingPair};
use sdtseg::volume::{downsample2, normalize_intensities};
use sdtseg::{threshold_to_mask, Error, PipelineConfig, SdtVolume};

use crate::exit::CliError;
use crate::files::{atomic_write, ensure_distinct, load_manifest, load_mask, load_volume, resolve, save_text};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSON manifest: {"train": [entry, ...], "validation": [entry, ...]}.
    /// Each entry has an "image" and either a "target" signed distance
    /// volume (full or half resolution) or a binary "mask".
    #[arg(short, long)]
    pub manifest: PathBuf,
    /// Output checkpoint; rewritten whenever validation Dice improves.
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    /// Per-epoch JSON lines log (loss, validation Dice).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Write the effective config as TOML and continue.
    #[arg(long)]
    pub dump_config: Option<PathBuf>,
    /// Continue from a checkpoint up to the configured epoch count.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
}

#[derive(Deserialize)]
struct Entry {
    image: PathBuf,
    target: Option<PathBuf>,
    mask: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    train: Vec<Entry>,
    #[serde(default)]
    validation: Vec<Entry>,
}

fn effective_config(args: &Args, mut config: PipelineConfig) -> Result<PipelineConfig> {
    if let Some(v) = args.epochs {
        config.train.epochs = v;
    }
    if let Some(v) = args.lr {
        config.train.learning_rate = v;
    }
    if let Some(v) = args.batch_size {
        config.train.batch_size = v;
    }
    if let Some(v) = args.seed {
        config.net.seed = v;
    }
    if let Some(v) = args.depth {
        config.net.depth = v;
    }
    if let Some(v) = args.channels {
        config.net.start_channels = v;
    }
    config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(config)
}

fn load_pair(manifest: &Path, entry: &Entry) -> Result<TrainingPair> {
    let image_path = resolve(manifest, &entry.image);
    let image = load_volume(&image_path)?;
    let pair = match (&entry.target, &entry.mask) {
        (Some(target), None) => {
            let path = resolve(manifest, target);
            let target = load_volume(&path)?;
            let coarse = image.shape().map(|n| n.div_ceil(2));
            if target.shape() == image.shape() {
                // thresholding at zero recovers the mask exactly
                prepare_pair(&image, &threshold_to_mask(&target, 0.0))
            } else if target.shape() == coarse {
                let image = downsample2(&normalize_intensities(&image)?)?;
                TrainingPair::new(image, SdtVolume::from_volume(target)?)
            } else {
                Err(Error::GeometryMismatch(format!(
                    "target {} has shape {:?}; expected {:?} or {coarse:?}",
                    path.display(),
                    target.shape(),
                    image.shape()
                )))
            }
        }
        (None, Some(mask)) => prepare_pair(&image, &load_mask(&resolve(manifest, mask))?),
        _ => {
            return Err(CliError::Manifest(format!(
                "entry {} needs exactly one of \"target\" or \"mask\"",
                entry.image.display()
            ))
            .into())
        }
    };
    pair.with_context(|| format!("preparing {}", image_path.display()))
}

fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = Checkpoint::from_state(state)?.to_bytes()?;
    atomic_write(path, |tmp| Ok(std::fs::write(tmp, &bytes)?)).with_context(|| format!("writing {}", path.display()))
}

pub fn run(args: Args, config: PipelineConfig) -> Result<()> {
    let config = effective_config(&args, config)?;
    let mut inputs = vec![args.manifest.as_path()];
    inputs.extend(args.resume.as_deref());
    let mut outputs = vec![args.checkpoint.as_path()];
    outputs.extend(args.log.as_deref());
    outputs.extend(args.dump_config.as_deref());
    ensure_distinct(&inputs, &outputs)?;
    if let Some(path) = &args.dump_config {
        save_text(&config.to_toml()?, path)?;
    }

    let manifest: Manifest = load_manifest(&args.manifest)?;
    if manifest.train.is_empty() {
        return Err(CliError::Manifest(format!("{}: no training entries", args.manifest.display())).into());
    }
    let load = |entries: &[Entry]| entries.iter().map(|e| load_pair(&args.manifest, e)).collect::<Result<Vec<_>>>();
    let training = load(&manifest.train)?;
    let validation = load(&manifest.validation)?;
    if validation.is_empty() {
        log::warn!("no validation entries; model selection uses the training set");
    }

    let mut state = match &args.resume {
        Some(path) => {
            let ckpt = Checkpoint::read(path).with_context(|| format!("reading {}", path.display()))?;
            if ckpt.net != config.net {
                return Err(CliError::Usage(format!(
                    "checkpoint network {:?} differs from the configured {:?}",
                    ckpt.net, config.net
                ))
                .into());
            }
            let mut state = ckpt.resume()?;
            state.train = config.train.clone();
            state
        }
        None => TrainState::new(&config.net, &config.train, &config.loss)?,
    };
    let mut log = match &args.log {
        Some(path) => Some(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => None,
    };
    while state.epoch < config.train.epochs {
        let record = state.run_epoch(&training, &validation)?;
        if let Some(log) = log.as_mut() {
            serde_json::to_writer(&mut *log, &record)?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        if record.improved {
            save_checkpoint(&state, &args.checkpoint)?;
        }
    }
    save_checkpoint(&state, &args.checkpoint)?;
    log::info!(
        "best validation Dice {:.4} at epoch {:?}",
        state.best_validation_dice,
        state.best_epoch
    );
    Ok(())
}
