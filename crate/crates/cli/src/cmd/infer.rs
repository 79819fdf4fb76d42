use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use sdtseg::model::{predict_sdt, segment_sdt};
use sdtseg::{Checkpoint, PipelineConfig};

use super::parallel_map;
use crate::exit::CliError;
use crate::files::{create_dir, derived_name, ensure_distinct, load_manifest, load_volume, resolve, save_json, save_mask, save_volume};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Trained checkpoint; its best-by-validation parameters are used.
    #[arg(short, long)]
    pub checkpoint: PathBuf,
    /// Images to segment (NIfTI).
    #[arg(required_unless_present = "manifest", conflicts_with = "manifest")]
    pub images: Vec<PathBuf>,
    /// JSON manifest {"subjects": [{"id", "image", "mask"?}, ...]}. Entries with
    /// a reference "mask" are listed in the evaluate manifest written next to
    /// the outputs.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(short, long)]
    pub output_dir: PathBuf,
    /// Threshold on the predicted distance; lower keeps more tissue.
    #[arg(long, allow_negative_numbers = true)]
    pub tau: Option<f64>,
    /// Also write each predicted signed distance volume.
    #[arg(long)]
    pub save_sdt: bool,
    /// Subjects processed concurrently.
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Deserialize)]
struct Subject {
    id: String,
    image: PathBuf,
    mask: Option<PathBuf>,
}

#[derive(Deserialize)]
struct Subjects {
    subjects: Vec<Subject>,
}

struct Job {
    image: PathBuf,
    mask_out: PathBuf,
    sdt_out: PathBuf,
}

#[derive(Serialize)]
struct EvalEntry {
    id: String,
    pred: PathBuf,
    #[serde(rename = "ref")]
    reference: PathBuf,
}

#[derive(Serialize)]
struct EvalManifest {
    subjects: Vec<EvalEntry>,
}

fn absolute(p: &Path) -> PathBuf {
    std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf())
}

pub fn run(args: Args, config: &PipelineConfig) -> Result<()> {
    let tau = args.tau.unwrap_or(config.tau);
    if !tau.is_finite() {
        return Err(CliError::Usage(format!("tau must be finite, got {tau}")).into());
    }
    let dir = &args.output_dir;
    let mut references = Vec::new();
    let jobs: Vec<Job> = match &args.manifest {
        Some(path) => {
            let subjects: Subjects = load_manifest(path)?;
            subjects
                .subjects
                .iter()
                .map(|s| {
                    let job = Job {
                        image: resolve(path, &s.image),
                        mask_out: dir.join(format!("{}_mask.nii.gz", s.id)),
                        sdt_out: dir.join(format!("{}_sdt.nii.gz", s.id)),
                    };
                    if let Some(m) = &s.mask {
                        references.push(EvalEntry {
                            id: s.id.clone(),
                            pred: absolute(&job.mask_out),
                            reference: absolute(&resolve(path, m)),
                        });
                    }
                    job
                })
                .collect()
        }
        None => args
            .images
            .iter()
            .map(|img| Job {
                image: img.clone(),
                mask_out: derived_name(dir, img, "_mask"),
                sdt_out: derived_name(dir, img, "_sdt"),
            })
            .collect(),
    };
    let inputs: Vec<&Path> = jobs.iter().map(|j| j.image.as_path()).chain([args.checkpoint.as_path()]).collect();
    let outputs: Vec<&Path> = jobs.iter().flat_map(|j| [j.mask_out.as_path(), j.sdt_out.as_path()]).collect();
    ensure_distinct(&inputs, &outputs)?;
    let mut seen = std::collections::HashSet::new();
    if let Some(dup) = jobs.iter().find(|j| !seen.insert(&j.mask_out)) {
        return Err(CliError::Usage(format!("two inputs map to output {}", dup.mask_out.display())).into());
    }

    let ckpt = Checkpoint::read(&args.checkpoint).with_context(|| format!("reading {}", args.checkpoint.display()))?;
    create_dir(dir)?;
    parallel_map(&jobs, args.jobs, |job| {
        let image = load_volume(&job.image)?;
        let sdt = predict_sdt(&ckpt.params, &image).with_context(|| format!("segmenting {}", job.image.display()))?;
        let seg = segment_sdt(&sdt, tau)?;
        if seg.empty {
            log::warn!("{}: nothing above tau = {tau}; writing an empty mask", job.image.display());
        }
        if args.save_sdt {
            save_volume(&sdt, &job.sdt_out)?;
        }
        save_mask(&seg.mask, &job.mask_out)
    })?;
    if !references.is_empty() {
        save_json(&EvalManifest { subjects: references }, &dir.join("evaluate.json"))?;
    }
    Ok(())
}
