use std::path::PathBuf;

use anyhow::Result;
use serde::Serialize;

use sdtseg::config::{PriorSetting, StapleConfig};
use sdtseg::{staple_fuse, PipelineConfig, Prior, RaterStack};

use crate::exit::CliError;
use crate::files::{create_dir, ensure_distinct, load_mask, load_volume, save_json, save_mask, save_volume};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Rater masks (NIfTI), at least two, all on the same grid.
    #[arg(required = true, num_args = 2..)]
    pub masks: Vec<PathBuf>,
    /// Directory for consensus_prob.nii.gz, consensus_mask.nii.gz and staple.json.
    #[arg(short, long)]
    pub output_dir: PathBuf,
    /// Foreground prior: "mean" (mean rater fraction) or a probability.
    #[arg(long)]
    pub prior: Option<String>,
    /// Per-voxel foreground prior volume; overrides --prior.
    #[arg(long)]
    pub prior_map: Option<PathBuf>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub tol: Option<f64>,
}

#[derive(Serialize)]
struct RaterReport {
    name: String,
    path: PathBuf,
    sensitivity: f64,
    specificity: f64,
}

#[derive(Serialize)]
struct Report {
    schema_version: u32,
    raters: Vec<RaterReport>,
    iterations: usize,
    converged: bool,
    log_likelihood: Vec<f64>,
    consensus_voxels: usize,
}

fn staple_config(args: &Args, config: &PipelineConfig) -> StapleConfig {
    let mut cfg = config.staple.clone();
    if let Some(p) = &args.prior {
        cfg.prior = match p.parse::<f64>() {
            Ok(v) => PriorSetting::Fixed(v),
            Err(_) => PriorSetting::Named(p.clone()),
        };
    }
    if let Some(n) = args.max_iters {
        cfg.max_iters = n;
    }
    if let Some(t) = args.tol {
        cfg.tol = t;
    }
    cfg
}

pub fn run(args: Args, config: &PipelineConfig) -> Result<()> {
    let mut options = staple_config(&args, config).options().map_err(|e| CliError::Usage(e.to_string()))?;
    if let Some(path) = &args.prior_map {
        options.prior = Prior::PerVoxel(load_volume(path)?);
    }
    let prob_path = args.output_dir.join("consensus_prob.nii.gz");
    let mask_path = args.output_dir.join("consensus_mask.nii.gz");
    let json_path = args.output_dir.join("staple.json");
    let inputs: Vec<&std::path::Path> = args.masks.iter().map(PathBuf::as_path).collect();
    ensure_distinct(&inputs, &[&prob_path, &mask_path, &json_path])?;

    let masks = args.masks.iter().map(|p| load_mask(p)).collect::<Result<Vec<_>>>()?;
    let names = args
        .masks
        .iter()
        .map(|p| p.file_name().map_or_else(|| p.display().to_string(), |n| n.to_string_lossy().into_owned()))
        .collect();
    let stack = RaterStack::new(masks, names)?;
    let result = staple_fuse(&stack, &options)?;
    if !result.converged {
        log::warn!("STAPLE stopped after {} iterations without converging", result.iterations);
    }

    create_dir(&args.output_dir)?;
    save_volume(&result.consensus_prob, &prob_path)?;
    save_mask(&result.consensus_mask, &mask_path)?;
    let raters = stack
        .names()
        .iter()
        .zip(&args.masks)
        .enumerate()
        .map(|(j, (name, path))| RaterReport {
            name: name.clone(),
            path: path.clone(),
            sensitivity: result.sensitivities[j],
            specificity: result.specificities[j],
        })
        .collect();
    let report = Report {
        schema_version: 1,
        raters,
        iterations: result.iterations,
        converged: result.converged,
        log_likelihood: result.log_likelihood.clone(),
        consensus_voxels: result.consensus_mask.count(),
    };
    save_json(&report, &json_path)
}
