use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use sdtseg::phantom::random_specs;
use sdtseg::{corrupt_rater, generate, PhantomSpec};

use crate::exit::CliError;
use crate::files::{create_dir, load_manifest, save_json, save_mask, save_volume};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Directory receiving the volumes and manifests.
    #[arg(short, long)]
    pub output_dir: PathBuf,
    /// Single phantom from a JSON spec instead of random ones.
    #[arg(long, conflicts_with_all = ["count", "validation", "held_out"])]
    pub spec: Option<PathBuf>,
    /// Number of random phantoms.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Grid shape as X,Y,Z.
    #[arg(long, default_value = "32,32,32", value_parser = shape)]
    pub shape: [usize; 3],
    /// Of the random phantoms, this many (after the training ones) go to validation.
    #[arg(long, default_value_t = 0)]
    pub validation: usize,
    /// The last this many random phantoms are withheld into heldout.json.
    #[arg(long, default_value_t = 0)]
    pub held_out: usize,
    /// Simulated rater as SENSITIVITY,SPECIFICITY; repeatable.
    #[arg(long = "rater", value_parser = rater)]
    pub raters: Vec<(f64, f64)>,
}

fn shape(s: &str) -> Result<[usize; 3], String> {
    let dims: Vec<usize> = s.split(',').map(|v| v.trim().parse().map_err(|e| format!("{v:?}: {e}"))).collect::<Result<_, _>>()?;
    dims.try_into().map_err(|_| "expected X,Y,Z".to_string())
}

fn rater(s: &str) -> Result<(f64, f64), String> {
    let (p, q) = s.split_once(',').ok_or("expected SENSITIVITY,SPECIFICITY")?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let (p, q) = (parse(p)?, parse(q)?);
    if !(p > 0.0 && p <= 1.0 && q > 0.0 && q <= 1.0) {
        return Err(format!("rater parameters must lie in (0, 1], got {p},{q}"));
    }
    Ok((p, q))
}

/// One generated subject; paths are relative to the manifest.
#[derive(Serialize)]
struct Entry {
    id: String,
    image: PathBuf,
    mask: PathBuf,
    spec: PathBuf,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    raters: Vec<PathBuf>,
}

#[derive(Serialize)]
struct Manifest<'a> {
    train: &'a [Entry],
    validation: &'a [Entry],
}

#[derive(Serialize)]
struct Subjects<'a> {
    subjects: &'a [Entry],
}

fn write_subject(dir: &Path, id: &str, spec: &PhantomSpec, raters: &[(f64, f64)]) -> Result<Entry> {
    let (image, truth) = generate(spec).with_context(|| format!("generating {id}"))?;
    let entry = Entry {
        id: id.to_string(),
        image: format!("{id}_image.nii.gz").into(),
        mask: format!("{id}_truth.nii.gz").into(),
        spec: format!("{id}_spec.json").into(),
        raters: (0..raters.len()).map(|j| format!("{id}_rater{j}.nii.gz").into()).collect(),
    };
    save_volume(&image, &dir.join(&entry.image))?;
    save_mask(&truth, &dir.join(&entry.mask))?;
    save_json(spec, &dir.join(&entry.spec))?;
    for (j, &(p, q)) in raters.iter().enumerate() {
        let seed = spec.seed.wrapping_add(1 + j as u64);
        save_mask(&corrupt_rater(&truth, p, q, seed)?, &dir.join(&entry.raters[j]))?;
    }
    Ok(entry)
}

pub fn run(args: Args) -> Result<()> {
    let specs = match &args.spec {
        Some(path) => vec![load_manifest::<PhantomSpec>(path)?],
        None => {
            if args.count == 0 {
                return Err(CliError::Usage("--count must be at least 1".into()).into());
            }
            if args.validation + args.held_out >= args.count {
                return Err(CliError::Usage(format!(
                    "--validation {} and --held-out {} leave no training phantoms out of {}",
                    args.validation, args.held_out, args.count
                ))
                .into());
            }
            random_specs(args.count, args.shape, args.seed)
        }
    };
    create_dir(&args.output_dir)?;
    let entries = specs
        .iter()
        .enumerate()
        .map(|(k, spec)| write_subject(&args.output_dir, &format!("phantom_{k:03}"), spec, &args.raters))
        .collect::<Result<Vec<_>>>()?;
    let n_train = entries.len() - args.validation - args.held_out;
    let (train, rest) = entries.split_at(n_train);
    let (validation, held_out) = rest.split_at(args.validation);
    save_json(&Manifest { train, validation }, &args.output_dir.join("manifest.json"))?;
    if !held_out.is_empty() {
        save_json(&Subjects { subjects: held_out }, &args.output_dir.join("heldout.json"))?;
    }
    Ok(())
}
