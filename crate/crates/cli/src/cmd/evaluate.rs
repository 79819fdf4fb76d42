use std::path::PathBuf;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use sdtseg::{dice, evaluate, Error};

use super::parallel_map;
use crate::exit::CliError;
use crate::files::{ensure_distinct, load_manifest, load_mask, resolve, save_json};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// JSON manifest {"subjects": [{"id", "pred", "ref"}, ...]}.
    #[arg(short, long, required_unless_present_all = ["pred", "reference"], conflicts_with_all = ["pred", "reference"])]
    pub manifest: Option<PathBuf>,
    /// Single predicted mask.
    #[arg(long, requires = "reference")]
    pub pred: Option<PathBuf>,
    /// Single reference mask.
    #[arg(long = "ref", requires = "pred")]
    pub reference: Option<PathBuf>,
    /// Report file; stdout when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Method label in the report.
    #[arg(long, default_value = "sdtseg")]
    pub method: String,
    /// Subjects scored concurrently.
    #[arg(short, long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Pair {
    id: String,
    pred: PathBuf,
    #[serde(rename = "ref")]
    reference: PathBuf,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    subjects: Vec<Pair>,
}

#[derive(Serialize, Debug)]
pub struct SubjectRow {
    pub id: String,
    pub dsc_pct: f64,
    /// Absent when either surface is empty.
    pub assd_mm: Option<f64>,
    pub hd95_mm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Mean and sample standard deviation over the subjects where the metric is
/// defined.
#[derive(Serialize, Debug, PartialEq)]
pub struct Summary {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n: usize,
}

impl Summary {
    pub fn of(values: impl Iterator<Item = Option<f64>>) -> Self {
        let v: Vec<f64> = values.flatten().collect();
        let n = v.len();
        if n == 0 {
            return Summary { mean: None, std: None, n };
        }
        let mean = v.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Summary { mean: Some(mean), std, n }
    }
}

#[derive(Serialize, Debug)]
struct Metrics {
    dsc_pct: Summary,
    assd_mm: Summary,
    hd95_mm: Summary,
}

#[derive(Serialize, Debug)]
struct Report {
    schema_version: u32,
    method: String,
    subjects: Vec<SubjectRow>,
    summary: Metrics,
}

fn score(pair: &Pair) -> Result<SubjectRow> {
    let pred = load_mask(&pair.pred)?;
    let reference = load_mask(&pair.reference)?;
    let context = || format!("scoring {}", pair.id);
    match evaluate(&pred, &reference) {
        Ok(r) => Ok(SubjectRow {
            id: pair.id.clone(),
            dsc_pct: 100.0 * r.dsc,
            assd_mm: Some(r.assd_mm),
            hd95_mm: Some(r.hd95_mm),
            note: None,
        }),
        Err(e @ Error::UndefinedSurfaceDistance(_)) => Ok(SubjectRow {
            id: pair.id.clone(),
            dsc_pct: 100.0 * dice(&pred, &reference).with_context(context)?,
            assd_mm: None,
            hd95_mm: None,
            note: Some(e.to_string()),
        }),
        Err(e) => Err(anyhow::Error::from(e).context(context())),
    }
}

pub fn run(args: Args) -> Result<()> {
    let pairs = match (&args.manifest, &args.pred, &args.reference) {
        (Some(path), _, _) => {
            let manifest: Manifest = load_manifest(path)?;
            manifest
                .subjects
                .into_iter()
                .map(|p| Pair { pred: resolve(path, &p.pred), reference: resolve(path, &p.reference), id: p.id })
                .collect()
        }
        (None, Some(pred), Some(reference)) => {
            let id = pred.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            vec![Pair { id, pred: pred.clone(), reference: reference.clone() }]
        }
        _ => return Err(CliError::Usage("give --manifest or both --pred and --ref".into()).into()),
    };
    if let Some(out) = &args.output {
        let inputs: Vec<&std::path::Path> = pairs.iter().flat_map(|p| [p.pred.as_path(), p.reference.as_path()]).collect();
        let mut inputs = inputs;
        inputs.extend(args.manifest.as_deref());
        ensure_distinct(&inputs, &[out])?;
    }
    let subjects = parallel_map(&pairs, args.jobs, score)?;
    let summary = Metrics {
        dsc_pct: Summary::of(subjects.iter().map(|s| Some(s.dsc_pct))),
        assd_mm: Summary::of(subjects.iter().map(|s| s.assd_mm)),
        hd95_mm: Summary::of(subjects.iter().map(|s| s.hd95_mm)),
    };
    let report = Report { schema_version: SCHEMA_VERSION, method: args.method, subjects, summary };
    match &args.output {
        Some(path) => save_json(&report, path),
        None => {
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_uses_sample_std_over_defined_values() {
        let s = Summary::of([Some(1.0), None, Some(3.0)].into_iter());
        assert_eq!(s, Summary { mean: Some(2.0), std: Some(2f64.sqrt()), n: 2 });
        assert_eq!(Summary::of([Some(5.0)].into_iter()).std, None);
        assert_eq!(Summary::of([None].into_iter()).mean, None);
    }
}
