use std::path::PathBuf;

use anyhow::Result;

use sdtseg::morphology::postprocess;
use sdtseg::Connectivity;

use crate::files::{ensure_distinct, load_mask, save_mask};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Binary mask (NIfTI).
    pub mask: PathBuf,
    #[arg(short, long)]
    pub output: PathBuf,
    /// Foreground connectivity for the largest component (6 or 26).
    #[arg(long, default_value = "26", value_parser = connectivity)]
    pub keep: Connectivity,
    /// Background connectivity for hole filling (6 or 26).
    #[arg(long, default_value = "6", value_parser = connectivity)]
    pub fill: Connectivity,
}

pub fn run(args: Args) -> Result<()> {
    ensure_distinct(&[&args.mask], &[&args.output])?;
    let mask = load_mask(&args.mask)?;
    save_mask(&postprocess(&mask, args.keep, args.fill)?, &args.output)
}

fn connectivity(s: &str) -> Result<Connectivity, String> {
    let n: u32 = s.parse().map_err(|_| format!("{s:?} is not a neighbour count"))?;
    Connectivity::from_count(n).map_err(|e| e.to_string())
}
