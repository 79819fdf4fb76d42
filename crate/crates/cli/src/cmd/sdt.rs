use std::path::PathBuf;

use anyhow::Result;

use sdtseg::signed_distance;
use sdtseg::volume::downsample2_mask;

use crate::files::{ensure_distinct, load_mask, save_volume};

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Binary mask (NIfTI).
    pub mask: PathBuf,
    /// Output float32 distance volume; positive inside, zero on the boundary.
    #[arg(short, long)]
    pub output: PathBuf,
    /// Compute on the half-resolution grid the network is trained on.
    #[arg(long)]
    pub downsample: bool,
}

pub fn run(args: Args) -> Result<()> {
    ensure_distinct(&[&args.mask], &[&args.output])?;
    let mut mask = load_mask(&args.mask)?;
    if args.downsample {
        mask = downsample2_mask(&mask)?;
    }
    let sdt = signed_distance(&mask)?;
    save_volume(sdt.as_volume(), &args.output)
}
