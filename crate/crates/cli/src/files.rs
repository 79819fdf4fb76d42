use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::Serialize;

use sdtseg::volume::{read_mask, read_volume, write_mask, write_volume};
use sdtseg::{Mask, Volume};

use crate::exit::CliError;

/// Writes through a sibling temporary file and renames it into place, so a
/// reader never observes a partial output. The temporary name ends with the
/// final file name, which keeps `.nii.gz` detection intact.
pub fn atomic_write(path: &Path, write: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| CliError::Usage(format!("output path {} has no file name", path.display())))?;
    let tmp = tempfile::Builder::new()
        .prefix(".partial-")
        .suffix(name)
        .tempfile_in(dir)
        .with_context(|| format!("creating a temporary file in {}", dir.display()))?
        .into_temp_path();
    write(&tmp)?;
    tmp.persist(path).map_err(|e| e.error).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

pub fn save_volume(v: &Volume, path: &Path) -> Result<()> {
    atomic_write(path, |tmp| Ok(write_volume(v, tmp)?)).with_context(|| format!("writing {}", path.display()))
}

pub fn save_mask(m: &Mask, path: &Path) -> Result<()> {
    atomic_write(path, |tmp| Ok(write_mask(m, tmp)?)).with_context(|| format!("writing {}", path.display()))
}

pub fn save_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, |tmp| Ok(fs::write(tmp, &text)?)).with_context(|| format!("writing {}", path.display()))
}

pub fn save_text(text: &str, path: &Path) -> Result<()> {
    atomic_write(path, |tmp| Ok(fs::write(tmp, text)?)).with_context(|| format!("writing {}", path.display()))
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    read_volume(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_mask(path: &Path) -> Result<Mask> {
    read_mask(path).with_context(|| format!("reading {}", path.display()))
}

/// Parses a JSON manifest through `T`.
pub fn load_manifest<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Manifest(format!("{}: {e}", path.display())))
        .map_err(Into::into)
}

/// Manifest entries are resolved against the manifest's own directory.
pub fn resolve(manifest: &Path, entry: &Path) -> PathBuf {
    if entry.is_absolute() {
        return entry.to_path_buf();
    }
    manifest.parent().map_or_else(|| entry.to_path_buf(), |d| d.join(entry))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    }
}

/// Refuses to write any output over one of the inputs.
pub fn ensure_distinct(inputs: &[&Path], outputs: &[&Path]) -> Result<()> {
    for out in outputs {
        if let Some(input) = inputs.iter().find(|i| same_file(i, out)) {
            return Err(CliError::Usage(format!(
                "output {} would overwrite input {}",
                out.display(),
                input.display()
            ))
            .into());
        }
    }
    Ok(())
}

/// Output name for `input` inside `dir`, with `suffix` inserted before the
/// NIfTI extension: `a/b.nii.gz` → `dir/b_mask.nii.gz`.
pub fn derived_name(dir: &Path, input: &Path, suffix: &str) -> PathBuf {
    let name = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let (stem, ext) = split_nifti_name(&name);
    dir.join(format!("{stem}{suffix}{ext}"))
}

/// Splits `x.nii.gz` into (`x`, `.nii.gz`); names without a NIfTI
/// extension get `.nii.gz`.
pub fn split_nifti_name(name: &str) -> (&str, &str) {
    for ext in [".nii.gz", ".nii", ".hdr.gz", ".hdr"] {
        if let Some(stem) = name.strip_suffix(ext) {
            return (stem, &name[stem.len()..]);
        }
    }
    (name, ".nii.gz")
}
