//! Overlap and surface-distance metrics between two masks.
//!
//! Surfaces are boundary voxel sets (see [`crate::sdt::boundary_voxels`]),
//! represented by voxel centers. Distances are physical (mm), via the exact
//! EDT with per-axis spacing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdt::{boundary_voxels, squared_distance_to_sites};
use crate::volume::Mask;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dsc: f64,
    pub assd_mm: f64,
    pub hd95_mm: f64,
    pub n_surface_pred: usize,
    pub n_surface_ref: usize,
}

/// Directed surface distances, each list in flat-index order of its source
/// surface.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceDistances {
    pub a_to_b: Vec<f64>,
    pub b_to_a: Vec<f64>,
}

/// `2|A ∩ B| / (|A| + |B|)`, or 1 when both masks are empty.
pub fn dice(a: &Mask, b: &Mask) -> Result<f64> {
    a.geometry().check_same(b.geometry())?;
    let (mut both, mut total) = (0usize, 0usize);
    for (&x, &y) in a.data().iter().zip(b.data()) {
        both += usize::from(x && y);
        total += usize::from(x) + usize::from(y);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * both as f64 / total as f64)
}

fn directed(from: &Mask, to_surface: &[f64]) -> Vec<f64> {
    boundary_voxels(from)
        .data()
        .iter()
        .zip(to_surface)
        .filter(|(&on, _)| on)
        .map(|(_, &d2)| d2.sqrt())
        .collect()
}

/// Distances from each surface voxel of `a` to the surface of `b`, and back.
pub fn surface_distances(a: &Mask, b: &Mask) -> Result<SurfaceDistances> {
    a.geometry().check_same(b.geometry())?;
    if !a.any() {
        return Err(Error::UndefinedSurfaceDistance("first"));
    }
    if !b.any() {
        return Err(Error::UndefinedSurfaceDistance("second"));
    }
    let spacing = a.spacing();
    let to_a = squared_distance_to_sites(boundary_voxels(a).data(), a.geometry(), spacing);
    let to_b = squared_distance_to_sites(boundary_voxels(b).data(), b.geometry(), spacing);
    Ok(SurfaceDistances {
        a_to_b: directed(a, &to_b),
        b_to_a: directed(b, &to_a),
    })
}

/// Percentile `q` in `[0, 1]` of an ascending list, interpolating linearly
/// between order statistics.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty list");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

impl SurfaceDistances {
    /// Mean of the pooled symmetric distance list.
    pub fn assd(&self) -> f64 {
        let sa: f64 = self.a_to_b.iter().sum();
        let sb: f64 = self.b_to_a.iter().sum();
        (sa + sb) / (self.a_to_b.len() + self.b_to_a.len()) as f64
    }

    /// Larger of the two directed 95th percentiles.
    pub fn hd95(&self) -> f64 {
        let pa = percentile(&sorted(&self.a_to_b), 0.95);
        let pb = percentile(&sorted(&self.b_to_a), 0.95);
        pa.max(pb)
    }
}

pub fn assd(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(surface_distances(a, b)?.assd())
}

pub fn hd95(a: &Mask, b: &Mask) -> Result<f64> {
    Ok(surface_distances(a, b)?.hd95())
}

/// All three metrics for a prediction against a reference.
pub fn evaluate(pred: &Mask, reference: &Mask) -> Result<MetricsReport> {
    let dsc = dice(pred, reference)?;
    let d = surface_distances(pred, reference)?;
    Ok(MetricsReport {
        dsc,
        assd_mm: d.assd(),
        hd95_mm: d.hd95(),
        n_surface_pred: d.a_to_b.len(),
        n_surface_ref: d.b_to_a.len(),
    })
}
