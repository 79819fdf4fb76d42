//! 3D grids and the geometry they share.
//!
//! Voxel data is stored flat in x-fastest order: the voxel at `(x, y, z)`
//! lives at `x + nx * (y + ny * z)`. A [`Mask`] is the binary counterpart of
//! a [`Volume`] and carries the same geometry.

mod nifti;
mod resample;

pub use nifti::{read_mask, read_volume, write_mask, write_volume, Orientation};
pub use resample::{downsample2, downsample2_mask, upsample2_trilinear};

use crate::error::{Error, Result};

/// Shape (voxels) and spacing (mm per voxel) of a grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Geometry {
    shape: [usize; 3],
    spacing: [f64; 3],
}

impl Geometry {
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "every dimension must be positive, got {shape:?}"
            )));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidParameter(format!(
                "spacing must be finite and strictly positive, got {spacing:?}"
            )));
        }
        Ok(Self { shape, spacing })
    }

    /// Unit-spacing geometry.
    pub fn isotropic(shape: [usize; 3]) -> Result<Self> {
        Self::new(shape, [1.0; 3])
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, index: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape;
        [index % nx, (index / nx) % ny, index / (nx * ny)]
    }

    /// True when the voxel lies on the outer face of the grid.
    #[inline]
    pub fn on_border(&self, index: usize) -> bool {
        let c = self.coords(index);
        (0..3).any(|a| c[a] == 0 || c[a] + 1 == self.shape[a])
    }

    /// Fails with a shape mismatch when `other` has a different shape.
    pub fn check_shape(&self, other: &Geometry) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: other.shape,
            });
        }
        Ok(())
    }

    /// Fails unless shape and spacing both match.
    pub fn check_same(&self, other: &Geometry) -> Result<()> {
        self.check_shape(other)?;
        let close = self
            .spacing
            .iter()
            .zip(other.spacing.iter())
            .all(|(a, b)| (a - b).abs() <= 1e-6 * a.abs().max(b.abs()));
        if !close {
            return Err(Error::GeometryMismatch(format!(
                "spacing {:?} vs {:?}",
                self.spacing, other.spacing
            )));
        }
        Ok(())
    }
}

/// What the scalar values of a [`Volume`] represent.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValueKind {
    Intensity,
    Distance,
    Probability,
}

/// A real-valued 3D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Vec<f64>,
    geometry: Geometry,
    kind: ValueKind,
    orientation: Option<Orientation>,
}

impl Volume {
    pub fn new(data: Vec<f64>, geometry: Geometry, kind: ValueKind) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidShape(format!(
                "data length {} does not match shape {:?}",
                data.len(),
                geometry.shape()
            )));
        }
        if kind == ValueKind::Probability {
            if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::InvalidParameter(format!(
                    "probability volume contains value {v} outside [0, 1]"
                )));
            }
        }
        Ok(Self {
            data,
            geometry,
            kind,
            orientation: None,
        })
    }

    pub fn filled(geometry: Geometry, value: f64, kind: ValueKind) -> Result<Self> {
        Self::new(vec![value; geometry.len()], geometry, kind)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        geometry: Geometry,
        kind: ValueKind,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let [nx, ny, nz] = geometry.shape();
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(data, geometry, kind)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn kind(&self) -> ValueKind {
        self.kind
    }

    pub fn orientation(&self) -> Option<&Orientation> {
        self.orientation.as_ref()
    }

    pub fn with_orientation(mut self, orientation: Option<Orientation>) -> Self {
        self.orientation = orientation;
        self
    }

    /// Reinterprets the values, re-validating the kind's invariants.
    pub fn with_kind(self, kind: ValueKind) -> Result<Self> {
        let orientation = self.orientation;
        Ok(Self::new(self.data, self.geometry, kind)?.with_orientation(orientation))
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.geometry.index(x, y, z)]
    }

    /// `(min, max)` over all voxels.
    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// A binary 3D grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    data: Vec<bool>,
    geometry: Geometry,
    orientation: Option<Orientation>,
}

impl Mask {
    pub fn new(data: Vec<bool>, geometry: Geometry) -> Result<Self> {
        if data.len() != geometry.len() {
            return Err(Error::InvalidShape(format!(
                "mask length {} does not match shape {:?}",
                data.len(),
                geometry.shape()
            )));
        }
        Ok(Self {
            data,
            geometry,
            orientation: None,
        })
    }

    pub fn empty(geometry: Geometry) -> Self {
        Self {
            data: vec![false; geometry.len()],
            geometry,
            orientation: None,
        }
    }

    pub fn from_fn(geometry: Geometry, mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let [nx, ny, nz] = geometry.shape();
        let mut data = Vec::with_capacity(geometry.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self {
            data,
            geometry,
            orientation: None,
        }
    }

    /// Accepts a volume whose values are all exactly 0 or 1.
    pub fn from_binary_volume(volume: &Volume) -> Result<Self> {
        let mut data = Vec::with_capacity(volume.len());
        for (index, &value) in volume.data().iter().enumerate() {
            if value == 0.0 {
                data.push(false);
            } else if value == 1.0 {
                data.push(true);
            } else {
                return Err(Error::NotBinary { index, value });
            }
        }
        Ok(Self {
            data,
            geometry: *volume.geometry(),
            orientation: volume.orientation().cloned(),
        })
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn into_data(self) -> Vec<bool> {
        self.data
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn shape(&self) -> [usize; 3] {
        self.geometry.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.geometry.spacing
    }

    pub fn orientation(&self) -> Option<&Orientation> {
        self.orientation.as_ref()
    }

    pub fn with_orientation(mut self, orientation: Option<Orientation>) -> Self {
        self.orientation = orientation;
        self
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[self.geometry.index(x, y, z)]
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn any(&self) -> bool {
        self.data.iter().any(|&b| b)
    }

    pub fn all(&self) -> bool {
        self.data.iter().all(|&b| b)
    }

    pub fn complement(&self) -> Mask {
        Mask {
            data: self.data.iter().map(|&b| !b).collect(),
            geometry: self.geometry,
            orientation: self.orientation.clone(),
        }
    }

    /// 0/1 probability volume with the same geometry.
    pub fn to_volume(&self) -> Volume {
        Volume {
            data: self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            geometry: self.geometry,
            kind: ValueKind::Probability,
            orientation: self.orientation.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Affine rescale of intensities onto `[0, 1]`.
pub fn normalize_intensities(v: &Volume) -> Result<Volume> {
    if v.kind() != ValueKind::Intensity {
        return Err(Error::InvalidParameter(format!(
            "normalize_intensities expects an intensity volume, got {:?}",
            v.kind()
        )));
    }
    let (lo, hi) = v.min_max();
    if !(hi > lo) || !(hi - lo).is_finite() {
        return Err(Error::DegenerateIntensity);
    }
    let range = hi - lo;
    let data = v.data().iter().map(|&x| (x - lo) / range).collect();
    Ok(Volume::new(data, *v.geometry(), ValueKind::Intensity)?
        .with_orientation(v.orientation().cloned()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(values: &[f64]) -> Volume {
        let g = Geometry::isotropic([values.len(), 1, 1]).unwrap();
        Volume::new(values.to_vec(), g, ValueKind::Intensity).unwrap()
    }

    #[test]
    fn normalize_affine_endpoints() {
        let out = normalize_intensities(&line(&[2.0, 4.0, 6.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.5, 1.0]);
    }

    #[test]
    fn normalize_unit_range_is_identity() {
        let values = [0.0, 0.3, 0.7, 1.0];
        let out = normalize_intensities(&line(&values)).unwrap();
        assert_eq!(out.data(), &values);
    }

    #[test]
    fn normalize_negative_values() {
        let out = normalize_intensities(&line(&[-1.0, 0.0, 3.0])).unwrap();
        assert_eq!(out.data(), &[0.0, 0.25, 1.0]);
    }

    #[test]
    fn normalize_constant_is_degenerate() {
        let err = normalize_intensities(&line(&[5.0, 5.0, 5.0])).unwrap_err();
        assert!(matches!(err, Error::DegenerateIntensity));
        assert!(err.to_string().contains("degenerate intensity range"));
    }

    #[test]
    fn probability_kind_is_range_checked() {
        let g = Geometry::isotropic([2, 1, 1]).unwrap();
        assert!(Volume::new(vec![0.0, 1.5], g, ValueKind::Probability).is_err());
        assert!(Volume::new(vec![0.0, 1.0], g, ValueKind::Probability).is_ok());
    }

    #[test]
    fn geometry_rejects_bad_spacing_and_length() {
        assert!(Geometry::new([2, 2, 2], [1.0, 0.0, 1.0]).is_err());
        assert!(Geometry::new([2, 0, 2], [1.0; 3]).is_err());
        let g = Geometry::isotropic([2, 2, 2]).unwrap();
        assert!(Volume::new(vec![0.0; 7], g, ValueKind::Intensity).is_err());
    }

    #[test]
    fn index_and_coords_agree() {
        let g = Geometry::isotropic([3, 4, 5]).unwrap();
        for i in 0..g.len() {
            let [x, y, z] = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn binary_volume_roundtrip() {
        let g = Geometry::isotropic([3, 1, 1]).unwrap();
        let v = Volume::new(vec![0.0, 1.0, 1.0], g, ValueKind::Intensity).unwrap();
        let m = Mask::from_binary_volume(&v).unwrap();
        assert_eq!(m.count(), 2);
        let bad = Volume::new(vec![0.0, 0.5, 1.0], g, ValueKind::Intensity).unwrap();
        assert!(matches!(
            Mask::from_binary_volume(&bad),
            Err(Error::NotBinary { index: 1, .. })
        ));
    }
}
