//! Exact Euclidean distance transforms and the signed distance volume.
//!
//! Squared distances come from the separable lower-envelope transform: one
//! 1D pass per axis, each computing the lower envelope of the parabolas
//! rooted at the previous pass's values. With unit spacing every
//! intermediate value is an integer, so results are exact.
//!
//! The signed distance is measured to the *boundary voxel set*: foreground
//! voxels with a 6-neighbour in the background, where anything beyond the
//! grid counts as background. Boundary voxels are exactly zero, interior
//! voxels positive, exterior voxels negative.

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask, ValueKind, Volume};

/// Signed distances in voxel units of the grid they were computed on.
#[derive(Clone, Debug, PartialEq)]
pub struct SdtVolume(Volume);

impl SdtVolume {
    /// Wraps real values as signed distances.
    pub fn from_volume(volume: Volume) -> Result<Self> {
        Ok(Self(volume.with_kind(ValueKind::Distance)?))
    }

    pub fn as_volume(&self) -> &Volume {
        &self.0
    }

    pub fn into_volume(self) -> Volume {
        self.0
    }

    pub fn data(&self) -> &[f64] {
        self.0.data()
    }

    pub fn geometry(&self) -> &Geometry {
        self.0.geometry()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.0.shape()
    }
}

impl AsRef<Volume> for SdtVolume {
    fn as_ref(&self) -> &Volume {
        &self.0
    }
}

impl AsRef<Volume> for Volume {
    fn as_ref(&self) -> &Volume {
        self
    }
}

/// Squared distance to the nearest site, scaling axis `a` by `spacing[a]`.
/// Voxels of a site-free grid get `f64::INFINITY`.
pub(crate) fn squared_distance_to_sites(
    sites: &[bool],
    geometry: &Geometry,
    spacing: [f64; 3],
) -> Vec<f64> {
    let mut field: Vec<f64> = sites
        .iter()
        .map(|&s| if s { 0.0 } else { f64::INFINITY })
        .collect();
    let shape = geometry.shape();
    let strides = [1, shape[0], shape[0] * shape[1]];
    let n_max = shape.iter().copied().max().unwrap_or(0);
    let mut line = vec![0.0; n_max];
    let mut out = vec![0.0; n_max];
    let mut envelope = Envelope::with_capacity(n_max);

    for axis in 0..3 {
        let n = shape[axis];
        let stride = strides[axis];
        let weight = spacing[axis] * spacing[axis];
        for start in line_starts(shape, axis) {
            for (i, slot) in line[..n].iter_mut().enumerate() {
                *slot = field[start + i * stride];
            }
            envelope.transform(&line[..n], weight, &mut out[..n]);
            for (i, &v) in out[..n].iter().enumerate() {
                field[start + i * stride] = v;
            }
        }
    }
    field
}

/// Flat offsets of the first voxel of every line running along `axis`.
fn line_starts(shape: [usize; 3], axis: usize) -> impl Iterator<Item = usize> {
    let [nx, ny, nz] = shape;
    let (ra, rb) = match axis {
        0 => (ny, nz),
        1 => (nx, nz),
        _ => (nx, ny),
    };
    (0..rb).flat_map(move |b| {
        (0..ra).map(move |a| match axis {
            0 => nx * (a + ny * b),
            1 => a + nx * ny * b,
            _ => a + nx * b,
        })
    })
}

/// Scratch space for the 1D lower envelope of parabolas.
struct Envelope {
    roots: Vec<usize>,
    bounds: Vec<f64>,
}

impl Envelope {
    fn with_capacity(n: usize) -> Self {
        Self {
            roots: Vec::with_capacity(n),
            bounds: Vec::with_capacity(n),
        }
    }

    /// `out[q] = min_p f[p] + weight * (q - p)^2`, skipping infinite `f[p]`.
    fn transform(&mut self, f: &[f64], weight: f64, out: &mut [f64]) {
        self.roots.clear();
        self.bounds.clear();
        for (q, &fq) in f.iter().enumerate() {
            if !fq.is_finite() {
                continue;
            }
            let hq = fq + weight * (q * q) as f64;
            let mut bound = f64::NEG_INFINITY;
            while let Some(&p) = self.roots.last() {
                let hp = f[p] + weight * (p * p) as f64;
                let s = (hq - hp) / (2.0 * weight * (q - p) as f64);
                if s <= *self.bounds.last().unwrap() {
                    self.roots.pop();
                    self.bounds.pop();
                } else {
                    bound = s;
                    break;
                }
            }
            self.roots.push(q);
            self.bounds.push(bound);
        }
        if self.roots.is_empty() {
            out.fill(f64::INFINITY);
            return;
        }
        let mut k = 0;
        for (q, slot) in out.iter_mut().enumerate() {
            while k + 1 < self.roots.len() && self.bounds[k + 1] < q as f64 {
                k += 1;
            }
            let p = self.roots[k];
            let d = q.abs_diff(p) as f64;
            *slot = f[p] + weight * d * d;
        }
    }
}

/// Squared Euclidean distance (voxel units) to the nearest foreground voxel.
pub fn edt_squared(foreground: &Mask) -> Result<Volume> {
    if !foreground.any() {
        return Err(Error::NoForeground);
    }
    let d2 = squared_distance_to_sites(foreground.data(), foreground.geometry(), [1.0; 3]);
    Volume::new(d2, *foreground.geometry(), ValueKind::Distance)
}

/// Foreground voxels that touch the background (or the grid edge) through a face.
pub fn boundary_voxels(mask: &Mask) -> Mask {
    let g = *mask.geometry();
    let [nx, ny, nz] = g.shape();
    let data = mask.data();
    let mut out = vec![false; data.len()];
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = g.index(x, y, z);
                if !data[i] {
                    continue;
                }
                out[i] = x == 0
                    || y == 0
                    || z == 0
                    || x + 1 == nx
                    || y + 1 == ny
                    || z + 1 == nz
                    || !data[i - 1]
                    || !data[i + 1]
                    || !data[i - nx]
                    || !data[i + nx]
                    || !data[i - nx * ny]
                    || !data[i + nx * ny];
            }
        }
    }
    Mask::new(out, g).expect("same geometry").with_orientation(mask.orientation().cloned())
}

/// Signed distance to the mask boundary: positive inside, zero on the
/// boundary, negative outside.
pub fn signed_distance(mask: &Mask) -> Result<SdtVolume> {
    if !mask.any() || mask.all() {
        return Err(Error::DegenerateMask);
    }
    let boundary = boundary_voxels(mask);
    let d2 = squared_distance_to_sites(boundary.data(), mask.geometry(), [1.0; 3]);
    let data = d2
        .into_iter()
        .zip(mask.data())
        .map(|(d2, &inside)| {
            let d = d2.sqrt();
            if inside {
                d
            } else {
                -d
            }
        })
        .collect();
    let volume = Volume::new(data, *mask.geometry(), ValueKind::Distance)?
        .with_orientation(mask.orientation().cloned());
    Ok(SdtVolume(volume))
}

/// Foreground wherever the value is at least `tau`.
pub fn threshold_to_mask(values: impl AsRef<Volume>, tau: f64) -> Mask {
    let v = values.as_ref();
    let data = v.data().iter().map(|&x| x >= tau).collect();
    Mask::new(data, *v.geometry())
        .expect("same geometry")
        .with_orientation(v.orientation().cloned())
}
