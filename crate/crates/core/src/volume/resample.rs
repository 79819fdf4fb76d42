//! Factor-two resampling between the full and the half-resolution grid.
//!
//! Downsampled voxel `j` covers input voxels `2j` and `2j + 1` along each
//! axis, so its center sits at input coordinate `2j + 0.5`. Upsampling uses
//! the inverse of that mapping: output voxel `i` samples source coordinate
//! `i / 2 - 0.25`, clamped to the source extent.

use super::{Geometry, Mask, Volume};
use crate::error::{Error, Result};

/// Block-mean downsampling by two. Odd dimensions round up and the trailing
/// partial blocks average whatever voxels they contain.
pub fn downsample2(v: &Volume) -> Result<Volume> {
    let (geometry, data) = block_mean(v.geometry(), v.data())?;
    Volume::new(data, geometry, v.kind())
}

/// Downsamples a mask by block mean and re-binarizes at 0.5.
pub fn downsample2_mask(m: &Mask) -> Result<Mask> {
    let values: Vec<f64> = m.data().iter().map(|&b| f64::from(u8::from(b))).collect();
    let (geometry, data) = block_mean(m.geometry(), &values)?;
    Mask::new(data.into_iter().map(|p| p >= 0.5).collect(), geometry)
}

fn block_mean(geometry: &Geometry, data: &[f64]) -> Result<(Geometry, Vec<f64>)> {
    let shape = geometry.shape();
    if shape.iter().any(|&n| n < 2) {
        return Err(Error::InvalidShape(format!(
            "downsampling needs every dimension >= 2, got {shape:?}"
        )));
    }
    let out_shape = shape.map(|n| n.div_ceil(2));
    let spacing = geometry.spacing().map(|s| 2.0 * s);
    let out_geometry = Geometry::new(out_shape, spacing)?;

    let mut sums = vec![0.0; out_geometry.len()];
    let mut counts = vec![0u32; out_geometry.len()];
    let [nx, ny, nz] = shape;
    for z in 0..nz {
        for y in 0..ny {
            let row = geometry.index(0, y, z);
            let out_row = out_geometry.index(0, y / 2, z / 2);
            for x in 0..nx {
                sums[out_row + x / 2] += data[row + x];
                counts[out_row + x / 2] += 1;
            }
        }
    }
    let means = sums
        .into_iter()
        .zip(counts)
        .map(|(s, c)| s / f64::from(c))
        .collect();
    Ok((out_geometry, means))
}

/// Trilinear upsampling by two onto `target_shape`. Each target dimension
/// must be `2d - 1` or `2d` for source dimension `d`.
pub fn upsample2_trilinear(v: &Volume, target_shape: [usize; 3]) -> Result<Volume> {
    let source = v.shape();
    for axis in 0..3 {
        let d = source[axis];
        let t = target_shape[axis];
        if t + 1 < 2 * d || t > 2 * d {
            return Err(Error::InvalidShape(format!(
                "target shape {target_shape:?} is not a doubling of {source:?}"
            )));
        }
    }
    let target = Geometry::new(target_shape, v.spacing().map(|s| s / 2.0))?;

    // Trilinear interpolation factors into three 1D linear passes.
    let mut shape = source;
    let mut data = v.data().to_vec();
    for axis in 0..3 {
        let (next_shape, next) = upsample_axis(&data, shape, axis, target_shape[axis]);
        shape = next_shape;
        data = next;
    }
    Volume::new(data, target, v.kind())
}

/// Source sample pair and weight of the upper sample for output index `i`.
fn taps(i: usize, source_len: usize) -> (usize, usize, f64) {
    let t = i as f64 / 2.0 - 0.25;
    let last = (source_len - 1) as f64;
    if t <= 0.0 {
        return (0, 0, 0.0);
    }
    if t >= last {
        return (source_len - 1, source_len - 1, 0.0);
    }
    let lo = t.floor();
    (lo as usize, lo as usize + 1, t - lo)
}

#[inline]
fn lerp(a: f64, b: f64, w: f64) -> f64 {
    let v = a + w * (b - a);
    v.clamp(a.min(b), a.max(b))
}

fn upsample_axis(
    data: &[f64],
    shape: [usize; 3],
    axis: usize,
    out_len: usize,
) -> ([usize; 3], Vec<f64>) {
    let mut out_shape = shape;
    out_shape[axis] = out_len;
    let taps: Vec<_> = (0..out_len).map(|i| taps(i, shape[axis])).collect();
    let [nx, ny, _] = shape;
    let [ox, oy, oz] = out_shape;
    let mut out = Vec::with_capacity(ox * oy * oz);
    for z in 0..oz {
        for y in 0..oy {
            for x in 0..ox {
                let mut at = [x, y, z];
                let (lo, hi, w) = taps[at[axis]];
                at[axis] = lo;
                let a = data[at[0] + nx * (at[1] + ny * at[2])];
                at[axis] = hi;
                let b = data[at[0] + nx * (at[1] + ny * at[2])];
                out.push(lerp(a, b, w));
            }
        }
    }
    (out_shape, out)
}
