//! Synthetic phantoms with known ground truth.
//!
//! A voxel belongs to the truth mask iff its center lies inside the analytic
//! primitive. Intensities are a foreground/background mean (the background
//! optionally ramped along x), plus Gaussian noise, clipped to `[0, 1]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask, ValueKind, Volume};

/// Minimum clearance between a primitive and the outermost voxel centers.
pub const MARGIN: f64 = 2.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Sphere { center: [f64; 3], radius: f64 },
    /// Axis-aligned ellipsoid.
    Ellipsoid { center: [f64; 3], radii: [f64; 3] },
    TwoBlob {
        centers: [[f64; 3]; 2],
        radii: [f64; 2],
    },
}

impl Primitive {
    fn contains(&self, p: [f64; 3]) -> bool {
        let in_ball = |c: [f64; 3], r: f64| (0..3).map(|a| (p[a] - c[a]).powi(2)).sum::<f64>() <= r * r;
        match *self {
            Primitive::Sphere { center, radius } => in_ball(center, radius),
            Primitive::Ellipsoid { center, radii } => {
                (0..3).map(|a| ((p[a] - center[a]) / radii[a]).powi(2)).sum::<f64>() <= 1.0
            }
            Primitive::TwoBlob { centers, radii } => {
                in_ball(centers[0], radii[0]) || in_ball(centers[1], radii[1])
            }
        }
    }

    /// Axis-aligned extents `(lo, hi)` per axis.
    fn extents(&self) -> Vec<([f64; 3], [f64; 3])> {
        let bounds = |c: [f64; 3], r: [f64; 3]| {
            ([c[0] - r[0], c[1] - r[1], c[2] - r[2]], [c[0] + r[0], c[1] + r[1], c[2] + r[2]])
        };
        match *self {
            Primitive::Sphere { center, radius } => vec![bounds(center, [radius; 3])],
            Primitive::Ellipsoid { center, radii } => vec![bounds(center, radii)],
            Primitive::TwoBlob { centers, radii } => vec![
                bounds(centers[0], [radii[0]; 3]),
                bounds(centers[1], [radii[1]; 3]),
            ],
        }
    }

    fn radii_positive(&self) -> bool {
        match self {
            Primitive::Sphere { radius, .. } => *radius > 0.0,
            Primitive::Ellipsoid { radii, .. } => radii.iter().all(|&r| r > 0.0),
            Primitive::TwoBlob { radii, .. } => radii.iter().all(|&r| r > 0.0),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub primitive: Primitive,
    pub foreground_mean: f64,
    pub background_mean: f64,
    pub noise_std: f64,
    /// Background intensity added linearly from 0 at x = 0 to this at the far edge.
    #[serde(default)]
    pub background_ramp: f64,
    pub seed: u64,
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<Geometry> {
        let geometry = Geometry::new(self.shape, self.spacing)?;
        if !self.primitive.radii_positive() {
            return Err(Error::InvalidParameter("primitive radii must be positive".into()));
        }
        for (lo, hi) in self.primitive.extents() {
            for a in 0..3 {
                let max = (self.shape[a] as f64 - 1.0) - MARGIN;
                if lo[a] < MARGIN || hi[a] > max {
                    return Err(Error::InvalidParameter(format!(
                        "primitive out of bounds: axis {a} spans [{}, {}] but must stay within [{MARGIN}, {max}]",
                        lo[a], hi[a]
                    )));
                }
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise std {} must be >= 0", self.noise_std)));
        }
        Ok(geometry)
    }
}

/// Rasterizes the primitive and synthesizes the intensity image.
pub fn generate(spec: &PhantomSpec) -> Result<(Volume, Mask)> {
    let geometry = spec.validate()?;
    let truth = Mask::from_fn(geometry, |x, y, z| {
        spec.primitive.contains([x as f64, y as f64, z as f64])
    });
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let span = (spec.shape[0].max(2) - 1) as f64;
    let intensity = Volume::from_fn(geometry, ValueKind::Intensity, |x, y, z| {
        let base = if truth.get(x, y, z) {
            spec.foreground_mean
        } else {
            spec.background_mean + spec.background_ramp * x as f64 / span
        };
        let eps = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        (base + eps).clamp(0.0, 1.0)
    })?;
    Ok((intensity, truth))
}

/// Simulated rater: keeps each foreground voxel with probability `p` and
/// flips each background voxel on with probability `1 - q`.
pub fn corrupt_rater(truth: &Mask, p: f64, q: f64, seed: u64) -> Result<Mask> {
    for (name, v) in [("p", p), ("q", q)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::InvalidParameter(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = truth
        .data()
        .iter()
        .map(|&t| {
            let u: f64 = rng.random();
            if t {
                u < p
            } else {
                u >= q
            }
        })
        .collect();
    Ok(Mask::new(data, *truth.geometry())?.with_orientation(truth.orientation().cloned()))
}

/// Randomized sphere/ellipsoid phantoms for training and evaluation. Each spec
/// draws a center jitter, radii, contrast, noise and background ramp from
/// `seed`; specs are independent of `count`.
pub fn random_specs(count: usize, shape: [usize; 3], seed: u64) -> Vec<PhantomSpec> {
    (0..count)
        .map(|k| random_spec(shape, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k as u64)))
        .collect()
}

fn random_spec(shape: [usize; 3], seed: u64) -> PhantomSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_min = shape.iter().copied().min().unwrap_or(1) as f64;
    // radii between 25% and 37.5% of the smallest extent, capped to fit the margin
    let r_hi = (0.375 * n_min).min((n_min - 1.0) / 2.0 - MARGIN);
    let r_lo = (0.25 * n_min).min(0.75 * r_hi);
    let ellipsoid = rng.random_bool(0.5);
    let radii: [f64; 3] = if ellipsoid {
        [0; 3].map(|_| rng.random_range(r_lo..r_hi))
    } else {
        [rng.random_range(r_lo..r_hi); 3]
    };
    let center: [f64; 3] = [0, 1, 2].map(|a| {
        let mid = (shape[a] as f64 - 1.0) / 2.0;
        let room = (mid - MARGIN - radii[a]).max(0.0);
        mid + rng.random_range(-1.0..=1.0) * room.min(2.0)
    });
    let primitive = if ellipsoid {
        Primitive::Ellipsoid { center, radii }
    } else {
        Primitive::Sphere { center, radius: radii[0] }
    };
    PhantomSpec {
        shape,
        spacing: [1.0; 3],
        primitive,
        foreground_mean: rng.random_range(0.6..0.85),
        background_mean: rng.random_range(0.1..0.3),
        noise_std: rng.random_range(0.02..0.08),
        background_ramp: rng.random_range(0.0..0.15),
        seed: rng.random(),
    }
}
