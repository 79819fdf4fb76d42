use super::network::{forward, NetworkParams};
use crate::error::{Error, Result};
use crate::morphology::{postprocess, Connectivity};
use crate::sdt::threshold_to_mask;
use crate::volume::{downsample2, normalize_intensities, upsample2_trilinear, Mask, ValueKind, Volume};

/// Foreground connectivity for keeping the largest component.
pub const KEEP_CONNECTIVITY: Connectivity = Connectivity::TwentySix;
/// Background connectivity for hole filling.
pub const FILL_CONNECTIVITY: Connectivity = Connectivity::Six;

#[derive(Clone, Debug, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    /// Set when nothing survived thresholding; `mask` is then all background.
    pub empty: bool,
}

/// Full-resolution predicted signed distance: normalize, downsample, run the
/// network, upsample back to the input shape. A constant image normalizes to
/// all zeros.
pub fn predict_sdt(params: &NetworkParams, image: &Volume) -> Result<Volume> {
    let normalized = match normalize_intensities(image) {
        Ok(v) => v,
        Err(Error::DegenerateIntensity) => Volume::filled(*image.geometry(), 0.0, ValueKind::Intensity)?,
        Err(e) => return Err(e),
    };
    let coarse = forward(params, &downsample2(&normalized)?)?;
    let fine = upsample2_trilinear(coarse.as_volume(), image.shape())?;
    // resampling round-trips spacing only up to rounding
    Ok(Volume::new(fine.into_data(), *image.geometry(), ValueKind::Distance)?
        .with_orientation(image.orientation().cloned()))
}

/// Thresholds at `tau`, keeps the largest component, fills holes.
pub fn segment_sdt(sdt: &Volume, tau: f64) -> Result<Segmentation> {
    let raw = threshold_to_mask(sdt, tau);
    match postprocess(&raw, KEEP_CONNECTIVITY, FILL_CONNECTIVITY) {
        Ok(mask) => Ok(Segmentation { mask, empty: false }),
        Err(Error::EmptyMask) => Ok(Segmentation { mask: raw, empty: true }),
        Err(e) => Err(e),
    }
}

pub fn infer(params: &NetworkParams, image: &Volume, tau: f64) -> Result<Segmentation> {
    segment_sdt(&predict_sdt(params, image)?, tau)
}
