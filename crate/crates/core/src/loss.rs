//! Boundary-weighted squared error on signed distance volumes.
//!
//! ```text
//! L(y, ŷ) = Σ w_i (y_i - ŷ_i)² / Σ w_i,    w_i = exp(-α |r_i|) + β
//! ```
//!
//! where `r` is either the target `y` (default; the weights are then a fixed
//! schedule and the loss is convex in `ŷ`) or the prediction `ŷ`, in which
//! case the weights are differentiated too. All sums run in `f64`, in voxel
//! order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sdt::SdtVolume;
use crate::volume::{Mask, ValueKind, Volume};

/// Which volume the decay weights are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightSource {
    #[default]
    Target,
    Prediction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default)]
    pub weight_source: WeightSource,
}

fn default_alpha() -> f64 {
    0.1
}

fn default_beta() -> f64 {
    0.3
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: default_alpha(),
            beta: default_beta(),
            weight_source: WeightSource::Target,
        }
    }
}

impl LossConfig {
    pub fn new(alpha: f64, beta: f64, weight_source: WeightSource) -> Result<Self> {
        let cfg = Self {
            alpha,
            beta,
            weight_source,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be > 0, got {}", self.alpha)));
        }
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::InvalidParameter(format!("beta must be > 0, got {}", self.beta)));
        }
        Ok(())
    }

    #[inline]
    fn weight(&self, r: f64) -> f64 {
        (-self.alpha * r.abs()).exp() + self.beta
    }

    /// d w / d r, with the subgradient of |r| at zero taken as 0.
    #[inline]
    fn weight_slope(&self, r: f64) -> f64 {
        let sign = if r > 0.0 {
            1.0
        } else if r < 0.0 {
            -1.0
        } else {
            0.0
        };
        -self.alpha * sign * (-self.alpha * r.abs()).exp()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub value: f64,
    /// ∂L/∂ŷ in voxel order, present when requested.
    pub gradient: Option<Vec<f64>>,
    pub weight_sum: f64,
}

/// Elementwise decay weights `exp(-α |r|) + β`.
pub fn sdt_weights(reference: &SdtVolume, cfg: &LossConfig) -> Volume {
    let data = reference.data().iter().map(|&r| cfg.weight(r)).collect();
    Volume::new(data, *reference.geometry(), ValueKind::Intensity).expect("same geometry")
}

/// Weighted mean squared error between target `y` and prediction `yhat`.
pub fn sdt_loss(
    y: &SdtVolume,
    yhat: &SdtVolume,
    cfg: &LossConfig,
    want_gradient: bool,
) -> Result<LossReport> {
    y.geometry().check_shape(yhat.geometry())?;
    sdt_loss_slices(y.data(), yhat.data(), cfg, want_gradient)
}

pub(crate) fn sdt_loss_slices(
    y: &[f64],
    yhat: &[f64],
    cfg: &LossConfig,
    want_gradient: bool,
) -> Result<LossReport> {
    cfg.validate()?;
    if y.len() != yhat.len() {
        return Err(Error::InvalidShape(format!(
            "target has {} voxels, prediction {}",
            y.len(),
            yhat.len()
        )));
    }
    let source = match cfg.weight_source {
        WeightSource::Target => y,
        WeightSource::Prediction => yhat,
    };
    let mut numerator = 0.0;
    let mut weight_sum = 0.0;
    for ((&t, &p), &r) in y.iter().zip(yhat).zip(source) {
        let w = cfg.weight(r);
        let e = t - p;
        numerator += w * e * e;
        weight_sum += w;
    }
    let value = numerator / weight_sum;

    let gradient = want_gradient.then(|| {
        y.iter()
            .zip(yhat)
            .zip(source)
            .map(|((&t, &p), &r)| {
                let e = t - p;
                let w = cfg.weight(r);
                match cfg.weight_source {
                    WeightSource::Target => -2.0 * w * e / weight_sum,
                    WeightSource::Prediction => {
                        (cfg.weight_slope(p) * (e * e - value) - 2.0 * w * e) / weight_sum
                    }
                }
            })
            .collect()
    });

    Ok(LossReport {
        value,
        gradient,
        weight_sum,
    })
}

/// Soft Dice loss `1 - 2 Σ p t / (Σ p² + Σ t²)`; zero when both sums vanish.
pub fn soft_dice_loss(pred_prob: &Volume, truth: &Mask) -> Result<f64> {
    pred_prob.geometry().check_shape(truth.geometry())?;
    let mut overlap = 0.0;
    let mut pred_sq = 0.0;
    let mut truth_sq = 0.0;
    for (&p, &t) in pred_prob.data().iter().zip(truth.data()) {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidParameter(format!(
                "soft dice expects probabilities in [0, 1], got {p}"
            )));
        }
        if t {
            overlap += p;
            truth_sq += 1.0;
        }
        pred_sq += p * p;
    }
    let denom = pred_sq + truth_sq;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(1.0 - 2.0 * overlap / denom)
}
