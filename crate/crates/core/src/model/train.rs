use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward, forward_trace, NetworkParams};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::loss::{sdt_loss_slices, LossConfig};
use crate::metrics::dice;
use crate::sdt::{signed_distance, threshold_to_mask, SdtVolume};
use crate::volume::{downsample2, downsample2_mask, normalize_intensities, Mask, Volume};

/// RNG stream used for epoch shuffling; stream 0 seeds the weights.
pub(crate) const SHUFFLE_STREAM: u64 = 1;

/// A normalized half-resolution image and its signed distance target.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub image: Volume,
    pub target: SdtVolume,
}

impl TrainingPair {
    pub fn new(image: Volume, target: SdtVolume) -> Result<Self> {
        image.geometry().check_shape(target.geometry())?;
        Ok(TrainingPair { image, target })
    }
}

/// Normalizes and downsamples the image; downsamples the truth mask and
/// takes its signed distance on the coarse grid.
pub fn prepare_pair(image: &Volume, truth: &Mask) -> Result<TrainingPair> {
    image.geometry().check_same(truth.geometry())?;
    let image = downsample2(&normalize_intensities(image)?)?;
    let target = signed_distance(&downsample2_mask(truth)?)?;
    TrainingPair::new(image, target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { learning_rate: 1e-3, batch_size: 2, epochs: 200, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be finite and >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return bad(format!("epsilon must be positive, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Adam moments with bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize) -> Self {
        Adam { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], cfg: &TrainConfig) {
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for (((p, &g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
            *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
            *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_dice: f64,
    pub best_validation_dice: f64,
    pub improved: bool,
}

#[derive(Clone, Debug)]
pub struct TrainState {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Parameters after the latest step.
    pub params: NetworkParams,
    /// Parameters at the best validation Dice so far.
    pub best_params: NetworkParams,
    pub optimizer: Adam,
    pub epoch: usize,
    /// In `[0, 1]`, never decreasing.
    pub best_validation_dice: f64,
    pub best_epoch: Option<usize>,
    pub history: Vec<EpochRecord>,
    pub(crate) rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(net: &NetConfig, train: &TrainConfig, loss: &LossConfig) -> Result<Self> {
        train.validate()?;
        loss.validate()?;
        let params = NetworkParams::init(net)?;
        let mut rng = ChaCha8Rng::seed_from_u64(net.seed);
        rng.set_stream(SHUFFLE_STREAM);
        Ok(TrainState {
            net: net.clone(),
            train: train.clone(),
            loss: *loss,
            optimizer: Adam::new(params.len()),
            best_params: params.clone(),
            params,
            epoch: 0,
            best_validation_dice: 0.0,
            best_epoch: None,
            history: Vec::new(),
            rng,
        })
    }

    /// Position of the shuffle generator, for exact resumption.
    pub fn rng_word_pos(&self) -> u128 {
        self.rng.get_word_pos()
    }

    pub(crate) fn set_rng_word_pos(&mut self, pos: u128) {
        self.rng.set_word_pos(pos);
    }

    /// One pass over `training` in shuffled mini-batches, then validation.
    /// Validation falls back to the training pairs when none are given.
    pub fn run_epoch(&mut self, training: &[TrainingPair], validation: &[TrainingPair]) -> Result<EpochRecord> {
        check_dataset(training, validation)?;
        let epoch = self.epoch + 1;
        let mut order: Vec<usize> = (0..training.len()).collect();
        order.shuffle(&mut self.rng);
        let mut losses = vec![0.0; training.len()];
        let mut grad = vec![0.0; self.params.len()];
        for batch in order.chunks(self.train.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                let pair = &training[i];
                let (out, trace) = forward_trace(&self.params, &pair.image)?;
                let report = sdt_loss_slices(pair.target.data(), out.data(), &self.loss, true)?;
                if !report.value.is_finite() {
                    return Err(Error::Divergence { epoch, loss: report.value });
                }
                trace.backward(&self.params, report.gradient.as_deref().expect("requested"), &mut grad)?;
                losses[i] = report.value;
            }
            let scale = 1.0 / batch.len() as f64;
            grad.iter_mut().for_each(|g| *g *= scale);
            if let Some(g) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Divergence { epoch, loss: *g });
            }
            self.optimizer.update(self.params.values_mut(), &grad, &self.train);
        }
        let train_loss = losses.iter().sum::<f64>() / losses.len() as f64;
        let set = if validation.is_empty() { training } else { validation };
        let validation_dice = validation_dice(&self.params, set)?;
        let improved = self.best_epoch.is_none() || validation_dice > self.best_validation_dice;
        if improved {
            self.best_params = self.params.clone();
            self.best_validation_dice = validation_dice;
            self.best_epoch = Some(epoch);
        }
        self.epoch = epoch;
        let record = EpochRecord {
            epoch,
            train_loss,
            validation_dice,
            best_validation_dice: self.best_validation_dice,
            improved,
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.6}, validation dice {validation_dice:.4}{}",
            if improved { " (best)" } else { "" }
        );
        self.history.push(record.clone());
        Ok(record)
    }
}

fn check_dataset(training: &[TrainingPair], validation: &[TrainingPair]) -> Result<()> {
    if training.is_empty() {
        return Err(Error::InvalidParameter("training set is empty".into()));
    }
    for pair in training.iter().chain(validation) {
        pair.image.geometry().check_shape(pair.target.geometry())?;
    }
    Ok(())
}

/// Mean Dice between predictions and targets, both thresholded at 0.
pub fn validation_dice(params: &NetworkParams, pairs: &[TrainingPair]) -> Result<f64> {
    let mut total = 0.0;
    for pair in pairs {
        let pred = threshold_to_mask(forward(params, &pair.image)?, 0.0);
        total += dice(&pred, &threshold_to_mask(&pair.target, 0.0))?;
    }
    Ok(total / pairs.len() as f64)
}

/// Trains from a fresh initialization for `train.epochs` epochs, calling
/// `observer` after each one.
pub fn train(
    net: &NetConfig,
    train: &TrainConfig,
    loss: &LossConfig,
    training: &[TrainingPair],
    validation: &[TrainingPair],
    mut observer: impl FnMut(&EpochRecord, &TrainState) -> Result<()>,
) -> Result<TrainState> {
    check_dataset(training, validation)?;
    let mut state = TrainState::new(net, train, loss)?;
    for _ in 0..train.epochs {
        let record = state.run_epoch(training, validation)?;
        observer(&record, &state)?;
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate, PhantomSpec, Primitive};

    fn phantom_pair(n: usize, radius: f64, seed: u64) -> TrainingPair {
        let c = (n as f64 - 1.0) / 2.0;
        let spec = PhantomSpec {
            shape: [n; 3],
            spacing: [1.0; 3],
            primitive: Primitive::Sphere { center: [c; 3], radius },
            foreground_mean: 0.8,
            background_mean: 0.2,
            noise_std: 0.05,
            background_ramp: 0.1,
            seed,
        };
        let (image, truth) = generate(&spec).unwrap();
        prepare_pair(&image, &truth).unwrap()
    }

    fn quiet(_: &EpochRecord, _: &TrainState) -> Result<()> {
        Ok(())
    }

    #[test]
    fn prepared_pair_is_half_resolution() {
        let pair = phantom_pair(16, 5.0, 1);
        assert_eq!(pair.image.shape(), [8; 3]);
        assert_eq!(pair.image.spacing(), [2.0; 3]);
        assert_eq!(pair.target.shape(), [8; 3]);
        let (lo, hi) = pair.image.min_max();
        assert!(lo >= 0.0 && hi <= 1.0);
    }

    #[test]
    fn zero_learning_rate_freezes_everything() {
        let net = NetConfig::new(1, 2, 3).unwrap();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, ..TrainConfig::default() };
        let data = [phantom_pair(16, 5.0, 1), phantom_pair(16, 4.0, 2), phantom_pair(16, 4.5, 3)];
        let state = train(&net, &cfg, &LossConfig::default(), &data, &[], quiet).unwrap();
        assert_eq!(state.params, NetworkParams::init(&net).unwrap());
        let losses: Vec<f64> = state.history.iter().map(|r| r.train_loss).collect();
        assert!(losses.iter().all(|&l| l == losses[0]), "{losses:?}");
    }

    #[test]
    fn best_dice_never_decreases() {
        let net = NetConfig::new(1, 2, 4).unwrap();
        let cfg = TrainConfig { learning_rate: 1e-2, epochs: 8, ..TrainConfig::default() };
        let data = [phantom_pair(16, 5.0, 1), phantom_pair(16, 4.0, 2)];
        let state = train(&net, &cfg, &LossConfig::default(), &data, &data[..1], quiet).unwrap();
        let best: Vec<f64> = state.history.iter().map(|r| r.best_validation_dice).collect();
        assert!(best.windows(2).all(|w| w[1] >= w[0]));
        assert!((0.0..=1.0).contains(&state.best_validation_dice));
        let at = state.best_epoch.unwrap();
        assert_eq!(state.history[at - 1].validation_dice, state.best_validation_dice);
        assert_eq!(validation_dice(&state.best_params, &data[..1]).unwrap(), state.best_validation_dice);
    }

    #[test]
    fn single_sample_overfits() {
        let net = NetConfig::new(2, 4, 7).unwrap();
        let cfg = TrainConfig { batch_size: 1, epochs: 500, learning_rate: 3e-3, ..TrainConfig::default() };
        let data = [phantom_pair(32, 9.0, 5)];
        let state = train(&net, &cfg, &LossConfig::default(), &data, &[], quiet).unwrap();
        let first = state.history[0].train_loss;
        let last = state.history.last().unwrap().train_loss;
        assert!(last < 1e-2 * first, "loss {first} -> {last}");
    }

    #[test]
    fn fixed_seed_is_bitwise_reproducible() {
        let net = NetConfig::new(1, 2, 9).unwrap();
        let cfg = TrainConfig { epochs: 3, learning_rate: 5e-3, ..TrainConfig::default() };
        let data = [phantom_pair(16, 5.0, 1), phantom_pair(16, 4.0, 2), phantom_pair(16, 4.5, 3)];
        let a = train(&net, &cfg, &LossConfig::default(), &data, &[], quiet).unwrap();
        let b = train(&net, &cfg, &LossConfig::default(), &data, &[], quiet).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(a.history, b.history);
        assert_eq!(a.rng_word_pos(), b.rng_word_pos());
    }

    #[test]
    fn divergence_and_invalid_inputs() {
        let net = NetConfig::new(1, 2, 0).unwrap();
        let cfg = TrainConfig { learning_rate: 1e300, epochs: 5, ..TrainConfig::default() };
        let data = [phantom_pair(16, 5.0, 1), phantom_pair(16, 4.0, 2)];
        let err = train(&net, &cfg, &LossConfig::default(), &data, &[], quiet).unwrap_err();
        assert!(matches!(err, Error::Divergence { .. }), "{err}");
        assert!(train(&net, &TrainConfig::default(), &LossConfig::default(), &[], &[], quiet).is_err());
        let bad = TrainConfig { batch_size: 0, ..TrainConfig::default() };
        assert!(train(&net, &bad, &LossConfig::default(), &data, &[], quiet).is_err());
    }
}
