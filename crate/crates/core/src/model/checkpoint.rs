//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic, a little-endian `u64` header length, a JSON
//! header, then every tensor listed in the header as little-endian `f32` in
//! header order. Encoding is a pure function of the contents.

use std::fs;
use std::io::Write;
use std::path::Path;

use byteorder::{ByteOrder, LittleEndian};
use serde::{Deserialize, Serialize};

use super::network::NetworkParams;
use super::train::{Adam, EpochRecord, TrainConfig, TrainState};
use super::NetConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SDTCKPT1";
const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Element offset into the tensor data block.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format_version: u32,
    net: NetConfig,
    train: TrainConfig,
    loss: LossConfig,
    epoch: usize,
    best_validation_dice: f64,
    best_epoch: Option<usize>,
    adam_step: u64,
    /// Decimal, since JSON numbers cannot hold a `u128`.
    rng_word_pos: String,
    history: Vec<EpochRecord>,
    tensors: Vec<TensorEntry>,
}

/// Persisted training state. Parameters and moments are held at `f32`
/// precision so a checkpoint equals its own round trip.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossConfig,
    /// Best-by-validation parameters, used for inference.
    pub params: NetworkParams,
    pub last: NetworkParams,
    pub adam_step: u64,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub epoch: usize,
    pub best_validation_dice: f64,
    pub best_epoch: Option<usize>,
    pub rng_word_pos: u128,
    pub history: Vec<EpochRecord>,
}

fn quantize(values: &[f64]) -> Vec<f64> {
    values.iter().map(|&v| v as f32 as f64).collect()
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Result<Self> {
        let net = &state.net;
        Ok(Checkpoint {
            net: net.clone(),
            train: state.train.clone(),
            loss: state.loss,
            params: NetworkParams::from_values(net, quantize(state.best_params.values()))?,
            last: NetworkParams::from_values(net, quantize(state.params.values()))?,
            adam_step: state.optimizer.step,
            adam_m: quantize(&state.optimizer.m),
            adam_v: quantize(&state.optimizer.v),
            epoch: state.epoch,
            best_validation_dice: state.best_validation_dice,
            best_epoch: state.best_epoch,
            rng_word_pos: state.rng_word_pos(),
            history: state.history.clone(),
        })
    }

    /// Training state to continue from, at checkpoint precision.
    pub fn resume(&self) -> Result<TrainState> {
        let mut state = TrainState::new(&self.net, &self.train, &self.loss)?;
        state.params = self.last.clone();
        state.best_params = self.params.clone();
        state.optimizer = Adam { step: self.adam_step, m: self.adam_m.clone(), v: self.adam_v.clone() };
        state.epoch = self.epoch;
        state.best_validation_dice = self.best_validation_dice;
        state.best_epoch = self.best_epoch;
        state.history = self.history.clone();
        state.set_rng_word_pos(self.rng_word_pos);
        Ok(state)
    }

    fn blocks(&self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        for (name, shape, w, b) in self.params.tensors() {
            out.push((format!("{name}.weight"), shape, w.to_vec()));
            out.push((format!("{name}.bias"), vec![b.len()], b.to_vec()));
        }
        let n = self.last.len();
        out.push(("last".into(), vec![n], self.last.values().to_vec()));
        out.push(("adam.m".into(), vec![n], self.adam_m.clone()));
        out.push(("adam.v".into(), vec![n], self.adam_v.clone()));
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let blocks = self.blocks();
        let mut offset = 0;
        let tensors = blocks
            .iter()
            .map(|(name, shape, data)| {
                let e = TensorEntry { name: name.clone(), shape: shape.clone(), offset };
                offset += data.len();
                e
            })
            .collect();
        let header = Header {
            format_version: FORMAT_VERSION,
            net: self.net.clone(),
            train: self.train.clone(),
            loss: self.loss,
            epoch: self.epoch,
            best_validation_dice: self.best_validation_dice,
            best_epoch: self.best_epoch,
            adam_step: self.adam_step,
            rng_word_pos: self.rng_word_pos.to_string(),
            history: self.history.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + 4 * offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        let mut buf = [0u8; 4];
        for (_, _, data) in &blocks {
            for &v in data {
                LittleEndian::write_f32(&mut buf, v as f32);
                out.extend_from_slice(&buf);
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::Checkpoint(m);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic".into()));
        }
        let header_len = LittleEndian::read_u64(&bytes[8..16]) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("header extends past end of file".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| bad(format!("invalid header: {e}")))?;
        if header.format_version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        let data = &bytes[data_start..];
        if data.len() % 4 != 0 {
            return Err(bad("tensor block is not a whole number of f32 values".into()));
        }
        let floats: Vec<f64> = data.chunks_exact(4).map(|c| LittleEndian::read_f32(c) as f64).collect();
        let n = header.net.parameter_count();
        let read = |name: &str| -> Result<Vec<f64>> {
            let entry = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            let len: usize = entry.shape.iter().product();
            floats
                .get(entry.offset..entry.offset + len)
                .map(<[f64]>::to_vec)
                .ok_or_else(|| bad(format!("tensor {name} is truncated")))
        };
        let mut best = Vec::with_capacity(n);
        for (name, _, _, _) in NetworkParams::zeros(&header.net)?.tensors() {
            best.extend(read(&format!("{name}.weight"))?);
            best.extend(read(&format!("{name}.bias"))?);
        }
        let last = read("last")?;
        let adam_m = read("adam.m")?;
        let adam_v = read("adam.v")?;
        if adam_m.len() != n || adam_v.len() != n {
            return Err(bad("optimizer moments do not match the network".into()));
        }
        let rng_word_pos = header
            .rng_word_pos
            .parse()
            .map_err(|_| bad(format!("invalid rng position {:?}", header.rng_word_pos)))?;
        Ok(Checkpoint {
            params: NetworkParams::from_values(&header.net, best)?,
            last: NetworkParams::from_values(&header.net, last)?,
            net: header.net,
            train: header.train,
            loss: header.loss,
            adam_step: header.adam_step,
            adam_m,
            adam_v,
            epoch: header.epoch,
            best_validation_dice: header.best_validation_dice,
            best_epoch: header.best_epoch,
            rng_word_pos,
            history: header.history,
        })
    }

    /// Writes through a temporary sibling and renames it into place.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let tmp = path.with_extension("tmp");
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&self.to_bytes()?)?;
        f.sync_all()?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state() -> TrainState {
        let mut s = TrainState::new(&NetConfig::new(1, 2, 3).unwrap(), &TrainConfig::default(), &LossConfig::default())
            .unwrap();
        s.optimizer.step = 7;
        s.optimizer.m.iter_mut().enumerate().for_each(|(i, m)| *m = i as f64 * 1e-3);
        s.epoch = 4;
        s.best_epoch = Some(2);
        s.best_validation_dice = 0.5;
        s.history.push(EpochRecord {
            epoch: 1,
            train_loss: 2.5,
            validation_dice: 0.5,
            best_validation_dice: 0.5,
            improved: true,
        });
        s
    }

    #[test]
    fn round_trip_is_exact() {
        let ckpt = Checkpoint::from_state(&state()).unwrap();
        let bytes = ckpt.to_bytes().unwrap();
        assert_eq!(&bytes[..8], CHECKPOINT_MAGIC);
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn file_round_trip_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let s = state();
        let ckpt = Checkpoint::from_state(&s).unwrap();
        ckpt.write(&path).unwrap();
        let back = Checkpoint::read(&path).unwrap();
        let resumed = back.resume().unwrap();
        assert_eq!(resumed.epoch, 4);
        assert_eq!(resumed.optimizer.step, 7);
        assert_eq!(resumed.rng_word_pos(), s.rng_word_pos());
        for (a, b) in resumed.params.values().iter().zip(s.params.values()) {
            assert_eq!(*a, *b as f32 as f64);
        }
    }

    #[test]
    fn corrupt_input_is_rejected() {
        let bytes = Checkpoint::from_state(&state()).unwrap().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(Checkpoint::from_bytes(&wrong).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 4]).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..40]).is_err());
    }
}
