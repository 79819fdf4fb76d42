//! Flat parameter layout of the encoder–decoder.
//!
//! Order: encoder levels shallow to deep, bottleneck, then decoder levels deep
//! to shallow (transposed conv, two convs), then the head. Each layer stores
//! its weight block followed by its bias.

use super::NetConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Slot {
    pub cin: usize,
    pub cout: usize,
    pub taps: usize,
    pub offset: usize,
}

impl Slot {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * self.taps
    }

    pub fn weight(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.weight_len()
    }

    pub fn bias(&self) -> std::ops::Range<usize> {
        let start = self.offset + self.weight_len();
        start..start + self.cout
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub encoder: Vec<[Slot; 2]>,
    pub bottleneck: [Slot; 2],
    /// Indexed by target level: `up[l]` maps level `l + 1` channels to level `l`.
    pub up: Vec<Slot>,
    pub decoder: Vec<[Slot; 2]>,
    pub head: Slot,
    pub len: usize,
}

impl Layout {
    pub fn new(cfg: &NetConfig) -> Self {
        let mut offset = 0;
        let mut slot = |cin, cout, taps| {
            let s = Slot { cin, cout, taps, offset };
            offset += s.len();
            s
        };
        let ch = |l: usize| cfg.channels(l);
        let mut encoder = Vec::with_capacity(cfg.depth);
        for l in 0..cfg.depth {
            let cin = if l == 0 { 1 } else { ch(l - 1) };
            encoder.push([slot(cin, ch(l), 27), slot(ch(l), ch(l), 27)]);
        }
        let d = cfg.depth;
        let bottleneck = [slot(ch(d - 1), ch(d), 27), slot(ch(d), ch(d), 27)];
        let mut up = vec![None; d];
        let mut decoder = vec![None; d];
        for l in (0..d).rev() {
            up[l] = Some(slot(ch(l + 1), ch(l), 8));
            decoder[l] = Some([slot(2 * ch(l), ch(l), 27), slot(ch(l), ch(l), 27)]);
        }
        let head = slot(ch(0), 1, 1);
        Layout {
            encoder,
            bottleneck,
            up: up.into_iter().map(Option::unwrap).collect(),
            decoder: decoder.into_iter().map(Option::unwrap).collect(),
            head,
            len: offset,
        }
    }

    /// Named slots in storage order.
    pub fn named(&self) -> Vec<(String, Slot)> {
        let mut out = Vec::new();
        for (l, pair) in self.encoder.iter().enumerate() {
            out.push((format!("enc{l}.conv0"), pair[0]));
            out.push((format!("enc{l}.conv1"), pair[1]));
        }
        out.push(("bottleneck.conv0".into(), self.bottleneck[0]));
        out.push(("bottleneck.conv1".into(), self.bottleneck[1]));
        for l in (0..self.up.len()).rev() {
            out.push((format!("dec{l}.up"), self.up[l]));
            out.push((format!("dec{l}.conv0"), self.decoder[l][0]));
            out.push((format!("dec{l}.conv1"), self.decoder[l][1]));
        }
        out.push(("head".into(), self.head));
        out
    }
}
