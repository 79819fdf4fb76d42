//! Connected-component filtering and hole filling for binary masks.
//!
//! Components are labelled with a two-pass union-find scan. Labels are
//! numbered in order of each component's lowest flat index, which makes
//! every choice below deterministic.

use std::fmt;

use crate::error::{Error, Result};
use crate::volume::{Geometry, Mask};

/// Voxel adjacency: shared face (6) or any shared corner (26).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn from_count(n: u32) -> Result<Self> {
        match n {
            6 => Ok(Self::Six),
            26 => Ok(Self::TwentySix),
            _ => Err(Error::InvalidParameter(format!("connectivity must be 6 or 26, got {n}"))),
        }
    }

    pub fn count(self) -> u32 {
        match self {
            Self::Six => 6,
            Self::TwentySix => 26,
        }
    }

    /// Offsets of neighbours that precede a voxel in scan order.
    fn backward_offsets(self) -> Vec<[i64; 3]> {
        let mut out = Vec::new();
        for dz in -1i64..=1 {
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let manhattan = dx.abs() + dy.abs() + dz.abs();
                    if manhattan == 0 || (self == Self::Six && manhattan > 1) {
                        continue;
                    }
                    // strictly earlier in x-fastest order
                    if (dz, dy, dx) < (0, 0, 0) {
                        out.push([dx, dy, dz]);
                    }
                }
            }
        }
        out
    }
}

impl fmt::Display for Connectivity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.count())
    }
}

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        Self { parent: Vec::new() }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let grand = self.parent[self.parent[x as usize] as usize];
            self.parent[x as usize] = grand;
            x = grand;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        // the smaller root wins so roots follow first-seen order
        if ra < rb {
            self.parent[rb as usize] = ra;
        } else if rb < ra {
            self.parent[ra as usize] = rb;
        }
    }
}

/// Component labels (1-based, 0 for non-sites) and per-label voxel counts.
/// `sizes[k]` is the size of label `k + 1`.
pub struct Labeling {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

/// Labels connected groups of `sites`.
pub fn label_components(sites: &[bool], geometry: &Geometry, connectivity: Connectivity) -> Labeling {
    const NONE: u32 = u32::MAX;
    let [nx, ny, nz] = geometry.shape();
    let offsets = connectivity.backward_offsets();
    let mut provisional = vec![NONE; sites.len()];
    let mut sets = DisjointSet::new();

    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                let i = geometry.index(x, y, z);
                if !sites[i] {
                    continue;
                }
                let mut current = NONE;
                for [dx, dy, dz] in &offsets {
                    let (px, py, pz) = (x as i64 + dx, y as i64 + dy, z as i64 + dz);
                    if px < 0 || py < 0 || pz < 0 || px >= nx as i64 || py >= ny as i64 {
                        continue;
                    }
                    let j = geometry.index(px as usize, py as usize, pz as usize);
                    let label = provisional[j];
                    if label == NONE {
                        continue;
                    }
                    if current == NONE {
                        current = label;
                    } else {
                        sets.union(current, label);
                    }
                }
                provisional[i] = if current == NONE { sets.make() } else { current };
            }
        }
    }

    // Roots are visited in increasing order of first voxel, so numbering them
    // on first sight orders labels by lowest flat index.
    let mut root_label = vec![0u32; sets.parent.len()];
    let mut sizes = Vec::new();
    let mut labels = vec![0u32; sites.len()];
    for (i, &p) in provisional.iter().enumerate() {
        if p == NONE {
            continue;
        }
        let root = sets.find(p) as usize;
        if root_label[root] == 0 {
            sizes.push(0);
            root_label[root] = sizes.len() as u32;
        }
        let label = root_label[root];
        labels[i] = label;
        sizes[label as usize - 1] += 1;
    }
    Labeling { labels, sizes }
}

/// Keeps only the largest foreground component; ties go to the component
/// containing the lowest flat index.
pub fn largest_component(m: &Mask, connectivity: Connectivity) -> Result<Mask> {
    let labeling = label_components(m.data(), m.geometry(), connectivity);
    if labeling.sizes.is_empty() {
        return Err(Error::EmptyMask);
    }
    let mut best = 0;
    for (k, &size) in labeling.sizes.iter().enumerate() {
        if size > labeling.sizes[best] {
            best = k;
        }
    }
    let keep = best as u32 + 1;
    let data = labeling.labels.iter().map(|&l| l == keep).collect();
    Ok(Mask::new(data, *m.geometry())?.with_orientation(m.orientation().cloned()))
}

/// Sets every background voxel that cannot reach the grid edge through
/// background (under `background` connectivity) to foreground.
pub fn fill_holes(m: &Mask, background: Connectivity) -> Mask {
    let g = *m.geometry();
    let bg: Vec<bool> = m.data().iter().map(|&b| !b).collect();
    let labeling = label_components(&bg, &g, background);
    let mut open = vec![false; labeling.sizes.len() + 1];
    for (i, &l) in labeling.labels.iter().enumerate() {
        if l != 0 && g.on_border(i) {
            open[l as usize] = true;
        }
    }
    let data = m
        .data()
        .iter()
        .zip(&labeling.labels)
        .map(|(&fg, &l)| fg || !open[l as usize])
        .collect();
    Mask::new(data, g).expect("same geometry").with_orientation(m.orientation().cloned())
}

/// The post-processing chain: largest component, then hole filling.
pub fn postprocess(m: &Mask, foreground: Connectivity, background: Connectivity) -> Result<Mask> {
    Ok(fill_holes(&largest_component(m, foreground)?, background))
}
