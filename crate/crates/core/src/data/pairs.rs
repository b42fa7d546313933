//! Training triples `(x, T_g(x), g)`.

use std::f64::consts::TAU;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{apply_block, rotate_image, ImageDataset};
use crate::error::Result;
use crate::group::GroupElement;
use crate::rng::rng_for_item;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub blocked: bool,
    pub block_prob: f64,
    pub block_size: usize,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig {
            blocked: false,
            block_prob: 0.5,
            block_size: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub source: usize,
    pub x: Vec<f32>,
    pub x_t: Vec<f32>,
    pub g: GroupElement,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairSet {
    pub height: usize,
    pub width: usize,
    pub pairs: Vec<Pair>,
}

/// A stacked minibatch of pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairBatch {
    pub x: Tensor<f32>,
    pub x_t: Tensor<f32>,
    pub g: Vec<GroupElement>,
    pub labels: Vec<u8>,
}

impl PairBatch {
    pub fn len(&self) -> usize {
        self.g.len()
    }

    pub fn is_empty(&self) -> bool {
        self.g.is_empty()
    }

    pub fn cast<U: crate::tensor::Real>(&self) -> (Tensor<U>, Tensor<U>) {
        (self.x.cast(), self.x_t.cast())
    }
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn batch(&self, indices: &[usize]) -> PairBatch {
        let p = self.height * self.width;
        let mut x = Vec::with_capacity(indices.len() * p);
        let mut x_t = Vec::with_capacity(indices.len() * p);
        let mut g = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let pair = &self.pairs[i];
            x.extend_from_slice(&pair.x);
            x_t.extend_from_slice(&pair.x_t);
            g.push(pair.g);
            labels.push(pair.label);
        }
        PairBatch {
            x: Tensor::new([indices.len(), p], x).expect("pair batch shape"),
            x_t: Tensor::new([indices.len(), p], x_t).expect("pair batch shape"),
            g,
            labels,
        }
    }

    /// Consecutive batches of `size` over `order` (last batch may be short).
    pub fn batches<'a>(&'a self, order: &'a [usize], size: usize) -> impl Iterator<Item = PairBatch> + 'a {
        order.chunks(size.max(1)).map(|idx| self.batch(idx))
    }

    pub fn in_order(&self, size: usize) -> Vec<PairBatch> {
        let order: Vec<usize> = (0..self.len()).collect();
        self.batches(&order, size).collect()
    }
}

/// Pair `i` draws its source image, optional occlusion and angle
/// `θ ~ U[0, 2π)` from a stream keyed by `(seed, i)`. The occlusion is
/// painted on the source before rotation, so it co-rotates.
pub fn make_pairs(ds: &ImageDataset, n_pairs: usize, cfg: &PairConfig, seed: u64) -> Result<PairSet> {
    let (h, w) = (ds.height, ds.width);
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs {
        let mut rng = rng_for_item(seed, "pairs", i as u64);
        let source = rng.random_range(0..ds.len());
        let mut x = ds.image(source).to_vec();
        if cfg.blocked {
            apply_block(&mut x, h, w, cfg.block_size, cfg.block_prob, &mut rng)?;
        }
        let g = GroupElement::new(rng.random_range(0.0..TAU));
        let x_t = rotate_image(&x, h, w, g);
        pairs.push(Pair {
            source,
            x,
            x_t,
            g,
            label: ds.label(source),
        });
    }
    Ok(PairSet {
        height: h,
        width: w,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::gen_glyph_dataset;

    #[test]
    fn targets_are_rotated_sources() {
        let ds = gen_glyph_dataset(30, 10, 28, 2).unwrap();
        let set = make_pairs(&ds, 20, &PairConfig::default(), 11).unwrap();
        for p in &set.pairs {
            assert_eq!(p.x, ds.image(p.source));
            assert_eq!(p.x_t, rotate_image(&p.x, 28, 28, p.g));
            assert_eq!(p.label, ds.label(p.source));
        }
    }

    #[test]
    fn same_seed_same_stream() {
        let ds = gen_glyph_dataset(30, 10, 28, 2).unwrap();
        let cfg = PairConfig {
            blocked: true,
            ..PairConfig::default()
        };
        assert_eq!(make_pairs(&ds, 16, &cfg, 3).unwrap(), make_pairs(&ds, 16, &cfg, 3).unwrap());
        assert_ne!(make_pairs(&ds, 16, &cfg, 3).unwrap(), make_pairs(&ds, 16, &cfg, 4).unwrap());
    }

    #[test]
    fn block_precedes_rotation() {
        let ds = gen_glyph_dataset(30, 10, 28, 2).unwrap();
        let cfg = PairConfig {
            blocked: true,
            block_prob: 1.0,
            block_size: 7,
        };
        let set = make_pairs(&ds, 8, &cfg, 5).unwrap();
        for p in &set.pairs {
            assert!(p.x.iter().filter(|&&v| v == 1.0).count() >= 49);
            assert_eq!(p.x_t, rotate_image(&p.x, 28, 28, p.g));
            assert_ne!(p.x, ds.image(p.source));
        }
    }

    #[test]
    fn batches_cover_every_pair_once() {
        let ds = gen_glyph_dataset(30, 10, 28, 2).unwrap();
        let set = make_pairs(&ds, 10, &PairConfig::default(), 1).unwrap();
        let b = set.in_order(4);
        assert_eq!(b.iter().map(PairBatch::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b[2].g[1], set.pairs[9].g);
        assert_eq!(b[0].x.shape(), &[4, 784]);
    }
}
