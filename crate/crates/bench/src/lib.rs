//! Fixtures shared by the benchmarks.

use lgad_core::data::{gen_glyph_dataset, make_pairs, PairBatch};
use lgad_core::{Architecture, Model, TrainingConfig};

/// A default-sized model and one training batch of glyph pairs.
pub struct Fixture {
    pub cfg: TrainingConfig,
    pub model: Model<f32>,
    pub batch: PairBatch,
}

pub fn fixture(batch: usize) -> Fixture {
    let cfg = TrainingConfig::default();
    let ds = gen_glyph_dataset(batch.max(10), 10, 28, 7).expect("glyphs");
    let pairs = make_pairs(&ds, batch, &cfg.pair_config(), 11).expect("pairs");
    let idx: Vec<usize> = (0..batch).collect();
    let arch: Architecture = cfg.architecture(28, 28);
    Fixture {
        model: Model::init(arch, 3).expect("model"),
        batch: pairs.batch(&idx),
        cfg,
    }
}
