//! Desk-scale experiments on the synthetic blob set.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{balanced_sampler, synth_blobs, Sample, SynthVariant, ToyDataset};
use crate::error::Result;
use crate::model::{build, infer_dual, ArchConfig, WeightBundle};
use crate::train::{train_base, train_ego_decoder, TrainConfig, Trained};

pub const TOY_TRAIN: usize = 200;
pub const TOY_VAL: usize = 40;
pub const TOY_BASE_CHANNELS: usize = 8;
pub const TOY_EPOCHS: usize = 30;

pub fn toy_arch() -> ArchConfig {
    ArchConfig::small(crate::dataset::TOY_SIZE, TOY_BASE_CHANNELS)
}

/// 200/40 exo-style blob split generated from `seed`.
pub fn toy_dataset(seed: u64) -> Result<ToyDataset> {
    synth_blobs(
        TOY_TRAIN,
        TOY_VAL,
        SynthVariant::Exo,
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
}

/// Base training on the toy split; the last log entry holds the final
/// validation mIoU.
pub fn run_base(seed: u64, epochs: usize) -> Result<(Trained, ToyDataset)> {
    let data = toy_dataset(seed)?;
    let bundle = build(&toy_arch(), seed)?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let trained = train_base(bundle, &data.train, &data.val, &cfg)?;
    Ok((trained, data))
}

/// Data for the ego-decoder experiment: bottom-anchored ego blobs and a
/// larger pool of freely placed exo blobs.
#[derive(Clone, Debug)]
pub struct EgoToyData {
    pub train: Vec<Sample>,
    pub ego_val: Vec<Sample>,
    pub exo_val: Vec<Sample>,
}

pub fn ego_toy_data(seed: u64, n_ego: usize) -> Result<EgoToyData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e90);
    let ego = synth_blobs(n_ego, TOY_VAL / 2, SynthVariant::Ego, &mut rng)?;
    let exo = synth_blobs(2 * n_ego, TOY_VAL / 2, SynthVariant::Exo, &mut rng)?;
    let train = balanced_sampler(&ego.train, &exo.train, &mut rng)?;
    Ok(EgoToyData {
        train,
        ego_val: ego.val,
        exo_val: exo.val,
    })
}

/// Trains the ego decoder of a two-decoder bundle grown from `coco`.
pub fn run_ego(coco: &WeightBundle, data: &EgoToyData, seed: u64, epochs: usize) -> Result<Trained> {
    let two = coco.to_two_decoder()?;
    let cfg = TrainConfig {
        epochs,
        seed,
        ..TrainConfig::default()
    };
    let val: Vec<Sample> = data.ego_val.iter().chain(&data.exo_val).cloned().collect();
    train_ego_decoder(two, &data.train, &val, &cfg)
}

/// Fraction of pixels with `p_ego < 0.5` on each image.
pub fn ego_background_fractions(bundle: &WeightBundle, images: &[Sample]) -> Result<Vec<f64>> {
    images
        .iter()
        .map(|s| {
            let (_, ego) = infer_dual(bundle, &s.image)?;
            let below = ego.data().iter().filter(|&&p| p < 0.5).count();
            Ok(below as f64 / ego.data().len() as f64)
        })
        .collect()
}
