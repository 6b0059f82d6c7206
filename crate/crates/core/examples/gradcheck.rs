//! Finite-difference check of the analytic gradients of a tiny SSTU-net.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sstu::dataset::{synth_sample, SynthVariant};
use sstu::imaging::resize_bilinear;
use sstu::model::{build, ArchConfig};
use sstu::tensor::BnMode;
use sstu::train::{gradcheck, GradcheckConfig};

fn main() -> sstu::Result<()> {
    let step: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1e-3);
    let arch = ArchConfig::small(32, 2);
    let bundle = build(&arch, 42)?;
    let (sample, _) = synth_sample("probe", SynthVariant::Exo, &mut ChaCha8Rng::seed_from_u64(1));
    let sample = sample.resized(32);
    let image = resize_bilinear(&sample.image, 32, 32);

    for (label, mode) in [
        ("train-mode batch norm", BnMode::Train),
        ("inference batch norm", BnMode::Infer),
    ] {
        let cfg = GradcheckConfig {
            bn_mode: mode,
            step,
            ..GradcheckConfig::default()
        };
        let r = gradcheck(&bundle, &image, &sample.mask, &cfg)?;
        println!(
            "{label}: {} scalars checked ({} kink-crossing draws replaced), max relative error {:.3e} at {}[{}]",
            r.checked, r.skipped_kinks, r.max_rel_error, r.worst.0, r.worst.1
        );
    }
    Ok(())
}
