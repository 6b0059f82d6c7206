//! Builds a miniature green-screen capture session on disk, forges an
//! ego-body dataset from it and checks the keyed masks.
//!
//! `cargo run --example forge_ego_body`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sstu::dataset::{composite, load_dataset, synth_sample, Meta, Origin, SynthVariant};
use sstu::imaging::write_rgb;
use sstu::metrics::{confusion, pa};
use sstu::pipeline::{forge_dataset, ForgeConfig};
use sstu::tensor::ImageTensor;

fn main() -> sstu::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let (fg_dir, bg_dir) = (dir.path().join("shoot/foreground"), dir.path().join("shoot/background"));
    std::fs::create_dir_all(&fg_dir).expect("mkdir");
    std::fs::create_dir_all(&bg_dir).expect("mkdir");

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let green = ImageTensor::from_fn(3, 64, 64, |c, _, _| if c == 1 { 0.9 } else { 0.1 });
    let mut truth = Vec::new();
    for i in 0..10 {
        let (sample, _) = synth_sample(format!("shot{i}"), SynthVariant::Ego, &mut rng);
        let skin = sample.image.map(|v| 0.35 + 0.5 * v).map(|v| v.min(1.0));
        let skin = ImageTensor::from_fn(3, 64, 64, |c, y, x| {
            if c == 1 {
                skin.get(c, y, x) * 0.4
            } else {
                skin.get(c, y, x)
            }
        });
        let shot = composite(&skin, &sample.mask, &green)?;
        write_rgb(&shot, &fg_dir.join(format!("shot{i}.png")))?;
        let meta = Meta {
            height_m: Some(1.7),
            orientation_deg: Some([rng.random_range(0.0..360.0), -40.0, 0.0]),
        };
        std::fs::write(fg_dir.join(format!("shot{i}_meta.txt")), meta.render()).expect("meta");
        truth.push((format!("shot{i}"), sample.mask));
    }
    for (j, yaw) in [0.0f32, 90.0, 180.0, 270.0].into_iter().enumerate() {
        let bg = ImageTensor::from_fn(3, 64, 64, |c, y, x| {
            ((c + 1) * (x + 2 * y + 17 * j)) as f32 % 97.0 / 97.0
        });
        write_rgb(&bg, &bg_dir.join(format!("room{j}.png")))?;
        let meta = Meta {
            height_m: None,
            orientation_deg: Some([yaw, -40.0, 0.0]),
        };
        std::fs::write(bg_dir.join(format!("room{j}_meta.txt")), meta.render()).expect("meta");
    }

    let out = dir.path().join("ego_body");
    let summary = forge_dataset(&ForgeConfig {
        val_fraction: 0.2,
        ..ForgeConfig::new(dir.path().join("shoot"), &out)
    })?;
    for (f, b) in &summary.pairs {
        println!("{f} composited over {b}");
    }
    let (train, val) = load_dataset(&out, Origin::Ego)?;
    println!("{} train / {} val samples", train.len(), val.len());
    for s in train.iter().chain(&val) {
        let gt = &truth.iter().find(|(id, _)| *id == s.id).expect("known id").1;
        println!("{}: keyed-mask PA {:.4}", s.id, pa(&confusion(&s.mask, gt)?));
    }
    Ok(())
}
