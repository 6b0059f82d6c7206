//! Runs the stereo segmentation and compositing loop over a few generated
//! frame pairs and prints the timing summary.
//!
//! `cargo run --example segment_frames -- [frames]`

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sstu::dataset::{synth_sample, SynthVariant};
use sstu::imaging::{resize_bilinear, write_rgb};
use sstu::model::{build, ArchConfig};
use sstu::pipeline::{segment_frames, timing_summary, SegmentConfig};

fn main() -> sstu::Result<()> {
    let n: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(3);
    let dir = tempfile::tempdir().expect("temp dir");
    let (input, output) = (dir.path().join("frames"), dir.path().join("out"));
    std::fs::create_dir_all(&input).expect("mkdir");
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..n {
        let (s, _) = synth_sample(format!("{i}"), SynthVariant::Ego, &mut rng);
        let frame = resize_bilinear(&s.image, 120, 160);
        write_rgb(&frame, &input.join(format!("{i:03}_L.png")))?;
        write_rgb(&frame.flip_horizontal(), &input.join(format!("{i:03}_R.png")))?;
    }

    let bundle = build(&ArchConfig::small(64, 8), 0)?;
    let summary = segment_frames(&bundle, &SegmentConfig::new(&input, &output))?;
    for (name, c) in summary.frames.iter().zip(&summary.stereo_consistency) {
        println!("frame {name}: L/R mask agreement {c:.4}");
    }
    let mut files: Vec<String> = std::fs::read_dir(&output)
        .expect("output dir")
        .filter_map(|e| e.ok()?.file_name().into_string().ok())
        .collect();
    files.sort();
    println!("wrote {}", files.join(" "));
    print!("{}", timing_summary(&summary.records)?.render());
    Ok(())
}
