//! Grows a second "ego" decoder on a toy base model and trains only that
//! decoder. The shared encoder and the exo decoder stay untouched, and the
//! aggregated mask is the pixelwise max of both decoders.
//!
//! `cargo run --example two_decoder_ego -- [base_epochs] [ego_epochs]`

use sstu::model::{aggregate_max, infer_dual, predict, ENCODER_PREFIX, EXO_PREFIX};
use sstu::toy::{ego_background_fractions, ego_toy_data, run_base, run_ego};

fn main() -> sstu::Result<()> {
    let mut args = std::env::args().skip(1);
    let base_epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(8);
    let ego_epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(4);

    let (base, _) = run_base(0, base_epochs)?;
    println!(
        "base {} val mIoU {:.4}",
        base.bundle.tag(),
        base.log.last().map_or(f64::NAN, |e| e.val_miou)
    );

    let data = ego_toy_data(0, 60)?;
    let before = base.bundle.to_two_decoder()?;
    let trained = run_ego(&base.bundle, &data, 0, ego_epochs)?;
    for e in &trained.log {
        println!("ego {}", e.line());
    }

    let frozen_same = before
        .params()
        .iter()
        .filter(|(n, _)| n.starts_with(ENCODER_PREFIX) || n.starts_with(EXO_PREFIX))
        .all(|(n, t)| trained.bundle.params()[n.as_str()] == *t);
    println!("encoder and exo.* unchanged: {frozen_same}");

    let mut max_ok = true;
    for s in data.ego_val.iter().chain(&data.exo_val) {
        let (exo, ego) = infer_dual(&trained.bundle, &s.image)?;
        max_ok &= predict(&trained.bundle, &s.image)? == aggregate_max(&exo, &ego)?;
    }
    println!("aggregate == max(exo, ego) on every validation image: {max_ok}");

    let bg = ego_background_fractions(&trained.bundle, &data.exo_val)?;
    println!(
        "ego decoder background fraction on exo images: {:.3}",
        bg.iter().sum::<f64>() / bg.len() as f64
    );
    Ok(())
}
