//! Trains a small SSTU-net on the synthetic blob set and reports the
//! per-epoch log.
//!
//! `cargo run --example train_toy -- [epochs] [seed]`

use sstu::toy::{run_base, TOY_EPOCHS};

fn main() -> sstu::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().and_then(|s| s.parse().ok()).unwrap_or(TOY_EPOCHS);
    let seed = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);

    let start = std::time::Instant::now();
    let (trained, _) = run_base(seed, epochs)?;
    for e in &trained.log {
        println!("{}", e.line());
    }
    println!(
        "trained {} ({} parameters) in {:.1}s",
        trained.bundle.tag(),
        trained.bundle.trainable_count(),
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
