//! Frame drops of a single inference worker at the camera frame rate.
//!
//! `cargo run --example simulate_stream -- [fps]`

use sstu::compositor::latency_budget;
use sstu::pipeline::{simulate_stream, StreamConfig};

fn main() -> sstu::Result<()> {
    let fps: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(60.0);
    for service in [10.0, 16.0, 22.0, 29.0, 40.0] {
        let s = simulate_stream(&StreamConfig::new(fps, service, 2.0))?;
        println!(
            "{fps} fps, {service:>4} ms per frame: {:>3} processed, {:>3} dropped, ratio {:.4}",
            s.processed,
            s.dropped,
            s.ratio()
        );
    }
    for inference in [16.0, 23.0] {
        println!(
            "capture 37 + prep 6 + inference {inference} = {} ms photon-to-display",
            latency_budget(37.0, 6.0, inference)?
        );
    }
    Ok(())
}
