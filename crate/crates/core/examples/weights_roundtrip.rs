//! Saves a bundle, loads it back bit-exactly, and shows the diagnostics of
//! a truncated file.
//!
//! `cargo run --example weights_roundtrip`

use sstu::model::{build, from_bytes, load_weights, save_weights, to_bytes, ArchConfig};

fn main() -> sstu::Result<()> {
    let bundle = build(&ArchConfig::small(64, 8), 7)?.to_two_decoder()?;
    let dir = tempfile::tempdir().expect("temp dir");
    let path = dir.path().join("sstu2.weights");
    save_weights(&bundle, &path)?;
    let back = load_weights(&path)?;
    println!(
        "{} tensors, {} values, tag {}, identical after reload: {}",
        back.params().len(),
        back.value_count(),
        back.tag(),
        back == bundle
    );
    let bytes = to_bytes(&bundle);
    match from_bytes(&bytes[..bytes.len() - 10]) {
        Ok(_) => println!("truncated file unexpectedly loaded"),
        Err(e) => println!("truncated file: {e}"),
    }
    Ok(())
}
