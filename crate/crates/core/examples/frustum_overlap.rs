//! Where the stereo camera's video can appear in each eye display.
//!
//! `cargo run --example frustum_overlap -- [camera.txt]`

use sstu::compositor::{frustum_overlap, zed_coverage, CameraRig};

fn main() -> sstu::Result<()> {
    let rig = match std::env::args().nth(1) {
        Some(p) => CameraRig::load(p.as_ref())?,
        None => CameraRig::placeholder(),
    };
    for (name, zed, eye) in [
        ("left", &rig.zed_left, &rig.eye_left),
        ("right", &rig.zed_right, &rig.eye_right),
    ] {
        let r = frustum_overlap(zed, eye);
        println!(
            "{name} eye: video rect x {:.1}..{:.1} y {:.1}..{:.1} ({:.1}% of the display), {:.1}% of the video visible",
            r.x0,
            r.x1,
            r.y0,
            r.y1,
            100.0 * r.area() / eye.intrinsics.viewport().area(),
            100.0 * zed_coverage(zed, eye)
        );
    }
    Ok(())
}
