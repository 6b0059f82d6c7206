//! Re-renders a captured frame for a slightly different head orientation.
//!
//! `cargo run --example time_warp -- [yaw_deg]`

use sstu::compositor::{time_warp, warp_source, yaw, Intrinsics};
use sstu::tensor::ImageTensor;

fn main() -> sstu::Result<()> {
    let deg: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let intr = Intrinsics::from_hfov(320, 180, 86.0, 0.1, 20.0);
    let frame = ImageTensor::from_fn(3, 180, 320, |c, y, x| {
        let (x, y) = (x as f32, y as f32);
        0.5 + 0.3 * (x / 23.0 + c as f32).sin() * (y / 17.0).cos() + 0.1 * ((x + y) / 41.0).sin()
    });
    let r0 = yaw(0.0);
    let r1 = yaw(deg);

    let (u, _) = warp_source(&intr, &r0, &r1, intr.cx, intr.cy)?;
    println!(
        "yaw {deg} deg: centre pixel samples the capture {:.3} px away (fx * tan = {:.3})",
        u - intr.cx,
        intr.fx * deg.to_radians().tan()
    );

    let there = time_warp(&frame, &intr, &r0, &r1)?;
    let back = time_warp(&there, &intr, &r1, &r0)?;
    let margin = 40;
    let mut err = 0.0;
    let mut n = 0;
    for c in 0..3 {
        for y in margin..180 - margin {
            for x in margin..320 - margin {
                err += (back.get(c, y, x) - frame.get(c, y, x)).abs() as f64;
                n += 1;
            }
        }
    }
    println!("round trip MAE on the interior: {:.5}", err / n as f64);
    println!("identity warp exact: {}", time_warp(&frame, &intr, &r0, &r0)? == frame);
    Ok(())
}
