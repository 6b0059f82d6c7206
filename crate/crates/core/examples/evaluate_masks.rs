//! Scores predicted masks against ground truth and shows how pixel accuracy
//! and IoU diverge on a small missed object.
//!
//! `cargo run --example evaluate_masks`

use sstu::mask::{BinaryMask, ProbMask};
use sstu::metrics::{evaluate_set, iou, pa, precision, recall, ConfusionCounts};

fn main() -> sstu::Result<()> {
    let (h, w) = (64, 64);
    let gt_small = BinaryMask::from_fn(h, w, |y, x| (20..26).contains(&y) && (20..26).contains(&x));
    let gt_large = BinaryMask::from_fn(h, w, |y, x| y >= 32 && x < 48);
    let preds = [
        (
            "small_miss",
            ProbMask::new(
                h,
                w,
                (0..h * w)
                    .map(|i| {
                        if i / w == 22 && (20..26).contains(&(i % w)) {
                            0.9
                        } else {
                            0.1
                        }
                    })
                    .collect(),
            )?,
        ),
        (
            "large_hit",
            ProbMask::new(
                h,
                w,
                (0..h * w)
                    .map(|i| if i / w >= 33 && i % w < 48 { 0.8 } else { 0.2 })
                    .collect(),
            )?,
        ),
    ];
    let gts = vec![
        ("small_miss".to_string(), gt_small),
        ("large_hit".to_string(), gt_large),
    ];
    let report = evaluate_set(
        &|id: &str| Ok(preds.iter().find(|(n, _)| *n == id).expect("known id").1.clone()),
        &gts,
        0.5,
    )?;
    print!("{}", report.to_csv());
    println!("aggregate IoU {:.4}", report.aggregate_iou());

    let c = ConfusionCounts {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 10,
    };
    println!(
        "tp 3 fp 1 fn 2 tn 10 -> IoU {:.4} PA {:.4} precision {:.4} recall {:.4}",
        iou(&c),
        pa(&c),
        precision(&c),
        recall(&c)
    );
    Ok(())
}
