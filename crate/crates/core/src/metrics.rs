//! Binarization, confusion counts and the person-class metrics.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ProbMask};

pub const DEFAULT_THRESHOLD: f32 = 0.5;

/// Pixels with `p ≥ threshold` become positive.
pub fn binarize(p: &ProbMask, threshold: f32) -> BinaryMask {
    BinaryMask::from_fn(p.height(), p.width(), |y, x| p.get(y, x) >= threshold)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn add(&self, o: &Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

pub fn confusion(pred: &BinaryMask, gt: &BinaryMask) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(
            "confusion",
            format!("prediction {:?} vs ground truth {:?}", pred.dims(), gt.dims()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (1, _) => c.fp += 1,
            (_, 1) => c.fn_ += 1,
            _ => c.tn += 1,
        }
    }
    Ok(c)
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// `tp / (tp + fp + fn)`, 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp + c.fn_)
}

pub fn pa(c: &ConfusionCounts) -> f64 {
    ratio(c.tp + c.tn, c.total())
}

pub fn precision(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fp)
}

pub fn recall(c: &ConfusionCounts) -> f64 {
    ratio(c.tp, c.tp + c.fn_)
}

/// IoU of the left and right masks without disparity compensation.
pub fn stereo_consistency(left: &BinaryMask, right: &BinaryMask) -> Result<f64> {
    Ok(iou(&confusion(left, right)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageMetrics {
    pub id: String,
    pub counts: ConfusionCounts,
    pub iou: f64,
    pub pa: f64,
    pub precision: f64,
    pub recall: f64,
}

impl ImageMetrics {
    pub fn from_masks(id: impl Into<String>, pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        let counts = confusion(pred, gt)?;
        Ok(Self {
            id: id.into(),
            counts,
            iou: iou(&counts),
            pa: pa(&counts),
            precision: precision(&counts),
            recall: recall(&counts),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: Vec<ImageMetrics>,
    pub miou: f64,
    pub mpa: f64,
    pub mean_precision: f64,
    pub mean_recall: f64,
}

impl EvalReport {
    pub fn from_images(images: Vec<ImageMetrics>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::Empty("evaluation set has no images".into()));
        }
        let n = images.len() as f64;
        let mean = |f: fn(&ImageMetrics) -> f64| images.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            miou: mean(|m| m.iou),
            mpa: mean(|m| m.pa),
            mean_precision: mean(|m| m.precision),
            mean_recall: mean(|m| m.recall),
            images,
        })
    }

    pub fn total_counts(&self) -> ConfusionCounts {
        self.images
            .iter()
            .fold(ConfusionCounts::default(), |acc, m| acc.add(&m.counts))
    }

    /// IoU from the summed counts of the whole set.
    pub fn aggregate_iou(&self) -> f64 {
        iou(&self.total_counts())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,iou,pa,precision,recall\n");
        for m in &self.images {
            let _ = writeln!(
                out,
                "{},{:.4},{:.4},{:.4},{:.4}",
                m.id, m.iou, m.pa, m.precision, m.recall
            );
        }
        let _ = writeln!(
            out,
            "MEAN,{:.4},{:.4},{:.4},{:.4}",
            self.miou, self.mpa, self.mean_precision, self.mean_recall
        );
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Something that yields a person-probability map for an image id.
pub trait MaskSource: Sync {
    fn predict(&self, id: &str) -> Result<ProbMask>;
}

impl<F> MaskSource for F
where
    F: Fn(&str) -> Result<ProbMask> + Sync,
{
    fn predict(&self, id: &str) -> Result<ProbMask> {
        self(id)
    }
}

/// Per-image metrics for `(id, ground truth)` pairs; images are scored
/// concurrently and reported in input order.
pub fn evaluate_set<S: MaskSource + ?Sized>(
    source: &S,
    samples: &[(String, BinaryMask)],
    threshold: f32,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation set has no images".into()));
    }
    let images = samples
        .par_iter()
        .map(|(id, gt)| {
            let pred = binarize(&source.predict(id)?, threshold);
            ImageMetrics::from_masks(id.clone(), &pred, gt)
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_images(images)
}

/// Per-image mean IoU of already computed probability maps.
pub fn mean_iou(preds: &[ProbMask], gts: &[BinaryMask], threshold: f32) -> Result<f64> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let mut sum = 0.0;
    for (p, g) in preds.iter().zip(gts) {
        sum += iou(&confusion(&binarize(p, threshold), g)?);
    }
    Ok(sum / preds.len() as f64)
}
