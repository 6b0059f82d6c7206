use std::f32::consts::PI;

use rand::Rng;

use super::chroma::hsv_to_rgb;
use super::{Origin, Sample};
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::ImageTensor;

pub const TOY_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SynthVariant {
    /// Blobs anchored to the bottom edge, like the wearer's own limbs.
    Ego,
    /// Blobs placed anywhere.
    Exo,
}

impl SynthVariant {
    pub fn origin(self) -> Origin {
        match self {
            SynthVariant::Ego => Origin::Ego,
            SynthVariant::Exo => Origin::Exo,
        }
    }
}

/// Filled ellipse with semi-axes `a` (along `theta`) and `b`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ellipse {
    pub cx: f32,
    pub cy: f32,
    pub a: f32,
    pub b: f32,
    pub theta: f32,
    pub color: [f32; 3],
}

impl Ellipse {
    /// Whether the pixel centre `(x, y)` is inside or on the boundary.
    pub fn contains(&self, x: f32, y: f32) -> bool {
        let (s, c) = self.theta.sin_cos();
        let dx = x - self.cx;
        let dy = y - self.cy;
        let u = c * dx + s * dy;
        let v = -s * dx + c * dy;
        (u / self.a).powi(2) + (v / self.b).powi(2) <= 1.0
    }
}

pub fn rasterize(ellipses: &[Ellipse], height: usize, width: usize) -> BinaryMask {
    BinaryMask::from_fn(height, width, |y, x| {
        ellipses.iter().any(|e| e.contains(x as f32, y as f32))
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDataset {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
}

fn background<R: Rng + ?Sized>(rng: &mut R, h: usize, w: usize) -> ImageTensor {
    let base: f32 = rng.random_range(0.25..0.75);
    let tint: [f32; 3] = [0, 1, 2].map(|_| rng.random_range(-0.04..0.04));
    let waves: Vec<(f32, f32, f32, f32)> = (0..2)
        .map(|_| {
            (
                rng.random_range(0.05..0.4),
                rng.random_range(0.05..0.4),
                rng.random_range(0.0..2.0 * PI),
                rng.random_range(0.03..0.08),
            )
        })
        .collect();
    let mut img = ImageTensor::zeros(3, h, w);
    for y in 0..h {
        for x in 0..w {
            let tex: f32 = waves
                .iter()
                .map(|&(fx, fy, ph, amp)| amp * (fx * x as f32 + fy * y as f32 + ph).sin())
                .sum();
            let grain: f32 = rng.random_range(-0.05..0.05);
            for (c, t) in tint.iter().enumerate() {
                img.set(c, y, x, (base + t + tex + grain).clamp(0.0, 1.0));
            }
        }
    }
    img
}

fn ellipse<R: Rng + ?Sized>(rng: &mut R, variant: SynthVariant, h: usize, w: usize) -> Ellipse {
    let (lo, hi) = match variant {
        SynthVariant::Ego => (6.0, 16.0),
        SynthVariant::Exo => (4.0, 12.0),
    };
    let a: f32 = rng.random_range(lo..hi);
    let b: f32 = rng.random_range(lo..hi);
    let theta = rng.random_range(0.0..PI);
    let (cx, cy) = match variant {
        SynthVariant::Ego => {
            let cx = rng.random_range(4..w - 4) as f32;
            let d = rng.random_range(-0.5..=0.5) * a.min(b);
            (cx, (h - 1) as f32 + d)
        }
        SynthVariant::Exo => (
            rng.random_range(6.0..(w as f32 - 6.0)),
            rng.random_range(6.0..(h as f32 - 6.0)),
        ),
    };
    let (r, g, bl) = hsv_to_rgb(
        rng.random_range(0.0..360.0),
        rng.random_range(0.65..1.0),
        rng.random_range(0.55..1.0),
    );
    Ellipse {
        cx,
        cy,
        a,
        b,
        theta,
        color: [r, g, bl],
    }
}

/// One `TOY_SIZE²` image with 1–3 saturated ellipses on textured,
/// low-saturation noise, plus the ellipses that define its mask.
pub fn synth_sample<R: Rng + ?Sized>(
    id: impl Into<String>,
    variant: SynthVariant,
    rng: &mut R,
) -> (Sample, Vec<Ellipse>) {
    let (h, w) = (TOY_SIZE, TOY_SIZE);
    let mut image = background(rng, h, w);
    let n = rng.random_range(1..=3);
    let ellipses: Vec<Ellipse> = (0..n).map(|_| ellipse(rng, variant, h, w)).collect();
    for y in 0..h {
        for x in 0..w {
            if let Some(e) = ellipses.iter().rev().find(|e| e.contains(x as f32, y as f32)) {
                for c in 0..3 {
                    let jitter: f32 = rng.random_range(-0.03..0.03);
                    image.set(c, y, x, (e.color[c] + jitter).clamp(0.0, 1.0));
                }
            }
        }
    }
    let mask = rasterize(&ellipses, h, w);
    let sample = Sample::new(id, image, mask, variant.origin()).expect("dims agree");
    (sample, ellipses)
}

/// Toy train/val split, generated sequentially from `rng`.
pub fn synth_blobs<R: Rng + ?Sized>(
    n_train: usize,
    n_val: usize,
    variant: SynthVariant,
    rng: &mut R,
) -> Result<ToyDataset> {
    if n_train == 0 || n_val == 0 {
        return Err(Error::Invalid(
            "toy dataset needs at least one train and one val sample".into(),
        ));
    }
    let tag = match variant {
        SynthVariant::Ego => "ego",
        SynthVariant::Exo => "exo",
    };
    let mut gen = |split: &str, n: usize| -> Vec<Sample> {
        (0..n)
            .map(|i| synth_sample(format!("{tag}_{split}_{i:04}"), variant, rng).0)
            .collect()
    };
    let train = gen("train", n_train);
    let val = gen("val", n_val);
    Ok(ToyDataset { train, val })
}
