use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::chroma::{hsv_to_rgb, rgb_to_hsv};
use super::Sample;
use crate::error::{Error, Result};
use crate::imaging::{sample_bilinear, sample_nearest};
use crate::mask::BinaryMask;
use crate::tensor::ImageTensor;

pub const MAX_ROTATION_DEG: f32 = 30.0;

/// Augmentation switches and ranges. A `None` range disables that op.
/// There is deliberately no vertical flip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Additive offset drawn from `[−b, b]`.
    pub brightness: Option<f32>,
    /// Saturation factor `1 + d`, `d ∈ [−s, s]`.
    pub saturation: Option<f32>,
    /// Hue rotation in degrees, `[−h, h]`.
    pub hue_deg: Option<f32>,
    /// Contrast factor range around the image mean.
    pub contrast: Option<(f32, f32)>,
    /// Noise standard deviation drawn from `[0, σ]`.
    pub noise_sigma: Option<f32>,
    pub hflip_prob: f32,
    pub scale: Option<(f32, f32)>,
    pub rotation_deg: Option<(f32, f32)>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            brightness: Some(0.2),
            saturation: Some(0.2),
            hue_deg: Some(10.0),
            contrast: Some((0.8, 1.25)),
            noise_sigma: Some(0.03),
            hflip_prob: 0.5,
            scale: Some((0.9, 1.1)),
            rotation_deg: Some((-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            brightness: None,
            saturation: None,
            hue_deg: None,
            contrast: None,
            noise_sigma: None,
            hflip_prob: 0.0,
            scale: None,
            rotation_deg: None,
        }
    }

    pub fn geometric_only() -> Self {
        Self {
            hflip_prob: 0.5,
            scale: Some((0.9, 1.1)),
            rotation_deg: Some((-MAX_ROTATION_DEG, MAX_ROTATION_DEG)),
            ..Self::none()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("augmentation: {what}")));
        for (name, v) in [
            ("brightness", self.brightness),
            ("saturation", self.saturation),
            ("hue", self.hue_deg),
            ("noise sigma", self.noise_sigma),
        ] {
            if let Some(v) = v {
                if !(v.is_finite() && v >= 0.0) {
                    return bad(&format!("{name} range {v} must be finite and non-negative"));
                }
            }
        }
        if let Some(s) = self.saturation {
            if s > 1.0 {
                return bad("saturation range must be at most 1");
            }
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) {
            return bad("flip probability must lie in [0, 1]");
        }
        if let Some((lo, hi)) = self.contrast {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad("contrast range must be positive and ordered");
            }
        }
        if let Some((lo, hi)) = self.scale {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return bad("scale range must be positive and ordered");
            }
        }
        if let Some((lo, hi)) = self.rotation_deg {
            if !(lo <= hi && lo >= -MAX_ROTATION_DEG && hi <= MAX_ROTATION_DEG) {
                return bad("rotation range must be ordered and within [-30, 30] degrees");
            }
        }
        Ok(())
    }

    /// Draws one set of augmentation parameters. Every draw happens in a
    /// fixed order whether or not the op is enabled, so toggling one op
    /// does not reshuffle the others.
    pub fn sample_params<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentParams {
        let sym = |rng: &mut R, r: Option<f32>| {
            let u: f32 = rng.random_range(-1.0..=1.0);
            r.map_or(0.0, |r| u * r)
        };
        let span = |rng: &mut R, r: Option<(f32, f32)>, neutral: f32| {
            let u: f32 = rng.random();
            r.map_or(neutral, |(lo, hi)| lo + u * (hi - lo))
        };
        let brightness = sym(rng, self.brightness);
        let saturation = sym(rng, self.saturation);
        let hue_deg = sym(rng, self.hue_deg);
        let contrast = span(rng, self.contrast, 1.0);
        let noise_u: f32 = rng.random();
        let noise_sigma = self.noise_sigma.map_or(0.0, |s| noise_u * s);
        let noise_seed: u64 = rng.random();
        let flip = rng.random::<f32>() < self.hflip_prob;
        let scale = span(rng, self.scale, 1.0);
        let rotation_deg = span(rng, self.rotation_deg, 0.0);
        AugmentParams {
            brightness,
            saturation,
            hue_deg,
            contrast,
            noise_sigma,
            noise_seed,
            flip,
            scale,
            rotation_deg,
        }
    }
}

/// One concrete draw of augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub brightness: f32,
    pub saturation: f32,
    pub hue_deg: f32,
    pub contrast: f32,
    pub noise_sigma: f32,
    pub noise_seed: u64,
    pub flip: bool,
    pub scale: f32,
    pub rotation_deg: f32,
}

impl AugmentParams {
    pub fn is_geometric_identity(&self) -> bool {
        !self.flip && self.scale == 1.0 && self.rotation_deg == 0.0
    }

    fn photometric(&self, image: &mut ImageTensor) {
        let (h, w) = (image.height(), image.width());
        if self.brightness != 0.0 {
            image.data_mut().iter_mut().for_each(|v| *v += self.brightness);
        }
        if self.contrast != 1.0 {
            let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / image.data().len().max(1) as f64;
            let mean = mean as f32;
            image
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v - mean) * self.contrast + mean);
        }
        if self.saturation != 0.0 || self.hue_deg != 0.0 {
            for y in 0..h {
                for x in 0..w {
                    let rgb = [0, 1, 2].map(|c| image.get(c, y, x).clamp(0.0, 1.0));
                    let (hh, s, v) = rgb_to_hsv(rgb[0], rgb[1], rgb[2]);
                    let s = (s * (1.0 + self.saturation)).clamp(0.0, 1.0);
                    let (r, g, b) = hsv_to_rgb(hh + self.hue_deg, s, v);
                    image.set(0, y, x, r);
                    image.set(1, y, x, g);
                    image.set(2, y, x, b);
                }
            }
        }
        if self.noise_sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(self.noise_seed);
            let normal = Normal::new(0.0f32, self.noise_sigma).expect("positive sigma");
            image.data_mut().iter_mut().for_each(|v| *v += normal.sample(&mut rng));
        }
        image.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    /// Source coordinates of output pixel `(x, y)`: inverse of flip, then
    /// scale and rotation about the image centre.
    fn source(&self, x: usize, y: usize, w: usize, h: usize) -> (f64, f64) {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (h as f64 - 1.0) / 2.0;
        let (s, c) = (self.rotation_deg as f64).to_radians().sin_cos();
        let scale = self.scale as f64;
        let u = x as f64 - cx;
        let v = y as f64 - cy;
        let sx = (c * u + s * v) / scale + cx;
        let sy = (-s * u + c * v) / scale + cy;
        if self.flip {
            ((w as f64 - 1.0) - sx, sy)
        } else {
            (sx, sy)
        }
    }

    fn geometric(&self, image: &ImageTensor, mask: &BinaryMask) -> (ImageTensor, BinaryMask) {
        let (c, h, w) = image.shape();
        let mut out = ImageTensor::zeros(c, h, w);
        let mut out_mask = BinaryMask::zeros(h, w);
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x, y, w, h);
                for ch in 0..c {
                    out.set(ch, y, x, sample_bilinear(image.plane(ch), w, h, sx, sy, 0.0));
                }
                if let Some((mx, my)) = sample_nearest(w, h, sx, sy) {
                    out_mask.set(y, x, mask.get(my, mx));
                }
            }
        }
        (out, out_mask)
    }

    pub fn apply(&self, sample: &Sample) -> Sample {
        let mut image = sample.image.clone();
        self.photometric(&mut image);
        let (image, mask) = if self.is_geometric_identity() {
            (image, sample.mask.clone())
        } else {
            self.geometric(&image, &sample.mask)
        };
        Sample {
            image,
            mask,
            ..sample.clone()
        }
    }
}

/// Photometric ops on the image, then flip/scale/rotate applied to image
/// (bilinear) and mask (nearest) alike. Out-of-frame pixels become 0.
pub fn augment<R: Rng + ?Sized>(sample: &Sample, cfg: &AugmentConfig, rng: &mut R) -> Sample {
    cfg.sample_params(rng).apply(sample)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::Origin;

    fn sample() -> Sample {
        let image = ImageTensor::from_fn(3, 8, 6, |c, y, x| ((c * 7 + y * 3 + x) % 10) as f32 / 10.0);
        let mask = BinaryMask::from_fn(8, 6, |y, x| x < 2 && y > 3);
        Sample::new("s", image, mask, Origin::Exo).unwrap()
    }

    #[test]
    fn flip_only_mirrors_mask() {
        let cfg = AugmentConfig {
            hflip_prob: 1.0,
            ..AugmentConfig::none()
        };
        let s = sample();
        let out = augment(&s, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
        for y in 0..8 {
            for x in 0..6 {
                assert_eq!(out.mask.get(y, x), s.mask.get(y, 5 - x));
                assert_eq!(out.image.get(1, y, x), s.image.get(1, y, 5 - x));
            }
        }
    }

    #[test]
    fn disabled_is_identity() {
        let s = sample();
        let out = augment(&s, &AugmentConfig::none(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(out, s);
    }

    #[test]
    fn validation() {
        assert!(AugmentConfig::default().validate().is_ok());
        let bad = AugmentConfig {
            rotation_deg: Some((-45.0, 10.0)),
            ..AugmentConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
