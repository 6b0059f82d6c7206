use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::ImageTensor;

/// Green-screen keying thresholds in HSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChromaConfig {
    pub hue_min_deg: f32,
    pub hue_max_deg: f32,
    pub min_saturation: f32,
    pub min_value: f32,
}

impl Default for ChromaConfig {
    fn default() -> Self {
        Self {
            hue_min_deg: 75.0,
            hue_max_deg: 165.0,
            min_saturation: 0.3,
            min_value: 0.15,
        }
    }
}

impl ChromaConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = (0.0..=360.0).contains(&self.hue_min_deg)
            && (0.0..=360.0).contains(&self.hue_max_deg)
            && self.hue_min_deg < self.hue_max_deg
            && (0.0..=1.0).contains(&self.min_saturation)
            && (0.0..=1.0).contains(&self.min_value);
        if !ok {
            return Err(Error::Config(format!("invalid chroma window {self:?}")));
        }
        Ok(())
    }

    fn is_key(&self, r: f32, g: f32, b: f32) -> bool {
        let (h, s, v) = rgb_to_hsv(r, g, b);
        (self.hue_min_deg..=self.hue_max_deg).contains(&h) && s >= self.min_saturation && v >= self.min_value
    }
}

/// Hue in degrees `[0, 360)`, saturation and value in `[0, 1]`.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    (h, s, max)
}

pub(crate) fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(360.0) / 60.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    (r + m, g + m, b + m)
}

/// Foreground mask of a green-screen shot: keyed pixels are 0, the rest 1.
pub fn chroma_key(image: &ImageTensor, cfg: &ChromaConfig) -> BinaryMask {
    BinaryMask::from_fn(image.height(), image.width(), |y, x| {
        !cfg.is_key(image.get(0, y, x), image.get(1, y, x), image.get(2, y, x))
    })
}

/// `mask · foreground + (1 − mask) · background`.
pub fn composite(foreground: &ImageTensor, mask: &BinaryMask, background: &ImageTensor) -> Result<ImageTensor> {
    if foreground.shape() != background.shape() || (foreground.height(), foreground.width()) != mask.dims() {
        return Err(Error::shape(
            "composite",
            format!(
                "foreground {:?}, mask {:?}, background {:?}",
                foreground.shape(),
                mask.dims(),
                background.shape()
            ),
        ));
    }
    Ok(ImageTensor::from_fn(
        foreground.channels(),
        foreground.height(),
        foreground.width(),
        |c, y, x| {
            if mask.get(y, x) {
                foreground.get(c, y, x)
            } else {
                background.get(c, y, x)
            }
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(r: f32, g: f32, b: f32) -> ImageTensor {
        ImageTensor::from_fn(3, 1, 1, |c, _, _| [r, g, b][c])
    }

    #[test]
    fn key_examples() {
        let cfg = ChromaConfig::default();
        assert!(!chroma_key(&px(0.0, 1.0, 0.0), &cfg).get(0, 0));
        assert!(chroma_key(&px(1.0, 0.0, 0.0), &cfg).get(0, 0));
        assert!(chroma_key(&px(0.0, 0.1, 0.0), &cfg).get(0, 0));
    }

    #[test]
    fn hsv_round_trip() {
        for &(r, g, b) in &[(0.2, 0.5, 0.9), (0.9, 0.1, 0.4), (0.3, 0.3, 0.3), (0.0, 1.0, 0.5)] {
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn invalid_window_rejected() {
        let cfg = ChromaConfig {
            hue_min_deg: 200.0,
            hue_max_deg: 100.0,
            ..ChromaConfig::default()
        };
        assert!(cfg.validate().is_err());
    }
}
