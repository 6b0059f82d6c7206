//! Resampling and PNG I/O for image tensors and masks.

use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::mask::{BinaryMask, ProbMask};
use crate::tensor::ImageTensor;

/// Bilinear sample of one plane at continuous pixel coordinates
/// (pixel centres sit on integers). Outside `[0, w−1] × [0, h−1]` → `fill`.
#[inline]
pub fn sample_bilinear(plane: &[f32], w: usize, h: usize, x: f64, y: f64, fill: f32) -> f32 {
    if !(x >= 0.0 && y >= 0.0 && x <= (w - 1) as f64 && y <= (h - 1) as f64) {
        return fill;
    }
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let p = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
    let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Nearest-neighbour sample; outside the frame → `None`.
#[inline]
pub fn sample_nearest(w: usize, h: usize, x: f64, y: f64) -> Option<(usize, usize)> {
    let xr = x.round();
    let yr = y.round();
    if xr < 0.0 || yr < 0.0 || xr > (w - 1) as f64 || yr > (h - 1) as f64 {
        return None;
    }
    Some((xr as usize, yr as usize))
}

fn resize_plane(src: &[f32], sw: usize, sh: usize, dw: usize, dh: usize, out: &mut [f32]) {
    let sx = sw as f64 / dw as f64;
    let sy = sh as f64 / dh as f64;
    for y in 0..dh {
        let yy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f64);
        for x in 0..dw {
            let xx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f64);
            out[y * dw + x] = sample_bilinear(src, sw, sh, xx, yy, 0.0);
        }
    }
}

/// Bilinear resize with centre-aligned sampling and edge clamping.
pub fn resize_bilinear(img: &ImageTensor<f32>, height: usize, width: usize) -> ImageTensor<f32> {
    if img.height() == height && img.width() == width {
        return img.clone();
    }
    let mut out = ImageTensor::zeros(img.channels(), height, width);
    for c in 0..img.channels() {
        resize_plane(img.plane(c), img.width(), img.height(), width, height, out.plane_mut(c));
    }
    out
}

pub fn resize_prob(mask: &ProbMask, height: usize, width: usize) -> ProbMask {
    let t = resize_bilinear(&mask.to_tensor(), height, width);
    let data = t.into_data().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ProbMask::new(height, width, data).expect("clamped")
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

fn save<P, C>(buf: &ImageBuffer<P, C>, path: &Path) -> Result<()>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    buf.save(path).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

#[inline]
fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Three-channel tensor with values in `[0, 1]`.
pub fn rgb_from_image(img: &RgbImage) -> ImageTensor<f32> {
    let (w, h) = img.dimensions();
    ImageTensor::from_fn(3, h as usize, w as usize, |c, y, x| {
        img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
    })
}

pub fn rgb_to_image(t: &ImageTensor<f32>) -> RgbImage {
    RgbImage::from_fn(t.width() as u32, t.height() as u32, |x, y| {
        let (x, y) = (x as usize, y as usize);
        Rgb([to_u8(t.get(0, y, x)), to_u8(t.get(1, y, x)), to_u8(t.get(2, y, x))])
    })
}

pub fn read_rgb(path: &Path) -> Result<ImageTensor<f32>> {
    Ok(rgb_from_image(&open(path)?.to_rgb8()))
}

pub fn write_rgb(t: &ImageTensor<f32>, path: &Path) -> Result<()> {
    if t.channels() != 3 {
        return Err(Error::shape("write_rgb", format!("{} channels", t.channels())));
    }
    save(&rgb_to_image(t), path)
}

/// Gray mask, pixels above 127 are person.
pub fn read_mask(path: &Path) -> Result<BinaryMask> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    Ok(BinaryMask::from_fn(h as usize, w as usize, |y, x| {
        g.get_pixel(x as u32, y as u32)[0] > 127
    }))
}

/// Writes 0 / 255.
pub fn write_mask(mask: &BinaryMask, path: &Path) -> Result<()> {
    let g = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }])
    });
    save(&g, path)
}

pub fn write_prob(mask: &ProbMask, path: &Path) -> Result<()> {
    let g = GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |x, y| {
        Luma([to_u8(mask.get(y as usize, x as usize))])
    });
    save(&g, path)
}

pub fn read_prob(path: &Path) -> Result<ProbMask> {
    let g = open(path)?.to_luma8();
    let (w, h) = g.dimensions();
    let data = g.pixels().map(|p| p[0] as f32 / 255.0).collect();
    ProbMask::new(h as usize, w as usize, data)
}

/// 16-bit gray depth map in millimetres; 0 marks an invalid pixel.
pub fn read_depth_mm(path: &Path) -> Result<Vec<f32>> {
    let g = open(path)?.to_luma16();
    Ok(g.pixels()
        .map(|p| if p[0] == 0 { f32::INFINITY } else { p[0] as f32 / 1000.0 })
        .collect())
}
