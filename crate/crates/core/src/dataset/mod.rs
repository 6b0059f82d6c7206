//! Training data: EGO-body synthesis, augmentation, COCO-body filtering,
//! balanced assembly and a synthetic toy set.

mod augment;
mod chroma;
mod coco;
mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging;
use crate::mask::BinaryMask;
use crate::tensor::ImageTensor;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use chroma::{chroma_key, composite, rgb_to_hsv, ChromaConfig};
pub use coco::{coco_body_filter, coco_body_filter_str, CocoImage, PERSON_CATEGORY};
pub use synth::{rasterize, synth_blobs, synth_sample, Ellipse, SynthVariant, ToyDataset, TOY_SIZE};

/// Whether a sample shows the wearer's own body or other people.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Origin {
    Ego,
    Exo,
}

/// Capture metadata of an egocentric shot.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Meta {
    pub height_m: Option<f32>,
    /// Yaw, pitch, roll in degrees.
    pub orientation_deg: Option<[f32; 3]>,
}

impl Meta {
    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let mut meta = Meta::default();
        for (i, line) in text.lines().enumerate() {
            let err = |detail: String| Error::Parse {
                path: path.to_string(),
                line: i + 1,
                detail,
            };
            let toks: Vec<&str> = line.split_whitespace().collect();
            let nums = |toks: &[&str]| -> Result<Vec<f32>> {
                toks.iter()
                    .map(|t| t.parse::<f32>().map_err(|_| err(format!("{t:?} is not a number"))))
                    .collect()
            };
            match toks.as_slice() {
                [] => {}
                ["height_m", rest @ ..] => match nums(rest)?.as_slice() {
                    [h] => meta.height_m = Some(*h),
                    _ => return Err(err("height_m takes one value".into())),
                },
                ["orientation_deg", rest @ ..] => match nums(rest)?.as_slice() {
                    [y, p, r] => meta.orientation_deg = Some([*y, *p, *r]),
                    _ => return Err(err("orientation_deg takes yaw pitch roll".into())),
                },
                [key, ..] => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        Ok(meta)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        if let Some(h) = self.height_m {
            out.push_str(&format!("height_m {h}\n"));
        }
        if let Some([y, p, r]) = self.orientation_deg {
            out.push_str(&format!("orientation_deg {y} {p} {r}\n"));
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.height_m.is_none() && self.orientation_deg.is_none()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub image: ImageTensor,
    pub mask: BinaryMask,
    pub origin: Origin,
    pub meta: Meta,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: ImageTensor, mask: BinaryMask, origin: Origin) -> Result<Self> {
        if image.channels() != 3 || (image.height(), image.width()) != mask.dims() {
            return Err(Error::shape(
                "Sample::new",
                format!("image {:?} vs mask {:?}", image.shape(), mask.dims()),
            ));
        }
        Ok(Self {
            id: id.into(),
            image,
            mask,
            origin,
            meta: Meta::default(),
        })
    }

    pub fn with_meta(self, meta: Meta) -> Self {
        Self { meta, ..self }
    }

    /// Copy resized to `size × size` (bilinear image, nearest mask).
    pub fn resized(&self, size: usize) -> Sample {
        if self.mask.dims() == (size, size) {
            return self.clone();
        }
        let image = imaging::resize_bilinear(&self.image, size, size);
        let (h, w) = self.mask.dims();
        let mask = BinaryMask::from_fn(size, size, |y, x| {
            let sy = (((y as f64 + 0.5) * h as f64 / size as f64) as usize).min(h - 1);
            let sx = (((x as f64 + 0.5) * w as f64 / size as f64) as usize).min(w - 1);
            self.mask.get(sy, sx)
        });
        Sample {
            image,
            mask,
            ..self.clone()
        }
    }
}

/// All ego samples plus an equally sized, uniformly drawn subset of the
/// exo samples, shuffled together.
pub fn balanced_sampler<R: Rng + ?Sized>(ego: &[Sample], exo: &[Sample], rng: &mut R) -> Result<Vec<Sample>> {
    if exo.len() < ego.len() {
        return Err(Error::Invalid(format!(
            "cannot balance {} ego samples with only {} exo samples",
            ego.len(),
            exo.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(rng, exo.len(), ego.len()).into_vec();
    picked.sort_unstable();
    let mut out: Vec<Sample> = ego.to_vec();
    out.extend(picked.into_iter().map(|i| exo[i].clone()));
    out.shuffle(rng);
    Ok(out)
}

fn read_dir_sorted(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<_>>()?;
    paths.sort();
    Ok(paths)
}

/// Sorted `*.png` files of a directory.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(read_dir_sorted(dir)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .collect())
}

pub fn read_meta(path: &Path) -> Result<Option<Meta>> {
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Meta::parse(&text, &path.display().to_string()).map(Some)
}

/// Loads every `<id>_img.png` / `<id>_mask.png` pair of a split directory.
pub fn load_split(dir: &Path, origin: Origin) -> Result<Vec<Sample>> {
    let ids: Vec<String> = read_dir_sorted(dir)?
        .iter()
        .filter_map(|p| p.file_name()?.to_str()?.strip_suffix("_img.png").map(str::to_string))
        .collect();
    ids.par_iter()
        .map(|id| {
            let image = imaging::read_rgb(&dir.join(format!("{id}_img.png")))?;
            let mask = imaging::read_mask(&dir.join(format!("{id}_mask.png")))?;
            let meta = read_meta(&dir.join(format!("{id}_meta.txt")))?.unwrap_or_default();
            Ok(Sample::new(id.clone(), image, mask, origin)?.with_meta(meta))
        })
        .collect()
}

pub fn write_sample(dir: &Path, sample: &Sample) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    imaging::write_rgb(&sample.image, &dir.join(format!("{}_img.png", sample.id)))?;
    imaging::write_mask(&sample.mask, &dir.join(format!("{}_mask.png", sample.id)))?;
    if !sample.meta.is_empty() {
        let p = dir.join(format!("{}_meta.txt", sample.id));
        fs::write(&p, sample.meta.render()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Loads `<root>/train` and `<root>/val`.
pub fn load_dataset(root: &Path, origin: Origin) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let train = load_split(&root.join("train"), origin)?;
    let val_dir = root.join("val");
    let val = if val_dir.is_dir() {
        load_split(&val_dir, origin)?
    } else {
        Vec::new()
    };
    Ok((train, val))
}

pub fn write_dataset(root: &Path, train: &[Sample], val: &[Sample]) -> Result<()> {
    for (split, samples) in [("train", train), ("val", val)] {
        let dir = root.join(split);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        samples.par_iter().try_for_each(|s| write_sample(&dir, s))?;
    }
    Ok(())
}
