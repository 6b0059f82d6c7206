use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dataset::{chroma_key, composite, list_pngs, read_meta, write_dataset, ChromaConfig, Meta, Origin, Sample};
use crate::error::{Error, Result};
use crate::imaging::{read_rgb, resize_bilinear};

#[derive(Clone, Debug)]
pub struct ForgeConfig {
    /// Holds `foreground/` (green-screen shots) and `background/`.
    pub input: PathBuf,
    pub output: PathBuf,
    pub chroma: ChromaConfig,
    pub val_fraction: f64,
    pub seed: u64,
}

impl ForgeConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            chroma: ChromaConfig::default(),
            val_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ForgeSummary {
    /// `(foreground id, background id)` per forged sample.
    pub pairs: Vec<(String, String)>,
    pub train: usize,
    pub val: usize,
}

struct Shot {
    id: String,
    path: PathBuf,
    meta: Option<Meta>,
}

fn shots(dir: &Path) -> Result<Vec<Shot>> {
    list_pngs(dir)?
        .into_iter()
        .map(|path| {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Invalid(format!("{}: file name is not UTF-8", path.display())))?
                .to_string();
            let meta = read_meta(&dir.join(format!("{id}_meta.txt")))?;
            Ok(Shot { id, path, meta })
        })
        .collect()
}

fn angle_gap(a: f32, b: f32) -> f32 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

fn orientation_distance(a: &[f32; 3], b: &[f32; 3]) -> f32 {
    a.iter().zip(b).map(|(&x, &y)| angle_gap(x, y).powi(2)).sum()
}

/// Background index for each foreground: nearest recorded head orientation
/// when both sides carry one, round-robin otherwise.
fn pair_backgrounds(fg: &[Shot], bg: &[Shot]) -> Vec<usize> {
    fg.iter()
        .enumerate()
        .map(|(i, f)| {
            let Some(fo) = f.meta.and_then(|m| m.orientation_deg) else {
                return i % bg.len();
            };
            bg.iter()
                .enumerate()
                .filter_map(|(j, b)| {
                    b.meta
                        .and_then(|m| m.orientation_deg)
                        .map(|bo| (j, orientation_distance(&fo, &bo)))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
                .map_or(i % bg.len(), |(j, _)| j)
        })
        .collect()
}

/// Keys every foreground shot, composites it over its paired background
/// and writes a seeded train/val split.
pub fn forge_dataset(cfg: &ForgeConfig) -> Result<ForgeSummary> {
    cfg.chroma.validate()?;
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::Invalid(format!(
            "val fraction must lie in [0, 1), got {}",
            cfg.val_fraction
        )));
    }
    let fg = shots(&cfg.input.join("foreground"))?;
    let bg = shots(&cfg.input.join("background"))?;
    if fg.is_empty() || bg.is_empty() {
        return Err(Error::Empty(format!(
            "{}: need at least one foreground and one background image, found {} and {}",
            cfg.input.display(),
            fg.len(),
            bg.len()
        )));
    }
    let pairing = pair_backgrounds(&fg, &bg);
    let samples: Vec<Sample> = fg
        .par_iter()
        .zip(pairing.par_iter())
        .map(|(f, &j)| {
            let image = read_rgb(&f.path)?;
            let mut back = read_rgb(&bg[j].path)?;
            if back.shape() != image.shape() {
                back = resize_bilinear(&back, image.height(), image.width());
            }
            let mask = chroma_key(&image, &cfg.chroma);
            let forged = composite(&image, &mask, &back)?;
            Ok(Sample::new(f.id.clone(), forged, mask, Origin::Ego)?.with_meta(f.meta.unwrap_or_default()))
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let n_val = (samples.len() as f64 * cfg.val_fraction).round() as usize;
    let mut val_idx = order[..n_val].to_vec();
    val_idx.sort_unstable();
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, s) in samples.iter().enumerate() {
        if val_idx.binary_search(&i).is_ok() {
            val.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    write_dataset(&cfg.output, &train, &val)?;
    Ok(ForgeSummary {
        pairs: fg
            .iter()
            .zip(&pairing)
            .map(|(f, &j)| (f.id.clone(), bg[j].id.clone()))
            .collect(),
        train: train.len(),
        val: val.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shot(id: &str, yaw: Option<f32>) -> Shot {
        Shot {
            id: id.into(),
            path: PathBuf::new(),
            meta: yaw.map(|y| Meta {
                height_m: None,
                orientation_deg: Some([y, 0.0, 0.0]),
            }),
        }
    }

    #[test]
    fn pairs_by_nearest_orientation() {
        let fg = [shot("a", Some(350.0)), shot("b", Some(95.0)), shot("c", None)];
        let bg = [shot("x", Some(0.0)), shot("y", Some(90.0)), shot("z", Some(180.0))];
        assert_eq!(pair_backgrounds(&fg, &bg), vec![0, 1, 2]);
    }

    #[test]
    fn round_robin_without_meta() {
        let fg: Vec<Shot> = (0..5).map(|i| shot(&i.to_string(), None)).collect();
        let bg = [shot("x", None), shot("y", None)];
        assert_eq!(pair_backgrounds(&fg, &bg), vec![0, 1, 0, 1, 0]);
    }
}
