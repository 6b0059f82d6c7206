use std::collections::BTreeSet;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{ms_to_us, write_timing_csv, FrameRecord, DEFAULT_CAPTURE_MS, DEFAULT_FPS};
use crate::compositor::{
    alpha_composite, eye_to_zed_pixel, Camera, CameraRig, CompositeInputs, DepthMap, VIDEO_PLANE_DISTANCE,
};
use crate::dataset::list_pngs;
use crate::error::{Error, Result};
use crate::imaging::{read_depth_mm, read_rgb, resize_bilinear, resize_prob, sample_bilinear, write_prob, write_rgb};
use crate::mask::ProbMask;
use crate::metrics::{binarize, stereo_consistency, DEFAULT_THRESHOLD};
use crate::model::{predict, WeightBundle};
use crate::tensor::ImageTensor;

/// Depth of the procedural scene used when no virtual layer is given.
pub const VIRTUAL_DEPTH_M: f32 = 2.0;
/// Video depth assumed where no depth map accompanies a frame.
pub const DEFAULT_VIDEO_DEPTH_M: f32 = 1.0;

#[derive(Clone, Debug)]
pub struct SegmentConfig {
    pub input: PathBuf,
    pub output: PathBuf,
    /// Directory with `<n>_L.png` / `<n>_R.png` virtual renders and optional
    /// `<n>_L_depth.png` depth maps.
    pub virtual_dir: Option<PathBuf>,
    /// When set, composites are produced in eye-display space.
    pub rig: Option<CameraRig>,
    pub threshold: f32,
    pub capture_ms: f64,
    pub fps: f64,
    pub parallel_eyes: bool,
}

impl SegmentConfig {
    pub fn new(input: impl Into<PathBuf>, output: impl Into<PathBuf>) -> Self {
        Self {
            input: input.into(),
            output: output.into(),
            virtual_dir: None,
            rig: None,
            threshold: DEFAULT_THRESHOLD,
            capture_ms: DEFAULT_CAPTURE_MS,
            fps: DEFAULT_FPS,
            parallel_eyes: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentSummary {
    pub frames: Vec<String>,
    pub skipped: Vec<String>,
    pub records: Vec<FrameRecord>,
    /// Fraction of agreeing pixels between the binarised L and R masks.
    pub stereo_consistency: Vec<f64>,
}

/// Smooth colour ramp standing in for a rendered virtual scene.
pub fn gradient_scene(height: usize, width: usize) -> (ImageTensor, DepthMap) {
    let fx = |x: usize| x as f32 / width.saturating_sub(1).max(1) as f32;
    let fy = |y: usize| y as f32 / height.saturating_sub(1).max(1) as f32;
    let img = ImageTensor::from_fn(3, height, width, |c, y, x| match c {
        0 => 0.2 + 0.6 * fx(x),
        1 => 0.3 + 0.4 * fy(y),
        _ => 0.8 - 0.5 * fx(x),
    });
    (img, DepthMap::constant(height, width, VIRTUAL_DEPTH_M))
}

fn frame_names(dir: &Path) -> Result<(Vec<String>, Vec<String>)> {
    let mut left = BTreeSet::new();
    let mut right = BTreeSet::new();
    for p in list_pngs(dir)? {
        let Some(name) = p.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if let Some(n) = name.strip_suffix("_L.png") {
            left.insert(n.to_string());
        } else if let Some(n) = name.strip_suffix("_R.png") {
            right.insert(n.to_string());
        }
    }
    let complete = left.intersection(&right).cloned().collect();
    let skipped = left.symmetric_difference(&right).cloned().collect();
    Ok((complete, skipped))
}

fn load_depth(path: &Path, h: usize, w: usize, default: f32) -> Result<DepthMap> {
    if !path.exists() {
        return Ok(DepthMap::constant(h, w, default));
    }
    DepthMap::new(h, w, read_depth_mm(path)?)
        .map_err(|_| Error::Invalid(format!("{}: depth map is not {w}x{h}", path.display())))
}

struct EyeLayers {
    video: ImageTensor,
    video_depth: DepthMap,
    virtual_rgb: ImageTensor,
    virtual_depth: DepthMap,
}

fn load_eye(cfg: &SegmentConfig, name: &str, side: char, eye: Option<&Camera>) -> Result<EyeLayers> {
    let video = read_rgb(&cfg.input.join(format!("{name}_{side}.png")))?;
    let (h, w) = (video.height(), video.width());
    let video_depth = load_depth(
        &cfg.input.join(format!("{name}_{side}_depth.png")),
        h,
        w,
        DEFAULT_VIDEO_DEPTH_M,
    )?;
    let (vh, vw) = eye.map_or((h, w), |c| (c.intrinsics.height, c.intrinsics.width));
    let (virtual_rgb, virtual_depth) = match &cfg.virtual_dir {
        Some(dir) => {
            let rgb = read_rgb(&dir.join(format!("{name}_{side}.png")))?;
            if (rgb.height(), rgb.width()) != (vh, vw) {
                return Err(Error::Invalid(format!(
                    "virtual layer {name}_{side} is {}x{}, expected {vw}x{vh}",
                    rgb.width(),
                    rgb.height()
                )));
            }
            let depth = load_depth(&dir.join(format!("{name}_{side}_depth.png")), vh, vw, VIRTUAL_DEPTH_M)?;
            (rgb, depth)
        }
        None => gradient_scene(vh, vw),
    };
    Ok(EyeLayers {
        video,
        video_depth,
        virtual_rgb,
        virtual_depth,
    })
}

/// Resamples zed-space layers into the eye display. Pixels the zed camera
/// does not see get zero probability and infinite depth.
fn to_eye_space(
    zed: &Camera,
    eye: &Camera,
    video: &ImageTensor,
    prob: &ProbMask,
    depth: &DepthMap,
) -> (ImageTensor, ProbMask, DepthMap) {
    let (eh, ew) = (eye.intrinsics.height, eye.intrinsics.width);
    let (zh, zw) = prob.dims();
    let n = eh * ew;
    let mut rgb = vec![0.0f32; 3 * n];
    let mut p = vec![0.0f32; n];
    let mut d = vec![f32::INFINITY; n];
    for y in 0..eh {
        for x in 0..ew {
            let i = y * ew + x;
            let Some((zx, zy)) = eye_to_zed_pixel(zed, eye, x as f64, y as f64, VIDEO_PLANE_DISTANCE) else {
                continue;
            };
            if zx < 0.0 || zy < 0.0 || zx > (zw - 1) as f64 || zy > (zh - 1) as f64 {
                continue;
            }
            for c in 0..3 {
                rgb[c * n + i] = sample_bilinear(video.plane(c), zw, zh, zx, zy, 0.0);
            }
            p[i] = sample_bilinear(prob.data(), zw, zh, zx, zy, 0.0).clamp(0.0, 1.0);
            d[i] = depth.effective((zy.round() as usize) * zw + zx.round() as usize);
        }
    }
    (
        ImageTensor::new(3, eh, ew, rgb).expect("sized above"),
        ProbMask::new(eh, ew, p).expect("clamped"),
        DepthMap::new(eh, ew, d).expect("sized above"),
    )
}

fn composite_eye(layers: &EyeLayers, prob: &ProbMask, cams: Option<(&Camera, &Camera)>) -> Result<ImageTensor> {
    match cams {
        None => alpha_composite(&CompositeInputs {
            video: &layers.video,
            prob,
            video_depth: &layers.video_depth,
            virtual_rgb: &layers.virtual_rgb,
            virtual_depth: &layers.virtual_depth,
        }),
        Some((zed, eye)) => {
            let (video, p, depth) = to_eye_space(zed, eye, &layers.video, prob, &layers.video_depth);
            alpha_composite(&CompositeInputs {
                video: &video,
                prob: &p,
                video_depth: &depth,
                virtual_rgb: &layers.virtual_rgb,
                virtual_depth: &layers.virtual_depth,
            })
        }
    }
}

fn both<A: Send, B: Send>(parallel: bool, a: impl FnOnce() -> A + Send, b: impl FnOnce() -> B + Send) -> (A, B) {
    if parallel {
        rayon::join(a, b)
    } else {
        (a(), b())
    }
}

/// Segments and composites every stereo pair in `cfg.input`, writing
/// `<n>_{L,R}_mask.png`, `<n>_{L,R}_composite.png` and `timing.csv`.
pub fn segment_frames(bundle: &WeightBundle, cfg: &SegmentConfig) -> Result<SegmentSummary> {
    if !(cfg.fps > 0.0 && cfg.fps.is_finite()) {
        return Err(Error::Invalid(format!("fps must be positive, got {}", cfg.fps)));
    }
    if !(0.0..=1.0).contains(&cfg.threshold) {
        return Err(Error::Invalid(format!(
            "threshold must lie in [0, 1], got {}",
            cfg.threshold
        )));
    }
    let (frames, skipped) = frame_names(&cfg.input)?;
    for s in &skipped {
        log::warn!("frame {s}: stereo pair incomplete, skipped");
    }
    std::fs::create_dir_all(&cfg.output).map_err(|e| Error::io(&cfg.output, e))?;
    let size = bundle.arch().input_size;
    let rig = cfg.rig.as_ref();
    let mut records = Vec::with_capacity(frames.len());
    let mut consistency = Vec::with_capacity(frames.len());
    for (index, name) in frames.iter().enumerate() {
        let (l, r) = both(
            cfg.parallel_eyes,
            || load_eye(cfg, name, 'L', rig.map(|r| &r.eye_left)),
            || load_eye(cfg, name, 'R', rig.map(|r| &r.eye_right)),
        );
        let (l, r) = (l?, r?);

        let t0 = Instant::now();
        let (sl, sr) = both(
            cfg.parallel_eyes,
            || resize_bilinear(&l.video, size, size),
            || resize_bilinear(&r.video, size, size),
        );
        let t1 = Instant::now();
        let (pl, pr) = both(cfg.parallel_eyes, || predict(bundle, &sl), || predict(bundle, &sr));
        let (pl, pr) = (pl?, pr?);
        let t2 = Instant::now();
        let (ml, mr) = both(
            cfg.parallel_eyes,
            || resize_prob(&pl, l.video.height(), l.video.width()),
            || resize_prob(&pr, r.video.height(), r.video.width()),
        );
        let (cl, cr) = both(
            cfg.parallel_eyes,
            || composite_eye(&l, &ml, rig.map(|r| (&r.zed_left, &r.eye_left))),
            || composite_eye(&r, &mr, rig.map(|r| (&r.zed_right, &r.eye_right))),
        );
        let (cl, cr) = (cl?, cr?);
        let t3 = Instant::now();

        let out = |suffix: &str| cfg.output.join(format!("{name}_{suffix}.png"));
        write_prob(&ml, &out("L_mask"))?;
        write_prob(&mr, &out("R_mask"))?;
        write_rgb(&cl, &out("L_composite"))?;
        write_rgb(&cr, &out("R_composite"))?;
        let agree = if ml.dims() == mr.dims() {
            stereo_consistency(&binarize(&ml, cfg.threshold), &binarize(&mr, cfg.threshold))?
        } else {
            f64::NAN
        };
        consistency.push(agree);
        let us = |a: Instant, b: Instant| b.duration_since(a).as_micros() as u64;
        records.push(FrameRecord {
            index,
            arrival_us: ms_to_us(index as f64 * 1000.0 / cfg.fps),
            processed: true,
            prep_us: us(t0, t1),
            inference_us: us(t1, t2),
            composite_us: us(t2, t3),
            capture_us: ms_to_us(cfg.capture_ms),
        });
    }
    write_timing_csv(&records, &cfg.output.join("timing.csv"))?;
    Ok(SegmentSummary {
        frames,
        skipped,
        records,
        stereo_consistency: consistency,
    })
}
