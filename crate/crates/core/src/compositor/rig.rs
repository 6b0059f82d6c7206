//! Stereo rig description: two zed cameras and the two HMD eye cameras.
//!
//! ```text
//! camera cam_zed_left
//! fx 700
//! fy 700
//! cx 640
//! cy 360
//! width 1280
//! height 720
//! near 0.1
//! far 20
//! pose 1 0 0 0 1 0 0 0 1 -0.0315 0 0.08
//! ```
//!
//! `pose` lists the row-major camera-to-world rotation, then translation.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, Vector3};

use super::{Intrinsics, Pose};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Camera {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraRig {
    pub zed_left: Camera,
    pub zed_right: Camera,
    pub eye_left: Camera,
    pub eye_right: Camera,
}

const NAMES: [&str; 4] = ["cam_zed_left", "cam_zed_right", "cam_eye_left", "cam_eye_right"];
const KEYS: [&str; 9] = ["fx", "fy", "cx", "cy", "width", "height", "near", "far", "pose"];

impl CameraRig {
    /// Placeholder rig: a 1280×720 stereo camera with a 63 mm baseline,
    /// mounted 8 cm in front of 1440×1600 eye displays with a 100° FOV.
    pub fn placeholder() -> Self {
        let zed = Intrinsics::from_hfov(1280, 720, 86.0, 0.1, 20.0);
        let eye = Intrinsics::from_hfov(1440, 1600, 100.0, 0.1, 100.0);
        let at = |x: f64, z: f64| Pose {
            rotation: Matrix3::identity(),
            translation: Vector3::new(x, 0.0, z),
        };
        Self {
            zed_left: Camera {
                intrinsics: zed,
                pose: at(-0.0315, 0.08),
            },
            zed_right: Camera {
                intrinsics: zed,
                pose: at(0.0315, 0.08),
            },
            eye_left: Camera {
                intrinsics: eye,
                pose: at(-0.032, 0.0),
            },
            eye_right: Camera {
                intrinsics: eye,
                pose: at(0.032, 0.0),
            },
        }
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (name, cam) in NAMES.iter().zip(self.cameras()) {
            let i = &cam.intrinsics;
            let _ = writeln!(out, "camera {name}");
            let _ = writeln!(out, "fx {}\nfy {}\ncx {}\ncy {}", i.fx, i.fy, i.cx, i.cy);
            let _ = writeln!(
                out,
                "width {}\nheight {}\nnear {}\nfar {}",
                i.width, i.height, i.near, i.far
            );
            let r = &cam.pose.rotation;
            let t = &cam.pose.translation;
            let rs: Vec<String> = (0..3)
                .flat_map(|row| (0..3).map(move |col| r[(row, col)].to_string()))
                .collect();
            let _ = writeln!(out, "pose {} {} {} {}\n", rs.join(" "), t.x, t.y, t.z);
        }
        out
    }

    fn cameras(&self) -> [&Camera; 4] {
        [&self.zed_left, &self.zed_right, &self.eye_left, &self.eye_right]
    }

    pub fn parse(text: &str, path: &str) -> Result<Self> {
        let err = |line: usize, detail: String| Error::Parse {
            path: path.to_string(),
            line,
            detail,
        };
        let mut sections: BTreeMap<String, (usize, BTreeMap<&str, (usize, Vec<f64>)>)> = BTreeMap::new();
        let mut current: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            let lno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut toks = line.split_whitespace();
            let key = toks.next().expect("non-empty line");
            if key == "camera" {
                let name = toks.next().ok_or_else(|| err(lno, "camera line needs a name".into()))?;
                if !NAMES.contains(&name) {
                    return Err(err(lno, format!("unknown camera {name:?}, expected one of {NAMES:?}")));
                }
                if sections.insert(name.to_string(), (lno, BTreeMap::new())).is_some() {
                    return Err(err(lno, format!("camera {name} defined twice")));
                }
                current = Some(name.to_string());
                continue;
            }
            let Some(cur) = &current else {
                return Err(err(lno, format!("{key:?} before any camera line")));
            };
            let Some(&k) = KEYS.iter().find(|&&k| k == key) else {
                return Err(err(lno, format!("unknown key {key:?}")));
            };
            let vals = toks
                .map(|t| t.parse::<f64>().map_err(|_| err(lno, format!("{t:?} is not a number"))))
                .collect::<Result<Vec<_>>>()?;
            let want = if k == "pose" { 12 } else { 1 };
            if vals.len() != want {
                return Err(err(lno, format!("{k} takes {want} value(s), got {}", vals.len())));
            }
            sections.get_mut(cur).expect("section exists").1.insert(k, (lno, vals));
        }
        let mut cams = Vec::with_capacity(4);
        for name in NAMES {
            let (lno, keys) = sections
                .get(name)
                .ok_or_else(|| err(text.lines().count().max(1), format!("camera {name} is missing")))?;
            let get = |k: &str| -> Result<&Vec<f64>> {
                keys.get(k)
                    .map(|(_, v)| v)
                    .ok_or_else(|| err(*lno, format!("camera {name} has no {k}")))
            };
            let size = |k: &str| -> Result<usize> {
                let v = get(k)?[0];
                if v >= 1.0 && v.fract() == 0.0 {
                    Ok(v as usize)
                } else {
                    Err(err(keys[k].0, format!("{k} must be a positive integer")))
                }
            };
            let intrinsics = Intrinsics {
                fx: get("fx")?[0],
                fy: get("fy")?[0],
                cx: get("cx")?[0],
                cy: get("cy")?[0],
                width: size("width")?,
                height: size("height")?,
                near: get("near")?[0],
                far: get("far")?[0],
            };
            intrinsics
                .validate()
                .map_err(|e| err(*lno, format!("camera {name}: {e}")))?;
            let p = get("pose")?;
            let pose = Pose::new(Matrix3::from_row_slice(&p[..9]), Vector3::new(p[9], p[10], p[11]))
                .map_err(|e| err(keys["pose"].0, format!("camera {name}: {e}")))?;
            cams.push(Camera { intrinsics, pose });
        }
        Ok(Self {
            zed_left: cams[0],
            zed_right: cams[1],
            eye_left: cams[2],
            eye_right: cams[3],
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }
}
