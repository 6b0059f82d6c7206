use nalgebra::{Matrix3, Rotation3, Vector3};
use proptest::prelude::*;
use sstu::compositor::{
    alpha_composite, frustum_overlap, latency_budget, pitch, project, projection, time_warp, unproject, warp_source,
    yaw, zed_coverage, Camera, CameraRig, CompositeInputs, DepthConvention, DepthMap, Intrinsics, Pose,
};
use sstu::mask::ProbMask;
use sstu::tensor::ImageTensor;

fn intr(width: usize, height: usize, hfov: f64) -> Intrinsics {
    Intrinsics::from_hfov(width, height, hfov, 0.1, 50.0)
}

fn cam(i: Intrinsics, rotation: Matrix3<f64>) -> Camera {
    Camera {
        intrinsics: i,
        pose: Pose::new(rotation, Vector3::zeros()).unwrap(),
    }
}

/// Display-pixel ray rotated into the capture camera and projected with
/// the pinhole formula.
fn ray_oracle(i: &Intrinsics, r_cap: &Matrix3<f64>, r_disp: &Matrix3<f64>, u: f64, v: f64) -> (f64, f64) {
    let d = Vector3::new((u - i.cx) / i.fx, (v - i.cy) / i.fy, 1.0);
    let world = r_disp * d;
    let c = r_cap.transpose() * world;
    (i.fx * c.x / c.z + i.cx, i.fy * c.y / c.z + i.cy)
}

fn smooth_frame(h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(3, h, w, |c, y, x| {
        let (x, y) = (x as f32, y as f32);
        0.5 + 0.2 * (0.07 * x + 0.9 * c as f32).sin() + 0.2 * (0.05 * y + 0.03 * x).cos()
    })
}

#[test]
fn optical_axis_projects_to_principal_point() {
    let i = Intrinsics {
        cx: 300.5,
        cy: 210.25,
        ..intr(640, 480, 70.0)
    };
    for z in [0.2, 1.0, 7.5, 49.0] {
        let (u, v, _) = project(&i, DepthConvention::Standard, &Vector3::new(0.0, 0.0, z))
            .unwrap()
            .unwrap();
        assert!((u - i.cx).abs() < 1e-9 && (v - i.cy).abs() < 1e-9);
    }
    assert!(project(&i, DepthConvention::Standard, &Vector3::new(0.0, 0.0, -1.0))
        .unwrap()
        .is_none());
}

#[test]
fn horizontal_fov_from_edge_ray() {
    for hfov in [60.0f64, 86.0, 100.0] {
        let i = intr(1280, 720, hfov);
        let half = (hfov / 2.0).to_radians();
        let edge = Vector3::new(half.tan() * 3.0, 0.0, 3.0);
        let (u, _, _) = project(&i, DepthConvention::Standard, &edge).unwrap().unwrap();
        assert!((u - 1280.0).abs() < 1e-6, "{u}");
        let from_focal = 2.0 * (1280.0 / (2.0 * i.fx)).atan();
        assert!((from_focal - hfov.to_radians()).abs() < 1e-12);
        assert!((i.hfov() - from_focal).abs() < 1e-12);
    }
}

#[test]
fn clip_planes_map_to_depth_bounds() {
    let i = intr(640, 480, 90.0);
    let at = |z: f64, conv| project(&i, conv, &Vector3::new(0.1, -0.05, z)).unwrap().unwrap().2;
    assert!(at(i.near, DepthConvention::Standard).abs() < 1e-12);
    assert!((at(i.far, DepthConvention::Standard) - 1.0).abs() < 1e-12);
    assert!((at(i.near, DepthConvention::Reversed) - 1.0).abs() < 1e-12);
    assert!(at(i.far, DepthConvention::Reversed).abs() < 1e-12);
}

#[test]
fn degenerate_intrinsics_are_rejected() {
    let base = intr(640, 480, 90.0);
    for bad in [
        Intrinsics { fx: 0.0, ..base },
        Intrinsics { near: 0.0, ..base },
        Intrinsics {
            near: 5.0,
            far: 5.0,
            ..base
        },
    ] {
        assert!(projection(&bad, DepthConvention::Standard).is_err());
    }
    let singular = Intrinsics { fy: 0.0, ..base };
    let frame = smooth_frame(4, 4);
    assert!(time_warp(&frame, &singular, &Matrix3::identity(), &yaw(1.0)).is_err());
}

#[test]
fn rotations_are_validated() {
    assert!(Pose::new(Matrix3::identity() * 2.0, Vector3::zeros()).is_err());
    let reflect = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
    assert!(Pose::new(reflect, Vector3::zeros()).is_err());
    assert!(Pose::new(yaw(10.0) * pitch(-4.0), Vector3::zeros()).is_ok());
}

#[test]
fn coincident_identical_cameras_overlap_fully() {
    let i = intr(1280, 720, 86.0);
    let r = frustum_overlap(&cam(i, Matrix3::identity()), &cam(i, Matrix3::identity()));
    assert_eq!(r, i.viewport());
}

#[test]
fn double_fov_eye_sees_centred_half_rectangle() {
    let zed = Intrinsics::from_hfov(1000, 800, 60.0, 0.1, 20.0);
    let zed_half = (30.0f64).to_radians().tan();
    let eye_hfov = 2.0 * (2.0 * zed_half).atan().to_degrees();
    let eye = Intrinsics::from_hfov(1000, 800, eye_hfov, 0.1, 20.0);
    let r = frustum_overlap(&cam(zed, Matrix3::identity()), &cam(eye, Matrix3::identity()));
    let corner_u = |u: f64| eye.fx * (u - zed.cx) / zed.fx + eye.cx;
    let corner_v = |v: f64| eye.fy * (v - zed.cy) / zed.fy + eye.cy;
    let (ex0, ex1, ey0, ey1) = (corner_u(0.0), corner_u(1000.0), corner_v(0.0), corner_v(800.0));
    assert!((ex0 - 250.0).abs() < 1e-6 && (ex1 - 750.0).abs() < 1e-6);
    assert!((ey0 - 200.0).abs() < 1e-6 && (ey1 - 600.0).abs() < 1e-6);
    for (got, want) in [(r.x0, ex0), (r.x1, ex1), (r.y0, ey0), (r.y1, ey1)] {
        assert!((got - want).abs() <= 1.0, "{r:?}");
    }
}

#[test]
fn narrow_eye_is_fully_covered() {
    let zed = intr(1280, 720, 90.0);
    let eye = intr(1280, 720, 50.0);
    let r = frustum_overlap(&cam(zed, Matrix3::identity()), &cam(eye, yaw(3.0)));
    assert_eq!(r, eye.viewport());
}

#[test]
fn coverage_grows_with_eye_fov() {
    let zed = cam(intr(1280, 720, 86.0), Matrix3::identity());
    for rot in [Matrix3::identity(), yaw(4.0), pitch(-3.0) * yaw(2.0)] {
        let mut last = 0.0;
        for fov in (40..=130).step_by(5) {
            let eye = cam(intr(1440, 1600, fov as f64), rot);
            let c = zed_coverage(&zed, &eye);
            assert!(c + 1e-12 >= last, "fov {fov}: {c} < {last}");
            last = c;
        }
        assert!(last > 0.99);
    }
}

#[test]
fn disjoint_views_give_empty_overlap() {
    let zed = cam(intr(640, 480, 60.0), Matrix3::identity());
    let eye = cam(intr(640, 480, 60.0), yaw(180.0));
    assert!(frustum_overlap(&zed, &eye).is_empty());
}

fn layers(h: usize, w: usize, video: [f32; 3], virt: [f32; 3]) -> (ImageTensor, ImageTensor) {
    (
        ImageTensor::from_fn(3, h, w, |c, _, _| video[c]),
        ImageTensor::from_fn(3, h, w, |c, _, _| virt[c]),
    )
}

#[test]
fn blend_examples() {
    let (video, virt) = layers(2, 3, [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
    let near = DepthMap::constant(2, 3, 1.0);
    let far = DepthMap::constant(2, 3, 2.0);
    let run = |prob: f32, vd: &DepthMap| {
        alpha_composite(&CompositeInputs {
            video: &video,
            prob: &ProbMask::filled(2, 3, prob),
            video_depth: vd,
            virtual_rgb: &virt,
            virtual_depth: &far,
        })
        .unwrap()
    };
    assert_eq!(run(1.0, &near), video);
    assert_eq!(run(0.0, &near), virt);
    let q = run(0.25, &near);
    for i in 0..6 {
        let px = [0, 1, 2].map(|c| q.data()[c * 6 + i]);
        assert_eq!(px, [0.25, 0.75, 0.0]);
    }
    let behind = DepthMap::constant(2, 3, 3.0);
    assert_eq!(run(1.0, &behind), virt);
    assert_eq!(run(1.0, &far), video, "ties go to the video");
    let invalid = DepthMap::new(2, 3, vec![0.0, f32::NAN, -1.0, f32::INFINITY, 0.0, 0.0]).unwrap();
    assert_eq!(run(1.0, &invalid), virt);
}

#[test]
fn blend_rejects_mismatched_layers() {
    let (video, virt) = layers(2, 3, [1.0; 3], [0.0; 3]);
    let d = DepthMap::constant(2, 3, 1.0);
    let bad = alpha_composite(&CompositeInputs {
        video: &video,
        prob: &ProbMask::filled(3, 2, 0.5),
        video_depth: &d,
        virtual_rgb: &virt,
        virtual_depth: &d,
    });
    assert!(bad.is_err());
}

#[test]
fn identity_warp_is_exact() {
    let i = intr(48, 32, 80.0);
    let frame = smooth_frame(32, 48);
    let r = yaw(17.0) * pitch(5.0);
    let out = time_warp(&frame, &i, &r, &r).unwrap();
    assert!(out
        .data()
        .iter()
        .zip(frame.data())
        .all(|(a, b)| a.to_bits() == b.to_bits()));
    assert_eq!(warp_source(&i, &r, &r, 3.0, 7.0).unwrap(), (3.0, 7.0));
}

#[test]
fn warp_matches_ray_oracle() {
    let i = intr(320, 240, 90.0);
    let r_cap = yaw(2.0) * pitch(-1.0);
    let r_disp = yaw(-1.5) * pitch(0.5);
    for (u, v) in [(0.0, 0.0), (160.0, 120.0), (319.0, 10.0), (37.5, 211.25)] {
        let got = warp_source(&i, &r_cap, &r_disp, u, v).unwrap();
        let want = ray_oracle(&i, &r_cap, &r_disp, u, v);
        assert!((got.0 - want.0).abs() < 1e-9 && (got.1 - want.1).abs() < 1e-9);
    }
}

#[test]
fn one_degree_yaw_shifts_centre_by_fx_tan() {
    let (w, h) = (640, 480);
    let i = intr(w, h, 90.0);
    let expected = i.fx * 1f64.to_radians().tan();
    let ramp = ImageTensor::from_fn(3, h, w, |_, _, x| x as f32 / w as f32);
    let out = time_warp(&ramp, &i, &Matrix3::identity(), &yaw(1.0)).unwrap();
    let (cx, cy) = (w / 2, h / 2);
    let src_x = out.get(0, cy, cx) as f64 * w as f64;
    let shift = (src_x - cx as f64).abs();
    assert!((shift - expected).abs() <= 0.5, "shift {shift} vs {expected}");
}

#[test]
fn round_trip_warp_recovers_interior() {
    let (w, h) = (160, 120);
    let i = intr(w, h, 80.0);
    let frame = smooth_frame(h, w);
    let r = yaw(2.0) * pitch(1.0);
    let there = time_warp(&frame, &i, &Matrix3::identity(), &r).unwrap();
    let back = time_warp(&there, &i, &r, &Matrix3::identity()).unwrap();
    let margin = 12;
    let (mut sum, mut n) = (0.0f64, 0usize);
    for c in 0..3 {
        for y in margin..h - margin {
            for x in margin..w - margin {
                sum += (back.get(c, y, x) - frame.get(c, y, x)).abs() as f64;
                n += 1;
            }
        }
    }
    let mae = sum / n as f64;
    assert!(mae <= 2.0 / 255.0, "mae {mae}");
}

#[test]
fn latency_budget_examples() {
    assert_eq!(latency_budget(37.0, 6.0, 16.0).unwrap(), 59.0);
    assert_eq!(latency_budget(37.0, 6.0, 23.0).unwrap(), 66.0);
    assert_eq!(latency_budget(0.0, 0.0, 0.0).unwrap(), 0.0);
    assert!(latency_budget(-1.0, 0.0, 0.0).is_err());
}

#[test]
fn rig_config_round_trips() {
    let rig = CameraRig::placeholder();
    let text = rig.render();
    for name in ["cam_zed_left", "cam_zed_right", "cam_eye_left", "cam_eye_right"] {
        assert!(text.contains(name));
    }
    let back = CameraRig::parse(&text, "rig.txt").unwrap();
    assert_eq!(back.render(), text);
    let broken = text.replacen("fx ", "fx nope ", 1);
    let err = CameraRig::parse(&broken, "rig.txt").unwrap_err().to_string();
    assert!(err.contains("rig.txt"), "{err}");
}

#[test]
fn shipped_camera_config_is_the_placeholder_rig() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/camera_placeholder.txt");
    let rig = CameraRig::load(&path).unwrap();
    assert_eq!(rig.render(), CameraRig::placeholder().render());
}

proptest! {
    #[test]
    fn project_unproject_round_trip(
        fu in 0.02f64..0.98, fv in 0.02f64..0.98, z in 0.15f64..45.0,
        hfov in 40.0f64..110.0, reversed in any::<bool>(),
    ) {
        let i = intr(800, 600, hfov);
        let conv = if reversed { DepthConvention::Reversed } else { DepthConvention::Standard };
        let p = Vector3::new((fu * 800.0 - i.cx) / i.fx * z, (fv * 600.0 - i.cy) / i.fy * z, z);
        let (u, v, d) = project(&i, conv, &p).unwrap().unwrap();
        let back = unproject(&i, conv, u, v, d).unwrap();
        prop_assert!((back - p).norm() <= 1e-5 * p.norm(), "{p:?} vs {back:?}");
    }

    #[test]
    fn blend_is_convex(a in 0.0f32..=1.0, v in prop::array::uniform3(0.0f32..=1.0), r in prop::array::uniform3(0.0f32..=1.0), vd in 0.1f32..5.0, rd in 0.1f32..5.0) {
        let (video, virt) = layers(1, 1, v, r);
        let out = alpha_composite(&CompositeInputs {
            video: &video,
            prob: &ProbMask::filled(1, 1, a),
            video_depth: &DepthMap::constant(1, 1, vd),
            virtual_rgb: &virt,
            virtual_depth: &DepthMap::constant(1, 1, rd),
        }).unwrap();
        for c in 0..3 {
            let o = out.data()[c];
            prop_assert!(o >= v[c].min(r[c]) - 1e-6 && o <= v[c].max(r[c]) + 1e-6);
        }
    }

    #[test]
    fn random_rotations_pass_validation(ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0) {
        let r = Rotation3::from_euler_angles(ax, ay, az).into_inner();
        prop_assert!(Pose::new(r, Vector3::zeros()).is_ok());
    }
}
