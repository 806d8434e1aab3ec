//! Drives the C surface the way a foreign caller would: through raw
//! pointers and status codes, checking values against the underlying
//! library.

use std::ffi::{CStr, CString};
use std::ptr;

use roadaff::annotation::{project_pose, CameraModel};
use roadaff::net::loss::{total_loss, total_loss_grads, ViewTargets};
use roadaff::trajectory::Pose;

use roadaff_capi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(roadaff_last_error()) }
        .to_str()
        .unwrap()
        .to_owned()
}

#[test]
fn version_is_a_static_semver_string() {
    let v = unsafe { CStr::from_ptr(roadaff_version()) }
        .to_str()
        .unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
    // Stable across calls (static storage, not per-call allocation).
    assert_eq!(roadaff_version(), roadaff_version());
}

#[test]
fn config_handle_accepts_overrides_and_reports_bad_keys() {
    unsafe {
        let cfg = roadaff_config_new();
        assert!(!cfg.is_null());

        let key = CString::new("net.lr").unwrap();
        let value = CString::new("0.25").unwrap();
        assert_eq!(
            roadaff_config_set(cfg, key.as_ptr(), value.as_ptr()),
            RoadaffStatus::Ok
        );
        assert_eq!(roadaff_config_set_seed(cfg, 99), RoadaffStatus::Ok);
        assert_eq!(roadaff_config_validate(cfg), RoadaffStatus::Ok);

        let toml_ptr = roadaff_config_to_toml(cfg);
        assert!(!toml_ptr.is_null());
        let text = CStr::from_ptr(toml_ptr).to_str().unwrap().to_owned();
        roadaff_string_free(toml_ptr);
        assert!(text.contains("learning_rate = 0.25"), "{text}");
        assert!(text.contains("seed = 99"), "{text}");

        let bad = CString::new("net.nope").unwrap();
        assert_eq!(
            roadaff_config_set(cfg, bad.as_ptr(), value.as_ptr()),
            RoadaffStatus::Config
        );
        assert!(last_error().contains("net.nope"), "{}", last_error());

        // A value the key cannot parse is also a config error.
        let junk = CString::new("fast").unwrap();
        assert_eq!(
            roadaff_config_set(cfg, key.as_ptr(), junk.as_ptr()),
            RoadaffStatus::Config
        );

        roadaff_config_free(cfg);
    }
}

#[test]
fn null_handles_and_null_strings_are_arg_errors() {
    unsafe {
        assert_eq!(roadaff_config_validate(ptr::null()), RoadaffStatus::Arg);
        assert!(last_error().contains("null"));

        let cfg = roadaff_config_new();
        assert_eq!(
            roadaff_config_set(cfg, ptr::null(), ptr::null()),
            RoadaffStatus::Arg
        );
        assert!(roadaff_config_load(ptr::null()).is_null());
        assert!(roadaff_camera_from_config(ptr::null()).is_null());
        roadaff_config_free(cfg);

        // Frees tolerate null.
        roadaff_config_free(ptr::null_mut());
        roadaff_camera_free(ptr::null_mut());
        roadaff_string_free(ptr::null_mut());
    }
}

#[test]
fn projection_agrees_with_the_library_and_flags_invisible_points() {
    unsafe {
        let cam = roadaff_camera_new();
        let (mut u, mut v) = (0.0, 0.0);
        assert_eq!(
            roadaff_camera_project(cam, 10.0, 2.0, &mut u, &mut v),
            RoadaffStatus::Ok
        );
        let ego = Pose::new(0.0, 0.0, 0.0, 0.0);
        let target = Pose::new(10.0, 2.0, 0.0, 0.0);
        let (eu, ev) = project_pose(&CameraModel::default(), &ego, &target).unwrap();
        assert_eq!((u, v), (eu, ev));

        // Behind the camera: status Arg, outputs untouched.
        let (mut u2, mut v2) = (-1.0, -1.0);
        assert_eq!(
            roadaff_camera_project(cam, -5.0, 0.0, &mut u2, &mut v2),
            RoadaffStatus::Arg
        );
        assert_eq!((u2, v2), (-1.0, -1.0));

        assert_eq!(
            roadaff_camera_project(cam, 10.0, 2.0, ptr::null_mut(), &mut v),
            RoadaffStatus::Arg
        );
        roadaff_camera_free(cam);
    }
}

#[test]
fn loss_and_gradients_match_the_library_bit_for_bit() {
    let scores = [0.2, -0.4, 1.0];
    let distances = [3.0, 5.0, 0.0];
    let labels: [i8; 3] = [1, -1, 0];
    let top1: [i8; 3] = [1, -1, -1];
    let dist_targets = [4.0, 15.0, 15.0];
    let weights = (1.0, 0.1, 1.0);

    let targets = ViewTargets {
        multilabel: labels,
        distance: dist_targets,
        top1,
    };
    let expected = total_loss(&scores, &distances, &targets, weights).unwrap();
    let (egf, egd) = total_loss_grads(&scores, &distances, &targets, weights).unwrap();

    unsafe {
        let mut out = RoadaffLossBreakdown::default();
        assert_eq!(
            roadaff_affordance_loss(
                scores.as_ptr(),
                distances.as_ptr(),
                labels.as_ptr(),
                top1.as_ptr(),
                dist_targets.as_ptr(),
                weights.0,
                weights.1,
                weights.2,
                &mut out,
            ),
            RoadaffStatus::Ok
        );
        assert_eq!(out.multilabel, expected.multilabel);
        assert_eq!(out.distance, expected.distance);
        assert_eq!(out.top1, expected.top1);
        assert_eq!(out.total, expected.total);

        let mut gf = [0.0; 3];
        let mut gd = [0.0; 3];
        assert_eq!(
            roadaff_affordance_loss_grads(
                scores.as_ptr(),
                distances.as_ptr(),
                labels.as_ptr(),
                top1.as_ptr(),
                dist_targets.as_ptr(),
                weights.0,
                weights.1,
                weights.2,
                gf.as_mut_ptr(),
                gd.as_mut_ptr(),
            ),
            RoadaffStatus::Ok
        );
        assert_eq!(gf, egf);
        assert_eq!(gd, egd);

        // A top-1 label that is neither all-zero nor one-positive.
        let bad_top1: [i8; 3] = [1, 0, 0];
        assert_eq!(
            roadaff_affordance_loss(
                scores.as_ptr(),
                distances.as_ptr(),
                labels.as_ptr(),
                bad_top1.as_ptr(),
                dist_targets.as_ptr(),
                weights.0,
                weights.1,
                weights.2,
                &mut out,
            ),
            RoadaffStatus::Arg
        );
        assert!(last_error().contains("top-1"), "{}", last_error());
    }
}

#[test]
fn pipeline_runs_end_to_end_through_the_c_surface() {
    let dir = tempfile::tempdir().unwrap();
    let ws = dir.path().join("run");

    unsafe {
        let cfg = roadaff_config_new();
        let set = |cfg, key: &str, value: &str| {
            let k = CString::new(key).unwrap();
            let v = CString::new(value).unwrap();
            assert_eq!(
                roadaff_config_set(cfg, k.as_ptr(), v.as_ptr()),
                RoadaffStatus::Ok,
                "{key}={value}: {}",
                last_error()
            );
        };
        set(cfg, "world.junctions", "2");
        set(cfg, "drives.count", "2");
        set(cfg, "drives.holdout", "1");
        set(cfg, "drives.frame_stride", "6");
        set(cfg, "hdphmm.iterations", "60");
        set(cfg, "hdphmm.burn_in", "30");
        set(cfg, "net.iterations", "10");
        set(cfg, "net.rounds", "1");
        set(cfg, "net.batch_size", "2");
        roadaff_config_set_seed(cfg, 9);
        let ws_c = CString::new(ws.to_str().unwrap()).unwrap();
        assert_eq!(
            roadaff_config_set_workspace(cfg, ws_c.as_ptr()),
            RoadaffStatus::Ok
        );

        let status = roadaff_pipeline_run(cfg);
        assert_eq!(status, RoadaffStatus::Ok, "{}", last_error());
        roadaff_config_free(cfg);
    }

    for file in ["world.json", "metrics.json", "manifest.json"] {
        assert!(ws.join(file).exists(), "{file} missing");
    }
}
