//! C ABI for the raymix library.
//!
//! Scenes and checkpoints are opaque handles; every fallible call returns an
//! `RmxStatus` and stores a message retrievable with `rmx_last_error`. The
//! matching declarations live in `include/raymix.h`, which is maintained by
//! hand and checked against these signatures by the crate's tests.
//!
//! Ownership: every `*_load`/`*_open` call that yields a handle must be
//! paired with the corresponding `*_free`. Buffers are caller-allocated.

use raymix::data::{load_scene, Scene};
use raymix::pipeline::render_view;
use raymix::trainer::{load_checkpoint, render_seed, train, Checkpoint, Config};
use raymix::{Error, Result};
use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_float, CStr};
use std::path::PathBuf;

/// Status codes mirroring the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RmxStatus {
    Ok = 0,
    ConfigError = 2,
    DataError = 3,
    NumericError = 4,
    VerifyError = 5,
    InvalidArgument = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Vec<u8>> = const { RefCell::new(Vec::new()) };
}

fn set_error(msg: &str) {
    LAST_ERROR.with(|e| {
        let mut buf = e.borrow_mut();
        buf.clear();
        buf.extend_from_slice(msg.as_bytes());
        buf.push(0);
    });
}

fn status_of(err: &Error) -> RmxStatus {
    match err.exit_code() {
        2 => RmxStatus::ConfigError,
        4 => RmxStatus::NumericError,
        5 => RmxStatus::VerifyError,
        _ => RmxStatus::DataError,
    }
}

fn report<T>(result: Result<T>, out: impl FnOnce(T)) -> RmxStatus {
    match result {
        Ok(v) => {
            out(v);
            RmxStatus::Ok
        }
        Err(e) => {
            let status = status_of(&e);
            set_error(&e.to_string());
            status
        }
    }
}

/// Message of the most recent failure on this thread, or null if none.
/// The pointer stays valid until the next failing call on the thread.
#[no_mangle]
pub extern "C" fn rmx_last_error() -> *const c_char {
    LAST_ERROR.with(|e| {
        let buf = e.borrow();
        if buf.is_empty() {
            std::ptr::null()
        } else {
            buf.as_ptr() as *const c_char
        }
    })
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rmx_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Opaque loaded scene.
pub struct RmxScene {
    scene: Scene,
}

/// Opaque loaded checkpoint.
pub struct RmxModel {
    ckpt: Checkpoint,
}

unsafe fn path_arg(ptr: *const c_char) -> Result<PathBuf> {
    if ptr.is_null() {
        return Err(Error::Domain("null path".into()));
    }
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::Domain("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

/// Load a scene manifest. On success `*out` owns the scene.
///
/// # Safety
/// `manifest_path` must be a valid NUL-terminated string and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn rmx_scene_load(
    manifest_path: *const c_char,
    out: *mut *mut RmxScene,
) -> RmxStatus {
    if out.is_null() {
        set_error("null output pointer");
        return RmxStatus::InvalidArgument;
    }
    let result = (|| {
        let path = unsafe { path_arg(manifest_path) }?;
        let scene = load_scene(&path)?;
        Ok(Box::into_raw(Box::new(RmxScene { scene })))
    })();
    report(result, |ptr| unsafe { *out = ptr })
}

/// # Safety
/// `scene` must come from `rmx_scene_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rmx_scene_free(scene: *mut RmxScene) {
    if !scene.is_null() {
        drop(unsafe { Box::from_raw(scene) });
    }
}

/// Number of frames in the scene; 0 for a null handle.
///
/// # Safety
/// `scene` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn rmx_scene_frame_count(scene: *const RmxScene) -> u32 {
    if scene.is_null() {
        return 0;
    }
    unsafe { &*scene }.scene.n_frames() as u32
}

/// Image dimensions of frame 0; returns InvalidArgument on a null handle.
///
/// # Safety
/// `scene` must be a live handle; `width`/`height` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn rmx_scene_image_size(
    scene: *const RmxScene,
    width: *mut u32,
    height: *mut u32,
) -> RmxStatus {
    if scene.is_null() || width.is_null() || height.is_null() {
        set_error("null argument");
        return RmxStatus::InvalidArgument;
    }
    let s = unsafe { &*scene };
    unsafe {
        *width = s.scene.images[0].width;
        *height = s.scene.images[0].height;
    }
    RmxStatus::Ok
}

/// Load a checkpoint. On success `*out` owns the model.
///
/// # Safety
/// `checkpoint_path` must be a valid NUL-terminated string and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rmx_model_load(
    checkpoint_path: *const c_char,
    out: *mut *mut RmxModel,
) -> RmxStatus {
    if out.is_null() {
        set_error("null output pointer");
        return RmxStatus::InvalidArgument;
    }
    let result = (|| {
        let path = unsafe { path_arg(checkpoint_path) }?;
        let ckpt = load_checkpoint(&path)?;
        Ok(Box::into_raw(Box::new(RmxModel { ckpt })))
    })();
    report(result, |ptr| unsafe { *out = ptr })
}

/// # Safety
/// `model` must come from `rmx_model_load` and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn rmx_model_free(model: *mut RmxModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Render one frame of `scene` with `model` into caller buffers:
/// `rgb_out` holds width*height*3 floats row-major; `depth_out` (nullable)
/// holds width*height floats.
///
/// # Safety
/// Handles must be live; buffers must have the stated capacities.
#[no_mangle]
pub unsafe extern "C" fn rmx_render_frame(
    model: *const RmxModel,
    scene: *const RmxScene,
    frame: u32,
    seed: u64,
    rgb_out: *mut c_float,
    depth_out: *mut c_float,
) -> RmxStatus {
    if model.is_null() || scene.is_null() || rgb_out.is_null() {
        set_error("null argument");
        return RmxStatus::InvalidArgument;
    }
    let (model, scene) = unsafe { (&*model, &*scene) };
    let result = (|| {
        let f = frame as usize;
        if f >= scene.scene.n_frames() {
            return Err(Error::Domain(format!(
                "frame {f} out of range ({} frames)",
                scene.scene.n_frames()
            )));
        }
        render_view(
            &model.ckpt.params,
            &scene.scene.cameras[f],
            scene.scene.near,
            scene.scene.far,
            model.ckpt.header.n_coarse,
            model.ckpt.header.n_fine,
            scene.scene.background,
            render_seed(seed, f),
        )
    })();
    report(result, |view| {
        let n = view.rgb.pixels.len();
        let rgb = unsafe { std::slice::from_raw_parts_mut(rgb_out, n * 3) };
        for (i, p) in view.rgb.pixels.iter().enumerate() {
            rgb[3 * i] = p[0] as c_float;
            rgb[3 * i + 1] = p[1] as c_float;
            rgb[3 * i + 2] = p[2] as c_float;
        }
        if !depth_out.is_null() {
            let depth = unsafe { std::slice::from_raw_parts_mut(depth_out, n) };
            for (i, d) in view.depth.iter().enumerate() {
                depth[i] = *d as c_float;
            }
        }
    })
}

/// PSNR between two equally sized float RGB buffers (len = pixels*3).
/// Identical buffers yield +infinity.
///
/// # Safety
/// Both buffers must hold `len` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn rmx_psnr(
    a: *const c_float,
    b: *const c_float,
    len: usize,
    out: *mut c_double,
) -> RmxStatus {
    if a.is_null() || b.is_null() || out.is_null() || len == 0 {
        set_error("null or empty buffer");
        return RmxStatus::InvalidArgument;
    }
    let (a, b) = unsafe { (std::slice::from_raw_parts(a, len), std::slice::from_raw_parts(b, len)) };
    let mut mse = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = (*x - *y) as f64;
        mse += d * d;
    }
    mse /= len as f64;
    unsafe {
        *out = if mse == 0.0 {
            f64::INFINITY
        } else {
            -10.0 * mse.log10()
        };
    }
    RmxStatus::Ok
}

/// Train on a scene and write checkpoint/logs under `out_dir`. `overrides`
/// is an optional JSON object of dotted config keys to values, e.g.
/// `{"train.max_steps": 200, "train.seed": 7}`. `train_views`/`n_views`
/// select the training frames; pass null/0 to train on every frame.
///
/// # Safety
/// `scene` must be live; strings NUL-terminated; `train_views` must hold
/// `n_views` entries when non-null.
#[no_mangle]
pub unsafe extern "C" fn rmx_train(
    scene: *const RmxScene,
    out_dir: *const c_char,
    overrides_json: *const c_char,
    train_views: *const u32,
    n_views: usize,
) -> RmxStatus {
    if scene.is_null() {
        set_error("null scene");
        return RmxStatus::InvalidArgument;
    }
    let scene = unsafe { &*scene };
    let result = (|| {
        let out = unsafe { path_arg(out_dir) }?;
        let mut cfg = Config::default();
        if !overrides_json.is_null() {
            let raw = unsafe { CStr::from_ptr(overrides_json) }
                .to_str()
                .map_err(|_| Error::Config("overrides are not valid UTF-8".into()))?;
            apply_json_overrides(&mut cfg, raw)?;
        }
        let views: Vec<usize> = if train_views.is_null() || n_views == 0 {
            (0..scene.scene.n_frames()).collect()
        } else {
            unsafe { std::slice::from_raw_parts(train_views, n_views) }
                .iter()
                .map(|v| *v as usize)
                .collect()
        };
        train(&scene.scene, &views, &cfg, &out)?;
        Ok(())
    })();
    report(result, |()| {})
}

fn apply_json_overrides(cfg: &mut Config, raw: &str) -> Result<()> {
    let map: serde_json::Map<String, serde_json::Value> = serde_json::from_str(raw)
        .map_err(|e| Error::Config(format!("overrides are not a JSON object: {e}")))?;
    for (key, value) in &map {
        let as_str = match value {
            serde_json::Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        cfg.set(key, &as_str)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use raymix::data::Background;
    use std::path::Path;
    use raymix::synthetic::{
        render_synthetic_gt, Primitive, RingSpec, SyntheticSceneDesc,
    };
    use std::ffi::CString;

    fn write_test_scene(dir: &Path) -> PathBuf {
        let desc = SyntheticSceneDesc {
            name: "ffi".into(),
            background: Background::White,
            image_size: [12, 12],
            camera_angle_x: 0.8,
            near: 2.0,
            far: 5.0,
            ring: RingSpec {
                count: 2,
                radius: 3.0,
                height: 1.0,
                start_angle: 0.0,
                full_turns: 1.0,
                target: [0.0; 3],
            },
            primitives: vec![Primitive::Sphere {
                center: [0.0; 3],
                radius: 0.7,
                density: 7.0,
                color: [0.9, 0.2, 0.2],
            }],
        };
        let cameras = desc.cameras().unwrap();
        let scene = desc.scene();
        std::fs::create_dir_all(dir.join("images")).unwrap();
        let mut frames = Vec::new();
        for (i, cam) in cameras.iter().enumerate() {
            let gt = render_synthetic_gt(&scene, cam, desc.near, desc.far).unwrap();
            let rel = format!("images/r_{i}.png");
            raymix::imgio::write_png(&dir.join(&rel), &gt.rgb).unwrap();
            frames.push(raymix::data::ManifestFrame {
                file_path: rel,
                transform_matrix: raymix::synthetic::transform_rows(cam),
            });
        }
        let manifest = raymix::data::SceneManifest {
            camera_angle_x: desc.camera_angle_x,
            near: desc.near,
            far: desc.far,
            background: desc.background,
            width: None,
            height: None,
            frames,
        };
        let path = dir.join("manifest.json");
        raymix::data::write_manifest(&manifest, &path).unwrap();
        path
    }

    #[test]
    fn scene_load_render_and_free() {
        let dir = std::env::temp_dir().join(format!("raymix-ffi-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let manifest = write_test_scene(&dir);

        let c_manifest = CString::new(manifest.to_str().unwrap()).unwrap();
        let mut scene: *mut RmxScene = std::ptr::null_mut();
        let status = unsafe { rmx_scene_load(c_manifest.as_ptr(), &mut scene) };
        assert_eq!(status, RmxStatus::Ok);
        assert_eq!(unsafe { rmx_scene_frame_count(scene) }, 2);
        let (mut w, mut h) = (0u32, 0u32);
        assert_eq!(
            unsafe { rmx_scene_image_size(scene, &mut w, &mut h) },
            RmxStatus::Ok
        );
        assert_eq!((w, h), (12, 12));

        // short training run through the C surface
        let out_dir = dir.join("run");
        let c_out = CString::new(out_dir.to_str().unwrap()).unwrap();
        let overrides = CString::new(
            r#"{"train.max_steps": 4, "train.batch_size": 8, "train.n_coarse": 4,
                "train.n_fine": 4, "field.trunk_width": 8, "field.trunk_depth": 1,
                "field.l_pos": 2, "field.l_dir": 1, "field.bottleneck_width": 4,
                "field.view_width": 4, "train.checkpoint_every": 0}"#,
        )
        .unwrap();
        let views = [0u32];
        let status = unsafe {
            rmx_train(scene, c_out.as_ptr(), overrides.as_ptr(), views.as_ptr(), 1)
        };
        assert_eq!(status, RmxStatus::Ok, "{:?}", unsafe {
            CStr::from_ptr(rmx_last_error())
        });

        let ckpt_path = out_dir.join("checkpoint.rmx");
        let c_ckpt = CString::new(ckpt_path.to_str().unwrap()).unwrap();
        let mut model: *mut RmxModel = std::ptr::null_mut();
        assert_eq!(
            unsafe { rmx_model_load(c_ckpt.as_ptr(), &mut model) },
            RmxStatus::Ok
        );

        let mut rgb = vec![0f32; 12 * 12 * 3];
        let mut depth = vec![0f32; 12 * 12];
        let status = unsafe {
            rmx_render_frame(model, scene, 1, 0, rgb.as_mut_ptr(), depth.as_mut_ptr())
        };
        assert_eq!(status, RmxStatus::Ok);
        assert!(rgb.iter().all(|v| v.is_finite()));

        // self-PSNR is infinite
        let mut db = 0f64;
        assert_eq!(
            unsafe { rmx_psnr(rgb.as_ptr(), rgb.as_ptr(), rgb.len(), &mut db) },
            RmxStatus::Ok
        );
        assert!(db.is_infinite());

        unsafe {
            rmx_model_free(model);
            rmx_scene_free(scene);
        }
        let _ = std::fs::remove_dir_all(&dir);
    }

    #[test]
    fn missing_file_reports_data_error() {
        let c_path = CString::new("/nonexistent/raymix/manifest.json").unwrap();
        let mut scene: *mut RmxScene = std::ptr::null_mut();
        let status = unsafe { rmx_scene_load(c_path.as_ptr(), &mut scene) };
        assert_eq!(status, RmxStatus::DataError);
        let msg = unsafe { CStr::from_ptr(rmx_last_error()) };
        assert!(!msg.to_bytes().is_empty());
    }

    #[test]
    fn bad_override_reports_config_error() {
        let mut cfg = Config::default();
        assert!(apply_json_overrides(&mut cfg, r#"{"train.bogus": 1}"#).is_err());
        assert!(apply_json_overrides(&mut cfg, r#"{"train.seed": 9}"#).is_ok());
        assert_eq!(cfg.train.seed, 9);
    }
}
