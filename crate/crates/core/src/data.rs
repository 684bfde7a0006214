//! Scene ingestion and few-view selection.
//!
//! Scenes are described by a JSON manifest in the common synthetic-scene
//! layout: a shared horizontal field of view (`camera_angle_x`) and one
//! 4x4 (or 3x4) camera-to-world `transform_matrix` per frame, so public
//! scene manifests load unmodified. Images are 8-bit PNGs treated as linear
//! values in [0, 1].

use crate::geometry::Camera;
use crate::imgio::{read_json, read_png, write_json, ImageF};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Background compositing color for a scene.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Black,
    #[default]
    White,
}

impl Background {
    pub fn color(self) -> [f64; 3] {
        match self {
            Background::Black => [0.0; 3],
            Background::White => [1.0; 3],
        }
    }
}

fn default_near() -> f64 {
    2.0
}

fn default_far() -> f64 {
    6.0
}

/// One frame entry in a scene manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFrame {
    /// Image path relative to the manifest; `.png` is appended when the
    /// path has no extension.
    pub file_path: String,
    /// Camera-to-world transform, 3 or 4 rows of 4 columns.
    pub transform_matrix: Vec<Vec<f64>>,
}

/// Scene manifest mirroring the common synthetic-scene JSON layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneManifest {
    /// Shared horizontal field of view in radians.
    pub camera_angle_x: f64,
    #[serde(default = "default_near")]
    pub near: f64,
    #[serde(default = "default_far")]
    pub far: f64,
    #[serde(default)]
    pub background: Background,
    /// Optional declared image dimensions; every frame must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub height: Option<u32>,
    pub frames: Vec<ManifestFrame>,
}

impl SceneManifest {
    pub fn validate(&self) -> Result<()> {
        if self.frames.is_empty() {
            return Err(Error::Data("manifest has no frames".into()));
        }
        if !(self.near < self.far) {
            return Err(Error::Data(format!(
                "near/far must satisfy near < far, got {} / {}",
                self.near, self.far
            )));
        }
        if !(self.camera_angle_x > 0.0 && self.camera_angle_x < std::f64::consts::PI) {
            return Err(Error::Data(format!(
                "camera_angle_x must be in (0, pi), got {}",
                self.camera_angle_x
            )));
        }
        Ok(())
    }
}

/// A loaded scene: per-frame cameras and images plus shared bounds.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cameras: Vec<Camera>,
    pub images: Vec<ImageF>,
    pub near: f64,
    pub far: f64,
    pub background: Background,
}

impl Scene {
    pub fn n_frames(&self) -> usize {
        self.cameras.len()
    }
}

fn pose_from_rows(rows: &[Vec<f64>], frame: usize) -> Result<([[f64; 3]; 3], [f64; 3])> {
    if !(rows.len() == 3 || rows.len() == 4) || rows.iter().any(|r| r.len() != 4) {
        return Err(Error::Data(format!(
            "frame {frame}: transform_matrix must be 3x4 or 4x4"
        )));
    }
    let mut rot = [[0.0; 3]; 3];
    let mut trans = [0.0; 3];
    for r in 0..3 {
        for c in 0..3 {
            rot[r][c] = rows[r][c];
        }
        trans[r] = rows[r][3];
    }
    for v in rot.iter().flatten().chain(trans.iter()) {
        if !v.is_finite() {
            return Err(Error::Data(format!("frame {frame}: pose is not finite")));
        }
    }
    Ok((rot, trans))
}

fn resolve_image_path(base: &Path, file_path: &str) -> std::path::PathBuf {
    let mut p = base.join(file_path);
    if p.extension().is_none() {
        p.set_extension("png");
    }
    p
}

/// Load a manifest and all referenced images.
pub fn load_scene(manifest_path: &Path) -> Result<Scene> {
    let manifest: SceneManifest = read_json(manifest_path)?;
    manifest.validate()?;
    let base = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut cameras = Vec::with_capacity(manifest.frames.len());
    let mut images = Vec::with_capacity(manifest.frames.len());
    let mut dims = manifest.width.zip(manifest.height);
    for (i, frame) in manifest.frames.iter().enumerate() {
        let img_path = resolve_image_path(base, &frame.file_path);
        if !img_path.exists() {
            return Err(Error::Data(format!(
                "frame {i}: image {} does not exist",
                img_path.display()
            )));
        }
        let img = read_png(&img_path)?;
        match dims {
            None => dims = Some((img.width, img.height)),
            Some((w, h)) => {
                if img.width != w || img.height != h {
                    return Err(Error::Data(format!(
                        "frame {i}: image is {}x{}, expected {w}x{h}",
                        img.width, img.height
                    )));
                }
            }
        }
        let (w, _) = dims.unwrap();
        let focal = Camera::focal_from_fov_x(w, manifest.camera_angle_x);
        let (rot, trans) = pose_from_rows(&frame.transform_matrix, i)?;
        let camera = Camera::new(
            img.width,
            img.height,
            focal,
            (img.width as f64 / 2.0, img.height as f64 / 2.0),
            rot,
            trans,
        )
        .map_err(|e| Error::Data(format!("frame {i}: {e}")))?;
        cameras.push(camera);
        images.push(img);
    }
    Ok(Scene {
        cameras,
        images,
        near: manifest.near,
        far: manifest.far,
        background: manifest.background,
    })
}

/// Write a manifest atomically.
pub fn write_manifest(manifest: &SceneManifest, path: &Path) -> Result<()> {
    write_json(path, manifest)
}

/// How training views are chosen from a frame list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionProtocol {
    /// Take the first k frames for training, hold out the rest.
    FirstK,
    /// Hold out every 8th frame, choose k evenly from the remainder.
    ForwardFacing,
}

/// Train/test split over frame indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ViewSplit {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Deterministic, order-preserving split of `n_frames` into `k` training
/// views and a held-out set, per protocol.
pub fn select_views(n_frames: usize, k: usize, protocol: SelectionProtocol) -> Result<ViewSplit> {
    if n_frames == 0 {
        return Err(Error::Domain("no frames to select from".into()));
    }
    match protocol {
        SelectionProtocol::FirstK => {
            if k > n_frames {
                return Err(Error::Domain(format!(
                    "requested {k} views from {n_frames} frames"
                )));
            }
            Ok(ViewSplit {
                train: (0..k).collect(),
                test: (k..n_frames).collect(),
            })
        }
        SelectionProtocol::ForwardFacing => {
            let test: Vec<usize> = (0..n_frames).step_by(8).collect();
            let pool: Vec<usize> = (0..n_frames).filter(|i| i % 8 != 0).collect();
            if k > pool.len() {
                return Err(Error::Domain(format!(
                    "requested {k} views from a pool of {}",
                    pool.len()
                )));
            }
            let train = if k == 0 {
                Vec::new()
            } else if k == 1 {
                vec![pool[0]]
            } else {
                (0..k)
                    .map(|i| {
                        let idx = (i as f64 * (pool.len() - 1) as f64 / (k - 1) as f64).round();
                        pool[idx as usize]
                    })
                    .collect()
            };
            Ok(ViewSplit { train, test })
        }
    }
}
