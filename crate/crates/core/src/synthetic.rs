//! Analytic scenes of constant-density emissive primitives.
//!
//! Rays through these scenes have piecewise-constant density, so the
//! emission-absorption integral has a closed form per slab. The renders are
//! exact up to floating point and serve as the ground truth for synthetic
//! training data and as the oracle the numeric renderer is verified against.

use crate::data::Background;
use crate::geometry::{add, dot, sub, Camera, Ray, Vec3};
use crate::imgio::ImageF;
use crate::render::ACC_EPSILON;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Constant-density emissive absorbing primitive.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Primitive {
    Sphere {
        center: Vec3,
        radius: f64,
        density: f64,
        color: [f64; 3],
    },
    Box {
        center: Vec3,
        /// Half-extent per axis.
        extent: Vec3,
        density: f64,
        color: [f64; 3],
    },
}

impl Primitive {
    pub fn density(&self) -> f64 {
        match self {
            Primitive::Sphere { density, .. } | Primitive::Box { density, .. } => *density,
        }
    }

    pub fn color(&self) -> [f64; 3] {
        match self {
            Primitive::Sphere { color, .. } | Primitive::Box { color, .. } => *color,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (density, color) = (self.density(), self.color());
        if !(density >= 0.0) {
            return Err(Error::Data(format!("primitive density {density} is negative")));
        }
        if color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::Data(format!("primitive color {color:?} outside [0,1]")));
        }
        match self {
            Primitive::Sphere { radius, .. } if !(*radius > 0.0) => {
                Err(Error::Data(format!("sphere radius {radius} is degenerate")))
            }
            Primitive::Box { extent, .. } if extent.iter().any(|e| !(*e > 0.0)) => {
                Err(Error::Data(format!("box extent {extent:?} is degenerate")))
            }
            _ => Ok(()),
        }
    }

    /// Parameter interval over which the ray is inside the primitive,
    /// clipped to the ray bounds. `None` when the ray misses.
    pub fn intersect(&self, ray: &Ray) -> Option<(f64, f64)> {
        let (mut t0, mut t1) = match self {
            Primitive::Sphere { center, radius, .. } => {
                let oc = sub(ray.origin, *center);
                let a = dot(ray.dir, ray.dir);
                let b = 2.0 * dot(oc, ray.dir);
                let c = dot(oc, oc) - radius * radius;
                let disc = b * b - 4.0 * a * c;
                if disc <= 0.0 {
                    return None;
                }
                let sq = disc.sqrt();
                ((-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a))
            }
            Primitive::Box { center, extent, .. } => {
                let mut lo = f64::NEG_INFINITY;
                let mut hi = f64::INFINITY;
                for axis in 0..3 {
                    let o = ray.origin[axis] - center[axis];
                    let d = ray.dir[axis];
                    let e = extent[axis];
                    if d.abs() < 1e-15 {
                        if o.abs() > e {
                            return None;
                        }
                        continue;
                    }
                    let ta = (-e - o) / d;
                    let tb = (e - o) / d;
                    lo = lo.max(ta.min(tb));
                    hi = hi.min(ta.max(tb));
                }
                if lo >= hi {
                    return None;
                }
                (lo, hi)
            }
        };
        t0 = t0.max(ray.t_near);
        t1 = t1.min(ray.t_far);
        if t0 < t1 {
            Some((t0, t1))
        } else {
            None
        }
    }
}

/// Analytic scene: primitives plus the background they composite over.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticScene {
    pub primitives: Vec<Primitive>,
    pub background: Background,
}

impl SyntheticScene {
    pub fn validate(&self) -> Result<()> {
        for p in &self.primitives {
            p.validate()?;
        }
        Ok(())
    }
}

/// Exact per-ray render: composited color, expected termination distance
/// (scene units), and opacity.
pub fn trace_ray_gt(scene: &SyntheticScene, ray: &Ray) -> ([f64; 3], f64, f64) {
    // breakpoints where the active primitive set changes
    let mut hits = Vec::new();
    let mut cuts = vec![ray.t_near, ray.t_far];
    for p in &scene.primitives {
        if let Some((t0, t1)) = p.intersect(ray) {
            cuts.push(t0);
            cuts.push(t1);
            hits.push((t0, t1, p.density(), p.color()));
        }
    }
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    let dn = ray.dir_norm();
    let mut trans = 1.0f64;
    let mut rgb = [0.0f64; 3];
    let mut depth_num = 0.0f64;
    for seg in cuts.windows(2) {
        let (a, b) = (seg[0], seg[1]);
        if !(b > a) {
            continue;
        }
        let mid = 0.5 * (a + b);
        let mut sigma = 0.0;
        let mut emit = [0.0f64; 3];
        for (t0, t1, d, c) in &hits {
            if mid > *t0 && mid < *t1 {
                sigma += d;
                for ch in 0..3 {
                    emit[ch] += d * c[ch];
                }
            }
        }
        if sigma <= 0.0 {
            continue;
        }
        let len = (b - a) * dn; // Euclidean slab length
        let att = (-sigma * len).exp();
        let alpha = -(-sigma * len).exp_m1();
        let mean_color = [emit[0] / sigma, emit[1] / sigma, emit[2] / sigma];
        for ch in 0..3 {
            rgb[ch] += trans * alpha * mean_color[ch];
        }
        // expected termination distance within the slab:
        // integral of T(s) sigma s ds with s measured from the ray origin
        let s_a = a * dn;
        depth_num += trans * (s_a * alpha + alpha / sigma - len * att);
        trans *= att;
    }
    let acc = 1.0 - trans;
    let bg = scene.background.color();
    for ch in 0..3 {
        rgb[ch] += trans * bg[ch];
    }
    let depth = if acc > ACC_EPSILON {
        depth_num / acc
    } else {
        0.0
    };
    (rgb, depth, acc)
}

/// Ground-truth render of one camera: color image, depth map, opacity map.
#[derive(Debug, Clone)]
pub struct GtRender {
    pub rgb: ImageF,
    pub depth: Vec<f64>,
    pub alpha: Vec<f64>,
}

pub fn render_synthetic_gt(
    scene: &SyntheticScene,
    camera: &Camera,
    near: f64,
    far: f64,
) -> Result<GtRender> {
    scene.validate()?;
    let (w, h) = (camera.width, camera.height);
    let mut rgb = ImageF::new(w, h);
    let mut depth = vec![0.0; (w * h) as usize];
    let mut alpha = vec![0.0; (w * h) as usize];
    for y in 0..h {
        for x in 0..w {
            let ray = camera.ray(x as f64, y as f64, near, far)?;
            let (c, d, a) = trace_ray_gt(scene, &ray);
            rgb.set_pixel(x, y, c);
            depth[(y * w + x) as usize] = d;
            alpha[(y * w + x) as usize] = a;
        }
    }
    Ok(GtRender { rgb, depth, alpha })
}

/// Camera ring specification for generated scenes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RingSpec {
    pub count: usize,
    pub radius: f64,
    pub height: f64,
    #[serde(default)]
    pub start_angle: f64,
    #[serde(default = "default_turns")]
    pub full_turns: f64,
    #[serde(default)]
    pub target: Vec3,
}

fn default_turns() -> f64 {
    1.0
}

/// Descriptor for a generated scene: primitives plus cameras on a ring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSceneDesc {
    pub name: String,
    #[serde(default)]
    pub background: Background,
    pub image_size: [u32; 2],
    pub camera_angle_x: f64,
    pub near: f64,
    pub far: f64,
    pub ring: RingSpec,
    pub primitives: Vec<Primitive>,
}

impl SyntheticSceneDesc {
    pub fn scene(&self) -> SyntheticScene {
        SyntheticScene {
            primitives: self.primitives.clone(),
            background: self.background,
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>> {
        if self.ring.count == 0 {
            return Err(Error::Data("camera ring is empty".into()));
        }
        let [w, h] = self.image_size;
        let focal = Camera::focal_from_fov_x(w, self.camera_angle_x);
        let mut cams = Vec::with_capacity(self.ring.count);
        for i in 0..self.ring.count {
            let angle = self.ring.start_angle
                + std::f64::consts::TAU * self.ring.full_turns * i as f64 / self.ring.count as f64;
            let pos = add(
                self.ring.target,
                [
                    self.ring.radius * angle.cos(),
                    self.ring.radius * angle.sin(),
                    self.ring.height,
                ],
            );
            cams.push(Camera::look_at(
                pos,
                self.ring.target,
                [0.0, 0.0, 1.0],
                w,
                h,
                focal,
            )?);
        }
        Ok(cams)
    }
}

/// Pose rows (4x4) of a camera, for manifest output.
pub fn transform_rows(camera: &Camera) -> Vec<Vec<f64>> {
    let mut rows = Vec::with_capacity(4);
    for r in 0..3 {
        rows.push(vec![
            camera.rotation[r][0],
            camera.rotation[r][1],
            camera.rotation[r][2],
            camera.translation[r],
        ]);
    }
    rows.push(vec![0.0, 0.0, 0.0, 1.0]);
    rows
}
