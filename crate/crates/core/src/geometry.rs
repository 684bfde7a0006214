//! Camera model, ray generation, and sampling along rays.
//!
//! Conventions: pinhole camera with x right / y up / -z forward in camera
//! space, pixel centers offset by +0.5, and unnormalized ray directions
//! scaled so that t = 1 lands on the image plane at unit camera-frame depth.
//! The direction norm is therefore the per-pixel depth scale and doubles as
//! the ray-depth regression target.

use crate::{Error, Result};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub type Vec3 = [f64; 3];

pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn normalize(a: Vec3) -> Vec3 {
    scale(a, 1.0 / norm(a))
}

/// Pinhole camera with a rigid camera-to-world pose.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Camera {
    pub width: u32,
    pub height: u32,
    /// Focal length in pixels.
    pub focal: f64,
    /// Principal point in pixels.
    pub principal: (f64, f64),
    /// Rotation part of the camera-to-world transform, row-major. Columns
    /// are the camera axes expressed in world coordinates.
    pub rotation: [[f64; 3]; 3],
    /// Camera origin in world coordinates.
    pub translation: Vec3,
}

impl Camera {
    pub fn new(
        width: u32,
        height: u32,
        focal: f64,
        principal: (f64, f64),
        rotation: [[f64; 3]; 3],
        translation: Vec3,
    ) -> Result<Self> {
        if width < 1 || height < 1 {
            return Err(Error::Domain("camera dimensions must be >= 1".into()));
        }
        if !(focal > 0.0) {
            return Err(Error::Domain(format!("focal must be positive, got {focal}")));
        }
        for v in rotation.iter().flatten().chain(translation.iter()) {
            if !v.is_finite() {
                return Err(Error::Domain("camera pose contains non-finite values".into()));
            }
        }
        // Columns of the rotation must be orthonormal.
        let col = |c: usize| [rotation[0][c], rotation[1][c], rotation[2][c]];
        for c in 0..3 {
            if (norm(col(c)) - 1.0).abs() > 1e-6 {
                return Err(Error::Domain(format!("rotation column {c} is not unit length")));
            }
        }
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            if dot(col(a), col(b)).abs() > 1e-6 {
                return Err(Error::Domain(format!(
                    "rotation columns {a} and {b} are not orthogonal"
                )));
            }
        }
        Ok(Camera {
            width,
            height,
            focal,
            principal,
            rotation,
            translation,
        })
    }

    /// Camera at `pos` looking toward `target`, rolled so `up` points up.
    pub fn look_at(
        pos: Vec3,
        target: Vec3,
        up: Vec3,
        width: u32,
        height: u32,
        focal: f64,
    ) -> Result<Self> {
        let forward = sub(target, pos);
        if norm(forward) == 0.0 {
            return Err(Error::Domain("look_at target coincides with position".into()));
        }
        let z_axis = scale(normalize(forward), -1.0);
        let mut x_axis = cross(up, z_axis);
        if norm(x_axis) < 1e-9 {
            x_axis = cross([0.0, 1.0, 0.0], z_axis);
        }
        let x_axis = normalize(x_axis);
        let y_axis = cross(z_axis, x_axis);
        let rotation = [
            [x_axis[0], y_axis[0], z_axis[0]],
            [x_axis[1], y_axis[1], z_axis[1]],
            [x_axis[2], y_axis[2], z_axis[2]],
        ];
        Camera::new(
            width,
            height,
            focal,
            (width as f64 / 2.0, height as f64 / 2.0),
            rotation,
            pos,
        )
    }

    /// Focal length for a horizontal field of view, `focal = w / (2 tan(fov/2))`.
    pub fn focal_from_fov_x(width: u32, fov_x: f64) -> f64 {
        width as f64 / (2.0 * (fov_x / 2.0).tan())
    }

    fn rotate(&self, v: Vec3) -> Vec3 {
        [
            dot(self.rotation[0], v),
            dot(self.rotation[1], v),
            dot(self.rotation[2], v),
        ]
    }

    /// Generate the ray through continuous pixel coordinates `(u, v)`.
    ///
    /// The direction is left unnormalized: its norm is the depth scale of
    /// the pixel at t = 1 and serves as the ray's depth target.
    pub fn ray(&self, u: f64, v: f64, t_near: f64, t_far: f64) -> Result<Ray> {
        if !(0.0..self.width as f64).contains(&u) || !(0.0..self.height as f64).contains(&v) {
            return Err(Error::Domain(format!(
                "pixel ({u}, {v}) outside {}x{} image",
                self.width, self.height
            )));
        }
        let (cx, cy) = self.principal;
        let dir_cam = [
            (u + 0.5 - cx) / self.focal,
            -(v + 0.5 - cy) / self.focal,
            -1.0,
        ];
        Ray::new(self.translation, self.rotate(dir_cam), t_near, t_far)
    }
}

/// A camera ray with an unnormalized direction and sampling bounds.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec3,
    pub dir: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, dir: Vec3, t_near: f64, t_far: f64) -> Result<Self> {
        if norm(dir) <= 0.0 {
            return Err(Error::Domain("ray direction must be nonzero".into()));
        }
        if !(t_near >= 0.0 && t_near < t_far) {
            return Err(Error::Domain(format!(
                "ray bounds must satisfy 0 <= t_near < t_far, got [{t_near}, {t_far}]"
            )));
        }
        Ok(Ray {
            origin,
            dir,
            t_near,
            t_far,
        })
    }

    pub fn dir_norm(&self) -> f64 {
        norm(self.dir)
    }

    pub fn point_at(&self, t: f64) -> Vec3 {
        add(self.origin, scale(self.dir, t))
    }

    pub fn unit_dir(&self) -> Vec3 {
        normalize(self.dir)
    }
}

/// Sorted sample positions along a ray together with the integration
/// intervals `delta_j = |dir| * (t_edges[j+1] - t_edges[j])`.
#[derive(Debug, Clone)]
pub struct RaySamples {
    pub t_mid: Vec<f64>,
    pub t_edges: Vec<f64>,
    pub delta: Vec<f64>,
}

impl RaySamples {
    fn from_edges_and_mids(t_edges: Vec<f64>, t_mid: Vec<f64>, dir_norm: f64) -> Self {
        debug_assert_eq!(t_edges.len(), t_mid.len() + 1);
        let delta = t_edges
            .windows(2)
            .map(|w| dir_norm * (w[1] - w[0]))
            .collect();
        RaySamples {
            t_mid,
            t_edges,
            delta,
        }
    }

    pub fn len(&self) -> usize {
        self.t_mid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_mid.is_empty()
    }
}

/// Partition `[t_near, t_far]` into `m` equal bins and take one sample per
/// bin: the bin center when `jitter` is off, a uniform draw inside the bin
/// when on.
pub fn stratified_sample(
    ray: &Ray,
    m: usize,
    jitter: bool,
    rng: &mut impl Rng,
) -> Result<RaySamples> {
    if m == 0 {
        return Err(Error::Domain("sample count must be >= 1".into()));
    }
    let (tn, tf) = (ray.t_near, ray.t_far);
    let span = tf - tn;
    let mut edges = Vec::with_capacity(m + 1);
    for i in 0..=m {
        edges.push(tn + span * (i as f64 / m as f64));
    }
    edges[m] = tf;
    let mids = (0..m)
        .map(|i| {
            let (lo, hi) = (edges[i], edges[i + 1]);
            if jitter {
                lo + (hi - lo) * rng.gen::<f64>()
            } else {
                0.5 * (lo + hi)
            }
        })
        .collect();
    Ok(RaySamples::from_edges_and_mids(edges, mids, ray.dir_norm()))
}

/// Weight floor keeping the hierarchical pdf strictly positive.
pub const WEIGHT_FLOOR: f64 = 1e-5;

/// Inverse-CDF draws from the piecewise-constant pdf proportional to
/// `weights + WEIGHT_FLOOR` over the bins delimited by `edges`.
pub fn sample_piecewise_pdf(
    edges: &[f64],
    weights: &[f64],
    n: usize,
    rng: &mut impl Rng,
) -> Result<Vec<f64>> {
    if edges.len() != weights.len() + 1 {
        return Err(Error::Domain(format!(
            "{} weights do not match {} edges",
            weights.len(),
            edges.len()
        )));
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Domain(format!("negative or NaN sample weight {w}")));
    }
    let padded: Vec<f64> = weights.iter().map(|w| w + WEIGHT_FLOOR).collect();
    let total: f64 = padded.iter().sum();
    let mut cdf = Vec::with_capacity(padded.len() + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for p in &padded {
        acc += p / total;
        cdf.push(acc);
    }
    *cdf.last_mut().unwrap() = 1.0;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let u: f64 = rng.gen();
        let bin = match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(weights.len() - 1),
            Err(i) => i - 1,
        };
        let lo = cdf[bin];
        let hi = cdf[bin + 1];
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        out.push(edges[bin] + frac * (edges[bin + 1] - edges[bin]));
    }
    Ok(out)
}

/// Importance-sample `m_fine` new positions from the coarse weight profile,
/// merge them with the coarse sample positions, and rebuild edges at the
/// midpoints of consecutive samples.
pub fn hierarchical_sample(
    coarse: &RaySamples,
    weights: &[f64],
    m_fine: usize,
    dir_norm: f64,
    rng: &mut impl Rng,
) -> Result<RaySamples> {
    if weights.len() != coarse.len() {
        return Err(Error::Domain(format!(
            "{} weights for {} coarse bins",
            weights.len(),
            coarse.len()
        )));
    }
    let fine = sample_piecewise_pdf(&coarse.t_edges, weights, m_fine, rng)?;
    let mut merged = coarse.t_mid.clone();
    merged.extend(fine);
    merged.sort_by(f64::total_cmp);
    merged.dedup();
    let first = *coarse.t_edges.first().unwrap();
    let last = *coarse.t_edges.last().unwrap();
    let mut edges = Vec::with_capacity(merged.len() + 1);
    edges.push(first);
    for w in merged.windows(2) {
        edges.push(0.5 * (w[0] + w[1]));
    }
    edges.push(last);
    Ok(RaySamples::from_edges_and_mids(edges, merged, dir_norm))
}

/// Scene-space annealing schedule for the sampling bounds.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnnealConfig {
    /// Steps until the full interval is reached.
    pub steps: usize,
    /// Fraction of the interval width used at step 0.
    pub start_fraction: f64,
}

impl Default for AnnealConfig {
    fn default() -> Self {
        AnnealConfig {
            steps: 256,
            start_fraction: 0.5,
        }
    }
}

/// Interpolate the sampling interval from a narrow window around the scene
/// midpoint at step 0 to the full `[t_near, t_far]` at `cfg.steps`; identity
/// afterwards.
pub fn anneal_bounds(ray: &Ray, step: usize, cfg: &AnnealConfig) -> (f64, f64) {
    if cfg.steps == 0 || step >= cfg.steps {
        return (ray.t_near, ray.t_far);
    }
    let p = cfg.start_fraction + (1.0 - cfg.start_fraction) * (step as f64 / cfg.steps as f64);
    let mid = 0.5 * (ray.t_near + ray.t_far);
    let half = 0.5 * p * (ray.t_far - ray.t_near);
    (mid - half, mid + half)
}
