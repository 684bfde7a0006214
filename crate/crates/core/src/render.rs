//! Alpha compositing along a ray: transmittance, blending weights,
//! composited color, and the weight-averaged expected depth.

use crate::tape::Real;
use crate::{Error, Result};

/// Transmittance and blending weights for one ray.
#[derive(Debug, Clone)]
pub struct BlendWeights<R> {
    /// T_j: probability the ray reaches sample j unoccluded. T_1 = 1.
    pub trans: Vec<R>,
    /// w_j = T_j (1 - exp(-sigma_j delta_j)).
    pub w: Vec<R>,
    /// Total opacity, sum of the weights.
    pub acc: R,
}

/// Composited outputs for one ray.
#[derive(Debug, Clone, Copy)]
pub struct RenderResult {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

/// Shared weight chain: given per-sample optical depths `sigma_j * delta_j`,
/// produce transmittances and blending weights.
pub(crate) fn weights_from_optical_depth<R: Real>(optical: &[R]) -> (Vec<R>, Vec<R>) {
    let mut trans = Vec::with_capacity(optical.len());
    let mut w = Vec::with_capacity(optical.len());
    let mut t = R::lit(1.0);
    for &od in optical {
        let ex = (-od).exp();
        let alpha = -(-od).exp_m1();
        trans.push(t);
        w.push(t * alpha);
        t = t * ex;
    }
    (trans, w)
}

/// Blending weights from densities and integration intervals.
pub fn compute_blend_weights<R: Real>(sigma: &[R], delta: &[f64]) -> Result<BlendWeights<R>> {
    if sigma.len() != delta.len() {
        return Err(Error::Domain(format!(
            "{} densities vs {} intervals",
            sigma.len(),
            delta.len()
        )));
    }
    for s in sigma {
        if !(s.value() >= 0.0) {
            return Err(Error::Domain(format!("negative or NaN density {}", s.value())));
        }
    }
    for d in delta {
        if !(*d > 0.0) {
            return Err(Error::Domain(format!("non-positive interval {d}")));
        }
    }
    let optical: Vec<R> = sigma
        .iter()
        .zip(delta)
        .map(|(s, d)| *s * R::lit(*d))
        .collect();
    let (trans, w) = weights_from_optical_depth(&optical);
    let mut acc = R::lit(0.0);
    for x in &w {
        acc = acc + *x;
    }
    Ok(BlendWeights { trans, w, acc })
}

/// `rgb = sum_j w_j mu_c_j + (1 - acc) * background`.
pub fn composite_color<R: Real>(
    weights: &BlendWeights<R>,
    mu_c: &[[R; 3]],
    background: [f64; 3],
) -> Result<[R; 3]> {
    if mu_c.len() != weights.w.len() {
        return Err(Error::Domain(format!(
            "{} colors vs {} weights",
            mu_c.len(),
            weights.w.len()
        )));
    }
    let mut rgb = [R::lit(0.0); 3];
    for (w, c) in weights.w.iter().zip(mu_c) {
        for ch in 0..3 {
            rgb[ch] = rgb[ch] + *w * c[ch];
        }
    }
    let residual = R::lit(1.0) - weights.acc;
    for ch in 0..3 {
        rgb[ch] = rgb[ch] + residual * R::lit(background[ch]);
    }
    Ok(rgb)
}

/// Guard under which a fully transparent ray reports depth 0.
pub const ACC_EPSILON: f64 = 1e-10;

/// Opacity-normalized expected termination distance,
/// `(sum_j w_j t_mid_j |dir|) / max(acc, ACC_EPSILON)`.
pub fn composite_depth<R: Real>(weights: &BlendWeights<R>, t_mid: &[f64], dir_norm: f64) -> R {
    debug_assert_eq!(weights.w.len(), t_mid.len());
    let mut num = R::lit(0.0);
    for (w, t) in weights.w.iter().zip(t_mid) {
        num = num + *w * R::lit(t * dir_norm);
    }
    let denom = if weights.acc.value() > ACC_EPSILON {
        weights.acc
    } else {
        R::lit(ACC_EPSILON)
    };
    num / denom
}
