//! Frequency positional encoding and the radiance field network.
//!
//! A small trunk MLP on the encoded position feeds four heads: density
//! (softplus with a fixed raw-space bias), per-channel Laplace scales
//! (softplus plus a floor), and — after a bottleneck joined with the encoded
//! view direction — color locations (logistic) and an unnormalized 3-vector
//! whose Euclidean norm is the per-sample ray-depth estimate.

use crate::geometry::{norm, Vec3};
use crate::tape::{Real, Tape, Var};
use crate::{Error, Result};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Frequency counts for the positional encodings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingConfig {
    pub l_pos: usize,
    pub l_dir: usize,
}

/// Encode `x` as `[x, sin(2^k pi x), cos(2^k pi x)]` for k = 0..l,
/// componentwise; output length `3 + 6l`.
pub fn positional_encode(x: Vec3, l: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(3 + 6 * l);
    out.extend_from_slice(&x);
    for k in 0..l {
        let f = std::f64::consts::PI * (1u64 << k) as f64;
        for c in x {
            out.push((f * c).sin());
        }
        for c in x {
            out.push((f * c).cos());
        }
    }
    out
}

/// Network architecture and activation constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldConfig {
    pub l_pos: usize,
    pub l_dir: usize,
    pub trunk_depth: usize,
    pub trunk_width: usize,
    pub bottleneck_width: usize,
    pub view_width: usize,
    /// Floor added to the softplus of the raw Laplace scales.
    pub beta_min: f64,
    /// Fixed bias applied to the raw density before softplus.
    pub sigma_bias: f64,
}

impl Default for FieldConfig {
    fn default() -> Self {
        FieldConfig {
            l_pos: 8,
            l_dir: 4,
            trunk_depth: 4,
            trunk_width: 128,
            bottleneck_width: 128,
            view_width: 128,
            beta_min: 1e-3,
            sigma_bias: -1.0,
        }
    }
}

impl FieldConfig {
    pub fn enc_pos_dim(&self) -> usize {
        3 + 6 * self.l_pos
    }

    pub fn enc_dir_dim(&self) -> usize {
        3 + 6 * self.l_dir
    }

    pub fn validate(&self) -> Result<()> {
        if self.trunk_depth < 1 || self.trunk_width < 1 {
            return Err(Error::Config("trunk must have depth and width >= 1".into()));
        }
        if self.bottleneck_width < 1 || self.view_width < 1 {
            return Err(Error::Config("head widths must be >= 1".into()));
        }
        if !(self.beta_min > 0.0) {
            return Err(Error::Config("beta_min must be positive".into()));
        }
        Ok(())
    }

    /// Short human-readable architecture descriptor, used in mismatch errors.
    pub fn describe(&self) -> String {
        format!(
            "pe({},{}) trunk {}x{} bneck {} view {}",
            self.l_pos,
            self.l_dir,
            self.trunk_depth,
            self.trunk_width,
            self.bottleneck_width,
            self.view_width
        )
    }
}

#[derive(Debug, Clone, Copy)]
struct LayerSpec {
    w_off: usize,
    b_off: usize,
    in_dim: usize,
    out_dim: usize,
}

/// Flat parameter store plus the layer layout derived from a [`FieldConfig`].
#[derive(Debug, Clone)]
pub struct FieldParams {
    cfg: FieldConfig,
    layers: Vec<LayerSpec>,
    pub values: Vec<f64>,
}

// layer indices after the trunk
const HEAD_SIGMA: usize = 0;
const HEAD_BETA: usize = 1;
const HEAD_BNECK: usize = 2;
const HEAD_VIEW: usize = 3;
const HEAD_RGB: usize = 4;
const HEAD_DIR: usize = 5;

impl FieldParams {
    fn layout(cfg: &FieldConfig) -> Vec<LayerSpec> {
        let mut layers = Vec::new();
        let mut off = 0;
        let mut push = |in_dim: usize, out_dim: usize| {
            let spec = LayerSpec {
                w_off: off,
                b_off: off + in_dim * out_dim,
                in_dim,
                out_dim,
            };
            off += in_dim * out_dim + out_dim;
            layers.push(spec);
        };
        let w = cfg.trunk_width;
        push(cfg.enc_pos_dim(), w);
        for _ in 1..cfg.trunk_depth {
            push(w, w);
        }
        push(w, 1); // density
        push(w, 3); // scales
        push(w, cfg.bottleneck_width);
        push(cfg.bottleneck_width + cfg.enc_dir_dim(), cfg.view_width);
        push(cfg.view_width, 3); // color locations
        push(cfg.view_width, 3); // depth direction estimate
        layers
    }

    fn head(&self, which: usize) -> LayerSpec {
        self.layers[self.cfg.trunk_depth + which]
    }

    pub fn n_params(cfg: &FieldConfig) -> usize {
        let layers = Self::layout(cfg);
        let last = layers.last().unwrap();
        last.b_off + last.out_dim
    }

    /// Uniform fan-in initialization; biases zero except the depth head,
    /// which starts at (1, 0, 0) so the estimated depth begins near 1.
    pub fn init(cfg: &FieldConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let layers = Self::layout(cfg);
        let mut values = vec![0.0; Self::n_params(cfg)];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for spec in &layers {
            let bound = 1.0 / (spec.in_dim as f64).sqrt();
            for w in &mut values[spec.w_off..spec.w_off + spec.in_dim * spec.out_dim] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        let mut params = FieldParams {
            cfg: cfg.clone(),
            layers,
            values,
        };
        let dir = params.head(HEAD_DIR);
        params.values[dir.b_off] = 1.0;
        Ok(params)
    }

    pub fn from_values(cfg: &FieldConfig, values: Vec<f64>) -> Result<Self> {
        cfg.validate()?;
        if values.len() != Self::n_params(cfg) {
            return Err(Error::Config(format!(
                "{} parameter values for an architecture needing {}",
                values.len(),
                Self::n_params(cfg)
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(FieldParams {
            cfg: cfg.clone(),
            layers: Self::layout(cfg),
            values,
        })
    }

    pub fn config(&self) -> &FieldConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_finite(&self) -> Result<()> {
        if let Some(i) = self.values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("parameter {i} is not finite")));
        }
        Ok(())
    }
}

/// Per-sample field outputs; generic so the same code serves the plain and
/// the recorded execution paths.
#[derive(Debug, Clone, Copy)]
pub struct FieldOutput<R> {
    /// Color location parameters, componentwise in [0, 1].
    pub mu_c: [R; 3],
    /// Volume density, >= 0.
    pub sigma: R,
    /// Laplace scales per color channel, >= beta_min.
    pub beta: [R; 3],
    /// Estimated ray depth, the norm of the raw direction head.
    pub mu_d: R,
}

trait Engine<'t>: Copy {
    type R: Real + 't;
    fn affine(&self, params: &FieldParams, spec: LayerSpec, xs: &[Self::R]) -> Vec<Self::R>;
}

#[derive(Clone, Copy)]
struct Plain;

impl Engine<'static> for Plain {
    type R = f64;
    fn affine(&self, params: &FieldParams, spec: LayerSpec, xs: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(spec.out_dim);
        for j in 0..spec.out_dim {
            let row = &params.values[spec.w_off + j * spec.in_dim..spec.w_off + (j + 1) * spec.in_dim];
            let mut acc = params.values[spec.b_off + j];
            for (w, x) in row.iter().zip(xs) {
                acc += w * x;
            }
            out.push(acc);
        }
        out
    }
}

impl<'t> Engine<'t> for &'t Tape {
    type R = Var<'t>;
    fn affine(&self, params: &FieldParams, spec: LayerSpec, xs: &[Var<'t>]) -> Vec<Var<'t>> {
        Tape::affine(
            self,
            &params.values,
            spec.w_off,
            spec.b_off,
            spec.in_dim,
            spec.out_dim,
            xs,
        )
    }
}

fn check_inputs(pos: Vec3, view: Vec3) -> Result<()> {
    for (i, v) in pos.iter().chain(view.iter()).enumerate() {
        if !v.is_finite() {
            return Err(Error::Numeric(format!("field input component {i} is not finite")));
        }
    }
    if (norm(view) - 1.0).abs() > 1e-6 {
        return Err(Error::Domain(format!(
            "view direction must be unit length, |view| = {}",
            norm(view)
        )));
    }
    Ok(())
}

fn forward_impl<'t, E: Engine<'t>>(
    eng: E,
    params: &FieldParams,
    pos: Vec3,
    view: Vec3,
) -> Result<FieldOutput<E::R>> {
    check_inputs(pos, view)?;
    let cfg = &params.cfg;
    let lift = |v: Vec<f64>| -> Vec<E::R> { v.into_iter().map(E::R::lit).collect() };

    let mut h = lift(positional_encode(pos, cfg.l_pos));
    for d in 0..cfg.trunk_depth {
        h = eng.affine(params, params.layers[d], &h);
        for x in &mut h {
            *x = x.relu();
        }
    }

    let raw_sigma = eng.affine(params, params.head(HEAD_SIGMA), &h)[0];
    let sigma = (raw_sigma + E::R::lit(cfg.sigma_bias)).softplus();

    let raw_beta = eng.affine(params, params.head(HEAD_BETA), &h);
    let beta = [
        raw_beta[0].softplus() + E::R::lit(cfg.beta_min),
        raw_beta[1].softplus() + E::R::lit(cfg.beta_min),
        raw_beta[2].softplus() + E::R::lit(cfg.beta_min),
    ];

    let mut view_in = eng.affine(params, params.head(HEAD_BNECK), &h);
    view_in.extend(lift(positional_encode(view, cfg.l_dir)));
    let mut hv = eng.affine(params, params.head(HEAD_VIEW), &view_in);
    for x in &mut hv {
        *x = x.relu();
    }

    let raw_rgb = eng.affine(params, params.head(HEAD_RGB), &hv);
    let mu_c = [
        raw_rgb[0].logistic(),
        raw_rgb[1].logistic(),
        raw_rgb[2].logistic(),
    ];

    let raw_dir = eng.affine(params, params.head(HEAD_DIR), &hv);
    let mu_d = (raw_dir[0] * raw_dir[0] + raw_dir[1] * raw_dir[1] + raw_dir[2] * raw_dir[2]).sqrt();

    Ok(FieldOutput {
        mu_c,
        sigma,
        beta,
        mu_d,
    })
}

/// Plain (non-recording) forward pass.
pub fn field_forward(params: &FieldParams, pos: Vec3, view: Vec3) -> Result<FieldOutput<f64>> {
    forward_impl(Plain, params, pos, view)
}

/// Recording forward pass; all outputs are nodes on `tape`.
pub fn field_forward_tape<'t>(
    tape: &'t Tape,
    params: &FieldParams,
    pos: Vec3,
    view: Vec3,
) -> Result<FieldOutput<Var<'t>>> {
    forward_impl(tape, params, pos, view)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> FieldConfig {
        FieldConfig {
            l_pos: 2,
            l_dir: 1,
            trunk_depth: 2,
            trunk_width: 8,
            bottleneck_width: 4,
            view_width: 6,
            ..FieldConfig::default()
        }
    }

    #[test]
    fn encode_l0_is_identity() {
        assert_eq!(positional_encode([0.3, -0.7, 2.0], 0), vec![0.3, -0.7, 2.0]);
    }

    #[test]
    fn encode_zero_input() {
        let e = positional_encode([0.0; 3], 3);
        assert_eq!(e.len(), 3 + 18);
        for k in 0..3 {
            for i in 0..3 {
                assert_eq!(e[3 + 6 * k + i], 0.0); // sin terms
                assert_eq!(e[3 + 6 * k + 3 + i], 1.0); // cos terms
            }
        }
    }

    #[test]
    fn encode_first_frequency_quarter_period() {
        let e = positional_encode([0.5, 0.0, 0.0], 1);
        assert!((e[3] - 1.0).abs() < 1e-15); // sin(pi/2)
        assert!(e[6].abs() < 1e-15); // cos(pi/2)
    }

    #[test]
    fn zeroed_heads_yield_constant_outputs() {
        let cfg = tiny_cfg();
        let mut params = FieldParams::init(&cfg, 3).unwrap();
        for which in [HEAD_SIGMA, HEAD_BETA, HEAD_RGB, HEAD_DIR] {
            let spec = params.head(which);
            for v in &mut params.values
                [spec.w_off..spec.w_off + spec.in_dim * spec.out_dim + spec.out_dim]
            {
                *v = 0.0;
            }
        }
        let expect_sigma = crate::tape::softplus_f64(cfg.sigma_bias);
        for pos in [[0.0; 3], [0.4, -0.2, 1.0], [3.0, 2.0, -1.0]] {
            let out = field_forward(&params, pos, [0.0, 0.0, 1.0]).unwrap();
            assert!((out.sigma - expect_sigma).abs() < 1e-15);
            for c in out.mu_c {
                assert_eq!(c, 0.5);
            }
            assert_eq!(out.mu_d, 0.0);
        }
    }

    #[test]
    fn sigma_and_beta_ignore_view_direction() {
        let params = FieldParams::init(&tiny_cfg(), 11).unwrap();
        let pos = [0.2, 0.4, -0.3];
        let a = field_forward(&params, pos, [0.0, 0.0, 1.0]).unwrap();
        let b = field_forward(&params, pos, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(a.sigma, b.sigma);
        assert_eq!(a.beta, b.beta);
        assert!(a.mu_c != b.mu_c || a.mu_d != b.mu_d);
    }

    #[test]
    fn hand_computed_single_unit_network() {
        let cfg = FieldConfig {
            l_pos: 0,
            l_dir: 0,
            trunk_depth: 1,
            trunk_width: 1,
            bottleneck_width: 1,
            view_width: 1,
            beta_min: 1e-3,
            sigma_bias: -1.0,
        };
        let n = FieldParams::n_params(&cfg);
        // layers: trunk 3->1, sigma 1->1, beta 1->3, bneck 1->1,
        // view (1+3)->1, rgb 1->3, dir 1->3
        assert_eq!(n, 4 + 2 + 6 + 2 + 5 + 6 + 6);
        let mut vals = vec![0.0; n];
        // trunk: w = (0.5, -0.25, 0.1), b = 0.05
        vals[0] = 0.5;
        vals[1] = -0.25;
        vals[2] = 0.1;
        vals[3] = 0.05;
        // sigma head: w = 2.0, b = 0.3
        vals[4] = 2.0;
        vals[5] = 0.3;
        // beta head: w = (1, -1, 0.5), b = (0.1, 0.2, -0.3)
        vals[6..12].copy_from_slice(&[1.0, -1.0, 0.5, 0.1, 0.2, -0.3]);
        // bottleneck: w = 0.7, b = -0.1
        vals[12] = 0.7;
        vals[13] = -0.1;
        // view layer: w = (0.6, 0.2, -0.4, 0.3), b = 0.15
        vals[14..19].copy_from_slice(&[0.6, 0.2, -0.4, 0.3, 0.15]);
        // rgb head: w = (1.5, -0.5, 0.25), b = (0, 0.1, -0.2)
        vals[19..25].copy_from_slice(&[1.5, -0.5, 0.25, 0.0, 0.1, -0.2]);
        // dir head: w = (1, 2, 3), b = (0.4, -0.1, 0.2)
        vals[25..31].copy_from_slice(&[1.0, 2.0, 3.0, 0.4, -0.1, 0.2]);
        let params = FieldParams::from_values(&cfg, vals).unwrap();

        let pos = [0.2, 0.4, -1.0];
        let view = [0.0, 1.0, 0.0];
        let out = field_forward(&params, pos, view).unwrap();

        let sp = |x: f64| crate::tape::softplus_f64(x);
        let lg = |x: f64| 1.0 / (1.0 + (-x as f64).exp());
        let h = (0.5 * 0.2 - 0.25 * 0.4 + 0.1 * -1.0 + 0.05f64).max(0.0); // = 0 after relu? -0.05 -> 0
        assert_eq!(h, 0.0);
        let sigma = sp(2.0 * h + 0.3 - 1.0);
        let beta = [sp(h + 0.1) + 1e-3, sp(-h + 0.2) + 1e-3, sp(0.5 * h - 0.3) + 1e-3];
        let b = 0.7 * h - 0.1;
        let hv = (0.6 * b + 0.2 * view[0] - 0.4 * view[1] + 0.3 * view[2] + 0.15f64).max(0.0);
        let mu_c = [lg(1.5 * hv), lg(-0.5 * hv + 0.1), lg(0.25 * hv - 0.2)];
        let d = [hv + 0.4, 2.0 * hv - 0.1, 3.0 * hv + 0.2];
        let mu_d = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();

        assert!((out.sigma - sigma).abs() < 1e-12);
        for i in 0..3 {
            assert!((out.beta[i] - beta[i]).abs() < 1e-12);
            assert!((out.mu_c[i] - mu_c[i]).abs() < 1e-12);
        }
        assert!((out.mu_d - mu_d).abs() < 1e-12);
    }

    #[test]
    fn activation_ranges_hold_for_random_nets() {
        let cfg = tiny_cfg();
        for seed in 0..5 {
            let params = FieldParams::init(&cfg, seed).unwrap();
            for trial in 0..20 {
                let t = trial as f64;
                let pos = [t.sin() * 3.0, (t * 1.7).cos() * 2.0, t * 0.1 - 1.0];
                let v = [t.cos(), t.sin(), 1.0];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                let view = [v[0] / n, v[1] / n, v[2] / n];
                let out = field_forward(&params, pos, view).unwrap();
                assert!(out.sigma >= 0.0);
                assert!(out.mu_d >= 0.0);
                for c in out.mu_c {
                    assert!((0.0..=1.0).contains(&c));
                }
                for b in out.beta {
                    assert!(b >= cfg.beta_min);
                }
            }
        }
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let cfg = tiny_cfg();
        let params = FieldParams::init(&cfg, 42).unwrap();
        let pos = [0.1, -0.2, 0.7];
        let view = [0.0, 0.6, 0.8];
        let plain = field_forward(&params, pos, view).unwrap();
        let tape = Tape::new(params.len());
        let rec = field_forward_tape(&tape, &params, pos, view).unwrap();
        assert_eq!(plain.sigma, rec.sigma.value());
        assert_eq!(plain.mu_d, rec.mu_d.value());
        for i in 0..3 {
            assert_eq!(plain.mu_c[i], rec.mu_c[i].value());
            assert_eq!(plain.beta[i], rec.beta[i].value());
        }
    }

    #[test]
    fn unnormalized_view_is_rejected() {
        let params = FieldParams::init(&tiny_cfg(), 0).unwrap();
        assert!(field_forward(&params, [0.0; 3], [0.0, 0.0, 1.5]).is_err());
    }

    #[test]
    fn non_finite_input_is_a_numeric_fault() {
        let params = FieldParams::init(&tiny_cfg(), 0).unwrap();
        let err = field_forward(&params, [f64::NAN, 0.0, 0.0], [0.0, 0.0, 1.0]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }
}
