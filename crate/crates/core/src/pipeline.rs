//! Per-ray pipeline: the differentiable two-level loss used in training and
//! the plain coarse/fine renderer used at inference time.

use crate::data::Background;
use crate::field::{field_forward, field_forward_tape, FieldParams};
use crate::geometry::{hierarchical_sample, stratified_sample, Camera, Ray, RaySamples};
use crate::imgio::ImageF;
use crate::loss::{LossTerms, LossWeights};
use crate::mixture::{
    color_mixture_log_pdf, depth_mixture_log_pdf, mixing_coefficients, regen_color_mixture_log_pdf,
    regenerate_weights,
};
use crate::render::{composite_color, composite_depth, compute_blend_weights};
use crate::tape::{Real, Tape, Var};
use crate::Result;
use rand::Rng;

/// Supervision for one ray: observed color and the depth-scale target
/// (the norm of the unnormalized direction at t = 1).
#[derive(Debug, Clone, Copy)]
pub struct RayTarget {
    pub ray: Ray,
    pub c_gt: [f64; 3],
    pub d_gt: f64,
}

impl RayTarget {
    pub fn new(ray: Ray, c_gt: [f64; 3]) -> Self {
        let d_gt = ray.dir_norm();
        RayTarget { ray, c_gt, d_gt }
    }
}

/// Recorded loss terms of one sampling level, plus the weight values needed
/// to drive the next level's sampling.
pub struct LevelEval<'t> {
    pub mse: Var<'t>,
    pub nll_c: Var<'t>,
    pub nll_d: Var<'t>,
    pub nll_c_hat: Var<'t>,
    pub w_values: Vec<f64>,
}

impl<'t> LevelEval<'t> {
    pub fn terms(&self) -> LossTerms {
        LossTerms {
            mse: self.mse.value(),
            nll_c: self.nll_c.value(),
            nll_d: self.nll_d.value(),
            nll_c_hat: self.nll_c_hat.value(),
        }
    }
}

/// Evaluate the field at every sample of one level and record the four loss
/// terms on the tape.
pub fn eval_level<'t>(
    tape: &'t Tape,
    params: &FieldParams,
    target: &RayTarget,
    samples: &RaySamples,
    background: [f64; 3],
    regen_stop_grad: bool,
) -> Result<LevelEval<'t>> {
    let view = target.ray.unit_dir();
    let m = samples.len();
    let mut sigma = Vec::with_capacity(m);
    let mut mu_c = Vec::with_capacity(m);
    let mut beta = Vec::with_capacity(m);
    let mut mu_d = Vec::with_capacity(m);
    for &t in &samples.t_mid {
        let out = field_forward_tape(tape, params, target.ray.point_at(t), view)?;
        sigma.push(out.sigma);
        mu_c.push(out.mu_c);
        beta.push(out.beta);
        mu_d.push(out.mu_d);
    }

    let bw = compute_blend_weights(&sigma, &samples.delta)?;
    let rgb = composite_color(&bw, &mu_c, background)?;
    let mut mse = Var::lit(0.0);
    for ch in 0..3 {
        let d = rgb[ch] - Var::lit(target.c_gt[ch]);
        mse = mse + d * d;
    }

    let pi = mixing_coefficients(&bw.w)?;
    let nll_c = -color_mixture_log_pdf(&pi, &mu_c, &beta, target.c_gt)?;
    let nll_d = -depth_mixture_log_pdf(&pi, &mu_d, &beta, target.d_gt)?;

    let mu_d_for_regen: Vec<Var<'t>> = if regen_stop_grad {
        mu_d.iter().map(|d| d.detach()).collect()
    } else {
        mu_d.clone()
    };
    let regen = regenerate_weights(&sigma, &mu_d_for_regen, &samples.t_edges)?;
    let nll_c_hat = -regen_color_mixture_log_pdf(&regen, &mu_c, &beta, target.c_gt)?;

    Ok(LevelEval {
        mse,
        nll_c,
        nll_d,
        nll_c_hat,
        w_values: bw.w.iter().map(|w| w.value()).collect(),
    })
}

/// Combine the two levels into the differentiable per-ray total. Terms with
/// a zero balancing weight are left out of the graph entirely, so a run with
/// all weights zero follows the exact arithmetic of an MSE-only trainer.
pub fn combine_ray_loss<'t>(
    fine: &LevelEval<'t>,
    coarse: &LevelEval<'t>,
    weights: &LossWeights,
) -> Var<'t> {
    let level_total = |level: &LevelEval<'t>| {
        let mut total = level.mse;
        if weights.lambda_c != 0.0 {
            total = total + Var::lit(weights.lambda_c) * level.nll_c;
        }
        if weights.lambda_d != 0.0 {
            total = total + Var::lit(weights.lambda_d) * level.nll_d;
        }
        if weights.lambda_c_hat != 0.0 {
            total = total + Var::lit(weights.lambda_c_hat) * level.nll_c_hat;
        }
        total
    };
    let mut total = level_total(fine);
    if weights.coarse_mult != 0.0 {
        total = total + Var::lit(weights.coarse_mult) * level_total(coarse);
    }
    total
}

/// Loss value and parameter gradient for one ray with both sampling levels
/// fixed. This is the differentiated function: sample positions are inputs,
/// not part of the graph, which is also what the finite-difference check
/// perturbs around.
pub fn ray_loss_fixed_samples(
    params: &FieldParams,
    target: &RayTarget,
    coarse: &RaySamples,
    fine: &RaySamples,
    background: [f64; 3],
    weights: &LossWeights,
    regen_stop_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new(params.len());
    let coarse_eval = eval_level(&tape, params, target, coarse, background, regen_stop_grad)?;
    let fine_eval = eval_level(&tape, params, target, fine, background, regen_stop_grad)?;
    let loss = combine_ray_loss(&fine_eval, &coarse_eval, weights);
    let grad = tape.backward(loss, &params.values);
    Ok((loss.value(), grad))
}

/// One rendered ray: color, expected depth, opacity.
pub struct RayRender {
    pub rgb: [f64; 3],
    pub depth: f64,
    pub acc: f64,
}

/// Plain coarse/fine render of a single ray.
pub fn render_ray(
    params: &FieldParams,
    ray: &Ray,
    n_coarse: usize,
    n_fine: usize,
    background: [f64; 3],
    rng: &mut impl Rng,
) -> Result<RayRender> {
    let view = ray.unit_dir();
    let coarse = stratified_sample(ray, n_coarse, false, rng)?;
    let mut sigma = Vec::with_capacity(n_coarse);
    for &t in &coarse.t_mid {
        sigma.push(field_forward(params, ray.point_at(t), view)?.sigma);
    }
    let bw = compute_blend_weights(&sigma, &coarse.delta)?;
    let fine = hierarchical_sample(&coarse, &bw.w, n_fine, ray.dir_norm(), rng)?;

    let m = fine.len();
    let mut sigma = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    for &t in &fine.t_mid {
        let out = field_forward(params, ray.point_at(t), view)?;
        sigma.push(out.sigma);
        colors.push(out.mu_c);
    }
    let bw = compute_blend_weights(&sigma, &fine.delta)?;
    let rgb = composite_color(&bw, &colors, background)?;
    let depth = composite_depth(&bw, &fine.t_mid, ray.dir_norm());
    Ok(RayRender {
        rgb,
        depth,
        acc: bw.acc,
    })
}

/// Rendered view: color image plus per-pixel depth and opacity maps.
pub struct ViewRender {
    pub rgb: ImageF,
    pub depth: Vec<f64>,
    pub acc: Vec<f64>,
}

/// Render a full view. Deterministic for a given seed: each pixel uses its
/// own counter-derived random stream for the fine sampling.
pub fn render_view(
    params: &FieldParams,
    camera: &Camera,
    near: f64,
    far: f64,
    n_coarse: usize,
    n_fine: usize,
    background: Background,
    seed: u64,
) -> Result<ViewRender> {
    use rand::SeedableRng;
    let (w, h) = (camera.width, camera.height);
    let mut rgb = ImageF::new(w, h);
    let mut depth = vec![0.0; (w * h) as usize];
    let mut acc = vec![0.0; (w * h) as usize];
    let bg = background.color();
    for y in 0..h {
        for x in 0..w {
            let idx = (y * w + x) as usize;
            let mut rng =
                rand_chacha::ChaCha8Rng::seed_from_u64(crate::trainer::mix_seed(seed, idx as u64, 0x52454e44));
            let ray = camera.ray(x as f64, y as f64, near, far)?;
            let out = render_ray(params, &ray, n_coarse, n_fine, bg, &mut rng)?;
            rgb.set_pixel(x, y, out.rgb);
            depth[idx] = out.depth;
            acc[idx] = out.acc;
        }
    }
    Ok(ViewRender { rgb, depth, acc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::FieldConfig;
    use crate::geometry::Ray;

    fn small_params(seed: u64) -> FieldParams {
        let cfg = FieldConfig {
            l_pos: 2,
            l_dir: 1,
            trunk_depth: 2,
            trunk_width: 10,
            bottleneck_width: 6,
            view_width: 8,
            ..FieldConfig::default()
        };
        FieldParams::init(&cfg, seed).unwrap()
    }

    fn fixed_samples(ray: &Ray, n: usize, seed: u64) -> RaySamples {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        stratified_sample(ray, n, true, &mut rng).unwrap()
    }

    #[test]
    fn zero_weights_reduce_the_graph_to_mse() {
        let params = small_params(1);
        let ray = Ray::new([0.0, 0.0, 2.0], [0.1, -0.2, -1.0], 0.5, 3.0).unwrap();
        let target = RayTarget::new(ray, [0.4, 0.5, 0.6]);
        let coarse = fixed_samples(&ray, 3, 10);
        let fine = fixed_samples(&ray, 5, 11);

        let weights = LossWeights {
            lambda_c: 0.0,
            lambda_d: 0.0,
            lambda_c_hat: 0.0,
            coarse_mult: 0.1,
        };
        let (loss, _) = ray_loss_fixed_samples(
            &params, &target, &coarse, &fine, [1.0; 3], &weights, false,
        )
        .unwrap();

        // independent MSE-only evaluation
        let tape = Tape::new(params.len());
        let ce = eval_level(&tape, &params, &target, &coarse, [1.0; 3], false).unwrap();
        let fe = eval_level(&tape, &params, &target, &fine, [1.0; 3], false).unwrap();
        let want = fe.mse.value() + 0.1 * ce.mse.value();
        assert_eq!(loss, want);
    }

    #[test]
    fn ray_loss_is_finite_at_initialization() {
        let params = small_params(7);
        let ray = Ray::new([0.0, 0.0, 2.0], [0.0, 0.1, -1.0], 0.5, 3.0).unwrap();
        let target = RayTarget::new(ray, [0.2, 0.7, 0.9]);
        let coarse = fixed_samples(&ray, 4, 20);
        let fine = fixed_samples(&ray, 8, 21);
        let weights = LossWeights {
            lambda_c: 4.0,
            lambda_d: 1e-3,
            lambda_c_hat: 1e-4,
            coarse_mult: 0.1,
        };
        let (loss, grad) = ray_loss_fixed_samples(
            &params, &target, &coarse, &fine, [0.0; 3], &weights, false,
        )
        .unwrap();
        assert!(loss.is_finite());
        assert!(grad.iter().all(|g| g.is_finite()));
        assert!(grad.iter().any(|g| *g != 0.0));
    }

    #[test]
    fn stop_gradient_changes_the_regen_path_only() {
        let params = small_params(3);
        let ray = Ray::new([0.0, 0.0, 2.0], [0.2, 0.0, -1.0], 0.5, 3.0).unwrap();
        let target = RayTarget::new(ray, [0.1, 0.2, 0.3]);
        let coarse = fixed_samples(&ray, 3, 30);
        let fine = fixed_samples(&ray, 4, 31);
        // only the remodeled-color term active, so the stop-grad switch
        // affects exactly the depth-through-regeneration path
        let weights = LossWeights {
            lambda_c: 0.0,
            lambda_d: 0.0,
            lambda_c_hat: 1.0,
            coarse_mult: 0.0,
        };
        let (loss_a, grad_a) = ray_loss_fixed_samples(
            &params, &target, &coarse, &fine, [0.0; 3], &weights, false,
        )
        .unwrap();
        let (loss_b, grad_b) = ray_loss_fixed_samples(
            &params, &target, &coarse, &fine, [0.0; 3], &weights, true,
        )
        .unwrap();
        assert_eq!(loss_a, loss_b, "values must agree, only gradients differ");
        assert!(grad_a.iter().zip(&grad_b).any(|(a, b)| a != b));
    }

    #[test]
    fn render_view_is_deterministic() {
        let params = small_params(5);
        let camera = Camera::look_at(
            [0.0, 2.5, 0.8],
            [0.0; 3],
            [0.0, 0.0, 1.0],
            12,
            10,
            8.0,
        )
        .unwrap();
        let a = render_view(&params, &camera, 1.0, 4.0, 4, 4, Background::White, 9).unwrap();
        let b = render_view(&params, &camera, 1.0, 4.0, 4, 4, Background::White, 9).unwrap();
        assert_eq!(a.rgb, b.rgb);
        assert_eq!(a.depth, b.depth);
    }
}
