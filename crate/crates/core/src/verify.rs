//! Verification suites: closed-form rendering oracles, brute-force mixture
//! sums in double-double precision, finite-difference gradient checks,
//! schedule conformance, and determinism. `raymix verify` runs these and
//! exits nonzero on any failure.

use crate::data::Background;
use crate::field::{FieldConfig, FieldParams};
use crate::geometry::{hierarchical_sample, stratified_sample, Ray};
use crate::imgio::ImageF;
use crate::loss::{lambda_schedule, DatasetProfile, LossWeights};
use crate::metrics::{psnr, ssim, PsnrResult, SSIM_WINDOW};
use crate::mixture::{
    color_mixture_log_pdf, laplace_log_pdf, mixing_coefficients, regenerate_weights,
    scalar_mixture_log_pdf,
};
use crate::pipeline::{combine_ray_loss, eval_level, ray_loss_fixed_samples, RayTarget};
use crate::render::{composite_color, compute_blend_weights};
use crate::synthetic::{trace_ray_gt, Primitive, SyntheticScene};
use crate::tape::Tape;
use crate::trainer::{clip_gradients, lr_at, TrainConfig};
use crate::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

/// Outcome of one verification suite.
#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub name: &'static str,
    pub passed: bool,
    pub details: String,
    pub seconds: f64,
}

fn run_suite(name: &'static str, f: impl FnOnce() -> Result<String>) -> SuiteReport {
    let start = Instant::now();
    let (passed, details) = match f() {
        Ok(d) => (true, d),
        Err(e) => (false, e.to_string()),
    };
    SuiteReport {
        name,
        passed,
        details,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn fail(msg: String) -> Error {
    Error::Verification(msg)
}

// ---------------------------------------------------------------------------
// double-double arithmetic for the brute-force mixture oracle

#[derive(Clone, Copy)]
struct Dd {
    hi: f64,
    lo: f64,
}

impl Dd {
    const ZERO: Dd = Dd { hi: 0.0, lo: 0.0 };

    fn two_sum(a: f64, b: f64) -> Dd {
        let s = a + b;
        let bb = s - a;
        let err = (a - (s - bb)) + (b - bb);
        Dd { hi: s, lo: err }
    }

    fn two_prod(a: f64, b: f64) -> Dd {
        let p = a * b;
        let err = a.mul_add(b, -p);
        Dd { hi: p, lo: err }
    }

    fn add(self, other: Dd) -> Dd {
        let s = Dd::two_sum(self.hi, other.hi);
        let lo = s.lo + self.lo + other.lo;
        let t = Dd::two_sum(s.hi, lo);
        Dd { hi: t.hi, lo: t.lo }
    }

    fn ln(self) -> f64 {
        self.hi.ln() + (self.lo / self.hi).ln_1p()
    }
}

/// `ln sum_j pi_j exp(log_j)` summed directly in double-double precision;
/// independent of the max-subtraction path it checks.
fn brute_force_log_mixture(pi: &[f64], logs: &[f64]) -> f64 {
    let mut acc = Dd::ZERO;
    for (p, l) in pi.iter().zip(logs) {
        acc = acc.add(Dd::two_prod(*p, l.exp()));
    }
    acc.ln()
}

// ---------------------------------------------------------------------------
// mixture math

/// Normalization on random and degenerate instances, per-channel pdf
/// quadrature, and log-sum-exp against the double-double brute force.
pub fn suite_mixture_math() -> SuiteReport {
    run_suite("mixture-math", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x4d495854);
        // normalization over 10k instances, every tenth degenerate
        for i in 0..10_000 {
            let m = rng.gen_range(1..=16);
            let w: Vec<f64> = if i % 10 == 0 {
                vec![0.0; m]
            } else {
                (0..m).map(|_| rng.gen_range(0.0..1.0)).collect()
            };
            let pi = mixing_coefficients(&w)
                .map_err(|e| fail(format!("instance {i}: {e}")))?;
            let sum: f64 = pi.pi.iter().sum();
            if (sum - 1.0).abs() > 1e-6 {
                return Err(fail(format!("instance {i}: sum(pi) = {sum}")));
            }
            let mut edges = vec![rng.gen_range(0.0..1.0)];
            for _ in 0..m {
                edges.push(edges.last().unwrap() + rng.gen_range(0.01..0.5));
            }
            let mu_d: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0)).collect();
            let regen = regenerate_weights(&w, &mu_d, &edges)
                .map_err(|e| fail(format!("instance {i}: {e}")))?;
            let sum_hat: f64 = regen.pi_hat.iter().sum();
            if (sum_hat - 1.0).abs() > 1e-6 {
                return Err(fail(format!("instance {i}: sum(pi_hat) = {sum_hat}")));
            }
        }

        // per-channel mixture pdf quadrature
        for i in 0..20 {
            let m = rng.gen_range(1..=8);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..1.0)).collect();
            let pi = mixing_coefficients(&w).unwrap();
            let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let beta: Vec<f64> = (0..m).map(|_| rng.gen_range(0.02..0.5)).collect();
            let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
            let mu_max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let b_max = beta.iter().cloned().fold(0.0f64, f64::max);
            let (lo, hi) = (mu_min - 20.0 * b_max, mu_max + 20.0 * b_max);
            let n = 40_000;
            let h = (hi - lo) / n as f64;
            let f = |x: f64| {
                scalar_mixture_log_pdf(&pi.pi, &mu, &beta, x)
                    .unwrap()
                    .exp()
            };
            let mut integral = 0.5 * (f(lo) + f(hi));
            for k in 1..n {
                integral += f(lo + k as f64 * h);
            }
            integral *= h;
            if (integral - 1.0).abs() > 1e-3 {
                return Err(fail(format!("quadrature {i}: integral = {integral}")));
            }
        }

        // log-sum-exp against the double-double brute force
        let mut worst: f64 = 0.0;
        for i in 0..2000 {
            let m = rng.gen_range(1..=16);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pi = mixing_coefficients(&w).unwrap();
            let mu: Vec<[f64; 3]> = (0..m).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
            let beta: Vec<[f64; 3]> = (0..m)
                .map(|_| {
                    [
                        rng.gen_range(0.05..1.0),
                        rng.gen_range(0.05..1.0),
                        rng.gen_range(0.05..1.0),
                    ]
                })
                .collect();
            let c = [rng.gen(), rng.gen(), rng.gen()];
            let got: f64 = color_mixture_log_pdf(&pi, &mu, &beta, c).unwrap();
            let logs: Vec<f64> = (0..m)
                .map(|j| laplace_log_pdf(c, &mu[j], &beta[j]).unwrap())
                .collect();
            let want = brute_force_log_mixture(&pi.pi, &logs);
            let diff = (got - want).abs();
            worst = worst.max(diff);
            if diff > 1e-10 {
                return Err(fail(format!("instance {i}: lse {got} vs brute {want}")));
            }
        }

        // stability at the scale floor
        let pi = mixing_coefficients(&[0.3, 0.7]).unwrap();
        let lp = color_mixture_log_pdf(
            &pi,
            &[[0.0; 3]; 2],
            &[[1e-3; 3]; 2],
            [1.0, 1.0, 1.0],
        )
        .unwrap();
        if !lp.is_finite() {
            return Err(fail(format!("log pdf not finite at the scale floor: {lp}")));
        }

        Ok(format!(
            "10000 normalizations, 20 quadratures, 2000 brute-force sums (worst diff {worst:.2e})"
        ))
    })
}

// ---------------------------------------------------------------------------
// regeneration identity

/// With the true direction norm substituted for every depth estimate,
/// regenerated weights must reproduce the rendering weights.
pub fn suite_regeneration_identity() -> SuiteReport {
    run_suite("regeneration-identity", || {
        let mut rng = ChaCha8Rng::seed_from_u64(0x52454745);
        let mut worst: f64 = 0.0;
        for i in 0..1000 {
            let m = rng.gen_range(1..=16);
            let sigma: Vec<f64> = (0..m)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        0.0
                    } else {
                        rng.gen_range(0.0..5.0)
                    }
                })
                .collect();
            let mut edges = vec![rng.gen_range(0.0..2.0)];
            for _ in 0..m {
                edges.push(edges.last().unwrap() + rng.gen_range(0.01..0.7));
            }
            let dir_norm = rng.gen_range(0.1..3.0);
            let delta: Vec<f64> = edges.windows(2).map(|w| dir_norm * (w[1] - w[0])).collect();
            let bw = compute_blend_weights::<f64>(&sigma, &delta)?;
            let regen = regenerate_weights(&sigma, &vec![dir_norm; m], &edges)?;
            for (w, w_hat) in bw.w.iter().zip(&regen.w_hat) {
                let diff = (w - w_hat).abs();
                worst = worst.max(diff);
                if diff > 1e-12 {
                    return Err(fail(format!("ray {i}: w {w} vs w_hat {w_hat}")));
                }
            }
        }
        Ok(format!("1000 rays, worst |w - w_hat| = {worst:.2e}"))
    })
}

// ---------------------------------------------------------------------------
// renderer oracle

fn random_scene(rng: &mut ChaCha8Rng) -> SyntheticScene {
    let n = rng.gen_range(1..=4);
    let mut primitives = Vec::with_capacity(n);
    for _ in 0..n {
        let center = [
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
            rng.gen_range(-0.6..0.6),
        ];
        let density = rng.gen_range(0.2..0.6);
        let color = [rng.gen(), rng.gen(), rng.gen()];
        if rng.gen_bool(0.5) {
            primitives.push(Primitive::Sphere {
                center,
                radius: rng.gen_range(0.2..0.6),
                density,
                color,
            });
        } else {
            primitives.push(Primitive::Box {
                center,
                extent: [
                    rng.gen_range(0.15..0.5),
                    rng.gen_range(0.15..0.5),
                    rng.gen_range(0.15..0.5),
                ],
                density,
                color,
            });
        }
    }
    let background = if rng.gen_bool(0.5) {
        Background::White
    } else {
        Background::Black
    };
    SyntheticScene {
        primitives,
        background,
    }
}

fn random_ray(rng: &mut ChaCha8Rng) -> Ray {
    // origin on a sphere of radius 3.2, aimed near the scene center
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let z = rng.gen_range(-0.8..0.8f64);
    let r = (1.0 - z * z).sqrt();
    let origin = [3.2 * r * theta.cos(), 3.2 * r * theta.sin(), 3.2 * z];
    let aim = [
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
        rng.gen_range(-0.4..0.4),
    ];
    let dir = [
        (aim[0] - origin[0]) / 3.2,
        (aim[1] - origin[1]) / 3.2,
        (aim[2] - origin[2]) / 3.2,
    ];
    Ray::new(origin, dir, 2.0, 4.4).unwrap()
}

/// Numeric render of one ray against the analytic scene at the midpoint of
/// each stratified bin.
fn numeric_render(scene: &SyntheticScene, ray: &Ray, m: usize) -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(0); // jitter off, rng unused
    let samples = stratified_sample(ray, m, false, &mut rng).unwrap();
    let mut sigma = Vec::with_capacity(m);
    let mut colors = Vec::with_capacity(m);
    for &t in &samples.t_mid {
        let (s, c) = density_color_at(scene, ray.point_at(t));
        sigma.push(s);
        colors.push(c);
    }
    let bw = compute_blend_weights::<f64>(&sigma, &samples.delta).unwrap();
    composite_color(&bw, &colors, scene.background.color()).unwrap()
}

/// Pointwise density and emission color of an analytic scene.
pub fn density_color_at(scene: &SyntheticScene, p: [f64; 3]) -> (f64, [f64; 3]) {
    let mut sigma = 0.0;
    let mut emit = [0.0f64; 3];
    for prim in &scene.primitives {
        let inside = match prim {
            Primitive::Sphere { center, radius, .. } => {
                let d = [p[0] - center[0], p[1] - center[1], p[2] - center[2]];
                d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= radius * radius
            }
            Primitive::Box { center, extent, .. } => (0..3)
                .all(|a| (p[a] - center[a]).abs() <= extent[a]),
        };
        if inside {
            sigma += prim.density();
            let c = prim.color();
            for ch in 0..3 {
                emit[ch] += prim.density() * c[ch];
            }
        }
    }
    if sigma > 0.0 {
        (sigma, [emit[0] / sigma, emit[1] / sigma, emit[2] / sigma])
    } else {
        (0.0, [0.0; 3])
    }
}

/// Closed-form slab integrals and stratified-sampling convergence against
/// the analytic renderer.
pub fn suite_renderer_oracle() -> SuiteReport {
    run_suite("renderer-oracle", || {
        // homogeneous medium, arbitrary sample counts
        let mut rng = ChaCha8Rng::seed_from_u64(0x4f52434c);
        for i in 0..50 {
            let sigma0 = rng.gen_range(0.05..4.0);
            let c0 = [rng.gen(), rng.gen(), rng.gen()];
            let dn = rng.gen_range(0.2..3.0);
            let (tn, tf) = (rng.gen_range(0.0..1.0), rng.gen_range(1.5..4.0));
            let m = [1, 3, 17, 256][i % 4];
            let delta: Vec<f64> = (0..m).map(|_| dn * (tf - tn) / m as f64).collect();
            let bw = compute_blend_weights::<f64>(&vec![sigma0; m], &delta)?;
            let got = composite_color(&bw, &vec![c0; m], [0.0; 3])?;
            let alpha = 1.0 - (-sigma0 * dn * (tf - tn)).exp();
            for ch in 0..3 {
                if (got[ch] - c0[ch] * alpha).abs() > 1e-12 {
                    return Err(fail(format!(
                        "homogeneous case {i} channel {ch}: {} vs {}",
                        got[ch],
                        c0[ch] * alpha
                    )));
                }
            }
        }

        // two slabs with aligned edges
        for i in 0..50 {
            let (s1, s2) = (rng.gen_range(0.1..3.0), rng.gen_range(0.1..3.0));
            let (c1, c2) = ([rng.gen(), rng.gen(), rng.gen()], [rng.gen(), rng.gen(), rng.gen()]);
            let (l1, l2) = (rng.gen_range(0.1..1.5), rng.gen_range(0.1..1.5));
            let bg = [rng.gen(), rng.gen(), rng.gen()];
            let (n1, n2) = (1 + i % 5, 1 + (i / 5) % 5);
            let mut sigma = vec![s1; n1];
            sigma.extend(vec![s2; n2]);
            let mut delta = vec![l1 / n1 as f64; n1];
            delta.extend(vec![l2 / n2 as f64; n2]);
            let mut colors = vec![c1; n1];
            colors.extend(vec![c2; n2]);
            let bw = compute_blend_weights::<f64>(&sigma, &delta)?;
            let got = composite_color(&bw, &colors, bg)?;
            let (a1, a2) = (1.0 - (-s1 * l1).exp(), 1.0 - (-s2 * l2).exp());
            let t1 = 1.0 - a1;
            for ch in 0..3 {
                let want = c1[ch] * a1 + t1 * (c2[ch] * a2 + (1.0 - a2) * bg[ch]);
                if (got[ch] - want).abs() > 1e-12 {
                    return Err(fail(format!(
                        "two-slab case {i} channel {ch}: {} vs {want}",
                        got[ch]
                    )));
                }
            }
        }

        // stratified convergence on random scenes
        let mut details = String::new();
        for scene_idx in 0..10 {
            let mut srng = ChaCha8Rng::seed_from_u64(1000 + scene_idx);
            let scene = random_scene(&mut srng);
            let rays: Vec<Ray> = (0..32).map(|_| random_ray(&mut srng)).collect();
            let mut err = [0.0f64; 3];
            let mut errors = Vec::new();
            for &m in &[16usize, 64, 256] {
                err = [0.0; 3];
                for ray in &rays {
                    let (want, _, _) = trace_ray_gt(&scene, ray);
                    let got = numeric_render(&scene, ray, m);
                    for ch in 0..3 {
                        err[ch] = err[ch].max((got[ch] - want[ch]).abs());
                    }
                }
                errors.push(err.iter().cloned().fold(0.0f64, f64::max));
            }
            if !(errors[2] < errors[1] && errors[1] < errors[0]) {
                return Err(fail(format!(
                    "scene {scene_idx}: errors not monotone: {errors:?}"
                )));
            }
            for ch in 0..3 {
                if err[ch] >= 5e-3 {
                    return Err(fail(format!(
                        "scene {scene_idx} channel {ch}: error {} at 256 samples",
                        err[ch]
                    )));
                }
            }
            if scene_idx == 9 {
                details = format!(
                    "50 homogeneous + 50 two-slab cases at 1e-12; scene 9 errors {:?}",
                    errors
                );
            }
        }
        Ok(details)
    })
}

// ---------------------------------------------------------------------------
// gradient check

/// Result of one finite-difference instance.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub n_params: usize,
    pub worst_rel: f64,
    pub failures: usize,
}

const FD_STEP: f64 = 1e-5;

fn grad_check_field_config() -> FieldConfig {
    FieldConfig {
        l_pos: 2,
        l_dir: 1,
        trunk_depth: 2,
        trunk_width: 12,
        bottleneck_width: 6,
        view_width: 8,
        ..FieldConfig::default()
    }
}

/// Reverse-mode gradient of the full four-term objective on a 2-sample ray
/// versus central finite differences. Instances whose activations sit
/// within the step size of a relu/abs kink are redrawn: central differences
/// are invalid there.
pub fn gradient_check_instance(seed: u64) -> Result<GradCheck> {
    let cfg = grad_check_field_config();
    let weights = LossWeights {
        lambda_c: 4.0,
        lambda_d: 0.5,
        lambda_c_hat: 0.25,
        coarse_mult: 0.1,
    };
    for attempt in 0..16 {
        let mut rng = ChaCha8Rng::seed_from_u64(crate::trainer::mix_seed(seed, attempt, 0x47524144));
        let params = FieldParams::init(&cfg, rng.gen())?;
        let dir = [
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            -1.0 - rng.gen_range(0.0..0.4),
        ];
        let ray = Ray::new([0.0, 0.2, 2.5], dir, 0.8, 3.2)?;
        let target = RayTarget::new(ray, [rng.gen(), rng.gen(), rng.gen()]);
        let coarse = stratified_sample(&ray, 2, true, &mut rng)?;
        // fine positions frozen from the unperturbed coarse weights
        let fine = {
            let tape = Tape::new(params.len());
            let eval = eval_level(&tape, &params, &target, &coarse, [0.0; 3], false)?;
            hierarchical_sample(&coarse, &eval.w_values, 2, ray.dir_norm(), &mut rng)?
        };

        // kink margin at the evaluation point
        let tape = Tape::new(params.len());
        let ce = eval_level(&tape, &params, &target, &coarse, [0.0; 3], false)?;
        let fe = eval_level(&tape, &params, &target, &fine, [0.0; 3], false)?;
        let loss = combine_ray_loss(&fe, &ce, &weights);
        if tape.kink_margin() < 2e-4 {
            continue;
        }
        let grad = tape.backward(loss, &params.values);

        let mut worst_rel: f64 = 0.0;
        let mut failures = 0;
        let mut probe = params.clone();
        for i in 0..params.len() {
            let orig = probe.values[i];
            probe.values[i] = orig + FD_STEP;
            let (hi, _) = ray_loss_fixed_samples(
                &probe, &target, &coarse, &fine, [0.0; 3], &weights, false,
            )?;
            probe.values[i] = orig - FD_STEP;
            let (lo, _) = ray_loss_fixed_samples(
                &probe, &target, &coarse, &fine, [0.0; 3], &weights, false,
            )?;
            probe.values[i] = orig;
            let fd = (hi - lo) / (2.0 * FD_STEP);
            let scale = grad[i].abs().max(fd.abs());
            if scale < 1e-3 {
                if (grad[i] - fd).abs() > 1e-6 {
                    failures += 1;
                }
            } else {
                let rel = (grad[i] - fd).abs() / scale;
                worst_rel = worst_rel.max(rel);
                if rel > 1e-4 {
                    failures += 1;
                }
            }
        }
        return Ok(GradCheck {
            n_params: params.len(),
            worst_rel,
            failures,
        });
    }
    Err(Error::Verification(format!(
        "seed {seed}: no kink-free instance found in 16 attempts"
    )))
}

/// Finite-difference check over 20 seeds.
pub fn suite_gradient_check() -> SuiteReport {
    run_suite("gradient-check", || {
        let mut worst: f64 = 0.0;
        let mut n_params = 0;
        for seed in 0..20 {
            let check = gradient_check_instance(seed)?;
            n_params = check.n_params;
            worst = worst.max(check.worst_rel);
            if check.failures > 0 {
                return Err(fail(format!(
                    "seed {seed}: {} parameters disagree with finite differences (worst rel {:.2e})",
                    check.failures, check.worst_rel
                )));
            }
        }
        Ok(format!(
            "20 seeds x {n_params} parameters, worst relative error {worst:.2e}"
        ))
    })
}

// ---------------------------------------------------------------------------
// schedules and clipping

pub fn suite_schedule() -> SuiteReport {
    run_suite("schedule", || {
        let w0 = lambda_schedule(0, DatasetProfile::Desk);
        if w0.lambda_c != 4.0 {
            return Err(fail(format!("lambda_c(0) = {}", w0.lambda_c)));
        }
        for step in [512, 513, 10_000] {
            let w = lambda_schedule(step, DatasetProfile::Desk);
            if w.lambda_c != 1e-3 {
                return Err(fail(format!("lambda_c({step}) = {}", w.lambda_c)));
            }
        }

        let cfg = TrainConfig::default();
        let total = 20_000;
        let lr0 = lr_at(0, total, &cfg);
        if (lr0 - 2e-5).abs() > 1e-12 * 2e-5 {
            return Err(fail(format!("lr(0) = {lr0}, expected 2e-5")));
        }
        let lr_end = lr_at(total, total, &cfg);
        if (lr_end - 2e-5).abs() > 1e-12 * 2e-5 {
            return Err(fail(format!("lr(final) = {lr_end}, expected 2e-5")));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0x434c4950);
        for i in 0..1000 {
            let n = rng.gen_range(1..64);
            let mut g: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
            clip_gradients(&mut g, 0.1, 0.1)?;
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.1 + 1e-12 {
                return Err(fail(format!("case {i}: clipped norm {norm}")));
            }
            if g.iter().any(|x| x.abs() > 0.1 + 1e-15) {
                return Err(fail(format!("case {i}: clipped component above 0.1")));
            }
        }
        Ok("lambda knee, lr endpoints, 1000 clip cases".into())
    })
}

// ---------------------------------------------------------------------------
// metrics

/// Direct per-window SSIM straight from the definition, independent of the
/// separable-convolution implementation.
pub fn ssim_reference(img: &ImageF, gt: &ImageF) -> f64 {
    let (w, h) = (img.width as usize, img.height as usize);
    let gray = |im: &ImageF| -> Vec<f64> {
        im.pixels.iter().map(|p| (p[0] + p[1] + p[2]) / 3.0).collect()
    };
    let x = gray(img);
    let y = gray(gt);
    let mut kernel = [0.0f64; SSIM_WINDOW];
    let mid = (SSIM_WINDOW / 2) as f64;
    let mut ksum = 0.0;
    for (i, v) in kernel.iter_mut().enumerate() {
        let d = i as f64 - mid;
        *v = (-d * d / (2.0 * 1.5 * 1.5)).exp();
        ksum += *v;
    }
    for v in &mut kernel {
        *v /= ksum;
    }
    let (c1, c2) = (0.01f64 * 0.01, 0.03f64 * 0.03);
    let mut total = 0.0;
    let mut count = 0usize;
    for wy in 0..=(h - SSIM_WINDOW) {
        for wx in 0..=(w - SSIM_WINDOW) {
            let (mut mx, mut my) = (0.0, 0.0);
            let (mut exx, mut eyy, mut exy) = (0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let wgt = kernel[dy] * kernel[dx];
                    let xv = x[(wy + dy) * w + wx + dx];
                    let yv = y[(wy + dy) * w + wx + dx];
                    mx += wgt * xv;
                    my += wgt * yv;
                    exx += wgt * xv * xv;
                    eyy += wgt * yv * yv;
                    exy += wgt * xv * yv;
                }
            }
            let (vx, vy, cxy) = (exx - mx * mx, eyy - my * my, exy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

pub fn suite_metrics() -> SuiteReport {
    run_suite("metrics", || {
        // PSNR unit cases
        let mut a = ImageF::new(12, 12);
        let b = ImageF::new(12, 12);
        for p in &mut a.pixels {
            *p = [0.1; 3];
        }
        match psnr(&a, &b)? {
            PsnrResult::Db(db) if (db - 20.0).abs() < 1e-12 => {}
            other => return Err(fail(format!("psnr(0.01 mse) = {other:?}"))),
        }
        if psnr(&b, &b)? != PsnrResult::Identical {
            return Err(fail("identical images not flagged".into()));
        }
        let mut white = ImageF::new(12, 12);
        for p in &mut white.pixels {
            *p = [1.0; 3];
        }
        match psnr(&b, &white)? {
            PsnrResult::Db(db) if db.abs() < 1e-12 => {}
            other => return Err(fail(format!("psnr(black, white) = {other:?}"))),
        }

        // SSIM against the direct implementation
        let mut worst: f64 = 0.0;
        for phase in 0..5 {
            let mut x = ImageF::new(20, 16);
            let mut y = ImageF::new(20, 16);
            for py in 0..16u32 {
                for px in 0..20u32 {
                    let t = (px as f64 * 0.37 + py as f64 * 0.61 + phase as f64).sin() * 0.5 + 0.5;
                    let s = ((px + py + phase) % 5) as f64 / 4.0;
                    x.set_pixel(px, py, [t, s, t * s]);
                    y.set_pixel(px, py, [s, t, (1.0 - t) * s]);
                }
            }
            let fast = ssim(&x, &y)?;
            let direct = ssim_reference(&x, &y);
            worst = worst.max((fast - direct).abs());
            if (fast - direct).abs() > 1e-6 {
                return Err(fail(format!("ssim {fast} vs direct {direct}")));
            }
        }
        let one = ssim(&a, &a)?;
        if (one - 1.0).abs() > 1e-12 {
            return Err(fail(format!("ssim(a, a) = {one}")));
        }
        Ok(format!("psnr cases ok; ssim vs direct worst diff {worst:.2e}"))
    })
}

// ---------------------------------------------------------------------------
// determinism

pub fn suite_determinism() -> SuiteReport {
    run_suite("determinism", || {
        use crate::synthetic::{render_synthetic_gt, RingSpec, SyntheticSceneDesc};
        let desc = SyntheticSceneDesc {
            name: "determinism".into(),
            background: Background::White,
            image_size: [8, 8],
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
                density: 6.0,
                color: [0.8, 0.3, 0.2],
            }],
        };
        let cameras = desc.cameras()?;
        let scene3d = desc.scene();
        let mut images = Vec::new();
        for cam in &cameras {
            images.push(render_synthetic_gt(&scene3d, cam, desc.near, desc.far)?.rgb);
        }
        let scene = crate::data::Scene {
            cameras,
            images,
            near: desc.near,
            far: desc.far,
            background: desc.background,
        };
        let mut cfg = crate::trainer::Config::default();
        cfg.field.l_pos = 3;
        cfg.field.l_dir = 1;
        cfg.field.trunk_depth = 2;
        cfg.field.trunk_width = 12;
        cfg.field.bottleneck_width = 6;
        cfg.field.view_width = 8;
        cfg.train.batch_size = 12;
        cfg.train.max_steps = Some(25);
        cfg.train.n_coarse = 5;
        cfg.train.n_fine = 5;
        cfg.train.checkpoint_every = 0;
        cfg.train.seed = 11;

        let d1 = tempfile_dir()?;
        let d2 = tempfile_dir()?;
        let o1 = crate::trainer::train(&scene, &[0, 1], &cfg, d1.path())?;
        let o2 = crate::trainer::train(&scene, &[0, 1], &cfg, d2.path())?;
        let b1 = std::fs::read(&o1.checkpoint_path).map_err(|e| crate::io_err(&o1.checkpoint_path, e))?;
        let b2 = std::fs::read(&o2.checkpoint_path).map_err(|e| crate::io_err(&o2.checkpoint_path, e))?;
        if b1 != b2 {
            return Err(fail("checkpoints differ between identical runs".into()));
        }

        // save -> load -> save byte identity
        let loaded = crate::trainer::load_checkpoint(&o1.checkpoint_path)?;
        let resaved = d1.path().join("resaved.rmx");
        crate::trainer::save_checkpoint(&loaded.params, &loaded.opt, &loaded.header, &resaved)?;
        let b3 = std::fs::read(&resaved).map_err(|e| crate::io_err(&resaved, e))?;
        if b1 != b3 {
            return Err(fail("checkpoint round trip is not byte identical".into()));
        }
        Ok(format!("two {}-step runs byte-identical; round trip ok", o1.total_steps))
    })
}

struct TempDir {
    path: std::path::PathBuf,
}

impl TempDir {
    fn path(&self) -> &std::path::Path {
        &self.path
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.path);
    }
}

fn tempfile_dir() -> Result<TempDir> {
    let base = std::env::temp_dir();
    for i in 0..10_000 {
        let path = base.join(format!(
            "raymix-verify-{}-{}-{i}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.subsec_nanos())
                .unwrap_or(0)
        ));
        if std::fs::create_dir(&path).is_ok() {
            return Ok(TempDir { path });
        }
    }
    Err(Error::Data("cannot create temporary directory".into()))
}

/// Names accepted by [`run_suites`].
pub const SUITE_NAMES: [&str; 6] = [
    "mixture-math",
    "regeneration-identity",
    "renderer-oracle",
    "gradient-check",
    "schedule",
    "metrics",
];

/// Run the named suites ("all" for every suite plus determinism).
pub fn run_suites(which: &str) -> Result<Vec<SuiteReport>> {
    let mut reports = Vec::new();
    let all = which == "all";
    let want = |name: &str| all || which == name;
    if want("mixture-math") {
        reports.push(suite_mixture_math());
    }
    if want("regeneration-identity") {
        reports.push(suite_regeneration_identity());
    }
    if want("renderer-oracle") {
        reports.push(suite_renderer_oracle());
    }
    if want("gradient-check") {
        reports.push(suite_gradient_check());
    }
    if want("schedule") {
        reports.push(suite_schedule());
    }
    if want("metrics") {
        reports.push(suite_metrics());
    }
    if all || which == "determinism" {
        reports.push(suite_determinism());
    }
    if reports.is_empty() {
        return Err(Error::Config(format!(
            "unknown suite '{which}'; expected one of {:?} or all/determinism",
            SUITE_NAMES
        )));
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_double_sum_is_exact_for_hard_cases() {
        // 1 + 1e-18 - 1 survives in double-double
        let acc = Dd::two_sum(1.0, 1e-18);
        let acc = acc.add(Dd { hi: -1.0, lo: 0.0 });
        assert_eq!(acc.hi, 1e-18);
    }

    #[test]
    fn gradient_check_single_seed() {
        let check = gradient_check_instance(0).unwrap();
        assert!(check.n_params > 0 && check.n_params <= 2000);
        assert_eq!(check.failures, 0, "worst rel {:.3e}", check.worst_rel);
    }

    #[test]
    fn schedule_suite_passes() {
        let report = suite_schedule();
        assert!(report.passed, "{}", report.details);
    }

    #[test]
    fn metrics_suite_passes() {
        let report = suite_metrics();
        assert!(report.passed, "{}", report.details);
    }
}
