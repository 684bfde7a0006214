//! Laplace mixtures over ray samples.
//!
//! Each ray sample contributes one mixture component: its color location,
//! its per-channel Laplace scales, and a mixing coefficient derived from the
//! normalized blending weights. The same machinery models the ray's depth
//! scale, and the weights can be regenerated from the estimated depths to
//! remodel the color mixture. Everything is evaluated in log space with
//! max-subtraction so products of per-channel densities cannot underflow.

use crate::render::weights_from_optical_depth;
use crate::tape::Real;
use crate::{Error, Result};

/// Normalized mixing coefficients, summing to one.
#[derive(Debug, Clone)]
pub struct MixingCoefficients<R> {
    pub pi: Vec<R>,
}

/// Weights and coefficients regenerated from estimated per-sample depths.
#[derive(Debug, Clone)]
pub struct RegenWeights<R> {
    /// Intervals with the depth estimate in place of the direction norm.
    pub delta_hat: Vec<R>,
    pub w_hat: Vec<R>,
    pub pi_hat: Vec<R>,
}

/// Fallback threshold below which a weight sum counts as degenerate and the
/// coefficients become uniform.
pub const SUM_EPSILON: f64 = 1e-12;

/// Log density of a 3-channel Laplace factor at `c`:
/// per channel, `-ln(2 beta) - |c - mu| / beta`, summed over channels.
pub fn laplace_log_pdf<R: Real>(c: [f64; 3], mu: &[R; 3], beta: &[R; 3]) -> Result<R> {
    let mut total = R::lit(0.0);
    for ch in 0..3 {
        if !(beta[ch].value() > 0.0) {
            return Err(Error::Domain(format!(
                "Laplace scale must be positive, channel {ch} has {}",
                beta[ch].value()
            )));
        }
        let term = -(R::lit(2.0) * beta[ch]).ln() - (R::lit(c[ch]) - mu[ch]).abs() / beta[ch];
        total = total + term;
    }
    Ok(total)
}

/// Scalar Laplace log density `-ln(2 beta) - |x - mu| / beta`.
pub fn laplace_log_pdf_scalar<R: Real>(x: f64, mu: R, beta: R) -> Result<R> {
    if !(beta.value() > 0.0) {
        return Err(Error::Domain(format!(
            "Laplace scale must be positive, got {}",
            beta.value()
        )));
    }
    Ok(-(R::lit(2.0) * beta).ln() - (R::lit(x) - mu).abs() / beta)
}

/// Normalize blending weights into mixing coefficients. A degenerate sum
/// (all weights ~0) falls back to the uniform distribution so downstream
/// likelihoods stay finite.
pub fn mixing_coefficients<R: Real>(w: &[R]) -> Result<MixingCoefficients<R>> {
    if w.is_empty() {
        return Err(Error::Domain("cannot normalize zero weights".into()));
    }
    let mut sum = R::lit(0.0);
    for x in w {
        if !(x.value() >= 0.0) {
            return Err(Error::Domain(format!(
                "weights must be non-negative, got {}",
                x.value()
            )));
        }
        sum = sum + *x;
    }
    let pi = if sum.value() < SUM_EPSILON {
        vec![R::lit(1.0 / w.len() as f64); w.len()]
    } else {
        w.iter().map(|x| *x / sum).collect()
    };
    Ok(MixingCoefficients { pi })
}

/// `ln sum_i exp(x_i)` with max-subtraction; the max is treated as a
/// constant, which leaves the derivative exact.
fn log_sum_exp<R: Real>(xs: &[R]) -> R {
    debug_assert!(!xs.is_empty());
    let m = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let mlit = R::lit(m);
    let mut s = R::lit(0.0);
    for &x in xs {
        s = s + (x - mlit).exp();
    }
    mlit + s.ln()
}

fn mixture_log_pdf_3ch<R: Real>(
    pi: &[R],
    mu_c: &[[R; 3]],
    beta: &[[R; 3]],
    c_gt: [f64; 3],
) -> Result<R> {
    if pi.len() != mu_c.len() || pi.len() != beta.len() {
        return Err(Error::Domain(format!(
            "mixture sizes disagree: {} coefficients, {} locations, {} scales",
            pi.len(),
            mu_c.len(),
            beta.len()
        )));
    }
    let mut terms = Vec::with_capacity(pi.len());
    for j in 0..pi.len() {
        // components with zero coefficient are skipped: ln(0) would poison
        // the backward pass with infinities
        if pi[j].value() == 0.0 {
            continue;
        }
        terms.push(pi[j].ln() + laplace_log_pdf(c_gt, &mu_c[j], &beta[j])?);
    }
    if terms.is_empty() {
        return Err(Error::Domain("all mixing coefficients are zero".into()));
    }
    Ok(log_sum_exp(&terms))
}

/// Log density of the per-ray color mixture at the observed color.
pub fn color_mixture_log_pdf<R: Real>(
    pi: &MixingCoefficients<R>,
    mu_c: &[[R; 3]],
    beta: &[[R; 3]],
    c_gt: [f64; 3],
) -> Result<R> {
    mixture_log_pdf_3ch(&pi.pi, mu_c, beta, c_gt)
}

/// Log density of a scalar Laplace mixture, used for the ray-depth model
/// and for quadrature checks.
pub fn scalar_mixture_log_pdf<R: Real>(pi: &[R], mu: &[R], beta: &[R], x: f64) -> Result<R> {
    if pi.len() != mu.len() || pi.len() != beta.len() {
        return Err(Error::Domain(format!(
            "mixture sizes disagree: {} coefficients, {} locations, {} scales",
            pi.len(),
            mu.len(),
            beta.len()
        )));
    }
    let mut terms = Vec::with_capacity(pi.len());
    for j in 0..pi.len() {
        if pi[j].value() == 0.0 {
            continue;
        }
        terms.push(pi[j].ln() + laplace_log_pdf_scalar(x, mu[j], beta[j])?);
    }
    if terms.is_empty() {
        return Err(Error::Domain("all mixing coefficients are zero".into()));
    }
    Ok(log_sum_exp(&terms))
}

/// Log density of the depth mixture at the ray's depth scale. The 3-channel
/// scales are reduced to a scalar per sample by their mean.
pub fn depth_mixture_log_pdf<R: Real>(
    pi: &MixingCoefficients<R>,
    mu_d: &[R],
    beta: &[[R; 3]],
    d_gt: f64,
) -> Result<R> {
    if !(d_gt > 0.0) {
        return Err(Error::Domain(format!(
            "depth target must be positive, got {d_gt}"
        )));
    }
    let third = R::lit(1.0 / 3.0);
    let beta_bar: Vec<R> = beta
        .iter()
        .map(|b| (b[0] + b[1] + b[2]) * third)
        .collect();
    scalar_mixture_log_pdf(&pi.pi, mu_d, &beta_bar, d_gt)
}

/// Regenerate blending weights with the estimated per-sample depth in place
/// of the ray direction norm: `delta_hat_j = mu_d_j (t_{j+1} - t_j)`.
pub fn regenerate_weights<R: Real>(
    sigma: &[R],
    mu_d: &[R],
    t_edges: &[f64],
) -> Result<RegenWeights<R>> {
    let m = sigma.len();
    if mu_d.len() != m || t_edges.len() != m + 1 {
        return Err(Error::Domain(format!(
            "regeneration sizes disagree: {m} densities, {} depths, {} edges",
            mu_d.len(),
            t_edges.len()
        )));
    }
    for s in sigma {
        if !(s.value() >= 0.0) {
            return Err(Error::Domain(format!("negative or NaN density {}", s.value())));
        }
    }
    for d in mu_d {
        if !(d.value() >= 0.0) {
            return Err(Error::Domain(format!(
                "negative or NaN depth estimate {}",
                d.value()
            )));
        }
    }
    if let Some(w) = t_edges.windows(2).find(|w| !(w[1] > w[0])) {
        return Err(Error::Domain(format!(
            "edges must be strictly increasing, got {} before {}",
            w[0], w[1]
        )));
    }
    let delta_hat: Vec<R> = mu_d
        .iter()
        .zip(t_edges.windows(2))
        .map(|(d, w)| *d * R::lit(w[1] - w[0]))
        .collect();
    let optical: Vec<R> = sigma
        .iter()
        .zip(&delta_hat)
        .map(|(s, d)| *s * *d)
        .collect();
    let (_, w_hat) = weights_from_optical_depth(&optical);
    let pi_hat = mixing_coefficients(&w_hat)?.pi;
    Ok(RegenWeights {
        delta_hat,
        w_hat,
        pi_hat,
    })
}

/// Color mixture remodeled with the regenerated coefficients, evaluated at
/// the same observed color.
pub fn regen_color_mixture_log_pdf<R: Real>(
    regen: &RegenWeights<R>,
    mu_c: &[[R; 3]],
    beta: &[[R; 3]],
    c_gt: [f64; 3],
) -> Result<R> {
    mixture_log_pdf_3ch(&regen.pi_hat, mu_c, beta, c_gt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn log_pdf_at_mode_with_half_scales_is_zero() {
        let mu = [0.3, 0.6, 0.9];
        let lp = laplace_log_pdf(mu, &mu, &[0.5; 3]).unwrap();
        assert!(lp.abs() < 1e-15);
    }

    #[test]
    fn log_pdf_one_scale_away() {
        let lp = laplace_log_pdf([0.5, 0.0, 0.0], &[0.0; 3], &[0.5; 3]).unwrap();
        assert!((lp + 1.0).abs() < 1e-15);
    }

    #[test]
    fn non_positive_scale_is_rejected() {
        assert!(laplace_log_pdf([0.0; 3], &[0.0; 3], &[0.5, 0.0, 0.5]).is_err());
        assert!(laplace_log_pdf([0.0; 3], &[0.0; 3], &[0.5, -0.1, 0.5]).is_err());
    }

    #[test]
    fn per_channel_pdf_integrates_to_one() {
        // trapezoidal quadrature of one channel of the Laplace factor
        let (mu, beta) = (0.4, 0.07);
        let (lo, hi) = (mu - 20.0 * beta, mu + 20.0 * beta);
        let n = 20_000;
        let h = (hi - lo) / n as f64;
        let f = |x: f64| {
            laplace_log_pdf([x, 0.0, 0.0], &[mu, 0.0, 0.0], &[beta, 1.0, 1.0])
                .unwrap()
                .exp()
                * 4.0 // strip the two unit-scale channels evaluated at their modes
        };
        let mut integral = 0.5 * (f(lo) + f(hi));
        for i in 1..n {
            integral += f(lo + i as f64 * h);
        }
        integral *= h;
        assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
    }

    #[test]
    fn symmetric_weights_split_evenly() {
        let mc = mixing_coefficients(&[0.2, 0.2]).unwrap();
        assert_eq!(mc.pi, vec![0.5, 0.5]);
    }

    #[test]
    fn coefficients_are_normalized_weights() {
        let mc = mixing_coefficients(&[0.3, 0.1]).unwrap();
        assert!((mc.pi[0] - 0.75).abs() < 1e-15);
        assert!((mc.pi[1] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights_become_uniform() {
        let mc = mixing_coefficients(&[0.0, 0.0]).unwrap();
        assert_eq!(mc.pi, vec![0.5, 0.5]);
    }

    #[test]
    fn negative_weight_is_rejected() {
        assert!(mixing_coefficients(&[0.1, -0.2]).is_err());
    }

    #[test]
    fn single_component_mixture_is_the_component() {
        let mu = [[0.2, 0.4, 0.6]];
        let beta = [[0.3, 0.2, 0.1]];
        let pi = mixing_coefficients(&[0.7]).unwrap();
        let mix = color_mixture_log_pdf(&pi, &mu, &beta, [0.5, 0.5, 0.5]).unwrap();
        let comp = laplace_log_pdf([0.5, 0.5, 0.5], &mu[0], &beta[0]).unwrap();
        assert!((mix - comp).abs() < 1e-12);
    }

    #[test]
    fn duplicate_components_collapse() {
        let mu = [[0.2, 0.4, 0.6]; 2];
        let beta = [[0.3, 0.2, 0.1]; 2];
        let pi = mixing_coefficients(&[0.5, 0.5]).unwrap();
        let mix = color_mixture_log_pdf(&pi, &mu, &beta, [0.1, 0.9, 0.3]).unwrap();
        let comp = laplace_log_pdf([0.1, 0.9, 0.3], &mu[0], &beta[0]).unwrap();
        assert!((mix - comp).abs() < 1e-12);
    }

    /// Compensated direct summation in linear space, independent of the
    /// log-sum-exp path.
    fn brute_force_log_mixture(pi: &[f64], logs: &[f64]) -> f64 {
        let mut sum = 0.0f64;
        let mut comp = 0.0f64;
        for (p, l) in pi.iter().zip(logs) {
            let term = p * l.exp();
            let t = sum + term;
            comp += if sum.abs() >= term.abs() {
                (sum - t) + term
            } else {
                (term - t) + sum
            };
            sum = t;
        }
        (sum + comp).ln()
    }

    #[test]
    fn random_mixtures_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let m = rng.gen_range(1..=16);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pi = mixing_coefficients(&w).unwrap();
            let mu: Vec<[f64; 3]> = (0..m)
                .map(|_| [rng.gen(), rng.gen(), rng.gen()])
                .collect();
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
            let got = color_mixture_log_pdf(&pi, &mu, &beta, c).unwrap();
            let logs: Vec<f64> = (0..m)
                .map(|j| laplace_log_pdf(c, &mu[j], &beta[j]).unwrap())
                .collect();
            let want = brute_force_log_mixture(&pi.pi, &logs);
            assert!(
                (got - want).abs() < 1e-10,
                "m = {m}: {got} vs {want}"
            );
        }
    }

    #[test]
    fn log_sum_exp_survives_extreme_scales() {
        // beta at the floor and the observation a full unit away
        let m = 4;
        let pi = mixing_coefficients(&vec![1.0; m]).unwrap();
        let mu = vec![[0.0; 3]; m];
        let beta = vec![[1e-3; 3]; m];
        let lp = color_mixture_log_pdf(&pi, &mu, &beta, [1.0, 1.0, 1.0]).unwrap();
        assert!(lp.is_finite(), "log pdf = {lp}");
        // identical components: the mixture equals one component
        let want = 3.0 * (-(2e-3f64).ln() - 1000.0);
        assert!((lp - want).abs() < 1e-6);
    }

    #[test]
    fn depth_mixture_mode_value() {
        let pi = mixing_coefficients(&[1.0]).unwrap();
        let lp = depth_mixture_log_pdf(&pi, &[2.0], &[[0.5; 3]], 2.0).unwrap();
        assert!(lp.abs() < 1e-12);
    }

    #[test]
    fn depth_mixture_one_scale_from_mode() {
        let beta = 0.37;
        let pi = mixing_coefficients(&[1.0]).unwrap();
        let lp = depth_mixture_log_pdf(&pi, &[1.0 + beta], &[[beta; 3]], 1.0).unwrap();
        assert!((lp - (-(2.0 * beta as f64).ln() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn depth_mixture_concentrates_on_dominant_component() {
        let pi = mixing_coefficients(&[1e7, 1.0]).unwrap();
        let lp = depth_mixture_log_pdf(&pi, &[1.5, 0.2], &[[0.1; 3]; 2], 1.5).unwrap();
        let single = laplace_log_pdf_scalar(1.5, 1.5, 0.1).unwrap();
        assert!((lp - single).abs() < 1e-6);
    }

    #[test]
    fn depth_scale_uses_channel_mean() {
        let pi = mixing_coefficients(&[1.0]).unwrap();
        let lp = depth_mixture_log_pdf(&pi, &[1.0], &[[0.1, 0.2, 0.6]], 1.0).unwrap();
        assert!((lp - (-(2.0 * 0.3f64).ln())).abs() < 1e-12);
    }

    #[test]
    fn regeneration_with_true_depth_reproduces_weights() {
        let sigma = [0.5, 1.5, 0.0, 2.0];
        let t_edges = [0.0, 0.5, 1.0, 1.5, 2.0];
        let dir_norm = 1.7;
        let delta: Vec<f64> = t_edges.windows(2).map(|w| dir_norm * (w[1] - w[0])).collect();
        let bw = crate::render::compute_blend_weights::<f64>(&sigma, &delta).unwrap();
        let mu_d = [dir_norm; 4];
        let regen = regenerate_weights(&sigma, &mu_d, &t_edges).unwrap();
        for (w, w_hat) in bw.w.iter().zip(&regen.w_hat) {
            assert!((w - w_hat).abs() <= 1e-12);
        }
        let pi = mixing_coefficients(&bw.w).unwrap();
        for (p, p_hat) in pi.pi.iter().zip(&regen.pi_hat) {
            assert!((p - p_hat).abs() <= 1e-12);
        }
    }

    #[test]
    fn zero_depth_regeneration_degenerates_to_uniform() {
        let sigma = [1.0, 2.0, 3.0];
        let regen = regenerate_weights(&sigma, &[0.0; 3], &[0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(regen.w_hat.iter().all(|w| *w == 0.0));
        for p in &regen.pi_hat {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn regeneration_hand_computed_two_samples() {
        let sigma = [1.0, 1.0];
        let mu_d = [2.0, 1.0];
        let t_edges = [0.0, 0.5, 1.0];
        let regen = regenerate_weights(&sigma, &mu_d, &t_edges).unwrap();
        assert!((regen.delta_hat[0] - 1.0).abs() < 1e-15);
        assert!((regen.delta_hat[1] - 0.5).abs() < 1e-15);
        let e1 = (-1.0f64).exp();
        assert!((regen.w_hat[0] - (1.0 - e1)).abs() < 1e-15);
        assert!((regen.w_hat[1] - e1 * (1.0 - (-0.5f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn regen_mixture_equals_color_mixture_when_coefficients_agree() {
        let sigma = [0.8, 0.4];
        let t_edges = [0.2, 0.7, 1.4];
        let dir_norm = 2.1;
        let delta: Vec<f64> = t_edges.windows(2).map(|w| dir_norm * (w[1] - w[0])).collect();
        let bw = crate::render::compute_blend_weights::<f64>(&sigma, &delta).unwrap();
        let pi = mixing_coefficients(&bw.w).unwrap();
        let regen = regenerate_weights(&sigma, &[dir_norm; 2], &t_edges).unwrap();
        let mu = [[0.1, 0.2, 0.3], [0.7, 0.8, 0.9]];
        let beta = [[0.2; 3]; 2];
        let c = [0.4, 0.5, 0.6];
        let a = color_mixture_log_pdf(&pi, &mu, &beta, c).unwrap();
        let b = regen_color_mixture_log_pdf(&regen, &mu, &beta, c).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn single_component_regen_ignores_depth() {
        let regen_a = regenerate_weights(&[2.0], &[0.3], &[0.0, 1.0]).unwrap();
        let regen_b = regenerate_weights(&[2.0], &[4.0], &[0.0, 1.0]).unwrap();
        let mu = [[0.5; 3]];
        let beta = [[0.25; 3]];
        let c = [0.1, 0.4, 0.9];
        let a = regen_color_mixture_log_pdf(&regen_a, &mu, &beta, c).unwrap();
        let b = regen_color_mixture_log_pdf(&regen_b, &mu, &beta, c).unwrap();
        let comp = laplace_log_pdf(c, &mu[0], &beta[0]).unwrap();
        assert!((a - comp).abs() < 1e-12);
        assert!((b - comp).abs() < 1e-12);
    }

    #[test]
    fn single_component_nll_increases_with_distance() {
        let pi = mixing_coefficients(&[1.0]).unwrap();
        let mu = [[0.5; 3]];
        let beta = [[0.2; 3]];
        let mut last = f64::INFINITY;
        for d in [0.0, 0.05, 0.1, 0.2, 0.4] {
            let lp = color_mixture_log_pdf(&pi, &mu, &beta, [0.5 + d, 0.5, 0.5]).unwrap();
            assert!(lp < last || d == 0.0);
            last = lp;
        }
    }

    #[test]
    fn mixture_pdf_quadrature_normalizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..20 {
            let m = rng.gen_range(1..=6);
            let w: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..1.0)).collect();
            let pi = mixing_coefficients(&w).unwrap();
            let mu: Vec<f64> = (0..m).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let beta: Vec<f64> = (0..m).map(|_| rng.gen_range(0.01..0.5)).collect();
            let mu_min = mu.iter().cloned().fold(f64::INFINITY, f64::min);
            let mu_max = mu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let b_max = beta.iter().cloned().fold(0.0f64, f64::max);
            let (lo, hi) = (mu_min - 20.0 * b_max, mu_max + 20.0 * b_max);
            let n = 40_000;
            let h = (hi - lo) / n as f64;
            let f = |x: f64| scalar_mixture_log_pdf(&pi.pi, &mu, &beta, x).unwrap().exp();
            let mut integral = 0.5 * (f(lo) + f(hi));
            for i in 1..n {
                integral += f(lo + i as f64 * h);
            }
            integral *= h;
            assert!((integral - 1.0).abs() < 1e-3, "integral = {integral}");
        }
    }

    proptest! {
        #[test]
        fn coefficients_always_sum_to_one(
            w in proptest::collection::vec(0.0f64..2.0, 1..24),
            zero_out: bool,
        ) {
            let w: Vec<f64> = if zero_out { w.iter().map(|_| 0.0).collect() } else { w };
            let mc = mixing_coefficients(&w).unwrap();
            let sum: f64 = mc.pi.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }

        #[test]
        fn regenerated_coefficients_always_sum_to_one(
            profile in proptest::collection::vec((0.0f64..3.0, 0.0f64..2.5, 0.01f64..0.6), 1..20)
        ) {
            let sigma: Vec<f64> = profile.iter().map(|p| p.0).collect();
            let mu_d: Vec<f64> = profile.iter().map(|p| p.1).collect();
            let mut edges = vec![0.5f64];
            for p in &profile {
                edges.push(edges.last().unwrap() + p.2);
            }
            let regen = regenerate_weights(&sigma, &mu_d, &edges).unwrap();
            let sum: f64 = regen.pi_hat.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
        }
    }
}
