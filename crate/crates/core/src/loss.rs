//! Loss terms and balancing-weight schedules.
//!
//! The total objective is the rendering MSE plus three negative
//! log-likelihood terms: the color mixture, the depth mixture, and the color
//! mixture remodeled with regenerated weights. The color-NLL weight anneals
//! linearly over the first 512 steps; the other two weights are constants
//! chosen per dataset profile.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Dataset/view-count profile selecting the balancing weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetProfile {
    Llff3,
    Llff6,
    Llff9,
    Dtu3,
    Dtu6,
    Dtu9,
    Syn4,
    Syn8,
    /// Small synthetic scenes rendered by this crate; uses the sparse
    /// synthetic weights.
    Desk,
}

impl DatasetProfile {
    pub const ALL: [DatasetProfile; 9] = [
        DatasetProfile::Llff3,
        DatasetProfile::Llff6,
        DatasetProfile::Llff9,
        DatasetProfile::Dtu3,
        DatasetProfile::Dtu6,
        DatasetProfile::Dtu9,
        DatasetProfile::Syn4,
        DatasetProfile::Syn8,
        DatasetProfile::Desk,
    ];

    /// Constant weights (lambda_d, lambda_c_hat) for this profile.
    fn constant_weights(self) -> (f64, f64) {
        match self {
            DatasetProfile::Llff3 => (1e-4, 1e-5),
            DatasetProfile::Llff6 => (1e-5, 1e-6),
            DatasetProfile::Llff9 => (1e-6, 1e-7),
            DatasetProfile::Dtu3 => (1e-3, 1e-4),
            DatasetProfile::Dtu6 => (1e-4, 1e-5),
            DatasetProfile::Dtu9 => (1e-5, 1e-6),
            DatasetProfile::Syn4 => (1e-3, 1e-4),
            DatasetProfile::Syn8 => (1e-4, 1e-5),
            DatasetProfile::Desk => (1e-3, 1e-4),
        }
    }

    /// View-selection protocol that goes with this profile.
    pub fn protocol(self) -> crate::data::SelectionProtocol {
        match self {
            DatasetProfile::Llff3 | DatasetProfile::Llff6 | DatasetProfile::Llff9 => {
                crate::data::SelectionProtocol::ForwardFacing
            }
            _ => crate::data::SelectionProtocol::FirstK,
        }
    }
}

impl fmt::Display for DatasetProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DatasetProfile::Llff3 => "llff3",
            DatasetProfile::Llff6 => "llff6",
            DatasetProfile::Llff9 => "llff9",
            DatasetProfile::Dtu3 => "dtu3",
            DatasetProfile::Dtu6 => "dtu6",
            DatasetProfile::Dtu9 => "dtu9",
            DatasetProfile::Syn4 => "syn4",
            DatasetProfile::Syn8 => "syn8",
            DatasetProfile::Desk => "desk",
        };
        f.write_str(s)
    }
}

impl FromStr for DatasetProfile {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.to_string() == s)
            .ok_or_else(|| Error::Config(format!("unknown dataset profile '{s}'")))
    }
}

/// Balancing weights for the loss terms at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_c: f64,
    pub lambda_d: f64,
    pub lambda_c_hat: f64,
    /// Weight of the coarse-level loss relative to the fine level.
    pub coarse_mult: f64,
}

impl LossWeights {
    pub fn zero() -> Self {
        LossWeights {
            lambda_c: 0.0,
            lambda_d: 0.0,
            lambda_c_hat: 0.0,
            coarse_mult: 0.0,
        }
    }
}

pub const LAMBDA_C_INIT: f64 = 4.0;
pub const LAMBDA_C_FINAL: f64 = 1e-3;
pub const LAMBDA_C_ANNEAL_STEPS: usize = 512;
pub const DEFAULT_COARSE_MULT: f64 = 0.1;

/// Balancing weights at `step`: the color-NLL weight anneals linearly from
/// 4.0 to 1e-3 over the first 512 steps, the rest are profile constants.
pub fn lambda_schedule(step: usize, profile: DatasetProfile) -> LossWeights {
    let lambda_c = if step >= LAMBDA_C_ANNEAL_STEPS {
        LAMBDA_C_FINAL
    } else {
        let s = step as f64 / LAMBDA_C_ANNEAL_STEPS as f64;
        LAMBDA_C_INIT + s * (LAMBDA_C_FINAL - LAMBDA_C_INIT)
    };
    let (lambda_d, lambda_c_hat) = profile.constant_weights();
    LossWeights {
        lambda_c,
        lambda_d,
        lambda_c_hat,
        coarse_mult: DEFAULT_COARSE_MULT,
    }
}

/// How per-ray terms are reduced over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Batch mean; keeps the balancing weights independent of batch size.
    Mean,
    /// Plain sum over rays.
    Sum,
}

/// Mean squared error between predicted and reference colors.
pub fn mse_loss(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Domain(format!(
            "{} predictions vs {} references",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Domain("cannot average an empty batch".into()));
    }
    let mut total = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        for ch in 0..3 {
            let d = p[ch] - g[ch];
            total += d * d;
        }
    }
    Ok(total / pred.len() as f64)
}

/// Negated batch means of the three per-ray log-likelihoods.
pub fn nll_terms(
    logp_c: &[f64],
    logp_d: &[f64],
    logp_c_hat: &[f64],
) -> Result<(f64, f64, f64)> {
    let mean_neg = |name: &str, xs: &[f64]| -> Result<f64> {
        if xs.is_empty() {
            return Err(Error::Domain("cannot average an empty batch".into()));
        }
        let mut total = 0.0;
        for (i, x) in xs.iter().enumerate() {
            if !x.is_finite() {
                return Err(Error::Numeric(format!(
                    "{name} log-likelihood of ray {i} is {x}"
                )));
            }
            total -= x;
        }
        Ok(total / xs.len() as f64)
    };
    Ok((
        mean_neg("color", logp_c)?,
        mean_neg("depth", logp_d)?,
        mean_neg("remodeled color", logp_c_hat)?,
    ))
}

/// Unweighted loss terms for one level (coarse or fine).
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub mse: f64,
    pub nll_c: f64,
    pub nll_d: f64,
    pub nll_c_hat: f64,
}

impl LossTerms {
    pub fn weighted_total(&self, w: &LossWeights) -> f64 {
        self.mse
            + w.lambda_c * self.nll_c
            + w.lambda_d * self.nll_d
            + w.lambda_c_hat * self.nll_c_hat
    }
}

/// Fine-level total plus `coarse_mult` times the coarse-level total.
pub fn total_loss(fine: &LossTerms, coarse: &LossTerms, w: &LossWeights) -> f64 {
    fine.weighted_total(w) + w.coarse_mult * coarse.weighted_total(w)
}

/// Combined (fine + coarse_mult * coarse) loss components for logging.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossBundle {
    pub mse: f64,
    pub nll_c: f64,
    pub nll_d: f64,
    pub nll_c_hat: f64,
    pub total: f64,
}

impl LossBundle {
    pub fn from_levels(fine: &LossTerms, coarse: &LossTerms, w: &LossWeights) -> Self {
        let cm = w.coarse_mult;
        LossBundle {
            mse: fine.mse + cm * coarse.mse,
            nll_c: fine.nll_c + cm * coarse.nll_c,
            nll_d: fine.nll_d + cm * coarse.nll_d,
            nll_c_hat: fine.nll_c_hat + cm * coarse.nll_c_hat,
            total: total_loss(fine, coarse, w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_of_identical_batches_is_zero() {
        let batch = vec![[0.1, 0.2, 0.3], [0.9, 0.8, 0.7]];
        assert_eq!(mse_loss(&batch, &batch).unwrap(), 0.0);
    }

    #[test]
    fn mse_single_channel_residual() {
        let pred = vec![[0.1, 0.0, 0.0]];
        let gt = vec![[0.0; 3]];
        assert!((mse_loss(&pred, &gt).unwrap() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn mse_is_homogeneous_of_degree_two() {
        let gt = vec![[0.2, 0.3, 0.4], [0.5, 0.6, 0.7]];
        let pred: Vec<[f64; 3]> = gt
            .iter()
            .map(|g| [g[0] + 0.01, g[1] - 0.02, g[2] + 0.03])
            .collect();
        let pred2: Vec<[f64; 3]> = gt
            .iter()
            .map(|g| [g[0] + 0.02, g[1] - 0.04, g[2] + 0.06])
            .collect();
        let a = mse_loss(&pred, &gt).unwrap();
        let b = mse_loss(&pred2, &gt).unwrap();
        assert!((b - 4.0 * a).abs() < 1e-12);
    }

    #[test]
    fn mse_rejects_empty_batch() {
        assert!(mse_loss(&[], &[]).is_err());
    }

    #[test]
    fn nll_terms_are_negated_means() {
        let (c, d, ch) = nll_terms(&[0.0, 0.0], &[-1.0, -3.0], &[2.0]).unwrap();
        assert_eq!(c, 0.0);
        assert_eq!(d, 2.0);
        assert_eq!(ch, -2.0);
    }

    #[test]
    fn nll_shift_property() {
        let base = [-0.5, -1.5, -2.5];
        let shifted: Vec<f64> = base.iter().map(|x| x + 0.7).collect();
        let (a, _, _) = nll_terms(&base, &[0.0], &[0.0]).unwrap();
        let (b, _, _) = nll_terms(&shifted, &[0.0], &[0.0]).unwrap();
        assert!((a - b - 0.7).abs() < 1e-12);
    }

    #[test]
    fn nll_faults_on_non_finite_input_with_ray_index() {
        let err = nll_terms(&[0.0, f64::NAN], &[0.0], &[0.0]).unwrap_err();
        match err {
            crate::Error::Numeric(msg) => assert!(msg.contains("ray 1"), "{msg}"),
            other => panic!("expected numeric fault, got {other:?}"),
        }
    }

    #[test]
    fn lambda_schedule_endpoints() {
        let w0 = lambda_schedule(0, DatasetProfile::Llff3);
        assert_eq!(w0.lambda_c, 4.0);
        assert_eq!(lambda_schedule(512, DatasetProfile::Llff3).lambda_c, 1e-3);
        assert_eq!(lambda_schedule(100_000, DatasetProfile::Llff3).lambda_c, 1e-3);
    }

    #[test]
    fn lambda_schedule_midpoint() {
        let w = lambda_schedule(256, DatasetProfile::Dtu6);
        assert!((w.lambda_c - 2.0005).abs() < 1e-12);
    }

    #[test]
    fn lambda_schedule_is_continuous_at_the_knee() {
        let before = lambda_schedule(511, DatasetProfile::Syn4).lambda_c;
        let at = lambda_schedule(512, DatasetProfile::Syn4).lambda_c;
        assert!((before - at).abs() < (LAMBDA_C_INIT - LAMBDA_C_FINAL) / 512.0 + 1e-12);
        // piecewise linear: equal increments before the knee
        let a = lambda_schedule(10, DatasetProfile::Syn4).lambda_c;
        let b = lambda_schedule(11, DatasetProfile::Syn4).lambda_c;
        let c = lambda_schedule(12, DatasetProfile::Syn4).lambda_c;
        assert!(((a - b) - (b - c)).abs() < 1e-12);
    }

    #[test]
    fn profile_table_constants() {
        let cases = [
            (DatasetProfile::Llff3, 1e-4, 1e-5),
            (DatasetProfile::Llff6, 1e-5, 1e-6),
            (DatasetProfile::Llff9, 1e-6, 1e-7),
            (DatasetProfile::Dtu3, 1e-3, 1e-4),
            (DatasetProfile::Dtu6, 1e-4, 1e-5),
            (DatasetProfile::Dtu9, 1e-5, 1e-6),
            (DatasetProfile::Syn4, 1e-3, 1e-4),
            (DatasetProfile::Syn8, 1e-4, 1e-5),
        ];
        for (p, ld, lch) in cases {
            let w = lambda_schedule(1000, p);
            assert_eq!(w.lambda_d, ld, "{p}");
            assert_eq!(w.lambda_c_hat, lch, "{p}");
        }
    }

    #[test]
    fn unknown_profile_string_is_a_config_error() {
        assert!("llff7".parse::<DatasetProfile>().is_err());
        assert_eq!("desk".parse::<DatasetProfile>().unwrap(), DatasetProfile::Desk);
    }

    #[test]
    fn zero_weights_reduce_total_to_mse() {
        let fine = LossTerms {
            mse: 0.25,
            nll_c: 3.0,
            nll_d: -1.0,
            nll_c_hat: 2.0,
        };
        let coarse = LossTerms {
            mse: 0.5,
            ..Default::default()
        };
        let total = total_loss(&fine, &coarse, &LossWeights::zero());
        assert_eq!(total, 0.25);
    }

    #[test]
    fn weighted_total_linear_combination() {
        let fine = LossTerms {
            mse: 0.5,
            nll_c: 2.0,
            nll_d: 0.0,
            nll_c_hat: 0.0,
        };
        let coarse = LossTerms::default();
        let w = LossWeights {
            lambda_c: 1.0,
            lambda_d: 0.0,
            lambda_c_hat: 0.0,
            coarse_mult: 1.0,
        };
        assert_eq!(total_loss(&fine, &coarse, &w), 2.5);
    }

    #[test]
    fn doubling_weights_doubles_the_excess_over_mse() {
        let fine = LossTerms {
            mse: 0.3,
            nll_c: 1.1,
            nll_d: 0.7,
            nll_c_hat: -0.2,
        };
        let coarse = LossTerms {
            mse: 0.2,
            nll_c: 0.9,
            nll_d: 0.4,
            nll_c_hat: 0.1,
        };
        let w1 = LossWeights {
            lambda_c: 0.5,
            lambda_d: 0.25,
            lambda_c_hat: 0.125,
            coarse_mult: 0.1,
        };
        let w2 = LossWeights {
            lambda_c: 1.0,
            lambda_d: 0.5,
            lambda_c_hat: 0.25,
            coarse_mult: 0.1,
        };
        let mse_only = LossWeights {
            lambda_c: 0.0,
            lambda_d: 0.0,
            lambda_c_hat: 0.0,
            coarse_mult: 0.1,
        };
        let t1 = total_loss(&fine, &coarse, &w1);
        let t2 = total_loss(&fine, &coarse, &w2);
        let t0 = total_loss(&fine, &coarse, &mse_only);
        assert!(((t2 - t0) - 2.0 * (t1 - t0)).abs() < 1e-12);
    }

    #[test]
    fn bundle_total_is_consistent_with_components() {
        let fine = LossTerms {
            mse: 0.4,
            nll_c: 1.5,
            nll_d: 0.6,
            nll_c_hat: 0.9,
        };
        let coarse = LossTerms {
            mse: 0.7,
            nll_c: 2.5,
            nll_d: 0.2,
            nll_c_hat: 0.3,
        };
        let w = LossWeights {
            lambda_c: 0.8,
            lambda_d: 0.01,
            lambda_c_hat: 0.002,
            coarse_mult: 0.1,
        };
        let b = LossBundle::from_levels(&fine, &coarse, &w);
        let recomposed =
            b.mse + w.lambda_c * b.nll_c + w.lambda_d * b.nll_d + w.lambda_c_hat * b.nll_c_hat;
        assert!((b.total - recomposed).abs() < 1e-9 * b.total.abs());
    }
}
