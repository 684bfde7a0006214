//! Optimization loop: pixel batching, Adam with sine warmup and exponential
//! learning-rate decay, two-stage gradient clipping, and checkpointing.

use crate::data::Scene;
use crate::field::{FieldConfig, FieldParams};
use crate::geometry::{hierarchical_sample, stratified_sample, anneal_bounds, AnnealConfig};
use crate::imgio::atomic_write;
use crate::loss::{
    lambda_schedule, DatasetProfile, LossBundle, LossTerms, LossWeights, Reduction,
};
use crate::pipeline::{combine_ray_loss, eval_level, RayTarget};
use crate::tape::Tape;
use crate::{CheckpointError, Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Training hyperparameters. Defaults follow the reference recipe: 4096-ray
/// batches for 500 pixel epochs, exponential decay 2e-3 to 2e-5 with 512
/// warmup steps at delay 1e-2, and value-then-norm clipping at 0.1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Pixel epochs: one epoch is a pass worth of all training-view pixels.
    pub epochs: usize,
    /// Overrides the epoch-derived step count when set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_steps: Option<usize>,
    pub lr_init: f64,
    pub lr_final: f64,
    pub warmup_steps: usize,
    pub delay_mult: f64,
    pub clip_value: f64,
    pub clip_norm: f64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub seed: u64,
    pub profile: DatasetProfile,
    pub coarse_mult: f64,
    pub reduction: Reduction,
    /// Zero every mixture weight, leaving the plain MSE objective.
    pub mse_only: bool,
    /// Block gradients through the estimated depths in the regenerated
    /// weights (ablation switch).
    pub regen_stop_grad: bool,
    pub jitter: bool,
    pub anneal: AnnealConfig,
    pub checkpoint_every: usize,
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4096,
            epochs: 500,
            max_steps: None,
            lr_init: 2e-3,
            lr_final: 2e-5,
            warmup_steps: 512,
            delay_mult: 1e-2,
            clip_value: 0.1,
            clip_norm: 0.1,
            n_coarse: 64,
            n_fine: 128,
            seed: 0,
            profile: DatasetProfile::Desk,
            coarse_mult: 0.1,
            reduction: Reduction::Mean,
            mse_only: false,
            regen_stop_grad: false,
            jitter: true,
            anneal: AnnealConfig::default(),
            checkpoint_every: 1000,
            log_every: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.lr_init >= self.lr_final && self.lr_final > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy lr_init >= lr_final > 0, got {} / {}",
                self.lr_init, self.lr_final
            )));
        }
        if self.n_coarse < 1 || self.n_fine < 1 {
            return Err(Error::Config("sample counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Balancing weights at `step`, honoring the MSE-only switch and the
    /// configured coarse multiplier.
    pub fn weights_at(&self, step: usize) -> LossWeights {
        let mut w = lambda_schedule(step, self.profile);
        w.coarse_mult = self.coarse_mult;
        if self.mse_only {
            w.lambda_c = 0.0;
            w.lambda_d = 0.0;
            w.lambda_c_hat = 0.0;
        }
        w
    }
}

/// Full run configuration: architecture plus training hyperparameters.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Config {
    pub field: FieldConfig,
    pub train: TrainConfig,
}

impl Config {
    /// Apply a dotted-key override, e.g. `train.batch_size=128`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T>
        where
            T::Err: std::fmt::Display,
        {
            value
                .parse()
                .map_err(|e| Error::Config(format!("{key}: cannot parse '{value}': {e}")))
        }
        match key {
            "field.l_pos" => self.field.l_pos = parse(key, value)?,
            "field.l_dir" => self.field.l_dir = parse(key, value)?,
            "field.trunk_depth" => self.field.trunk_depth = parse(key, value)?,
            "field.trunk_width" => self.field.trunk_width = parse(key, value)?,
            "field.bottleneck_width" => self.field.bottleneck_width = parse(key, value)?,
            "field.view_width" => self.field.view_width = parse(key, value)?,
            "field.beta_min" => self.field.beta_min = parse(key, value)?,
            "field.sigma_bias" => self.field.sigma_bias = parse(key, value)?,
            "train.batch_size" => self.train.batch_size = parse(key, value)?,
            "train.epochs" => self.train.epochs = parse(key, value)?,
            "train.max_steps" => self.train.max_steps = Some(parse(key, value)?),
            "train.lr_init" => self.train.lr_init = parse(key, value)?,
            "train.lr_final" => self.train.lr_final = parse(key, value)?,
            "train.warmup_steps" => self.train.warmup_steps = parse(key, value)?,
            "train.delay_mult" => self.train.delay_mult = parse(key, value)?,
            "train.clip_value" => self.train.clip_value = parse(key, value)?,
            "train.clip_norm" => self.train.clip_norm = parse(key, value)?,
            "train.n_coarse" => self.train.n_coarse = parse(key, value)?,
            "train.n_fine" => self.train.n_fine = parse(key, value)?,
            "train.seed" => self.train.seed = parse(key, value)?,
            "train.profile" => self.train.profile = parse(key, value)?,
            "train.coarse_mult" => self.train.coarse_mult = parse(key, value)?,
            "train.mse_only" => self.train.mse_only = parse(key, value)?,
            "train.regen_stop_grad" => self.train.regen_stop_grad = parse(key, value)?,
            "train.jitter" => self.train.jitter = parse(key, value)?,
            "train.anneal.steps" => self.train.anneal.steps = parse(key, value)?,
            "train.anneal.start_fraction" => self.train.anneal.start_fraction = parse(key, value)?,
            "train.checkpoint_every" => self.train.checkpoint_every = parse(key, value)?,
            "train.log_every" => self.train.log_every = parse(key, value)?,
            "train.reduction" => {
                self.train.reduction = match value {
                    "mean" => Reduction::Mean,
                    "sum" => Reduction::Sum,
                    _ => return Err(Error::Config(format!("{key}: expected mean or sum"))),
                }
            }
            _ => return Err(Error::Config(format!("unknown config key '{key}'"))),
        }
        Ok(())
    }
}

pub(crate) fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D049BB133111EB);
    x ^ (x >> 31)
}

/// Deterministic stream seed from (run seed, counter, domain tag).
pub(crate) fn mix_seed(seed: u64, counter: u64, tag: u64) -> u64 {
    splitmix64(seed ^ splitmix64(counter ^ splitmix64(tag)))
}

/// Per-frame rendering seed derived from the run seed.
pub fn render_seed(seed: u64, frame: usize) -> u64 {
    mix_seed(seed, frame as u64, 0x4652414d)
}

/// Learning rate at `step` out of `total_steps`: log-linear decay from
/// `lr_init` to `lr_final`, multiplied by a sine warmup that starts at
/// `delay_mult` and saturates at 1 after `warmup_steps`.
pub fn lr_at(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let base = if total_steps == 0 || step >= total_steps {
        cfg.lr_final
    } else if step == 0 {
        cfg.lr_init
    } else {
        let s = step as f64 / total_steps as f64;
        (cfg.lr_init.ln() + s * (cfg.lr_final.ln() - cfg.lr_init.ln())).exp()
    };
    let delay = if cfg.warmup_steps == 0 {
        1.0
    } else {
        let r = (step as f64 / cfg.warmup_steps as f64).min(1.0);
        cfg.delay_mult + (1.0 - cfg.delay_mult) * (std::f64::consts::FRAC_PI_2 * r).sin()
    };
    delay * base
}

/// Clamp every component to `[-clip_value, clip_value]`, then rescale the
/// whole vector if its L2 norm exceeds `clip_norm`. Faults on non-finite
/// gradients.
pub fn clip_gradients(grads: &mut [f64], clip_value: f64, clip_norm: f64) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!("gradient {i} is not finite")));
    }
    for g in grads.iter_mut() {
        *g = g.clamp(-clip_value, clip_value);
    }
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > clip_norm {
        let s = clip_norm / norm;
        for g in grads.iter_mut() {
            *g *= s;
        }
    }
    Ok(())
}

/// Adam first/second moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(n: usize) -> Self {
        OptimizerState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grads: &[f64], lr: f64) {
    debug_assert_eq!(params.len(), grads.len());
    debug_assert_eq!(params.len(), state.m.len());
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / bc1;
        let v_hat = state.v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPSILON);
    }
}

const CKPT_MAGIC: &[u8; 8] = b"RAYMIXCK";
const CKPT_VERSION: u32 = 1;

/// Metadata stored in the checkpoint header.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub field: FieldConfig,
    pub seed: u64,
    pub n_coarse: usize,
    pub n_fine: usize,
    pub step: u64,
}

/// Decoded checkpoint: parameters, optimizer state, and metadata.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: FieldParams,
    pub opt: OptimizerState,
}

impl Checkpoint {
    /// Fail with an architecture-mismatch error naming both shapes.
    pub fn require_arch(&self, expected: &FieldConfig) -> Result<()> {
        if self.header.field != *expected {
            return Err(CheckpointError::ArchMismatch {
                expected: expected.describe(),
                found: self.header.field.describe(),
            }
            .into());
        }
        Ok(())
    }
}

fn push_f64s(out: &mut Vec<u8>, xs: &[f64]) {
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

/// Serialize parameters, optimizer state, and metadata; the byte image is a
/// pure function of its inputs, so identical runs produce identical files.
pub fn save_checkpoint(
    params: &FieldParams,
    opt: &OptimizerState,
    header: &CheckpointHeader,
    path: &Path,
) -> Result<()> {
    let header_json = serde_json::to_vec(header)
        .map_err(|e| Error::Data(format!("cannot serialize checkpoint header: {e}")))?;
    let n = params.len();
    let mut out = Vec::with_capacity(24 + header_json.len() + 8 * (3 * n + 2));
    out.extend_from_slice(CKPT_MAGIC);
    out.extend_from_slice(&CKPT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    push_f64s(&mut out, &params.values);
    out.extend_from_slice(&opt.step.to_le_bytes());
    push_f64s(&mut out, &opt.m);
    push_f64s(&mut out, &opt.v);
    atomic_write(path, &out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> std::result::Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> std::result::Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> std::result::Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize) -> std::result::Result<Vec<f64>, CheckpointError> {
        let raw = self.take(8 * n)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

/// Decode a checkpoint file, verifying magic, version, and exact length.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let buf = std::fs::read(path).map_err(|e| crate::io_err(path, e))?;
    let mut r = Reader { buf: &buf, pos: 0 };
    if r.take(8)? != CKPT_MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    let version = r.u32()?;
    if version != CKPT_VERSION {
        return Err(CheckpointError::Version {
            found: version,
            expected: CKPT_VERSION,
        }
        .into());
    }
    let header_len = r.u32()? as usize;
    let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
        .map_err(|e| CheckpointError::BadHeader(e.to_string()))?;
    let n = r.u64()? as usize;
    if n != FieldParams::n_params(&header.field) {
        return Err(CheckpointError::BadHeader(format!(
            "{n} parameters for an architecture needing {}",
            FieldParams::n_params(&header.field)
        ))
        .into());
    }
    let values = r.f64s(n)?;
    let step = r.u64()?;
    let m = r.f64s(n)?;
    let v = r.f64s(n)?;
    if r.pos != buf.len() {
        return Err(CheckpointError::TrailingBytes.into());
    }
    let params = FieldParams::from_values(&header.field, values)?;
    Ok(Checkpoint {
        header,
        params,
        opt: OptimizerState { m, v, step },
    })
}

/// Result of a training run. Files written: `checkpoint.rmx`, `loss_log.csv`,
/// and `config.json` under the output directory.
pub struct TrainOutcome {
    pub params: FieldParams,
    pub opt: OptimizerState,
    pub total_steps: usize,
    pub final_loss: LossBundle,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
}

/// Total steps implied by the pixel-epoch budget.
pub fn steps_for(cfg: &TrainConfig, total_pixels: usize) -> usize {
    if let Some(s) = cfg.max_steps {
        return s;
    }
    let steps_per_epoch = total_pixels.div_ceil(cfg.batch_size);
    cfg.epochs * steps_per_epoch
}

/// Train on the given views of a scene.
///
/// Each step samples `batch_size` pixels uniformly (with replacement) over
/// all training views, builds rays at the t = 1 depth scale, anneals the
/// sampling bounds, runs the coarse and fine passes, differentiates the
/// two-level objective, clips, and applies Adam. Fully deterministic for a
/// given seed/config/scene.
pub fn train(scene: &Scene, train_views: &[usize], cfg: &Config, out_dir: &Path) -> Result<TrainOutcome> {
    cfg.train.validate()?;
    cfg.field.validate()?;
    if train_views.is_empty() {
        return Err(Error::Domain("training needs at least one view".into()));
    }
    for &v in train_views {
        if v >= scene.n_frames() {
            return Err(Error::Domain(format!(
                "training view {v} out of range ({} frames)",
                scene.n_frames()
            )));
        }
    }
    std::fs::create_dir_all(out_dir).map_err(|e| crate::io_err(out_dir, e))?;

    let tcfg = &cfg.train;
    let total_pixels: usize = train_views
        .iter()
        .map(|&v| (scene.images[v].width * scene.images[v].height) as usize)
        .sum();
    let total_steps = steps_for(tcfg, total_pixels);
    let bg = scene.background.color();

    let mut params = FieldParams::init(&cfg.field, tcfg.seed)?;
    let mut opt = OptimizerState::new(params.len());
    let mut grads = vec![0.0f64; params.len()];
    let mut last_good: Option<(Vec<f64>, OptimizerState, u64)> = None;

    let ckpt_path = out_dir.join("checkpoint.rmx");
    let log_path = out_dir.join("loss_log.csv");
    let mut log = std::io::BufWriter::new(
        std::fs::File::create(&log_path).map_err(|e| crate::io_err(&log_path, e))?,
    );
    writeln!(log, "step,lr,mse,nll_c,nll_d,nll_c_hat,total").map_err(|e| crate::io_err(&log_path, e))?;

    let header = |step: u64| CheckpointHeader {
        field: cfg.field.clone(),
        seed: tcfg.seed,
        n_coarse: tcfg.n_coarse,
        n_fine: tcfg.n_fine,
        step,
    };

    let mut final_loss = LossBundle::default();
    for step in 0..total_steps {
        let weights = tcfg.weights_at(step);
        let lr = lr_at(step, total_steps, tcfg);

        let mut batch_rng = ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, step as u64, 0x42415443));
        grads.iter_mut().for_each(|g| *g = 0.0);
        let mut fine_sum = LossTerms::default();
        let mut coarse_sum = LossTerms::default();

        for i in 0..tcfg.batch_size {
            // uniform pixel over the union of training views
            let flat = batch_rng.gen_range(0..total_pixels);
            let (view, x, y) = {
                let mut rest = flat;
                let mut found = None;
                for &v in train_views {
                    let n = (scene.images[v].width * scene.images[v].height) as usize;
                    if rest < n {
                        let w = scene.images[v].width as usize;
                        found = Some((v, (rest % w) as u32, (rest / w) as u32));
                        break;
                    }
                    rest -= n;
                }
                found.unwrap()
            };

            let camera = &scene.cameras[view];
            let ray = camera.ray(x as f64, y as f64, scene.near, scene.far)?;
            let target = RayTarget::new(ray, scene.images[view].pixel(x, y));

            let mut ray_rng =
                ChaCha8Rng::seed_from_u64(mix_seed(tcfg.seed, (step * tcfg.batch_size + i) as u64, 0x52415953));
            let (t_near, t_far) = anneal_bounds(&ray, step, &tcfg.anneal);
            let bounded = crate::geometry::Ray { t_near, t_far, ..ray };

            let tape = Tape::new(params.len());
            let coarse_samples = stratified_sample(&bounded, tcfg.n_coarse, tcfg.jitter, &mut ray_rng)?;
            let coarse_eval = eval_level(&tape, &params, &target, &coarse_samples, bg, tcfg.regen_stop_grad)?;
            let fine_samples = hierarchical_sample(
                &coarse_samples,
                &coarse_eval.w_values,
                tcfg.n_fine,
                bounded.dir_norm(),
                &mut ray_rng,
            )?;
            let fine_eval = eval_level(&tape, &params, &target, &fine_samples, bg, tcfg.regen_stop_grad)?;
            let loss = combine_ray_loss(&fine_eval, &coarse_eval, &weights);

            let loss_val = crate::tape::Real::value(loss);
            if !loss_val.is_finite() {
                if let Some((values, opt_state, good_step)) = last_good.take() {
                    let p = FieldParams::from_values(&cfg.field, values)?;
                    save_checkpoint(&p, &opt_state, &header(good_step), &out_dir.join("checkpoint_abort.rmx"))?;
                }
                return Err(Error::Numeric(format!(
                    "non-finite loss {loss_val} at step {step}, ray {i} (view {view}, pixel {x},{y})"
                )));
            }

            tape.backward_into(loss, &params.values, &mut grads);
            accumulate(&mut fine_sum, &fine_eval.terms());
            accumulate(&mut coarse_sum, &coarse_eval.terms());
        }

        let inv = match tcfg.reduction {
            Reduction::Mean => 1.0 / tcfg.batch_size as f64,
            Reduction::Sum => 1.0,
        };
        if inv != 1.0 {
            for g in grads.iter_mut() {
                *g *= inv;
            }
        }
        scale_terms(&mut fine_sum, inv);
        scale_terms(&mut coarse_sum, inv);
        let bundle = LossBundle::from_levels(&fine_sum, &coarse_sum, &weights);
        final_loss = bundle;

        clip_gradients(&mut grads, tcfg.clip_value, tcfg.clip_norm)?;
        adam_step(&mut opt, &mut params.values, &grads, lr);

        if step % tcfg.log_every == 0 || step + 1 == total_steps {
            writeln!(
                log,
                "{step},{lr:.8e},{:.8e},{:.8e},{:.8e},{:.8e},{:.8e}",
                bundle.mse, bundle.nll_c, bundle.nll_d, bundle.nll_c_hat, bundle.total
            )
            .map_err(|e| crate::io_err(&log_path, e))?;
        }
        last_good = Some((params.values.clone(), opt.clone(), step as u64 + 1));
        if tcfg.checkpoint_every > 0 && (step + 1) % tcfg.checkpoint_every == 0 {
            save_checkpoint(&params, &opt, &header(step as u64 + 1), &ckpt_path)?;
        }
    }

    log.flush().map_err(|e| crate::io_err(&log_path, e))?;
    save_checkpoint(&params, &opt, &header(total_steps as u64), &ckpt_path)?;
    Ok(TrainOutcome {
        params,
        opt,
        total_steps,
        final_loss,
        checkpoint_path: ckpt_path,
        log_path,
    })
}

fn accumulate(into: &mut LossTerms, terms: &LossTerms) {
    into.mse += terms.mse;
    into.nll_c += terms.nll_c;
    into.nll_d += terms.nll_d;
    into.nll_c_hat += terms.nll_c_hat;
}

fn scale_terms(terms: &mut LossTerms, s: f64) {
    terms.mse *= s;
    terms.nll_c *= s;
    terms.nll_d *= s;
    terms.nll_c_hat *= s;
}
