//! Loss, optimizer, learning-rate schedule, the training loop, and
//! flip-averaged inference over sequences.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{extract_windows, flip_window, PoseSequence, Window};
use crate::model::LiftFormerModel;
use crate::nn::{Scalar, Tensor};
use crate::skeleton::{Pose3D, SkeletonSpec};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    /// Overrides the receptive-field keyed default (5120 / 3072 / 1536 for
    /// n = 27 / 81 / 243). Always clamped to the dataset size.
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default = "default_warmup")]
    pub warmup_steps: usize,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_amsgrad")]
    pub amsgrad: bool,
    /// Resolved against the LIFTKIT_SEED environment variable when absent.
    #[serde(default)]
    pub seed: Option<u64>,
    /// Optional cap on total optimizer steps (desk-scale runs).
    #[serde(default)]
    pub max_steps: Option<usize>,
    /// Random horizontal flips during training (the recipe default).
    #[serde(default = "default_flip_augmentation")]
    pub flip_augmentation: bool,
    /// Fraction of windows held out for validation and best-checkpoint
    /// selection (Protocol 1 MPJPE).
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
}

fn default_epochs() -> usize {
    80
}
fn default_warmup() -> usize {
    1000
}
fn default_lr_factor() -> f64 {
    12.0
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_amsgrad() -> bool {
    true
}
fn default_flip_augmentation() -> bool {
    true
}
fn default_val_fraction() -> f64 {
    0.1
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("defaults are valid")
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be positive"));
        }
        if self.batch_size == Some(0) {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.warmup_steps == 0 {
            return Err(Error::config("warmup_steps must be positive"));
        }
        if !(self.lr_factor > 0.0) {
            return Err(Error::config("lr_factor must be positive"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::config("val_fraction must lie in [0, 1)"));
        }
        Ok(())
    }

    pub fn resolved_seed(&self) -> u64 {
        self.seed
            .or_else(|| std::env::var("LIFTKIT_SEED").ok().and_then(|v| v.parse().ok()))
            .unwrap_or(0)
    }

    /// Paper-scale default batch size for a receptive field.
    pub fn default_batch_size(receptive_field: usize) -> usize {
        match receptive_field {
            0..=27 => 5120,
            28..=81 => 3072,
            _ => 1536,
        }
    }
}

/// Mean per-joint position error over a batch, as a differentiable scalar.
/// Inputs are `[..., 3J]` predictions and targets.
pub fn mpjpe_loss<S: Scalar>(pred: &Tensor<S>, target: &Tensor<S>) -> Result<Tensor<S>> {
    let last = *pred.shape().last().unwrap();
    if last % 3 != 0 {
        return Err(Error::shape(format!(
            "prediction width {last} is not a multiple of 3"
        )));
    }
    let mut shape = pred.shape().to_vec();
    *shape.last_mut().unwrap() = last / 3;
    shape.push(3);
    pred.reshape(&shape)?.mpjpe_loss(&target.reshape(&shape)?)
}

/// Noam learning rate: `factor * d^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
/// Linear warmup, then inverse-square-root decay; the two branches meet at
/// `step == warmup`.
pub fn noam_lr(step: usize, d: usize, factor: f64, warmup: usize) -> Result<f64> {
    if step == 0 {
        return Err(Error::config("schedule steps are 1-based"));
    }
    let s = step as f64;
    let w = warmup as f64;
    Ok(factor * (d as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5)))
}

#[derive(Debug, Clone, Copy)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub amsgrad: bool,
}

impl From<&TrainConfig> for AdamParams {
    fn from(c: &TrainConfig) -> Self {
        AdamParams { beta1: c.beta1, beta2: c.beta2, eps: c.eps, amsgrad: c.amsgrad }
    }
}

/// Per-parameter Adam moments. With AMSGrad the running maximum of the
/// bias-corrected second moment replaces it in the denominator.
#[derive(Debug)]
pub struct OptimizerState<S: Scalar> {
    m: Vec<Vec<S>>,
    v: Vec<Vec<S>>,
    v_max: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> OptimizerState<S> {
    pub fn new(params: &[(String, Tensor<S>)]) -> Self {
        let zeros: Vec<Vec<S>> = params.iter().map(|(_, t)| vec![S::zero(); t.numel()]).collect();
        OptimizerState { m: zeros.clone(), v: zeros.clone(), v_max: zeros, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update from the gradients currently stored on the
    /// parameters. Parameters with no gradient are left untouched.
    pub fn apply_step(
        &mut self,
        params: &[(String, Tensor<S>)],
        lr: f64,
        cfg: &AdamParams,
    ) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape("optimizer state does not match parameter list"));
        }
        self.step += 1;
        let t = self.step as i32;
        let b1 = S::from_f64(cfg.beta1);
        let b2 = S::from_f64(cfg.beta2);
        let bc1 = S::from_f64(1.0 - cfg.beta1.powi(t));
        let bc2 = S::from_f64(1.0 - cfg.beta2.powi(t));
        let eps = S::from_f64(cfg.eps);
        let lr = S::from_f64(lr);
        let one = S::one();

        for (i, (_, param)) in params.iter().enumerate() {
            let Some(grad) = param.grad() else { continue };
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            let v_max = &mut self.v_max[i];
            param.values_mut(|values| {
                for k in 0..values.len() {
                    let g = grad[k];
                    m[k] = b1 * m[k] + (one - b1) * g;
                    v[k] = b2 * v[k] + (one - b2) * g * g;
                    let m_hat = m[k] / bc1;
                    let v_hat = v[k] / bc2;
                    let denom_sq = if cfg.amsgrad {
                        if v_hat > v_max[k] {
                            v_max[k] = v_hat;
                        }
                        v_max[k]
                    } else {
                        v_hat
                    };
                    values[k] = values[k] - lr * m_hat / (denom_sq.sqrt() + eps);
                }
            });
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_mpjpe: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<StepLog>,
    pub final_train_loss: f64,
    pub best_val_mpjpe: Option<f64>,
    /// Windows held out for validation (indices into the extracted list).
    pub val_windows: usize,
}

fn window_batch_tensors<S: Scalar>(
    windows: &[&Window],
    flip: &[bool],
    spec: &SkeletonSpec,
    n: usize,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let b = windows.len();
    let j = spec.joint_count;
    let mut inputs = Vec::with_capacity(b * n * 2 * j);
    let mut targets = Vec::with_capacity(b * 3 * j);
    for (w, &do_flip) in windows.iter().zip(flip) {
        let w = if do_flip { flip_window(w, spec)? } else { (*w).clone() };
        inputs.extend(w.flat_inputs().iter().map(|&v| S::from_f64(v)));
        let target = w
            .flat_target()
            .ok_or_else(|| Error::data("training window is missing its 3D target"))?;
        targets.extend(target.iter().map(|&v| S::from_f64(v)));
    }
    Ok((
        Tensor::from_values(&[b, n, 2 * j], inputs)?,
        Tensor::from_values(&[b, 3 * j], targets)?,
    ))
}

/// Protocol 1 MPJPE of plain forward passes over a window set (no flip
/// augmentation), in mm.
fn validation_mpjpe(
    model: &LiftFormerModel<f32>,
    windows: &[&Window],
    spec: &SkeletonSpec,
) -> Result<f64> {
    let n = model.config().receptive_field;
    let mut total = 0.0f64;
    let mut count = 0usize;
    for chunk in windows.chunks(256) {
        let flips = vec![false; chunk.len()];
        let (inputs, _) = window_batch_tensors::<f32>(chunk, &flips, spec, n)?;
        let out = model.forward(&inputs)?;
        let values = out.values();
        let width = 3 * spec.joint_count;
        for (w, row) in chunk.iter().zip(values.chunks(width)) {
            let pred = model.output_to_pose(row)?;
            let gt = Pose3D::new(w.target.clone().unwrap())?;
            total += crate::metrics::mpjpe(&pred, &gt)?;
            count += 1;
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Train on every windowed frame of `sequences` (which must carry 3D
/// targets). Deterministic for a fixed seed: shuffling, flip augmentation and
/// dropout all draw from seeded streams. The model is left at the
/// best-by-validation parameters when validation is enabled, otherwise at the
/// final step. `sink` receives every log line as it is produced.
pub fn train(
    model: &LiftFormerModel<f32>,
    sequences: &[PoseSequence],
    config: &TrainConfig,
    mut sink: impl FnMut(&StepLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    if sequences.is_empty() {
        return Err(Error::data("training needs at least one sequence"));
    }
    let spec = sequences[0].skeleton.clone();
    let n = model.config().receptive_field;
    if spec.joint_count != model.config().joints {
        return Err(Error::shape(format!(
            "data skeleton '{}' has {} joints, model wants {}",
            spec.name,
            spec.joint_count,
            model.config().joints
        )));
    }

    let mut windows: Vec<Window> = Vec::new();
    for seq in sequences {
        if seq.skeleton != spec {
            return Err(Error::data("all training sequences must share one skeleton"));
        }
        if seq.frames_3d.is_none() {
            return Err(Error::data(format!(
                "sequence '{}/{}' has no 3D targets",
                seq.subject, seq.action
            )));
        }
        windows.extend(extract_windows(seq, n)?);
    }

    let seed = config.resolved_seed();
    let mut split_rng = seeded_stream(seed, 0);
    let mut shuffle_rng = seeded_stream(seed, 1);
    let mut flip_rng = seeded_stream(seed, 2);
    let mut dropout_rng = seeded_stream(seed, 3);

    // Window-level held-out split for validation.
    let mut indices: Vec<usize> = (0..windows.len()).collect();
    indices.shuffle(&mut split_rng);
    let val_count = ((windows.len() as f64) * config.val_fraction).floor() as usize;
    let (val_idx, train_idx) = indices.split_at(val_count);
    let mut train_idx: Vec<usize> = train_idx.to_vec();
    if train_idx.is_empty() {
        return Err(Error::data("no training windows left after the validation split"));
    }

    let batch_size = config
        .batch_size
        .unwrap_or_else(|| TrainConfig::default_batch_size(n))
        .min(train_idx.len());

    let params = model.parameters();
    let mut optimizer = OptimizerState::new(&params);
    let adam = AdamParams::from(config);

    let mut log = Vec::new();
    let mut final_train_loss = f64::INFINITY;
    let mut best_val: Option<f64> = None;
    let mut best_params: Option<Vec<Vec<f32>>> = None;
    let mut global_step = 0usize;

    'training: for epoch in 0..config.epochs {
        train_idx.shuffle(&mut shuffle_rng);
        for batch in train_idx.chunks(batch_size) {
            global_step += 1;
            let batch_windows: Vec<&Window> = batch.iter().map(|&i| &windows[i]).collect();
            let flips: Vec<bool> = batch
                .iter()
                .map(|_| config.flip_augmentation && flip_rng.gen::<bool>())
                .collect();
            let (inputs, targets) =
                window_batch_tensors::<f32>(&batch_windows, &flips, &spec, n)?;

            for (_, p) in &params {
                p.zero_grad();
            }
            let pred = model.forward_training(&inputs, &mut dropout_rng)?;
            let loss = mpjpe_loss(&pred, &targets)?;
            let loss_value = loss.values()[0] as f64;
            if !loss_value.is_finite() {
                return Err(Error::numerical(format!(
                    "training loss diverged at step {global_step}"
                )));
            }
            loss.backward()?;
            let lr = noam_lr(global_step, model.config().hidden_dim, config.lr_factor, config.warmup_steps)?;
            optimizer.apply_step(&params, lr, &adam)?;

            final_train_loss = loss_value;
            let is_epoch_end = global_step % train_idx.len().div_ceil(batch_size) == 0;
            let mut entry = StepLog {
                step: global_step,
                epoch,
                lr,
                train_loss: loss_value,
                val_mpjpe: None,
            };
            if is_epoch_end && !val_idx.is_empty() {
                let val_windows: Vec<&Window> = val_idx.iter().map(|&i| &windows[i]).collect();
                let val = validation_mpjpe(model, &val_windows, &spec)?;
                entry.val_mpjpe = Some(val);
                if best_val.map_or(true, |b| val < b) {
                    best_val = Some(val);
                    best_params = Some(params.iter().map(|(_, t)| t.values()).collect());
                }
            }
            sink(&entry);
            log.push(entry);

            if let Some(max) = config.max_steps {
                if global_step >= max {
                    break 'training;
                }
            }
        }
    }

    // Leave the model at its best validation state.
    if let Some(best) = best_params {
        for ((_, t), values) in params.iter().zip(&best) {
            t.set_values(values)?;
        }
    }

    Ok(TrainOutcome {
        log,
        final_train_loss,
        best_val_mpjpe: best_val,
        val_windows: val_idx.len(),
    })
}

fn seeded_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Average of the plain prediction and the un-flipped prediction of the
/// flipped window. The averaged predictor commutes with `flip_pose` exactly.
pub fn predict_with_flip_average(
    model: &LiftFormerModel<f32>,
    window: &Window,
    spec: &SkeletonSpec,
) -> Result<Pose3D> {
    let outputs = predict_batch_with_flip_average(model, std::slice::from_ref(window), spec)?;
    Ok(outputs.into_iter().next().unwrap())
}

/// Batched version of [`predict_with_flip_average`], one pose per window.
pub fn predict_batch_with_flip_average(
    model: &LiftFormerModel<f32>,
    windows: &[Window],
    spec: &SkeletonSpec,
) -> Result<Vec<Pose3D>> {
    let n = model.config().receptive_field;
    let j = spec.joint_count;
    if j != model.config().joints {
        return Err(Error::shape(format!(
            "skeleton '{}' has {} joints, model wants {}",
            spec.name,
            j,
            model.config().joints
        )));
    }
    let mut poses = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(128) {
        let refs: Vec<&Window> = chunk.iter().collect();
        let plain_flags = vec![false; refs.len()];
        let flip_flags = vec![true; refs.len()];
        let (plain_in, _) = inference_batch::<f32>(&refs, &plain_flags, spec, n)?;
        let (flipped_in, _) = inference_batch::<f32>(&refs, &flip_flags, spec, n)?;
        let plain_out = model.forward(&plain_in)?.values();
        let flipped_out = model.forward(&flipped_in)?.values();
        let width = 3 * j;
        for (row_p, row_f) in plain_out.chunks(width).zip(flipped_out.chunks(width)) {
            let direct = model.output_to_pose(row_p)?;
            let mirrored = model.output_to_pose(row_f)?.flipped(spec)?;
            let coords = direct
                .coords
                .iter()
                .zip(&mirrored.coords)
                .map(|(a, b)| {
                    [
                        0.5 * (a[0] + b[0]),
                        0.5 * (a[1] + b[1]),
                        0.5 * (a[2] + b[2]),
                    ]
                })
                .collect();
            poses.push(Pose3D::new(coords)?);
        }
    }
    Ok(poses)
}

// Like window_batch_tensors but tolerates missing targets.
fn inference_batch<S: Scalar>(
    windows: &[&Window],
    flip: &[bool],
    spec: &SkeletonSpec,
    n: usize,
) -> Result<(Tensor<S>, ())> {
    let b = windows.len();
    let j = spec.joint_count;
    let mut inputs = Vec::with_capacity(b * n * 2 * j);
    for (w, &do_flip) in windows.iter().zip(flip) {
        let w = if do_flip { flip_window(w, spec)? } else { (*w).clone() };
        inputs.extend(w.flat_inputs().iter().map(|&v| S::from_f64(v)));
    }
    Ok((Tensor::from_values(&[b, n, 2 * j], inputs)?, ()))
}

/// Lift every frame of a sequence in sliding-window fashion with flip
/// averaging. Output order matches the input frames.
pub fn lift_sequence(
    model: &LiftFormerModel<f32>,
    seq: &PoseSequence,
) -> Result<Vec<Pose3D>> {
    if seq.skeleton.joint_count != model.config().joints {
        return Err(Error::shape(format!(
            "sequence skeleton '{}' has {} joints, model wants {}",
            seq.skeleton.name,
            seq.skeleton.joint_count,
            model.config().joints
        )));
    }
    let windows = extract_windows(seq, model.config().receptive_field)?;
    predict_batch_with_flip_average(model, &windows, &seq.skeleton)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_sequence, MotionParams};
    use crate::model::ModelConfig;

    fn tiny_model(seed: u64) -> LiftFormerModel<f32> {
        let config = ModelConfig {
            hidden_dim: 16,
            heads: 4,
            blocks: 2,
            ffn_dim: 32,
            receptive_field: 5,
            joints: 17,
            share_attention: false,
            dropout_p: 0.1,
            causal: false,
            output_token: Default::default(),
        };
        LiftFormerModel::build(&config, seed).unwrap()
    }

    fn quick_train_config() -> TrainConfig {
        TrainConfig {
            epochs: 2,
            batch_size: Some(8),
            warmup_steps: 10,
            lr_factor: 0.5,
            seed: Some(3),
            max_steps: Some(12),
            val_fraction: 0.2,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn loss_zero_on_equal_and_offset_is_norm() {
        let pred = Tensor::<f64>::from_values(&[2, 6], vec![1.0; 12]).unwrap();
        assert_eq!(mpjpe_loss(&pred, &pred).unwrap().values()[0], 0.0);

        let base: Vec<f64> = (0..12).map(|i| i as f64).collect();
        let shifted: Vec<f64> = base
            .chunks(3)
            .flat_map(|c| [c[0] + 3.0, c[1] + 4.0, c[2]])
            .collect();
        let gt = Tensor::<f64>::from_values(&[2, 6], base).unwrap();
        let pr = Tensor::<f64>::from_values(&[2, 6], shifted).unwrap();
        assert!((mpjpe_loss(&pr, &gt).unwrap().values()[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn noam_matches_closed_form_and_peak() {
        let lr = noam_lr(1000, 512, 12.0, 1000).unwrap();
        let expect = 12.0 * (512f64).powf(-0.5) * (1000f64).powf(-0.5);
        assert!((lr - expect).abs() < 1e-15);
        assert!((lr - 0.016771).abs() < 1e-6);

        // Continuity at the peak: both branches agree.
        let before = noam_lr(999, 512, 12.0, 1000).unwrap();
        let after = noam_lr(1001, 512, 12.0, 1000).unwrap();
        assert!(before < lr && after < lr);
        let linear = 12.0 * (512f64).powf(-0.5) * 1000.0 * (1000f64).powf(-1.5);
        assert!((linear - lr).abs() < 1e-12);

        // Inverse square-root decay.
        let ratio = noam_lr(2000, 512, 12.0, 1000).unwrap() / lr;
        assert!((ratio - 1.0 / 2f64.sqrt()).abs() < 1e-12);

        assert!(noam_lr(0, 512, 12.0, 1000).is_err());
    }

    #[test]
    fn noam_increases_then_decreases() {
        let mut prev = 0.0;
        for step in 1..=1000 {
            let lr = noam_lr(step, 64, 1.0, 1000).unwrap();
            assert!(lr > prev, "must increase during warmup");
            prev = lr;
        }
        for step in 1001..=2000 {
            let lr = noam_lr(step, 64, 1.0, 1000).unwrap();
            assert!(lr < prev, "must decrease after warmup");
            prev = lr;
        }
    }

    /// Put an exact gradient on a scalar parameter via the graph:
    /// d/dp of (g * p) is g regardless of p.
    fn push_grad(param: &Tensor<f64>, g: f64) {
        param.scale(g).sum_all().backward().unwrap();
    }

    #[test]
    fn adam_first_step_hand_value() {
        // Bias correction makes the first normalized update have magnitude
        // close to lr: param 1.0, grad 2.0, lr 0.001 -> 0.999.
        let param = Tensor::<f64>::parameter(&[1], vec![1.0]).unwrap();
        let params = vec![("p".to_string(), param.clone())];
        let mut state = OptimizerState::new(&params);
        push_grad(&param, 2.0);
        state
            .apply_step(
                &params,
                0.001,
                &AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: true },
            )
            .unwrap();
        assert!((param.values()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn adam_no_grad_no_change() {
        let param = Tensor::<f64>::parameter(&[2], vec![1.5, -0.5]).unwrap();
        let params = vec![("p".to_string(), param.clone())];
        let mut state = OptimizerState::new(&params);
        for _ in 0..5 {
            state
                .apply_step(
                    &params,
                    0.01,
                    &AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: true },
                )
                .unwrap();
        }
        assert_eq!(param.values(), vec![1.5, -0.5]);
    }

    #[test]
    fn adam_update_magnitude_is_scale_free() {
        // Identical gradient sign patterns at wildly different scales give
        // identical update trajectories; the first normalized update never
        // exceeds lr.
        let lr = 0.001;
        let adam = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-12, amsgrad: true };
        let pattern = [1.0, -2.0, 0.5, 3.0, -1.0, 1.0];
        let mut trajectories = Vec::new();
        for scale in [1e-6, 1.0, 1e6] {
            let param = Tensor::<f64>::parameter(&[1], vec![0.0]).unwrap();
            let params = vec![("p".to_string(), param.clone())];
            let mut state = OptimizerState::new(&params);
            let mut deltas = Vec::new();
            let mut prev = 0.0;
            for g in pattern {
                param.zero_grad();
                push_grad(&param, g * scale);
                state.apply_step(&params, lr, &adam).unwrap();
                let now = param.values()[0];
                deltas.push(now - prev);
                prev = now;
            }
            assert!(deltas[0].abs() <= lr * (1.0 + 1e-9), "first step bounded by lr");
            trajectories.push(deltas);
        }
        for k in 0..pattern.len() {
            assert!((trajectories[0][k] - trajectories[1][k]).abs() < 1e-9);
            assert!((trajectories[1][k] - trajectories[2][k]).abs() < 1e-9);
        }
    }

    #[test]
    fn amsgrad_denominator_is_monotone() {
        let param = Tensor::<f64>::parameter(&[1], vec![0.0]).unwrap();
        let params = vec![("p".to_string(), param.clone())];
        let mut state = OptimizerState::new(&params);
        let adam = AdamParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, amsgrad: true };
        let mut prev_vmax = 0.0;
        for g in [5.0, 1.0, 0.1, 0.01, 2.0, 0.0] {
            param.zero_grad();
            push_grad(&param, g);
            state.apply_step(&params, 0.001, &adam).unwrap();
            assert!(state.v_max[0][0] >= prev_vmax);
            prev_vmax = state.v_max[0][0];
        }
    }

    #[test]
    fn training_is_reproducible_and_loss_finite() {
        let seq = synth_sequence(1, 40, &SkeletonSpec::h36m_17(), &MotionParams::default()).unwrap();
        let config = quick_train_config();

        let model_a = tiny_model(7);
        let run_a = train(&model_a, &[seq.clone()], &config, |_| {}).unwrap();
        let model_b = tiny_model(7);
        let run_b = train(&model_b, &[seq.clone()], &config, |_| {}).unwrap();

        assert_eq!(run_a.log.len(), run_b.log.len());
        for (a, b) in run_a.log.iter().zip(&run_b.log) {
            assert_eq!(a.train_loss, b.train_loss, "loss curves must be identical");
            assert_eq!(a.val_mpjpe, b.val_mpjpe);
        }
        for ((_, ta), (_, tb)) in model_a.parameters().iter().zip(model_b.parameters()) {
            assert_eq!(ta.values(), tb.values());
        }
        assert!(run_a.log[0].train_loss.is_finite() && run_a.log[0].train_loss > 0.0);
    }

    #[test]
    fn training_rejects_bad_input() {
        let model = tiny_model(1);
        let config = quick_train_config();
        assert!(train(&model, &[], &config, |_| {}).is_err());

        let mut no3d = synth_sequence(2, 10, &SkeletonSpec::h36m_17(), &MotionParams::default())
            .unwrap();
        no3d.frames_3d = None;
        assert!(train(&model, &[no3d], &config, |_| {}).is_err());

        let bad_batch = TrainConfig { batch_size: Some(0), ..quick_train_config() };
        let seq = synth_sequence(3, 10, &SkeletonSpec::h36m_17(), &MotionParams::default()).unwrap();
        assert!(train(&model, &[seq], &bad_batch, |_| {}).is_err());
    }

    #[test]
    fn flip_average_equals_mean_of_branches() {
        let model = tiny_model(5);
        let spec = SkeletonSpec::h36m_17();
        let seq = synth_sequence(9, 12, &spec, &MotionParams::default()).unwrap();
        let windows = extract_windows(&seq, 5).unwrap();
        let w = &windows[6];

        let averaged = predict_with_flip_average(&model, w, &spec).unwrap();

        // Recompute both branches independently.
        let plain_in = Tensor::<f32>::from_values(
            &[5, 34],
            w.flat_inputs().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let direct = model.output_to_pose(&model.forward(&plain_in).unwrap().values()).unwrap();
        let flipped_w = flip_window(w, &spec).unwrap();
        let flip_in = Tensor::<f32>::from_values(
            &[5, 34],
            flipped_w.flat_inputs().iter().map(|&v| v as f32).collect(),
        )
        .unwrap();
        let mirrored = model
            .output_to_pose(&model.forward(&flip_in).unwrap().values())
            .unwrap()
            .flipped(&spec)
            .unwrap();
        for ((avg, a), b) in averaged.coords.iter().zip(&direct.coords).zip(&mirrored.coords) {
            for k in 0..3 {
                assert!((avg[k] - 0.5 * (a[k] + b[k])).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn flip_average_commutes_with_flip() {
        let model = tiny_model(6);
        let spec = SkeletonSpec::h36m_17();
        let seq = synth_sequence(10, 9, &spec, &MotionParams::default()).unwrap();
        let windows = extract_windows(&seq, 5).unwrap();
        for w in windows.iter().take(4) {
            let of_flip = predict_with_flip_average(&model, &flip_window(w, &spec).unwrap(), &spec)
                .unwrap();
            let flip_of = predict_with_flip_average(&model, w, &spec)
                .unwrap()
                .flipped(&spec)
                .unwrap();
            for (a, b) in of_flip.coords.iter().zip(&flip_of.coords) {
                for k in 0..3 {
                    assert!((a[k] - b[k]).abs() < 1e-6, "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn flip_equivariant_model_reduces_to_plain_forward() {
        // Zeroing the output projection makes the model exactly
        // flip-equivariant (constant zero output), so averaging changes
        // nothing relative to the plain forward pass.
        let model = tiny_model(8);
        for (name, t) in model.parameters() {
            if name.starts_with("output_proj") {
                t.values_mut(|v| v.iter_mut().for_each(|x| *x = 0.0));
            }
        }
        let spec = SkeletonSpec::h36m_17();
        let seq = synth_sequence(11, 7, &spec, &MotionParams::default()).unwrap();
        let w = &extract_windows(&seq, 5).unwrap()[3];
        let averaged = predict_with_flip_average(&model, w, &spec).unwrap();
        assert!(averaged.coords.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn lift_sequence_shapes_and_constant_input() {
        let model = tiny_model(4);
        let spec = SkeletonSpec::h36m_17();
        let mut seq = synth_sequence(13, 11, &spec, &MotionParams::default()).unwrap();
        let lifted = lift_sequence(&model, &seq).unwrap();
        assert_eq!(lifted.len(), seq.len());

        // Constant 2D input: every window is identical, so is every output.
        let frame = seq.frames_2d[0].clone();
        seq.frames_2d = vec![frame; 11];
        seq.frames_3d = None;
        let lifted = lift_sequence(&model, &seq).unwrap();
        for pose in &lifted[1..] {
            assert_eq!(pose.coords, lifted[0].coords);
        }
    }

    #[test]
    fn lift_rejects_skeleton_mismatch() {
        let model = tiny_model(4); // expects 17 joints
        let seq = synth_sequence(1, 5, &SkeletonSpec::eva_15(), &MotionParams::default()).unwrap();
        assert!(lift_sequence(&model, &seq).is_err());
    }

    #[test]
    fn lifted_synthetic_sequence_has_finite_velocity_error() {
        let model = tiny_model(2);
        let spec = SkeletonSpec::h36m_17();
        let seq = synth_sequence(17, 10, &spec, &MotionParams::default()).unwrap();
        let lifted = lift_sequence(&model, &seq).unwrap();
        let gt: Vec<Pose3D> = seq
            .frames_3d
            .as_ref()
            .unwrap()
            .iter()
            .map(|f| Pose3D::new(f.clone()).unwrap())
            .collect();
        let v = crate::metrics::mpjve(&lifted, &gt).unwrap();
        assert!(v.is_finite());
    }
}
