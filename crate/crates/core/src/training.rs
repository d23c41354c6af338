//! Loss, regularization, clipping, Adam and the epoch loop with
//! validation-based model selection.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::KeyValues;
use crate::dataset::{DatasetSplit, SequenceSample};
use crate::error::{bail, Result};
use crate::grid::{ClassMap, ProbMap};
use crate::metrics::ConfusionCounts;
use crate::nn::{layers::sigmoid, Mode, ParamStore, Scalar, Tensor, UNet};

/// Probabilities are kept this far from 0 and 1 inside the logarithms.
pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr_initial: f64,
    pub lr_after: f64,
    pub delta_initial: f64,
    pub delta_after: f64,
    /// Last epoch (1-based) that uses the initial rates.
    pub switch_epoch: usize,
    pub batch_size: usize,
    /// Target positive proportion used when the dataset is built.
    pub eta: f64,
    pub clip_threshold: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            lr_initial: 0.0008,
            lr_after: 0.0001,
            delta_initial: 1e-5,
            delta_after: 5e-5,
            switch_epoch: 4,
            batch_size: 16,
            eta: 0.9,
            clip_threshold: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_initial", self.lr_initial),
            ("lr_after", self.lr_after),
            ("delta_initial", self.delta_initial),
            ("delta_after", self.delta_after),
            ("clip_threshold", self.clip_threshold),
            ("adam_eps", self.adam_eps),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                bail!(Config, "train.{name} must be positive, got {v}");
            }
        }
        if self.epochs == 0 || self.batch_size == 0 {
            bail!(Config, "train.epochs and train.batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            bail!(Config, "Adam betas must lie in [0, 1)");
        }
        if !(0.0..=1.0).contains(&self.eta) {
            bail!(Config, "train.eta must lie in [0, 1]");
        }
        Ok(())
    }

    /// Learning rate and regularization weight for a 1-based epoch.
    pub fn schedule(&self, epoch: usize) -> (f64, f64) {
        if epoch <= self.switch_epoch {
            (self.lr_initial, self.delta_initial)
        } else {
            (self.lr_after, self.delta_after)
        }
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrainConfig::default();
        let cfg = TrainConfig {
            epochs: kv.get_or("train.epochs", d.epochs)?,
            lr_initial: kv.get_or("train.lr_initial", d.lr_initial)?,
            lr_after: kv.get_or("train.lr_after", d.lr_after)?,
            delta_initial: kv.get_or("train.delta_initial", d.delta_initial)?,
            delta_after: kv.get_or("train.delta_after", d.delta_after)?,
            switch_epoch: kv.get_or("train.switch_epoch", d.switch_epoch)?,
            batch_size: kv.get_or("train.batch_size", d.batch_size)?,
            eta: kv.get_or("train.eta", d.eta)?,
            clip_threshold: kv.get_or("train.clip", d.clip_threshold)?,
            beta1: kv.get_or("train.beta1", d.beta1)?,
            beta2: kv.get_or("train.beta2", d.beta2)?,
            adam_eps: kv.get_or("train.adam_eps", d.adam_eps)?,
            seed: kv.get_or("train.seed", d.seed)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("train.epochs", self.epochs);
        kv.set("train.lr_initial", self.lr_initial);
        kv.set("train.lr_after", self.lr_after);
        kv.set("train.delta_initial", self.delta_initial);
        kv.set("train.delta_after", self.delta_after);
        kv.set("train.switch_epoch", self.switch_epoch);
        kv.set("train.batch_size", self.batch_size);
        kv.set("train.eta", self.eta);
        kv.set("train.clip", self.clip_threshold);
        kv.set("train.beta1", self.beta1);
        kv.set("train.beta2", self.beta2);
        kv.set("train.adam_eps", self.adam_eps);
        kv.set("train.seed", self.seed);
        kv
    }
}

fn bce_term(p: f64, t: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
}

/// Binary cross-entropy averaged over classes and pixels.
pub fn bce_loss(pred: &ProbMap, target: &ClassMap) -> Result<f64> {
    if (pred.n_classes(), pred.height(), pred.width()) != (target.n_classes(), target.height(), target.width()) {
        bail!(Shape, "prediction and target differ in shape");
    }
    let n = pred.probs().len();
    let sum: f64 = pred.probs().iter().zip(target.labels()).map(|(&p, &t)| bce_term(p as f64, t as f64)).sum();
    Ok(sum / n as f64)
}

/// Mean cross-entropy of `sigmoid(logits)` against `targets` (0/1 values
/// of the same shape) and its gradient with respect to the logits,
/// `(P - T) / N`.
pub fn bce_with_logits<T: Scalar>(logits: &Tensor<T>, targets: &[T]) -> Result<(f64, Tensor<T>)> {
    if logits.data().len() != targets.len() {
        bail!(Shape, "{} logits but {} targets", logits.data().len(), targets.len());
    }
    let n = targets.len() as f64;
    let inv_n = T::from_f64_lossy(1.0 / n);
    let mut grad = Tensor::zeros(logits.shape());
    let mut sum = 0.0;
    for ((g, &s), &t) in grad.data_mut().iter_mut().zip(logits.data()).zip(targets) {
        let p = sigmoid(s);
        sum += bce_term(p.as_f64(), t.as_f64());
        *g = (p - t) * inv_n;
    }
    Ok((sum / n, grad))
}

/// `(delta / N) * sum(theta^2)` over trainable parameters; with
/// `accumulate` its gradient `2 delta theta / N` is added to the
/// parameter gradients.
pub fn l2_regularization<T: Scalar>(params: &mut ParamStore<T>, delta: f64, accumulate: bool) -> f64 {
    let n = params.n_trainable();
    if n == 0 {
        return 0.0;
    }
    let scale = delta / n as f64;
    let two = T::from_f64_lossy(2.0 * scale);
    let mut sum = 0.0;
    for p in params.iter_mut().filter(|p| p.trainable) {
        sum += p.value.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>();
        if accumulate {
            p.grad.iter_mut().zip(&p.value).for_each(|(g, v)| *g += two * *v);
        }
    }
    scale * sum
}

pub fn global_grad_norm<T: Scalar>(params: &ParamStore<T>) -> f64 {
    params
        .iter()
        .filter(|p| p.trainable)
        .flat_map(|p| p.grad.iter())
        .map(|g| g.as_f64() * g.as_f64())
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so that their global L2 norm is at most
/// `threshold`. Returns the factor applied (1 when untouched).
pub fn clip_gradients<T: Scalar>(params: &mut ParamStore<T>, threshold: f64) -> f64 {
    let norm = global_grad_norm(params);
    if !(norm > threshold) {
        return 1.0;
    }
    let factor = threshold / norm;
    let f = T::from_f64_lossy(factor);
    for p in params.iter_mut().filter(|p| p.trainable) {
        p.grad.iter_mut().for_each(|g| *g *= f);
    }
    factor
}

/// One bias-corrected Adam update; `t` is the 1-based step number.
pub fn adam_step<T: Scalar>(params: &mut ParamStore<T>, lr: f64, t: u64, cfg: &TrainConfig) {
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powf(t as f64);
    let c2 = 1.0 - b2.powf(t as f64);
    let (tb1, tb2) = (T::from_f64_lossy(b1), T::from_f64_lossy(b2));
    let (ob1, ob2) = (T::from_f64_lossy(1.0 - b1), T::from_f64_lossy(1.0 - b2));
    let step = T::from_f64_lossy(lr / c1);
    let inv_c2 = T::from_f64_lossy(1.0 / c2);
    let eps = T::from_f64_lossy(cfg.adam_eps);
    for p in params.iter_mut().filter(|p| p.trainable) {
        for i in 0..p.value.len() {
            let g = p.grad[i];
            p.m[i] = tb1 * p.m[i] + ob1 * g;
            p.v[i] = tb2 * p.v[i] + ob2 * g * g;
            p.value[i] -= step * p.m[i] / ((p.v[i] * inv_c2).sqrt() + eps);
        }
    }
}

/// Stacks samples into an input tensor and flat 0/1 targets.
pub fn batch_tensors<T: Scalar>(samples: &[&SequenceSample]) -> Result<(Tensor<T>, Vec<T>)> {
    let Some(first) = samples.first() else {
        bail!(Empty, "empty batch");
    };
    let (c, h, w) = (first.channels, first.height, first.width);
    let mut input = Vec::with_capacity(samples.len() * c * h * w);
    let mut target = Vec::with_capacity(samples.len() * first.target.labels().len());
    for s in samples {
        if (s.channels, s.height, s.width) != (c, h, w) {
            bail!(Shape, "samples in a batch differ in shape");
        }
        input.extend(s.input.iter().map(|&x| T::from_f64_lossy(x as f64)));
        target.extend(s.target.labels().iter().map(|&l| if l != 0 { T::one() } else { T::zero() }));
    }
    Ok((Tensor::new([samples.len(), c, h, w], input)?, target))
}

/// Evaluation-mode probability maps for `samples`, in order.
pub fn predict_samples(net: &UNet<f32>, samples: &[Arc<SequenceSample>], batch_size: usize) -> Result<Vec<ProbMap>> {
    let mut out = Vec::with_capacity(samples.len());
    let m = net.config().n_classes;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&SequenceSample> = chunk.iter().map(|s| s.as_ref()).collect();
        let (x, _) = batch_tensors::<f32>(&refs)?;
        let p = net.predict(&x)?;
        for (k, s) in chunk.iter().enumerate() {
            out.push(ProbMap::new(m, s.height, s.width, p.sample(k).to_vec())?);
        }
    }
    Ok(out)
}

/// Per-sample confusion counts of the network on `samples`.
pub fn confusion_per_sample(
    net: &UNet<f32>,
    samples: &[Arc<SequenceSample>],
    batch_size: usize,
) -> Result<Vec<ConfusionCounts>> {
    let preds = predict_samples(net, samples, batch_size)?;
    let m = net.config().n_classes;
    preds
        .iter()
        .zip(samples)
        .map(|(p, s)| {
            let mut c = ConfusionCounts::new(m);
            c.accumulate(p, &s.target)?;
            Ok(c)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub delta: f64,
    pub steps: usize,
    /// Mean cross-entropy plus regularization over the epoch's batches.
    pub train_loss: f64,
    /// Validation F1 per class; `None` when undefined.
    pub val_f1: Vec<Option<f64>>,
}

impl EpochRecord {
    /// Unweighted mean of the per-class validation F1, undefined scores
    /// counting as zero.
    pub fn mean_val_f1(&self) -> f64 {
        if self.val_f1.is_empty() {
            return 0.0;
        }
        self.val_f1.iter().map(|f| f.unwrap_or(0.0)).sum::<f64>() / self.val_f1.len() as f64
    }
}

/// 1-based epoch with the highest score; the earliest wins ties.
pub fn select_best_epoch(scores: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &s) in scores.iter().enumerate() {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((i, s));
        }
    }
    best.map(|(i, _)| i + 1)
}

pub fn render_history_csv(history: &[EpochRecord]) -> String {
    let m = history.first().map_or(0, |r| r.val_f1.len());
    let mut out = String::from("epoch,lr,delta,steps,train_loss");
    for c in 1..=m {
        out.push_str(&format!(",val_f1_class{c}"));
    }
    out.push_str(",val_f1_mean\n");
    for r in history {
        out.push_str(&format!("{},{},{},{},{:.6}", r.epoch, r.lr, r.delta, r.steps, r.train_loss));
        for f in &r.val_f1 {
            match f {
                Some(f) => out.push_str(&format!(",{f:.6}")),
                None => out.push_str(",undefined"),
            }
        }
        out.push_str(&format!(",{:.6}\n", r.mean_val_f1()));
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Network with the parameters of the selected epoch.
    pub best: UNet<f32>,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// One optimizer step on a batch; returns the loss before the update.
pub fn train_step(
    net: &mut UNet<f32>,
    batch: &[&SequenceSample],
    lr: f64,
    delta: f64,
    step: u64,
    cfg: &TrainConfig,
) -> Result<f64> {
    let (x, t) = batch_tensors::<f32>(batch)?;
    let logits = net.forward(&x, Mode::Train)?;
    let (bce, dlogits) = bce_with_logits(&logits, &t)?;
    net.params_mut().zero_grad();
    net.backward(&dlogits)?;
    let reg = l2_regularization(net.params_mut(), delta, true);
    let loss = bce + reg;
    if !loss.is_finite() {
        bail!(Divergence, "loss became {loss} at step {step}");
    }
    clip_gradients(net.params_mut(), cfg.clip_threshold);
    adam_step(net.params_mut(), lr, step, cfg);
    Ok(loss)
}

/// Trains `net` on `split.train`, scoring `split.validation` after every
/// epoch and keeping the parameters with the best mean validation F1.
pub fn train(mut net: UNet<f32>, split: &DatasetSplit, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() || split.validation.is_empty() {
        bail!(Empty, "training needs non-empty training and validation sets");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..split.train.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, ParamStore<f32>)> = None;
    for epoch in 1..=cfg.epochs {
        let (lr, delta) = cfg.schedule(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&SequenceSample> = chunk.iter().map(|&i| split.train[i].as_ref()).collect();
            step += 1;
            loss_sum += train_step(&mut net, &batch, lr, delta, step, cfg)? * batch.len() as f64;
            steps += 1;
        }
        let train_loss = loss_sum / split.train.len() as f64;
        let counts = ConfusionCounts::pooled(
            net.config().n_classes,
            &confusion_per_sample(&net, &split.validation, cfg.batch_size)?,
        )?;
        let val_f1: Vec<Option<f64>> = counts.classes().iter().map(|c| c.f1()).collect();
        let record = EpochRecord { epoch, lr, delta, steps, train_loss, val_f1 };
        let score = record.mean_val_f1();
        log::info!("epoch {epoch}: lr={lr} loss={train_loss:.5} val_f1_mean={score:.4}");
        if best.as_ref().is_none_or(|(_, b, _)| score > *b) {
            best = Some((epoch, score, net.params().clone()));
        }
        history.push(record);
    }
    let (best_epoch, _, params) = best.unwrap();
    *net.params_mut() = params;
    Ok(TrainOutcome { best: net, best_epoch, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::UNetConfig;
    use rand::Rng;

    #[test]
    fn bce_closed_forms() {
        let target = ClassMap::new(2, 1, 2, vec![1, 0, 1, 1], vec![true, true]).unwrap();
        let perfect = ProbMap::new(2, 1, 2, vec![1.0, 0.0, 1.0, 1.0]).unwrap();
        assert!(bce_loss(&perfect, &target).unwrap() < 1e-5);
        let half = ProbMap::new(2, 1, 2, vec![0.5; 4]).unwrap();
        assert!((bce_loss(&half, &target).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        let wrong = ProbMap::new(2, 1, 2, vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((bce_loss(&wrong, &target).unwrap() + (PROB_CLAMP).ln()).abs() < 1e-6);
    }

    #[test]
    fn logit_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let logits = Tensor::<f64>::new([2, 3, 2, 2], (0..24).map(|_| rng.random_range(-4.0..4.0)).collect()).unwrap();
        let t: Vec<f64> = (0..24).map(|_| rng.random_range(0..2) as f64).collect();
        let (_, g) = bce_with_logits(&logits, &t).unwrap();
        for q in 0..24 {
            let p = sigmoid(logits.data()[q]);
            assert!((g.data()[q] - (p - t[q]) / 24.0).abs() < 1e-15);
            let mut a = logits.clone();
            a.data_mut()[q] += 1e-6;
            let mut b = logits.clone();
            b.data_mut()[q] -= 1e-6;
            let num = (bce_with_logits(&a, &t).unwrap().0 - bce_with_logits(&b, &t).unwrap().0) / 2e-6;
            assert!((num - g.data()[q]).abs() < 1e-8);
        }
    }

    fn store(values: &[f64]) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", &[values.len()], values.to_vec(), true);
        s.add("running_var", &[1], vec![100.0], false);
        s
    }

    #[test]
    fn l2_value_gradient_and_running_stats() {
        let mut s = store(&[2.0]);
        assert!((l2_regularization(&mut s, 1e-5, true) - 4e-5).abs() < 1e-18);
        assert!((s.get(0).grad[0] - 4e-5).abs() < 1e-18);
        assert_eq!(l2_regularization(&mut store(&[0.0, 0.0]), 1.0, false), 0.0);
        // Finite differences on a vector.
        let vals = [0.3, -1.2, 2.5];
        let mut s = store(&vals);
        l2_regularization(&mut s, 0.7, true);
        for i in 0..3 {
            let mut up = vals;
            up[i] += 1e-6;
            let mut dn = vals;
            dn[i] -= 1e-6;
            let num = (l2_regularization(&mut store(&up), 0.7, false) - l2_regularization(&mut store(&dn), 0.7, false))
                / 2e-6;
            assert!((num - s.get(0).grad[i]).abs() < 1e-8);
        }
        assert!(s.iter().filter(|p| p.name.starts_with("running")).all(|p| !p.trainable && p.grad.is_empty()));
    }

    #[test]
    fn clipping_cases() {
        let mut s = store(&[0.0, 0.0]);
        s.get_mut(0).grad = vec![0.03, 0.04];
        assert_eq!(clip_gradients(&mut s, 0.1), 1.0);
        s.get_mut(0).grad = vec![0.6, 0.8];
        assert!((clip_gradients(&mut s, 0.1) - 0.1).abs() < 1e-12);
        assert!((global_grad_norm(&s) - 0.1).abs() < 1e-6);
        s.get_mut(0).grad = vec![0.0, 0.0];
        assert_eq!(clip_gradients(&mut s, 0.1), 1.0);
    }

    #[test]
    fn adam_first_step_and_zero_gradient() {
        let cfg = TrainConfig::default();
        let mut s = store(&[1.0, 1.0, 1.0]);
        s.get_mut(0).grad = vec![0.5, -2.0, 1e-3];
        adam_step(&mut s, 0.001, 1, &cfg);
        for (v, g) in s.get(0).value.iter().zip([0.5f64, -2.0, 1e-3]) {
            let expect = 1.0 - 0.001 * g / (g.abs() + 1e-8);
            assert!((v - expect).abs() < 1e-12, "{v} vs {expect}");
        }
        let mut z = store(&[0.4, -0.2]);
        for t in 1..50 {
            adam_step(&mut z, 0.01, t, &cfg);
        }
        assert_eq!(z.get(0).value, vec![0.4, -0.2]);
    }

    #[test]
    fn schedule_and_selection() {
        let cfg = TrainConfig::default();
        let lrs: Vec<f64> = (1..=6).map(|e| cfg.schedule(e).0).collect();
        assert_eq!(lrs, vec![0.0008, 0.0008, 0.0008, 0.0008, 0.0001, 0.0001]);
        assert_eq!(cfg.schedule(5).1, 5e-5);
        assert_eq!(select_best_epoch(&[0.3, 0.5, 0.4]), Some(2));
        assert_eq!(select_best_epoch(&[0.5, 0.5]), Some(1));
        assert_eq!(select_best_epoch(&[]), None);
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = TrainConfig { epochs: 3, batch_size: 4, seed: 9, ..TrainConfig::default() };
        assert_eq!(TrainConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        assert!(TrainConfig::from_kv(&KeyValues::parse("train.epochs=0").unwrap()).is_err());
        assert!(TrainConfig::from_kv(&KeyValues::parse("train.lr_initial=-1").unwrap()).is_err());
    }

    fn toy_samples(n: usize, seed: u64) -> Vec<Arc<SequenceSample>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|k| {
                let input: Vec<f32> = (0..12 * 256).map(|_| rng.random::<f32>()).collect();
                // Targets follow the last frame so there is something to learn.
                let last = &input[11 * 256..];
                let labels: Vec<u8> =
                    (0..3).flat_map(|m| last.iter().map(move |&x| (x > 0.3 + 0.2 * m as f32) as u8)).collect();
                Arc::new(SequenceSample {
                    input: input.clone(),
                    channels: 12,
                    height: 16,
                    width: 16,
                    target: ClassMap::new(3, 16, 16, labels, vec![true; 256]).unwrap(),
                    t_last: k as i64,
                    lead_steps: 0,
                })
            })
            .collect()
    }

    fn toy_net() -> UNet<f32> {
        UNet::new(UNetConfig { in_channels: 12, base_width: 4, ..UNetConfig::default() }, 3).unwrap()
    }

    #[test]
    fn loss_decreases_on_a_frozen_batch() {
        let samples = toy_samples(4, 2);
        let batch: Vec<&SequenceSample> = samples.iter().map(|s| s.as_ref()).collect();
        let cfg = TrainConfig::default();
        let mut net = toy_net();
        let losses: Vec<f64> = (1..=6).map(|t| train_step(&mut net, &batch, 1e-3, 1e-5, t, &cfg).unwrap()).collect();
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "{losses:?}");
        }
    }

    #[test]
    fn clipped_norm_never_exceeds_threshold() {
        let samples = toy_samples(2, 4);
        let batch: Vec<&SequenceSample> = samples.iter().map(|s| s.as_ref()).collect();
        let mut net = toy_net();
        let (x, t) = batch_tensors::<f32>(&batch).unwrap();
        let logits = net.forward(&x, Mode::Train).unwrap();
        let (_, d) = bce_with_logits(&logits, &t).unwrap();
        net.params_mut().zero_grad();
        net.backward(&d).unwrap();
        clip_gradients(net.params_mut(), 0.1);
        assert!(global_grad_norm(net.params()) <= 0.1 + 1e-6);
    }

    #[test]
    fn train_records_schedule_steps_and_is_deterministic() {
        let samples = toy_samples(6, 5);
        let split =
            DatasetSplit { train: samples[..5].to_vec(), validation: samples[5..].to_vec(), test: vec![], eta: None };
        let cfg = TrainConfig { epochs: 6, batch_size: 2, ..TrainConfig::default() };
        let a = train(toy_net(), &split, &cfg).unwrap();
        assert_eq!(a.history.iter().map(|r| r.steps).collect::<Vec<_>>(), vec![3; 6]);
        assert_eq!(
            a.history.iter().map(|r| r.lr).collect::<Vec<_>>(),
            vec![0.0008, 0.0008, 0.0008, 0.0008, 0.0001, 0.0001]
        );
        let scores: Vec<f64> = a.history.iter().map(|r| r.mean_val_f1()).collect();
        assert_eq!(Some(a.best_epoch), select_best_epoch(&scores));
        let b = train(toy_net(), &split, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best.params(), b.best.params());
        let csv = render_history_csv(&a.history);
        assert!(
            csv.starts_with("epoch,lr,delta,steps,train_loss,val_f1_class1,val_f1_class2,val_f1_class3,val_f1_mean\n")
        );
        assert_eq!(csv.lines().count(), 7);
    }

    #[test]
    fn empty_splits_are_rejected() {
        let samples = toy_samples(2, 1);
        let split = DatasetSplit { train: samples.clone(), validation: vec![], test: vec![], eta: None };
        assert!(train(toy_net(), &split, &TrainConfig::default()).is_err());
    }
}
