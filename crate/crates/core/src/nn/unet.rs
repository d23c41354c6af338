use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::layers::*;
use super::{ParamStore, Scalar, Tensor};
use crate::config::KeyValues;
use crate::error::{bail, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, running moments updated, activations cached.
    Train,
    /// Running moments, nothing cached.
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UNetConfig {
    pub in_channels: usize,
    pub n_classes: usize,
    pub base_width: usize,
    /// Number of pooling steps.
    pub depth: usize,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for UNetConfig {
    fn default() -> Self {
        UNetConfig { in_channels: 36, n_classes: 3, base_width: 8, depth: 4, bn_epsilon: 1e-5, bn_momentum: 0.1 }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.n_classes == 0 {
            bail!(Config, "in_channels and n_classes must be positive");
        }
        if self.base_width == 0 {
            bail!(Config, "base_width must be at least 1");
        }
        if self.depth > 8 {
            bail!(Config, "depth {} is unreasonably large", self.depth);
        }
        if !(self.bn_epsilon > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            bail!(Config, "batch-norm epsilon must be > 0 and momentum in (0, 1]");
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Checks that `height x width` survives `depth` halvings.
    pub fn check_input(&self, height: usize, width: usize) -> Result<()> {
        let k = 1usize << self.depth;
        if height == 0 || width == 0 || !height.is_multiple_of(k) || !width.is_multiple_of(k) {
            bail!(Shape, "input {height}x{width} is not divisible by {k}");
        }
        Ok(())
    }

    pub fn to_kv(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("in_channels", self.in_channels);
        kv.set("n_classes", self.n_classes);
        kv.set("base_width", self.base_width);
        kv.set("depth", self.depth);
        kv.set("bn_epsilon", self.bn_epsilon);
        kv.set("bn_momentum", self.bn_momentum);
        kv
    }

    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = UNetConfig::default();
        let cfg = UNetConfig {
            in_channels: kv.get_or("in_channels", d.in_channels)?,
            n_classes: kv.get_or("n_classes", d.n_classes)?,
            base_width: kv.get_or("base_width", d.base_width)?,
            depth: kv.get_or("depth", d.depth)?,
            bn_epsilon: kv.get_or("bn_epsilon", d.bn_epsilon)?,
            bn_momentum: kv.get_or("bn_momentum", d.bn_momentum)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Convolution, batch norm, ReLU. The convolution has no bias: the
/// batch-norm shift makes it redundant (its gradient would be zero).
#[derive(Debug, Clone, Copy)]
struct ConvBlock {
    weight: usize,
    gamma: usize,
    beta: usize,
    running_mean: usize,
    running_var: usize,
    out_c: usize,
}

#[derive(Debug, Clone)]
struct BlockCache<T> {
    input: Tensor<T>,
    bn: BnCache<T>,
    output: Tensor<T>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    enc: Vec<[BlockCache<T>; 2]>,
    pools: Vec<(Vec<usize>, [usize; 4])>,
    bottom: [BlockCache<T>; 2],
    ups: Vec<[usize; 4]>,
    dec: Vec<[BlockCache<T>; 2]>,
    head_input: Tensor<T>,
}

/// Encoder-decoder classifier: encoder levels `0..=depth` (max-pool then
/// two blocks), two bottom blocks, decoder levels `depth-1..=0`
/// (bilinear upsampling, skip concatenation, two blocks), then a 1x1
/// convolution to one logit per class.
#[derive(Debug, Clone)]
pub struct UNet<T> {
    cfg: UNetConfig,
    params: ParamStore<T>,
    enc: Vec<[ConvBlock; 2]>,
    bottom: [ConvBlock; 2],
    /// Indexed by level.
    dec: Vec<[ConvBlock; 2]>,
    head_weight: usize,
    head_bias: usize,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> UNet<T> {
    /// Builds the network with Kaiming-normal convolution kernels, unit
    /// scales and zero shifts.
    pub fn new(cfg: UNetConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let block = |params: &mut ParamStore<T>, rng: &mut ChaCha8Rng, name: &str, in_c: usize, out_c: usize| {
            let std = (2.0 / (in_c * 9) as f64).sqrt();
            let normal = Normal::new(0.0, std).unwrap();
            let w = (0..out_c * in_c * 9).map(|_| T::from_f64_lossy(normal.sample(rng))).collect();
            ConvBlock {
                weight: params.add(&format!("{name}.weight"), &[out_c, in_c, 3, 3], w, true),
                gamma: params.add(&format!("{name}.gamma"), &[out_c], vec![T::one(); out_c], true),
                beta: params.add(&format!("{name}.beta"), &[out_c], vec![T::zero(); out_c], true),
                running_mean: params.add(&format!("{name}.running_mean"), &[out_c], vec![T::zero(); out_c], false),
                running_var: params.add(&format!("{name}.running_var"), &[out_c], vec![T::one(); out_c], false),
                out_c,
            }
        };
        let mut enc = Vec::new();
        let mut in_c = cfg.in_channels;
        for d in 0..=cfg.depth {
            let w = cfg.width(d);
            let a = block(&mut params, &mut rng, &format!("enc{d}.0"), in_c, w);
            let b = block(&mut params, &mut rng, &format!("enc{d}.1"), w, w);
            enc.push([a, b]);
            in_c = w;
        }
        let wd = cfg.width(cfg.depth);
        let bottom =
            [block(&mut params, &mut rng, "bottom.0", wd, wd), block(&mut params, &mut rng, "bottom.1", wd, wd)];
        let mut dec_rev = Vec::new();
        let mut below = wd;
        for d in (0..cfg.depth).rev() {
            let w = cfg.width(d);
            let a = block(&mut params, &mut rng, &format!("dec{d}.0"), w + below, w);
            let b = block(&mut params, &mut rng, &format!("dec{d}.1"), w, w);
            dec_rev.push([a, b]);
            below = w;
        }
        dec_rev.reverse();
        let w0 = cfg.width(0);
        let normal = Normal::new(0.0, (1.0 / w0 as f64).sqrt()).unwrap();
        let hw = (0..cfg.n_classes * w0).map(|_| T::from_f64_lossy(normal.sample(&mut rng))).collect();
        let head_weight = params.add("head.weight", &[cfg.n_classes, w0, 1, 1], hw, true);
        let head_bias = params.add("head.bias", &[cfg.n_classes], vec![T::zero(); cfg.n_classes], true);
        Ok(UNet { cfg, params, enc, bottom, dec: dec_rev, head_weight, head_bias, cache: None })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    fn check(&self, x: &Tensor<T>) -> Result<()> {
        if x.channels() != self.cfg.in_channels {
            bail!(Shape, "network expects {} input channels, got {}", self.cfg.in_channels, x.channels());
        }
        if x.batch() == 0 {
            bail!(Empty, "empty batch");
        }
        self.cfg.check_input(x.height(), x.width())
    }

    fn block_train(&mut self, b: &ConvBlock, x: Tensor<T>) -> BlockCache<T> {
        let z = conv3x3_forward(&x, self.params.value(b.weight), None, b.out_c);
        let (y, bn, stats) =
            batchnorm_train(&z, self.params.value(b.gamma), self.params.value(b.beta), self.cfg.bn_epsilon);
        let mom = self.cfg.bn_momentum;
        let unbias = if stats.count > 1 { stats.count as f64 / (stats.count - 1) as f64 } else { 1.0 };
        for (r, m) in self.params.get_mut(b.running_mean).value.iter_mut().zip(&stats.mean) {
            *r = T::from_f64_lossy((1.0 - mom) * r.as_f64() + mom * m);
        }
        for (r, v) in self.params.get_mut(b.running_var).value.iter_mut().zip(&stats.var) {
            *r = T::from_f64_lossy((1.0 - mom) * r.as_f64() + mom * v * unbias);
        }
        BlockCache { input: x, bn, output: relu_forward(&y) }
    }

    fn block_eval(&self, b: &ConvBlock, x: &Tensor<T>) -> Tensor<T> {
        let p = &self.params;
        let z = conv3x3_forward(x, p.value(b.weight), None, b.out_c);
        let y = batchnorm_eval(
            &z,
            p.value(b.gamma),
            p.value(b.beta),
            p.value(b.running_mean),
            p.value(b.running_var),
            self.cfg.bn_epsilon,
        );
        relu_forward(&y)
    }

    fn block_backward(&mut self, b: &ConvBlock, c: &BlockCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let dz = relu_backward(&c.output, dy);
        let c_out = b.out_c;
        let (mut dgamma, mut dbeta) = (vec![T::zero(); c_out], vec![T::zero(); c_out]);
        let dconv = batchnorm_backward(&dz, self.params.value(b.gamma), &c.bn, &mut dgamma, &mut dbeta);
        add_into(&mut self.params.get_mut(b.gamma).grad, &dgamma);
        add_into(&mut self.params.get_mut(b.beta).grad, &dbeta);
        let (w, dw) = self.params.value_and_grad(b.weight);
        conv3x3_backward(&c.input, w, &dconv, dw, None)
    }

    /// Per-class logits `(batch, n_classes, H, W)`. Training mode caches
    /// what [`UNet::backward`] needs and updates the running moments.
    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.check(x)?;
        if mode == Mode::Eval {
            self.cache = None;
            return Ok(self.forward_eval(x));
        }
        let depth = self.cfg.depth;
        let mut enc = Vec::with_capacity(depth + 1);
        let mut pools = Vec::with_capacity(depth);
        let mut h = x.clone();
        for d in 0..=depth {
            if d > 0 {
                let shape = h.shape();
                let (p, arg) = maxpool2_forward(&h);
                pools.push((arg, shape));
                h = p;
            }
            let [b0, b1] = self.enc[d];
            let c0 = self.block_train(&b0, h);
            let c1 = self.block_train(&b1, c0.output.clone());
            h = c1.output.clone();
            enc.push([c0, c1]);
        }
        let [b0, b1] = self.bottom;
        let bc0 = self.block_train(&b0, h);
        let bc1 = self.block_train(&b1, bc0.output.clone());
        h = bc1.output.clone();
        let mut ups = Vec::with_capacity(depth);
        let mut dec: Vec<Option<[BlockCache<T>; 2]>> = vec![None; depth];
        for d in (0..depth).rev() {
            ups.push(h.shape());
            let u = bilinear_up2_forward(&h);
            let cat = Tensor::concat_channels(&enc[d][1].output, &u);
            let [b0, b1] = self.dec[d];
            let c0 = self.block_train(&b0, cat);
            let c1 = self.block_train(&b1, c0.output.clone());
            h = c1.output.clone();
            dec[d] = Some([c0, c1]);
        }
        let logits = conv1x1_forward(
            &h,
            self.params.value(self.head_weight),
            Some(self.params.value(self.head_bias)),
            self.cfg.n_classes,
        );
        self.cache = Some(Cache {
            enc,
            pools,
            bottom: [bc0, bc1],
            ups,
            dec: dec.into_iter().map(Option::unwrap).collect(),
            head_input: h,
        });
        Ok(logits)
    }

    fn forward_eval(&self, x: &Tensor<T>) -> Tensor<T> {
        let depth = self.cfg.depth;
        let mut skips = Vec::with_capacity(depth + 1);
        let mut h = x.clone();
        for d in 0..=depth {
            if d > 0 {
                h = maxpool2_forward(&h).0;
            }
            h = self.block_eval(&self.enc[d][0], &h);
            h = self.block_eval(&self.enc[d][1], &h);
            skips.push(h.clone());
        }
        h = self.block_eval(&self.bottom[0], &h);
        h = self.block_eval(&self.bottom[1], &h);
        for d in (0..depth).rev() {
            let u = bilinear_up2_forward(&h);
            let cat = Tensor::concat_channels(&skips[d], &u);
            h = self.block_eval(&self.dec[d][0], &cat);
            h = self.block_eval(&self.dec[d][1], &h);
        }
        conv1x1_forward(
            &h,
            self.params.value(self.head_weight),
            Some(self.params.value(self.head_bias)),
            self.cfg.n_classes,
        )
    }

    /// Probabilities in evaluation mode.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check(x)?;
        Ok(sigmoid_tensor(&self.forward_eval(x)))
    }

    /// Accumulates parameter gradients for the last training-mode forward
    /// pass given the gradient of the loss with respect to its logits.
    /// Returns the gradient with respect to the input.
    pub fn backward(&mut self, dlogits: &Tensor<T>) -> Result<Tensor<T>> {
        let Some(cache) = self.cache.take() else {
            bail!(Contract, "backward called without a training-mode forward pass");
        };
        if dlogits.shape()
            != [cache.head_input.batch(), self.cfg.n_classes, cache.head_input.height(), cache.head_input.width()]
        {
            bail!(Shape, "logit gradient shape {:?} does not match the forward pass", dlogits.shape());
        }
        let depth = self.cfg.depth;
        let mut dh = {
            let w = self.params.value(self.head_weight);
            let mut dw = vec![T::zero(); w.len()];
            let mut db = vec![T::zero(); self.cfg.n_classes];
            let dx = conv1x1_backward(&cache.head_input, w, dlogits, &mut dw, Some(&mut db));
            add_into(&mut self.params.get_mut(self.head_weight).grad, &dw);
            add_into(&mut self.params.get_mut(self.head_bias).grad, &db);
            dx
        };
        let mut dskips: Vec<Option<Tensor<T>>> = vec![None; depth];
        // Upsampling shapes were pushed from the deepest level down.
        for (d, slot) in dskips.iter_mut().enumerate() {
            let [b0, b1] = self.dec[d];
            dh = self.block_backward(&b1, &cache.dec[d][1], &dh);
            dh = self.block_backward(&b0, &cache.dec[d][0], &dh);
            let (dskip, du) = dh.split_channels(self.cfg.width(d));
            *slot = Some(dskip);
            dh = bilinear_up2_backward(&du, cache.ups[depth - 1 - d]);
        }
        let [b0, b1] = self.bottom;
        dh = self.block_backward(&b1, &cache.bottom[1], &dh);
        dh = self.block_backward(&b0, &cache.bottom[0], &dh);
        for d in (0..=depth).rev() {
            if d < depth {
                dh.add_assign(dskips[d].as_ref().unwrap());
            }
            let [b0, b1] = self.enc[d];
            dh = self.block_backward(&b1, &cache.enc[d][1], &dh);
            dh = self.block_backward(&b0, &cache.enc[d][0], &dh);
            if d > 0 {
                let (arg, shape) = &cache.pools[d - 1];
                dh = maxpool2_backward(&dh, arg, *shape);
            }
        }
        Ok(dh)
    }

    /// Copies every parameter into a network of another precision.
    pub fn cast<U: Scalar>(&self) -> UNet<U> {
        let mut params = ParamStore::new();
        for p in self.params.iter() {
            params.add(&p.name, &p.shape, p.value.iter().map(|x| U::from_f64_lossy(x.as_f64())).collect(), p.trainable);
        }
        UNet {
            cfg: self.cfg.clone(),
            params,
            enc: self.enc.clone(),
            bottom: self.bottom,
            dec: self.dec.clone(),
            head_weight: self.head_weight,
            head_bias: self.head_bias,
            cache: None,
        }
    }
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    acc.iter_mut().zip(x).for_each(|(a, b)| *a += *b);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn toy(in_c: usize, base: usize) -> UNetConfig {
        UNetConfig { in_channels: in_c, n_classes: 3, base_width: base, ..UNetConfig::default() }
    }

    fn random(shape: [usize; 4], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn output_shape_range_and_input_contract() {
        let mut net = UNet::<f32>::new(toy(36, 2), 0).unwrap();
        let x = Tensor::<f32>::from_f32([2, 36, 16, 32], &random([2, 36, 16, 32], 1).to_f32()).unwrap();
        let logits = net.forward(&x, Mode::Train).unwrap();
        assert_eq!(logits.shape(), [2, 3, 16, 32]);
        let p = net.predict(&x).unwrap();
        assert!(p.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        let bad = Tensor::<f32>::zeros([1, 36, 24, 16]);
        assert!(net.forward(&bad, Mode::Eval).is_err());
        let wrong_c = Tensor::<f32>::zeros([1, 12, 16, 16]);
        assert!(net.predict(&wrong_c).is_err());
    }

    #[test]
    fn widths_double_per_level() {
        let net = UNet::<f32>::new(toy(12, 8), 0).unwrap();
        let shape = |n: &str| net.params().get(net.params().find(n).unwrap()).shape.clone();
        assert_eq!(shape("enc0.0.weight"), vec![8, 12, 3, 3]);
        assert_eq!(shape("enc4.1.weight"), vec![128, 128, 3, 3]);
        assert_eq!(shape("dec3.0.weight"), vec![64, 192, 3, 3]);
        assert_eq!(shape("dec0.0.weight"), vec![8, 24, 3, 3]);
        assert_eq!(shape("head.weight"), vec![3, 8, 1, 1]);
    }

    #[test]
    fn deterministic_forward_and_backward() {
        let x = random([2, 4, 16, 16], 3);
        let run = || {
            let mut net = UNet::<f64>::new(toy(4, 2), 7).unwrap();
            let y = net.forward(&x, Mode::Train).unwrap();
            net.backward(&random(y.shape(), 4)).unwrap();
            (y, net.params().clone())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn every_trainable_parameter_gets_a_gradient() {
        let mut net = UNet::<f64>::new(toy(4, 2), 11).unwrap();
        let x = random([4, 4, 16, 16], 5);
        let y = net.forward(&x, Mode::Train).unwrap();
        net.backward(&random(y.shape(), 6)).unwrap();
        for p in net.params().iter().filter(|p| p.trainable) {
            assert!(p.grad.iter().any(|g| *g != 0.0), "{} has no gradient", p.name);
        }
    }

    #[test]
    fn eval_is_batch_size_invariant() {
        let mut net = UNet::<f32>::new(toy(4, 2), 2).unwrap();
        let x = Tensor::<f32>::from_f32([3, 4, 16, 16], &random([3, 4, 16, 16], 8).to_f32()).unwrap();
        // Give the running moments something other than their initial values.
        net.forward(&x, Mode::Train).unwrap();
        let all = net.predict(&x).unwrap();
        for s in 0..3 {
            let one = Tensor::new([1, 4, 16, 16], x.sample(s).to_vec()).unwrap();
            let p = net.predict(&one).unwrap();
            for (a, b) in p.data().iter().zip(all.sample(s)) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn backward_requires_training_forward() {
        let mut net = UNet::<f64>::new(toy(4, 1), 0).unwrap();
        assert!(net.backward(&Tensor::zeros([1, 3, 16, 16])).is_err());
        net.forward(&random([1, 4, 16, 16], 0), Mode::Eval).unwrap();
        assert!(net.backward(&Tensor::zeros([1, 3, 16, 16])).is_err());
    }

    #[test]
    fn running_moments_track_batches() {
        let mut net = UNet::<f64>::new(toy(4, 1), 0).unwrap();
        let before = net.params().value(net.params().find("enc0.0.running_var").unwrap()).to_vec();
        net.forward(&random([2, 4, 16, 16], 0), Mode::Train).unwrap();
        let after = net.params().value(net.params().find("enc0.0.running_var").unwrap()).to_vec();
        assert_ne!(before, after);
        assert!(net.params().n_trainable() > 0);
    }
}
