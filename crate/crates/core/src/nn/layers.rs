//! Layer kernels with their hand-written backward passes.
//!
//! Backward functions accumulate parameter gradients into the buffers
//! they are given and return the gradient with respect to the input.

use super::{matmul, Scalar, Tensor};

/// Writes the 3x3 patches of one `(c, h, w)` sample into `col`, whose rows
/// are `(ci, ky, kx)` and hold `ld` values each; the sample's pixels go to
/// columns `offset..offset + h * w`.
fn im2col<T: Scalar>(x: &[T], c: usize, h: usize, w: usize, col: &mut [T], ld: usize, offset: usize) {
    let p = h * w;
    for ci in 0..c {
        let src = &x[ci * p..(ci + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let r = (ci * 9) + ky * 3 + kx;
                let row = &mut col[r * ld + offset..r * ld + offset + p];
                for i in 0..h {
                    let si = i as isize + ky as isize - 1;
                    let dst = &mut row[i * w..(i + 1) * w];
                    if si < 0 || si >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let srow = &src[si as usize * w..(si as usize + 1) * w];
                    match kx {
                        0 => {
                            dst[0] = T::zero();
                            dst[1..].copy_from_slice(&srow[..w - 1]);
                        }
                        1 => dst.copy_from_slice(srow),
                        _ => {
                            dst[..w - 1].copy_from_slice(&srow[1..]);
                            dst[w - 1] = T::zero();
                        }
                    }
                }
            }
        }
    }
}

/// Columns per GEMM; small feature maps are grouped across samples.
const GEMM_COLUMNS: usize = 1024;

fn sample_groups(n: usize, p: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let g = (GEMM_COLUMNS / p).clamp(1, n.max(1));
    (0..n).step_by(g).map(move |s| s..(s + g).min(n))
}

/// Patch matrix of samples `range`: `(c * 9) x (len * h * w)`, sample-major columns.
fn group_im2col<T: Scalar>(x: &Tensor<T>, range: std::ops::Range<usize>, col: &mut Vec<T>) {
    let [_, c, h, w] = x.shape();
    let p = h * w;
    let ld = range.len() * p;
    col.resize(c * 9 * ld, T::zero());
    for (k, s) in range.enumerate() {
        im2col(x.sample(s), c, h, w, col, ld, k * p);
    }
}

/// Transposed patch matrix of samples `range`: one row of `c * 9` values
/// per pixel, sample-major.
fn group_im2row<T: Scalar>(x: &Tensor<T>, range: std::ops::Range<usize>, rows: &mut Vec<T>, pad: &mut Vec<T>) {
    let [_, c, h, w] = x.shape();
    let (ph, pw) = (h + 2, w + 2);
    let k = c * 9;
    rows.resize(range.len() * h * w * k, T::zero());
    pad.clear();
    pad.resize(c * ph * pw, T::zero());
    for (g, s) in range.enumerate() {
        let xs = x.sample(s);
        for ci in 0..c {
            for i in 0..h {
                let dst = (ci * ph + i + 1) * pw + 1;
                pad[dst..dst + w].copy_from_slice(&xs[(ci * h + i) * w..(ci * h + i + 1) * w]);
            }
        }
        for i in 0..h {
            for j in 0..w {
                let row = &mut rows[((g * h + i) * w + j) * k..((g * h + i) * w + j + 1) * k];
                for ci in 0..c {
                    let base = (ci * ph + i) * pw + j;
                    let taps = &mut row[ci * 9..ci * 9 + 9];
                    taps[0..3].copy_from_slice(&pad[base..base + 3]);
                    taps[3..6].copy_from_slice(&pad[base + pw..base + pw + 3]);
                    taps[6..9].copy_from_slice(&pad[base + 2 * pw..base + 2 * pw + 3]);
                }
            }
        }
    }
}

/// Samples `range` of `x` as `(c, len * p)`.
fn group_channels_first<T: Scalar>(x: &Tensor<T>, range: std::ops::Range<usize>, out: &mut Vec<T>) {
    let c = x.channels();
    let p = x.plane();
    let ld = range.len() * p;
    out.resize(c * ld, T::zero());
    for (k, s) in range.enumerate() {
        let xs = x.sample(s);
        for ch in 0..c {
            out[ch * ld + k * p..ch * ld + (k + 1) * p].copy_from_slice(&xs[ch * p..(ch + 1) * p]);
        }
    }
}

/// Zero-padded 3x3 convolution; `weight` is `(out_c, in_c, 3, 3)`.
pub fn conv3x3_forward<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, out_c: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert_eq!(weight.len(), out_c * c * 9, "conv3x3 kernel shape");
    let p = h * w;
    let mut y = Tensor::zeros([n, out_c, h, w]);
    let mut col = Vec::new();
    let mut buf = Vec::new();
    for range in sample_groups(n, p) {
        let ld = range.len() * p;
        group_im2col(x, range.clone(), &mut col);
        buf.resize(out_c * ld, T::zero());
        matmul(out_c, c * 9, ld, weight, false, &col, false, T::zero(), &mut buf);
        for (k, s) in range.enumerate() {
            let ys = y.sample_mut(s);
            for o in 0..out_c {
                let dst = &mut ys[o * p..(o + 1) * p];
                dst.copy_from_slice(&buf[o * ld + k * p..o * ld + (k + 1) * p]);
                if let Some(b) = bias {
                    dst.iter_mut().for_each(|v| *v += b[o]);
                }
            }
        }
    }
    y
}

pub fn conv3x3_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    let out_c = dy.channels();
    let p = x.plane();
    let mut rows = Vec::new();
    let mut pad = Vec::new();
    let mut dy_cf = Vec::new();
    for range in sample_groups(n, p) {
        let ld = range.len() * p;
        group_im2row(x, range.clone(), &mut rows, &mut pad);
        group_channels_first(dy, range, &mut dy_cf);
        matmul(out_c, ld, c * 9, &dy_cf, false, &rows, false, T::one(), dweight);
    }
    // The input gradient is the same convolution applied to `dy` with the
    // kernel rotated by 180 degrees and its channel axes swapped.
    let mut flipped = vec![T::zero(); weight.len()];
    for o in 0..out_c {
        for ci in 0..c {
            for k in 0..9 {
                flipped[(ci * out_c + o) * 9 + 8 - k] = weight[(o * c + ci) * 9 + k];
            }
        }
    }
    let dx = conv3x3_forward(dy, &flipped, None, c);
    if let Some(db) = dbias {
        accumulate_bias(dy, db);
    }
    dx
}

fn accumulate_bias<T: Scalar>(dy: &Tensor<T>, db: &mut [T]) {
    let p = dy.plane();
    for s in 0..dy.batch() {
        let d = dy.sample(s);
        for (o, b) in db.iter_mut().enumerate() {
            *b += d[o * p..(o + 1) * p].iter().copied().sum::<T>();
        }
    }
}

/// Per-pixel channel mixing; `weight` is `(out_c, in_c)`.
pub fn conv1x1_forward<T: Scalar>(x: &Tensor<T>, weight: &[T], bias: Option<&[T]>, out_c: usize) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    assert_eq!(weight.len(), out_c * c, "conv1x1 kernel shape");
    let p = h * w;
    let mut y = Tensor::zeros([n, out_c, h, w]);
    for s in 0..n {
        let ys = y.sample_mut(s);
        matmul(out_c, c, p, weight, false, x.sample(s), false, T::zero(), ys);
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                ys[o * p..(o + 1) * p].iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    y
}

pub fn conv1x1_backward<T: Scalar>(
    x: &Tensor<T>,
    weight: &[T],
    dy: &Tensor<T>,
    dweight: &mut [T],
    dbias: Option<&mut [T]>,
) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let out_c = dy.channels();
    let p = h * w;
    let mut dx = Tensor::zeros(x.shape());
    for s in 0..n {
        matmul(out_c, p, c, dy.sample(s), false, x.sample(s), true, T::one(), dweight);
        matmul(c, out_c, p, weight, true, dy.sample(s), false, T::zero(), dx.sample_mut(s));
    }
    if let Some(db) = dbias {
        accumulate_bias(dy, db);
    }
    dx
}

/// What the batch-norm backward pass needs from a training-mode forward.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
}

/// Batch statistics of a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BnBatchStats {
    pub mean: Vec<f64>,
    /// Biased variance.
    pub var: Vec<f64>,
    /// Values per channel.
    pub count: usize,
}

/// Training-mode batch norm: `(x - E) / sqrt(V + eps) * gamma + beta` with
/// per-channel moments over batch and space.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    eps: f64,
) -> (Tensor<T>, BnCache<T>, BnBatchStats) {
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let count = n * p;
    let mut mean = vec![0.0f64; c];
    let mut var = vec![0.0f64; c];
    for s in 0..n {
        let xs = x.sample(s);
        for ch in 0..c {
            mean[ch] += xs[ch * p..(ch + 1) * p].iter().map(|v| v.as_f64()).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count as f64);
    for s in 0..n {
        let xs = x.sample(s);
        for ch in 0..c {
            let m = mean[ch];
            var[ch] += xs[ch * p..(ch + 1) * p].iter().map(|v| (v.as_f64() - m).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= count as f64);
    let inv_std: Vec<T> = var.iter().map(|v| T::from_f64_lossy(1.0 / (v + eps).sqrt())).collect();
    let mean_t: Vec<T> = mean.iter().map(|&m| T::from_f64_lossy(m)).collect();

    let mut xhat = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    for s in 0..n {
        let xs = x.sample(s);
        let (hs, ys) = (xhat.sample_mut(s), y.sample_mut(s));
        for ch in 0..c {
            for q in ch * p..(ch + 1) * p {
                let v = (xs[q] - mean_t[ch]) * inv_std[ch];
                hs[q] = v;
                ys[q] = v * gamma[ch] + beta[ch];
            }
        }
    }
    (y, BnCache { xhat, inv_std }, BnBatchStats { mean, var, count })
}

/// Inference-mode batch norm with stored running moments.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: f64,
) -> Tensor<T> {
    let [n, c, _, _] = x.shape();
    let p = x.plane();
    let eps = T::from_f64_lossy(eps);
    let scale: Vec<T> = (0..c).map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt()).collect();
    let shift: Vec<T> = (0..c).map(|ch| beta[ch] - running_mean[ch] * scale[ch]).collect();
    let mut y = x.clone();
    for s in 0..n {
        let ys = y.sample_mut(s);
        for ch in 0..c {
            ys[ch * p..(ch + 1) * p].iter_mut().for_each(|v| *v = *v * scale[ch] + shift[ch]);
        }
    }
    y
}

pub fn batchnorm_backward<T: Scalar>(
    dy: &Tensor<T>,
    gamma: &[T],
    cache: &BnCache<T>,
    dgamma: &mut [T],
    dbeta: &mut [T],
) -> Tensor<T> {
    let [n, c, _, _] = dy.shape();
    let p = dy.plane();
    let m = T::from_usize(n * p).unwrap();
    let mut sum_dy = vec![T::zero(); c];
    let mut sum_dy_xhat = vec![T::zero(); c];
    for s in 0..n {
        let (d, xh) = (dy.sample(s), cache.xhat.sample(s));
        for ch in 0..c {
            for q in ch * p..(ch + 1) * p {
                sum_dy[ch] += d[q];
                sum_dy_xhat[ch] += d[q] * xh[q];
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_dy_xhat[ch];
        dbeta[ch] += sum_dy[ch];
    }
    let mut dx = Tensor::zeros(dy.shape());
    for s in 0..n {
        let (d, xh) = (dy.sample(s), cache.xhat.sample(s));
        let dxs = dx.sample_mut(s);
        for ch in 0..c {
            let k = gamma[ch] * cache.inv_std[ch] / m;
            for q in ch * p..(ch + 1) * p {
                dxs[q] = k * (m * d[q] - sum_dy[ch] - xh[q] * sum_dy_xhat[ch]);
            }
        }
    }
    dx
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gradient through a ReLU given its output `y`.
pub fn relu_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    dx.data_mut().iter_mut().zip(y.data()).for_each(|(d, &v)| {
        if v <= T::zero() {
            *d = T::zero();
        }
    });
    dx
}

/// 2x2 max pooling with stride 2. Also returns, for every output cell, the
/// flat input index of its maximum (first in row-major order on ties).
pub fn maxpool2_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let [n, c, h, w] = x.shape();
    let (oh, ow) = (h / 2, w / 2);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let data = x.data();
    let out = y.data_mut();
    let mut k = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + 2 * i * w + 2 * j;
                for q in
                    [base + 2 * i * w + 2 * j + 1, base + (2 * i + 1) * w + 2 * j, base + (2 * i + 1) * w + 2 * j + 1]
                {
                    if data[q] > data[best] {
                        best = q;
                    }
                }
                out[k] = data[best];
                arg.push(best);
                k += 1;
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<T: Scalar>(dy: &Tensor<T>, argmax: &[usize], input_shape: [usize; 4]) -> Tensor<T> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (&g, &q) in dy.data().iter().zip(argmax) {
        d[q] += g;
    }
    dx
}

/// Source indices and weight of each output coordinate of an
/// align-corners 2x upsampling along one axis.
fn up_axis(n: usize) -> Vec<(usize, usize, f64)> {
    let m = 2 * n;
    (0..m)
        .map(|o| {
            if n == 1 {
                return (0, 0, 0.0);
            }
            let src = o as f64 * (n - 1) as f64 / (m - 1) as f64;
            let i0 = (src.floor() as usize).min(n - 2);
            (i0, i0 + 1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear 2x upsampling with aligned corners.
pub fn bilinear_up2_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let [n, c, h, w] = x.shape();
    let (ry, rx) = (up_axis(h), up_axis(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut y = Tensor::zeros([n, c, oh, ow]);
    let src = x.data();
    let dst = y.data_mut();
    for plane in 0..n * c {
        let sb = plane * h * w;
        let db = plane * oh * ow;
        for (i, &(y0, y1, fy)) in ry.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (j, &(x0, x1, fx)) in rx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let a = src[sb + y0 * w + x0];
                let b = src[sb + y0 * w + x1];
                let c_ = src[sb + y1 * w + x0];
                let d = src[sb + y1 * w + x1];
                let top = a + (b - a) * fx;
                let bottom = c_ + (d - c_) * fx;
                dst[db + i * ow + j] = top + (bottom - top) * fy;
            }
        }
    }
    y
}

/// Transpose of [`bilinear_up2_forward`].
pub fn bilinear_up2_backward<T: Scalar>(dy: &Tensor<T>, input_shape: [usize; 4]) -> Tensor<T> {
    let [n, c, h, w] = input_shape;
    let (ry, rx) = (up_axis(h), up_axis(w));
    let (oh, ow) = (2 * h, 2 * w);
    let mut dx = Tensor::zeros(input_shape);
    let g = dy.data();
    let out = dx.data_mut();
    for plane in 0..n * c {
        let sb = plane * h * w;
        let db = plane * oh * ow;
        for (i, &(y0, y1, fy)) in ry.iter().enumerate() {
            let fy = T::from_f64_lossy(fy);
            for (j, &(x0, x1, fx)) in rx.iter().enumerate() {
                let fx = T::from_f64_lossy(fx);
                let v = g[db + i * ow + j];
                let (top, bottom) = (v * (T::one() - fy), v * fy);
                out[sb + y0 * w + x0] += top * (T::one() - fx);
                out[sb + y0 * w + x1] += top * fx;
                out[sb + y1 * w + x0] += bottom * (T::one() - fx);
                out[sb + y1 * w + x1] += bottom * fx;
            }
        }
    }
    dx
}

pub fn sigmoid<T: Scalar>(s: T) -> T {
    if s >= T::zero() {
        T::one() / (T::one() + (-s).exp())
    } else {
        let e = s.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid_tensor<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
    y
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    /// Checks `d <r, f(x)> / dx` against central differences at every input.
    fn check_input_grad(
        x: &Tensor<f64>,
        f: impl Fn(&Tensor<f64>) -> Tensor<f64>,
        backward: impl Fn(&Tensor<f64>) -> Tensor<f64>,
        rng: &mut ChaCha8Rng,
    ) -> f64 {
        let y = f(x);
        let r = random(y.shape(), rng);
        let dx = backward(&r);
        let eps = 1e-6;
        let mut worst = 0.0f64;
        for q in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[q] += eps;
            let mut xm = x.clone();
            xm.data_mut()[q] -= eps;
            let num = (dot(&f(&xp), &r) - dot(&f(&xm), &r)) / (2.0 * eps);
            worst = worst.max(rel_err(dx.data()[q], num));
        }
        worst
    }

    #[test]
    fn conv3x3_delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random([2, 1, 5, 4], &mut rng);
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        assert_eq!(conv3x3_forward(&x, &k, None, 1), x);
    }

    #[test]
    fn conv3x3_ones_kernel_sums_neighbourhood() {
        let x = Tensor::<f64>::new([1, 1, 4, 4], vec![2.0; 16]).unwrap();
        let y = conv3x3_forward(&x, &[1.0; 9], Some(&[0.5]), 1);
        assert_eq!(y.data()[5], 18.5);
        assert_eq!(y.data()[0], 8.5);
    }

    #[test]
    fn conv3x3_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random([1, 2, 6, 6], &mut rng);
        let wt: Vec<f64> = (0..3 * 2 * 9).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = vec![0.1, -0.2, 0.3];
        let err = check_input_grad(
            &x,
            |x| conv3x3_forward(x, &wt, Some(&b), 3),
            |r| conv3x3_backward(&x, &wt, r, &mut vec![0.0; wt.len()], None),
            &mut rng,
        );
        assert!(err < 1e-6, "input grad {err}");

        // Kernel and bias gradients.
        let r = random([1, 3, 6, 6], &mut rng);
        let mut dw = vec![0.0; wt.len()];
        let mut db = vec![0.0; 3];
        conv3x3_backward(&x, &wt, &r, &mut dw, Some(&mut db));
        let eps = 1e-6;
        for q in 0..wt.len() {
            let (mut wp, mut wm) = (wt.clone(), wt.clone());
            wp[q] += eps;
            wm[q] -= eps;
            let num = (dot(&conv3x3_forward(&x, &wp, Some(&b), 3), &r)
                - dot(&conv3x3_forward(&x, &wm, Some(&b), 3), &r))
                / (2.0 * eps);
            assert!(rel_err(dw[q], num) < 1e-6);
        }
        for o in 0..3 {
            let (mut bp, mut bm) = (b.clone(), b.clone());
            bp[o] += eps;
            bm[o] -= eps;
            let num = (dot(&conv3x3_forward(&x, &wt, Some(&bp), 3), &r)
                - dot(&conv3x3_forward(&x, &wt, Some(&bm), 3), &r))
                / (2.0 * eps);
            assert!(rel_err(db[o], num) < 1e-6);
        }
    }

    #[test]
    fn conv3x3_gradients_in_f32() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x64 = random([1, 2, 6, 6], &mut rng);
        let x = Tensor::<f32>::from_f32([1, 2, 6, 6], &x64.to_f32()).unwrap();
        let wt: Vec<f32> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
        let r = Tensor::<f32>::from_f32([1, 1, 6, 6], &random([1, 1, 6, 6], &mut rng).to_f32()).unwrap();
        let dx = conv3x3_backward(&x, &wt, &r, &mut [0.0; 18], None);
        let loss = |x: &Tensor<f32>| -> f64 {
            conv3x3_forward(x, &wt, None, 1).data().iter().zip(r.data()).map(|(a, b)| *a as f64 * *b as f64).sum()
        };
        let eps = 1e-2f32;
        for q in 0..x.data().len() {
            let mut xp = x.clone();
            xp.data_mut()[q] += eps;
            let mut xm = x.clone();
            xm.data_mut()[q] -= eps;
            let num = (loss(&xp) - loss(&xm)) / (2.0 * eps as f64);
            assert!(rel_err(dx.data()[q] as f64, num) < 1e-3);
        }
    }

    #[test]
    fn conv1x1_identity_and_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random([2, 3, 3, 2], &mut rng);
        let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        assert_eq!(conv1x1_forward(&x, &eye, None, 3), x);
        let wt: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let err = check_input_grad(
            &x,
            |x| conv1x1_forward(x, &wt, Some(&[0.3, 0.1]), 2),
            |r| conv1x1_backward(&x, &wt, r, &mut [0.0; 6], None),
            &mut rng,
        );
        assert!(err < 1e-6);
        let r = random([2, 2, 3, 2], &mut rng);
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        conv1x1_backward(&x, &wt, &r, &mut dw, Some(&mut db));
        for q in 0..6 {
            let (mut wp, mut wm) = (wt.clone(), wt.clone());
            wp[q] += 1e-6;
            wm[q] -= 1e-6;
            let num =
                (dot(&conv1x1_forward(&x, &wp, None, 2), &r) - dot(&conv1x1_forward(&x, &wm, None, 2), &r)) / 2e-6;
            assert!(rel_err(dw[q], num) < 1e-6);
        }
        let total: f64 = r.data().iter().sum();
        assert!((db.iter().sum::<f64>() - total).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_moments_and_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random([3, 2, 4, 4], &mut rng);
        let (y, _, stats) = batchnorm_train(&x, &[1.0, 1.0], &[0.0, 0.0], 1e-5);
        for ch in 0..2 {
            let vals: Vec<f64> = (0..3).flat_map(|s| y.sample(s)[ch * 16..(ch + 1) * 16].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
        assert_eq!(stats.count, 48);

        let c = Tensor::<f64>::new([2, 1, 2, 2], vec![3.0; 8]).unwrap();
        let (yc, _, _) = batchnorm_train(&c, &[2.0], &[0.7], 1e-5);
        assert!(yc.data().iter().all(|v| (v - 0.7).abs() < 1e-9));

        // Standardized input passes through unchanged.
        let (ys, _, _) = batchnorm_train(&y, &[1.0, 1.0], &[0.0, 0.0], 1e-5);
        assert!(ys.data().iter().zip(y.data()).all(|(a, b)| (a - b).abs() < 1e-3));

        let e = batchnorm_eval(&x, &[2.0, 1.0], &[1.0, 0.0], &[0.0, 0.5], &[4.0, 1.0], 0.0);
        assert!((e.data()[0] - (x.data()[0] * 2.0 / 2.0 + 1.0)).abs() < 1e-12);
        assert!((e.data()[16] - (x.data()[16] - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn batchnorm_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random([2, 3, 3, 3], &mut rng);
        let gamma = [1.3, 0.7, -0.4];
        let beta = [0.1, 0.0, -0.2];
        let (_, cache, _) = batchnorm_train(&x, &gamma, &beta, 1e-5);
        let err = check_input_grad(
            &x,
            |x| batchnorm_train(x, &gamma, &beta, 1e-5).0,
            |r| batchnorm_backward(r, &gamma, &cache, &mut [0.0; 3], &mut [0.0; 3]),
            &mut rng,
        );
        assert!(err < 1e-6, "{err}");
        let r = random(x.shape(), &mut rng);
        let (mut dg, mut dbt) = ([0.0; 3], [0.0; 3]);
        batchnorm_backward(&r, &gamma, &cache, &mut dg, &mut dbt);
        for ch in 0..3 {
            let (mut gp, mut gm) = (gamma, gamma);
            gp[ch] += 1e-6;
            gm[ch] -= 1e-6;
            let num = (dot(&batchnorm_train(&x, &gp, &beta, 1e-5).0, &r)
                - dot(&batchnorm_train(&x, &gm, &beta, 1e-5).0, &r))
                / 2e-6;
            assert!(rel_err(dg[ch], num) < 1e-6);
            let (mut bp, mut bm) = (beta, beta);
            bp[ch] += 1e-6;
            bm[ch] -= 1e-6;
            let num = (dot(&batchnorm_train(&x, &gamma, &bp, 1e-5).0, &r)
                - dot(&batchnorm_train(&x, &gamma, &bm, 1e-5).0, &r))
                / 2e-6;
            assert!(rel_err(dbt[ch], num) < 1e-6);
        }
    }

    #[test]
    fn relu_values_and_gradient() {
        let x = Tensor::<f64>::new([1, 1, 1, 4], vec![-1.0, 2.0, 0.3, -0.2]).unwrap();
        let y = relu_forward(&x);
        assert_eq!(y.data(), &[0.0, 2.0, 0.3, 0.0]);
        let dy = Tensor::new([1, 1, 1, 4], vec![5.0; 4]).unwrap();
        assert_eq!(relu_backward(&y, &dy).data(), &[0.0, 5.0, 5.0, 0.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut x = random([1, 2, 3, 3], &mut rng);
        x.data_mut().iter_mut().for_each(|v| {
            if v.abs() < 0.05 {
                *v = 0.5
            }
        });
        let err = check_input_grad(&x, relu_forward, |r| relu_backward(&relu_forward(&x), r), &mut rng);
        assert!(err < 1e-6);
    }

    #[test]
    fn maxpool_values_and_gradient() {
        let x = Tensor::<f64>::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool2_forward(&x).0.data(), &[4.0]);
        let c = Tensor::<f64>::new([1, 1, 4, 4], vec![7.0; 16]).unwrap();
        let (y, arg) = maxpool2_forward(&c);
        assert_eq!(y.data(), &[7.0; 4]);
        assert_eq!(arg, vec![0, 2, 8, 10]);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random([2, 2, 4, 6], &mut rng);
        let (_, arg) = maxpool2_forward(&x);
        let err = check_input_grad(&x, |x| maxpool2_forward(x).0, |r| maxpool2_backward(r, &arg, x.shape()), &mut rng);
        assert!(err < 1e-6);
    }

    #[test]
    fn upsampling_ramp_constant_and_adjoint() {
        let ramp = Tensor::<f64>::new([1, 1, 1, 2], vec![0.0, 1.0]).unwrap();
        let y = bilinear_up2_forward(&ramp);
        assert_eq!(y.shape(), [1, 1, 2, 4]);
        for (a, b) in y.data()[..4].iter().zip([0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        let c = Tensor::<f64>::new([1, 2, 3, 3], vec![2.5; 18]).unwrap();
        assert!(bilinear_up2_forward(&c).data().iter().all(|v| (v - 2.5).abs() < 1e-12));

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random([2, 2, 3, 5], &mut rng);
        let r = random([2, 2, 6, 10], &mut rng);
        let lhs = dot(&bilinear_up2_forward(&x), &r);
        let rhs = dot(&x, &bilinear_up2_backward(&r, x.shape()));
        assert!((lhs - rhs).abs() < 1e-5);
        let one = random([1, 1, 1, 1], &mut rng);
        assert!(bilinear_up2_forward(&one).data().iter().all(|v| *v == one.data()[0]));
    }

    #[test]
    fn sigmoid_identities() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!((sigmoid(60.0f64) - 1.0).abs() < 1e-15);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f32) <= 1.0);
        for s in [-30.0f32, -3.1, -0.2, 0.0, 0.7, 5.0, 40.0] {
            assert!((sigmoid(s) + sigmoid(-s) - 1.0).abs() < 1e-6);
        }
    }
}
