use super::Scalar;
use crate::error::{bail, Result};

/// Dense `(batch, channels, height, width)` array, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() {
            bail!(
                Shape,
                "tensor shape {:?} needs {} values, got {}",
                shape,
                shape.iter().product::<usize>(),
                data.len()
            );
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn from_f32(shape: [usize; 4], data: &[f32]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| T::from_f64_lossy(x as f64)).collect())
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    /// Values per `(sample, channel)` plane.
    pub fn plane(&self) -> usize {
        self.shape[2] * self.shape[3]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// All channels of sample `n`.
    pub fn sample(&self, n: usize) -> &[T] {
        let s = self.shape[1] * self.plane();
        &self.data[n * s..(n + 1) * s]
    }

    pub fn sample_mut(&mut self, n: usize) -> &mut [T] {
        let s = self.shape[1] * self.plane();
        &mut self.data[n * s..(n + 1) * s]
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|x| x.as_f64() as f32).collect()
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "tensor shapes differ");
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += *b);
    }

    /// Channel-wise concatenation `[a, b]`.
    pub fn concat_channels(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
        let [n, ca, h, w] = a.shape;
        assert_eq!([n, h, w], [b.shape[0], b.shape[2], b.shape[3]], "concat partners differ in shape");
        let cb = b.shape[1];
        let mut data = Vec::with_capacity(n * (ca + cb) * h * w);
        for s in 0..n {
            data.extend_from_slice(a.sample(s));
            data.extend_from_slice(b.sample(s));
        }
        Tensor { shape: [n, ca + cb, h, w], data }
    }

    /// Inverse of [`Tensor::concat_channels`]: the first `ca` channels and
    /// the rest.
    pub fn split_channels(&self, ca: usize) -> (Tensor<T>, Tensor<T>) {
        let [n, c, h, w] = self.shape;
        let p = h * w;
        let mut a = Vec::with_capacity(n * ca * p);
        let mut b = Vec::with_capacity(n * (c - ca) * p);
        for s in 0..n {
            let x = self.sample(s);
            a.extend_from_slice(&x[..ca * p]);
            b.extend_from_slice(&x[ca * p..]);
        }
        (Tensor { shape: [n, ca, h, w], data: a }, Tensor { shape: [n, c - ca, h, w], data: b })
    }

    /// Stacks single samples along the batch axis.
    pub fn stack(samples: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let Some(first) = samples.first() else {
            bail!(Empty, "cannot stack zero tensors");
        };
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for s in samples {
            if s.shape[1..] != [c, h, w] {
                bail!(Shape, "stacked tensors differ in shape");
            }
            data.extend_from_slice(&s.data);
            n += s.shape[0];
        }
        Ok(Tensor { shape: [n, c, h, w], data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_round_trip() {
        let a = Tensor::<f64>::new([2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::new([2, 2, 1, 2], (10..18).map(f64::from).collect()).unwrap();
        let c = Tensor::concat_channels(&a, &b);
        assert_eq!(c.shape(), [2, 3, 1, 2]);
        assert_eq!(c.sample(1), &[3.0, 4.0, 14.0, 15.0, 16.0, 17.0]);
        let (x, y) = c.split_channels(1);
        assert_eq!((x, y), (a, b));
        assert!(Tensor::<f32>::new([1, 1, 2, 2], vec![0.0; 3]).is_err());
    }
}
