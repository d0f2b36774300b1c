use super::{Param, Real, Tensor5};

/// Per-channel batch normalization over `(B, D, H, W)`.
#[derive(Debug, Clone)]
pub struct BatchNorm3d<T> {
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    cache: Option<Cache<T>>,
}

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor5<T>,
    inv_std: Vec<T>,
}

impl<T: Real> BatchNorm3d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            eps: 1e-5,
            momentum: 0.1,
            gamma: Param::filled(channels, T::one()),
            beta: Param::filled(channels, T::zero()),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            cache: None,
        }
    }

    fn for_channel(x: &Tensor5<T>, c: usize, mut f: impl FnMut(&[T])) {
        let v = x.volume();
        for b in 0..x.batch() {
            let off = (b * x.channels() + c) * v;
            f(&x.data[off..off + v]);
        }
    }

    /// Normalizes with running statistics.
    pub fn forward_eval(&self, x: &Tensor5<T>) -> Tensor5<T> {
        assert_eq!(x.channels(), self.channels, "batchnorm channels");
        let mut y = x.clone();
        let v = x.volume();
        let eps = T::of(self.eps);
        for b in 0..x.batch() {
            for c in 0..self.channels {
                let scale = self.gamma.value[c] / (self.running_var[c] + eps).sqrt();
                let shift = self.beta.value[c] - self.running_mean[c] * scale;
                let off = (b * self.channels + c) * v;
                for y in &mut y.data[off..off + v] {
                    *y = *y * scale + shift;
                }
            }
        }
        y
    }

    /// Normalizes with batch statistics and updates the running averages.
    pub fn forward(&mut self, x: &Tensor5<T>) -> Tensor5<T> {
        assert_eq!(x.channels(), self.channels, "batchnorm channels");
        let v = x.volume();
        let m = x.batch() * v;
        let mf = T::of(m as f64);
        let eps = T::of(self.eps);
        let mom = T::of(self.momentum);
        let mut xhat = x.clone();
        let mut inv_std = vec![T::zero(); self.channels];
        let mut y = x.clone();

        for c in 0..self.channels {
            let mut sum = T::zero();
            Self::for_channel(x, c, |s| sum += s.iter().copied().sum::<T>());
            let mean = sum / mf;
            let mut sq = T::zero();
            Self::for_channel(x, c, |s| {
                sq += s.iter().map(|&u| (u - mean) * (u - mean)).sum::<T>()
            });
            let var = sq / mf;
            let istd = T::one() / (var + eps).sqrt();
            inv_std[c] = istd;

            let unbiased = if m > 1 {
                sq / T::of((m - 1) as f64)
            } else {
                var
            };
            self.running_mean[c] = (T::one() - mom) * self.running_mean[c] + mom * mean;
            self.running_var[c] = (T::one() - mom) * self.running_var[c] + mom * unbiased;

            let (g, bt) = (self.gamma.value[c], self.beta.value[c]);
            for b in 0..x.batch() {
                let off = (b * self.channels + c) * v;
                for i in off..off + v {
                    let h = (x.data[i] - mean) * istd;
                    xhat.data[i] = h;
                    y.data[i] = g * h + bt;
                }
            }
        }
        self.cache = Some(Cache { xhat, inv_std });
        y
    }

    pub fn backward(&mut self, dy: &Tensor5<T>) -> Tensor5<T> {
        let Cache { xhat, inv_std } = self
            .cache
            .take()
            .expect("BatchNorm3d::backward without a training forward");
        let v = dy.volume();
        let mf = T::of((dy.batch() * v) as f64);
        let mut dx = Tensor5::zeros(dy.dims);
        for c in 0..self.channels {
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for b in 0..dy.batch() {
                let off = (b * self.channels + c) * v;
                for i in off..off + v {
                    sum_dy += dy.data[i];
                    sum_dy_xhat += dy.data[i] * xhat.data[i];
                }
            }
            self.gamma.grad[c] += sum_dy_xhat;
            self.beta.grad[c] += sum_dy;
            let k = self.gamma.value[c] * inv_std[c] / mf;
            for b in 0..dy.batch() {
                let off = (b * self.channels + c) * v;
                for i in off..off + v {
                    dx.data[i] = k * (mf * dy.data[i] - sum_dy - xhat.data[i] * sum_dy_xhat);
                }
            }
        }
        dx
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn training_output_is_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dims = [3, 2, 2, 3, 4];
        let n: usize = dims.iter().product();
        let x = Tensor5::from_vec(dims, (0..n).map(|_| rng.gen_range(-3.0..5.0)).collect());
        let mut bn = BatchNorm3d::<f64>::new(2);
        let y = bn.forward(&x);
        for c in 0..2 {
            let mut vals = Vec::new();
            BatchNorm3d::for_channel(&y, c, |s| vals.extend_from_slice(s));
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
        assert!(bn.running_mean.iter().any(|&m| m != 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let dims = [2, 3, 1, 2, 3];
        let n: usize = dims.iter().product();
        let x = Tensor5::from_vec(dims, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect());
        let up: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut bn = BatchNorm3d::<f64>::new(3);
        bn.gamma.value = vec![0.7, -1.2, 1.5];
        bn.beta.value = vec![0.1, 0.2, -0.3];
        bn.forward(&x);
        let dx = bn.backward(&Tensor5::from_vec(dims, up.clone()));
        let loss = |bn: &mut BatchNorm3d<f64>, x: &Tensor5<f64>| -> f64 {
            bn.forward(x).data.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        let h = 1e-6;
        for i in 0..n {
            let mut p = x.clone();
            p.data[i] += h;
            let mut m = x.clone();
            m.data[i] -= h;
            let mut probe = bn.clone();
            let fd = (loss(&mut probe, &p) - loss(&mut probe, &m)) / (2.0 * h);
            assert!((fd - dx.data[i]).abs() < 1e-6, "{fd} vs {}", dx.data[i]);
        }
        for c in 0..3 {
            let mut probe = bn.clone();
            probe.gamma.value[c] += h;
            let lp = loss(&mut probe, &x);
            probe.gamma.value[c] -= 2.0 * h;
            let fd = (lp - loss(&mut probe, &x)) / (2.0 * h);
            assert!((fd - bn.gamma.grad[c]).abs() < 1e-6);
        }
    }
}
