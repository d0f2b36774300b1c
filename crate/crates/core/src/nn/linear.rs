use rand_chacha::ChaCha8Rng;

use super::{gemm, Param, Real};

/// Fully connected layer, `y = x W^T + b` with `W` stored `(out, in)`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<(usize, Vec<T>)>,
}

impl<T: Real> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Self {
            in_dim,
            out_dim,
            weight: Param::uniform(out_dim * in_dim, bound, rng),
            bias: Param::uniform(out_dim, bound, rng),
            input: None,
        }
    }

    /// `x` holds `batch` rows of `in_dim` values.
    pub fn forward_eval(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * self.in_dim, "linear input size");
        let mut y = Vec::with_capacity(batch * self.out_dim);
        for _ in 0..batch {
            y.extend_from_slice(&self.bias.value);
        }
        gemm(
            batch,
            self.in_dim,
            self.out_dim,
            T::one(),
            x,
            false,
            &self.weight.value,
            true,
            T::one(),
            &mut y,
        );
        y
    }

    pub fn forward(&mut self, x: &[T], batch: usize) -> Vec<T> {
        let y = self.forward_eval(x, batch);
        self.input = Some((batch, x.to_vec()));
        y
    }

    pub fn backward(&mut self, dy: &[T]) -> Vec<T> {
        let (batch, x) = self
            .input
            .take()
            .expect("Linear::backward without a training forward");
        for row in dy.chunks(self.out_dim) {
            for (g, d) in self.bias.grad.iter_mut().zip(row) {
                *g += *d;
            }
        }
        gemm(
            self.out_dim,
            batch,
            self.in_dim,
            T::one(),
            dy,
            true,
            &x,
            false,
            T::one(),
            &mut self.weight.grad,
        );
        let mut dx = vec![T::zero(); batch * self.in_dim];
        gemm(
            batch,
            self.out_dim,
            self.in_dim,
            T::one(),
            dy,
            false,
            &self.weight.value,
            false,
            T::zero(),
            &mut dx,
        );
        dx
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn forward_and_backward_by_hand() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut fc = Linear::<f64>::new(2, 3, &mut rng);
        fc.weight.value = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        fc.bias.value = vec![0.5, -0.5, 1.0];
        let y = fc.forward(&[1.0, -1.0, 2.0, 0.0], 2);
        assert_eq!(y, vec![-0.5, -1.5, 0.0, 2.5, 5.5, 11.0]);
        let dx = fc.backward(&[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        assert_eq!(dx, vec![1.0, 2.0, 8.0, 10.0]);
        assert_eq!(fc.bias.grad, vec![1.0, 1.0, 1.0]);
        assert_eq!(fc.weight.grad, vec![1.0, -1.0, 2.0, 0.0, 2.0, 0.0]);
    }
}
