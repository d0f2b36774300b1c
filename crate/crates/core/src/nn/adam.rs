use super::{Param, Real};

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: AdamState<T>,
}

/// Moment estimates, one slot per parameter tensor in visiting order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T> Default for AdamState<T> {
    fn default() -> Self {
        Self {
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

impl<T: Real> Default for Adam<T> {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: AdamState::default(),
        }
    }
}

impl<T: Real> Adam<T> {
    pub fn with_state(state: AdamState<T>) -> Self {
        Self {
            state,
            ..Self::default()
        }
    }

    pub fn step(&mut self, params: &mut [&mut Param<T>], lr: f64) {
        let st = &mut self.state;
        if st.m.is_empty() {
            st.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            st.v = st.m.clone();
        }
        assert_eq!(st.m.len(), params.len(), "optimizer state does not match model");
        st.step += 1;
        let t = st.step as i32;
        let b1 = T::of(self.beta1);
        let b2 = T::of(self.beta2);
        let c1 = T::one() - b1;
        let c2 = T::one() - b2;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let step_size = T::of(lr / bc1);
        let bc2_sqrt = T::of(bc2.sqrt());
        let eps = T::of(self.eps);
        for ((p, m), v) in params.iter_mut().zip(&mut st.m).zip(&mut st.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + c1 * g;
                v[i] = b2 * v[i] + c2 * g * g;
                let denom = v[i].sqrt() / bc2_sqrt + eps;
                p.value[i] -= step_size * m[i] / denom;
            }
        }
    }
}
