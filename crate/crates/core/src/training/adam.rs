use crate::scalar::Scalar;

/// Adam moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first_moment: Vec<Vec<T>>,
    pub second_moment: Vec<Vec<T>>,
    pub step_count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `sizes`.
    pub fn new(sizes: impl IntoIterator<Item = usize>) -> Self {
        let zeros: Vec<Vec<T>> = sizes.into_iter().map(|n| vec![T::zero(); n]).collect();
        Self { second_moment: zeros.clone(), first_moment: zeros, step_count: 0 }
    }

    /// One bias-corrected update of every tensor in `params`.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]], hyper: &AdamHyper) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), self.first_moment.len());
        self.step_count += 1;
        let b1 = T::lit(hyper.beta1);
        let b2 = T::lit(hyper.beta2);
        let one = T::one();
        let c1 = one - T::lit(hyper.beta1.powf(self.step_count as f64));
        let c2 = one - T::lit(hyper.beta2.powf(self.step_count as f64));
        let lr = T::lit(hyper.learning_rate);
        let eps = T::lit(hyper.epsilon);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.first_moment).zip(&mut self.second_moment) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (one - b1) * g[i];
                v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
