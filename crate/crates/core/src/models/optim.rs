use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step: i32,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(learning_rate: T) -> Self {
        Self {
            learning_rate,
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Applies one update using each tensor's gradient buffer. The parameter
    /// list must be the same, in the same order, on every call.
    pub fn step(&mut self, params: &mut [&mut Tensor<T>]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.len()]).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let bc1 = T::one() - self.beta1.powi(self.step);
        let bc2 = T::one() - self.beta2.powi(self.step);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = p.grad().map(<[T]>::to_vec) else { continue };
            let data = p.data_mut();
            for i in 0..data.len() {
                m[i] = self.beta1 * m[i] + (T::one() - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (T::one() - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                data[i] -= self.learning_rate * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Rescales all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &mut [&mut Tensor<T>], max_norm: T) -> T {
    let total: T = params.iter().filter_map(|p| p.grad()).flat_map(|g| g.iter().map(|x| *x * *x)).sum();
    let norm = total.sqrt();
    if norm > max_norm {
        let k = max_norm / norm;
        for p in params.iter_mut() {
            if let Some(g) = p.grad().map(<[T]>::to_vec) {
                p.zero_grad();
                let scaled: Vec<T> = g.iter().map(|x| *x * k).collect();
                p.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_learning_rate() {
        let mut w = Tensor::<f64>::vector(vec![1.0, -1.0]).with_grad();
        w.accumulate_grad(&[0.5, -2.0]).unwrap();
        let mut adam = Adam::new(0.1);
        adam.step(&mut [&mut w]);
        assert!((w.data()[0] - 0.9).abs() < 1e-6);
        assert!((w.data()[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let mut w = Tensor::<f64>::vector(vec![0.3]).with_grad();
        w.accumulate_grad(&[4.0]).unwrap();
        Adam::new(0.0).step(&mut [&mut w]);
        assert_eq!(w.data(), &[0.3]);
    }

    #[test]
    fn clipping_scales_to_max_norm() {
        let mut a = Tensor::<f64>::vector(vec![0.0, 0.0]).with_grad();
        let mut b = Tensor::vector(vec![0.0]).with_grad();
        a.accumulate_grad(&[3.0, 0.0]).unwrap();
        b.accumulate_grad(&[4.0]).unwrap();
        let n = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(n, 5.0);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-15);
    }
}
