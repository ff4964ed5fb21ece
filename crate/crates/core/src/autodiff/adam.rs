use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Moment estimates and step counter for bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zeroed moments shaped like `params`, with β1=0.9, β2=0.999, ε=1e-8.
    pub fn new(params: &[Tensor<T>]) -> Self {
        let zeros: Vec<Tensor<T>> = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        AdamState { first: zeros.clone(), second: zeros, step: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    /// One update of every parameter in place.
    pub fn step(&mut self, params: &mut [Tensor<T>], grads: &[Tensor<T>], lr: f64) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::Shape(format!(
                "adam: {} params, {} grads, {} moment slots",
                params.len(),
                grads.len(),
                self.first.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("adam: param {:?} vs grad {:?}", p.shape(), g.shape())));
            }
        }
        if lr < 0.0 {
            return Err(Error::InvalidInput(format!("learning rate {lr} is negative")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        let (b1t, b2t) = (T::lit(b1), T::lit(b2));
        let (one, eps, lr_t) = (T::one(), T::lit(self.eps), T::lit(lr));
        let (c1t, c2t) = (T::lit(c1), T::lit(c2));
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (((pj, &gj), mj), vj) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mj = b1t * *mj + (one - b1t) * gj;
                *vj = b2t * *vj + (one - b2t) * gj * gj;
                let mhat = *mj / c1t;
                let vhat = *vj / c2t;
                *pj = *pj - lr_t * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::<f64>::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap()];
        let before = p.clone();
        let mut st = AdamState::new(&p);
        for _ in 0..5 {
            st.step(&mut p, &[Tensor::zeros(&[3])], 0.01).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // m̂ = 2, v̂ = 4, so the step is lr·2/(2+1e-8)
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = AdamState::new(&p);
        st.step(&mut p, &[Tensor::scalar(2.0)], 0.001).unwrap();
        let expect = 1.0 - 0.001 * 2.0 / (2.0 + 1e-8);
        assert!((p[0].data()[0] - expect).abs() < 1e-15);
        assert!((p[0].data()[0] - 0.999).abs() < 1e-9);
    }

    #[test]
    fn constant_positive_gradient_shrinks_monotonically() {
        let mut p = vec![Tensor::<f64>::scalar(1.0)];
        let mut st = AdamState::new(&p);
        let mut last = 1.0;
        for _ in 0..2 {
            st.step(&mut p, &[Tensor::scalar(0.5)], 0.01).unwrap();
            let now = p[0].data()[0];
            assert!(now.abs() < last);
            last = now.abs();
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::<f64>::zeros(&[2])];
        let mut st = AdamState::new(&p);
        assert!(st.step(&mut p, &[Tensor::zeros(&[3])], 0.1).is_err());
    }
}
