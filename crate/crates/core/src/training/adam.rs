use crate::error::{invalid, Result};
use crate::neuralcore::{Gradients, ParamStore, Real};

/// First/second moment estimates for every trainable tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> AdamState<T> {
    pub fn new(shapes: &[usize]) -> Self {
        AdamState {
            m: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn for_params(params: &ParamStore<T>) -> Self {
        let lens: Vec<usize> = params.trainable_named().iter().map(|(_, t)| t.len()).collect();
        Self::new(&lens)
    }

    /// One bias-corrected update over parallel lists of tensors.
    pub fn step(&mut self, params: &mut [&mut Vec<T>], grads: &[&Vec<T>], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(invalid("optimizer state does not match the parameter list"));
        }
        self.t += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (c1, c2) = (T::one() - b1, T::one() - b2);
        let corr1 = T::lit(1.0 - self.beta1.powf(self.t as f64));
        let corr2 = T::lit(1.0 - self.beta2.powf(self.t as f64));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            if p.len() != g.len() || p.len() != self.m[k].len() {
                return Err(invalid(format!("tensor {k}: parameter, gradient and state lengths differ")));
            }
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for i in 0..p.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + c1 * gi;
                v[i] = b2 * v[i] + c2 * gi * gi;
                let mh = m[i] / corr1;
                let vh = v[i] / corr2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Adam update of every trainable tensor in `params`.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    let g = grads.tensors();
    let mut p = params.trainable_mut();
    state.step(&mut p, &g, lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        let mut st = AdamState::<f64>::new(&[3]);
        let mut p = vec![1.0, 1.0, 1.0];
        let g = vec![0.5, -2.0, 1e-3];
        st.step(&mut [&mut p], &[&g], 0.01).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            let expected = 1.0 - 0.01 * gi / (gi.abs() + 1e-8);
            assert!((pi - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut st = AdamState::<f64>::new(&[2]);
        let mut p = vec![0.3, -0.7];
        for _ in 0..100 {
            st.step(&mut [&mut p], &[&vec![0.0, 0.0]], 0.1).unwrap();
        }
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn quadratic_bowl() {
        let mut st = AdamState::<f64>::new(&[1]);
        let mut p = vec![1.0];
        for _ in 0..500 {
            let g = vec![2.0 * p[0]];
            st.step(&mut [&mut p], &[&g], 0.1).unwrap();
        }
        assert!(p[0].abs() < 1e-3, "{}", p[0]);
    }

    #[test]
    fn mismatched_state() {
        let mut st = AdamState::<f64>::new(&[2]);
        let mut p = vec![0.0; 3];
        assert!(st.step(&mut [&mut p], &[&vec![0.0; 3]], 0.1).is_err());
    }
}
