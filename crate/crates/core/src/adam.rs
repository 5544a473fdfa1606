//! Bias-corrected Adam. One state instance covers one `ParamSet`; the
//! per-parameter moment buffers are slot-aligned with it.

use crate::error::{Error, Result};
use crate::param::ParamSet;
use crate::scalar::Scalar;

#[derive(Debug, Clone)]
pub struct AdamState<S: Scalar> {
    pub lr: S,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
    /// First-moment estimate per parameter slot.
    pub m: Vec<Vec<S>>,
    /// Second-moment estimate per parameter slot (elementwise nonnegative).
    pub v: Vec<Vec<S>>,
    /// Number of optimizer steps taken; increments by exactly 1 per step.
    pub t: u64,
}

impl<S: Scalar> AdamState<S> {
    pub fn new(params: &ParamSet<S>, lr: S) -> Self {
        AdamState {
            lr,
            beta1: S::from_f64(0.9),
            beta2: S::from_f64(0.999),
            epsilon: S::from_f64(1e-8),
            m: params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect(),
            v: params.iter().map(|p| vec![S::ZERO; p.value.numel()]).collect(),
            t: 0,
        }
    }
}

/// Apply one Adam update from the gradients currently stored on the
/// parameters. Gradients are left untouched; zeroing is the caller's
/// separate step.
pub fn adam_step<S: Scalar>(params: &mut ParamSet<S>, state: &mut AdamState<S>) -> Result<()> {
    if state.m.len() != params.len() {
        return Err(Error::State(format!(
            "adam state covers {} parameters but the set has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.t += 1;
    let bc1 = S::ONE - state.beta1.powi(state.t as i32);
    let bc2 = S::ONE - state.beta2.powi(state.t as i32);
    for (slot, p) in params.iter_mut().enumerate() {
        let g = p.value.grad().map(|g| g.to_vec()).ok_or_else(|| {
            Error::State(format!("parameter {} has no gradient buffer", p.name))
        })?;
        let m = &mut state.m[slot];
        let v = &mut state.v[slot];
        let data = p.value.data_mut();
        for i in 0..g.len() {
            m[i] = state.beta1 * m[i] + (S::ONE - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (S::ONE - state.beta2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    fn one_param(value: f64, grad: f64) -> ParamSet<f64> {
        let mut ps = ParamSet::new();
        let slot = ps.add("trunk/w", Tensor::from_vec(&[1], vec![value]).unwrap()).unwrap();
        ps.get_mut(slot).value.grad_mut().unwrap()[0] = grad;
        ps
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut ps = one_param(1.25, 0.0);
        let mut st = AdamState::new(&ps, 3e-4);
        adam_step(&mut ps, &mut st).unwrap();
        adam_step(&mut ps, &mut st).unwrap();
        assert_eq!(ps.get(0).value.data()[0], 1.25);
        assert_eq!(st.t, 2);
    }

    #[test]
    fn first_step_magnitude_is_about_lr() {
        // t=1, grad g: m_hat = g, v_hat = g^2, update = lr*g/(|g|+eps) ~ lr
        let g = 0.37;
        let lr = 3e-4;
        let mut ps = one_param(0.0, g);
        let mut st = AdamState::new(&ps, lr);
        adam_step(&mut ps, &mut st).unwrap();
        let moved = -ps.get(0).value.data()[0];
        let want = lr * g / (g.abs() + 1e-8);
        assert!((moved - want).abs() < 1e-15, "{moved} vs {want}");
        assert!((moved - lr).abs() < 1e-7);
    }

    #[test]
    fn constant_positive_gradient_decreases_parameter_monotonically() {
        let mut ps = one_param(1.0, 0.5);
        let mut st = AdamState::new(&ps, 1e-2);
        let v0 = ps.get(0).value.data()[0];
        adam_step(&mut ps, &mut st).unwrap();
        let v1 = ps.get(0).value.data()[0];
        ps.get_mut(0).value.grad_mut().unwrap()[0] = 0.5;
        adam_step(&mut ps, &mut st).unwrap();
        let v2 = ps.get(0).value.data()[0];
        assert!(v1 < v0 && v2 < v1);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut ps = ParamSet::<f64>::new();
        ps.add("trunk/w", Tensor::from_vec(&[1], vec![0.0]).unwrap()).unwrap();
        // Strip the gradient buffer to simulate an unprepared parameter.
        let stripped = ps.get(0).value.clone().detach();
        ps.get_mut(0).value = stripped;
        let mut st = AdamState::new(&ps, 1e-3);
        assert!(matches!(adam_step(&mut ps, &mut st), Err(Error::State(_))));
    }

    #[test]
    fn second_moment_stays_nonnegative() {
        let mut ps = one_param(0.0, -2.0);
        let mut st = AdamState::new(&ps, 1e-3);
        for _ in 0..5 {
            adam_step(&mut ps, &mut st).unwrap();
        }
        assert!(st.v[0][0] >= 0.0);
    }
}
