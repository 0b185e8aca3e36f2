//! Adam with bias correction.

use crate::error::{Error, Result};

/// First/second-moment accumulators and hyperparameters for one set of
/// parameters. The accumulator layout must match the parameter slice
/// layout passed to [`adam_step`] on every call.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, param_sizes: &[usize]) -> Result<Self> {
        if !(lr > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        Ok(AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: param_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        })
    }
}

/// One Adam update over aligned parameter/gradient slices. Gradients are
/// scanned first; any NaN refuses the whole step so a diverging run never
/// corrupts the parameters.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::InvalidArgument(format!(
            "adam_step with {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads.iter()) {
        if p.len() != g.len() {
            return Err(Error::shape("adam_step slice", &[p.len()], &[g.len()]));
        }
        if g.iter().any(|x| x.is_nan()) {
            return Err(Error::Numeric("NaN gradient; Adam step refused".into()));
        }
    }
    state.step += 1;
    let t = state.step;
    let (b1, b2, eps, lr) = (state.beta1, state.beta2, state.eps, state.lr);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads.iter())
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.len() {
            let gi = g[i];
            m[i] = b1 * m[i] + (1.0 - b1) * gi;
            v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
            let mh = m[i] / bc1;
            let vh = v[i] / bc2;
            p[i] -= lr * mh / (vh.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![0.3, -0.7];
        let g = vec![0.0, 0.0];
        let mut st = AdamState::new(0.1, &[2]).unwrap();
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        assert_eq!(p, vec![0.3, -0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // hand evaluation at t=1: m=0.1, v=0.001, mhat=1, vhat=1,
        // delta = lr * 1 / (1 + 1e-8) ~= lr
        let mut p = vec![0.0];
        let g = vec![1.0];
        let mut st = AdamState::new(0.1, &[1]).unwrap();
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        assert!((p[0] + 0.1).abs() < 1e-8, "p = {}", p[0]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn two_steps_decrease_convex_quadratic() {
        // f(p) = (p - 3)^2, gradient 2(p - 3)
        let mut p = vec![0.0];
        let mut st = AdamState::new(0.1, &[1]).unwrap();
        let f = |p: f64| (p - 3.0) * (p - 3.0);
        let l0 = f(p[0]);
        let g0 = vec![2.0 * (p[0] - 3.0)];
        adam_step(&mut [&mut p], &[&g0], &mut st).unwrap();
        let l1 = f(p[0]);
        let g1 = vec![2.0 * (p[0] - 3.0)];
        adam_step(&mut [&mut p], &[&g1], &mut st).unwrap();
        let l2 = f(p[0]);
        assert!(l1 < l0);
        assert!(l2 < l1);
    }

    #[test]
    fn nan_gradient_refused() {
        let mut p = vec![1.0];
        let g = vec![f64::NAN];
        let mut st = AdamState::new(0.1, &[1]).unwrap();
        let before = p.clone();
        assert!(adam_step(&mut [&mut p], &[&g], &mut st).is_err());
        assert_eq!(p, before);
        assert_eq!(st.step, 0);
    }

    #[test]
    fn rejects_nonpositive_lr() {
        assert!(AdamState::new(0.0, &[1]).is_err());
        assert!(AdamState::new(-0.5, &[1]).is_err());
    }
}
