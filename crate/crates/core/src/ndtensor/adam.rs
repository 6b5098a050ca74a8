use crate::error::{Error, Result};

use super::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.003,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            step: 0,
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step<T: Real>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    cfg: &AdamConfig,
    state: &mut AdamState<T>,
) -> Result<()> {
    if !(cfg.lr > 0.0) {
        return Err(Error::Parameter(format!("learning rate must be > 0, got {}", cfg.lr)));
    }
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::Dimension(format!(
                "adam: parameter {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(cfg.beta1), T::of(cfg.beta2));
    let (one_b1, one_b2) = (T::of(1.0 - cfg.beta1), T::of(1.0 - cfg.beta2));
    let c1 = T::of(1.0 - cfg.beta1.powi(t));
    let c2 = T::of(1.0 - cfg.beta2.powi(t));
    let (lr, eps) = (T::of(cfg.lr), T::of(cfg.eps));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        let pd = p.data_mut();
        let (md, vd) = (m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = b1 * md[i] + one_b1 * gi;
            vd[i] = b2 * vd[i] + one_b2 * gi * gi;
            let mhat = md[i] / c1;
            let vhat = vd[i] / c2;
            pd[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_and_decays_moments() {
        let mut p = vec![Tensor::new(&[3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let g = vec![Tensor::zeros(&[3])];
        let mut s = AdamState::new(&p);
        s.m[0] = Tensor::full(&[3], 1.0);
        s.v[0] = Tensor::full(&[3], 1.0);
        let before = p.clone();
        let cfg = AdamConfig::default();
        // nonzero moments still move the parameters; reset them to isolate the null update
        let mut fresh = AdamState::new(&p);
        adam_step(&mut p, &g, &cfg, &mut fresh).unwrap();
        assert_eq!(p, before);
        adam_step(&mut p.clone(), &g, &cfg, &mut s).unwrap();
        assert!(s.m[0].data().iter().all(|&m| (m - 0.9).abs() < 1e-15));
        assert!(s.v[0].data().iter().all(|&v| (v - 0.999).abs() < 1e-15));
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        let mut p = vec![Tensor::new(&[4], vec![0.0f64; 4]).unwrap()];
        let g = vec![Tensor::new(&[4], vec![3.0, -0.02, 1e-3, -50.0]).unwrap()];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &cfg, &mut s).unwrap();
        for (&pi, &gi) in p[0].data().iter().zip(g[0].data()) {
            // m̂ = g, v̂ = g², step = lr·g/(|g|+eps)
            let want = -cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((pi - want).abs() < 1e-12 * cfg.lr);
            assert!((pi + cfg.lr * gi.signum()).abs() < 1e-4 * cfg.lr);
        }
    }

    #[test]
    fn rejects_non_positive_lr() {
        let mut p = vec![Tensor::<f32>::zeros(&[1])];
        let g = vec![Tensor::zeros(&[1])];
        let mut s = AdamState::new(&p);
        let cfg = AdamConfig { lr: 0.0, ..Default::default() };
        assert!(matches!(adam_step(&mut p, &g, &cfg, &mut s), Err(Error::Parameter(_))));
    }

    #[test]
    fn identical_problems_give_identical_trajectories() {
        let run = || {
            let mut p = vec![Tensor::new(&[1], vec![2.5f32]).unwrap()];
            let mut s = AdamState::new(&p);
            let cfg = AdamConfig::default();
            let mut path = Vec::new();
            for _ in 0..50 {
                let x = p[0].data()[0];
                let g = vec![Tensor::new(&[1], vec![2.0 * (x - 1.0)]).unwrap()];
                adam_step(&mut p, &g, &cfg, &mut s).unwrap();
                path.push(p[0].data()[0].to_bits());
            }
            path
        };
        assert_eq!(run(), run());
    }
}
