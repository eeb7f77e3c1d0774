use crate::error::{Error, Result};
use crate::params::Parameters;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments for every tensor of a parameter structure `P`.
#[derive(Debug, Clone)]
pub struct AdamState<P> {
    pub m: P,
    pub v: P,
    pub t: u64,
    pub hyper: AdamHyper,
}

impl<P> AdamState<P> {
    pub fn new<T: Scalar>(params: &P, hyper: AdamHyper) -> Self
    where
        P: Parameters<T> + Clone,
    {
        AdamState {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            hyper,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient
/// entry is non-finite.
pub fn adam_step<T: Scalar, P: Parameters<T>>(
    params: &mut P,
    grads: &P,
    state: &mut AdamState<P>,
) -> Result<()> {
    let grads = grads.named_tensors();
    if let Some((name, _)) = grads.iter().find(|(_, g)| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient of `{name}`")));
    }
    let h = state.hyper;
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - h.beta1.powi(t);
    let c2 = 1.0 - h.beta2.powi(t);
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let (lr, eps) = (T::of(h.lr), T::of(h.eps));
    let (c1, c2) = (T::of(c1), T::of(c2));
    let ms = state.m.tensors_mut();
    let vs = state.v.tensors_mut();
    for (((p, (_, g)), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
        update(p, g, m, v, [b1, b2, lr, eps, c1, c2]);
    }
    Ok(())
}

fn update<T: Scalar>(p: &mut Tensor<T>, g: &Tensor<T>, m: &mut Tensor<T>, v: &mut Tensor<T>, k: [T; 6]) {
    let [b1, b2, lr, eps, c1, c2] = k;
    let one = T::one();
    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
    for (((p, &g), m), v) in it {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Step schedule: the base rate halved once per completed `halve_every`
/// iterations (iterations counted from 0).
pub fn scheduled_lr(base: f64, halve_every: usize, iteration: usize) -> f64 {
    let halvings = (iteration / halve_every.max(1)).min(i32::MAX as usize) as i32;
    base * 0.5f64.powi(halvings)
}
