//! EAM+ blocks: enhancement attention modules whose attention stage is SPA.
//!
//! ```text
//!   x ─┬─ conv3 ─ relu ─┐
//!      ├─ conv3 ─ relu ─┴─ concat ─ conv1 ─ relu ─ m
//!      │   m ─ conv3 ─ relu ─ conv3 ─ (+ m) ─ r
//!      │   r ─ SPA ─ s
//!      └───────────────────────────── (+ s) ─ out
//! ```

use rand::Rng;

use crate::attention::{spa_backward_cached, spa_forward_cached, GateMode, SpaCache, SpaParams};
use crate::error::Result;
use crate::ops::{concat_channels, relu, relu_backward, split_channels, ConvParams};
use crate::params::{join, Parameters};
use crate::wavelet::max_level;
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct EamPlusParams<T> {
    pub branch_a: ConvParams<T>,
    pub branch_b: ConvParams<T>,
    /// 1×1, `2C -> C`
    pub fuse: ConvParams<T>,
    pub res1: ConvParams<T>,
    pub res2: ConvParams<T>,
    pub spa: SpaParams<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct EamCache<T> {
    input: Tensor<T>,
    a_pre: Tensor<T>,
    b_pre: Tensor<T>,
    cat: Tensor<T>,
    m_pre: Tensor<T>,
    m: Tensor<T>,
    r1_pre: Tensor<T>,
    r1: Tensor<T>,
    spa: SpaCache<T>,
}

impl<T: Scalar> EamPlusParams<T> {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        spa_level: usize,
        reduction: usize,
        rng: &mut R,
    ) -> Self {
        EamPlusParams {
            branch_a: ConvParams::init(channels, channels, 3, rng),
            branch_b: ConvParams::init(channels, channels, 3, rng),
            fuse: ConvParams::init(channels, 2 * channels, 1, rng),
            res1: ConvParams::init(channels, channels, 3, rng),
            res2: ConvParams::init(channels, channels, 3, rng),
            spa: SpaParams::init(channels, spa_level, reduction, rng),
        }
    }

    pub fn zeros(channels: usize, spa_level: usize, reduction: usize) -> Self {
        EamPlusParams {
            branch_a: ConvParams::zeros(channels, channels, 3),
            branch_b: ConvParams::zeros(channels, channels, 3),
            fuse: ConvParams::zeros(channels, 2 * channels, 1),
            res1: ConvParams::zeros(channels, channels, 3),
            res2: ConvParams::zeros(channels, channels, 3),
            spa: SpaParams::zeros(channels, spa_level, reduction),
        }
    }

    /// SPA level usable on a map of the given shape: the configured level,
    /// capped so that both extents stay divisible.
    pub fn effective_spa_level(&self, shape: &[usize]) -> usize {
        self.spa.level().min(max_level(shape))
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EamCache<T>)> {
        let a_pre = self.branch_a.forward(x)?;
        let b_pre = self.branch_b.forward(x)?;
        let cat = concat_channels(&relu(&a_pre), &relu(&b_pre))?;
        let m_pre = self.fuse.forward(&cat)?;
        let m = relu(&m_pre);
        let r1_pre = self.res1.forward(&m)?;
        let r1 = relu(&r1_pre);
        let r = self.res2.forward(&r1)?.add(&m)?;
        let level = self.effective_spa_level(r.shape());
        let (s, spa) = spa_forward_cached(&r, &self.spa, level, GateMode::Learned)?;
        let out = s.add(x)?;
        Ok((
            out,
            EamCache {
                input: x.clone(),
                a_pre,
                b_pre,
                cat,
                m_pre,
                m,
                r1_pre,
                r1,
                spa,
            },
        ))
    }

    pub(crate) fn backward(
        &self,
        cache: &EamCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut EamPlusParams<T>,
    ) -> Result<Tensor<T>> {
        let g_r = spa_backward_cached(&self.spa, &cache.spa, grad_out, &mut grads.spa)?;
        let g_r1 = self.res2.backward(&cache.r1, &g_r, &mut grads.res2)?;
        let g_r1_pre = relu_backward(&cache.r1_pre, &g_r1)?;
        let mut g_m = self.res1.backward(&cache.m, &g_r1_pre, &mut grads.res1)?;
        g_m.add_assign(&g_r)?;
        let g_m_pre = relu_backward(&cache.m_pre, &g_m)?;
        let g_cat = self.fuse.backward(&cache.cat, &g_m_pre, &mut grads.fuse)?;
        let c = self.branch_a.out_channels();
        let halves = split_channels(&g_cat, &[c, c])?;
        let g_a_pre = relu_backward(&cache.a_pre, &halves[0])?;
        let g_b_pre = relu_backward(&cache.b_pre, &halves[1])?;
        let mut g_x = grad_out.clone();
        g_x.add_assign(&self.branch_a.backward(&cache.input, &g_a_pre, &mut grads.branch_a)?)?;
        g_x.add_assign(&self.branch_b.backward(&cache.input, &g_b_pre, &mut grads.branch_b)?)?;
        Ok(g_x)
    }
}

impl<T: Scalar> Parameters<T> for EamPlusParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.branch_a.visit(&join(prefix, "branch_a"), f);
        self.branch_b.visit(&join(prefix, "branch_b"), f);
        self.fuse.visit(&join(prefix, "fuse"), f);
        self.res1.visit(&join(prefix, "res1"), f);
        self.res2.visit(&join(prefix, "res2"), f);
        self.spa.visit(&join(prefix, "spa"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.branch_a.visit_mut(&join(prefix, "branch_a"), f);
        self.branch_b.visit_mut(&join(prefix, "branch_b"), f);
        self.fuse.visit_mut(&join(prefix, "fuse"), f);
        self.res1.visit_mut(&join(prefix, "res1"), f);
        self.res2.visit_mut(&join(prefix, "res2"), f);
        self.spa.visit_mut(&join(prefix, "spa"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn preserves_shape_and_caps_spa_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let block = EamPlusParams::<f64>::init(4, 3, 2, &mut rng);
        let x = Tensor::uniform(&[4, 4, 4], -1.0, 1.0, &mut rng);
        assert_eq!(block.effective_spa_level(x.shape()), 2);
        assert_eq!(block.forward(&x).unwrap().shape(), x.shape());
    }

    #[test]
    fn zero_block_is_identity_up_to_gating() {
        // With all weights zero the residual path is zero and SPA gates a zero map.
        let x = Tensor::<f64>::from_fn(&[2, 4, 4], |i| i as f64 * 0.1);
        let block = EamPlusParams::zeros(2, 1, 1);
        assert_eq!(block.forward(&x).unwrap(), x);
    }
}
