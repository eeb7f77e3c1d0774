//! Channel attention and sub-band pyramid attention (SPA).
//!
//! Channel attention gates every channel of `x` by
//! `sigmoid(f2(relu(f1(gap(x)))))`. SPA decomposes `x` into a Haar pyramid,
//! gates the top low band, then walks back down: at each level the current
//! low band is stacked with that level's `lh, hl, hh` bands into a `4C`
//! channel tensor, gated by that level's attention block, split and merged
//! by the inverse transform. With zero levels SPA is plain channel attention.

use rand::Rng;

use crate::error::{Error, Result};
use crate::ops::{
    concat_channels_all, dense_backward, global_average_pool, global_average_pool_backward,
    split_channels, DenseParams,
};
use crate::params::{join, Parameters};
use crate::wavelet::{build_pyramid, build_pyramid_backward, idwt2, idwt2_backward};
use crate::wavelet::{Dwt2Bands, SubbandPyramid, SubbandSet};
use crate::{Scalar, Tensor};

/// How attention gates are produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GateMode<T> {
    Learned,
    /// Every gate is replaced by the constant; parameters receive no gradient.
    /// Test hook for the all-pass identity.
    Fixed(T),
}

/// Width of the squeeze layer: `channels / reduction`, at least 1.
pub fn reduced_channels(channels: usize, reduction: usize) -> usize {
    (channels / reduction.max(1)).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelAttentionParams<T> {
    /// `C -> C / r`
    pub f1: DenseParams<T>,
    /// `C / r -> C`
    pub f2: DenseParams<T>,
}

impl<T: Scalar> ChannelAttentionParams<T> {
    pub fn new(f1: DenseParams<T>, f2: DenseParams<T>) -> Result<Self> {
        if f1.in_features() != f2.out_features() || f1.out_features() != f2.in_features() {
            return Err(Error::InvalidShape {
                op: "ChannelAttentionParams::new",
                msg: format!(
                    "f1 {:?} and f2 {:?} do not form a C -> C/r -> C bottleneck",
                    f1.weights.shape(),
                    f2.weights.shape()
                ),
            });
        }
        Ok(ChannelAttentionParams { f1, f2 })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, reduction: usize, rng: &mut R) -> Self {
        let k = reduced_channels(channels, reduction);
        ChannelAttentionParams {
            f1: DenseParams::init(k, channels, rng),
            f2: DenseParams::init(channels, k, rng),
        }
    }

    pub fn zeros(channels: usize, reduction: usize) -> Self {
        let k = reduced_channels(channels, reduction);
        ChannelAttentionParams {
            f1: DenseParams::zeros(k, channels),
            f2: DenseParams::zeros(channels, k),
        }
    }

    pub fn channels(&self) -> usize {
        self.f1.in_features()
    }
}

impl<T: Scalar> Parameters<T> for ChannelAttentionParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.f1.visit(&join(prefix, "f1"), f);
        self.f2.visit(&join(prefix, "f2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.f1.visit_mut(&join(prefix, "f1"), f);
        self.f2.visit_mut(&join(prefix, "f2"), f);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct AttentionCache<T> {
    pooled: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
    gates: Tensor<T>,
    learned: bool,
}

pub(crate) fn attention_forward<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
    mode: GateMode<T>,
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let (c, h, w) = x.dims3()?;
    if c != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "channel_attention",
            expected: p.f1.weights.shape().to_vec(),
            got: x.shape().to_vec(),
        });
    }
    let pooled = global_average_pool(x)?;
    let hidden_pre = p.f1.forward(&pooled)?;
    let hidden = crate::ops::relu(&hidden_pre);
    let gates = match mode {
        GateMode::Learned => crate::ops::sigmoid(&p.f2.forward(&hidden)?),
        GateMode::Fixed(v) => Tensor::full(&[c], v),
    };
    let mut y = x.clone();
    for (ch, &g) in gates.data().iter().enumerate() {
        y.channel_mut(ch).iter_mut().for_each(|v| *v *= g);
    }
    debug_assert_eq!(y.len(), c * h * w);
    Ok((
        y,
        AttentionCache {
            pooled,
            hidden_pre,
            hidden,
            gates,
            learned: matches!(mode, GateMode::Learned),
        },
    ))
}

pub(crate) fn attention_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
    cache: &AttentionCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut ChannelAttentionParams<T>,
) -> Result<Tensor<T>> {
    x.expect_shape("channel_attention_backward", grad_out.shape())?;
    let (c, _, _) = x.dims3()?;
    let mut grad_x = grad_out.clone();
    for (ch, &g) in cache.gates.data().iter().enumerate() {
        grad_x.channel_mut(ch).iter_mut().for_each(|v| *v *= g);
    }
    if !cache.learned {
        return Ok(grad_x);
    }
    // d loss / d gate[c] = sum over the plane of grad_out * x
    let grad_gates = Tensor::from_fn(&[c], |ch| {
        crate::tensor::dot(grad_out.channel(ch), x.channel(ch))
    });
    let grad_logits = crate::ops::sigmoid_backward(&cache.gates, &grad_gates)?;
    let g2 = dense_backward(&cache.hidden, &p.f2, &grad_logits)?;
    grads.f2.weights.add_assign(&g2.grad_weights)?;
    grads.f2.bias.add_assign(&g2.grad_bias)?;
    let grad_hidden_pre = crate::ops::relu_backward(&cache.hidden_pre, &g2.grad_input)?;
    let g1 = dense_backward(&cache.pooled, &p.f1, &grad_hidden_pre)?;
    grads.f1.weights.add_assign(&g1.grad_weights)?;
    grads.f1.bias.add_assign(&g1.grad_bias)?;
    let grad_pooled = g1.grad_input.reshape(&[c, 1, 1])?;
    grad_x.add_assign(&global_average_pool_backward(&grad_pooled, x.shape())?)?;
    Ok(grad_x)
}

/// Returns the gated tensor and the `C` gate values.
pub fn channel_attention<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    channel_attention_with(x, p, GateMode::Learned)
}

pub fn channel_attention_with<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
    mode: GateMode<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let (y, cache) = attention_forward(x, p, mode)?;
    Ok((y, cache.gates))
}

pub fn channel_attention_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &ChannelAttentionParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ChannelAttentionParams<T>)> {
    let (_, cache) = attention_forward(x, p, GateMode::Learned)?;
    let mut grads = p.zeros_like();
    let gx = attention_backward(x, p, &cache, grad_out, &mut grads)?;
    Ok((gx, grads))
}

/// Parameters of an `n`-level SPA block over `C` channels.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaParams<T> {
    /// Attention over the `C`-channel top low band.
    pub top: ChannelAttentionParams<T>,
    /// `levels[i - 1]` gates the `4C`-channel stack of level `i`.
    pub levels: Vec<ChannelAttentionParams<T>>,
}

impl<T: Scalar> SpaParams<T> {
    pub fn new(top: ChannelAttentionParams<T>, levels: Vec<ChannelAttentionParams<T>>) -> Result<Self> {
        let c = top.channels();
        if let Some(bad) = levels.iter().find(|l| l.channels() != 4 * c) {
            return Err(Error::InvalidShape {
                op: "SpaParams::new",
                msg: format!(
                    "level attention must span {} channels, got {}",
                    4 * c,
                    bad.channels()
                ),
            });
        }
        Ok(SpaParams { top, levels })
    }

    pub fn init<R: Rng + ?Sized>(channels: usize, level: usize, reduction: usize, rng: &mut R) -> Self {
        let top = ChannelAttentionParams::init(channels, reduction, rng);
        let levels = (0..level)
            .map(|_| ChannelAttentionParams::init(4 * channels, reduction, rng))
            .collect();
        SpaParams { top, levels }
    }

    pub fn zeros(channels: usize, level: usize, reduction: usize) -> Self {
        SpaParams {
            top: ChannelAttentionParams::zeros(channels, reduction),
            levels: (0..level)
                .map(|_| ChannelAttentionParams::zeros(4 * channels, reduction))
                .collect(),
        }
    }

    pub fn level(&self) -> usize {
        self.levels.len()
    }

    pub fn channels(&self) -> usize {
        self.top.channels()
    }
}

impl<T: Scalar> Parameters<T> for SpaParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        self.top.visit(&join(prefix, "top"), f);
        for (i, l) in self.levels.iter().enumerate() {
            l.visit(&join(prefix, &format!("level{}", i + 1)), f);
        }
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        self.top.visit_mut(&join(prefix, "top"), f);
        for (i, l) in self.levels.iter_mut().enumerate() {
            l.visit_mut(&join(prefix, &format!("level{}", i + 1)), f);
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct SpaCache<T> {
    top_in: Tensor<T>,
    top: AttentionCache<T>,
    /// Indexed by level - 1.
    stacked_in: Vec<Tensor<T>>,
    stacked: Vec<AttentionCache<T>>,
}

/// SPA using only the first `levels` level blocks of `p`.
pub(crate) fn spa_forward_cached<T: Scalar>(
    x: &Tensor<T>,
    p: &SpaParams<T>,
    levels: usize,
    mode: GateMode<T>,
) -> Result<(Tensor<T>, SpaCache<T>)> {
    let (c, _, _) = x.dims3()?;
    if c != p.channels() {
        return Err(Error::ShapeMismatch {
            op: "spa_forward",
            expected: vec![p.channels()],
            got: x.shape().to_vec(),
        });
    }
    assert!(levels <= p.level(), "SPA block has only {} levels", p.level());
    let pyramid = build_pyramid(x, levels)?;
    let (mut ll, top) = attention_forward(&pyramid.top_ll, &p.top, mode)?;
    let mut stacked_in = vec![None; levels];
    let mut stacked = vec![None; levels];
    for i in (1..=levels).rev() {
        let t = &pyramid.highs[i - 1];
        let z = concat_channels_all(&[&ll, &t.lh, &t.hl, &t.hh])?;
        let (zg, cache) = attention_forward(&z, &p.levels[i - 1], mode)?;
        let mut parts = split_channels(&zg, &[c; 4])?.into_iter();
        let mut next = || parts.next().expect("four bands");
        ll = idwt2(&Dwt2Bands {
            ll: next(),
            lh: next(),
            hl: next(),
            hh: next(),
        })?;
        stacked_in[i - 1] = Some(z);
        stacked[i - 1] = Some(cache);
    }
    Ok((
        ll,
        SpaCache {
            top_in: pyramid.top_ll,
            top,
            stacked_in: stacked_in.into_iter().map(Option::unwrap).collect(),
            stacked: stacked.into_iter().map(Option::unwrap).collect(),
        },
    ))
}

pub(crate) fn spa_backward_cached<T: Scalar>(
    p: &SpaParams<T>,
    cache: &SpaCache<T>,
    grad_out: &Tensor<T>,
    grads: &mut SpaParams<T>,
) -> Result<Tensor<T>> {
    let levels = cache.stacked.len();
    let c = p.channels();
    let mut g = grad_out.clone();
    let mut highs = Vec::with_capacity(levels);
    for i in 1..=levels {
        let gb = idwt2_backward(&g)?;
        let gz = concat_channels_all(&[&gb.ll, &gb.lh, &gb.hl, &gb.hh])?;
        let gz_in = attention_backward(
            &cache.stacked_in[i - 1],
            &p.levels[i - 1],
            &cache.stacked[i - 1],
            &gz,
            &mut grads.levels[i - 1],
        )?;
        let mut parts = split_channels(&gz_in, &[c; 4])?.into_iter();
        g = parts.next().expect("four bands");
        highs.push(SubbandSet {
            lh: parts.next().expect("four bands"),
            hl: parts.next().expect("four bands"),
            hh: parts.next().expect("four bands"),
        });
    }
    let g_top = attention_backward(&cache.top_in, &p.top, &cache.top, &g, &mut grads.top)?;
    build_pyramid_backward(&SubbandPyramid {
        top_ll: g_top,
        highs,
    })
}

/// Output has the shape of `x`; height and width must be divisible by `2ⁿ`
/// where `n = p.level()`.
pub fn spa_forward<T: Scalar>(x: &Tensor<T>, p: &SpaParams<T>) -> Result<Tensor<T>> {
    spa_forward_with(x, p, GateMode::Learned)
}

pub fn spa_forward_with<T: Scalar>(
    x: &Tensor<T>,
    p: &SpaParams<T>,
    mode: GateMode<T>,
) -> Result<Tensor<T>> {
    Ok(spa_forward_cached(x, p, p.level(), mode)?.0)
}

pub fn spa_backward<T: Scalar>(
    x: &Tensor<T>,
    p: &SpaParams<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, SpaParams<T>)> {
    spa_backward_with(x, p, grad_out, GateMode::Learned)
}

pub fn spa_backward_with<T: Scalar>(
    x: &Tensor<T>,
    p: &SpaParams<T>,
    grad_out: &Tensor<T>,
    mode: GateMode<T>,
) -> Result<(Tensor<T>, SpaParams<T>)> {
    x.expect_shape("spa_backward", grad_out.shape())?;
    let (_, cache) = spa_forward_cached(x, p, p.level(), mode)?;
    let mut grads = p.zeros_like();
    let gx = spa_backward_cached(p, &cache, grad_out, &mut grads)?;
    Ok((gx, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::dwt2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    /// Gate computation written out step by step.
    fn attention_oracle(x: &Tensor<f64>, p: &ChannelAttentionParams<f64>) -> Tensor<f64> {
        let (c, h, w) = x.dims3().unwrap();
        let mut pooled = vec![0.0; c];
        for ch in 0..c {
            for i in 0..h * w {
                pooled[ch] += x.data()[ch * h * w + i];
            }
            pooled[ch] /= (h * w) as f64;
        }
        let k = p.f1.out_features();
        let mut hidden = vec![0.0; k];
        for o in 0..k {
            let mut acc = p.f1.bias.data()[o];
            for i in 0..c {
                acc += p.f1.weights.data()[o * c + i] * pooled[i];
            }
            hidden[o] = acc.max(0.0);
        }
        let mut out = x.clone();
        for ch in 0..c {
            let mut acc = p.f2.bias.data()[ch];
            for i in 0..k {
                acc += p.f2.weights.data()[ch * k + i] * hidden[i];
            }
            let gate = 1.0 / (1.0 + (-acc).exp());
            out.channel_mut(ch).iter_mut().for_each(|v| *v *= gate);
        }
        out
    }

    #[test]
    fn zero_params_give_half_gates() {
        let x = Tensor::<f64>::uniform(&[3, 4, 4], -1.0, 1.0, &mut rng(1));
        let p = ChannelAttentionParams::zeros(3, 1);
        let (y, gates) = channel_attention(&x, &p).unwrap();
        assert!(gates.data().iter().all(|&g| g == 0.5));
        assert_eq!(y, x.scale(0.5));
    }

    #[test]
    fn saturated_bias_passes_input() {
        let x = Tensor::<f64>::uniform(&[4, 4, 4], -1.0, 1.0, &mut rng(2));
        let mut p = ChannelAttentionParams::zeros(4, 2);
        p.f2.bias.fill(50.0);
        let (y, gates) = channel_attention(&x, &p).unwrap();
        assert!(gates.data().iter().all(|&g| (1.0 - g).abs() < 1e-20));
        assert!(y.max_abs_diff(&x).unwrap() < 1e-12);
    }

    #[test]
    fn matches_composition_oracle() {
        let mut r = rng(3);
        let x = Tensor::<f64>::uniform(&[4, 4, 4], -1.0, 1.0, &mut r);
        let p = ChannelAttentionParams::init(4, 2, &mut r);
        let (y, gates) = channel_attention(&x, &p).unwrap();
        assert!(y.max_abs_diff(&attention_oracle(&x, &p)).unwrap() < 1e-12);
        assert!(gates.data().iter().all(|&g| g > 0.0 && g < 1.0));
    }

    #[test]
    fn rejects_channel_mismatch() {
        let x = Tensor::<f64>::zeros(&[3, 2, 2]);
        let p = ChannelAttentionParams::zeros(4, 2);
        assert!(channel_attention(&x, &p).is_err());
    }

    #[test]
    fn level_zero_spa_is_channel_attention() {
        let mut r = rng(4);
        let x = Tensor::<f64>::uniform(&[4, 6, 6], -1.0, 1.0, &mut r);
        let p = SpaParams::init(4, 0, 2, &mut r);
        let (ca, _) = channel_attention(&x, &p.top).unwrap();
        assert_eq!(spa_forward(&x, &p).unwrap(), ca);
    }

    #[test]
    fn all_pass_gates_make_spa_identity() {
        let mut r = rng(5);
        let x = Tensor::<f64>::uniform(&[2, 16, 16], -1.0, 1.0, &mut r);
        let p = SpaParams::init(2, 3, 2, &mut r);
        let y = spa_forward_with(&x, &p, GateMode::Fixed(1.0)).unwrap();
        assert!(y.max_abs_diff(&x).unwrap() < 1e-10);
    }

    #[test]
    fn level_one_matches_hand_composition() {
        let mut r = rng(6);
        let x = Tensor::<f64>::uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let p = SpaParams::init(2, 1, 2, &mut r);

        let b = dwt2(&x).unwrap();
        let ll = attention_oracle(&b.ll, &p.top);
        let z = concat_channels_all(&[&ll, &b.lh, &b.hl, &b.hh]).unwrap();
        let z = attention_oracle(&z, &p.levels[0]);
        let parts = split_channels(&z, &[2, 2, 2, 2]).unwrap();
        let expect = idwt2(&Dwt2Bands {
            ll: parts[0].clone(),
            lh: parts[1].clone(),
            hl: parts[2].clone(),
            hh: parts[3].clone(),
        })
        .unwrap();
        let y = spa_forward(&x, &p).unwrap();
        assert!(y.max_abs_diff(&expect).unwrap() < 1e-12);
    }

    #[test]
    fn spa_preserves_shape_and_rejects_indivisible_input() {
        let mut r = rng(7);
        let p = SpaParams::init(2, 2, 2, &mut r);
        let x = Tensor::<f64>::uniform(&[2, 8, 12], -1.0, 1.0, &mut r);
        assert_eq!(spa_forward(&x, &p).unwrap().shape(), x.shape());
        let bad = Tensor::<f64>::zeros(&[2, 6, 8]);
        assert!(matches!(
            spa_forward(&bad, &p),
            Err(Error::PyramidLevel { max_level: 1, .. })
        ));
    }

    #[test]
    fn gating_depends_on_magnitude() {
        let mut r = rng(8);
        let x = Tensor::<f64>::uniform(&[2, 8, 8], 0.0, 1.0, &mut r);
        let p = SpaParams::init(2, 2, 1, &mut r);
        let y1 = spa_forward(&x.scale(2.0), &p).unwrap();
        let y2 = spa_forward(&x, &p).unwrap().scale(2.0);
        assert!(y1.max_abs_diff(&y2).unwrap() > 1e-6);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut r = rng(9);
        let x = Tensor::<f64>::uniform(&[2, 4, 4], -1.0, 1.0, &mut r);
        let p = SpaParams::init(2, 1, 2, &mut r);
        let (gx, gp) = spa_backward(&x, &p, &Tensor::zeros(&[2, 4, 4])).unwrap();
        assert!(gx.data().iter().all(|&v| v == 0.0));
        assert!(gp.named_tensors().iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn all_pass_backward_is_identity() {
        let mut r = rng(10);
        let x = Tensor::<f64>::uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
        let g = Tensor::<f64>::uniform(&[2, 8, 8], -1.0, 1.0, &mut r);
        let p = SpaParams::init(2, 2, 2, &mut r);
        let (gx, gp) = spa_backward_with(&x, &p, &g, GateMode::Fixed(1.0)).unwrap();
        assert!(gx.max_abs_diff(&g).unwrap() < 1e-10);
        assert_eq!(gp.parameter_count(), p.parameter_count());
    }

    #[test]
    fn attention_backward_matches_finite_differences() {
        let mut r = rng(11);
        let x = Tensor::<f64>::uniform(&[4, 3, 3], -1.0, 1.0, &mut r);
        let p = ChannelAttentionParams::init(4, 2, &mut r);
        let probe = Tensor::<f64>::uniform(&[4, 3, 3], -1.0, 1.0, &mut r);
        let (gx, _) = channel_attention_backward(&x, &p, &probe).unwrap();
        let h = 1e-5;
        let loss = |x: &Tensor<f64>| channel_attention(x, &p).unwrap().0.dot(&probe).unwrap();
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (loss(&xp) - loss(&xm)) / (2.0 * h);
            assert!((fd - gx.data()[i]).abs() < 1e-7, "{i}: {fd} vs {}", gx.data()[i]);
        }
    }
}
