//! Noise estimation and pyramid reconstruction stages.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eam::{EamCache, EamPlusParams};
use super::ModelConfig;
use crate::attention::{spa_backward_cached, spa_forward_cached, GateMode, SpaCache, SpaParams};
use crate::error::{Error, Result};
use crate::ops::{concat_channels, relu, relu_backward, split_channels, ConvParams};
use crate::params::{join, Parameters};
use crate::wavelet::{build_pyramid, build_pyramid_backward, idwt2, idwt2_backward};
use crate::wavelet::{Dwt2Bands, SubbandPyramid, SubbandSet};
use crate::{Scalar, Tensor};

/// Convolutions in the estimation stage before its SPA block.
pub const ESTIMATOR_CONVS: usize = 4;

/// Stage one: convolutions with ReLU, an SPA block and a projection back to
/// the input channels, producing a per-pixel noise map.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorParams<T> {
    pub convs: Vec<ConvParams<T>>,
    pub spa: SpaParams<T>,
    pub out: ConvParams<T>,
}

/// Stage two: a head convolution over `[x, x′]`, one EAM+ sub-network per
/// pyramid level and a tail convolution added to the input.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructorParams<T> {
    pub head: ConvParams<T>,
    /// Deepest level first, matching `ModelConfig::eam_counts`.
    pub subnets: Vec<Vec<EamPlusParams<T>>>,
    pub tail: ConvParams<T>,
}

/// Every learnable tensor of the model plus the configuration it was built for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub config: ModelConfig,
    pub estimator: EstimatorParams<T>,
    pub reconstructor: ReconstructorParams<T>,
}

impl<T: Scalar> ModelWeights<T> {
    /// Uniform `±sqrt(1 / fan_in)` initialization from a seeded generator.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cin, c, n, r) = (
            config.input_channels,
            config.base_channels,
            config.spa_level,
            config.reduction,
        );
        let mut convs = vec![ConvParams::init(c, cin, 3, &mut rng)];
        for _ in 1..ESTIMATOR_CONVS {
            convs.push(ConvParams::init(c, c, 3, &mut rng));
        }
        let estimator = EstimatorParams {
            convs,
            spa: SpaParams::init(c, n, r, &mut rng),
            out: ConvParams::init(cin, c, 3, &mut rng),
        };
        let head = ConvParams::init(c, 2 * cin, 3, &mut rng);
        let subnets = config
            .eam_counts
            .iter()
            .map(|&count| {
                (0..count)
                    .map(|_| EamPlusParams::init(c, n, r, &mut rng))
                    .collect()
            })
            .collect();
        let tail = ConvParams::init(cin, c, 3, &mut rng);
        Ok(ModelWeights {
            config: config.clone(),
            estimator,
            reconstructor: ReconstructorParams {
                head,
                subnets,
                tail,
            },
        })
    }

    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        let mut w = Self::init(config, 0)?;
        w.visit_mut("", &mut |_, t| t.fill(T::zero()));
        Ok(w)
    }

    /// Builds weights for `config` from named tensors. Every registry name
    /// must be present exactly once with the expected shape.
    pub fn from_named(
        config: &ModelConfig,
        entries: impl IntoIterator<Item = (String, Tensor<T>)>,
    ) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut supplied: std::collections::HashMap<String, Tensor<T>> =
            std::collections::HashMap::new();
        for (name, t) in entries {
            if supplied.insert(name.clone(), t).is_some() {
                return Err(Error::Invalid(format!("duplicate parameter `{name}`")));
            }
        }
        let mut failure = None;
        w.visit_mut("", &mut |name, slot| {
            if failure.is_some() {
                return;
            }
            match supplied.remove(&name) {
                None => failure = Some(Error::MissingParameter(name)),
                Some(t) if t.shape() != slot.shape() => {
                    failure = Some(Error::InvalidShape {
                        op: "ModelWeights::from_named",
                        msg: format!(
                            "`{name}` has shape {:?}, expected {:?}",
                            t.shape(),
                            slot.shape()
                        ),
                    })
                }
                Some(t) => *slot = t,
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if let Some(extra) = supplied.into_keys().min() {
            return Err(Error::UnexpectedParameter(extra));
        }
        if let Some((name, _)) = w.named_tensors().into_iter().find(|(_, t)| !t.is_finite()) {
            return Err(Error::NonFinite(name));
        }
        Ok(w)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_cached(x)?.0)
    }

    pub(crate) fn forward_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, ModelCache<T>)> {
        let (noise, est) = self.estimate_cached(x)?;
        let (y, rec) = self.reconstruct_cached(x, &noise)?;
        Ok((y, ModelCache { est, rec }))
    }

    /// Gradients of `<grad_out, forward(x)>` with respect to the input and
    /// every parameter.
    pub(crate) fn backward(
        &self,
        cache: &ModelCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut ModelWeights<T>,
    ) -> Result<Tensor<T>> {
        let (mut g_x, g_noise) = self.reconstruct_backward(&cache.rec, grad_out, grads)?;
        g_x.add_assign(&self.estimate_backward(&cache.est, &g_noise, grads)?)?;
        Ok(g_x)
    }

    fn check_input(&self, x: &Tensor<T>, op: &'static str) -> Result<()> {
        let (c, _, _) = x.dims3()?;
        if c != self.config.input_channels {
            return Err(Error::InvalidShape {
                op,
                msg: format!(
                    "model expects {} input channels, got shape {:?}",
                    self.config.input_channels,
                    x.shape()
                ),
            });
        }
        Ok(())
    }

    pub(crate) fn estimate_cached(&self, x: &Tensor<T>) -> Result<(Tensor<T>, EstimatorCache<T>)> {
        self.check_input(x, "stage1_estimate")?;
        let p = &self.estimator;
        let mut inputs = Vec::with_capacity(p.convs.len());
        let mut pres = Vec::with_capacity(p.convs.len());
        let mut h = x.clone();
        for conv in &p.convs {
            let pre = conv.forward(&h)?;
            inputs.push(std::mem::replace(&mut h, relu(&pre)));
            pres.push(pre);
        }
        let (s, spa) = spa_forward_cached(&h, &p.spa, p.spa.level(), GateMode::Learned)?;
        let noise = p.out.forward(&s)?;
        Ok((
            noise,
            EstimatorCache {
                inputs,
                pres,
                spa,
                spa_out: s,
            },
        ))
    }

    pub(crate) fn estimate_backward(
        &self,
        cache: &EstimatorCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut ModelWeights<T>,
    ) -> Result<Tensor<T>> {
        let p = &self.estimator;
        let g = &mut grads.estimator;
        let g_s = p.out.backward(&cache.spa_out, grad_out, &mut g.out)?;
        let mut g_h = spa_backward_cached(&p.spa, &cache.spa, &g_s, &mut g.spa)?;
        for i in (0..p.convs.len()).rev() {
            let g_pre = relu_backward(&cache.pres[i], &g_h)?;
            g_h = p.convs[i].backward(&cache.inputs[i], &g_pre, &mut g.convs[i])?;
        }
        Ok(g_h)
    }

    pub(crate) fn reconstruct_cached(
        &self,
        x: &Tensor<T>,
        noise: &Tensor<T>,
    ) -> Result<(Tensor<T>, ReconstructorCache<T>)> {
        self.check_input(x, "stage2_reconstruct")?;
        x.expect_shape("stage2_reconstruct", noise.shape())?;
        let p = &self.reconstructor;
        let levels = self.config.pyramid_levels();
        let stacked = concat_channels(x, noise)?;
        let head_pre = p.head.forward(&stacked)?;
        let features = relu(&head_pre);
        let pyramid = build_pyramid(&features, levels)?;
        let mut h = pyramid.top_ll;
        let mut blocks = Vec::with_capacity(p.subnets.len());
        for (idx, subnet) in p.subnets.iter().enumerate() {
            let level = levels - idx;
            if level < levels {
                let t = &pyramid.highs[level];
                h = idwt2(&Dwt2Bands {
                    ll: h,
                    lh: t.lh.clone(),
                    hl: t.hl.clone(),
                    hh: t.hh.clone(),
                })?;
            }
            let mut caches = Vec::with_capacity(subnet.len());
            for block in subnet {
                let (out, cache) = block.forward_cached(&h)?;
                caches.push(cache);
                h = out;
            }
            blocks.push(caches);
        }
        let y = p.tail.forward(&h)?.add(x)?;
        Ok((
            y,
            ReconstructorCache {
                stacked,
                head_pre,
                blocks,
                tail_in: h,
            },
        ))
    }

    /// Returns the gradients with respect to `x` and to the noise map.
    pub(crate) fn reconstruct_backward(
        &self,
        cache: &ReconstructorCache<T>,
        grad_out: &Tensor<T>,
        grads: &mut ModelWeights<T>,
    ) -> Result<(Tensor<T>, Tensor<T>)> {
        let p = &self.reconstructor;
        let g = &mut grads.reconstructor;
        let levels = self.config.pyramid_levels();
        let mut g_h = p.tail.backward(&cache.tail_in, grad_out, &mut g.tail)?;
        let mut highs: Vec<Option<SubbandSet<T>>> = vec![None; levels];
        for idx in (0..p.subnets.len()).rev() {
            for (b, block) in p.subnets[idx].iter().enumerate().rev() {
                g_h = block.backward(&cache.blocks[idx][b], &g_h, &mut g.subnets[idx][b])?;
            }
            let level = levels - idx;
            if level < levels {
                let (ll, triple) = idwt2_backward(&g_h)?.into_parts();
                highs[level] = Some(triple);
                g_h = ll;
            }
        }
        let g_features = build_pyramid_backward(&SubbandPyramid {
            top_ll: g_h,
            highs: highs.into_iter().map(|t| t.expect("every level merged")).collect(),
        })?;
        let g_head_pre = relu_backward(&cache.head_pre, &g_features)?;
        let g_stacked = p.head.backward(&cache.stacked, &g_head_pre, &mut g.head)?;
        let cin = self.config.input_channels;
        let mut parts = split_channels(&g_stacked, &[cin, cin])?.into_iter();
        let mut g_x = parts.next().expect("two halves");
        let g_noise = parts.next().expect("two halves");
        g_x.add_assign(grad_out)?;
        Ok((g_x, g_noise))
    }
}

impl<T: Scalar> Parameters<T> for ModelWeights<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        let est = join(prefix, "estimator");
        for (i, c) in self.estimator.convs.iter().enumerate() {
            c.visit(&join(&est, &format!("conv{}", i + 1)), f);
        }
        self.estimator.spa.visit(&join(&est, "spa"), f);
        self.estimator.out.visit(&join(&est, "out"), f);
        let rec = join(prefix, "reconstructor");
        self.reconstructor.head.visit(&join(&rec, "head"), f);
        let levels = self.config.pyramid_levels();
        for (idx, subnet) in self.reconstructor.subnets.iter().enumerate() {
            for (b, block) in subnet.iter().enumerate() {
                block.visit(&join(&rec, &format!("level{}.eam{}", levels - idx, b + 1)), f);
            }
        }
        self.reconstructor.tail.visit(&join(&rec, "tail"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        let est = join(prefix, "estimator");
        for (i, c) in self.estimator.convs.iter_mut().enumerate() {
            c.visit_mut(&join(&est, &format!("conv{}", i + 1)), f);
        }
        self.estimator.spa.visit_mut(&join(&est, "spa"), f);
        self.estimator.out.visit_mut(&join(&est, "out"), f);
        let rec = join(prefix, "reconstructor");
        self.reconstructor.head.visit_mut(&join(&rec, "head"), f);
        let levels = self.config.pyramid_levels();
        for (idx, subnet) in self.reconstructor.subnets.iter_mut().enumerate() {
            for (b, block) in subnet.iter_mut().enumerate() {
                block.visit_mut(&join(&rec, &format!("level{}.eam{}", levels - idx, b + 1)), f);
            }
        }
        self.reconstructor.tail.visit_mut(&join(&rec, "tail"), f);
    }
}

#[derive(Debug, Clone)]
pub(crate) struct EstimatorCache<T> {
    inputs: Vec<Tensor<T>>,
    pres: Vec<Tensor<T>>,
    spa: SpaCache<T>,
    spa_out: Tensor<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct ReconstructorCache<T> {
    stacked: Tensor<T>,
    head_pre: Tensor<T>,
    blocks: Vec<Vec<EamCache<T>>>,
    tail_in: Tensor<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct ModelCache<T> {
    est: EstimatorCache<T>,
    rec: ReconstructorCache<T>,
}

/// Stage one: per-pixel noise map with the shape of `x`.
pub fn stage1_estimate<T: Scalar>(x: &Tensor<T>, w: &ModelWeights<T>) -> Result<Tensor<T>> {
    Ok(w.estimate_cached(x)?.0)
}

/// Stage two: denoised estimate from the input and its noise map.
pub fn stage2_reconstruct<T: Scalar>(
    x: &Tensor<T>,
    noise: &Tensor<T>,
    w: &ModelWeights<T>,
) -> Result<Tensor<T>> {
    Ok(w.reconstruct_cached(x, noise)?.0)
}

/// Gradients of `<grad_out, stage1_estimate(x)>`.
pub fn stage1_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &ModelWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ModelWeights<T>)> {
    let (noise, cache) = w.estimate_cached(x)?;
    noise.expect_shape("stage1_backward", grad_out.shape())?;
    let mut grads = w.zeros_like();
    let gx = w.estimate_backward(&cache, grad_out, &mut grads)?;
    Ok((gx, grads))
}

/// Gradients of `<grad_out, stage2_reconstruct(x, noise)>` with respect to
/// `x`, `noise` and the parameters.
pub fn stage2_backward<T: Scalar>(
    x: &Tensor<T>,
    noise: &Tensor<T>,
    w: &ModelWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, ModelWeights<T>)> {
    let (y, cache) = w.reconstruct_cached(x, noise)?;
    y.expect_shape("stage2_backward", grad_out.shape())?;
    let mut grads = w.zeros_like();
    let (gx, gn) = w.reconstruct_backward(&cache, grad_out, &mut grads)?;
    Ok((gx, gn, grads))
}

/// Gradients of `<grad_out, w.forward(x)>`.
pub fn model_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &ModelWeights<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, ModelWeights<T>)> {
    let (y, cache) = w.forward_cached(x)?;
    y.expect_shape("model_backward", grad_out.shape())?;
    let mut grads = w.zeros_like();
    let gx = w.backward(&cache, grad_out, &mut grads)?;
    Ok((gx, grads))
}

/// Reflects index `i` into `0..n` (edge pixel not repeated).
fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * n - 2;
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Extends `x` at the bottom and right by mirror reflection.
pub fn reflect_pad<T: Scalar>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if height < h || width < w {
        return Err(Error::InvalidShape {
            op: "reflect_pad",
            msg: format!("cannot pad {h}×{w} down to {height}×{width}"),
        });
    }
    Ok(Tensor::from_fn(&[c, height, width], |i| {
        let ch = i / (height * width);
        let r = reflect(i / width % height, h);
        let col = reflect(i % width, w);
        x.data()[(ch * h + r) * w + col]
    }))
}

pub fn crop<T: Scalar>(x: &Tensor<T>, height: usize, width: usize) -> Result<Tensor<T>> {
    let (c, h, w) = x.dims3()?;
    if height > h || width > w {
        return Err(Error::InvalidShape {
            op: "crop",
            msg: format!("cannot crop {h}×{w} to {height}×{width}"),
        });
    }
    Ok(Tensor::from_fn(&[c, height, width], |i| {
        let ch = i / (height * width);
        let r = i / width % height;
        let col = i % width;
        x.data()[(ch * h + r) * w + col]
    }))
}

/// Smallest multiple of `align` that is at least `n`.
pub fn aligned_extent(n: usize, align: usize) -> usize {
    n.div_ceil(align) * align
}

/// Denoises an image of any size: reflection-pads to the model alignment,
/// runs both stages, crops back and clamps to `[0, 1]`.
pub fn denoise_image<T: Scalar>(x: &Tensor<T>, w: &ModelWeights<T>) -> Result<Tensor<T>> {
    let (_, h, wd) = x.dims3()?;
    let align = w.config.alignment();
    let (ph, pw) = (aligned_extent(h, align), aligned_extent(wd, align));
    let padded = if (ph, pw) == (h, wd) {
        x.clone()
    } else {
        reflect_pad(x, ph, pw)?
    };
    let y = w.forward(&padded)?;
    let y = if (ph, pw) == (h, wd) { y } else { crop(&y, h, wd)? };
    Ok(y.map(|v| v.max(T::zero()).min(T::one())))
}
