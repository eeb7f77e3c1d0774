//! Central finite-difference checks of every hand-written backward pass.
//!
//! Each check differentiates the scalar probe `<g, f(θ)>` for a random `g`
//! numerically and compares against the analytic gradient. The numeric side
//! only ever calls forward functions.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{
    channel_attention, channel_attention_backward, spa_backward, spa_forward,
    ChannelAttentionParams, SpaParams,
};
use crate::error::Result;
use crate::network::{
    model_backward, stage1_backward, stage1_estimate, stage2_backward, stage2_reconstruct,
    ModelConfig, ModelWeights,
};
use crate::ops::{
    concat_channels, conv2d_backward, conv2d_forward, dense_backward, dense_forward,
    global_average_pool, global_average_pool_backward, relu, relu_backward, sigmoid,
    sigmoid_backward, ConvParams, DenseParams,
};
use crate::params::Parameters;
use crate::wavelet::{dwt2, dwt2_backward, idwt2, idwt2_backward, Dwt2Bands};
use crate::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub step: f64,
    /// Maximum relative error per component.
    pub relative: f64,
    /// Components whose absolute error is below this pass regardless.
    pub absolute: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            step: 1e-5,
            relative: 1e-4,
            absolute: 1e-7,
        }
    }
}

/// Worst-case agreement over one group of gradient components.
#[derive(Debug, Clone)]
pub struct GroupReport {
    pub group: String,
    pub checked: usize,
    pub max_relative: f64,
    pub max_absolute: f64,
    /// Name and index of the worst failing component, if any.
    pub worst_failure: Option<String>,
    /// Components that only agreed at a tenth of the step, i.e. where a ReLU
    /// kink fell inside the first difference stencil.
    pub retried: usize,
}

impl GroupReport {
    fn new(group: &str) -> Self {
        GroupReport {
            group: group.to_string(),
            checked: 0,
            max_relative: 0.0,
            max_absolute: 0.0,
            worst_failure: None,
            retried: 0,
        }
    }

    pub fn passed(&self) -> bool {
        self.worst_failure.is_none()
    }

    fn agrees(analytic: f64, numeric: f64, tol: &Tolerance) -> bool {
        let abs = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        abs < tol.absolute || abs < tol.relative * scale
    }

    /// Differentiates `at(delta)` (the loss with one component shifted by
    /// `delta`) at `tol.step`, retrying once at a tenth of the step.
    fn compare(
        &mut self,
        label: impl FnOnce() -> String,
        analytic: f64,
        at: &mut dyn FnMut(f64) -> Result<f64>,
        tol: &Tolerance,
    ) -> Result<()> {
        let mut numeric = (at(tol.step)? - at(-tol.step)?) / (2.0 * tol.step);
        if !Self::agrees(analytic, numeric, tol) {
            let h = tol.step / 10.0;
            let fine = (at(h)? - at(-h)?) / (2.0 * h);
            if Self::agrees(analytic, fine, tol) {
                self.retried += 1;
                numeric = fine;
            }
        }
        self.record(label, analytic, numeric, tol);
        Ok(())
    }

    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, tol: &Tolerance) {
        let abs = (analytic - numeric).abs();
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale > 0.0 { abs / scale } else { 0.0 };
        self.checked += 1;
        self.max_absolute = self.max_absolute.max(abs);
        if scale <= tol.absolute {
            return;
        }
        let worst = rel > self.max_relative;
        self.max_relative = self.max_relative.max(rel);
        let failed = abs >= tol.absolute && rel >= tol.relative;
        if failed && (worst || self.worst_failure.is_none()) {
            self.worst_failure = Some(format!(
                "{} (analytic {analytic:.6e}, numeric {numeric:.6e})",
                label()
            ));
        }
    }
}

/// Which components of a tensor to check.
#[derive(Debug, Clone, Copy)]
pub enum Coverage {
    All,
    /// A seeded random subset of at most this many entries.
    Sample(usize),
}

fn indices(len: usize, coverage: Coverage, rng: &mut ChaCha8Rng) -> Vec<usize> {
    match coverage {
        Coverage::Sample(k) if k < len => {
            let mut v = sample(rng, len, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..len).collect(),
    }
}

/// Compares `analytic` against central differences of `f` around `x`.
pub fn check_tensor(
    report: &mut GroupReport,
    name: &str,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    f: &mut dyn FnMut(&Tensor<f64>) -> Result<f64>,
    coverage: Coverage,
    tol: &Tolerance,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let mut work = x.clone();
    for i in indices(x.len(), coverage, rng) {
        let orig = x.data()[i];
        let mut at = |d: f64| {
            work.data_mut()[i] = orig + d;
            let v = f(&work);
            work.data_mut()[i] = orig;
            v
        };
        report.compare(|| format!("{name}[{i}]"), analytic.data()[i], &mut at, tol)?;
    }
    Ok(())
}

/// Checks every tensor of a parameter structure, grouping by `group_of(name)`.
pub fn check_parameters<P: Parameters<f64> + Clone>(
    reports: &mut BTreeMap<String, GroupReport>,
    group_of: &dyn Fn(&str) -> String,
    include: &dyn Fn(&str) -> bool,
    params: &P,
    grads: &P,
    f: &mut dyn FnMut(&P) -> Result<f64>,
    coverage: Coverage,
    tol: &Tolerance,
    rng: &mut ChaCha8Rng,
) -> Result<()> {
    let grad_list: Vec<(String, Tensor<f64>)> = grads
        .named_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut work = params.clone();
    for (k, (name, analytic)) in grad_list.iter().enumerate() {
        if !include(name) {
            continue;
        }
        let group = group_of(name);
        let report = reports
            .entry(group.clone())
            .or_insert_with(|| GroupReport::new(&group));
        for i in indices(analytic.len(), coverage, rng) {
            let orig = work.tensors_mut()[k].data()[i];
            let mut at = |d: f64| {
                work.tensors_mut()[k].data_mut()[i] = orig + d;
                let v = f(&work);
                work.tensors_mut()[k].data_mut()[i] = orig;
                v
            };
            report.compare(|| format!("{name}[{i}]"), analytic.data()[i], &mut at, tol)?;
        }
    }
    Ok(())
}

/// Component families exposed by the `gradcheck` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Layers,
    Spa,
    Network,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "layers" => Ok(Suite::Layers),
            "spa" => Ok(Suite::Spa),
            "network" => Ok(Suite::Network),
            other => Err(format!("unknown gradcheck module `{other}` (layers|spa|network)")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SuiteOptions {
    /// Negates one analytic gradient so the suite must fail.
    pub corrupt: bool,
}

pub fn run_suite(suite: Suite, seed: u64, options: SuiteOptions) -> Result<Vec<GroupReport>> {
    let tol = Tolerance::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match suite {
        Suite::Layers => layers_suite(&mut rng, &tol, options),
        Suite::Spa => spa_suite(&mut rng, &tol, options),
        Suite::Network => network_suite(&mut rng, &tol, options),
    }
}

fn probe_loss(y: &Tensor<f64>, probe: &Tensor<f64>) -> Result<f64> {
    y.dot(probe)
}

fn corrupt_if(t: Tensor<f64>, corrupt: bool) -> Tensor<f64> {
    if corrupt {
        t.scale(-1.0)
    } else {
        t
    }
}

/// Uniform values in `±[0.05, 1)`, away from the relu kink.
fn off_kink(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

fn layers_suite(rng: &mut ChaCha8Rng, tol: &Tolerance, opt: SuiteOptions) -> Result<Vec<GroupReport>> {
    let mut out = Vec::new();

    for (stride, h, w) in [(1usize, 5usize, 6usize), (2, 7, 5)] {
        let x = Tensor::uniform(&[2, h, w], -1.0, 1.0, rng);
        let mut p = ConvParams::init(3, 2, 3, rng);
        p.stride = stride;
        let probe = Tensor::uniform(&conv2d_forward(&x, &p)?.shape().to_vec(), -1.0, 1.0, rng);
        let g = conv2d_backward(&x, &p, &probe)?;
        let mut r = GroupReport::new(&format!("conv2d stride {stride}"));
        check_tensor(&mut r, "input", &x, &g.grad_input, &mut |x| probe_loss(&conv2d_forward(x, &p)?, &probe), Coverage::All, tol, rng)?;
        let gw = corrupt_if(g.grad_weights, opt.corrupt);
        check_tensor(&mut r, "weight", &p.weights, &gw, &mut |w| {
            let q = ConvParams { weights: w.clone(), ..p.clone() };
            probe_loss(&conv2d_forward(&x, &q)?, &probe)
        }, Coverage::All, tol, rng)?;
        check_tensor(&mut r, "bias", &p.bias, &g.grad_bias, &mut |b| {
            let q = ConvParams { bias: b.clone(), ..p.clone() };
            probe_loss(&conv2d_forward(&x, &q)?, &probe)
        }, Coverage::All, tol, rng)?;
        out.push(r);
    }

    {
        let x = Tensor::uniform(&[5], -1.0, 1.0, rng);
        let p = DenseParams::init(3, 5, rng);
        let probe = Tensor::uniform(&[3], -1.0, 1.0, rng);
        let g = dense_backward(&x, &p, &probe)?;
        let mut r = GroupReport::new("dense");
        check_tensor(&mut r, "input", &x, &g.grad_input, &mut |x| probe_loss(&dense_forward(x, &p)?, &probe), Coverage::All, tol, rng)?;
        check_tensor(&mut r, "weight", &p.weights, &g.grad_weights, &mut |w| {
            probe_loss(&dense_forward(&x, &DenseParams { weights: w.clone(), bias: p.bias.clone() })?, &probe)
        }, Coverage::All, tol, rng)?;
        check_tensor(&mut r, "bias", &p.bias, &g.grad_bias, &mut |b| {
            probe_loss(&dense_forward(&x, &DenseParams { weights: p.weights.clone(), bias: b.clone() })?, &probe)
        }, Coverage::All, tol, rng)?;
        out.push(r);
    }

    {
        let x = off_kink(&[2, 3, 3], rng);
        let probe = Tensor::uniform(&[2, 3, 3], -1.0, 1.0, rng);
        let mut r = GroupReport::new("relu");
        let g = relu_backward(&x, &probe)?;
        check_tensor(&mut r, "input", &x, &g, &mut |x| probe_loss(&relu(x), &probe), Coverage::All, tol, rng)?;
        out.push(r);

        let x = Tensor::uniform(&[2, 3, 3], -4.0, 4.0, rng);
        let mut r = GroupReport::new("sigmoid");
        let g = sigmoid_backward(&sigmoid(&x), &probe)?;
        check_tensor(&mut r, "input", &x, &g, &mut |x| probe_loss(&sigmoid(x), &probe), Coverage::All, tol, rng)?;
        out.push(r);
    }

    {
        let x = Tensor::uniform(&[3, 4, 5], -1.0, 1.0, rng);
        let probe = Tensor::uniform(&[3, 1, 1], -1.0, 1.0, rng);
        let g = global_average_pool_backward(&probe, x.shape())?;
        let mut r = GroupReport::new("global_average_pool");
        check_tensor(&mut r, "input", &x, &g, &mut |x| probe_loss(&global_average_pool(x)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);

        let a = Tensor::uniform(&[2, 3, 3], -1.0, 1.0, rng);
        let b = Tensor::uniform(&[1, 3, 3], -1.0, 1.0, rng);
        let probe = Tensor::uniform(&[3, 3, 3], -1.0, 1.0, rng);
        let parts = crate::ops::split_channels(&probe, &[2, 1])?;
        let mut r = GroupReport::new("concat_channels");
        check_tensor(&mut r, "a", &a, &parts[0], &mut |a| probe_loss(&concat_channels(a, &b)?, &probe), Coverage::All, tol, rng)?;
        check_tensor(&mut r, "b", &b, &parts[1], &mut |b| probe_loss(&concat_channels(&a, b)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);
    }

    {
        let x = Tensor::uniform(&[2, 4, 6], -1.0, 1.0, rng);
        let shape = [2, 2, 3];
        let probe = Dwt2Bands {
            ll: Tensor::uniform(&shape, -1.0, 1.0, rng),
            lh: Tensor::uniform(&shape, -1.0, 1.0, rng),
            hl: Tensor::uniform(&shape, -1.0, 1.0, rng),
            hh: Tensor::uniform(&shape, -1.0, 1.0, rng),
        };
        let bands_loss = |b: &Dwt2Bands<f64>| -> Result<f64> {
            Ok(b.ll.dot(&probe.ll)? + b.lh.dot(&probe.lh)? + b.hl.dot(&probe.hl)? + b.hh.dot(&probe.hh)?)
        };
        let mut r = GroupReport::new("dwt2");
        let g = dwt2_backward(&probe)?;
        check_tensor(&mut r, "input", &x, &g, &mut |x| bands_loss(&dwt2(x)?), Coverage::All, tol, rng)?;
        out.push(r);

        let bands = dwt2(&x)?;
        let probe = Tensor::uniform(&[2, 4, 6], -1.0, 1.0, rng);
        let g = idwt2_backward(&probe)?;
        let mut r = GroupReport::new("idwt2");
        for (name, band, grad) in [("ll", &bands.ll, &g.ll), ("lh", &bands.lh, &g.lh), ("hl", &bands.hl, &g.hl), ("hh", &bands.hh, &g.hh)] {
            check_tensor(&mut r, name, band, grad, &mut |t| {
                let mut b = bands.clone();
                match name {
                    "ll" => b.ll = t.clone(),
                    "lh" => b.lh = t.clone(),
                    "hl" => b.hl = t.clone(),
                    _ => b.hh = t.clone(),
                }
                probe_loss(&idwt2(&b)?, &probe)
            }, Coverage::All, tol, rng)?;
        }
        out.push(r);
    }
    Ok(out)
}

fn spa_suite(rng: &mut ChaCha8Rng, tol: &Tolerance, opt: SuiteOptions) -> Result<Vec<GroupReport>> {
    let mut out = Vec::new();
    {
        let x = Tensor::uniform(&[4, 4, 4], -1.0, 1.0, rng);
        let p = ChannelAttentionParams::init(4, 2, rng);
        let probe = Tensor::uniform(&[4, 4, 4], -1.0, 1.0, rng);
        let (gx, gp) = channel_attention_backward(&x, &p, &probe)?;
        let mut r = GroupReport::new("channel_attention input");
        let gx = corrupt_if(gx, opt.corrupt);
        check_tensor(&mut r, "input", &x, &gx, &mut |x| probe_loss(&channel_attention(x, &p)?.0, &probe), Coverage::All, tol, rng)?;
        out.push(r);
        let mut groups = BTreeMap::new();
        check_parameters(&mut groups, &|_| "channel_attention params".to_string(), &|_| true, &p, &gp, &mut |q| {
            probe_loss(&channel_attention(&x, q)?.0, &probe)
        }, Coverage::All, tol, rng)?;
        out.extend(groups.into_values());
    }
    for level in 0..=2 {
        let x = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, rng);
        let p = SpaParams::init(2, level, 2, rng);
        let probe = Tensor::uniform(&[2, 4, 4], -1.0, 1.0, rng);
        let (gx, gp) = spa_backward(&x, &p, &probe)?;
        let mut r = GroupReport::new(&format!("spa level {level} input"));
        check_tensor(&mut r, "input", &x, &gx, &mut |x| probe_loss(&spa_forward(x, &p)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);
        let mut groups = BTreeMap::new();
        let label = format!("spa level {level} params");
        check_parameters(&mut groups, &|_| label.clone(), &|_| true, &p, &gp, &mut |q| {
            probe_loss(&spa_forward(&x, q)?, &probe)
        }, Coverage::All, tol, rng)?;
        out.extend(groups.into_values());
    }
    Ok(out)
}

/// Configuration used by the network gradient checks.
pub fn toy_check_config() -> ModelConfig {
    ModelConfig {
        input_channels: 1,
        base_channels: 4,
        spa_level: 2,
        eam_counts: vec![2, 2, 4, 4],
        reduction: 4,
    }
}

fn layer_group(prefix: &str) -> impl Fn(&str) -> String + '_ {
    move |name: &str| {
        let parts: Vec<&str> = name.split('.').collect();
        format!("{prefix} {}", parts[..parts.len().min(2)].join("."))
    }
}

fn network_suite(rng: &mut ChaCha8Rng, tol: &Tolerance, opt: SuiteOptions) -> Result<Vec<GroupReport>> {
    let cfg = toy_check_config();
    let mut out = Vec::new();
    let coverage = Coverage::Sample(6);
    let w = ModelWeights::<f64>::init(&cfg, rng.gen())?;

    {
        let x = Tensor::uniform(&[1, 8, 8], 0.0, 1.0, rng);
        let probe = Tensor::uniform(&[1, 8, 8], -1.0, 1.0, rng);
        let (gx, mut gw) = stage1_backward(&x, &w, &probe)?;
        if opt.corrupt {
            gw.estimator.out.weights = gw.estimator.out.weights.scale(-1.0);
        }
        let mut r = GroupReport::new("stage1 input");
        check_tensor(&mut r, "input", &x, &gx, &mut |x| probe_loss(&stage1_estimate(x, &w)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);
        let mut groups = BTreeMap::new();
        check_parameters(&mut groups, &layer_group("stage1"), &|n| n.starts_with("estimator"), &w, &gw, &mut |q| {
            probe_loss(&stage1_estimate(&x, q)?, &probe)
        }, coverage, tol, rng)?;
        out.extend(groups.into_values());
    }

    {
        let x = Tensor::uniform(&[1, 16, 16], 0.0, 1.0, rng);
        let noise = Tensor::uniform(&[1, 16, 16], -0.2, 0.2, rng);
        let probe = Tensor::uniform(&[1, 16, 16], -1.0, 1.0, rng);
        let (gx, gn, _) = stage2_backward(&x, &noise, &w, &probe)?;
        let mut r = GroupReport::new("stage2 inputs");
        check_tensor(&mut r, "x", &x, &gx, &mut |x| probe_loss(&stage2_reconstruct(x, &noise, &w)?, &probe), Coverage::All, tol, rng)?;
        check_tensor(&mut r, "noise", &noise, &gn, &mut |n| probe_loss(&stage2_reconstruct(&x, n, &w)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);
    }

    {
        let x = Tensor::uniform(&[1, 16, 16], 0.0, 1.0, rng);
        let probe = Tensor::uniform(&[1, 16, 16], -1.0, 1.0, rng);
        let (gx, gw) = model_backward(&x, &w, &probe)?;
        let mut r = GroupReport::new("model input");
        check_tensor(&mut r, "input", &x, &gx, &mut |x| probe_loss(&w.forward(x)?, &probe), Coverage::All, tol, rng)?;
        out.push(r);
        let mut groups = BTreeMap::new();
        check_parameters(&mut groups, &layer_group("model"), &|_| true, &w, &gw, &mut |q| {
            probe_loss(&q.forward(&x)?, &probe)
        }, coverage, tol, rng)?;
        out.extend(groups.into_values());
    }
    Ok(out)
}
