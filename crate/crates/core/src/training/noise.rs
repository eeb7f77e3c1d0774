//! Synthetic noise for desk-scale training: white Gaussian noise plus
//! optional structured components.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseModel {
    Awgn {
        sigma: f64,
    },
    Structured {
        /// White Gaussian component.
        sigma: f64,
        /// Standard deviation of a per-row offset (shared by all channels).
        banding: f64,
        /// Marginal standard deviation of blurred white noise.
        correlated: f64,
        /// Scale of a `sqrt(clean)`-weighted Gaussian term.
        signal_dependent: f64,
    },
}

/// `[1 2 1] / 4` in both directions, so a unit-variance white field has
/// marginal standard deviation `6 / 16`.
const BLUR: [f64; 3] = [0.25, 0.5, 0.25];
const BLUR_STD: f64 = 0.375;

impl NoiseModel {
    /// Default structured model used by the toy experiments.
    pub fn desk() -> Self {
        NoiseModel::Structured {
            sigma: 0.03,
            banding: 0.03,
            correlated: 0.05,
            signal_dependent: 0.05,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            NoiseModel::Awgn { .. } => "awgn",
            NoiseModel::Structured { .. } => "structured",
        }
    }

    fn amplitudes(&self) -> [f64; 4] {
        match *self {
            NoiseModel::Awgn { sigma } => [sigma, 0.0, 0.0, 0.0],
            NoiseModel::Structured {
                sigma,
                banding,
                correlated,
                signal_dependent,
            } => [sigma, banding, correlated, signal_dependent],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.amplitudes().iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return Err(Error::Invalid(format!(
                "noise amplitudes must be finite and non-negative: {self:?}"
            )));
        }
        Ok(())
    }
}

fn normal_field(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    let r = if i < 0 { -i } else if i >= n { 2 * n - 2 - i } else { i };
    r.clamp(0, n - 1) as usize
}

/// Separable 3×3 binomial blur of one `h×w` plane with mirrored borders.
fn blur(plane: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut rows = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = (0..3)
                .map(|k| BLUR[k] * plane[i * w + reflect(j as isize + k as isize - 1, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = (0..3)
                .map(|k| BLUR[k] * rows[reflect(i as isize + k as isize - 1, h) * w + j])
                .sum();
        }
    }
    out
}

/// The additive noise field for `clean`, before clamping. Deterministic in
/// `seed`; components are drawn in a fixed order whether or not their
/// amplitude is zero.
pub fn synth_noise<T: Scalar>(clean: &Tensor<T>, model: &NoiseModel, seed: u64) -> Result<Tensor<T>> {
    model.validate()?;
    let (c, h, w) = clean.dims3()?;
    let [sigma, banding, correlated, signal] = model.amplitudes();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let white = normal_field(c * h * w, &mut rng);
    let rows = normal_field(h, &mut rng);
    let raw = normal_field(c * h * w, &mut rng);
    let shot = normal_field(c * h * w, &mut rng);
    let mut smooth = Vec::with_capacity(c * h * w);
    for ch in 0..c {
        smooth.extend(blur(&raw[ch * h * w..(ch + 1) * h * w], h, w));
    }
    Ok(Tensor::from_fn(clean.shape(), |i| {
        let x = clean.data()[i].to_f64_lossless().max(0.0);
        let row = i / w % h;
        let n = sigma * white[i]
            + banding * rows[row]
            + correlated / BLUR_STD * smooth[i]
            + signal * x.sqrt() * shot[i];
        T::of(n)
    }))
}

/// `(clean, clamp(clean + noise, 0, 1))`.
pub fn synth_pair<T: Scalar>(
    clean: &Tensor<T>,
    model: &NoiseModel,
    seed: u64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let noise = synth_noise(clean, model, seed)?;
    let noisy = clean.zip_map(&noise, |a, n| (a + n).max(T::zero()).min(T::one()))?;
    Ok((clean.clone(), noisy))
}
