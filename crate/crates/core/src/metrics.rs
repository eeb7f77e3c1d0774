//! PSNR and SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, a.shape(), b.shape()));
    }
    Ok(())
}

/// `10 log10(peak² / MSE)` in decibels; `f64::INFINITY` when the inputs are
/// identical.
pub fn psnr<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("psnr", a, b)?;
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("psnr: peak must be positive, got {peak}")));
    }
    let se: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| {
            let d = x.to_f64_lossless() - y.to_f64_lossless();
            d * d
        })
        .sum();
    let mse = se / a.len() as f64;
    Ok(psnr_from_mse(mse, peak))
}

pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / mse).log10()
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let r = (SSIM_WINDOW / 2) as f64;
    let mut g = [0.0; SSIM_WINDOW];
    for (k, v) in g.iter_mut().enumerate() {
        let x = k as f64 - r;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" filtering of an `h×w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (oh, ow) = (h + 1 - SSIM_WINDOW, w + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; h * ow];
    for i in 0..h {
        for j in 0..ow {
            let src = &plane[i * w + j..i * w + j + SSIM_WINDOW];
            rows[i * ow + j] = src.iter().zip(g).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            out[i * ow + j] = (0..SSIM_WINDOW).map(|k| g[k] * rows[(i + k) * ow + j]).sum();
        }
    }
    out
}

fn ssim_plane(a: &[f64], b: &[f64], h: usize, w: usize, peak: f64) -> f64 {
    let g = gaussian_window();
    let c1 = (SSIM_K1 * peak).powi(2);
    let c2 = (SSIM_K2 * peak).powi(2);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(a, h, w, &g);
    let mu_b = filter_valid(b, h, w, &g);
    let aa = filter_valid(&prod(a, a), h, w, &g);
    let bb = filter_valid(&prod(b, b), h, w, &g);
    let ab = filter_valid(&prod(a, b), h, w, &g);
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
        let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
        total += num / den;
    }
    total / mu_a.len() as f64
}

/// Mean structural similarity over an 11×11 Gaussian window (σ = 1.5,
/// K1 = 0.01, K2 = 0.03), averaged over channels. Only windows that fit
/// entirely inside the image are used.
pub fn ssim<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, peak: f64) -> Result<f64> {
    same_shape("ssim", a, b)?;
    let (c, h, w) = a.dims3()?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidShape {
            op: "ssim",
            msg: format!("image {h}×{w} is smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} window"),
        });
    }
    if !(peak > 0.0) {
        return Err(Error::Invalid(format!("ssim: peak must be positive, got {peak}")));
    }
    let to64 = |t: &Tensor<T>, ch: usize| t.channel(ch).iter().map(|v| v.to_f64_lossless()).collect::<Vec<_>>();
    let total: f64 = (0..c).map(|ch| ssim_plane(&to64(a, ch), &to64(b, ch), h, w, peak)).sum();
    Ok(total / c as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-image metrics and their arithmetic means.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub images: Vec<ImageMetrics>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
}

impl MetricReport {
    pub fn new(values: impl IntoIterator<Item = (f64, f64)>) -> Self {
        let images: Vec<ImageMetrics> = values
            .into_iter()
            .map(|(psnr, ssim)| ImageMetrics { psnr, ssim })
            .collect();
        let n = images.len().max(1) as f64;
        let mean_psnr = images.iter().map(|m| m.psnr).sum::<f64>() / n;
        let mean_ssim = images.iter().map(|m| m.ssim).sum::<f64>() / n;
        MetricReport {
            images,
            mean_psnr,
            mean_ssim,
        }
    }

    /// `key=value` lines: one per image, then the means.
    pub fn to_kv(&self, names: &[String]) -> String {
        let mut s = String::new();
        for (i, m) in self.images.iter().enumerate() {
            let name = names.get(i).cloned().unwrap_or_else(|| i.to_string());
            let _ = writeln!(s, "image={name} psnr={} ssim={:.6}", fmt_db(m.psnr), m.ssim);
        }
        let _ = writeln!(s, "count={}", self.images.len());
        let _ = writeln!(s, "mean_psnr={}", fmt_db(self.mean_psnr));
        let _ = writeln!(s, "mean_ssim={:.6}", self.mean_ssim);
        s
    }
}

/// Decibels with four decimals; the identical-image sentinel prints as `inf`.
pub fn fmt_db(v: f64) -> String {
    if v.is_infinite() && v > 0.0 {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn textured(seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::uniform(&[1, 24, 24], 0.2, 0.8, &mut rng)
    }

    #[test]
    fn psnr_fixtures() {
        let a = Tensor::<f64>::zeros(&[1, 4, 4]);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let b = Tensor::full(&[1, 4, 4], 0.1);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        let c = Tensor::full(&[1, 4, 4], 1.0);
        assert!(psnr(&a, &c, 1.0).unwrap().abs() < 1e-12);
        assert!((psnr(&a, &c.scale(255.0), 255.0).unwrap()).abs() < 1e-12);
        assert!(psnr(&a, &Tensor::zeros(&[1, 4, 5]), 1.0).is_err());
    }

    #[test]
    fn psnr_falls_with_noise() {
        let img = textured(0);
        let mut last = f64::INFINITY;
        for sigma in [0.01, 0.05, 0.1] {
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            let d = Normal::new(0.0, sigma).unwrap();
            let noise: Vec<f64> = (0..img.len()).map(|_| d.sample(&mut rng)).collect();
            let noisy = Tensor::from_fn(img.shape(), |i| img.data()[i] + noise[i]);
            let p = psnr(&img, &noisy, 1.0).unwrap();
            assert_eq!(p, psnr(&noisy, &img, 1.0).unwrap());
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let a = textured(1);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_of_constant_images() {
        // Means 0 and 1, no variance: ((0 + C1) (0 + C2)) / ((0 + 1 + C1) (0 + C2)).
        let a = Tensor::<f64>::zeros(&[1, 16, 16]);
        let b = Tensor::full(&[1, 16, 16], 1.0);
        let c1 = 1e-4;
        let expected = c1 / (1.0 + c1);
        assert!((ssim(&a, &b, 1.0).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn ssim_of_inverted_texture_is_negative() {
        let a = textured(2);
        let m = a.mean();
        let b = a.map(|v| 2.0 * m - v);
        assert!(ssim(&a, &b, 1.0).unwrap() < 0.0);
    }

    #[test]
    fn ssim_is_symmetric_and_averages_channels() {
        let a = textured(3);
        let b = textured(4);
        let ab = ssim(&a, &b, 1.0).unwrap();
        assert!((ab - ssim(&b, &a, 1.0).unwrap()).abs() < 1e-12);
        let two_a = crate::ops::concat_channels(&a, &a).unwrap();
        let mixed = crate::ops::concat_channels(&b, &a).unwrap();
        assert!((ssim(&two_a, &mixed, 1.0).unwrap() - (ab + 1.0) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = Tensor::<f64>::zeros(&[1, 10, 40]);
        assert!(ssim(&a, &a, 1.0).is_err());
    }

    #[test]
    fn report_means() {
        let r = MetricReport::new([(20.0, 0.5), (30.0, 0.7)]);
        assert_eq!(r.mean_psnr, 25.0);
        assert!((r.mean_ssim - 0.6).abs() < 1e-15);
        let kv = r.to_kv(&["a".into(), "b".into()]);
        assert!(kv.contains("image=a psnr=20.0000 ssim=0.500000"));
        assert!(kv.contains("mean_psnr=25.0000"));
        assert_eq!(MetricReport::new([(f64::INFINITY, 1.0)]).to_kv(&[]).lines().nth(2), Some("mean_psnr=inf"));
    }
}
