//! Clean images, training patches and held-out pairs.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::augment::augment;
use super::noise::{synth_pair, NoiseModel};
use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// Procedural clean image in `[0, 1]`: a smooth gradient background, a few
/// flat rectangles and discs, and one striped region.
pub fn procedural_image<R: Rng + ?Sized>(channels: usize, h: usize, w: usize, rng: &mut R) -> Tensor<f64> {
    let mut img = vec![0.0; channels * h * w];
    let tint: Vec<f64> = (0..channels).map(|_| rng.gen_range(0.8..1.2)).collect();
    let (base, gy, gx) = (rng.gen_range(0.2..0.6), rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
    for c in 0..channels {
        for i in 0..h {
            for j in 0..w {
                let (y, x) = (i as f64 / h as f64, j as f64 / w as f64);
                img[(c * h + i) * w + j] = base + gy * y + gx * x;
            }
        }
    }
    let shapes = rng.gen_range(3..7);
    for _ in 0..shapes {
        let value = rng.gen_range(0.0..1.0);
        let (cy, cx) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
        let (ry, rx) = (rng.gen_range(2.0..h as f64 / 3.0), rng.gen_range(2.0..w as f64 / 3.0));
        let disc = rng.gen_bool(0.5);
        for i in 0..h {
            for j in 0..w {
                let (dy, dx) = ((i as f64 - cy) / ry, (j as f64 - cx) / rx);
                let inside = if disc { dy * dy + dx * dx <= 1.0 } else { dy.abs() <= 1.0 && dx.abs() <= 1.0 };
                if inside {
                    for c in 0..channels {
                        img[(c * h + i) * w + j] = value * tint[c];
                    }
                }
            }
        }
    }
    let theta = rng.gen_range(0.0..std::f64::consts::PI);
    let period = rng.gen_range(3.0..8.0);
    let amp = rng.gen_range(0.05..0.2);
    let (y0, x0) = (rng.gen_range(0..h / 2 + 1), rng.gen_range(0..w / 2 + 1));
    for i in y0..(y0 + h / 2).min(h) {
        for j in x0..(x0 + w / 2).min(w) {
            let t = i as f64 * theta.sin() + j as f64 * theta.cos();
            let s = amp * (2.0 * std::f64::consts::PI * t / period).sin();
            for c in 0..channels {
                img[(c * h + i) * w + j] += s;
            }
        }
    }
    for v in &mut img {
        *v = v.clamp(0.0, 1.0);
    }
    Tensor::new(vec![channels, h, w], img).expect("non-empty image")
}

/// Where training patches come from.
#[derive(Debug, Clone)]
pub enum PairSource<T> {
    /// Clean images; noise is drawn fresh for every patch.
    Synthetic { images: Vec<Tensor<T>>, noise: NoiseModel },
    /// Fixed `(clean, noisy)` pairs; patches are co-located crops.
    Pairs(Vec<(Tensor<T>, Tensor<T>)>),
}

impl<T: Scalar> PairSource<T> {
    /// `count` procedural `channels×size×size` images from `seed`.
    pub fn synthetic(channels: usize, count: usize, size: usize, noise: NoiseModel, seed: u64) -> Result<Self> {
        noise.validate()?;
        if count == 0 || size == 0 || channels == 0 {
            return Err(Error::Invalid("synthetic pool needs at least one non-empty image".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let images = (0..count)
            .map(|_| procedural_image(channels, size, size, &mut rng).cast())
            .collect();
        Ok(PairSource::Synthetic { images, noise })
    }

    /// Reads matching file names from `dir/clean` and `dir/noisy`.
    pub fn from_directory(dir: &Path) -> Result<Self> {
        Ok(PairSource::Pairs(crate::io::load_pair_directory(dir)?))
    }

    pub fn channels(&self) -> usize {
        match self {
            PairSource::Synthetic { images, .. } => images[0].shape()[0],
            PairSource::Pairs(p) => p[0].0.shape()[0],
        }
    }

    fn smallest_extent(&self) -> usize {
        let extent = |t: &Tensor<T>| t.shape()[1].min(t.shape()[2]);
        match self {
            PairSource::Synthetic { images, .. } => images.iter().map(extent).min(),
            PairSource::Pairs(p) => p.iter().map(|(c, _)| extent(c)).min(),
        }
        .unwrap_or(0)
    }

    pub fn check_patch_size(&self, patch: usize) -> Result<()> {
        let empty = match self {
            PairSource::Synthetic { images, .. } => images.is_empty(),
            PairSource::Pairs(p) => p.is_empty(),
        };
        if empty {
            return Err(Error::Invalid("training source contains no images".into()));
        }
        let min = self.smallest_extent();
        if patch == 0 || patch > min {
            return Err(Error::Invalid(format!(
                "patch size {patch} does not fit the smallest training image ({min} pixels)"
            )));
        }
        Ok(())
    }

    /// One `(clean, noisy)` patch pair, sampled with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, patch: usize, augmentation: bool, rng: &mut R) -> Result<(Tensor<T>, Tensor<T>)> {
        let (clean, noisy) = match self {
            PairSource::Synthetic { images, noise } => {
                let img = &images[rng.gen_range(0..images.len())];
                let (r, c) = crop_origin(img, patch, rng);
                let clean = crop_at(img, r, c, patch);
                synth_pair(&clean, noise, rng.gen())?
            }
            PairSource::Pairs(pairs) => {
                let (a, b) = &pairs[rng.gen_range(0..pairs.len())];
                let (r, c) = crop_origin(a, patch, rng);
                (crop_at(a, r, c, patch), crop_at(b, r, c, patch))
            }
        };
        if augmentation {
            augment(&clean, &noisy, rng)
        } else {
            Ok((clean, noisy))
        }
    }
}

fn crop_origin<T: Scalar, R: Rng + ?Sized>(img: &Tensor<T>, patch: usize, rng: &mut R) -> (usize, usize) {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    (rng.gen_range(0..=h - patch), rng.gen_range(0..=w - patch))
}

fn crop_at<T: Scalar>(img: &Tensor<T>, r: usize, c: usize, patch: usize) -> Tensor<T> {
    let (ch, w) = (img.shape()[0], img.shape()[2]);
    let h = img.shape()[1];
    Tensor::from_fn(&[ch, patch, patch], |i| {
        let k = i / (patch * patch);
        let (y, x) = (i / patch % patch, i % patch);
        img.data()[(k * h + r + y) * w + c + x]
    })
}

/// `count` held-out `(clean, noisy)` pairs of size `channels×size×size`.
pub fn synthetic_pairs<T: Scalar>(
    channels: usize,
    count: usize,
    size: usize,
    noise: &NoiseModel,
    seed: u64,
) -> Result<Vec<(Tensor<T>, Tensor<T>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let clean: Tensor<T> = procedural_image(channels, size, size, &mut rng).cast();
            synth_pair(&clean, noise, rng.gen())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_are_in_range_and_vary() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = procedural_image(3, 40, 40, &mut rng);
        let b = procedural_image(3, 40, 40, &mut rng);
        assert!(a.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(a, b);
        let mean = a.mean();
        assert!(a.data().iter().any(|&v| (v - mean).abs() > 0.05));
    }

    #[test]
    fn patches_come_from_the_pool() {
        let src = PairSource::<f64>::synthetic(1, 2, 16, NoiseModel::Awgn { sigma: 0.0 }, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (clean, noisy) = src.sample(8, false, &mut rng).unwrap();
        assert_eq!(clean.shape(), &[1, 8, 8]);
        assert_eq!(clean, noisy);
        let PairSource::Synthetic { images, .. } = &src else { unreachable!() };
        let found = images.iter().any(|img| {
            (0..=8).any(|r| (0..=8).any(|c| crop_at(img, r, c, 8) == clean))
        });
        assert!(found);
    }

    #[test]
    fn pair_crops_are_co_located() {
        let a = Tensor::<f64>::from_fn(&[1, 10, 10], |i| i as f64);
        let b = a.map(|v| v + 1000.0);
        let src = PairSource::Pairs(vec![(a, b)]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let (c, n) = src.sample(4, true, &mut rng).unwrap();
            assert_eq!(c.map(|v| v + 1000.0), n);
        }
    }

    #[test]
    fn oversized_patch_is_rejected() {
        let src = PairSource::<f64>::synthetic(1, 1, 16, NoiseModel::desk(), 1).unwrap();
        assert!(src.check_patch_size(32).is_err());
        assert!(src.check_patch_size(16).is_ok());
    }
}
