use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// Per-channel arithmetic mean, `C × H × W -> C × 1 × 1`.
pub fn global_average_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = input.dims3()?;
    let n = T::of((h * w) as f64);
    Tensor::new(
        vec![c, 1, 1],
        (0..c)
            .map(|ch| input.channel(ch).iter().copied().sum::<T>() / n)
            .collect(),
    )
}

/// Spreads each channel's gradient uniformly over its `H × W` positions.
pub fn global_average_pool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    let &[c, h, w] = input_shape else {
        return Err(Error::InvalidShape {
            op: "global_average_pool_backward",
            msg: format!("expected a C×H×W shape, got {input_shape:?}"),
        });
    };
    if grad_out.len() != c {
        return Err(Error::shape("global_average_pool_backward", &[c, 1, 1], grad_out.shape()));
    }
    let n = T::of((h * w) as f64);
    Ok(Tensor::from_fn(input_shape, |i| grad_out.data()[i / (h * w)] / n))
}

/// Stacks `a` and `b` along the channel axis.
pub fn concat_channels<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    concat_channels_all(&[a, b])
}

/// Stacks any number of tensors with equal spatial extents along the channel axis.
pub fn concat_channels_all<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let Some(first) = parts.first() else {
        return Err(Error::Invalid("concat_channels: nothing to concatenate".into()));
    };
    let (_, h, w) = first.dims3()?;
    let mut channels = 0;
    let mut data = Vec::with_capacity(parts.iter().map(|p| p.len()).sum());
    for part in parts {
        let (c, ph, pw) = part.dims3()?;
        if (ph, pw) != (h, w) {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                expected: first.shape().to_vec(),
                got: part.shape().to_vec(),
            });
        }
        channels += c;
        data.extend_from_slice(part.data());
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Inverse of [`concat_channels_all`]: splits off consecutive channel groups.
pub fn split_channels<T: Scalar>(input: &Tensor<T>, sizes: &[usize]) -> Result<Vec<Tensor<T>>> {
    let (c, h, w) = input.dims3()?;
    if sizes.iter().sum::<usize>() != c {
        return Err(Error::InvalidShape {
            op: "split_channels",
            msg: format!("channel groups {sizes:?} do not sum to {c}"),
        });
    }
    let mut start = 0;
    sizes
        .iter()
        .map(|&n| {
            let part = input.data()[start * h * w..(start + n) * h * w].to_vec();
            start += n;
            Tensor::new(vec![n, h, w], part)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn gap_of_constant_and_small_channel() {
        let x = Tensor::new(vec![2, 2, 2], vec![3.0, 3.0, 3.0, 3.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = global_average_pool(&x).unwrap();
        assert_eq!(g.shape(), &[2, 1, 1]);
        assert_eq!(g.data(), &[3.0, 2.5]);
    }

    #[test]
    fn gap_matches_naive_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<f64>::uniform(&[3, 4, 4], -1.0, 1.0, &mut rng);
        let g = global_average_pool(&x).unwrap();
        for c in 0..3 {
            let mut acc = 0.0;
            for i in 0..16 {
                acc += x.data()[c * 16 + i];
            }
            assert!((acc / 16.0 - g.data()[c]).abs() < 1e-12);
        }
    }

    #[test]
    fn gap_backward_is_uniform() {
        let g = Tensor::new(vec![1, 1, 1], vec![8.0]).unwrap();
        let gx = global_average_pool_backward(&g, &[1, 2, 4]).unwrap();
        assert!(gx.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn concat_places_channels_in_order() {
        let a = Tensor::full(&[1, 2, 2], 1.0);
        let b = Tensor::full(&[1, 2, 2], 2.0);
        let c = concat_channels(&a, &b).unwrap();
        assert_eq!(c.channel(0), &[1.0; 4]);
        assert_eq!(c.channel(1), &[2.0; 4]);
    }

    #[test]
    fn concat_of_single_part_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f64>::uniform(&[2, 3, 3], -1.0, 1.0, &mut rng);
        assert_eq!(concat_channels_all(&[&x]).unwrap(), x);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(concat_channels(&a, &b).is_err());
    }

    #[test]
    fn split_inverts_concat() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<f64>::uniform(&[2, 3, 4], -1.0, 1.0, &mut rng);
        let b = Tensor::<f64>::uniform(&[3, 3, 4], -1.0, 1.0, &mut rng);
        let parts = split_channels(&concat_channels(&a, &b).unwrap(), &[2, 3]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }
}
