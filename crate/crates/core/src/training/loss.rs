use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// Mean absolute error and its gradient with respect to `pred`.
///
/// The gradient uses `sign(0) = 0`, so identical inputs give a zero gradient.
pub fn mae_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape("mae_loss", target.shape(), pred.shape()));
    }
    let inv = T::one() / T::of(pred.len() as f64);
    let mut loss = T::zero();
    let grad = Tensor::from_fn(pred.shape(), |i| {
        let d = pred.data()[i] - target.data()[i];
        loss += d.abs();
        if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        }
    });
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equal_inputs() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 3], |i| i as f64);
        let (loss, grad) = mae_loss(&a, &a).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn unit_offset() {
        let t = Tensor::<f64>::from_fn(&[1, 4, 5], |i| (i as f64).sin());
        let p = t.map(|v| v + 1.0);
        let (loss, grad) = mae_loss(&p, &t).unwrap();
        assert!((loss - 1.0).abs() < 1e-15);
        assert!(grad.data().iter().all(|&g| g == 1.0 / 20.0));
    }

    #[test]
    fn matches_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = Tensor::<f64>::uniform(&[3, 7, 5], -1.0, 1.0, &mut rng);
        let t = Tensor::<f64>::uniform(&[3, 7, 5], -1.0, 1.0, &mut rng);
        let (loss, grad) = mae_loss(&p, &t).unwrap();
        let n = p.len() as f64;
        let mut naive = 0.0;
        for i in 0..p.len() {
            let d = p.data()[i] - t.data()[i];
            naive += d.abs();
            assert!((grad.data()[i] - d.signum() / n).abs() < 1e-12);
        }
        assert!((loss - naive / n).abs() < 1e-12);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let a = Tensor::<f64>::zeros(&[1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(mae_loss(&a, &b).is_err());
    }
}
