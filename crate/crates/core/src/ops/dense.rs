//! Fully connected layers over flattened vectors.

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{join, Parameters};
use crate::tensor::dot;
use crate::{Scalar, Tensor};

use super::init_bound;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T> {
    /// `out × in`
    pub weights: Tensor<T>,
    /// `out`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct DenseGrads<T> {
    pub grad_input: Tensor<T>,
    pub grad_weights: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

impl<T: Scalar> DenseParams<T> {
    pub fn new(weights: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        let &[out, _] = weights.shape() else {
            return Err(Error::InvalidShape {
                op: "DenseParams::new",
                msg: format!("weights must be out×in, got {:?}", weights.shape()),
            });
        };
        bias.expect_shape("DenseParams::new", &[out])?;
        Ok(DenseParams { weights, bias })
    }

    pub fn init<R: Rng + ?Sized>(out: usize, inp: usize, rng: &mut R) -> Self {
        let bound = init_bound(inp);
        DenseParams {
            weights: Tensor::uniform(&[out, inp], -bound, bound, rng),
            bias: Tensor::uniform(&[out], -bound, bound, rng),
        }
    }

    pub fn zeros(out: usize, inp: usize) -> Self {
        DenseParams {
            weights: Tensor::zeros(&[out, inp]),
            bias: Tensor::zeros(&[out]),
        }
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        dense_forward(input, self)
    }

    pub fn backward(
        &self,
        input: &Tensor<T>,
        grad_out: &Tensor<T>,
        grads: &mut DenseParams<T>,
    ) -> Result<Tensor<T>> {
        let g = dense_backward(input, self, grad_out)?;
        grads.weights.add_assign(&g.grad_weights)?;
        grads.bias.add_assign(&g.grad_bias)?;
        Ok(g.grad_input)
    }
}

impl<T: Scalar> Parameters<T> for DenseParams<T> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        f(join(prefix, "weight"), &self.weights);
        f(join(prefix, "bias"), &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>)) {
        f(join(prefix, "weight"), &mut self.weights);
        f(join(prefix, "bias"), &mut self.bias);
    }
}

/// Affine map `W·x + b`. The input may have any shape holding `in` values;
/// the output is a vector of length `out`.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, params: &DenseParams<T>) -> Result<Tensor<T>> {
    let (out, inp) = (params.out_features(), params.in_features());
    if input.len() != inp {
        return Err(Error::shape("dense_forward", params.weights.shape(), input.shape()));
    }
    let w = params.weights.data();
    let data = (0..out)
        .map(|o| params.bias.data()[o] + dot(&w[o * inp..(o + 1) * inp], input.data()))
        .collect();
    Tensor::new(vec![out], data)
}

pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    params: &DenseParams<T>,
    grad_out: &Tensor<T>,
) -> Result<DenseGrads<T>> {
    let (out, inp) = (params.out_features(), params.in_features());
    if input.len() != inp {
        return Err(Error::shape("dense_backward", params.weights.shape(), input.shape()));
    }
    if grad_out.len() != out {
        return Err(Error::shape("dense_backward", &[out], grad_out.shape()));
    }
    let w = params.weights.data();
    let x = input.data();
    let g = grad_out.data();
    let grad_weights = Tensor::from_fn(&[out, inp], |i| g[i / inp] * x[i % inp]);
    let grad_input = Tensor::from_fn(input.shape(), |i| {
        (0..out).map(|o| w[o * inp + i] * g[o]).sum()
    });
    let grad_bias = Tensor::new(vec![out], g.to_vec())?;
    Ok(DenseGrads {
        grad_input,
        grad_weights,
        grad_bias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_weights_pass_input_through() {
        let p = DenseParams::new(
            Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 }),
            Tensor::zeros(&[3]),
        )
        .unwrap();
        let x = Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap(), x);
    }

    #[test]
    fn zero_weights_give_bias() {
        let mut p = DenseParams::<f64>::zeros(2, 4);
        p.bias = Tensor::new(vec![2], vec![0.3, -0.7]).unwrap();
        let x = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap(), p.bias);
    }

    #[test]
    fn matches_dot_product_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = DenseParams::<f64>::init(2, 4, &mut rng);
        let x = Tensor::<f64>::uniform(&[4], -1.0, 1.0, &mut rng);
        let y = dense_forward(&x, &p).unwrap();
        for o in 0..2 {
            let mut acc = p.bias.data()[o];
            for i in 0..4 {
                acc += p.weights.data()[o * 4 + i] * x.data()[i];
            }
            assert!((acc - y.data()[o]).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_wrong_input_length() {
        let p = DenseParams::<f64>::zeros(2, 4);
        assert!(dense_forward(&Tensor::zeros(&[3]), &p).is_err());
    }
}
