//! Named parameter registries.

use crate::{Scalar, Tensor};

/// A structure of learnable tensors with stable hierarchical names.
///
/// Visiting order is fixed, so every registry built from the same
/// configuration lists its tensors in the same order.
pub trait Parameters<T: Scalar> {
    fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a Tensor<T>));

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(String, &'a mut Tensor<T>));

    fn named_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |name, t| out.push((name, t)));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        self.visit_mut("", &mut |_, t| out.push(t));
        out
    }

    fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        z.visit_mut("", &mut |_, t| t.fill(T::zero()));
        z
    }

    /// Elementwise `self += other`; both must come from the same configuration.
    fn accumulate(&mut self, other: &Self) {
        let src: Vec<&Tensor<T>> = other.named_tensors().into_iter().map(|(_, t)| t).collect();
        let dst = self.tensors_mut();
        assert_eq!(src.len(), dst.len(), "parameter structures differ");
        for (d, s) in dst.into_iter().zip(src) {
            d.add_assign(s).expect("parameter shapes differ");
        }
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
