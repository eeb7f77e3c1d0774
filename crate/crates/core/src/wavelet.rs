//! 2-D Haar transform and multi-level sub-band pyramids.
//!
//! The filters are the unnormalized `±1` Haar kernels, so one forward level
//! scales the low band by 4 and the inverse divides by 4. Output element
//! `(i, j)` of every band reads the 2×2 input block whose top-left corner is
//! `(2i, 2j)` (zero-based), with the kernel applied without flipping:
//!
//! ```text
//!   a b      ll = a + b + c + d      lh = -a - b + c + d
//!   c d      hl = -a + b - c + d     hh =  a - b - c + d
//! ```

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

/// The four 2×2 Haar analysis kernels.
pub struct HaarFilters;

impl HaarFilters {
    pub const LL: [[i8; 2]; 2] = [[1, 1], [1, 1]];
    pub const LH: [[i8; 2]; 2] = [[-1, -1], [1, 1]];
    pub const HL: [[i8; 2]; 2] = [[-1, 1], [-1, 1]];
    pub const HH: [[i8; 2]; 2] = [[1, -1], [-1, 1]];

    /// Kernels in `ll, lh, hl, hh` order.
    pub const ALL: [[[i8; 2]; 2]; 4] = [Self::LL, Self::LH, Self::HL, Self::HH];
}

/// One level's low band plus its high-frequency triple.
#[derive(Debug, Clone, PartialEq)]
pub struct Dwt2Bands<T> {
    pub ll: Tensor<T>,
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

impl<T: Scalar> Dwt2Bands<T> {
    pub fn from_parts(ll: Tensor<T>, highs: SubbandSet<T>) -> Self {
        Dwt2Bands {
            ll,
            lh: highs.lh,
            hl: highs.hl,
            hh: highs.hh,
        }
    }

    pub fn into_parts(self) -> (Tensor<T>, SubbandSet<T>) {
        (
            self.ll,
            SubbandSet {
                lh: self.lh,
                hl: self.hl,
                hh: self.hh,
            },
        )
    }

    pub fn energy(&self) -> T {
        self.ll.norm_sq() + self.lh.norm_sq() + self.hl.norm_sq() + self.hh.norm_sq()
    }
}

/// High-frequency triple of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet<T> {
    pub lh: Tensor<T>,
    pub hl: Tensor<T>,
    pub hh: Tensor<T>,
}

/// `levels` recursive decompositions of the low band: a top low band plus
/// one high triple per level, `highs[i - 1]` holding level `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandPyramid<T> {
    pub top_ll: Tensor<T>,
    pub highs: Vec<SubbandSet<T>>,
}

impl<T: Scalar> SubbandPyramid<T> {
    pub fn levels(&self) -> usize {
        self.highs.len()
    }
}

pub fn dwt2<T: Scalar>(input: &Tensor<T>) -> Result<Dwt2Bands<T>> {
    let (c, h, w) = input.dims3()?;
    if h % 2 != 0 {
        return Err(Error::OddExtent {
            op: "dwt2",
            axis: "height",
            extent: h,
        });
    }
    if w % 2 != 0 {
        return Err(Error::OddExtent {
            op: "dwt2",
            axis: "width",
            extent: w,
        });
    }
    let (oh, ow) = (h / 2, w / 2);
    let n = c * oh * ow;
    let mut ll = Vec::with_capacity(n);
    let mut lh = Vec::with_capacity(n);
    let mut hl = Vec::with_capacity(n);
    let mut hh = Vec::with_capacity(n);
    let x = input.data();
    for ch in 0..c {
        let plane = &x[ch * h * w..(ch + 1) * h * w];
        for i in 0..oh {
            let top = &plane[2 * i * w..(2 * i + 1) * w];
            let bot = &plane[(2 * i + 1) * w..(2 * i + 2) * w];
            for j in 0..ow {
                let (a, b) = (top[2 * j], top[2 * j + 1]);
                let (cc, d) = (bot[2 * j], bot[2 * j + 1]);
                ll.push(a + b + cc + d);
                lh.push(-a - b + cc + d);
                hl.push(-a + b - cc + d);
                hh.push(a - b - cc + d);
            }
        }
    }
    let shape = vec![c, oh, ow];
    Ok(Dwt2Bands {
        ll: Tensor::new(shape.clone(), ll)?,
        lh: Tensor::new(shape.clone(), lh)?,
        hl: Tensor::new(shape.clone(), hl)?,
        hh: Tensor::new(shape, hh)?,
    })
}

/// Inverse Haar transform: each 2×2 output block is a signed combination of
/// the four band values divided by 4.
pub fn idwt2<T: Scalar>(bands: &Dwt2Bands<T>) -> Result<Tensor<T>> {
    synthesize(bands, T::of(0.25), "idwt2")
}

/// Adjoint of [`dwt2`]. The analysis matrix `H` satisfies `H·Hᵀ = 4I`, so
/// the adjoint is the inverse transform without the division by 4.
pub fn dwt2_backward<T: Scalar>(grad_bands: &Dwt2Bands<T>) -> Result<Tensor<T>> {
    synthesize(grad_bands, T::one(), "dwt2_backward")
}

/// Adjoint of [`idwt2`]: the forward transform divided by 4.
pub fn idwt2_backward<T: Scalar>(grad_out: &Tensor<T>) -> Result<Dwt2Bands<T>> {
    let b = dwt2(grad_out)?;
    let q = T::of(0.25);
    Ok(Dwt2Bands {
        ll: b.ll.scale(q),
        lh: b.lh.scale(q),
        hl: b.hl.scale(q),
        hh: b.hh.scale(q),
    })
}

fn synthesize<T: Scalar>(bands: &Dwt2Bands<T>, scale: T, op: &'static str) -> Result<Tensor<T>> {
    let (c, h, w) = bands.ll.dims3()?;
    for band in [&bands.lh, &bands.hl, &bands.hh] {
        if band.shape() != bands.ll.shape() {
            return Err(Error::ShapeMismatch {
                op,
                expected: bands.ll.shape().to_vec(),
                got: band.shape().to_vec(),
            });
        }
    }
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = vec![T::zero(); c * oh * ow];
    let (ll, lh, hl, hh) = (
        bands.ll.data(),
        bands.lh.data(),
        bands.hl.data(),
        bands.hh.data(),
    );
    for ch in 0..c {
        let plane = &mut out[ch * oh * ow..(ch + 1) * oh * ow];
        for i in 0..h {
            for j in 0..w {
                let k = (ch * h + i) * w + j;
                let (l, v, g, d) = (ll[k], lh[k], hl[k], hh[k]);
                plane[2 * i * ow + 2 * j] = (l - v - g + d) * scale;
                plane[2 * i * ow + 2 * j + 1] = (l - v + g - d) * scale;
                plane[(2 * i + 1) * ow + 2 * j] = (l + v - g - d) * scale;
                plane[(2 * i + 1) * ow + 2 * j + 1] = (l + v + g + d) * scale;
            }
        }
    }
    Tensor::new(vec![c, oh, ow], out)
}

/// Largest `n` with both spatial extents divisible by `2ⁿ`.
pub fn max_level(shape: &[usize]) -> usize {
    match shape {
        [.., h, w] => (h.trailing_zeros().min(w.trailing_zeros())) as usize,
        _ => 0,
    }
}

pub fn build_pyramid<T: Scalar>(input: &Tensor<T>, levels: usize) -> Result<SubbandPyramid<T>> {
    input.dims3()?;
    let max = max_level(input.shape());
    if levels > max {
        return Err(Error::PyramidLevel {
            shape: input.shape().to_vec(),
            requested: levels,
            max_level: max,
        });
    }
    let mut ll = input.clone();
    let mut highs = Vec::with_capacity(levels);
    for _ in 0..levels {
        let (next, triple) = dwt2(&ll)?.into_parts();
        highs.push(triple);
        ll = next;
    }
    Ok(SubbandPyramid { top_ll: ll, highs })
}

/// Folds [`idwt2`] from the top band down through every level.
pub fn reconstruct_pyramid<T: Scalar>(pyramid: &SubbandPyramid<T>) -> Result<Tensor<T>> {
    check_pyramid(pyramid)?;
    let mut ll = pyramid.top_ll.clone();
    for triple in pyramid.highs.iter().rev() {
        ll = idwt2(&Dwt2Bands {
            ll,
            lh: triple.lh.clone(),
            hl: triple.hl.clone(),
            hh: triple.hh.clone(),
        })?;
    }
    Ok(ll)
}

/// Adjoint of [`build_pyramid`]: maps gradients on every band back to the input.
pub fn build_pyramid_backward<T: Scalar>(grad: &SubbandPyramid<T>) -> Result<Tensor<T>> {
    check_pyramid(grad)?;
    let mut g = grad.top_ll.clone();
    for triple in grad.highs.iter().rev() {
        g = dwt2_backward(&Dwt2Bands {
            ll: g,
            lh: triple.lh.clone(),
            hl: triple.hl.clone(),
            hh: triple.hh.clone(),
        })?;
    }
    Ok(g)
}

fn check_pyramid<T: Scalar>(pyramid: &SubbandPyramid<T>) -> Result<()> {
    let (c, mut h, mut w) = pyramid.top_ll.dims3()?;
    for (idx, triple) in pyramid.highs.iter().enumerate().rev() {
        for band in [&triple.lh, &triple.hl, &triple.hh] {
            if band.shape() != [c, h, w] {
                return Err(Error::MalformedPyramid(format!(
                    "level {} band has shape {:?}, expected {:?}",
                    idx + 1,
                    band.shape(),
                    [c, h, w]
                )));
            }
        }
        h *= 2;
        w *= 2;
    }
    Ok(())
}
