//! The eight symmetries of the square, applied channel-wise to `C×N×N`
//! patches.
//!
//! Convention: `rot90` turns counter-clockwise, `out[i][j] = in[j][n-1-i]`,
//! so `[[1,2],[3,4]]` becomes `[[2,4],[1,3]]`. The horizontal flip mirrors
//! columns. A [`Dihedral`] flips first, then rotates.

use rand::Rng;

use crate::error::{Error, Result};
use crate::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        quarter_turns: 0,
        flip: false,
    };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|k| Dihedral::from_index(k as u8))
    }

    /// `0..8`: bits 0-1 are the quarter turns, bit 2 the flip.
    pub fn from_index(k: u8) -> Dihedral {
        Dihedral {
            quarter_turns: k & 3,
            flip: k & 4 != 0,
        }
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Dihedral {
        Dihedral::from_index(rng.gen_range(0..8))
    }

    pub fn apply<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (c, h, w) = x.dims3()?;
        if h != w {
            return Err(Error::InvalidShape {
                op: "augment",
                msg: format!("patches must be square, got {h}×{w}"),
            });
        }
        let n = h;
        let turns = self.quarter_turns % 4;
        let flip = self.flip;
        Ok(Tensor::from_fn(&[c, n, n], |idx| {
            let ch = idx / (n * n);
            let (mut i, mut j) = (idx / n % n, idx % n);
            // Walk back from the output position to the source position.
            for _ in 0..turns {
                (i, j) = (j, n - 1 - i);
            }
            if flip {
                j = n - 1 - j;
            }
            x.data()[(ch * n + i) * n + j]
        }))
    }
}

pub fn rot90<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Dihedral { quarter_turns: 1, flip: false }.apply(x)
}

pub fn flip_horizontal<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    Dihedral { quarter_turns: 0, flip: true }.apply(x)
}

/// Applies one random symmetry to both members of a training pair.
pub fn augment<T: Scalar, R: Rng + ?Sized>(
    clean: &Tensor<T>,
    noisy: &Tensor<T>,
    rng: &mut R,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let d = Dihedral::random(rng);
    Ok((d.apply(clean)?, d.apply(noisy)?))
}
