use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Floating-point element type of every tensor: `f32` or `f64`.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Send + Sync + Debug + Display + Default + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("Scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

const PAIRWISE_LEAF: usize = 8;

/// Sum with a fixed pairwise reduction tree.
///
/// The tree depends only on the slice length, so results are reproducible
/// regardless of how callers schedule work across threads.
pub fn pairwise_sum<T: Scalar>(xs: &[T]) -> T {
    if xs.len() <= PAIRWISE_LEAF {
        let mut acc = T::zero();
        for &x in xs {
            acc += x;
        }
        acc
    } else {
        let mid = xs.len() / 2;
        pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
    }
}
