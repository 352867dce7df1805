use crate::error::{Error, Result};
use crate::exact::{rational_from_f64, Rational};

/// Uniform 1-D mesh with `n + 1` nodes `x_i = i*h` on `[0, ell]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    n: usize,
    ell: f64,
    h: f64,
    x: Vec<f64>,
}

impl Grid {
    /// Smallest grid on which all built-in boundary closures stay disjoint.
    pub const MIN_N: usize = 4;

    pub fn new(n: usize, ell: f64) -> Result<Self> {
        if n < Self::MIN_N {
            return Err(Error::GridTooSmall {
                variant: "grid",
                n,
                min: Self::MIN_N,
            });
        }
        if !(ell.is_finite() && ell > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "domain length must be positive and finite, got {ell}"
            )));
        }
        let h = ell / n as f64;
        let x = (0..=n).map(|i| i as f64 * h).collect();
        Ok(Self { n, ell, h, x })
    }

    /// Number of intervals; the mesh has `n + 1` nodes.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn ell(&self) -> f64 {
        self.ell
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.x
    }

    pub fn num_nodes(&self) -> usize {
        self.n + 1
    }

    /// The domain length as an exact rational (every double is one).
    pub fn ell_rational(&self) -> Rational {
        rational_from_f64(self.ell)
    }

    /// Exact spacing `ell / n`.
    pub fn h_rational(&self) -> Rational {
        self.ell_rational() / Rational::from_integer(self.n.into())
    }
}
