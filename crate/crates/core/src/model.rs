//! Core domain types: trial dimensions, variance ratios, designs and the
//! per-center moment matrix `F'F` of the two-group design.
//!
//! The within-center design matrix `F` (rows `(1, 1)` for treated
//! individuals, `(1, 0)` for controls) is never built; only its moment
//! matrix is needed and that has a closed form.

use serde::Serialize;

use crate::error::{Error, Result};

/// Number of centers `K` and individuals per center `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ModelDims {
    centers: usize,
    center_size: usize,
}

impl ModelDims {
    pub fn new(centers: usize, center_size: usize) -> Result<Self> {
        if centers < 1 {
            return Err(Error::InvalidCenterCount(centers));
        }
        if center_size < 2 {
            return Err(Error::InvalidCenterSize(center_size));
        }
        Ok(Self { centers, center_size })
    }

    /// `K`
    pub fn centers(&self) -> usize {
        self.centers
    }

    /// `N`
    pub fn center_size(&self) -> usize {
        self.center_size
    }
}

/// Between-center variance ratios `u = sigma_mu^2 / sigma^2` (intercepts) and
/// `v = sigma_alpha^2 / sigma^2` (treatment effects).
///
/// Zero is admitted for either ratio as the limit of homogeneous centers. The
/// closed-form paths are continuous there; the matrix paths that need
/// `diag(u, v)^-1` reject it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VarianceRatios {
    u: f64,
    v: f64,
}

impl VarianceRatios {
    pub fn new(u: f64, v: f64) -> Result<Self> {
        if !(u.is_finite() && u >= 0.0) {
            return Err(Error::InvalidVarianceRatio { name: "u", value: u });
        }
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::InvalidVarianceRatio { name: "v", value: v });
        }
        Ok(Self { u, v })
    }

    pub fn u(&self) -> f64 {
        self.u
    }

    pub fn v(&self) -> f64 {
        self.v
    }

    /// True when `diag(u, v)` is invertible.
    pub fn is_nonsingular(&self) -> bool {
        self.u > 0.0 && self.v > 0.0
    }

    /// `diag(1/u, 1/v)`, or an error when either ratio is zero.
    pub fn dispersion_inverse(&self) -> Result<SymMatrix2> {
        if !self.is_nonsingular() {
            return Err(Error::SingularDispersion { u: self.u, v: self.v });
        }
        Ok(SymMatrix2::new(1.0 / self.u, 0.0, 1.0 / self.v))
    }
}

/// Approximate design: the allocation rate `w` of the treatment group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxDesign {
    w: f64,
}

impl ApproxDesign {
    pub fn new(w: f64) -> Result<Self> {
        if !(w > 0.0 && w < 1.0) {
            return Err(Error::InvalidAllocationRate(w));
        }
        Ok(Self { w })
    }

    /// The balanced design `w = 1/2`.
    pub fn balanced() -> Self {
        Self { w: 0.5 }
    }

    pub fn rate(&self) -> f64 {
        self.w
    }
}

impl From<ExactDesign> for ApproxDesign {
    fn from(design: ExactDesign) -> Self {
        Self { w: design.rate() }
    }
}

/// Exact design: `n` treated and `N - n` control individuals in every center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ExactDesign {
    dims: ModelDims,
    treated: usize,
}

impl ExactDesign {
    pub fn new(dims: ModelDims, treated: usize) -> Result<Self> {
        let max = dims.center_size() - 1;
        if treated < 1 || treated > max {
            return Err(Error::InvalidGroupSize { n: treated, max });
        }
        Ok(Self { dims, treated })
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// `n`
    pub fn treated(&self) -> usize {
        self.treated
    }

    /// `N - n`
    pub fn controls(&self) -> usize {
        self.dims.center_size() - self.treated
    }

    /// `n / N`
    pub fn rate(&self) -> f64 {
        self.treated as f64 / self.dims.center_size() as f64
    }
}

/// Symmetric 2x2 matrix `[[m11, m12], [m12, m22]]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SymMatrix2 {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
}

/// Moment matrix `F'F`, in units of observation counts.
pub type MomentMatrix2 = SymMatrix2;

impl SymMatrix2 {
    pub const fn new(m11: f64, m12: f64, m22: f64) -> Self {
        Self { m11, m12, m22 }
    }

    pub fn determinant(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m12
    }

    pub fn trace(&self) -> f64 {
        self.m11 + self.m22
    }

    /// Cofactor inverse; `None` when the determinant is not strictly positive
    /// and finite (all matrices inverted here are meant to be positive definite).
    pub fn inverse(&self) -> Option<Self> {
        let det = self.determinant();
        if !(det > 0.0 && det.is_finite()) {
            return None;
        }
        Some(Self::new(self.m22 / det, -self.m12 / det, self.m11 / det))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.m11 > 0.0 && self.determinant() > 0.0
    }

    pub fn mul_vec(&self, x: [f64; 2]) -> [f64; 2] {
        [
            self.m11 * x[0] + self.m12 * x[1],
            self.m12 * x[0] + self.m22 * x[1],
        ]
    }
}

impl std::ops::Add for SymMatrix2 {
    type Output = Self;

    fn add(self, rhs: Self) -> Self {
        Self::new(self.m11 + rhs.m11, self.m12 + rhs.m12, self.m22 + rhs.m22)
    }
}

impl std::ops::Sub for SymMatrix2 {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self::new(self.m11 - rhs.m11, self.m12 - rhs.m12, self.m22 - rhs.m22)
    }
}

/// `F'F = [[N, n], [n, n]]` for an exact design.
pub fn information_matrix_exact(design: &ExactDesign) -> MomentMatrix2 {
    let big_n = design.dims().center_size() as f64;
    let n = design.treated() as f64;
    SymMatrix2::new(big_n, n, n)
}

/// `N * [[1, w], [w, w]]`, the continuous extension with `n = N w`.
pub fn information_matrix_approx(dims: &ModelDims, design: &ApproxDesign) -> MomentMatrix2 {
    let big_n = dims.center_size() as f64;
    let nw = big_n * design.rate();
    SymMatrix2::new(big_n, nw, nw)
}
