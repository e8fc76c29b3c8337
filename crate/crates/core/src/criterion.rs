//! Prediction MSE matrices and the A-criterion, all per unit `sigma^2`.
//!
//! Every MSE matrix in scope mixes two orthogonal projectors on `R^K`: the
//! averaging projector `J/K` and the centering projector `I - J/K`. They are
//! stored by their two coefficients, never as dense `K x K` arrays.

use serde::Serialize;

use crate::error::Result;
use crate::model::{
    information_matrix_exact, ApproxDesign, ExactDesign, ModelDims, SymMatrix2, VarianceRatios,
};

/// `averaging * J/K + centering * (I - J/K)` of dimension `dim`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompoundSymmetricMatrix {
    pub averaging: f64,
    pub centering: f64,
    pub dim: usize,
}

impl CompoundSymmetricMatrix {
    pub fn trace(&self) -> f64 {
        self.averaging + (self.dim as f64 - 1.0) * self.centering
    }

    /// Distinct eigenvalues with multiplicities: `averaging` once, `centering`
    /// `dim - 1` times (omitted when `dim == 1`).
    pub fn eigenvalues(&self) -> Vec<(f64, usize)> {
        let mut out = vec![(self.averaging, 1)];
        if self.dim > 1 {
            out.push((self.centering, self.dim - 1));
        }
        out
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        let k = self.dim as f64;
        let mean_part = (self.averaging - self.centering) / k;
        if i == j {
            mean_part + self.centering
        } else {
            mean_part
        }
    }

    /// Row-major dense copy, for cross-checks.
    pub fn to_dense(&self) -> Vec<f64> {
        (0..self.dim * self.dim)
            .map(|idx| self.entry(idx / self.dim, idx % self.dim))
            .collect()
    }
}

/// MSE matrix of the joint predictor of all `(mu_i, alpha_i)`:
/// `(J/K) (x) population + (I - J/K) (x) deviation`, a `2K x 2K` matrix with
/// center-major ordering.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FullMseMatrix {
    /// `(F'F)^-1`
    pub population: SymMatrix2,
    /// `(F'F + D^-1)^-1`
    pub deviation: SymMatrix2,
    pub centers: usize,
}

impl FullMseMatrix {
    /// Restriction to the treatment effects `(alpha_1, ..., alpha_K)`.
    pub fn effect_part(&self) -> CompoundSymmetricMatrix {
        CompoundSymmetricMatrix {
            averaging: self.population.m22,
            centering: self.deviation.m22,
            dim: self.centers,
        }
    }

    /// Restriction to the intercepts `(mu_1, ..., mu_K)`.
    pub fn intercept_part(&self) -> CompoundSymmetricMatrix {
        CompoundSymmetricMatrix {
            averaging: self.population.m11,
            centering: self.deviation.m11,
            dim: self.centers,
        }
    }

    pub fn trace(&self) -> f64 {
        self.effect_part().trace() + self.intercept_part().trace()
    }

    pub fn dim(&self) -> usize {
        2 * self.centers
    }

    /// Entry at row `2i + p`, column `2j + q`.
    pub fn entry(&self, row: usize, col: usize) -> f64 {
        let (i, p) = (row / 2, row % 2);
        let (j, q) = (col / 2, col % 2);
        let pick = |m: &SymMatrix2| match (p, q) {
            (0, 0) => m.m11,
            (1, 1) => m.m22,
            _ => m.m12,
        };
        let k = self.centers as f64;
        let delta = if i == j { 1.0 } else { 0.0 };
        pick(&self.population) / k + pick(&self.deviation) * (delta - 1.0 / k)
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let d = self.dim();
        (0..d * d).map(|idx| self.entry(idx / d, idx % d)).collect()
    }
}

/// Value of the A-criterion (trace of the effect-prediction MSE), per `sigma^2`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct CriterionValue(f64);

impl CriterionValue {
    pub fn value(&self) -> f64 {
        self.0
    }
}

/// Full MSE matrix of the joint prediction for an exact design. Requires `u, v > 0`.
pub fn mse_full(ratios: &VarianceRatios, design: &ExactDesign) -> Result<FullMseMatrix> {
    let moments = information_matrix_exact(design);
    let precision = ratios.dispersion_inverse()?;
    Ok(FullMseMatrix {
        population: moments.inverse().expect("nondegenerate design"),
        deviation: (moments + precision)
            .inverse()
            .expect("F'F + D^-1 is positive definite"),
        centers: design.dims().centers(),
    })
}

/// MSE matrix of the effect predictions at allocation rate `w`.
///
/// `averaging = 1 / (N w (1-w))`,
/// `centering = v (Nu+1) / ((Nu+1)(Nwv+1) - N^2 w^2 uv)`.
pub fn mse_alpha(dims: &ModelDims, ratios: &VarianceRatios, w: &ApproxDesign) -> CompoundSymmetricMatrix {
    let big_n = dims.center_size() as f64;
    let (u, v) = (ratios.u(), ratios.v());
    let w = w.rate();
    let spread = w * (1.0 - w);
    // (Nu+1)(Nwv+1) - N^2 w^2 uv, expanded to a sum of nonnegative terms.
    let denominator = big_n * u + big_n * w * v + 1.0 + big_n * big_n * u * v * spread;
    CompoundSymmetricMatrix {
        averaging: 1.0 / (big_n * spread),
        centering: v * (big_n * u + 1.0) / denominator,
        dim: dims.centers(),
    }
}

/// A-criterion `Phi(w) = 1/(N w (1-w)) + (K-1) v (Nu+1) / ((Nu+1)(Nwv+1) - N^2 w^2 uv)`.
pub fn a_criterion(dims: &ModelDims, ratios: &VarianceRatios, w: &ApproxDesign) -> CriterionValue {
    CriterionValue(mse_alpha(dims, ratios, w).trace())
}

/// A-criterion of an exact design, i.e. at `w = n/N`.
pub fn a_criterion_exact(ratios: &VarianceRatios, design: &ExactDesign) -> CriterionValue {
    a_criterion(&design.dims(), ratios, &ApproxDesign::from(*design))
}

/// A-efficiency `Phi(w_opt) / Phi(w_ref)` of a reference design.
pub fn efficiency(
    dims: &ModelDims,
    ratios: &VarianceRatios,
    w_ref: &ApproxDesign,
    w_opt: &ApproxDesign,
) -> f64 {
    a_criterion(dims, ratios, w_opt).value() / a_criterion(dims, ratios, w_ref).value()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn dims(k: usize, n: usize) -> ModelDims {
        ModelDims::new(k, n).unwrap()
    }

    fn ratios(u: f64, v: f64) -> VarianceRatios {
        VarianceRatios::new(u, v).unwrap()
    }

    fn rate(w: f64) -> ApproxDesign {
        ApproxDesign::new(w).unwrap()
    }

    #[test]
    fn full_mse_examples() {
        let d = ExactDesign::new(dims(50, 10), 5).unwrap();
        let full = mse_full(&ratios(0.25, 0.5), &d).unwrap();
        assert_relative_eq!(full.population.m11, 0.2, epsilon = 1e-14);
        assert_relative_eq!(full.population.m12, -0.2, epsilon = 1e-14);
        assert_relative_eq!(full.population.m22, 0.4, epsilon = 1e-14);
        // [[14, 5], [5, 7]]^-1 has (2,2) entry 14/73 = 1.75/9.125.
        assert_relative_eq!(full.deviation.m22, 14.0 / 73.0, epsilon = 1e-14);
        assert!((full.deviation.m22 - 0.19178).abs() < 1e-5);

        let loose = mse_full(&ratios(1e12, 1e12), &d).unwrap();
        let diff = loose.deviation - loose.population;
        assert!(diff.m11.abs() < 1e-9 && diff.m12.abs() < 1e-9 && diff.m22.abs() < 1e-9);

        assert!(matches!(
            mse_full(&ratios(0.0, 0.5), &d),
            Err(Error::SingularDispersion { .. })
        ));
    }

    #[test]
    fn effect_mse_examples() {
        let m = mse_alpha(&dims(50, 10), &ratios(0.25, 2.0), &rate(0.5));
        assert_relative_eq!(m.averaging, 0.4, epsilon = 1e-14);
        assert_relative_eq!(m.centering, 7.0 / 26.0, epsilon = 1e-14);
        assert!((m.trace() - 13.5923).abs() < 1e-4);

        let m = mse_alpha(&dims(50, 10), &ratios(0.25, 0.0), &rate(0.3));
        assert_eq!(m.centering, 0.0);
        assert_relative_eq!(m.trace(), m.averaging);

        let m = mse_alpha(&dims(1, 10), &ratios(3.0, 4.0), &rate(0.5));
        assert_relative_eq!(m.trace(), 0.4, epsilon = 1e-14);
    }

    #[test]
    fn criterion_examples() {
        let phi = a_criterion(&dims(50, 10), &ratios(0.25, 0.5), &rate(0.5)).value();
        assert_relative_eq!(phi, 0.4 + 49.0 * 1.75 / 9.125, epsilon = 1e-12);
        assert!((phi - 9.7973).abs() < 1e-4);
        for (u, v) in [(0.0, 0.0), (1.0, 7.0), (100.0, 0.01)] {
            let phi = a_criterion(&dims(1, 10), &ratios(u, v), &rate(0.5)).value();
            assert_relative_eq!(phi, 0.4, epsilon = 1e-14);
        }
        let phi = a_criterion(&dims(50, 10), &ratios(0.25, 2.0), &rate(0.5)).value();
        assert!((phi - 13.5923).abs() < 1e-4);
    }

    #[test]
    fn efficiency_examples() {
        let (d, r) = (dims(50, 10), ratios(0.25, 2.0));
        assert_eq!(efficiency(&d, &r, &rate(0.6), &rate(0.6)), 1.0);
        let e = efficiency(&d, &r, &rate(0.5), &rate(0.6823));
        assert!((e - 0.9357).abs() < 1e-3);
        let e = efficiency(&dims(50, 10), &ratios(0.25, 0.0), &rate(0.5), &rate(0.5));
        assert_eq!(e, 1.0);
    }

    #[test]
    fn exact_and_full_paths_agree() {
        for big_n in 2..=30 {
            for n in 1..big_n {
                let d = ExactDesign::new(dims(7, big_n), n).unwrap();
                let r = ratios(0.37, 1.9);
                let full = mse_full(&r, &d).unwrap().effect_part();
                let closed = mse_alpha(&d.dims(), &r, &d.into());
                assert_relative_eq!(full.averaging, closed.averaging, max_relative = 1e-12);
                assert_relative_eq!(full.centering, closed.centering, max_relative = 1e-12);
                assert_relative_eq!(
                    a_criterion_exact(&r, &d).value(),
                    full.trace(),
                    max_relative = 1e-12
                );
            }
        }
    }

    #[test]
    fn dense_eigenvalues_match_projector_coefficients() {
        for k in [1usize, 2, 5, 17, 50] {
            let m = mse_alpha(&dims(k, 10), &ratios(0.4, 1.3), &rate(0.63));
            let dense = DMatrix::from_row_slice(k, k, &m.to_dense());
            assert_eq!(dense, dense.transpose());
            let mut eig: Vec<f64> = dense.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
            eig.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let mut expected = vec![m.centering; k - 1];
            expected.push(m.averaging);
            expected.sort_by(|a, b| a.partial_cmp(b).unwrap());
            for (got, want) in eig.iter().zip(&expected) {
                assert!((got - want).abs() < 1e-10, "k={k}: {got} vs {want}");
            }
            assert_relative_eq!(dense.trace(), m.trace(), epsilon = 1e-10);
        }
    }

    #[test]
    fn full_matrix_is_positive_semidefinite() {
        let d = ExactDesign::new(dims(6, 9), 4).unwrap();
        let full = mse_full(&ratios(0.2, 3.0), &d).unwrap();
        assert!(full.population.is_positive_definite());
        assert!(full.deviation.is_positive_definite());
        let dense = DMatrix::from_row_slice(12, 12, &full.to_dense());
        assert!((dense.clone() - dense.transpose()).abs().max() < 1e-15);
        let eig = dense.clone().symmetric_eigen().eigenvalues;
        assert!(eig.iter().all(|&x| x > -1e-12));
        assert_relative_eq!(dense.trace(), full.trace(), epsilon = 1e-12);
        // Selecting the effect coordinates reproduces the compound-symmetric block.
        let effect = full.effect_part();
        for i in 0..6 {
            for j in 0..6 {
                assert_relative_eq!(dense[(2 * i + 1, 2 * j + 1)], effect.entry(i, j), epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn criterion_increases_with_centers() {
        let r = ratios(0.25, 0.5);
        let mut last = 0.0;
        for k in 1..60 {
            let phi = a_criterion(&dims(k, 10), &r, &rate(0.55)).value();
            assert!(phi > last);
            last = phi;
        }
    }

    #[test]
    fn criterion_blows_up_at_boundary() {
        let (d, r) = (dims(50, 10), ratios(0.25, 2.0));
        let phi = |w: f64| a_criterion(&d, &r, &rate(w)).value();
        for eps in [1e-2, 1e-4, 1e-6] {
            assert!(phi(eps / 100.0) > phi(eps));
            assert!(phi(1.0 - eps / 100.0) > phi(1.0 - eps));
        }
        assert!(phi(1e-9) > 1e7 && phi(1.0 - 1e-9) > 1e7);
    }

    #[test]
    fn criterion_is_numerically_convex() {
        for u in [0.0, 0.01, 0.25, 1.5, 20.0] {
            for v in [0.0, 0.01, 0.5, 2.0, 50.0] {
                let (d, r) = (dims(50, 10), ratios(u, v));
                let phi: Vec<f64> = (1..100)
                    .map(|i| a_criterion(&d, &r, &rate(i as f64 / 100.0)).value())
                    .collect();
                for win in phi.windows(3) {
                    assert!(win[0] - 2.0 * win[1] + win[2] >= -1e-9);
                }
            }
        }
    }
}
