//! Best linear unbiased prediction of center intercepts and treatment effects.
//!
//! Two routes are provided. [`predict_scalar`] applies closed-form shrinkage
//! weights to the per-center group means. [`predict_matrix`] solves the 2x2
//! system `(F'F + D^-1) b_i = F'F b_i,ind + D^-1 b_0` for every center. They
//! agree to rounding whenever `D = diag(u, v)` is invertible, and the scalar
//! route stays well defined when `u` or `v` is zero.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{information_matrix_exact, ExactDesign, VarianceRatios};

/// Shrinkage weights of the closed-form predictors.
///
/// With `D = (Nu+1)(nv+1) - n^2 uv`:
///
/// ```text
/// mu_i    = treatment_deviation * (Y_iT - Y..T) + own_control * Y_iC + (1 - own_control) * Y..C
/// alpha_i = own_treatment * Y_iT + (1 - own_treatment) * Y..T
///           - (1 - pooled_control) * Y_iC - pooled_control * Y..C
/// ```
///
/// `pooled_control` multiplies the overall control mean. Expanding the matrix
/// form gives this assignment; attaching it to the center's own control mean
/// instead would not reduce to the fixed-effects estimate `Y..T - Y..C` as
/// `u, v -> 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlupWeights {
    /// `nu / D`
    pub treatment_deviation: f64,
    /// `u (N-n)(nv+1) / D`
    pub own_control: f64,
    /// `((Nu+1) nv - n^2 uv) / D`
    pub own_treatment: f64,
    /// `(Nu + nv + 1) / D`
    pub pooled_control: f64,
    /// `D`, always positive.
    pub denominator: f64,
}

/// Closed-form shrinkage weights for an exact design.
pub fn blup_weights(ratios: &VarianceRatios, design: &ExactDesign) -> BlupWeights {
    let (u, v) = (ratios.u(), ratios.v());
    let big_n = design.dims().center_size() as f64;
    let n = design.treated() as f64;
    let m = design.controls() as f64;
    // Expanded so that every term is nonnegative.
    let denominator = n * u * v * m + big_n * u + n * v + 1.0;
    BlupWeights {
        treatment_deviation: n * u / denominator,
        own_control: u * m * (n * v + 1.0) / denominator,
        own_treatment: n * v * (u * m + 1.0) / denominator,
        pooled_control: (big_n * u + n * v + 1.0) / denominator,
        denominator,
    }
}

/// Group means of every center: `Y_iT`, `Y_iC` and their averages over centers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterSummaries {
    treatment_means: Vec<f64>,
    control_means: Vec<f64>,
    pooled_treatment: f64,
    pooled_control: f64,
}

impl CenterSummaries {
    pub fn new(treatment_means: Vec<f64>, control_means: Vec<f64>) -> Result<Self> {
        if treatment_means.is_empty() {
            return Err(Error::InvalidSummaries("at least one center is required".into()));
        }
        if treatment_means.len() != control_means.len() {
            return Err(Error::InvalidSummaries(format!(
                "{} treatment means but {} control means",
                treatment_means.len(),
                control_means.len()
            )));
        }
        if let Some(i) = treatment_means
            .iter()
            .chain(&control_means)
            .position(|y| !y.is_finite())
        {
            return Err(Error::InvalidSummaries(format!(
                "non-finite group mean for center index {}",
                i % treatment_means.len()
            )));
        }
        let k = treatment_means.len() as f64;
        let pooled_treatment = treatment_means.iter().sum::<f64>() / k;
        let pooled_control = control_means.iter().sum::<f64>() / k;
        Ok(Self {
            treatment_means,
            control_means,
            pooled_treatment,
            pooled_control,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment_means.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment_means.is_empty()
    }

    pub fn treatment_means(&self) -> &[f64] {
        &self.treatment_means
    }

    pub fn control_means(&self) -> &[f64] {
        &self.control_means
    }

    /// `Y..T`
    pub fn pooled_treatment(&self) -> f64 {
        self.pooled_treatment
    }

    /// `Y..C`
    pub fn pooled_control(&self) -> f64 {
        self.pooled_control
    }
}

/// Intercept and treatment effect of one center (true, estimated or predicted).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CenterParams {
    pub intercept: f64,
    pub effect: f64,
}

impl CenterParams {
    fn from_means(treatment: f64, control: f64) -> Self {
        Self {
            intercept: control,
            effect: treatment - control,
        }
    }
}

/// Predicted `(mu_i, alpha_i)` for every center, in center order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CenterPredictions {
    pub centers: Vec<CenterParams>,
}

impl CenterPredictions {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn intercepts(&self) -> impl Iterator<Item = f64> + '_ {
        self.centers.iter().map(|c| c.intercept)
    }

    pub fn effects(&self) -> impl Iterator<Item = f64> + '_ {
        self.centers.iter().map(|c| c.effect)
    }
}

/// Within-center least squares: `(Y_iC, Y_iT - Y_iC)` per center.
pub fn individual_estimates(summaries: &CenterSummaries) -> Vec<CenterParams> {
    summaries
        .treatment_means
        .iter()
        .zip(&summaries.control_means)
        .map(|(&t, &c)| CenterParams::from_means(t, c))
        .collect()
}

/// Population estimate `(Y..C, Y..T - Y..C)`.
pub fn population_blue(summaries: &CenterSummaries) -> CenterParams {
    CenterParams::from_means(summaries.pooled_treatment, summaries.pooled_control)
}

/// Predictions from the closed-form weights.
pub fn predict_scalar(summaries: &CenterSummaries, weights: &BlupWeights) -> CenterPredictions {
    let pooled_t = summaries.pooled_treatment;
    let pooled_c = summaries.pooled_control;
    let w = weights;
    let centers = summaries
        .treatment_means
        .iter()
        .zip(&summaries.control_means)
        .map(|(&t, &c)| CenterParams {
            intercept: w.treatment_deviation * (t - pooled_t)
                + w.own_control * c
                + (1.0 - w.own_control) * pooled_c,
            effect: w.own_treatment * t + (1.0 - w.own_treatment) * pooled_t
                - (1.0 - w.pooled_control) * c
                - w.pooled_control * pooled_c,
        })
        .collect();
    CenterPredictions { centers }
}

/// Predictions from the 2x2 linear system per center. Requires `u, v > 0`.
pub fn predict_matrix(
    summaries: &CenterSummaries,
    ratios: &VarianceRatios,
    design: &ExactDesign,
) -> Result<CenterPredictions> {
    if summaries.len() != design.dims().centers() {
        return Err(Error::InvalidSummaries(format!(
            "{} centers summarized but design has K = {}",
            summaries.len(),
            design.dims().centers()
        )));
    }
    let moments = information_matrix_exact(design);
    let precision = ratios.dispersion_inverse()?;
    let solve = (moments + precision)
        .inverse()
        .expect("F'F + D^-1 is positive definite");
    let population = population_blue(summaries);
    let prior = precision.mul_vec([population.intercept, population.effect]);
    let centers = individual_estimates(summaries)
        .into_iter()
        .map(|own| {
            let data = moments.mul_vec([own.intercept, own.effect]);
            let [intercept, effect] = solve.mul_vec([data[0] + prior[0], data[1] + prior[1]]);
            CenterParams { intercept, effect }
        })
        .collect();
    Ok(CenterPredictions { centers })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelDims;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn design(k: usize, big_n: usize, n: usize) -> ExactDesign {
        ExactDesign::new(ModelDims::new(k, big_n).unwrap(), n).unwrap()
    }

    fn ratios(u: f64, v: f64) -> VarianceRatios {
        VarianceRatios::new(u, v).unwrap()
    }

    #[test]
    fn weights_worked_example() {
        let w = blup_weights(&ratios(0.25, 0.5), &design(2, 10, 5));
        assert_relative_eq!(w.denominator, 9.125, epsilon = 1e-12);
        assert_relative_eq!(w.treatment_deviation, 1.25 / 9.125, epsilon = 1e-12);
        assert_relative_eq!(w.own_control, 4.375 / 9.125, epsilon = 1e-12);
        assert_relative_eq!(w.own_treatment, 5.625 / 9.125, epsilon = 1e-12);
        assert_relative_eq!(w.pooled_control, 6.0 / 9.125, epsilon = 1e-12);
        assert!((w.treatment_deviation - 0.13699).abs() < 1e-5);
        assert!((w.own_control - 0.47945).abs() < 1e-5);
        assert!((w.own_treatment - 0.61644).abs() < 1e-5);
        assert!((w.pooled_control - 0.65753).abs() < 1e-5);
    }

    #[test]
    fn homogeneous_intercepts_pool_control_information() {
        for n in 1..10 {
            let w = blup_weights(&ratios(0.0, 0.7), &design(3, 10, n));
            assert_eq!(w.treatment_deviation, 0.0);
            assert_eq!(w.own_control, 0.0);
            assert_eq!(w.pooled_control, 1.0);
            assert_relative_eq!(w.denominator, n as f64 * 0.7 + 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn huge_ratios_stop_pooling() {
        let w = blup_weights(&ratios(1e12, 1e12), &design(3, 10, 4));
        assert!((w.own_treatment - 1.0).abs() < 1e-9);
        assert!((1.0 - w.pooled_control - 1.0).abs() < 1e-9);
    }

    #[test]
    fn individual_and_population_estimates() {
        let s = CenterSummaries::new(vec![3.0, 0.0, 7.0], vec![1.0, 5.0, 7.0]).unwrap();
        let own = individual_estimates(&s);
        assert_eq!(own[0], CenterParams { intercept: 1.0, effect: 2.0 });
        assert_eq!(own[1], CenterParams { intercept: 5.0, effect: -5.0 });
        assert_eq!(own[2], CenterParams { intercept: 7.0, effect: 0.0 });

        let s = CenterSummaries::new(vec![3.0, 1.0], vec![0.5, 1.5]).unwrap();
        assert_eq!(population_blue(&s), CenterParams { intercept: 1.0, effect: 1.0 });
        let zeros = CenterSummaries::new(vec![0.0; 4], vec![0.0; 4]).unwrap();
        assert_eq!(population_blue(&zeros), CenterParams { intercept: 0.0, effect: 0.0 });
        let single = CenterSummaries::new(vec![4.0], vec![1.5]).unwrap();
        assert_eq!(population_blue(&single), individual_estimates(&single)[0]);
    }

    #[test]
    fn summaries_validation() {
        assert!(CenterSummaries::new(vec![], vec![]).is_err());
        assert!(CenterSummaries::new(vec![1.0], vec![1.0, 2.0]).is_err());
        assert!(CenterSummaries::new(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn constant_data_predicts_constant_intercept_and_zero_effect() {
        let s = CenterSummaries::new(vec![2.5; 6], vec![2.5; 6]).unwrap();
        let d = design(6, 10, 3);
        let r = ratios(0.3, 1.7);
        for p in [
            predict_scalar(&s, &blup_weights(&r, &d)),
            predict_matrix(&s, &r, &d).unwrap(),
        ] {
            for c in &p.centers {
                assert_relative_eq!(c.intercept, 2.5, epsilon = 1e-12);
                assert!(c.effect.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fixed_effects_limit_returns_pooled_effect() {
        let s = CenterSummaries::new(vec![2.0, 0.0, 5.0], vec![0.0, 1.0, 3.0]).unwrap();
        let p = predict_scalar(&s, &blup_weights(&ratios(0.0, 0.0), &design(3, 10, 5)));
        let pooled = s.pooled_treatment() - s.pooled_control();
        for e in p.effects() {
            assert_relative_eq!(e, pooled, epsilon = 1e-12);
        }
    }

    #[test]
    fn worked_two_center_prediction() {
        let s = CenterSummaries::new(vec![2.0, 0.0], vec![0.0, 0.0]).unwrap();
        let d = design(2, 10, 5);
        let r = ratios(0.25, 0.5);
        let scalar = predict_scalar(&s, &blup_weights(&r, &d));
        let matrix = predict_matrix(&s, &r, &d).unwrap();
        let c1 = 5.625 / 9.125;
        assert_relative_eq!(scalar.centers[0].effect, 1.0 + c1, epsilon = 1e-12);
        assert_relative_eq!(scalar.centers[1].effect, 1.0 - c1, epsilon = 1e-12);
        assert!((scalar.centers[0].effect - 1.61644).abs() < 1e-5);
        assert!((scalar.centers[1].effect - 0.38356).abs() < 1e-5);
        for (a, b) in scalar.centers.iter().zip(&matrix.centers) {
            assert_relative_eq!(a.intercept, b.intercept, epsilon = 1e-10);
            assert_relative_eq!(a.effect, b.effect, epsilon = 1e-10);
        }
    }

    #[test]
    fn matrix_route_limits() {
        let s = CenterSummaries::new(vec![2.0, -1.0, 4.0], vec![0.5, 1.0, -2.0]).unwrap();
        let d = design(3, 8, 3);
        let own = individual_estimates(&s);
        let loose = predict_matrix(&s, &ratios(1e9, 1e9), &d).unwrap();
        for (p, o) in loose.centers.iter().zip(&own) {
            assert!((p.intercept - o.intercept).abs() < 1e-6);
            assert!((p.effect - o.effect).abs() < 1e-6);
        }
        let pop = population_blue(&s);
        let tight = predict_matrix(&s, &ratios(1e-9, 1e-9), &d).unwrap();
        for p in &tight.centers {
            assert!((p.intercept - pop.intercept).abs() < 1e-6);
            assert!((p.effect - pop.effect).abs() < 1e-6);
        }
    }

    #[test]
    fn matrix_route_rejects_singular_dispersion() {
        let s = CenterSummaries::new(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let d = design(2, 6, 3);
        assert!(matches!(
            predict_matrix(&s, &ratios(0.0, 1.0), &d),
            Err(Error::SingularDispersion { .. })
        ));
        assert!(predict_matrix(&s, &ratios(1.0, 0.0), &d).is_err());
        assert!(predict_matrix(&s, &ratios(1.0, 1.0), &design(3, 6, 3)).is_err());
    }

    fn instance() -> impl Strategy<Value = (usize, usize, usize, f64, f64)> {
        (2usize..40)
            .prop_flat_map(|big_n| (1usize..12, Just(big_n), 1..big_n, 0.0f64..50.0, 0.0f64..50.0))
    }

    proptest! {
        #[test]
        fn weight_identities((_k, big_n, n, u, v) in instance()) {
            let w = blup_weights(&ratios(u, v), &design(1, big_n, n));
            let (nf, mf) = (n as f64, (big_n - n) as f64);
            for c in [w.treatment_deviation, w.own_control, w.own_treatment, w.pooled_control] {
                prop_assert!((0.0..=1.0).contains(&c));
            }
            prop_assert!(w.denominator > 0.0);
            let tol = 1e-12;
            prop_assert!((w.own_control + (nf * u + nf * v + 1.0) / w.denominator - 1.0).abs() < tol);
            prop_assert!((w.own_treatment + (big_n as f64 * u + 1.0) / w.denominator - 1.0).abs() < tol);
            prop_assert!((1.0 - w.pooled_control - nf * u * v * mf / w.denominator).abs() < tol);
        }

        #[test]
        fn effect_predictions_average_to_population_effect(
            (k, big_n, n, u, v) in instance(),
            seed in prop::collection::vec(-10.0f64..10.0, 24),
        ) {
            let t: Vec<f64> = seed[..k].to_vec();
            let c: Vec<f64> = seed[12..12 + k].to_vec();
            let s = CenterSummaries::new(t, c).unwrap();
            let p = predict_scalar(&s, &blup_weights(&ratios(u, v), &design(k, big_n, n)));
            let mean = p.effects().sum::<f64>() / k as f64;
            prop_assert!((mean - population_blue(&s).effect).abs() < 1e-9);
        }

        #[test]
        fn equal_controls_give_convex_shrinkage(
            (k, big_n, n, u, v) in instance(),
            t in prop::collection::vec(-10.0f64..10.0, 12),
            control in -5.0f64..5.0,
        ) {
            let s = CenterSummaries::new(t[..k].to_vec(), vec![control; k]).unwrap();
            let w = blup_weights(&ratios(u, v), &design(k, big_n, n));
            let p = predict_scalar(&s, &w);
            let pooled = s.pooled_treatment() - control;
            for (e, &ti) in p.effects().zip(s.treatment_means()) {
                let own = ti - control;
                prop_assert!((e - (w.own_treatment * (ti - s.pooled_treatment()) + pooled)).abs() < 1e-9);
                let (lo, hi) = if own < pooled { (own, pooled) } else { (pooled, own) };
                prop_assert!(e >= lo - 1e-9 && e <= hi + 1e-9);
            }
        }
    }
}
