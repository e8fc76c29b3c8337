//! Monte Carlo simulation of the two-level model, used to check the analytic
//! MSE formulas.
//!
//! Center effects and residuals are drawn as independent Gaussians. Each
//! replicate gets its own ChaCha stream keyed by `(master_seed, replicate)`,
//! and replicate results are reduced in index order, so reports do not depend
//! on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::blup::{blup_weights, predict_scalar, CenterParams, CenterSummaries};
use crate::criterion::mse_alpha;
use crate::error::{Error, Result};
use crate::model::{ApproxDesign, ExactDesign, ModelDims, VarianceRatios};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub design: ExactDesign,
    pub ratios: VarianceRatios,
    /// Population mean intercept.
    pub mu: f64,
    /// Population mean treatment effect.
    pub alpha: f64,
    /// Residual standard deviation.
    pub sigma: f64,
    pub replications: usize,
    pub master_seed: u64,
}

impl SimConfig {
    pub fn new(design: ExactDesign, ratios: VarianceRatios, replications: usize, master_seed: u64) -> Self {
        Self {
            design,
            ratios,
            mu: 0.0,
            alpha: 1.0,
            sigma: 1.0,
            replications,
            master_seed,
        }
    }

    pub fn with_means(mut self, mu: f64, alpha: f64) -> Self {
        self.mu = mu;
        self.alpha = alpha;
        self
    }

    pub fn with_sigma(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidSimConfig("replications must be at least 1".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidSimConfig(format!(
                "sigma must be finite and positive (got {})",
                self.sigma
            )));
        }
        if !(self.mu.is_finite() && self.alpha.is_finite()) {
            return Err(Error::InvalidSimConfig("population means must be finite".into()));
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        self.design.dims()
    }
}

/// One simulated trial: `K x N` responses (row-major, treated individuals
/// first in every row) and the drawn center parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub design: ExactDesign,
    pub responses: Vec<f64>,
    pub truth: Vec<CenterParams>,
}

impl SimDataset {
    pub fn center(&self, i: usize) -> &[f64] {
        let big_n = self.design.dims().center_size();
        &self.responses[i * big_n..(i + 1) * big_n]
    }

    /// Group means per center.
    pub fn summaries(&self) -> CenterSummaries {
        let n = self.design.treated();
        let k = self.design.dims().centers();
        let mean = |ys: &[f64]| ys.iter().sum::<f64>() / ys.len() as f64;
        let (treatment, control) = (0..k)
            .map(|i| {
                let row = self.center(i);
                (mean(&row[..n]), mean(&row[n..]))
            })
            .unzip();
        CenterSummaries::new(treatment, control).expect("finite simulated data")
    }
}

fn replicate_rng(master_seed: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replicate);
    rng
}

/// Draws one trial. Deterministic in `(config.master_seed, replicate)`.
pub fn simulate_trial(config: &SimConfig, replicate: u64) -> SimDataset {
    let mut rng = replicate_rng(config.master_seed, replicate);
    let dims = config.dims();
    let (k, big_n, n) = (dims.centers(), dims.center_size(), config.design.treated());
    let sd_intercept = config.sigma * config.ratios.u().sqrt();
    let sd_effect = config.sigma * config.ratios.v().sqrt();
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let truth: Vec<CenterParams> = (0..k)
        .map(|_| CenterParams {
            intercept: config.mu + sd_intercept * normal(),
            effect: config.alpha + sd_effect * normal(),
        })
        .collect();
    let mut responses = Vec::with_capacity(k * big_n);
    for center in &truth {
        for j in 0..big_n {
            let shift = if j < n { center.effect } else { 0.0 };
            responses.push(center.intercept + shift + config.sigma * normal());
        }
    }
    SimDataset {
        design: config.design,
        responses,
        truth,
    }
}

/// Empirical against analytic value of one MSE quantity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McComponent {
    pub empirical: f64,
    pub analytic: f64,
    /// Infinite (serialized as `null`) for a single replicate.
    pub standard_error: f64,
}

impl McComponent {
    fn from_samples(samples: impl Iterator<Item = f64> + Clone, count: usize, analytic: f64) -> Self {
        let r = count as f64;
        let empirical = samples.clone().sum::<f64>() / r;
        let standard_error = if count > 1 {
            let var = samples.map(|x| (x - empirical).powi(2)).sum::<f64>() / (r - 1.0);
            (var / r).sqrt()
        } else {
            f64::INFINITY
        };
        Self {
            empirical,
            analytic,
            standard_error,
        }
    }

    /// `|empirical - analytic| / standard_error`.
    pub fn z_score(&self) -> f64 {
        (self.empirical - self.analytic).abs() / self.standard_error
    }
}

/// Empirical effect-prediction MSE against the analytic A-criterion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McReport {
    pub config: SimConfig,
    /// Mean over replicates of `sum_i (alpha_hat_i - alpha_i)^2 / sigma^2`.
    pub empirical_trace: f64,
    pub analytic_trace: f64,
    /// `|empirical - analytic| / analytic`
    pub relative_error: f64,
    pub standard_error: f64,
    /// `K * mean_i(e_i)^2`, the error along the all-ones direction; its
    /// analytic counterpart is the averaging coefficient.
    pub averaging: McComponent,
    /// `sum_i (e_i - mean(e))^2`; analytic counterpart `(K - 1) * centering`.
    pub centering: McComponent,
    /// Whether the empirical trace is within three standard errors.
    pub within_three_se: bool,
}

/// Per-replicate normalized squared errors: (trace, averaging part, centering part).
fn replicate_errors(config: &SimConfig, replicate: u64) -> (f64, f64, f64) {
    let data = simulate_trial(config, replicate);
    let weights = blup_weights(&config.ratios, &config.design);
    let predictions = predict_scalar(&data.summaries(), &weights);
    let errors: Vec<f64> = predictions
        .effects()
        .zip(&data.truth)
        .map(|(hat, truth)| (hat - truth.effect) / config.sigma)
        .collect();
    let k = errors.len() as f64;
    let mean = errors.iter().sum::<f64>() / k;
    let trace = errors.iter().map(|e| e * e).sum::<f64>();
    let centered = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>();
    (trace, k * mean * mean, centered)
}

/// Runs `config.replications` simulated trials and compares the empirical
/// effect-prediction MSE with the analytic value at `w = n/N`.
pub fn empirical_mse(config: &SimConfig) -> Result<McReport> {
    config.validate()?;
    let samples: Vec<(f64, f64, f64)> = (0..config.replications as u64)
        .into_par_iter()
        .map(|rep| replicate_errors(config, rep))
        .collect();
    let analytic = mse_alpha(&config.dims(), &config.ratios, &ApproxDesign::from(config.design));
    let count = samples.len();
    let k = config.dims().centers() as f64;
    let trace = McComponent::from_samples(samples.iter().map(|s| s.0), count, analytic.trace());
    let averaging = McComponent::from_samples(samples.iter().map(|s| s.1), count, analytic.averaging);
    let centering = McComponent::from_samples(
        samples.iter().map(|s| s.2),
        count,
        (k - 1.0) * analytic.centering,
    );
    Ok(McReport {
        config: *config,
        empirical_trace: trace.empirical,
        analytic_trace: trace.analytic,
        relative_error: (trace.empirical - trace.analytic).abs() / trace.analytic,
        standard_error: trace.standard_error,
        averaging,
        centering,
        within_three_se: trace.standard_error.is_finite() && trace.z_score() <= 3.0,
    })
}
