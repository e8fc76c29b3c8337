//! A-optimal allocation rates, rounding to exact designs, and parameter sweeps.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::criterion::{a_criterion, a_criterion_exact, CriterionValue};
use crate::error::{Error, Result};
use crate::model::{ApproxDesign, ExactDesign, ModelDims, VarianceRatios};

/// Default bracket width at which the search stops.
pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// The search runs on `[BOUNDARY_MARGIN, 1 - BOUNDARY_MARGIN]`.
pub const BOUNDARY_MARGIN: f64 = 1e-6;

const MIN_TOLERANCE: f64 = 1e-12;
const MAX_TOLERANCE: f64 = 1e-2;

/// Minimizer of the A-criterion over the allocation rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Optimum {
    pub w_star: f64,
    pub phi_star: f64,
    pub iterations: usize,
    pub bracket_width: f64,
}

impl Optimum {
    pub fn design(&self) -> ApproxDesign {
        ApproxDesign::new(self.w_star).expect("optimum lies inside the search bracket")
    }
}

/// Golden-section search for the minimum of a unimodal `f` on `[lo, hi]`.
/// Returns the midpoint of the final bracket, the number of iterations and
/// the final bracket width.
fn golden_section<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, tol: f64) -> (f64, usize, f64) {
    let shrink = (5f64.sqrt() - 1.0) / 2.0;
    let (mut a, mut b) = (lo, hi);
    let mut c = b - shrink * (b - a);
    let mut d = a + shrink * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    let mut iterations = 0;
    while b - a > tol {
        iterations += 1;
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - shrink * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + shrink * (b - a);
            fd = f(d);
        }
    }
    (0.5 * (a + b), iterations, b - a)
}

/// Finds the A-optimal allocation rate by golden-section search. The
/// criterion is convex in `w` and diverges at both ends, so the minimum is
/// interior.
pub fn optimize_allocation(dims: &ModelDims, ratios: &VarianceRatios, tol: f64) -> Result<Optimum> {
    if !(tol > MIN_TOLERANCE && tol < MAX_TOLERANCE) {
        return Err(Error::InvalidTolerance(tol));
    }
    let phi = |w: f64| a_criterion(dims, ratios, &ApproxDesign::new(w).expect("w in (0,1)")).value();
    let (w_star, iterations, bracket_width) =
        golden_section(phi, BOUNDARY_MARGIN, 1.0 - BOUNDARY_MARGIN, tol);
    Ok(Optimum {
        w_star,
        phi_star: phi(w_star),
        iterations,
        bracket_width,
    })
}

/// Best exact design, together with the other adjacent candidate when it differs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExactOptimum {
    pub design: ExactDesign,
    pub phi: CriterionValue,
    pub runner_up: Option<(ExactDesign, CriterionValue)>,
    pub approximate: Optimum,
}

/// Optimal exact design with the default search tolerance.
pub fn optimal_exact(dims: &ModelDims, ratios: &VarianceRatios) -> ExactOptimum {
    let optimum = optimize_allocation(dims, ratios, DEFAULT_TOLERANCE).expect("default tolerance is valid");
    round_to_exact(dims, ratios, optimum)
}

/// Rounds an approximate optimum to the better of the exact designs
/// `floor(N w*)` and `ceil(N w*)` (clamped to `1..=N-1`). Exact ties go to the
/// smaller group size.
pub fn round_to_exact(dims: &ModelDims, ratios: &VarianceRatios, optimum: Optimum) -> ExactOptimum {
    let big_n = dims.center_size();
    let target = optimum.w_star * big_n as f64;
    let clamp = |n: f64| (n as usize).clamp(1, big_n - 1);
    let lower = clamp(target.floor());
    let upper = clamp(target.ceil());
    let evaluate = |n: usize| {
        let design = ExactDesign::new(*dims, n).expect("clamped to 1..=N-1");
        (design, a_criterion_exact(ratios, &design))
    };
    let low = evaluate(lower);
    if lower == upper {
        return ExactOptimum {
            design: low.0,
            phi: low.1,
            runner_up: None,
            approximate: optimum,
        };
    }
    let high = evaluate(upper);
    let (best, other) = if high.1.value() < low.1.value() {
        (high, low)
    } else {
        (low, high)
    };
    ExactOptimum {
        design: best.0,
        phi: best.1,
        runner_up: Some(other),
        approximate: optimum,
    }
}

/// Exhaustive minimum over `n = 1..=N-1`; ties go to the smaller `n`.
pub fn brute_force_exact(dims: &ModelDims, ratios: &VarianceRatios) -> (ExactDesign, CriterionValue) {
    (1..dims.center_size())
        .map(|n| {
            let design = ExactDesign::new(*dims, n).expect("1 <= n <= N-1");
            (design, a_criterion_exact(ratios, &design))
        })
        .reduce(|best, cand| if cand.1.value() < best.1.value() { cand } else { best })
        .expect("N >= 2 gives at least one design")
}

/// `x / (1 + x)`, mapping `[0, inf)` onto `[0, 1)`.
pub fn to_rescaled(x: f64) -> f64 {
    x / (1.0 + x)
}

/// `r / (1 - r)`, the inverse of [`to_rescaled`].
pub fn from_rescaled(r: f64) -> f64 {
    r / (1.0 - r)
}

/// `points` midpoints `(j + 1/2) / points` of an even partition of `(0, 1)`.
pub fn rescaled_grid(points: usize) -> Result<Vec<f64>> {
    if points == 0 {
        return Err(Error::InvalidGrid("grid needs at least one point".into()));
    }
    Ok((0..points)
        .map(|j| (j as f64 + 0.5) / points as f64)
        .collect())
}

/// Which ratio a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    /// Vary `v` with `u` held fixed.
    V,
    /// Vary `u` with `v` held fixed.
    U,
    /// Vary `q = v/u` with one of `u`, `v` held fixed.
    Q,
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepAxis::V => "v",
            SweepAxis::U => "u",
            SweepAxis::Q => "q",
        })
    }
}

/// Ratio held at each fixed value during a `q` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum HeldRatio {
    #[default]
    U,
    V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    axis: SweepAxis,
    q_held: HeldRatio,
    fixed: Vec<f64>,
    grid: Vec<f64>,
    dims: ModelDims,
    tol: f64,
}

impl SweepSpec {
    /// `grid` holds rescaled values `r` in `(0, 1)`, strictly increasing.
    pub fn new(axis: SweepAxis, fixed: Vec<f64>, grid: Vec<f64>, dims: ModelDims) -> Result<Self> {
        if grid.is_empty() {
            return Err(Error::InvalidGrid("grid is empty".into()));
        }
        if let Some(r) = grid.iter().find(|r| !(**r > 0.0 && **r < 1.0)) {
            return Err(Error::InvalidGrid(format!("grid value {r} outside (0, 1)")));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid("grid must be strictly increasing".into()));
        }
        if fixed.is_empty() {
            return Err(Error::InvalidGrid("no fixed values given".into()));
        }
        let spec = Self {
            axis,
            q_held: HeldRatio::default(),
            fixed,
            grid,
            dims,
            tol: DEFAULT_TOLERANCE,
        };
        spec.check_fixed()?;
        Ok(spec)
    }

    pub fn with_q_held(mut self, held: HeldRatio) -> Result<Self> {
        self.q_held = held;
        self.check_fixed()?;
        Ok(self)
    }

    pub fn with_tolerance(mut self, tol: f64) -> Result<Self> {
        if !(tol > MIN_TOLERANCE && tol < MAX_TOLERANCE) {
            return Err(Error::InvalidTolerance(tol));
        }
        self.tol = tol;
        Ok(self)
    }

    fn check_fixed(&self) -> Result<()> {
        for &x in &self.fixed {
            if !(x.is_finite() && x >= 0.0) {
                return Err(Error::InvalidGrid(format!("fixed value {x} must be finite and nonnegative")));
            }
            if self.axis == SweepAxis::Q && x == 0.0 {
                return Err(Error::InvalidGrid("q sweeps need strictly positive fixed values".into()));
            }
        }
        Ok(())
    }

    pub fn axis(&self) -> SweepAxis {
        self.axis
    }

    pub fn fixed(&self) -> &[f64] {
        &self.fixed
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    /// `(u, v)` for one fixed value and one swept ratio.
    fn ratios(&self, fixed: f64, swept: f64) -> Result<VarianceRatios> {
        let (u, v) = match (self.axis, self.q_held) {
            (SweepAxis::V, _) => (fixed, swept),
            (SweepAxis::U, _) => (swept, fixed),
            (SweepAxis::Q, HeldRatio::U) => (fixed, swept * fixed),
            (SweepAxis::Q, HeldRatio::V) => (fixed / swept, fixed),
        };
        VarianceRatios::new(u, v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepRow {
    pub axis: SweepAxis,
    /// Rescaled grid value.
    pub r: f64,
    /// Swept ratio `r / (1 - r)`.
    pub ratio: f64,
    pub u: f64,
    pub v: f64,
    pub w_star: f64,
    pub phi_star: f64,
    /// Criterion at the balanced design `w = 1/2`.
    pub phi_balanced: f64,
    /// `phi_star / phi_balanced`
    pub efficiency: f64,
}

fn sweep_point(spec: &SweepSpec, fixed: f64, r: f64) -> Result<SweepRow> {
    let ratio = from_rescaled(r);
    let ratios = spec.ratios(fixed, ratio)?;
    let optimum = optimize_allocation(&spec.dims, &ratios, spec.tol)?;
    let phi_balanced = a_criterion(&spec.dims, &ratios, &ApproxDesign::balanced()).value();
    Ok(SweepRow {
        axis: spec.axis,
        r,
        ratio,
        u: ratios.u(),
        v: ratios.v(),
        w_star: optimum.w_star,
        phi_star: optimum.phi_star,
        phi_balanced,
        efficiency: optimum.phi_star / phi_balanced,
    })
}

/// Evaluates every (fixed value, grid point) pair. Rows come back grouped by
/// fixed value in the given order, then in grid order, whatever the thread
/// count.
pub fn run_sweep(spec: &SweepSpec) -> Result<Vec<SweepRow>> {
    let points: Vec<(f64, f64)> = spec
        .fixed
        .iter()
        .flat_map(|&f| spec.grid.iter().map(move |&r| (f, r)))
        .collect();
    points
        .par_iter()
        .map(|&(fixed, r)| sweep_point(spec, fixed, r))
        .collect()
}
