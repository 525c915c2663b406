//! Least-squares fit of the success curve `g(x) = (a·x + 1)^(−b)`.

use serde::Serialize;
use thiserror::Error;

use crate::Scalar;

/// Starting point `(a, b)` of the fit.
pub const FIT_START: (f64, f64) = (0.05, 0.5);
const MIN_POINTS: usize = 5;
const ITER_CAP: usize = 1000;
/// Parameters below this are reported as a degenerate (flat) fit.
const DEGENERATE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("need at least {MIN_POINTS} points, got {0}")]
    TooFewPoints(usize),
    #[error("point {index}: success probability {value} outside [0, 1]")]
    InvalidProbability { index: usize, value: f64 },
    #[error("fit diverged after {iterations} iterations")]
    FitDiverged { iterations: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CompositeFit<S> {
    pub a: S,
    pub b: S,
    pub rmse: S,
    /// One of the parameters collapsed to zero: the data are flat and the
    /// curve is constant 1.
    pub degenerate: bool,
    pub iterations: usize,
}

fn residuals<S: Scalar>(points: &[(u64, S)], a: S, b: S) -> S {
    points
        .iter()
        .map(|&(x, y)| {
            let r = (a * S::from_count(x) + S::one()).powf(-b) - y;
            r * r
        })
        .sum()
}

/// Fit `(a·x + 1)^(−b)` to `(age, success probability)` points by damped
/// Gauss-Newton (Levenberg–Marquardt) with `a, b ≥ 0`.
pub fn fit_composite<S: Scalar>(points: &[(u64, S)]) -> Result<CompositeFit<S>, FitError> {
    if points.len() < MIN_POINTS {
        return Err(FitError::TooFewPoints(points.len()));
    }
    for (index, &(_, y)) in points.iter().enumerate() {
        if !(y >= S::zero() && y <= S::one()) {
            return Err(FitError::InvalidProbability {
                index,
                value: y.as_f64(),
            });
        }
    }
    let (mut a, mut b) = (S::lit(FIT_START.0), S::lit(FIT_START.1));
    let mut sse = residuals(points, a, b);
    let mut lambda = S::lit(1e-3);
    let rel_step = S::epsilon() * S::lit(16.0);
    let mut iterations = 0;
    while iterations < ITER_CAP {
        iterations += 1;
        // Normal equations of the linearized problem.
        let (mut jaa, mut jab, mut jbb, mut ga, mut gb) = (S::zero(), S::zero(), S::zero(), S::zero(), S::zero());
        for &(x, y) in points {
            let x = S::from_count(x);
            let base = a * x + S::one();
            let g = base.powf(-b);
            let r = g - y;
            let da = -b * x * g / base;
            let db = -base.ln() * g;
            jaa = jaa + da * da;
            jab = jab + da * db;
            jbb = jbb + db * db;
            ga = ga + da * r;
            gb = gb + db * r;
        }
        if sse == S::zero() || (ga == S::zero() && gb == S::zero()) {
            break;
        }
        let mut accepted = false;
        while lambda < S::lit(1e30) {
            let (m11, m22) = (jaa + lambda * jaa.max(S::min_positive_value()), jbb + lambda * jbb.max(S::min_positive_value()));
            let det = m11 * m22 - jab * jab;
            if !(det.abs() > S::zero()) || !det.is_finite() {
                lambda = lambda * S::lit(10.0);
                continue;
            }
            let step_a = -(m22 * ga - jab * gb) / det;
            let step_b = -(m11 * gb - jab * ga) / det;
            let (na, nb) = ((a + step_a).max(S::zero()), (b + step_b).max(S::zero()));
            let trial = residuals(points, na, nb);
            if !trial.is_finite() {
                return Err(FitError::FitDiverged { iterations });
            }
            if trial <= sse {
                let small = (na - a).abs() <= rel_step * a.abs().max(S::lit(DEGENERATE))
                    && (nb - b).abs() <= rel_step * b.abs().max(S::lit(DEGENERATE));
                a = na;
                b = nb;
                let improved = trial < sse;
                sse = trial;
                lambda = (lambda / S::lit(10.0)).max(S::lit(1e-15));
                accepted = improved && !small;
                break;
            }
            lambda = lambda * S::lit(10.0);
        }
        if !accepted {
            break;
        }
    }
    if iterations >= ITER_CAP || !a.is_finite() || !b.is_finite() {
        return Err(FitError::FitDiverged { iterations });
    }
    let degenerate = a <= S::lit(DEGENERATE) || b <= S::lit(DEGENERATE);
    Ok(CompositeFit {
        a,
        b,
        rmse: (sse / S::from_count(points.len() as u64)).sqrt(),
        degenerate,
        iterations,
    })
}
