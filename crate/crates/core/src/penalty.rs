//! AoI penalty functions and the quantities derived from them.
//!
//! A [`PenaltyFunction`] maps an integer age to a control-quality loss. The
//! [`ExtendedPenalty`] wraps it with the piecewise-linear interpolation
//! `f̃` between integer ages and exposes
//!
//! * `F(h)  = Σ_{x=0}^{h} f(x)`     ([`ExtendedPenalty::cumulative`]),
//! * `F̃(h) = ∫_0^h f̃(x) dx`         ([`ExtendedPenalty::integral`]),
//! * the local and offload priority functions `W_l`, `W_t`.
//!
//! Prefix sums are tabulated once at construction for the first
//! [`PREFIX_TABLE_LEN`] ages. Beyond the table, `F̃` continues with the
//! closed-form integral of `f` plus the first Euler-Maclaurin correction,
//! which is exact for polynomials up to degree three and accurate to far
//! below `f64` resolution for the smooth composite and power laws.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::stochastics::Pmf;
use crate::Scalar;

/// Number of integer ages with tabulated `f` and `F`.
pub const PREFIX_TABLE_LEN: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PenaltyError {
    #[error("penalty parameter `{field}` must be {requirement}, got {value}")]
    InvalidParameter {
        field: &'static str,
        requirement: &'static str,
        value: f64,
    },
}

/// Non-decreasing AoI penalty law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum PenaltyFunction<S> {
    /// `c·x`
    Linear { c: S },
    /// `c·x²`
    Square { c: S },
    /// `alpha·x^p`
    Power { alpha: S, p: S },
    /// `1 − (a·x + 1)^(−b)`
    Composite { a: S, b: S },
}

impl<S: Scalar> PenaltyFunction<S> {
    pub fn validate(&self) -> Result<(), PenaltyError> {
        fn check<S: Scalar>(
            field: &'static str,
            v: S,
            strict: bool,
        ) -> Result<(), PenaltyError> {
            let ok = v.is_finite() && if strict { v > S::zero() } else { v >= S::zero() };
            if ok {
                Ok(())
            } else {
                Err(PenaltyError::InvalidParameter {
                    field,
                    requirement: if strict { "finite and > 0" } else { "finite and >= 0" },
                    value: v.as_f64(),
                })
            }
        }
        match *self {
            PenaltyFunction::Linear { c } | PenaltyFunction::Square { c } => check("c", c, false),
            PenaltyFunction::Power { alpha, p } => {
                check("alpha", alpha, true)?;
                check("p", p, true)
            }
            PenaltyFunction::Composite { a, b } => {
                check("a", a, true)?;
                check("b", b, true)
            }
        }
    }

    /// `f(x)` at an integer age.
    #[inline]
    pub fn eval(&self, x: u64) -> S {
        self.eval_real(S::from_count(x))
    }

    /// The analytic law at a real argument `x ≥ 0` (not the interpolation).
    pub fn eval_real(&self, x: S) -> S {
        match *self {
            PenaltyFunction::Linear { c } => c * x,
            PenaltyFunction::Square { c } => c * x * x,
            PenaltyFunction::Power { alpha, p } => {
                if x <= S::zero() {
                    S::zero()
                } else {
                    alpha * x.powf(p)
                }
            }
            PenaltyFunction::Composite { a, b } => S::one() - (a * x + S::one()).powf(-b),
        }
    }

    /// Analytic derivative of the law at `x > 0`.
    fn derivative(&self, x: S) -> S {
        match *self {
            PenaltyFunction::Linear { c } => c,
            PenaltyFunction::Square { c } => S::lit(2.0) * c * x,
            PenaltyFunction::Power { alpha, p } => alpha * p * x.powf(p - S::one()),
            PenaltyFunction::Composite { a, b } => a * b * (a * x + S::one()).powf(-b - S::one()),
        }
    }

    /// `∫_0^x f(t) dt` of the analytic law.
    fn antiderivative(&self, x: S) -> S {
        match *self {
            PenaltyFunction::Linear { c } => c * x * x / S::lit(2.0),
            PenaltyFunction::Square { c } => c * x * x * x / S::lit(3.0),
            PenaltyFunction::Power { alpha, p } => alpha * x.powf(p + S::one()) / (p + S::one()),
            PenaltyFunction::Composite { a, b } => {
                let u = a * x + S::one();
                let tail = if (b - S::one()).abs() < S::lit(1e-12) {
                    u.ln() / a
                } else {
                    (u.powf(S::one() - b) - S::one()) / (a * (S::one() - b))
                };
                x - tail
            }
        }
    }

    /// Whether the law is `alpha·x^p` for the given exponent, returning `alpha`.
    pub fn power_coefficient(&self, p: S) -> Option<S> {
        let close = |q: S| (q - p).abs() <= S::lit(1e-12);
        match *self {
            PenaltyFunction::Linear { c } if close(S::one()) => Some(c),
            PenaltyFunction::Square { c } if close(S::lit(2.0)) => Some(c),
            PenaltyFunction::Power { alpha, p: q } if close(q) => Some(alpha),
            _ => None,
        }
    }
}

/// Outcome of [`ExtendedPenalty::expected_cumulative`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayExpectation<S> {
    /// `E[F(D − 1)]` over the retained support.
    pub value: S,
    /// Probability mass dropped by tail truncation of the delay law.
    pub truncated_mass: S,
}

impl<S: Scalar> DelayExpectation<S> {
    /// Set when the delay law had unbounded support and its tail was cut.
    pub fn truncated(&self) -> bool {
        self.truncated_mass > S::zero()
    }
}

/// Penalty law together with its piecewise-linear extension and prefix tables.
///
/// Immutable after construction.
#[derive(Debug, Clone)]
pub struct ExtendedPenalty<S> {
    base: PenaltyFunction<S>,
    values: Vec<S>,
    prefix: Vec<S>,
}

impl<S: Scalar> ExtendedPenalty<S> {
    pub fn new(base: PenaltyFunction<S>) -> Self {
        let values: Vec<S> = (0..PREFIX_TABLE_LEN as u64).map(|x| base.eval(x)).collect();
        let mut prefix = Vec::with_capacity(PREFIX_TABLE_LEN);
        let mut acc = S::zero();
        for &v in &values {
            acc = acc + v;
            prefix.push(acc);
        }
        Self {
            base,
            values,
            prefix,
        }
    }

    pub fn base(&self) -> &PenaltyFunction<S> {
        &self.base
    }

    /// `f(n)` at an integer age.
    #[inline]
    pub fn at(&self, n: u64) -> S {
        match self.values.get(n as usize) {
            Some(&v) => v,
            None => self.base.eval(n),
        }
    }

    /// `f̃(x)`: linear between consecutive integers, `f(0)` for `x ≤ 0`.
    pub fn value(&self, x: S) -> S {
        if !(x > S::zero()) {
            return self.values[0];
        }
        if !x.is_finite() {
            return self.base.eval_real(x);
        }
        let floor = x.floor();
        let n = floor.to_u64().unwrap_or(u64::MAX);
        let t = x - floor;
        let lo = self.at(n);
        if t == S::zero() {
            return lo;
        }
        lo + t * (self.at(n + 1) - lo)
    }

    /// `F(h) = Σ_{x=0}^{h} f(x)`, with `F(h) = 0` for `h < 0`.
    pub fn cumulative(&self, h: i64) -> S {
        if h < 0 {
            return S::zero();
        }
        match self.prefix.get(h as usize) {
            Some(&v) => v,
            None => {
                let n = h as u64;
                self.trapezoid(n) + (self.values[0] + self.at(n)).half()
            }
        }
    }

    /// `F̃(n)` at an integer abscissa.
    fn trapezoid(&self, n: u64) -> S {
        if let Some(&cum) = self.prefix.get(n as usize) {
            return cum - (self.values[0] + self.values[n as usize]).half();
        }
        let last = (PREFIX_TABLE_LEN - 1) as u64;
        let at_last = self.prefix[last as usize] - (self.values[0] + self.values[last as usize]).half();
        let (t0, t1) = (S::from_count(last), S::from_count(n));
        let integral = self.base.antiderivative(t1) - self.base.antiderivative(t0);
        let correction = (self.base.derivative(t1) - self.base.derivative(t0)) / S::lit(12.0);
        at_last + integral + correction
    }

    /// `F̃(h) = ∫_0^h f̃(x) dx`. For `h < 0` the integrand is the constant `f(0)`.
    pub fn integral(&self, h: S) -> S {
        if !(h > S::zero()) {
            return h * self.values[0];
        }
        if !h.is_finite() {
            return h;
        }
        let floor = h.floor();
        let n = floor.to_u64().unwrap_or(u64::MAX);
        let t = h - floor;
        let whole = self.trapezoid(n);
        if t == S::zero() {
            return whole;
        }
        let lo = self.at(n);
        let mid = lo + t * (self.at(n + 1) - lo);
        whole + t * (lo + mid).half()
    }

    /// `E[F(D − 1)]` for an integer delay law given as a PMF.
    pub fn expected_cumulative(&self, pmf: &Pmf<S>) -> DelayExpectation<S> {
        let value = pmf
            .iter()
            .map(|&(d, p)| p * self.cumulative(d as i64 - 1))
            .sum();
        DelayExpectation {
            value,
            truncated_mass: pmf.truncated_mass(),
        }
    }

    /// Local-computing priority `W_l(x) = x·f̃(x+D̄_l−1) − (F̃(x+D̄_l−1) − E[F(D_l−1)])`.
    pub fn w_local(&self, mean_local: S, ef_local: S, x: S) -> S {
        self.w(mean_local - S::one(), ef_local, x)
    }

    /// Offload priority `W_t(x)`, the same shape with offset `D̄_t + D̄_e − 1`.
    pub fn w_offload(&self, mean_tx: S, mean_edge: S, ef_offload: S, x: S) -> S {
        self.w(mean_tx + mean_edge - S::one(), ef_offload, x)
    }

    #[inline]
    fn w(&self, offset: S, ef: S, x: S) -> S {
        let shifted = x + offset;
        x * self.value(shifted) - (self.integral(shifted) - ef)
    }
}

/// Per-device bundle of the quantities the scheduler and the lower bound keep
/// re-evaluating: the extended penalty, mean stage delays and the two
/// `E[F(D − 1)]` terms.
#[derive(Debug, Clone)]
pub struct PriorityModel<S> {
    pub penalty: ExtendedPenalty<S>,
    pub mean_local: S,
    pub mean_tx: S,
    pub mean_edge: S,
    pub ef_local: DelayExpectation<S>,
    pub ef_offload: DelayExpectation<S>,
}

impl<S: Scalar> PriorityModel<S> {
    /// `W_l(x)`.
    #[inline]
    pub fn w_local(&self, x: S) -> S {
        self.penalty.w_local(self.mean_local, self.ef_local.value, x)
    }

    /// `W_t(x)`.
    #[inline]
    pub fn w_offload(&self, x: S) -> S {
        self.penalty
            .w_offload(self.mean_tx, self.mean_edge, self.ef_offload.value, x)
    }

    /// Offset `D̄_l − 1` of the local priority.
    pub fn local_offset(&self) -> S {
        self.mean_local - S::one()
    }

    /// Offset `D̄_t + D̄_e − 1` of the offload priority.
    pub fn offload_offset(&self) -> S {
        self.mean_tx + self.mean_edge - S::one()
    }
}
