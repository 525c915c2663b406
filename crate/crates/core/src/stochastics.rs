//! Integer-valued stage latency laws.

use rand::Rng;
use rand_distr::{Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Scalar;

/// Tail mass below which unbounded supports are cut.
pub const DEFAULT_TAIL_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelayError {
    #[error("delay parameter `{field}` invalid: {reason}")]
    InvalidParameter { field: &'static str, reason: String },
    #[error("{stage} delay must take at least one slot, but its support starts at {min}")]
    ZeroSlotStage { stage: &'static str, min: u32 },
}

/// Latency law of one stage, in slots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DelayRecord<S>", into = "DelayRecord<S>")]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub enum DelayDistribution<S> {
    Deterministic { d: u32 },
    /// Uniform on `{a, a+1, …, b}`.
    UniformInt { a: u32, b: u32 },
    /// `min + Poisson(lambda − min)`, so the mean is `lambda`.
    PoissonShifted { lambda: S, min: u32 },
    /// `P(D = min + k) = p(1−p)^k`.
    GeometricOn { p: S, min: u32 },
}

/// On-disk form of a delay law, e.g. `{kind = "uniform", a = 1, b = 15}`.
///
/// Poisson and geometric laws are written by their mean; the support starts at
/// `min` (default 1).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DelayRecord<S> {
    Det {
        d: u32,
    },
    Uniform {
        a: u32,
        b: u32,
    },
    Poisson {
        mean: S,
        #[serde(default = "one")]
        min: u32,
    },
    Geometric {
        mean: S,
        #[serde(default = "one")]
        min: u32,
    },
}

fn one() -> u32 {
    1
}

impl<S: Scalar> TryFrom<DelayRecord<S>> for DelayDistribution<S> {
    type Error = DelayError;

    fn try_from(rec: DelayRecord<S>) -> Result<Self, Self::Error> {
        let dist = match rec {
            DelayRecord::Det { d } => DelayDistribution::Deterministic { d },
            DelayRecord::Uniform { a, b } => DelayDistribution::UniformInt { a, b },
            DelayRecord::Poisson { mean, min } => DelayDistribution::PoissonShifted { lambda: mean, min },
            DelayRecord::Geometric { mean, min } => {
                let excess = mean - S::from_count(min as u64);
                if !(excess >= S::zero()) || !mean.is_finite() {
                    return Err(DelayError::InvalidParameter {
                        field: "mean",
                        reason: format!("geometric mean {mean} must be finite and >= min {min}"),
                    });
                }
                DelayDistribution::GeometricOn {
                    p: S::one() / (excess + S::one()),
                    min,
                }
            }
        };
        dist.validate()?;
        Ok(dist)
    }
}

impl<S: Scalar> From<DelayDistribution<S>> for DelayRecord<S> {
    fn from(d: DelayDistribution<S>) -> Self {
        match d {
            DelayDistribution::Deterministic { d } => DelayRecord::Det { d },
            DelayDistribution::UniformInt { a, b } => DelayRecord::Uniform { a, b },
            DelayDistribution::PoissonShifted { lambda, min } => DelayRecord::Poisson { mean: lambda, min },
            DelayDistribution::GeometricOn { p, min } => DelayRecord::Geometric {
                mean: S::from_count(min as u64) + (S::one() - p) / p,
                min,
            },
        }
    }
}

/// Truncated probability mass function sorted by value.
#[derive(Debug, Clone, PartialEq)]
pub struct Pmf<S> {
    support: Vec<(u32, S)>,
    truncated_mass: S,
}

impl<S: Scalar> Pmf<S> {
    pub fn point(d: u32) -> Self {
        Self {
            support: vec![(d, S::one())],
            truncated_mass: S::zero(),
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, (u32, S)> {
        self.support.iter()
    }

    pub fn as_slice(&self) -> &[(u32, S)] {
        &self.support
    }

    /// Mass dropped from the tail (zero for bounded laws).
    pub fn truncated_mass(&self) -> S {
        self.truncated_mass
    }

    pub fn total(&self) -> S {
        self.support.iter().map(|&(_, p)| p).sum()
    }

    pub fn mean(&self) -> S {
        self.support
            .iter()
            .map(|&(d, p)| S::from_count(d as u64) * p)
            .sum()
    }

    /// Law of the sum of two independent variables.
    pub fn convolve(&self, other: &Pmf<S>) -> Pmf<S> {
        let max = self.support.last().map_or(0, |x| x.0) + other.support.last().map_or(0, |x| x.0);
        let mut dense = vec![S::zero(); max as usize + 1];
        for &(x, px) in &self.support {
            for &(y, py) in &other.support {
                let slot = &mut dense[(x + y) as usize];
                *slot = *slot + px * py;
            }
        }
        let support = dense
            .into_iter()
            .enumerate()
            .filter(|(_, p)| *p > S::zero())
            .map(|(v, p)| (v as u32, p))
            .collect();
        let kept = S::one() - self.truncated_mass;
        let kept_other = S::one() - other.truncated_mass;
        Pmf {
            support,
            truncated_mass: (S::one() - kept * kept_other).max(S::zero()),
        }
    }
}

impl<S: Scalar> DelayDistribution<S> {
    pub fn validate(&self) -> Result<(), DelayError> {
        match *self {
            DelayDistribution::Deterministic { .. } => Ok(()),
            DelayDistribution::UniformInt { a, b } => {
                if b < a {
                    Err(DelayError::InvalidParameter {
                        field: "b",
                        reason: format!("upper bound {b} below lower bound {a}"),
                    })
                } else {
                    Ok(())
                }
            }
            DelayDistribution::PoissonShifted { lambda, min } => {
                let mu = lambda - S::from_count(min as u64);
                if !lambda.is_finite() || !(mu >= S::zero()) {
                    Err(DelayError::InvalidParameter {
                        field: "mean",
                        reason: format!("poisson mean {lambda} must be finite and >= min {min}"),
                    })
                } else {
                    Ok(())
                }
            }
            DelayDistribution::GeometricOn { p, .. } => {
                if p > S::zero() && p <= S::one() {
                    Ok(())
                } else {
                    Err(DelayError::InvalidParameter {
                        field: "p",
                        reason: format!("geometric success probability {p} outside (0, 1]"),
                    })
                }
            }
        }
    }

    /// Enforce the minimum-one-slot rule for local computing and transmission.
    pub fn validate_busy_stage(&self, stage: &'static str) -> Result<(), DelayError> {
        self.validate()?;
        let min = self.min_value();
        if min < 1 {
            return Err(DelayError::ZeroSlotStage { stage, min });
        }
        Ok(())
    }

    /// Smallest value in the support.
    pub fn min_value(&self) -> u32 {
        match *self {
            DelayDistribution::Deterministic { d } => d,
            DelayDistribution::UniformInt { a, .. } => a,
            DelayDistribution::PoissonShifted { min, .. } | DelayDistribution::GeometricOn { min, .. } => min,
        }
    }

    pub fn mean(&self) -> S {
        match *self {
            DelayDistribution::Deterministic { d } => S::from_count(d as u64),
            DelayDistribution::UniformInt { a, b } => S::from_count(a as u64 + b as u64).half(),
            DelayDistribution::PoissonShifted { lambda, .. } => lambda,
            DelayDistribution::GeometricOn { p, min } => S::from_count(min as u64) + (S::one() - p) / p,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u32 {
        match *self {
            DelayDistribution::Deterministic { d } => d,
            DelayDistribution::UniformInt { a, b } => rng.random_range(a..=b),
            DelayDistribution::PoissonShifted { lambda, min } => {
                let mu = (lambda - S::from_count(min as u64)).as_f64();
                if mu <= 0.0 {
                    return min;
                }
                let k: f64 = Poisson::new(mu).expect("validated poisson rate").sample(rng);
                min + k as u32
            }
            DelayDistribution::GeometricOn { p, min } => {
                let k = Geometric::new(p.as_f64()).expect("validated geometric p").sample(rng);
                min + k as u32
            }
        }
    }

    /// Support with probabilities, cut once the remaining tail mass is below `eps`.
    pub fn pmf(&self, eps: f64) -> Pmf<S> {
        debug_assert!(eps > 0.0 && eps <= 1e-6, "tail eps {eps} outside (0, 1e-6]");
        match *self {
            DelayDistribution::Deterministic { d } => Pmf::point(d),
            DelayDistribution::UniformInt { a, b } => {
                let p = S::one() / S::from_count((b - a + 1) as u64);
                Pmf {
                    support: (a..=b).map(|v| (v, p)).collect(),
                    truncated_mass: S::zero(),
                }
            }
            DelayDistribution::PoissonShifted { lambda, min } => {
                let mu = (lambda - S::from_count(min as u64)).as_f64();
                if mu <= 0.0 {
                    return Pmf::point(min);
                }
                let ln_mu = mu.ln();
                let mut ln_fact = 0.0;
                let mut cum = 0.0;
                let mut support = Vec::new();
                let mut k = 0u32;
                while cum < 1.0 - eps {
                    if k > 0 {
                        ln_fact += (k as f64).ln();
                    }
                    let p = (-mu + k as f64 * ln_mu - ln_fact).exp();
                    cum += p;
                    support.push((min + k, S::lit(p)));
                    k += 1;
                }
                Pmf {
                    support,
                    truncated_mass: S::lit((1.0 - cum).max(0.0)),
                }
            }
            DelayDistribution::GeometricOn { p, min } => {
                let p = p.as_f64();
                let q = 1.0 - p;
                let mut support = Vec::new();
                let mut tail = 1.0;
                let mut k = 0u32;
                while tail >= eps {
                    support.push((min + k, S::lit(p * q.powi(k as i32))));
                    tail = q.powi(k as i32 + 1);
                    k += 1;
                }
                Pmf {
                    support,
                    truncated_mass: S::lit(tail),
                }
            }
        }
    }

    /// Replacement in another family with the same mean and the same
    /// smallest support value (used by distribution sweeps). A uniform law
    /// is kept as is by [`DelayFamily::Uniform`].
    pub fn with_family(&self, family: DelayFamily) -> Self {
        let mean = self.mean();
        let min = self.min_value();
        let span = mean - S::from_count(min as u64);
        match (family, *self) {
            (DelayFamily::Keep, _) | (DelayFamily::Uniform, DelayDistribution::UniformInt { .. }) => *self,
            (DelayFamily::Uniform, _) => {
                // {min..min+2·span} has the right mean when 2·span is an integer.
                let width = (S::lit(2.0) * span).round().to_u32().unwrap_or(0);
                DelayDistribution::UniformInt { a: min, b: min + width }
            }
            (DelayFamily::Poisson, _) => DelayDistribution::PoissonShifted { lambda: mean, min },
            (DelayFamily::Geometric, _) => DelayDistribution::GeometricOn {
                p: S::one() / (span + S::one()),
                min,
            },
        }
    }
}

/// Distribution family used when sweeping delay laws at a fixed mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DelayFamily {
    Keep,
    Uniform,
    Poisson,
    Geometric,
}

impl std::fmt::Display for DelayFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DelayFamily::Keep => "keep",
            DelayFamily::Uniform => "uniform",
            DelayFamily::Poisson => "poisson",
            DelayFamily::Geometric => "geometric",
        })
    }
}

impl std::str::FromStr for DelayFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "keep" => Ok(DelayFamily::Keep),
            "uniform" => Ok(DelayFamily::Uniform),
            "poisson" => Ok(DelayFamily::Poisson),
            "geometric" => Ok(DelayFamily::Geometric),
            other => Err(format!("unknown delay family `{other}` (keep|uniform|poisson|geometric)")),
        }
    }
}

/// PMF of `D1 + D2` for independent laws, truncated so that the missing mass is below `eps`.
pub fn convolve<S: Scalar>(d1: &DelayDistribution<S>, d2: &DelayDistribution<S>, eps: f64) -> Pmf<S> {
    d1.pmf(eps / 2.0).convolve(&d2.pmf(eps / 2.0))
}
