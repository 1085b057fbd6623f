//! Root-n rate requirements for the functional estimator.
//!
//! All nuisance errors are tied to a common rate `ρ_n`: `‖T − T̂‖ ≍ ‖r̂ − r‖ ≍
//! ρ_n^{k}` with `k = min{4, β+1} / min{5, β+2}`, and the critical radius
//! `δ_n ≍ ρ_n`. Each displayed condition then reads `ρ_n^E = o(n^{−1/2})`; the
//! requirement is `ρ_n = o(n^{−e})` with `e = 1 / (2E)`. The `log n / n` term of
//! `Θ` is dropped.

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rational = Ratio<i64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    /// Oracle-λ debiased estimators: the `Δ`-based condition.
    Corollary2,
    /// Cross-validated debiased estimators under the α-error condition.
    Corollary3,
    /// Cross-validated plug-in estimators: `‖T − T̂‖` enters to the first power.
    NoDebias,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "corollary2" | "corollary-2" => Ok(Self::Corollary2),
            "corollary3" | "corollary-3" => Ok(Self::Corollary3),
            "no-debias" | "nodebias" => Ok(Self::NoDebias),
            other => Err(Error::InvalidParameter(format!("unknown regime {other:?}"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Corollary2 => "corollary2",
            Self::Corollary3 => "corollary3",
            Self::NoDebias => "no-debias",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RateRequirement {
    /// `e` in `ρ_n = o(n^{−e})`.
    pub exponent: Rational,
    /// `ρ_n`-exponents of the two products inside the `min`.
    pub branch_exponents: [Rational; 2],
    /// Required exponent of each branch on its own.
    pub branch_requirements: [Rational; 2],
    /// `e ≥ 1/2`: faster than the parametric rate, not attainable.
    pub infeasible: bool,
}

fn min(a: Rational, b: Rational) -> Rational {
    if a < b {
        a
    } else {
        b
    }
}

fn int(v: i64) -> Rational {
    Rational::from_integer(v)
}

struct Side {
    beta: Rational,
    /// Exponent of `‖T − T̂‖` and `‖r̂ − r‖`.
    k: Rational,
    /// Exponent of `Δ_n`.
    delta: Rational,
    m5: Rational,
}

impl Side {
    fn new(beta: Rational) -> Self {
        let m4 = min(int(4), beta + int(1));
        let m5 = min(int(5), beta + int(2));
        let k = m4 / m5;
        let delta = min(k * int(4), int(2));
        Self { beta, k, delta, m5 }
    }

    fn m4(&self) -> Rational {
        min(int(4), self.beta + int(1))
    }

    /// Exponent of `Θ_n`.
    fn theta(&self, debiased: bool) -> Rational {
        let op = if debiased { self.k * int(2) } else { self.k };
        min(op, self.delta * self.k)
    }
}

pub fn rate_requirement(
    beta_h: Rational,
    beta_q: Rational,
    alpha_h: Rational,
    alpha_q: Rational,
    regime: Regime,
) -> Result<RateRequirement> {
    for (name, v) in [("beta_h", beta_h), ("beta_q", beta_q), ("alpha_h", alpha_h), ("alpha_q", alpha_q)] {
        if v <= int(0) {
            return Err(Error::InvalidParameter(format!("{name} must be positive")));
        }
    }
    let (h, q) = (Side::new(beta_h), Side::new(beta_q));
    let branches = match regime {
        Regime::Corollary2 => {
            let source = |s: &Side| s.delta * min(int(3), s.beta) / (s.m5 * int(2));
            let projected = |s: &Side| s.delta * s.m4() / (s.m5 * int(2));
            [source(&q) + projected(&h), source(&h) + projected(&q)]
        }
        Regime::Corollary3 | Regime::NoDebias => {
            let debiased = regime == Regime::Corollary3;
            let (th, tq) = (h.theta(debiased), q.theta(debiased));
            let half = Rational::new(1, 2);
            [tq / (int(2) + alpha_q * int(2)) + th * half, th / (int(2) + alpha_h * int(2)) + tq * half]
        }
    };
    let requirement = |e: Rational| Rational::new(1, 2) / e;
    let best = if branches[0] > branches[1] { branches[0] } else { branches[1] };
    let exponent = requirement(best);
    Ok(RateRequirement {
        exponent,
        branch_exponents: branches,
        branch_requirements: [requirement(branches[0]), requirement(branches[1])],
        infeasible: exponent >= Rational::new(1, 2),
    })
}

/// Nearest fraction with denominator at most `max_den` (ties to the smaller
/// denominator).
pub fn snap_rational(x: f64, max_den: i64) -> Result<Rational> {
    if !x.is_finite() || max_den < 1 {
        return Err(Error::InvalidParameter(format!("cannot snap {x} to a fraction")));
    }
    let mut best = Rational::from_integer(x.round() as i64);
    let mut best_err = (x - x.round()).abs();
    for d in 2..=max_den {
        let num = (x * d as f64).round() as i64;
        let err = (x - num as f64 / d as f64).abs();
        if err < best_err - 1e-15 {
            best = Rational::new(num, d);
            best_err = err;
        }
    }
    Ok(best)
}

pub fn rational_to_f64(r: Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}
