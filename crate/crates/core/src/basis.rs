//! Sieve bases.
//!
//! Each [`BasisSpec`] is orthonormal under its own reference measure:
//! Uniform[0,1] for the cosine and shifted-Legendre families, the declared
//! category weights for indicators, and the product measure for tensors.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

const CATEGORY_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum BasisSpec {
    /// `1, √2 cos(πx), √2 cos(2πx), …` on `[0, 1]`.
    Cosine { dimension: usize },
    /// Orthonormal shifted Legendre polynomials `√(2j+1) P_j(2x − 1)` on `[0, 1]`.
    Legendre { dimension: usize },
    /// Scaled indicators `1{x = c} / √w_c` of the categories `0..k`.
    Indicator { weights: Vec<f64> },
    /// Products `a(x₁)·b(x₂)`, element `(i, j)` stored at `i * dim(b) + j`.
    Tensor { left: Box<BasisSpec>, right: Box<BasisSpec> },
}

impl BasisSpec {
    pub fn cosine(dimension: usize) -> Self {
        BasisSpec::Cosine { dimension }
    }

    pub fn legendre(dimension: usize) -> Self {
        BasisSpec::Legendre { dimension }
    }

    /// Indicator basis with uniform category weights `1/k`.
    pub fn indicator(categories: usize) -> Self {
        BasisSpec::Indicator { weights: vec![1.0 / categories as f64; categories] }
    }

    pub fn indicator_weighted(weights: Vec<f64>) -> Result<Self> {
        let b = BasisSpec::Indicator { weights };
        b.validate()?;
        Ok(b)
    }

    pub fn tensor(left: BasisSpec, right: BasisSpec) -> Self {
        BasisSpec::Tensor { left: Box::new(left), right: Box::new(right) }
    }

    pub fn dimension(&self) -> usize {
        match self {
            BasisSpec::Cosine { dimension } | BasisSpec::Legendre { dimension } => *dimension,
            BasisSpec::Indicator { weights } => weights.len(),
            BasisSpec::Tensor { left, right } => left.dimension() * right.dimension(),
        }
    }

    /// Number of coordinates in a point of the domain.
    pub fn arity(&self) -> usize {
        match self {
            BasisSpec::Tensor { left, right } => left.arity() + right.arity(),
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BasisSpec::Cosine { dimension } | BasisSpec::Legendre { dimension } => {
                if *dimension == 0 {
                    return Err(Error::InvalidParameter("basis dimension must be ≥ 1".into()));
                }
            }
            BasisSpec::Indicator { weights } => {
                if weights.is_empty() {
                    return Err(Error::InvalidParameter("indicator basis needs ≥ 1 category".into()));
                }
                if weights.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                    return Err(Error::InvalidParameter("category weights must be positive".into()));
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidParameter(format!(
                        "category weights sum to {total}, expected 1"
                    )));
                }
            }
            BasisSpec::Tensor { left, right } => {
                left.validate()?;
                right.validate()?;
            }
        }
        Ok(())
    }

    /// Writes the basis functions at `point` into `out` (length `dimension()`).
    pub fn eval_into<T: Real>(&self, point: &[T], out: &mut [T]) -> Result<()> {
        if point.len() != self.arity() {
            return Err(Error::Dimension(format!(
                "point has {} coordinates, basis {} expects {}",
                point.len(),
                self,
                self.arity()
            )));
        }
        match self {
            BasisSpec::Cosine { dimension } => {
                let x = unit_interval(point[0], self)?;
                let root2 = T::lit(std::f64::consts::SQRT_2);
                out[0] = T::one();
                for (j, o) in out.iter_mut().enumerate().take(*dimension).skip(1) {
                    *o = root2 * (T::from_usize_lossy(j) * T::pi() * x).cos();
                }
            }
            BasisSpec::Legendre { dimension } => {
                let u = T::lit(2.0) * unit_interval(point[0], self)? - T::one();
                // P_{k+1} = ((2k+1) u P_k − k P_{k−1}) / (k+1)
                let (mut prev, mut cur) = (T::zero(), T::one());
                for (k, o) in out.iter_mut().enumerate().take(*dimension) {
                    let kf = T::from_usize_lossy(k);
                    *o = (T::lit(2.0) * kf + T::one()).sqrt() * cur;
                    let next = ((T::lit(2.0) * kf + T::one()) * u * cur - kf * prev) / (kf + T::one());
                    prev = cur;
                    cur = next;
                }
            }
            BasisSpec::Indicator { weights } => {
                let c = category(point[0], weights.len(), self)?;
                out.iter_mut().for_each(|o| *o = T::zero());
                out[c] = T::lit(1.0 / weights[c].sqrt());
            }
            BasisSpec::Tensor { left, right } => {
                let (la, rb) = (left.arity(), right.dimension());
                let mut lv = vec![T::zero(); left.dimension()];
                let mut rv = vec![T::zero(); rb];
                left.eval_into(&point[..la], &mut lv)?;
                right.eval_into(&point[la..], &mut rv)?;
                for (i, a) in lv.iter().enumerate() {
                    for (j, b) in rv.iter().enumerate() {
                        out[i * rb + j] = *a * *b;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn evaluate<T: Real>(&self, point: &[T]) -> Result<DVector<T>> {
        let mut out = DVector::zeros(self.dimension());
        self.eval_into(point, out.as_mut_slice())?;
        Ok(out)
    }

    /// `n × J` design matrix; row `i` is the basis evaluated at row `i` of `points`.
    pub fn design_matrix<T: Real>(&self, points: &DMatrix<T>) -> Result<DMatrix<T>> {
        let (n, j) = (points.nrows(), self.dimension());
        let mut phi = DMatrix::zeros(n, j);
        let mut buf = vec![T::zero(); j];
        let mut pt = vec![T::zero(); points.ncols()];
        for i in 0..n {
            for (c, p) in pt.iter_mut().enumerate() {
                *p = points[(i, c)];
            }
            self.eval_into(&pt, &mut buf)?;
            for (c, v) in buf.iter().enumerate() {
                phi[(i, c)] = *v;
            }
        }
        Ok(phi)
    }

    /// Empirical Gram matrix `ΦᵀΦ / n`.
    pub fn gram<T: Real>(&self, points: &DMatrix<T>) -> Result<DMatrix<T>> {
        if points.nrows() == 0 {
            return Err(Error::InvalidParameter("gram needs at least one point".into()));
        }
        let phi = self.design_matrix(points)?;
        Ok(phi.tr_mul(&phi) / T::from_usize_lossy(points.nrows()))
    }

    /// Whether `self` is a nested truncation of `other` (same family, smaller or equal size).
    pub fn is_prefix_of(&self, other: &BasisSpec) -> bool {
        match (self, other) {
            (BasisSpec::Cosine { dimension: a }, BasisSpec::Cosine { dimension: b })
            | (BasisSpec::Legendre { dimension: a }, BasisSpec::Legendre { dimension: b }) => a <= b,
            _ => self == other,
        }
    }
}

fn unit_interval<T: Real>(x: T, basis: &BasisSpec) -> Result<T> {
    if x.is_finite_value() && x >= T::zero() && x <= T::one() {
        Ok(x)
    } else {
        Err(Error::Domain { value: x.as_f64(), basis: basis.to_string() })
    }
}

fn category<T: Real>(x: T, k: usize, basis: &BasisSpec) -> Result<usize> {
    let v = x.as_f64();
    let r = v.round();
    if v.is_finite() && (v - r).abs() <= CATEGORY_TOL && r >= 0.0 && (r as usize) < k {
        Ok(r as usize)
    } else {
        Err(Error::Domain { value: v, basis: basis.to_string() })
    }
}

impl fmt::Display for BasisSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BasisSpec::Cosine { dimension } => write!(f, "cosine:{dimension}"),
            BasisSpec::Legendre { dimension } => write!(f, "legendre:{dimension}"),
            BasisSpec::Indicator { weights } => {
                let k = weights.len();
                if weights.iter().all(|w| (w - 1.0 / k as f64).abs() < 1e-15) {
                    write!(f, "indicator:{k}")
                } else {
                    let ws: Vec<String> = weights.iter().map(|w| w.to_string()).collect();
                    write!(f, "indicator:[{}]", ws.join(","))
                }
            }
            BasisSpec::Tensor { left, right } => write!(f, "{left}*{right}"),
        }
    }
}

/// Parses `cosine:J`, `legendre:J`, `indicator:k`, `indicator:[w1,…,wk]`, and
/// tensor products joined by `*` (left-associative).
impl FromStr for BasisSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(idx) = top_level_star(s) {
            let left: BasisSpec = s[..idx].parse()?;
            let right: BasisSpec = s[idx + 1..].parse()?;
            return Ok(BasisSpec::tensor(left, right));
        }
        let (family, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParameter(format!("basis `{s}`: expected family:size")))?;
        let parse_dim = |a: &str| {
            a.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParameter(format!("basis `{s}`: bad size `{a}`")))
        };
        let basis = match family.trim() {
            "cosine" => BasisSpec::cosine(parse_dim(arg)?),
            "legendre" => BasisSpec::legendre(parse_dim(arg)?),
            "indicator" => {
                let arg = arg.trim();
                if let Some(inner) = arg.strip_prefix('[').and_then(|a| a.strip_suffix(']')) {
                    let weights = inner
                        .split(',')
                        .map(|w| {
                            w.trim().parse::<f64>().map_err(|_| {
                                Error::InvalidParameter(format!("basis `{s}`: bad weight `{w}`"))
                            })
                        })
                        .collect::<Result<Vec<_>>>()?;
                    BasisSpec::Indicator { weights }
                } else {
                    BasisSpec::indicator(parse_dim(arg)?)
                }
            }
            other => {
                return Err(Error::InvalidParameter(format!("unknown basis family `{other}`")));
            }
        };
        basis.validate()?;
        Ok(basis)
    }
}

fn top_level_star(s: &str) -> Option<usize> {
    let mut depth = 0i32;
    let mut last = None;
    for (i, ch) in s.char_indices() {
        match ch {
            '[' => depth += 1,
            ']' => depth -= 1,
            '*' if depth == 0 => last = Some(i),
            _ => {}
        }
    }
    last
}
