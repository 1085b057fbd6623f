use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// A member of a sieve class: basis plus coefficient vector.
///
/// Because every [`BasisSpec`] is orthonormal under its reference measure, the
/// L² norm of the function is the Euclidean norm of `coeffs`.
#[derive(Clone, Debug, PartialEq)]
pub struct FunctionHandle<T: Real> {
    basis: BasisSpec,
    coeffs: DVector<T>,
}

impl<T: Real> FunctionHandle<T> {
    pub fn new(basis: BasisSpec, coeffs: DVector<T>) -> Result<Self> {
        basis.validate()?;
        if coeffs.len() != basis.dimension() {
            return Err(Error::Dimension(format!(
                "{} coefficients for basis {} of dimension {}",
                coeffs.len(),
                basis,
                basis.dimension()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite_value()) {
            return Err(Error::InvalidParameter(format!("coefficient {i} is not finite")));
        }
        Ok(Self { basis, coeffs })
    }

    pub fn from_slice(basis: BasisSpec, coeffs: &[T]) -> Result<Self> {
        Self::new(basis, DVector::from_column_slice(coeffs))
    }

    pub fn zeros(basis: BasisSpec) -> Self {
        let d = basis.dimension();
        Self { basis, coeffs: DVector::zeros(d) }
    }

    pub fn basis(&self) -> &BasisSpec {
        &self.basis
    }

    pub fn coeffs(&self) -> &DVector<T> {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> DVector<T> {
        self.coeffs
    }

    pub fn dimension(&self) -> usize {
        self.coeffs.len()
    }

    /// `Σⱼ cⱼ bⱼ(x)` at a single point.
    pub fn evaluate_at(&self, point: &[T]) -> Result<T> {
        Ok(self.basis.evaluate(point)?.dot(&self.coeffs))
    }

    /// Values at each row of `points`.
    pub fn evaluate(&self, points: &DMatrix<T>) -> Result<DVector<T>> {
        Ok(self.basis.design_matrix(points)? * &self.coeffs)
    }

    pub fn norm(&self) -> T {
        self.coeffs.norm()
    }

    pub fn ensure_basis(&self, expected: &BasisSpec) -> Result<()> {
        if &self.basis != expected {
            return Err(Error::BasisMismatch { expected: expected.to_string(), found: self.basis.to_string() });
        }
        Ok(())
    }

    pub fn inner(&self, other: &Self) -> Result<T> {
        other.ensure_basis(&self.basis)?;
        Ok(self.coeffs.dot(&other.coeffs))
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        other.ensure_basis(&self.basis)?;
        Ok(Self { basis: self.basis.clone(), coeffs: &self.coeffs - &other.coeffs })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        other.ensure_basis(&self.basis)?;
        Ok(Self { basis: self.basis.clone(), coeffs: &self.coeffs + &other.coeffs })
    }

    pub fn scale(&self, k: T) -> Self {
        Self { basis: self.basis.clone(), coeffs: &self.coeffs * k }
    }

    /// Coefficient difference against a function from a nested basis of the same
    /// family, padding the shorter vector with zeros.
    pub fn padded_difference(&self, other: &Self) -> Result<DVector<T>> {
        if !(self.basis.is_prefix_of(&other.basis) || other.basis.is_prefix_of(&self.basis)) {
            return Err(Error::BasisMismatch { expected: self.basis.to_string(), found: other.basis.to_string() });
        }
        let d = self.dimension().max(other.dimension());
        Ok(DVector::from_fn(d, |i, _| {
            let a = if i < self.dimension() { self.coeffs[i] } else { T::zero() };
            let b = if i < other.dimension() { other.coeffs[i] } else { T::zero() };
            a - b
        }))
    }

    /// Re-expresses the function on a larger basis of the same family.
    pub fn embed(&self, target: &BasisSpec) -> Result<Self> {
        if !self.basis.is_prefix_of(target) {
            return Err(Error::BasisMismatch { expected: target.to_string(), found: self.basis.to_string() });
        }
        let mut c = DVector::zeros(target.dimension());
        c.rows_mut(0, self.dimension()).copy_from(&self.coeffs);
        Ok(Self { basis: target.clone(), coeffs: c })
    }

    pub fn to_record(&self) -> FunctionRecord {
        FunctionRecord { basis: self.basis.clone(), coeffs: self.coeffs.iter().map(|c| c.as_f64()).collect() }
    }

    pub fn from_record(rec: &FunctionRecord) -> Result<Self> {
        Self::new(rec.basis.clone(), DVector::from_iterator(rec.coeffs.len(), rec.coeffs.iter().map(|&c| T::lit(c))))
    }
}

/// Serialized form of a [`FunctionHandle`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FunctionRecord {
    pub basis: BasisSpec,
    pub coeffs: Vec<f64>,
}

impl<T: Real> Serialize for FunctionHandle<T> {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_record().serialize(s)
    }
}

impl<'de, T: Real> Deserialize<'de> for FunctionHandle<T> {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rec = FunctionRecord::deserialize(d)?;
        Self::from_record(&rec).map_err(serde::de::Error::custom)
    }
}
