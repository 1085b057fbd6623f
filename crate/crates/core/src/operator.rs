//! Compact operators between sieve spaces.
//!
//! Two representations are provided: [`SingularSystem`], the diagonal form
//! `T φᵢ = sᵢ ψᵢ` with `φᵢ`, `ψᵢ` the elements of the input and output bases,
//! and [`SieveOperator`], a general `K × J` coefficient matrix.
//!
//! `SingularSystem` stores *singular values* `sᵢ`; the eigenvalues of `T*T`
//! are `sᵢ²`. Every routine below converts explicitly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::function::FunctionHandle;
use crate::linalg;
use crate::scalar::Real;

/// Linear map between two sieve spaces.
pub trait LinearOperator<T: Real> {
    fn input_basis(&self) -> &BasisSpec;
    fn output_basis(&self) -> &BasisSpec;

    /// `T h`, expressed in the output basis.
    fn apply(&self, h: &FunctionHandle<T>) -> Result<FunctionHandle<T>>;

    /// `T* g`, expressed in the input basis.
    fn adjoint_apply(&self, g: &FunctionHandle<T>) -> Result<FunctionHandle<T>>;
}

#[derive(Clone, Debug, PartialEq)]
pub struct SingularSystem<T: Real> {
    sigmas: DVector<T>,
    input_basis: BasisSpec,
    output_basis: BasisSpec,
}

impl<T: Real> SingularSystem<T> {
    pub fn new(sigmas: Vec<T>, input_basis: BasisSpec, output_basis: BasisSpec) -> Result<Self> {
        if sigmas.is_empty() {
            return Err(Error::InvalidParameter("singular system needs at least one value".into()));
        }
        if let Some(i) = sigmas.iter().position(|s| !(s.is_finite_value() && *s > T::zero())) {
            return Err(Error::InvalidParameter(format!("singular value {i} must be positive and finite")));
        }
        if let Some(i) = sigmas.windows(2).position(|w| w[1] > w[0]) {
            return Err(Error::InvalidParameter(format!("singular values increase at index {}", i + 1)));
        }
        input_basis.validate()?;
        output_basis.validate()?;
        let m = sigmas.len();
        if m > input_basis.dimension() || m > output_basis.dimension() {
            return Err(Error::Dimension(format!(
                "rank {m} exceeds basis dimensions ({}, {})",
                input_basis.dimension(),
                output_basis.dimension()
            )));
        }
        Ok(Self { sigmas: DVector::from_vec(sigmas), input_basis, output_basis })
    }

    /// Singular system on cosine bases whose dimension equals the rank.
    pub fn on_cosine(sigmas: Vec<T>) -> Result<Self> {
        let m = sigmas.len();
        Self::new(sigmas, BasisSpec::cosine(m), BasisSpec::cosine(m))
    }

    pub fn sigmas(&self) -> &DVector<T> {
        &self.sigmas
    }

    pub fn rank(&self) -> usize {
        self.sigmas.len()
    }

    /// `K × J` matrix with the singular values on the diagonal.
    pub fn to_sieve_operator(&self) -> SieveOperator<T> {
        let (k, j) = (self.output_basis.dimension(), self.input_basis.dimension());
        let mut a = DMatrix::zeros(k, j);
        for (i, s) in self.sigmas.iter().enumerate() {
            a[(i, i)] = *s;
        }
        SieveOperator { matrix: a, input_basis: self.input_basis.clone(), output_basis: self.output_basis.clone() }
    }

    /// Truncated Picard inversion: coefficient `i` is `⟨r, ψᵢ⟩ / sᵢ` for `i < k`.
    pub fn picard_solve(&self, r: &FunctionHandle<T>, k: usize) -> Result<FunctionHandle<T>> {
        r.ensure_basis(&self.output_basis)?;
        if k > self.rank() {
            return Err(Error::TruncationExceedsRank { k, m: self.rank() });
        }
        let mut c = DVector::zeros(self.input_basis.dimension());
        for i in 0..k {
            c[i] = r.coeffs()[i] / self.sigmas[i];
        }
        FunctionHandle::new(self.input_basis.clone(), c)
    }

    /// `‖w‖` for the `w` with `h = (T*T)^{β/2} w`, i.e. `sqrt(Σ ⟨h,φᵢ⟩² / sᵢ^{2β})`.
    pub fn source_condition_norm(&self, h: &FunctionHandle<T>, beta: T) -> Result<T> {
        h.ensure_basis(&self.input_basis)?;
        if beta < T::zero() || !beta.is_finite_value() {
            return Err(Error::InvalidParameter("β must be nonnegative".into()));
        }
        if beta == T::zero() {
            return Ok(h.norm());
        }
        let mut total = T::zero();
        for (i, c) in h.coeffs().iter().enumerate() {
            if *c == T::zero() {
                continue;
            }
            if i >= self.rank() {
                return Err(Error::SourceConditionViolated { component: i });
            }
            let weight = self.sigmas[i].powf(T::lit(2.0) * beta);
            let term = *c * *c / weight;
            if weight == T::zero() || !term.is_finite_value() {
                return Err(Error::SourceConditionViolated { component: i });
            }
            total += term;
        }
        if !total.is_finite_value() {
            return Err(Error::SourceConditionViolated { component: self.rank() });
        }
        Ok(total.sqrt())
    }

    /// `h = (T*T)^{β/2} w`: coefficients `sᵢ^β wᵢ`, zero beyond the rank.
    pub fn make_source_solution(&self, beta: T, w: &FunctionHandle<T>) -> Result<FunctionHandle<T>> {
        w.ensure_basis(&self.input_basis)?;
        let c = DVector::from_fn(self.input_basis.dimension(), |i, _| {
            if i < self.rank() {
                self.sigmas[i].powf(beta) * w.coeffs()[i]
            } else if beta == T::zero() {
                w.coeffs()[i]
            } else {
                T::zero()
            }
        });
        FunctionHandle::new(self.input_basis.clone(), c)
    }

    /// Population iterated-Tikhonov iterate `h*_{λ,t}` started from zero with
    /// `r₀ = T h₀`, via the filter factor `1 − (λ / (sᵢ² + λ))ᵗ`.
    pub fn population_tikhonov_iterate(&self, h0: &FunctionHandle<T>, lambda: T, t: usize) -> Result<FunctionHandle<T>> {
        h0.ensure_basis(&self.input_basis)?;
        if !(lambda > T::zero()) || t == 0 {
            return Err(Error::InvalidParameter("need λ > 0 and t ≥ 1".into()));
        }
        let c = DVector::from_fn(self.input_basis.dimension(), |i, _| {
            if i < self.rank() {
                filter_factor(self.sigmas[i], lambda, t) * h0.coeffs()[i]
            } else {
                T::zero()
            }
        });
        FunctionHandle::new(self.input_basis.clone(), c)
    }
}

/// Iterated-Tikhonov filter factor `1 − (λ/(s² + λ))ᵗ`.
pub fn filter_factor<T: Real>(s: T, lambda: T, t: usize) -> T {
    let q = lambda / (s * s + lambda);
    T::one() - q.powi(t as i32)
}

impl<T: Real> LinearOperator<T> for SingularSystem<T> {
    fn input_basis(&self) -> &BasisSpec {
        &self.input_basis
    }

    fn output_basis(&self) -> &BasisSpec {
        &self.output_basis
    }

    fn apply(&self, h: &FunctionHandle<T>) -> Result<FunctionHandle<T>> {
        h.ensure_basis(&self.input_basis)?;
        let c = DVector::from_fn(self.output_basis.dimension(), |i, _| {
            if i < self.rank() {
                self.sigmas[i] * h.coeffs()[i]
            } else {
                T::zero()
            }
        });
        FunctionHandle::new(self.output_basis.clone(), c)
    }

    fn adjoint_apply(&self, g: &FunctionHandle<T>) -> Result<FunctionHandle<T>> {
        g.ensure_basis(&self.output_basis)?;
        let c = DVector::from_fn(self.input_basis.dimension(), |i, _| {
            if i < self.rank() {
                self.sigmas[i] * g.coeffs()[i]
            } else {
                T::zero()
            }
        });
        FunctionHandle::new(self.input_basis.clone(), c)
    }
}

/// `(T h)(v_q) = ψ(v_q)ᵀ A c` for `h` with coefficients `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct SieveOperator<T: Real> {
    matrix: DMatrix<T>,
    input_basis: BasisSpec,
    output_basis: BasisSpec,
}

impl<T: Real> SieveOperator<T> {
    pub fn new(matrix: DMatrix<T>, input_basis: BasisSpec, output_basis: BasisSpec) -> Result<Self> {
        input_basis.validate()?;
        output_basis.validate()?;
        if matrix.nrows() != output_basis.dimension() || matrix.ncols() != input_basis.dimension() {
            return Err(Error::Dimension(format!(
                "matrix is {}×{}, bases need {}×{}",
                matrix.nrows(),
                matrix.ncols(),
                output_basis.dimension(),
                input_basis.dimension()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::InvalidParameter("operator matrix has non-finite entries".into()));
        }
        Ok(Self { matrix, input_basis, output_basis })
    }

    pub fn identity(basis: BasisSpec) -> Self {
        let d = basis.dimension();
        Self { matrix: DMatrix::identity(d, d), input_basis: basis.clone(), output_basis: basis }
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.matrix
    }

    pub fn with_matrix(&self, matrix: DMatrix<T>) -> Result<Self> {
        Self::new(matrix, self.input_basis.clone(), self.output_basis.clone())
    }

    fn ensure_same_bases(&self, other: &Self) -> Result<()> {
        if self.input_basis != other.input_basis || self.output_basis != other.output_basis {
            return Err(Error::BasisMismatch {
                expected: format!("{} -> {}", self.input_basis, self.output_basis),
                found: format!("{} -> {}", other.input_basis, other.output_basis),
            });
        }
        Ok(())
    }

    /// Largest singular value of `G_out^{1/2} (A − B) G_in^{−1/2}`: the operator
    /// norm of the difference when the bases have Gram matrices `G_in`, `G_out`.
    pub fn norm_diff(&self, other: &Self, input_gram: &DMatrix<T>, output_gram: &DMatrix<T>) -> Result<T> {
        self.ensure_same_bases(other)?;
        let j = self.input_basis.dimension();
        let k = self.output_basis.dimension();
        if input_gram.shape() != (j, j) || output_gram.shape() != (k, k) {
            return Err(Error::Dimension("Gram matrices do not match the bases".into()));
        }
        let rel_tol = T::eps().sqrt();
        let in_inv_sqrt = linalg::sym_inv_sqrt(input_gram, rel_tol)?;
        let out_sqrt = linalg::sym_sqrt(output_gram);
        let m = out_sqrt * (&self.matrix - &other.matrix) * in_inv_sqrt;
        Ok(linalg::spectral_norm(&m))
    }

    /// Operator-norm difference under orthonormal (identity-Gram) coordinates.
    pub fn spectral_distance(&self, other: &Self) -> Result<T> {
        self.ensure_same_bases(other)?;
        Ok(linalg::spectral_norm(&(&self.matrix - &other.matrix)))
    }

    pub fn to_record(&self) -> OperatorRecord {
        OperatorRecord {
            input_basis: self.input_basis.clone(),
            output_basis: self.output_basis.clone(),
            rows: self.matrix.nrows(),
            cols: self.matrix.ncols(),
            data: row_major(&self.matrix),
        }
    }

    pub fn from_record(rec: &OperatorRecord) -> Result<Self> {
        if rec.data.len() != rec.rows * rec.cols {
            return Err(Error::Dimension("operator record data length".into()));
        }
        let data: Vec<T> = rec.data.iter().map(|&v| T::lit(v)).collect();
        Self::new(DMatrix::from_row_slice(rec.rows, rec.cols, &data), rec.input_basis.clone(), rec.output_basis.clone())
    }
}

pub(crate) fn row_major<T: Real>(m: &DMatrix<T>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)].as_f64());
        }
    }
    out
}

/// Free-function form of [`SieveOperator::norm_diff`].
pub fn operator_norm_diff<T: Real>(
    a: &SieveOperator<T>,
    b: &SieveOperator<T>,
    input_gram: &DMatrix<T>,
    output_gram: &DMatrix<T>,
) -> Result<T> {
    a.norm_diff(b, input_gram, output_gram)
}

impl<T: Real> LinearOperator<T> for SieveOperator<T> {
    fn input_basis(&self) -> &BasisSpec {
        &self.input_basis
    }

    fn output_basis(&self) -> &BasisSpec {
        &self.output_basis
    }

    fn apply(&self, h: &FunctionHandle<T>) -> Result<FunctionHandle<T>> {
        h.ensure_basis(&self.input_basis)?;
        FunctionHandle::new(self.output_basis.clone(), &self.matrix * h.coeffs())
    }

    fn adjoint_apply(&self, g: &FunctionHandle<T>) -> Result<FunctionHandle<T>> {
        g.ensure_basis(&self.output_basis)?;
        FunctionHandle::new(self.input_basis.clone(), self.matrix.tr_mul(g.coeffs()))
    }
}

/// Serialized operator; `data` is row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorRecord {
    pub input_basis: BasisSpec,
    pub output_basis: BasisSpec,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}
