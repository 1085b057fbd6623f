//! Discrete proximal causal design.
//!
//! `U → (Z, W, A)`, `(A, U) → Y`, with `Z`, `W` proxies of the latent `U`.
//! Factorisation `p(u) p(z|u) p(w|u) p(a|u) p(y|a,u)` gives `W ⫫ (A, Z) | U`
//! and `Y ⫫ Z | (A, U)`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::Dataset;
use crate::basis::BasisSpec;
use crate::error::{Error, Result};
use crate::function::FunctionHandle;
use crate::linalg;
use crate::rng::substream;

const ROW_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscreteProximalDgp {
    pub p_u: Vec<f64>,
    /// `p_z_given_u[u][z]`.
    pub p_z_given_u: Vec<Vec<f64>>,
    /// `p_w_given_u[u][w]`.
    pub p_w_given_u: Vec<Vec<f64>>,
    /// `P(A = 1 | U = u)`.
    pub p_a1_given_u: Vec<f64>,
    /// `mean_y[a][u] = E[Y | A = a, U = u]`.
    pub mean_y: [Vec<f64>; 2],
    pub noise_sd: f64,
    /// Treatment level of the counterfactual mean.
    pub a: u8,
}

/// Outcome and treatment bridges.
#[derive(Clone, Debug, PartialEq)]
pub struct Bridges {
    /// `h₀` on the `W` indicator basis.
    pub h0: FunctionHandle<f64>,
    /// `q₀` on the `(Z, A)` tensor indicator basis.
    pub q0: FunctionHandle<f64>,
    /// `h₀(w)` per category.
    pub h_values: Vec<f64>,
    /// `q₀(z, a')` at index `z·2 + a'`.
    pub q_values: Vec<f64>,
}

impl Default for DiscreteProximalDgp {
    fn default() -> Self {
        Self {
            p_u: vec![0.3, 0.4, 0.3],
            p_z_given_u: vec![
                vec![0.7, 0.15, 0.1, 0.05],
                vec![0.1, 0.7, 0.1, 0.1],
                vec![0.05, 0.1, 0.15, 0.7],
            ],
            p_w_given_u: vec![
                vec![0.7, 0.1, 0.15, 0.05],
                vec![0.1, 0.7, 0.1, 0.1],
                vec![0.05, 0.15, 0.1, 0.7],
            ],
            p_a1_given_u: vec![0.3, 0.5, 0.7],
            mean_y: [vec![0.0, 0.5, 1.0], vec![1.0, 2.0, 2.5]],
            noise_sd: 1.0,
            a: 1,
        }
    }
}

impl DiscreteProximalDgp {
    /// Single latent category: no confounding.
    pub fn unconfounded(p_z: Vec<f64>, p_w: Vec<f64>, p_a1: f64, mean_y: [f64; 2], noise_sd: f64, a: u8) -> Self {
        Self {
            p_u: vec![1.0],
            p_z_given_u: vec![p_z],
            p_w_given_u: vec![p_w],
            p_a1_given_u: vec![p_a1],
            mean_y: [vec![mean_y[0]], vec![mean_y[1]]],
            noise_sd,
            a,
        }
    }

    pub fn n_u(&self) -> usize {
        self.p_u.len()
    }

    pub fn n_z(&self) -> usize {
        self.p_z_given_u.first().map_or(0, Vec::len)
    }

    pub fn n_w(&self) -> usize {
        self.p_w_given_u.first().map_or(0, Vec::len)
    }

    pub fn validate(&self) -> Result<()> {
        let nu = self.n_u();
        if nu == 0 {
            return Err(Error::InvalidParameter("p_u is empty".into()));
        }
        check_row("p_u", &self.p_u)?;
        for (name, table) in [("p_z_given_u", &self.p_z_given_u), ("p_w_given_u", &self.p_w_given_u)] {
            if table.len() != nu {
                return Err(Error::InvalidParameter(format!("{name} needs {nu} rows")));
            }
            let k = table[0].len();
            for row in table {
                if row.len() != k {
                    return Err(Error::InvalidParameter(format!("{name} rows differ in length")));
                }
                check_row(name, row)?;
            }
        }
        if self.p_a1_given_u.len() != nu || self.p_a1_given_u.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::InvalidParameter("p_a1_given_u entries must lie in (0, 1)".into()));
        }
        if self.mean_y.iter().any(|m| m.len() != nu || m.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidParameter("mean_y needs finite rows of length |U|".into()));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidParameter("noise_sd must be nonnegative".into()));
        }
        if self.a > 1 {
            return Err(Error::InvalidParameter("treatment level must be 0 or 1".into()));
        }
        for (name, table) in [("p_z_given_u", &self.p_z_given_u), ("p_w_given_u", &self.p_w_given_u)] {
            let m = DMatrix::from_fn(table[0].len(), nu, |x, u| table[u][x]);
            let sv = m.svd(false, false).singular_values;
            if sv.len() < nu || sv.min() <= 1e-10 * sv.max() {
                return Err(Error::Identification(format!("{name} does not have full column rank")));
            }
        }
        Ok(())
    }

    fn p_a_given_u(&self, a: usize, u: usize) -> f64 {
        if a == 1 {
            self.p_a1_given_u[u]
        } else {
            1.0 - self.p_a1_given_u[u]
        }
    }

    pub fn p_z(&self) -> Vec<f64> {
        (0..self.n_z()).map(|z| (0..self.n_u()).map(|u| self.p_u[u] * self.p_z_given_u[u][z]).sum()).collect()
    }

    pub fn p_w(&self) -> Vec<f64> {
        (0..self.n_w()).map(|w| (0..self.n_u()).map(|u| self.p_u[u] * self.p_w_given_u[u][w]).sum()).collect()
    }

    pub fn p_a(&self) -> [f64; 2] {
        let p1: f64 = (0..self.n_u()).map(|u| self.p_u[u] * self.p_a1_given_u[u]).sum();
        [1.0 - p1, p1]
    }

    /// Indicator basis for `W` weighted by its marginal.
    pub fn basis_w(&self) -> BasisSpec {
        BasisSpec::Indicator { weights: self.p_w() }
    }

    /// Tensor of the `Z` and `A` indicator bases weighted by their marginals.
    pub fn basis_za(&self) -> BasisSpec {
        BasisSpec::tensor(BasisSpec::Indicator { weights: self.p_z() }, BasisSpec::Indicator { weights: self.p_a().to_vec() })
    }

    /// `ψ₀ = Σᵤ p(u) E[Y | A = a, U = u]`.
    pub fn psi0(&self) -> f64 {
        let a = self.a as usize;
        (0..self.n_u()).map(|u| self.p_u[u] * self.mean_y[a][u]).sum()
    }

    pub fn columns() -> Vec<String> {
        ["U", "Z", "W", "A", "Y"].iter().map(|s| s.to_string()).collect()
    }

    /// Ancestral sample with columns `U` (hidden), `Z`, `W`, `A`, `Y`.
    pub fn sample(&self, n: usize, seed: u64) -> Result<Dataset<f64>> {
        self.validate()?;
        if n == 0 {
            return Err(Error::InvalidParameter("n must be ≥ 1".into()));
        }
        let mut rng = substream(seed, 0);
        let mut rows = Vec::with_capacity(5 * n);
        for _ in 0..n {
            let u = categorical(&mut rng, &self.p_u);
            let z = categorical(&mut rng, &self.p_z_given_u[u]);
            let w = categorical(&mut rng, &self.p_w_given_u[u]);
            let a = usize::from(rng.random::<f64>() < self.p_a1_given_u[u]);
            let noise: f64 = rng.sample(StandardNormal);
            let y = self.mean_y[a][u] + self.noise_sd * noise;
            rows.extend_from_slice(&[u as f64, z as f64, w as f64, a as f64, y]);
        }
        Dataset::new(Self::columns(), DMatrix::from_row_slice(n, 5, &rows))?.hide("U")
    }

    /// Exact law as weighted atoms. `Y` takes the two values `μ ± σ` with mass
    /// one half, which matches every moment of degree at most three of the
    /// Gaussian outcome.
    pub fn atoms(&self) -> Result<Dataset<f64>> {
        self.validate()?;
        let mut rows = Vec::new();
        let mut mass = Vec::new();
        for u in 0..self.n_u() {
            for z in 0..self.n_z() {
                for w in 0..self.n_w() {
                    for a in 0..2 {
                        let p = self.p_u[u] * self.p_z_given_u[u][z] * self.p_w_given_u[u][w] * self.p_a_given_u(a, u);
                        for sign in [-1.0, 1.0] {
                            let y = self.mean_y[a][u] + sign * self.noise_sd;
                            rows.extend_from_slice(&[u as f64, z as f64, w as f64, a as f64, y]);
                            mass.push(0.5 * p);
                        }
                    }
                }
            }
        }
        let n = mass.len();
        Dataset::new(Self::columns(), DMatrix::from_row_slice(n, 5, &rows))?.with_weights(DVector::from_vec(mass))?.hide("U")
    }

    /// `p(u | z, a)` as a `(|Z|·2) × |U|` matrix, row `z·2 + a`.
    fn posterior_u_given_za(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_z() * 2, self.n_u(), |row, u| {
            let (z, a) = (row / 2, row % 2);
            let joint = |v: usize| self.p_u[v] * self.p_z_given_u[v][z] * self.p_a_given_u(a, v);
            joint(u) / (0..self.n_u()).map(joint).sum::<f64>()
        })
    }

    /// `p(u | w)` as a `|W| × |U|` matrix.
    fn posterior_u_given_w(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n_w(), self.n_u(), |w, u| {
            let joint = |v: usize| self.p_u[v] * self.p_w_given_u[v][w];
            joint(u) / (0..self.n_u()).map(joint).sum::<f64>()
        })
    }

    /// `E[h(W) | Z = z, A = a']` at row `z·2 + a'`.
    pub fn conditional_mean_h(&self, h_values: &[f64]) -> DVector<f64> {
        let pw = DMatrix::from_fn(self.n_u(), self.n_w(), |u, w| self.p_w_given_u[u][w]);
        self.posterior_u_given_za() * (pw * DVector::from_column_slice(h_values))
    }

    /// `E[Y | Z = z, A = a']` at row `z·2 + a'`.
    pub fn conditional_mean_y(&self) -> DVector<f64> {
        let post = self.posterior_u_given_za();
        DVector::from_fn(self.n_z() * 2, |row, _| {
            let a = row % 2;
            (0..self.n_u()).map(|u| post[(row, u)] * self.mean_y[a][u]).sum()
        })
    }

    /// `E[I(A = a) q(Z, A) | W = w]` for `q` given at index `z·2 + a'`.
    pub fn conditional_mean_q(&self, q_values: &[f64]) -> DVector<f64> {
        let a = self.a as usize;
        let post = self.posterior_u_given_w();
        DVector::from_fn(self.n_w(), |w, _| {
            (0..self.n_u())
                .map(|u| {
                    let inner: f64 = (0..self.n_z()).map(|z| self.p_z_given_u[u][z] * q_values[z * 2 + a]).sum();
                    post[(w, u)] * self.p_a_given_u(a, u) * inner
                })
                .sum()
        })
    }

    /// Minimum-norm bridges in `L²(P)`:
    /// `E[h(W) | Z, A = a] = E[Y | Z, A = a]` and
    /// `E[I(A = a) q(Z, A) | W] = 1` with `q(·, 1 − a) = 0`.
    pub fn true_bridges(&self) -> Result<Bridges> {
        self.validate()?;
        let a = self.a as usize;
        let (nz, nw) = (self.n_z(), self.n_w());
        let post_za = self.posterior_u_given_za();
        let pw_u = DMatrix::from_fn(self.n_u(), nw, |u, w| self.p_w_given_u[u][w]);
        let rows: Vec<usize> = (0..nz).map(|z| z * 2 + a).collect();
        let k_h = post_za.select_rows(rows.iter()) * &pw_u;
        let ey = self.conditional_mean_y();
        let b_h = DVector::from_iterator(nz, rows.iter().map(|&r| ey[r]));
        let h_values = weighted_min_norm(&k_h, &b_h, &self.p_w())?;

        let p_z = self.p_z();
        let p_a = self.p_a();
        let post_w = self.posterior_u_given_w();
        let k_q = DMatrix::from_fn(nw, nz, |w, z| {
            (0..self.n_u()).map(|u| post_w[(w, u)] * self.p_a_given_u(a, u) * self.p_z_given_u[u][z]).sum()
        });
        let pza: Vec<f64> = (0..nz)
            .map(|z| (0..self.n_u()).map(|u| self.p_u[u] * self.p_z_given_u[u][z] * self.p_a_given_u(a, u)).sum())
            .collect();
        let q_a = weighted_min_norm(&k_q, &DVector::from_element(nw, 1.0), &pza)?;
        let mut q_values = vec![0.0; nz * 2];
        for z in 0..nz {
            q_values[z * 2 + a] = q_a[z];
        }

        let pw = self.p_w();
        let h0 = FunctionHandle::from_slice(self.basis_w(), &h_values.iter().zip(&pw).map(|(h, p)| h * p.sqrt()).collect::<Vec<_>>())?;
        let q_coeffs: Vec<f64> = (0..nz * 2).map(|i| q_values[i] * (p_z[i / 2] * p_a[i % 2]).sqrt()).collect();
        let q0 = FunctionHandle::from_slice(self.basis_za(), &q_coeffs)?;
        Ok(Bridges { h0, q0, h_values: h_values.iter().copied().collect(), q_values })
    }
}

fn check_row(name: &str, row: &[f64]) -> Result<()> {
    if row.iter().any(|p| !(*p > 0.0 && *p < 1.0) && !(row.len() == 1 && *p == 1.0)) {
        return Err(Error::InvalidParameter(format!("{name}: probabilities must lie in (0, 1)")));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOL {
        return Err(Error::InvalidParameter(format!("{name}: row sums to {total}")));
    }
    Ok(())
}

fn categorical<R: Rng>(rng: &mut R, p: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, pi) in p.iter().enumerate() {
        acc += pi;
        if u < acc {
            return i;
        }
    }
    p.len() - 1
}

/// `argmin Σ pᵢ xᵢ²` subject to `K x = b`; fails if the system is inconsistent.
fn weighted_min_norm(k: &DMatrix<f64>, b: &DVector<f64>, p: &[f64]) -> Result<DVector<f64>> {
    let d_inv_sqrt = DMatrix::from_diagonal(&DVector::from_iterator(p.len(), p.iter().map(|v| 1.0 / v.sqrt())));
    let scaled = k * &d_inv_sqrt;
    let g = linalg::pinv(&scaled, 1e-10) * b;
    let x = d_inv_sqrt * g;
    let resid = (k * &x - b).norm();
    if resid > 1e-9 * (1.0 + b.norm()) {
        return Err(Error::Identification(format!("bridge equation residual {resid:.3e}")));
    }
    Ok(x)
}
