use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

pub const SCHEMA_VERSION: u32 = 1;

fn schema_version() -> u32 {
    SCHEMA_VERSION
}

/// Which columns play which part in a conditional moment restriction.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoleMap {
    #[serde(default = "schema_version")]
    pub schema_version: u32,
    pub v_h: Vec<String>,
    pub v_q: Vec<String>,
    pub g0: String,
    pub g1: String,
}

impl RoleMap {
    pub fn new(v_h: &[&str], v_q: &[&str], g0: &str, g1: &str) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            v_h: v_h.iter().map(|s| s.to_string()).collect(),
            v_q: v_q.iter().map(|s| s.to_string()).collect(),
            g0: g0.into(),
            g1: g1.into(),
        }
    }

    /// Same restriction with the conditioning set and the argument exchanged.
    pub fn swapped(&self, g0: &str, g1: &str) -> Self {
        Self { schema_version: self.schema_version, v_h: self.v_q.clone(), v_q: self.v_h.clone(), g0: g0.into(), g1: g1.into() }
    }
}

/// Rows of `V` with named columns.
///
/// `weights`, when present, turns the rows into the atoms of a discrete law:
/// every empirical mean `E_n` becomes `Σ wᵢ (·)`. Without weights each row has
/// mass `1/n`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    columns: Vec<String>,
    data: DMatrix<T>,
    roles: Option<RoleMap>,
    hidden: Vec<String>,
    weights: Option<DVector<T>>,
}

impl<T: Real> Dataset<T> {
    pub fn new(columns: Vec<String>, data: DMatrix<T>) -> Result<Self> {
        if columns.len() != data.ncols() {
            return Err(Error::Dimension(format!("{} names for {} columns", columns.len(), data.ncols())));
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidParameter("dataset needs at least one row".into()));
        }
        for (i, c) in columns.iter().enumerate() {
            if columns[..i].contains(c) {
                return Err(Error::InvalidParameter(format!("duplicate column {c}")));
            }
        }
        Ok(Self { columns, data, roles: None, hidden: Vec::new(), weights: None })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn data(&self) -> &DMatrix<T> {
        &self.data
    }

    pub fn roles(&self) -> Option<&RoleMap> {
        self.roles.as_ref()
    }

    pub fn require_roles(&self) -> Result<&RoleMap> {
        self.roles.as_ref().ok_or(Error::MissingRoles)
    }

    pub fn with_roles(mut self, roles: RoleMap) -> Result<Self> {
        for c in roles.v_h.iter().chain(&roles.v_q).chain([&roles.g0, &roles.g1]) {
            self.index_of(c)?;
        }
        if roles.v_h.is_empty() || roles.v_q.is_empty() {
            return Err(Error::InvalidParameter("v_h and v_q need at least one column".into()));
        }
        let g1 = self.column(&roles.g1)?;
        if g1.iter().any(|v| !v.is_finite_value()) {
            return Err(Error::InvalidParameter(format!("column {} has non-finite values", roles.g1)));
        }
        self.roles = Some(roles);
        Ok(self)
    }

    pub fn hidden(&self) -> &[String] {
        &self.hidden
    }

    /// Marks a column as latent: kept in memory for oracles, omitted from CSV.
    pub fn hide(mut self, name: &str) -> Result<Self> {
        self.index_of(name)?;
        if !self.hidden.iter().any(|h| h == name) {
            self.hidden.push(name.into());
        }
        Ok(self)
    }

    pub fn weights(&self) -> Option<&DVector<T>> {
        self.weights.as_ref()
    }

    pub fn with_weights(mut self, w: DVector<T>) -> Result<Self> {
        if w.len() != self.n() {
            return Err(Error::Dimension("weight vector length".into()));
        }
        if w.iter().any(|v| !(v.is_finite_value() && *v >= T::zero())) {
            return Err(Error::InvalidParameter("weights must be nonnegative".into()));
        }
        let total = w.sum();
        if (total - T::one()).abs() > T::lit(1e-9).max(T::eps() * T::lit(100.0)) {
            return Err(Error::InvalidParameter(format!("weights sum to {total}, expected 1")));
        }
        self.weights = Some(w);
        Ok(self)
    }

    /// Row masses: the attached weights, or `1/n` each.
    pub fn masses(&self) -> DVector<T> {
        match &self.weights {
            Some(w) => w.clone(),
            None => DVector::from_element(self.n(), T::one() / T::from_usize_lossy(self.n())),
        }
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.columns.iter().position(|c| c == name).ok_or_else(|| Error::MissingColumn(name.into()))
    }

    pub fn column(&self, name: &str) -> Result<DVector<T>> {
        let j = self.index_of(name)?;
        Ok(self.data.column(j).into_owned())
    }

    /// `n × k` matrix of the named columns, in the given order.
    pub fn select(&self, names: &[String]) -> Result<DMatrix<T>> {
        let idx: Vec<usize> = names.iter().map(|c| self.index_of(c)).collect::<Result<_>>()?;
        Ok(DMatrix::from_fn(self.n(), idx.len(), |i, k| self.data[(i, idx[k])]))
    }

    pub fn push_column(mut self, name: &str, values: DVector<T>) -> Result<Self> {
        if values.len() != self.n() {
            return Err(Error::Dimension(format!("column {name} has {} values for {} rows", values.len(), self.n())));
        }
        if let Ok(j) = self.index_of(name) {
            self.data.set_column(j, &values);
            return Ok(self);
        }
        let d = self.data.ncols();
        self.data = self.data.insert_column(d, T::zero());
        self.data.set_column(d, &values);
        self.columns.push(name.into());
        Ok(self)
    }

    /// Rows `indices` in the given order. Weights, if any, are renormalised.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::EmptyFold("subset"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.n()) {
            return Err(Error::Dimension(format!("row {bad} out of range")));
        }
        let data = self.data.select_rows(indices.iter());
        let weights = match &self.weights {
            Some(w) => {
                let sel = DVector::from_iterator(indices.len(), indices.iter().map(|&i| w[i]));
                let total = sel.sum();
                if total <= T::zero() {
                    return Err(Error::EmptyFold("subset carries no mass"));
                }
                Some(sel / total)
            }
            None => None,
        };
        Ok(Self { columns: self.columns.clone(), data, roles: self.roles.clone(), hidden: self.hidden.clone(), weights })
    }

    /// Converts to another scalar type.
    pub fn cast<U: Real>(&self) -> Dataset<U> {
        Dataset {
            columns: self.columns.clone(),
            data: self.data.map(|v| U::lit(v.as_f64())),
            roles: self.roles.clone(),
            hidden: self.hidden.clone(),
            weights: self.weights.as_ref().map(|w| w.map(|v| U::lit(v.as_f64()))),
        }
    }

    /// CSV with a header row; hidden columns are omitted. Values use 17
    /// significant digits so they read back bit-identically.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&j| !self.hidden.contains(&self.columns[j])).collect();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(keep.iter().map(|&j| self.columns[j].as_str()))?;
        let mut rec = Vec::with_capacity(keep.len());
        for i in 0..self.n() {
            rec.clear();
            rec.extend(keep.iter().map(|&j| format!("{:.16e}", self.data[(i, j)].as_f64())));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let columns: Vec<String> = r.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let mut values = Vec::new();
        let mut rows = 0;
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            if rec.len() != columns.len() {
                return Err(Error::Csv(format!("row {} has {} fields, expected {}", line + 1, rec.len(), columns.len())));
            }
            for field in rec.iter() {
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| Error::Csv(format!("row {}: cannot parse {field:?} as a number", line + 1)))?;
                values.push(T::lit(v));
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Csv("no data rows".into()));
        }
        Self::new(columns.clone(), DMatrix::from_row_slice(rows, columns.len(), &values))
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }

    pub fn read_csv_path(path: &Path) -> Result<Self> {
        Self::read_csv(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}
