//! Type-A data (linear functionals of the field) and type-B data
//! (observations of the forward model), with their error models.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::field::Grid1D;

/// Observation error model. Only independent normal errors are built.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ErrorDist {
    #[default]
    None,
    DiagonalNormal { sd: Vec<f64> },
}

impl ErrorDist {
    /// Normal errors with the given standard deviations; all-zero collapses to `None`.
    pub fn diagonal_normal(sd: Vec<f64>) -> Result<Self> {
        if sd.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Invalid("error standard deviations must be finite and nonnegative".into()));
        }
        if sd.iter().all(|&s| s == 0.0) {
            return Ok(ErrorDist::None);
        }
        Ok(ErrorDist::DiagonalNormal { sd })
    }

    pub fn is_none(&self) -> bool {
        matches!(self, ErrorDist::None)
    }

    /// Standard deviation of component `i`.
    pub fn sd(&self, i: usize) -> f64 {
        match self {
            ErrorDist::None => 0.0,
            ErrorDist::DiagonalNormal { sd } => sd[i],
        }
    }

    fn check_len(&self, len: usize) -> Result<()> {
        match self {
            ErrorDist::DiagonalNormal { sd } if sd.len() != len => Err(Error::Dimension(format!(
                "{} error standard deviations for {len} values",
                sd.len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> DVector<f64> {
        match self {
            ErrorDist::None => DVector::zeros(len),
            ErrorDist::DiagonalNormal { sd } => {
                DVector::from_fn(len, |i, _| sd[i] * rng.sample::<f64, _>(StandardNormal))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeAData {
    /// Grid coordinates of the measured points.
    pub locations: Vec<f64>,
    /// Linear functionals, one row per datum.
    pub h: DMatrix<f64>,
    /// Values in model unit.
    pub z: DVector<f64>,
    pub error: ErrorDist,
}

impl TypeAData {
    pub fn new(locations: Vec<f64>, h: DMatrix<f64>, z: DVector<f64>, error: ErrorDist) -> Result<Self> {
        if h.nrows() != z.len() || locations.len() != z.len() {
            return Err(Error::Dimension(format!(
                "{} type-A values for {} functionals at {} locations",
                z.len(),
                h.nrows(),
                locations.len()
            )));
        }
        error.check_len(z.len())?;
        Ok(Self {
            locations,
            h,
            z,
            error,
        })
    }

    /// Point measurements at grid nodes.
    pub fn points(grid: &Grid1D, records: &[DataRecord]) -> Result<Self> {
        let mut h = DMatrix::zeros(records.len(), grid.len());
        for (r, rec) in records.iter().enumerate() {
            h[(r, grid.node_index(rec.key)?)] = 1.0;
        }
        let z = DVector::from_iterator(records.len(), records.iter().map(|r| r.value));
        let error = ErrorDist::diagonal_normal(records.iter().map(|r| r.sd).collect())?;
        Self::new(records.iter().map(|r| r.key).collect(), h, z, error)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeBData {
    /// Positions in the forward output vector.
    pub indices: Vec<usize>,
    pub z: DVector<f64>,
    pub error: ErrorDist,
}

impl TypeBData {
    pub fn new(indices: Vec<usize>, z: DVector<f64>, error: ErrorDist) -> Result<Self> {
        if indices.len() != z.len() {
            return Err(Error::Dimension("type-B indices and values differ in length".into()));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("type-B values must be finite".into()));
        }
        error.check_len(z.len())?;
        Ok(Self { indices, z, error })
    }

    pub fn from_records(records: &[DataRecord]) -> Result<Self> {
        let mut indices = Vec::with_capacity(records.len());
        for r in records {
            if r.key < 0.0 || r.key.fract() != 0.0 {
                return Err(Error::Invalid(format!("type-B index {} is not a nonnegative integer", r.key)));
            }
            indices.push(r.key as usize);
        }
        let z = DVector::from_iterator(records.len(), records.iter().map(|r| r.value));
        let error = ErrorDist::diagonal_normal(records.iter().map(|r| r.sd).collect())?;
        Self::new(indices, z, error)
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    /// Pick out the observed components of a full forward output.
    pub fn select(&self, output: &[f64]) -> Result<DVector<f64>> {
        self.indices
            .iter()
            .map(|&i| {
                output.get(i).copied().ok_or_else(|| {
                    Error::Dimension(format!("type-B index {i} beyond forward output of length {}", output.len()))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }
}

/// `ϑₐ = zₐ − ε*` with `ε*` drawn from the type-A error model.
pub fn assign_type_a_anchors<R: Rng + ?Sized>(data: &TypeAData, rng: &mut R) -> DVector<f64> {
    if data.error.is_none() {
        return data.z.clone();
    }
    &data.z - data.error.draw(data.len(), rng)
}

/// `m + ε` with `ε` drawn from the type-B error model.
pub fn perturb_forward_output<R: Rng + ?Sized>(
    m: &DVector<f64>,
    error: &ErrorDist,
    rng: &mut R,
) -> Result<DVector<f64>> {
    error.check_len(m.len())?;
    if error.is_none() {
        return Ok(m.clone());
    }
    Ok(m + error.draw(m.len(), rng))
}

/// One line of a data file: `key value [sd]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataRecord {
    /// Grid coordinate (type A) or output index (type B).
    pub key: f64,
    pub value: f64,
    pub sd: f64,
}

/// Parse whitespace-separated `key value [sd]` lines; `#` starts a comment.
pub fn parse_records(text: &str, origin: &Path) -> Result<Vec<DataRecord>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            message,
        };
        let fields: Vec<&str> = line.split_whitespace().collect();
        if !(2..=3).contains(&fields.len()) {
            return Err(err(format!("expected 2 or 3 fields, found {}", fields.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let key = num(fields[0])?;
        let value = num(fields[1])?;
        let sd = match fields.get(2) {
            Some(s) => num(s)?,
            None => 0.0,
        };
        if !value.is_finite() || !(sd.is_finite() && sd >= 0.0) {
            return Err(err("value must be finite and sd nonnegative".into()));
        }
        out.push(DataRecord { key, value, sd });
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<DataRecord>> {
    let text = std::fs::read_to_string(path)?;
    parse_records(&text, path)
}

pub fn format_records(records: &[DataRecord]) -> String {
    let mut s = String::new();
    for r in records {
        if r.sd > 0.0 {
            s.push_str(&format!("{} {} {}\n", r.key, r.value, r.sd));
        } else {
            s.push_str(&format!("{} {}\n", r.key, r.value));
        }
    }
    s
}
