//! Forward models. The built-in model solves steady 1-D diffusion
//! `d/dx (y dz/dx) = s` with Dirichlet ends for one or more processes and
//! concatenates the observed values.

use std::path::PathBuf;
use std::process::Command;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::GridField;
use crate::transform::Transform;

/// A deterministic map from a natural-unit field to predicted observations.
///
/// Implementations must be reentrant: the engine calls `run` concurrently.
pub trait ForwardModel: Send + Sync {
    fn output_len(&self) -> usize;

    fn run(&self, field: &[f64]) -> Result<Vec<f64>>;
}

fn harmonic_mean(a: f64, b: f64) -> f64 {
    2.0 * a * b / (a + b)
}

/// Finite-volume solve on a unit-spacing grid.
///
/// Interior rows balance harmonic-mean interface fluxes against the cell
/// source; the first and last nodes carry the boundary values.
pub fn solve_process(y: &[f64], source: &[f64], left: f64, right: f64) -> Result<Vec<f64>> {
    let g = y.len();
    if g < 2 {
        return Err(Error::Invalid("a process needs at least two cells".into()));
    }
    if source.len() != g {
        return Err(Error::Dimension(format!("source has length {}, field {g}", source.len())));
    }
    if let Some(i) = y.iter().position(|&v| !(v > 0.0 && v.is_finite())) {
        return Err(Error::Domain {
            transform: "diffusion coefficient".into(),
            value: y[i],
        });
    }
    let mut lower = vec![0.0; g];
    let mut diag = vec![1.0; g];
    let mut upper = vec![0.0; g];
    let mut rhs = vec![0.0; g];
    rhs[0] = left;
    rhs[g - 1] = right;
    for i in 1..g - 1 {
        let west = harmonic_mean(y[i - 1], y[i]);
        let east = harmonic_mean(y[i], y[i + 1]);
        lower[i] = west;
        upper[i] = east;
        diag[i] = -(west + east);
        rhs[i] = source[i];
    }
    thomas(&lower, &diag, &upper, &rhs)
}

/// Tridiagonal elimination without pivoting.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot.abs() < f64::MIN_POSITIVE {
        return Err(Error::Numerical("singular tridiagonal system".into()));
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        let scale = diag[i].abs() + lower[i].abs() + upper[i].abs();
        if pivot.abs() <= 1e-14 * scale {
            return Err(Error::Numerical(format!("singular tridiagonal system at row {i}")));
        }
        c[i] = upper[i] / pivot;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    let mut z = vec![0.0; n];
    z[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        z[i] = d[i] - c[i] * z[i + 1];
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite solution".into()));
    }
    Ok(z)
}

/// One diffusion process: cell sources, boundary values and observed cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    pub source: Vec<f64>,
    pub left: f64,
    pub right: f64,
    /// Zero-based cell indices.
    pub observe: Vec<usize>,
}

impl ProcessSpec {
    pub fn solve(&self, natural_field: &[f64]) -> Result<Vec<f64>> {
        solve_process(natural_field, &self.source, self.left, self.right)
    }
}

/// Evenly spread interior cells: `round(j (G − 1) / (m + 1))` for `j = 1..=m`.
pub fn even_interior(grid_len: usize, count: usize) -> Vec<usize> {
    (1..=count)
        .map(|j| ((j * (grid_len - 1)) as f64 / (count + 1) as f64).round() as usize)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardSpec {
    processes: Vec<ProcessSpec>,
    grid_len: usize,
}

impl ForwardSpec {
    pub fn new(grid_len: usize, processes: Vec<ProcessSpec>) -> Result<Self> {
        if processes.is_empty() {
            return Err(Error::Invalid("forward model needs at least one process".into()));
        }
        for (k, p) in processes.iter().enumerate() {
            if p.source.len() != grid_len {
                return Err(Error::Dimension(format!(
                    "process {k}: source of length {} on a {grid_len}-cell grid",
                    p.source.len()
                )));
            }
            if let Some(&i) = p.observe.iter().find(|&&i| i >= grid_len) {
                return Err(Error::Invalid(format!("process {k}: observation cell {i} outside the grid")));
            }
        }
        Ok(Self { processes, grid_len })
    }

    /// The two-process synthetic setup: a sourceless process with ends 1 and 0
    /// observed at 9 cells, and a process with sources 4000 and 2000 at cells
    /// 20 and 53 (one-based) and ends 100 and 300, observed at 6 cells.
    pub fn synthetic_pair(grid_len: usize) -> Result<Self> {
        if grid_len < 53 {
            return Err(Error::Invalid("the synthetic pair needs at least 53 cells".into()));
        }
        let first = ProcessSpec {
            source: vec![0.0; grid_len],
            left: 1.0,
            right: 0.0,
            observe: even_interior(grid_len, 9),
        };
        let mut source = vec![0.0; grid_len];
        source[19] = 4000.0;
        source[52] = 2000.0;
        let second = ProcessSpec {
            source,
            left: 100.0,
            right: 300.0,
            observe: even_interior(grid_len, 6),
        };
        Self::new(grid_len, vec![first, second])
    }

    pub fn processes(&self) -> &[ProcessSpec] {
        &self.processes
    }

    pub fn grid_len(&self) -> usize {
        self.grid_len
    }

    /// Back-transform a model-unit field, run each process, concatenate the
    /// observed cells in process order.
    pub fn evaluate(&self, field: &GridField, transform: &Transform) -> Result<Vec<f64>> {
        let natural = transform.invert_all(field.as_slice());
        self.run(&natural)
    }
}

impl ForwardModel for ForwardSpec {
    fn output_len(&self) -> usize {
        self.processes.iter().map(|p| p.observe.len()).sum()
    }

    fn run(&self, field: &[f64]) -> Result<Vec<f64>> {
        if field.len() != self.grid_len {
            return Err(Error::Dimension(format!(
                "field of length {} for a {}-cell forward model",
                field.len(),
                self.grid_len
            )));
        }
        let mut out = Vec::with_capacity(self.output_len());
        for p in &self.processes {
            let z = p.solve(field)?;
            out.extend(p.observe.iter().map(|&i| z[i]));
        }
        Ok(out)
    }
}

/// Runs `program [args...] <field-file> <output-file>`. The field file holds
/// the natural-unit field, one value per line; the program writes one output
/// value per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalForward {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    pub output_len: usize,
}

impl ForwardModel for ExternalForward {
    fn output_len(&self) -> usize {
        self.output_len
    }

    fn run(&self, field: &[f64]) -> Result<Vec<f64>> {
        let dir = tempfile::tempdir()?;
        let input = dir.path().join("field.txt");
        let output = dir.path().join("output.txt");
        let mut text = String::with_capacity(field.len() * 20);
        for v in field {
            text.push_str(&format!("{v}\n"));
        }
        std::fs::write(&input, text)?;
        let status = Command::new(&self.program)
            .args(&self.args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::Forward(format!("{}: {e}", self.program.display())))?;
        if !status.success() {
            return Err(Error::Forward(format!("{} exited with {status}", self.program.display())));
        }
        let values = std::fs::read_to_string(&output)
            .map_err(|e| Error::Forward(format!("reading forward output: {e}")))?
            .split_whitespace()
            .map(|s| s.parse::<f64>().map_err(|e| Error::Forward(format!("{s:?}: {e}"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != self.output_len {
            return Err(Error::Forward(format!(
                "expected {} output values, got {}",
                self.output_len,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Forward("non-finite forward output".into()));
        }
        Ok(values)
    }
}
