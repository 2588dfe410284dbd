//! Run configuration (TOML) and the resolved scenario it describes.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{read_records, TypeAData, TypeBData};
use crate::error::{Error, Result};
use crate::field::{AnchorSet, FieldModel, Grid1D};
use crate::forward::{ExternalForward, ForwardModel, ForwardSpec, ProcessSpec};
use crate::prior::StructuralPrior;
use crate::transform::Transform;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScenarioKind {
    /// Type-A data only; no forward conditioning.
    A,
    /// Type-A then type-B.
    AB,
    /// Type-B data only, under a bounded structural prior.
    B,
}

impl std::fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ScenarioKind::A => "A",
            ScenarioKind::AB => "AB",
            ScenarioKind::B => "B",
        })
    }
}

/// Transforms between natural and inference scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Transforms {
    /// Natural unit to model unit for the field itself.
    pub field: Transform,
    pub lambda: Transform,
    pub eta2: Transform,
    pub beta: Transform,
    pub anchors: Transform,
    pub output: Transform,
}

impl Default for Transforms {
    fn default() -> Self {
        Self {
            field: Transform::Logit {
                lower: 1.7,
                upper: 10249.0,
            },
            lambda: Transform::Logit {
                lower: 5.0,
                upper: 80.0,
            },
            eta2: Transform::Log,
            beta: Transform::Identity,
            anchors: Transform::Identity,
            output: Transform::Identity,
        }
    }
}

impl Transforms {
    pub fn validate(&self) -> Result<()> {
        for t in [&self.field, &self.lambda, &self.eta2, &self.beta, &self.anchors, &self.output] {
            t.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub size: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { size: 80 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriorConfig {
    pub a: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub lambda_grid_size: usize,
    /// Uniform range for each trend coefficient; type-B-only runs.
    pub beta_range: Option<[f64; 2]>,
    /// Uniform range for `log η²`; type-B-only runs.
    pub log_eta2_range: Option<[f64; 2]>,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            a: 1.0,
            lambda_lower: 5.0,
            lambda_upper: 80.0,
            lambda_grid_size: 200,
            beta_range: None,
            log_eta2_range: None,
        }
    }
}

/// Bounded prior used when no type-A data inform the structural parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedPrior {
    pub beta: [f64; 2],
    pub log_eta2: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub type_a: Option<PathBuf>,
    pub type_b: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnchorConfig {
    /// Grid coordinates of the inverted anchors.
    pub inverted: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ForwardConfig {
    /// The built-in two-process diffusion setup.
    #[default]
    Synthetic,
    Processes { processes: Vec<ProcessSpec> },
    External(ExternalForward),
}

impl ForwardConfig {
    pub fn build(&self, grid_len: usize) -> Result<Arc<dyn ForwardModel>> {
        Ok(match self {
            ForwardConfig::Synthetic => Arc::new(ForwardSpec::synthetic_pair(grid_len)?),
            ForwardConfig::Processes { processes } => Arc::new(ForwardSpec::new(grid_len, processes.clone())?),
            ForwardConfig::External(e) => Arc::new(e.clone()),
        })
    }
}

fn default_bandwidth() -> f64 {
    1.0
}

fn default_posterior_draws() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub scenario: ScenarioKind,
    pub sample_size: usize,
    /// Defaults to `min(500, n − 1)`.
    #[serde(default)]
    pub neighbors: Option<usize>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_posterior_draws")]
    pub posterior_draws: usize,
    /// Worker threads; all cores when absent. Results do not depend on it.
    #[serde(default)]
    pub workers: Option<usize>,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub prior: PriorConfig,
    #[serde(default)]
    pub transforms: Transforms,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub anchors: AnchorConfig,
    #[serde(default)]
    pub forward: ForwardConfig,
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Everything a run needs, resolved and validated.
#[derive(Clone)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub sample_size: usize,
    pub neighbors: Option<usize>,
    pub bandwidth: f64,
    pub posterior_draws: usize,
    pub transforms: Transforms,
    pub prior: StructuralPrior,
    pub bounded_prior: Option<BoundedPrior>,
    /// Grid, trend design and anchors (measured rows first).
    pub model: FieldModel,
    pub inverted_locations: Vec<f64>,
    pub type_a: TypeAData,
    pub type_b: TypeBData,
    forward: Arc<CountingForward>,
}

impl std::fmt::Debug for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Scenario")
            .field("kind", &self.kind)
            .field("seed", &self.seed)
            .field("sample_size", &self.sample_size)
            .finish_non_exhaustive()
    }
}

/// Forward model wrapper that counts evaluations.
pub struct CountingForward {
    inner: Arc<dyn ForwardModel>,
    calls: AtomicUsize,
}

impl ForwardModel for CountingForward {
    fn output_len(&self) -> usize {
        self.inner.output_len()
    }

    fn run(&self, field: &[f64]) -> Result<Vec<f64>> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.run(field)
    }
}

/// Pieces of a scenario that do not come from the config file.
pub struct ScenarioParts {
    pub kind: ScenarioKind,
    pub seed: u64,
    pub sample_size: usize,
    pub grid: Grid1D,
    pub type_a: TypeAData,
    pub type_b: TypeBData,
    pub inverted_locations: Vec<f64>,
    pub forward: Arc<dyn ForwardModel>,
}

impl Scenario {
    /// Defaults for everything not in `parts`: `k = min(500, n − 1)`, `h = 1`,
    /// 1000 posterior draws, the default transforms and prior.
    pub fn new(parts: ScenarioParts) -> Result<Self> {
        let prior = PriorConfig::default();
        Self::assemble(
            parts,
            None,
            default_bandwidth(),
            default_posterior_draws(),
            Transforms::default(),
            &prior,
        )
    }

    pub fn from_config(config: &ScenarioConfig, base_dir: &Path) -> Result<Self> {
        let grid = Grid1D::regular(config.grid.size)?;
        let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };
        let type_a = match &config.data.type_a {
            Some(p) => TypeAData::points(&grid, &read_records(&resolve(p))?)?,
            None => TypeAData::points(&grid, &[])?,
        };
        let type_b = match &config.data.type_b {
            Some(p) => TypeBData::from_records(&read_records(&resolve(p))?)?,
            None => TypeBData::from_records(&[])?,
        };
        let forward = config.forward.build(grid.len())?;
        let parts = ScenarioParts {
            kind: config.scenario,
            seed: config.seed,
            sample_size: config.sample_size,
            grid,
            type_a,
            type_b,
            inverted_locations: config.anchors.inverted.clone(),
            forward,
        };
        Self::assemble(
            parts,
            config.neighbors,
            config.bandwidth,
            config.posterior_draws,
            config.transforms.clone(),
            &config.prior,
        )
    }

    fn assemble(
        parts: ScenarioParts,
        neighbors: Option<usize>,
        bandwidth: f64,
        posterior_draws: usize,
        transforms: Transforms,
        prior_config: &PriorConfig,
    ) -> Result<Self> {
        transforms.validate()?;
        let prior = StructuralPrior::new(
            prior_config.a,
            prior_config.lambda_lower,
            prior_config.lambda_upper,
            prior_config.lambda_grid_size,
        )?;
        for lambda in [prior.lambda_grid()[0], *prior.lambda_grid().last().unwrap()] {
            transforms.lambda.apply(lambda).map_err(|_| {
                Error::Config("the range transform does not cover the range prior's support".into())
            })?;
        }
        let ScenarioParts {
            kind,
            seed,
            sample_size,
            grid,
            type_a,
            type_b,
            inverted_locations,
            forward,
        } = parts;
        let g = grid.len();
        if type_a.h.ncols() != g && !type_a.is_empty() {
            return Err(Error::Dimension("type-A functionals do not span the grid".into()));
        }
        let measured = if type_a.is_empty() { DMatrix::zeros(0, g) } else { type_a.h.clone() };
        let inverted = AnchorSet::points(&grid, &[], &inverted_locations)?.inverted();
        let anchors = AnchorSet::new(measured, inverted)?;
        let model = FieldModel::constant_mean(grid, anchors)?;

        if let Some(&i) = type_b.indices.iter().find(|&&i| i >= forward.output_len()) {
            return Err(Error::Config(format!(
                "type-B index {i} beyond the forward output length {}",
                forward.output_len()
            )));
        }
        match kind {
            ScenarioKind::A if type_a.is_empty() => {
                return Err(Error::Config("scenario A needs type-A data".into()))
            }
            ScenarioKind::AB if type_a.is_empty() || type_b.is_empty() => {
                return Err(Error::Config("scenario AB needs type-A and type-B data".into()))
            }
            ScenarioKind::B if type_b.is_empty() => {
                return Err(Error::Config("scenario B needs type-B data".into()))
            }
            _ => {}
        }
        let bounded_prior = match (kind, prior_config.beta_range, prior_config.log_eta2_range) {
            (ScenarioKind::B, Some(beta), Some(log_eta2)) => {
                for [lo, hi] in [beta, log_eta2] {
                    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                        return Err(Error::Config(format!("empty prior range [{lo}, {hi}]")));
                    }
                }
                Some(BoundedPrior { beta, log_eta2 })
            }
            (ScenarioKind::B, _, _) => {
                return Err(Error::Config(
                    "scenario B needs prior.beta_range and prior.log_eta2_range".into(),
                ))
            }
            _ => None,
        };
        if sample_size == 0 {
            return Err(Error::Config("sample_size must be positive".into()));
        }
        if kind != ScenarioKind::A {
            let k = neighbors.unwrap_or_else(|| crate::mixture::default_neighbors(sample_size));
            if sample_size < k + 1 {
                return Err(Error::Config(format!("sample_size {sample_size} is below neighbors + 1 = {}", k + 1)));
            }
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::Config(format!("bandwidth must be positive, got {bandwidth}")));
        }
        Ok(Self {
            kind,
            seed,
            sample_size,
            neighbors,
            bandwidth,
            posterior_draws,
            transforms,
            prior,
            bounded_prior,
            model,
            inverted_locations,
            type_a,
            type_b,
            forward: Arc::new(CountingForward {
                inner: forward,
                calls: AtomicUsize::new(0),
            }),
        })
    }

    pub fn forward(&self) -> &dyn ForwardModel {
        self.forward.as_ref()
    }

    /// Forward evaluations made through this scenario so far.
    pub fn forward_calls(&self) -> usize {
        self.forward.calls.load(Ordering::Relaxed)
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
            .unwrap_or_else(|| crate::mixture::default_neighbors(self.sample_size))
    }
}
