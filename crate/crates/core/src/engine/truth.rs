//! Synthetic truth: a natural-unit profile, its data and anchor values.

use std::path::Path;
use std::sync::Arc;

use nalgebra::DVector;

use crate::data::{DataRecord, TypeAData, TypeBData};
use crate::error::{Error, Result};
use crate::field::{GridField, Grid1D};
use crate::forward::{ForwardModel, ForwardSpec};
use crate::transform::Transform;

use super::config::{ScenarioKind, ScenarioParts};

/// Bundled 80-node stand-in profile, natural unit.
pub const BUNDLED_PROFILE: &str = include_str!("../../data/truth_profile.txt");

/// One value per line; `#` starts a comment.
pub fn parse_profile(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .filter_map(|(i, l)| {
            let l = l.split('#').next().unwrap_or("").trim();
            (!l.is_empty()).then_some((i, l))
        })
        .map(|(i, l)| {
            l.parse::<f64>()
                .map_err(|_| Error::Invalid(format!("profile line {}: {l:?} is not a number", i + 1)))
        })
        .collect()
}

pub fn bundled_profile() -> Vec<f64> {
    parse_profile(BUNDLED_PROFILE).expect("bundled profile parses")
}

/// Default point layout: 20 nodes at one-based coordinates `3, 7, …, 79`;
/// every fourth one, starting with the third, is measured.
pub fn default_locations(grid_len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut measured = Vec::new();
    let mut inverted = Vec::new();
    for j in 0.. {
        let x = 3 + 4 * j;
        if x > grid_len {
            break;
        }
        if j % 4 == 2 {
            measured.push(x as f64);
        } else {
            inverted.push(x as f64);
        }
    }
    (measured, inverted)
}

#[derive(Debug, Clone)]
pub struct Truth {
    pub grid: Grid1D,
    pub natural: Vec<f64>,
    /// Field in model unit.
    pub model: GridField,
    pub measured_locations: Vec<f64>,
    pub inverted_locations: Vec<f64>,
    /// Full forward output at the truth.
    pub output: Vec<f64>,
    pub type_a: Vec<DataRecord>,
    pub type_b: Vec<DataRecord>,
}

impl Truth {
    /// Error-free data from a profile: type-A values are the model-unit field
    /// at the measured nodes, type-B values the full forward output.
    pub fn new(
        natural: Vec<f64>,
        field_transform: &Transform,
        measured_locations: Vec<f64>,
        inverted_locations: Vec<f64>,
        forward: &dyn ForwardModel,
    ) -> Result<Self> {
        let grid = Grid1D::regular(natural.len())?;
        let model = DVector::from_vec(field_transform.apply_all(&natural)?);
        let output = forward.run(&natural)?;
        let type_a = measured_locations
            .iter()
            .map(|&x| {
                Ok(DataRecord {
                    key: x,
                    value: model[grid.node_index(x)?],
                    sd: 0.0,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let type_b = output
            .iter()
            .enumerate()
            .map(|(i, &v)| DataRecord {
                key: i as f64,
                value: v,
                sd: 0.0,
            })
            .collect();
        Ok(Self {
            grid,
            natural,
            model,
            measured_locations,
            inverted_locations,
            output,
            type_a,
            type_b,
        })
    }

    /// The bundled profile with the default layout, transform and forward model.
    pub fn bundled() -> Result<Self> {
        let natural = bundled_profile();
        let g = natural.len();
        let (measured, inverted) = default_locations(g);
        let field = super::Transforms::default().field;
        Self::new(natural, &field, measured, inverted, &ForwardSpec::synthetic_pair(g)?)
    }

    /// Model-unit values at the inverted anchors.
    pub fn inverted_anchors(&self) -> Result<DVector<f64>> {
        self.inverted_locations
            .iter()
            .map(|&x| Ok(self.model[self.grid.node_index(x)?]))
            .collect::<Result<Vec<_>>>()
            .map(DVector::from_vec)
    }

    /// Scenario pieces using the synthetic forward model on this grid.
    pub fn scenario_parts(&self, kind: ScenarioKind, seed: u64, sample_size: usize) -> Result<ScenarioParts> {
        let type_a = match kind {
            ScenarioKind::B => TypeAData::points(&self.grid, &[])?,
            _ => TypeAData::points(&self.grid, &self.type_a)?,
        };
        let type_b = match kind {
            ScenarioKind::A => TypeBData::from_records(&[])?,
            _ => TypeBData::from_records(&self.type_b)?,
        };
        Ok(ScenarioParts {
            kind,
            seed,
            sample_size,
            grid: self.grid.clone(),
            type_a,
            type_b,
            inverted_locations: self.inverted_locations.clone(),
            forward: Arc::new(ForwardSpec::synthetic_pair(self.grid.len())?),
        })
    }

    /// Writes `truth.csv`, `type_a.txt`, `type_b.txt` and `anchors_true.csv`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let rows = (0..self.natural.len()).map(|i| vec![self.grid.locations()[i], self.natural[i], self.model[i]]);
        super::output::write_csv(&dir.join("truth.csv"), &["x", "natural", "model"], rows)?;
        let header_a = "# type-A data: grid coordinate, model-unit value, optional error sd\n";
        std::fs::write(dir.join("type_a.txt"), format!("{header_a}{}", crate::data::format_records(&self.type_a)))?;
        let header_b = "# type-B data: forward output index, value, optional error sd\n";
        std::fs::write(dir.join("type_b.txt"), format!("{header_b}{}", crate::data::format_records(&self.type_b)))?;
        let anchors = self.inverted_anchors()?;
        let rows = self.inverted_locations.iter().zip(anchors.iter()).map(|(&x, &v)| vec![x, v]);
        super::output::write_csv(&dir.join("anchors_true.csv"), &["x", "model"], rows)?;
        Ok(())
    }
}
