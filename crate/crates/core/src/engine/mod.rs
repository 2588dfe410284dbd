//! The inversion pipeline: sample parameters given type-A data, simulate a
//! field and run the forward model once per draw, approximate the joint law
//! of (parameters, outputs) by a normal mixture, and condition it on the
//! type-B data.

pub mod config;
pub mod output;
pub mod truth;

use std::fmt::Write as _;
use std::path::Path;

use log::{info, warn};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

pub use config::{
    BoundedPrior, ForwardConfig, ScenarioConfig, ScenarioKind, Scenario, ScenarioParts, Transforms,
};
pub use truth::Truth;

use crate::data::{assign_type_a_anchors, perturb_forward_output};
use crate::error::{Error, Result};
use crate::field::{GridField, ModelParams, StructuralParams};
use crate::mixture::{build_kde, NormalMixture, WeightedJointSample};
use crate::prior::{PointData, StructuralPosterior};
use crate::rng::{substream, Stage};

/// ESS below this is reported as a warning.
pub const ESS_WARNING: f64 = 50.0;

/// Largest tolerated fraction of failed forward evaluations.
pub const FORWARD_FAILURE_TOLERANCE: f64 = 0.10;

/// Layout of the inference vector: range, variance, trend, inverted anchors,
/// then the measured anchors whose data carry error. Error-free measured
/// anchors are constants and stay out of the vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    n_beta: usize,
    n_inverted: usize,
    /// Measured anchor values when not free.
    measured: DVector<f64>,
    free_measured: Vec<usize>,
    measured_locations: Vec<f64>,
    inverted_locations: Vec<f64>,
}

fn anchor_name(x: f64) -> String {
    format!("anchor_{x}")
}

impl ParamLayout {
    pub fn new(scenario: &Scenario) -> Self {
        let a = &scenario.type_a;
        Self {
            n_beta: scenario.model.trend_dim(),
            n_inverted: scenario.inverted_locations.len(),
            measured: a.z.clone(),
            free_measured: (0..a.len()).filter(|&i| a.error.sd(i) > 0.0).collect(),
            measured_locations: a.locations.clone(),
            inverted_locations: scenario.inverted_locations.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        2 + self.n_beta + self.n_inverted + self.free_measured.len()
    }

    /// Position of the first inverted anchor in the inference vector.
    pub fn inverted_offset(&self) -> usize {
        2 + self.n_beta
    }

    /// Column names of the inference vector.
    pub fn names(&self) -> Vec<String> {
        let mut names = vec!["lambda".to_string(), "eta2".to_string()];
        names.extend((0..self.n_beta).map(|j| format!("beta{j}")));
        names.extend(self.inverted_locations.iter().map(|&x| anchor_name(x)));
        names.extend(self.free_measured.iter().map(|&i| anchor_name(self.measured_locations[i])));
        names
    }

    /// Column names of a parameter draw in natural form: every anchor, measured first.
    pub fn natural_names(&self) -> Vec<String> {
        let mut names = vec!["lambda".to_string(), "eta2".to_string()];
        names.extend((0..self.n_beta).map(|j| format!("beta{j}")));
        names.extend(self.measured_locations.iter().chain(&self.inverted_locations).map(|&x| anchor_name(x)));
        names
    }

    pub fn natural_row(theta: &ModelParams) -> Vec<f64> {
        let s = &theta.structural;
        let mut row = vec![s.lambda, s.eta2];
        row.extend(s.beta.iter());
        row.extend(theta.anchors.iter());
        row
    }

    pub fn encode(&self, theta: &ModelParams, t: &Transforms) -> Result<DVector<f64>> {
        let s = &theta.structural;
        let m = self.measured.len();
        let mut v = Vec::with_capacity(self.dim());
        v.push(t.lambda.apply(s.lambda)?);
        v.push(t.eta2.apply(s.eta2)?);
        for &b in s.beta.iter() {
            v.push(t.beta.apply(b)?);
        }
        for j in 0..self.n_inverted {
            v.push(t.anchors.apply(theta.anchors[m + j])?);
        }
        for &i in &self.free_measured {
            v.push(t.anchors.apply(theta.anchors[i])?);
        }
        Ok(DVector::from_vec(v))
    }

    pub fn decode(&self, v: &DVector<f64>, t: &Transforms) -> Result<ModelParams> {
        if v.len() != self.dim() {
            return Err(Error::Dimension(format!("parameter vector of length {}, layout needs {}", v.len(), self.dim())));
        }
        let beta = DVector::from_fn(self.n_beta, |j, _| t.beta.invert(v[2 + j]));
        let structural = StructuralParams::new(beta, t.eta2.invert(v[1]), t.lambda.invert(v[0]))?;
        let m = self.measured.len();
        let mut anchors = DVector::zeros(m + self.n_inverted);
        anchors.rows_mut(0, m).copy_from(&self.measured);
        let off = self.inverted_offset();
        for j in 0..self.n_inverted {
            anchors[m + j] = t.anchors.invert(v[off + j]);
        }
        for (k, &i) in self.free_measured.iter().enumerate() {
            anchors[i] = t.anchors.invert(v[off + self.n_inverted + k]);
        }
        Ok(ModelParams { structural, anchors })
    }
}

enum StructuralSource {
    /// Error-free type-A data: one posterior serves every draw.
    Fixed(StructuralPosterior),
    /// Noisy type-A data: the posterior depends on the drawn measured anchors.
    PerDraw,
    Bounded(BoundedPrior),
}

/// Draws of Θ given the type-A data.
pub struct ThetaSampler<'a> {
    scenario: &'a Scenario,
    source: StructuralSource,
}

impl<'a> ThetaSampler<'a> {
    pub fn new(scenario: &'a Scenario) -> Result<Self> {
        let source = match (scenario.kind, scenario.bounded_prior) {
            (ScenarioKind::B, Some(b)) => StructuralSource::Bounded(b),
            (ScenarioKind::B, None) => return Err(Error::Config("scenario B needs a bounded prior".into())),
            _ if scenario.type_a.error.is_none() => {
                StructuralSource::Fixed(StructuralPosterior::new(&point_data(scenario, &scenario.type_a.z)?, &scenario.prior)?)
            }
            _ => StructuralSource::PerDraw,
        };
        Ok(Self { scenario, source })
    }

    /// Draw `index` of the given stage.
    pub fn draw(&self, stage: Stage, index: u64) -> Result<ModelParams> {
        let sc = self.scenario;
        let mut rng = substream(sc.seed, stage, index);
        let measured = assign_type_a_anchors(&sc.type_a, &mut rng);
        let structural = match &self.source {
            StructuralSource::Fixed(post) => post.sample(&mut rng)?,
            StructuralSource::PerDraw => {
                StructuralPosterior::new(&point_data(sc, &measured)?, &sc.prior)?.sample(&mut rng)?
            }
            StructuralSource::Bounded(b) => {
                let grid = sc.prior.lambda_grid();
                let lambda = grid[rng.random_range(0..grid.len())];
                let eta2 = rng.random_range(b.log_eta2[0]..b.log_eta2[1]).exp();
                let beta = DVector::from_fn(sc.model.trend_dim(), |_, _| rng.random_range(b.beta[0]..b.beta[1]));
                StructuralParams::new(beta, eta2, lambda)?
            }
        };
        let anchors = sc.model.anchors();
        let mut values = DVector::zeros(anchors.len());
        values.rows_mut(0, measured.len()).copy_from(&measured);
        if anchors.n_inverted() > 0 {
            let cond = sc
                .model
                .anchor_conditional(&structural, &anchors.measured(), &measured, &anchors.inverted())?;
            let draw = cond.sample(1, &mut rng)?;
            values
                .rows_mut(measured.len(), anchors.n_inverted())
                .copy_from(&draw.row(0).transpose());
        }
        Ok(ModelParams {
            structural,
            anchors: values,
        })
    }
}

fn point_data(scenario: &Scenario, values: &DVector<f64>) -> Result<PointData> {
    let locs = scenario.type_a.locations.clone();
    let design = scenario.model.design_at(&locs)?;
    PointData::new(locs, values.clone(), design)
}

/// `count` independent draws of Θ given the type-A data; their weights are
/// all `1 / count`.
pub fn sample_theta_given_type_a(scenario: &Scenario, count: usize) -> Result<Vec<ModelParams>> {
    let sampler = ThetaSampler::new(scenario)?;
    (0..count as u64)
        .into_par_iter()
        .map(|i| sampler.draw(Stage::Theta, i))
        .collect()
}

/// Simulate a field for `theta` and run the forward model on it.
/// `Ok(None)` marks a failed forward evaluation.
fn simulate_and_run(
    scenario: &Scenario,
    theta: &ModelParams,
    field_stage: Stage,
    index: u64,
) -> Result<(GridField, Option<Vec<f64>>)> {
    let mut rng = substream(scenario.seed, field_stage, index);
    let field = scenario.model.simulate(&theta.structural, &theta.anchors, &mut rng)?;
    let natural = scenario.transforms.field.invert_all(field.as_slice());
    let out = match scenario.forward().run(&natural) {
        Ok(out) if out.iter().all(|v| v.is_finite()) => Some(out),
        Ok(_) => {
            log::debug!("draw {index}: non-finite forward output");
            None
        }
        Err(e) => {
            log::debug!("draw {index}: {e}");
            None
        }
    };
    Ok((field, out))
}

fn check_failures(failed: usize, total: usize) -> Result<()> {
    if failed as f64 > FORWARD_FAILURE_TOLERANCE * total as f64 {
        return Err(Error::TooManyForwardFailures { failed, total });
    }
    if failed > 0 {
        warn!("{failed} of {total} forward evaluations failed; those draws were discarded");
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub enum Posterior {
    /// Θ given type-A data only, sampled exactly.
    TypeA,
    Mixture(NormalMixture),
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub kind: ScenarioKind,
    pub layout: ParamLayout,
    /// Θ draws whose forward evaluation succeeded, in draw order.
    pub theta: Vec<ModelParams>,
    /// Rows of `(transformed Θ, transformed output)`, matching `theta`.
    pub joint: WeightedJointSample,
    /// Names of the output columns of `joint`.
    pub output_names: Vec<String>,
    pub posterior: Posterior,
    pub forward_failures: usize,
    pub sample_size: usize,
    pub neighbors: usize,
    pub bandwidth: f64,
    pub ess: f64,
}

/// Output components that enter the joint sample: the type-B components,
/// or the whole output when there are none.
fn output_indices(scenario: &Scenario) -> Vec<usize> {
    if scenario.type_b.is_empty() {
        (0..scenario.forward().output_len()).collect()
    } else {
        scenario.type_b.indices.clone()
    }
}

pub fn run_inversion(scenario: &Scenario) -> Result<RunArtifacts> {
    let n = scenario.sample_size;
    let layout = ParamLayout::new(scenario);
    let sampler = ThetaSampler::new(scenario)?;
    let indices = output_indices(scenario);
    let t = &scenario.transforms;
    info!("sampling {n} parameter draws ({} scenario)", scenario.kind);

    let rows: Vec<Option<(ModelParams, DVector<f64>)>> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let theta = sampler.draw(Stage::Theta, i)?;
            let (_, out) = simulate_and_run(scenario, &theta, Stage::Field, i)?;
            let Some(out) = out else { return Ok(None) };
            let selected = DVector::from_iterator(indices.len(), indices.iter().map(|&j| out[j]));
            let error = if scenario.type_b.is_empty() { &crate::data::ErrorDist::None } else { &scenario.type_b.error };
            let perturbed = perturb_forward_output(&selected, error, &mut substream(scenario.seed, Stage::Perturb, i))?;
            let Ok(out_t) = t.output.apply_all(perturbed.as_slice()) else {
                log::debug!("draw {i}: forward output outside the output transform's domain");
                return Ok(None);
            };
            let p = layout.encode(&theta, t)?;
            let xi = DVector::from_iterator(p.len() + out_t.len(), p.iter().copied().chain(out_t));
            Ok(Some((theta, xi)))
        })
        .collect::<Result<_>>()?;

    let forward_failures = rows.iter().filter(|r| r.is_none()).count();
    check_failures(forward_failures, n)?;
    let (theta, xis): (Vec<_>, Vec<_>) = rows.into_iter().flatten().unzip();
    let dim = layout.dim() + indices.len();
    let points = DMatrix::from_fn(xis.len(), dim, |i, j| xis[i][j]);
    let joint = WeightedJointSample::uniform(points, layout.dim())?;
    let output_names = indices.iter().map(|j| format!("out_{j}")).collect();

    let mut neighbors = scenario.neighbors();
    let (posterior, ess) = match scenario.kind {
        ScenarioKind::A => (Posterior::TypeA, theta.len() as f64),
        ScenarioKind::AB | ScenarioKind::B => {
            if neighbors + 1 > joint.len() {
                neighbors = joint.len() - 1;
                warn!("only {} usable draws; using {neighbors} neighbors", joint.len());
            }
            info!("building the mixture: {} components, k = {neighbors}, h = {}", joint.len(), scenario.bandwidth);
            let joint_mix = build_kde(&joint, neighbors, scenario.bandwidth)?;
            let z_b = DVector::from_vec(t.output.apply_all(scenario.type_b.z.as_slice())?);
            let mix = joint_mix.condition(layout.dim(), &z_b)?;
            let ess = mix.effective_sample_size();
            (Posterior::Mixture(mix), ess)
        }
    };
    if ess < ESS_WARNING {
        warn!("effective sample size {ess:.1} is below {ESS_WARNING}");
    }
    info!("effective sample size {ess:.1}");
    Ok(RunArtifacts {
        kind: scenario.kind,
        layout,
        theta,
        joint,
        output_names,
        posterior,
        forward_failures,
        sample_size: n,
        neighbors,
        bandwidth: scenario.bandwidth,
        ess,
    })
}

#[derive(Debug, Clone, Default)]
pub struct PosteriorDraws {
    pub params: Vec<ModelParams>,
    /// Fields in model unit.
    pub fields: Vec<GridField>,
    /// Full forward outputs.
    pub outputs: Vec<Vec<f64>>,
    pub failures: usize,
}

/// Posterior parameter draws, one field realization each, and its forward
/// reproduction. Draws whose forward evaluation fails are dropped.
pub fn draw_posterior_fields(scenario: &Scenario, posterior: &Posterior, count: usize) -> Result<PosteriorDraws> {
    if count == 0 {
        return Ok(PosteriorDraws::default());
    }
    let layout = ParamLayout::new(scenario);
    let params: Vec<ModelParams> = match posterior {
        Posterior::TypeA => {
            let sampler = ThetaSampler::new(scenario)?;
            (0..count as u64)
                .into_par_iter()
                .map(|i| sampler.draw(Stage::Posterior, i))
                .collect::<Result<_>>()?
        }
        Posterior::Mixture(mix) => {
            if mix.dim() != layout.dim() {
                return Err(Error::Dimension(format!(
                    "posterior mixture has dimension {}, the scenario needs {}",
                    mix.dim(),
                    layout.dim()
                )));
            }
            let sampler = mix.sampler()?;
            (0..count as u64)
                .into_par_iter()
                .map(|i| {
                    let (_, v) = sampler.draw(&mut substream(scenario.seed, Stage::Posterior, i));
                    layout.decode(&v, &scenario.transforms)
                })
                .collect::<Result<_>>()?
        }
    };
    let runs: Vec<(GridField, Option<Vec<f64>>)> = params
        .par_iter()
        .enumerate()
        .map(|(i, theta)| simulate_and_run(scenario, theta, Stage::PosteriorField, i as u64))
        .collect::<Result<_>>()?;
    let mut draws = PosteriorDraws::default();
    for (theta, (field, out)) in params.into_iter().zip(runs) {
        match out {
            Some(out) => {
                draws.params.push(theta);
                draws.fields.push(field);
                draws.outputs.push(out);
            }
            None => draws.failures += 1,
        }
    }
    check_failures(draws.failures, count)?;
    Ok(draws)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReproductionRow {
    pub index: usize,
    pub observed: f64,
    /// 5, 25, 50, 75 and 95% quantiles.
    pub quantiles: [f64; 5],
    /// Observed value inside the 5–95% band.
    pub covered: bool,
}

pub const REPRODUCTION_LEVELS: [f64; 5] = [0.05, 0.25, 0.5, 0.75, 0.95];

/// Quantile with linear interpolation between order statistics
/// (`h = (n − 1) p`). `sorted` must be ascending and nonempty.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Per-component quantiles of the reproductions and coverage of the data.
/// `reproductions` holds full forward outputs; `indices` picks the observed
/// components, matching `observed`.
pub fn reproduction_stats(reproductions: &[Vec<f64>], indices: &[usize], observed: &DVector<f64>) -> Result<Vec<ReproductionRow>> {
    if reproductions.is_empty() {
        return Err(Error::Invalid("no reproductions".into()));
    }
    if indices.len() != observed.len() {
        return Err(Error::Dimension("indices and observed values differ in length".into()));
    }
    indices
        .iter()
        .zip(observed.iter())
        .map(|(&j, &z)| {
            let mut col = reproductions
                .iter()
                .map(|r| {
                    r.get(j)
                        .copied()
                        .ok_or_else(|| Error::Dimension(format!("reproduction lacks component {j}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            col.sort_by(f64::total_cmp);
            let quantiles = REPRODUCTION_LEVELS.map(|p| quantile(&col, p));
            Ok(ReproductionRow {
                index: j,
                observed: z,
                quantiles,
                covered: quantiles[0] <= z && z <= quantiles[4],
            })
        })
        .collect()
}

/// Run `f` on a pool of `workers` threads (all cores when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub const MIXTURE_FILE: &str = "mixture.txt";

impl RunArtifacts {
    /// Writes `structural_sample.csv`, `joint_sample.csv` and, when
    /// conditioned, `mixture.txt`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut header = vec!["draw".to_string()];
        header.extend(self.layout.natural_names());
        let rows = self.theta.iter().enumerate().map(|(i, t)| {
            let mut r = vec![i as f64];
            r.extend(ParamLayout::natural_row(t));
            r
        });
        output::write_csv(&dir.join("structural_sample.csv"), &header, rows)?;

        let mut header = vec!["draw".to_string()];
        header.extend(self.layout.names());
        header.extend(self.output_names.iter().cloned());
        let pts = self.joint.points();
        let rows = (0..pts.nrows()).map(|i| {
            let mut r = vec![i as f64];
            r.extend(pts.row(i).iter());
            r
        });
        output::write_csv(&dir.join("joint_sample.csv"), &header, rows)?;

        if let Posterior::Mixture(mix) = &self.posterior {
            let text = format!("# parameters: {}\n{}", self.layout.names().join(" "), mix.to_text());
            std::fs::write(dir.join(MIXTURE_FILE), text)?;
        }
        Ok(())
    }

    pub fn log_text(&self, seed: u64, forward_calls: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "scenario = {}", self.kind);
        let _ = writeln!(s, "seed = {seed}");
        let _ = writeln!(s, "n = {}", self.sample_size);
        let _ = writeln!(s, "k = {}", self.neighbors);
        let _ = writeln!(s, "h = {}", self.bandwidth);
        let _ = writeln!(s, "ess = {}", self.ess);
        let _ = writeln!(s, "forward_failures = {}", self.forward_failures);
        let _ = writeln!(s, "forward_calls = {forward_calls}");
        if self.ess < ESS_WARNING {
            let _ = writeln!(s, "warning = effective sample size below {ESS_WARNING}");
        }
        s
    }
}

/// Reads a mixture written by [`RunArtifacts::write`], with its parameter names.
pub fn read_mixture(path: &Path) -> Result<(Vec<String>, NormalMixture)> {
    let text = std::fs::read_to_string(path)?;
    let names = text
        .lines()
        .find_map(|l| l.strip_prefix("# parameters:"))
        .map(|l| l.split_whitespace().map(String::from).collect())
        .unwrap_or_default();
    Ok((names, NormalMixture::from_text(&text)?))
}

impl PosteriorDraws {
    /// Writes `posterior_draws.csv`, `fields.csv` (natural unit) and
    /// `reproductions.csv`.
    pub fn write(&self, dir: &Path, layout: &ParamLayout, scenario: &Scenario) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut header = vec!["draw".to_string()];
        header.extend(layout.natural_names());
        let rows = self.params.iter().enumerate().map(|(i, t)| {
            let mut r = vec![i as f64];
            r.extend(ParamLayout::natural_row(t));
            r
        });
        output::write_csv(&dir.join("posterior_draws.csv"), &header, rows)?;

        let mut header = vec!["draw".to_string()];
        header.extend(scenario.model.grid().locations().iter().map(|x| format!("y_{x}")));
        let rows = self.fields.iter().enumerate().map(|(i, f)| {
            let mut r = vec![i as f64];
            r.extend(scenario.transforms.field.invert_all(f.as_slice()));
            r
        });
        output::write_csv(&dir.join("fields.csv"), &header, rows)?;

        let len = scenario.forward().output_len();
        let mut header = vec!["draw".to_string()];
        header.extend((0..len).map(|j| format!("out_{j}")));
        let rows = self.outputs.iter().enumerate().map(|(i, o)| {
            let mut r = vec![i as f64];
            r.extend(o.iter());
            r
        });
        output::write_csv(&dir.join("reproductions.csv"), &header, rows)
    }
}

pub fn write_stats(path: &Path, rows: &[ReproductionRow]) -> Result<()> {
    let header = ["component", "observed", "q05", "q25", "q50", "q75", "q95", "covered"];
    let rows = rows.iter().map(|r| {
        let mut v = vec![r.index as f64, r.observed];
        v.extend(r.quantiles);
        v.push(if r.covered { 1.0 } else { 0.0 });
        v
    });
    output::write_csv(path, &header, rows)
}
