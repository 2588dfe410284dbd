//! Normal-mixture approximation of a weighted joint sample of
//! (transformed parameters, forward outputs), and its conditioning on
//! observed forward outputs.
//!
//! Each sample point carries a Gaussian kernel whose covariance is the
//! sample covariance of its nearest neighbors under the Mahalanobis metric
//! of the whole sample. Conditioning a mixture on its trailing coordinates
//! yields another mixture with reweighted components.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mvn::{self, MvnDist};

/// Neighbor count used when none is configured.
pub const DEFAULT_NEIGHBORS: usize = 500;

/// `k = min(500, n − 1)`.
pub fn default_neighbors(n: usize) -> usize {
    DEFAULT_NEIGHBORS.min(n.saturating_sub(1))
}

/// Points `ξᵢ = (Θᵢ, Mᵢ)` with normalized weights; the first `split`
/// coordinates are parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedJointSample {
    points: DMatrix<f64>,
    weights: Vec<f64>,
    split: usize,
}

impl WeightedJointSample {
    pub fn new(points: DMatrix<f64>, weights: Vec<f64>, split: usize) -> Result<Self> {
        if weights.len() != points.nrows() {
            return Err(Error::Dimension(format!(
                "{} weights for {} points",
                weights.len(),
                points.nrows()
            )));
        }
        if split > points.ncols() {
            return Err(Error::Dimension(format!(
                "split {split} beyond dimension {}",
                points.ncols()
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("joint sample contains non-finite values".into()));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Invalid("weights must be finite and nonnegative".into()));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Invalid("weights sum to zero".into()));
        }
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self {
            points,
            weights,
            split,
        })
    }

    pub fn uniform(points: DMatrix<f64>, split: usize) -> Result<Self> {
        let n = points.nrows();
        Self::new(points, vec![1.0; n], split)
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    pub fn split(&self) -> usize {
        self.split
    }

    pub fn points(&self) -> &DMatrix<f64> {
        &self.points
    }

    pub fn point(&self, i: usize) -> DVector<f64> {
        self.points.row(i).transpose()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weighted mean and covariance of the rows in `rows`.
    fn covariance_of(&self, rows: &[usize]) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.dim();
        let total: f64 = rows.iter().map(|&r| self.weights[r]).sum();
        if !(total > 0.0) {
            return Err(Error::Numerical("neighborhood has zero total weight".into()));
        }
        let mut mean = DVector::zeros(d);
        for &r in rows {
            mean.axpy(self.weights[r] / total, &self.points.row(r).transpose(), 1.0);
        }
        let sum_sq: f64 = rows.iter().map(|&r| (self.weights[r] / total).powi(2)).sum();
        let denom = 1.0 - sum_sq;
        if !(denom > 0.0) {
            return Err(Error::Numerical("neighborhood has a single effective point".into()));
        }
        let mut centered = DMatrix::zeros(rows.len(), d);
        for (k, &r) in rows.iter().enumerate() {
            let scale = (self.weights[r] / total).sqrt();
            for j in 0..d {
                centered[(k, j)] = (self.points[(r, j)] - mean[j]) * scale;
            }
        }
        let mut cov = centered.tr_mul(&centered) / denom;
        mvn::symmetrize(&mut cov);
        Ok((mean, cov))
    }

    /// Weighted mean and covariance of the whole sample.
    pub fn global_covariance(&self) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let rows: Vec<usize> = (0..self.len()).collect();
        self.covariance_of(&rows)
    }
}

/// Sample points whitened by the global covariance, so Euclidean distance
/// between rows is Mahalanobis distance between the original points.
#[derive(Debug, Clone)]
pub struct NeighborIndex<'a> {
    sample: &'a WeightedJointSample,
    whitened: Vec<f64>,
}

impl<'a> NeighborIndex<'a> {
    pub fn new(sample: &'a WeightedJointSample) -> Result<Self> {
        let d = sample.dim();
        let (mean, cov) = sample.global_covariance()?;
        let scale = cov.diagonal().amax();
        if let Some(j) = (0..d).find(|&j| !(cov[(j, j)] > 1e-12 * scale)) {
            return Err(Error::Numerical(format!(
                "degenerate global covariance: coordinate {j} has no spread"
            )));
        }
        let chol = mvn::cholesky(&cov, "global sample covariance")
            .map_err(|_| Error::Numerical("degenerate global covariance".into()))?;
        let l = chol.l_dirty();
        let mut whitened = Vec::with_capacity(sample.len() * d);
        for i in 0..sample.len() {
            let mut x = sample.point(i) - &mean;
            l.solve_lower_triangular_mut(&mut x);
            whitened.extend(x.iter());
        }
        Ok(Self { sample, whitened })
    }

    /// Point `i` together with its `k` nearest other points, in ascending
    /// index order. Ties in distance go to the lower index.
    pub fn neighborhood(&self, i: usize, k: usize) -> Vec<usize> {
        let d = self.sample.dim();
        let n = self.sample.len();
        let xi = &self.whitened[i * d..(i + 1) * d];
        let mut dist: Vec<(f64, usize)> = (0..n)
            .filter(|&j| j != i)
            .map(|j| {
                let xj = &self.whitened[j * d..(j + 1) * d];
                let d2: f64 = xi.iter().zip(xj).map(|(a, b)| (a - b) * (a - b)).sum();
                (d2, j)
            })
            .collect();
        let k = k.min(dist.len());
        let by_distance = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if k < dist.len() && k > 0 {
            dist.select_nth_unstable_by(k - 1, by_distance);
        }
        let mut rows: Vec<usize> = dist[..k].iter().map(|&(_, j)| j).collect();
        rows.push(i);
        rows.sort_unstable();
        rows
    }

    /// Weighted covariance of the neighborhood of point `i`, centered on the
    /// neighborhood mean.
    pub fn local_covariance(&self, i: usize, k: usize) -> Result<DMatrix<f64>> {
        let rows = self.neighborhood(i, k);
        Ok(self.sample.covariance_of(&rows)?.1)
    }
}

fn check_neighbors(sample: &WeightedJointSample, k: usize) -> Result<()> {
    let d = sample.dim();
    if k < d + 2 {
        return Err(Error::Invalid(format!(
            "{k} neighbors cannot support a {d}-dimensional covariance (need at least {})",
            d + 2
        )));
    }
    if sample.len() < k + 1 {
        return Err(Error::Invalid(format!(
            "{} sample points cannot supply {k} neighbors",
            sample.len()
        )));
    }
    Ok(())
}

pub fn local_covariance(sample: &WeightedJointSample, i: usize, k: usize) -> Result<DMatrix<f64>> {
    check_neighbors(sample, k)?;
    if i >= sample.len() {
        return Err(Error::Invalid(format!("point {i} outside a sample of {}", sample.len())));
    }
    NeighborIndex::new(sample)?.local_covariance(i, k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalMixture {
    dim: usize,
    components: Vec<MixtureComponent>,
}

/// One kernel per sample point: mean `ξᵢ`, covariance `h Σᵢ` with `Σᵢ` the
/// local neighbor covariance, weight `wᵢ`.
pub fn build_kde(sample: &WeightedJointSample, k: usize, bandwidth: f64) -> Result<NormalMixture> {
    if !(bandwidth > 0.0 && bandwidth.is_finite()) {
        return Err(Error::Invalid(format!("bandwidth must be positive, got {bandwidth}")));
    }
    check_neighbors(sample, k)?;
    let index = NeighborIndex::new(sample)?;
    let covs = (0..sample.len())
        .into_par_iter()
        .map(|i| index.local_covariance(i, k))
        .collect::<Result<Vec<_>>>()?;
    NormalMixture::from_kernels(sample, covs, bandwidth)
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

impl NormalMixture {
    pub fn new(components: Vec<MixtureComponent>) -> Result<Self> {
        Self::validated(components, true)
    }

    /// With `normalize` false, weights already summing to one within 1e-9 are
    /// kept bit for bit.
    fn validated(components: Vec<MixtureComponent>, normalize: bool) -> Result<Self> {
        let dim = components
            .first()
            .map(|c| c.mean.len())
            .ok_or_else(|| Error::Invalid("a mixture needs at least one component".into()))?;
        for (i, c) in components.iter().enumerate() {
            if c.mean.len() != dim || c.cov.nrows() != dim || c.cov.ncols() != dim {
                return Err(Error::Dimension(format!("component {i} does not have dimension {dim}")));
            }
            if !(c.weight.is_finite() && c.weight >= 0.0) {
                return Err(Error::Invalid(format!("component {i} has weight {}", c.weight)));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if !(total > 0.0) {
            return Err(Error::Invalid("mixture weights sum to zero".into()));
        }
        if !normalize && (total - 1.0).abs() < 1e-9 {
            return Ok(Self { dim, components });
        }
        let components = components
            .into_iter()
            .map(|c| MixtureComponent {
                weight: c.weight / total,
                ..c
            })
            .collect();
        Ok(Self { dim, components })
    }

    /// Kernels centered on the sample points with covariances `h · covs[i]`.
    pub fn from_kernels(sample: &WeightedJointSample, covs: Vec<DMatrix<f64>>, bandwidth: f64) -> Result<Self> {
        if covs.len() != sample.len() {
            return Err(Error::Dimension("one kernel covariance per sample point".into()));
        }
        let components = covs
            .into_iter()
            .enumerate()
            .map(|(i, cov)| MixtureComponent {
                weight: sample.weights()[i],
                mean: sample.point(i),
                cov: cov * bandwidth,
            })
            .collect();
        Self::new(components)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn components(&self) -> &[MixtureComponent] {
        &self.components
    }

    pub fn weights(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.weight).collect()
    }

    pub fn effective_sample_size(&self) -> f64 {
        effective_sample_size(&self.weights())
    }

    /// Condition on the trailing coordinates `split..` equal to `observed`.
    ///
    /// Component weights become `wᵢ φ(z; μ₂ᵢ, Σ₂₂ᵢ)`, computed in log space.
    /// Components whose weight underflows to zero are dropped.
    pub fn condition(&self, split: usize, observed: &DVector<f64>) -> Result<NormalMixture> {
        if split > self.dim || observed.len() != self.dim - split {
            return Err(Error::Dimension(format!(
                "conditioning a {}-dimensional mixture at {split} on {} values",
                self.dim,
                observed.len()
            )));
        }
        let q = self.dim - split;
        let parts = self
            .components
            .par_iter()
            .map(|c| -> Result<(f64, f64, MixtureComponent)> {
                let mu2 = c.mean.rows(split, q).into_owned();
                let s22 = c.cov.view((split, split), (q, q)).into_owned();
                let chol = mvn::cholesky(&s22, "Σ₂₂").map_err(|_| {
                    Error::SingularConditioning("a component's data block is singular".into())
                })?;
                let resid = observed - &mu2;
                let log_phi = mvn::log_density_with(&chol, &resid);
                let dist = MvnDist::from_parts(c.mean.clone(), c.cov.clone());
                let (mean, cov) = dist.condition_partitioned(split, observed)?.into_parts();
                let log_w = c.weight.ln() + log_phi;
                Ok((log_w, log_phi, MixtureComponent { weight: 0.0, mean, cov }))
            })
            .collect::<Result<Vec<_>>>()?;
        let max = parts
            .iter()
            .map(|p| p.0)
            .filter(|v| !v.is_nan())
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            let (nearest, log_weight) = parts
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.1.is_nan())
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .map(|(i, p)| (i, p.0))
                .unwrap_or((0, f64::NAN));
            return Err(Error::EmptyPosterior { nearest, log_weight });
        }
        let components: Vec<MixtureComponent> = parts
            .into_iter()
            .filter_map(|(log_w, _, mut c)| {
                let w = (log_w - max).exp();
                (w > 0.0).then(|| {
                    c.weight = w;
                    c
                })
            })
            .collect();
        Self::new(components)
    }

    /// Exact marginal over the listed coordinates.
    pub fn marginal(&self, coords: &[usize]) -> Result<NormalMixture> {
        if coords.is_empty() {
            return Err(Error::Invalid("marginal needs at least one coordinate".into()));
        }
        if let Some(&c) = coords.iter().find(|&&c| c >= self.dim) {
            return Err(Error::Dimension(format!("coordinate {c} beyond dimension {}", self.dim)));
        }
        let m = coords.len();
        let components = self
            .components
            .iter()
            .map(|c| MixtureComponent {
                weight: c.weight,
                mean: DVector::from_fn(m, |i, _| c.mean[coords[i]]),
                cov: DMatrix::from_fn(m, m, |i, j| c.cov[(coords[i], coords[j])]),
            })
            .collect();
        Ok(Self {
            dim: m,
            components,
        })
    }

    fn factors(&self) -> Result<Vec<nalgebra::Cholesky<f64, nalgebra::Dyn>>> {
        self.components
            .iter()
            .map(|c| mvn::cholesky(&c.cov, "component covariance"))
            .collect()
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.log_densities(std::slice::from_ref(x))?[0])
    }

    /// Log density at each point, sharing the component factorizations.
    pub fn log_densities(&self, points: &[DVector<f64>]) -> Result<Vec<f64>> {
        if let Some(p) = points.iter().find(|p| p.len() != self.dim) {
            return Err(Error::Dimension(format!(
                "point of length {} for a {}-dimensional mixture",
                p.len(),
                self.dim
            )));
        }
        let factors = self.factors()?;
        Ok(points
            .par_iter()
            .map(|x| {
                let terms: Vec<f64> = self
                    .components
                    .iter()
                    .zip(&factors)
                    .filter(|(c, _)| c.weight > 0.0)
                    .map(|(c, f)| c.weight.ln() + mvn::log_density_with(f, &(x - &c.mean)))
                    .collect();
                log_sum_exp(&terms)
            })
            .collect())
    }

    /// Density of the marginal over `coords`, evaluated at each point.
    pub fn marginal_density(&self, coords: &[usize], points: &[DVector<f64>]) -> Result<Vec<f64>> {
        Ok(self
            .marginal(coords)?
            .log_densities(points)?
            .into_iter()
            .map(f64::exp)
            .collect())
    }

    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(self.dim);
        for c in &self.components {
            m.axpy(c.weight, &c.mean, 1.0);
        }
        m
    }

    pub fn covariance(&self) -> DMatrix<f64> {
        let mean = self.mean();
        let mut cov = DMatrix::zeros(self.dim, self.dim);
        for c in &self.components {
            let dm = &c.mean - &mean;
            cov += (&c.cov + &dm * dm.transpose()) * c.weight;
        }
        cov
    }

    pub fn sampler(&self) -> Result<MixtureSampler<'_>> {
        let index = WeightedIndex::new(self.weights()).map_err(|e| Error::Numerical(e.to_string()))?;
        let factors = self
            .components
            .iter()
            .map(|c| mvn::sampling_factor(&c.cov))
            .collect::<Result<Vec<_>>>()?;
        Ok(MixtureSampler {
            mixture: self,
            index,
            factors,
        })
    }

    /// `count` draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let sampler = self.sampler()?;
        let mut out = DMatrix::zeros(count, self.dim);
        for r in 0..count {
            out.row_mut(r).copy_from(&sampler.draw(rng).1.transpose());
        }
        Ok(out)
    }

    /// Text form: a `normal_mixture <dim> <count>` header, then per component
    /// a weight line, a mean line and `dim` covariance rows.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "normal_mixture {} {}", self.dim, self.components.len());
        let join = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| format!("{v:e}")).collect::<Vec<_>>().join(" ")
        };
        for c in &self.components {
            let _ = writeln!(s, "{:e}", c.weight);
            let _ = writeln!(s, "{}", join(&mut c.mean.iter().copied()));
            for row in c.cov.row_iter() {
                let _ = writeln!(s, "{}", join(&mut row.iter().copied()));
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#'));
        let bad = |m: &str| Error::Invalid(format!("mixture text: {m}"));
        let header: Vec<&str> = lines.next().ok_or_else(|| bad("empty"))?.split_whitespace().collect();
        let (dim, count) = match header.as_slice() {
            ["normal_mixture", d, n] => (
                d.parse::<usize>().map_err(|_| bad("bad dimension"))?,
                n.parse::<usize>().map_err(|_| bad("bad component count"))?,
            ),
            _ => return Err(bad("missing header")),
        };
        let mut row = |len: usize| -> Result<Vec<f64>> {
            let vals = lines
                .next()
                .ok_or_else(|| bad("truncated"))?
                .split_whitespace()
                .map(|v| v.parse::<f64>().map_err(|_| bad(&format!("bad number {v:?}"))))
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != len {
                return Err(bad(&format!("expected {len} values, found {}", vals.len())));
            }
            Ok(vals)
        };
        let mut components = Vec::with_capacity(count);
        for _ in 0..count {
            let weight = row(1)?[0];
            let mean = DVector::from_vec(row(dim)?);
            let mut cov = DMatrix::zeros(dim, dim);
            for i in 0..dim {
                cov.row_mut(i).copy_from_slice(&row(dim)?);
            }
            components.push(MixtureComponent { weight, mean, cov });
        }
        Self::validated(components, false)
    }
}

/// Precomputed categorical index and kernel factors for repeated draws.
pub struct MixtureSampler<'a> {
    mixture: &'a NormalMixture,
    index: WeightedIndex<f64>,
    factors: Vec<DMatrix<f64>>,
}

impl MixtureSampler<'_> {
    /// Component index and the draw.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let i = self.index.sample(rng);
        let c = &self.mixture.components[i];
        let z = mvn::standard_normal_vector(self.mixture.dim, rng);
        (i, &c.mean + &self.factors[i] * z)
    }
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}
