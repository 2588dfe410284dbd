//! Gaussian field on a 1-D grid, parameterized by structural parameters and
//! anchors (linear functionals of the discretized field).

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::mvn::{self, MvnDist};

/// Discretized field values, one per grid node, in model unit.
pub type GridField = DVector<f64>;

/// Isotropic exponential correlation without nugget.
pub fn exp_correlation(x1: f64, x2: f64, lambda: f64) -> f64 {
    (-(x1 - x2).abs() / lambda).exp()
}

pub fn correlation_matrix(a: &[f64], b: &[f64], lambda: f64) -> DMatrix<f64> {
    DMatrix::from_fn(a.len(), b.len(), |i, j| exp_correlation(a[i], b[j], lambda))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    locations: Vec<f64>,
    domain_length: f64,
}

impl Grid1D {
    pub fn new(locations: Vec<f64>, domain_length: f64) -> Result<Self> {
        if locations.len() < 2 {
            return Err(Error::Invalid("a grid needs at least two nodes".into()));
        }
        if locations.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Invalid("grid locations must be strictly increasing".into()));
        }
        if !(domain_length > 0.0) {
            return Err(Error::Invalid("domain length must be positive".into()));
        }
        Ok(Self {
            locations,
            domain_length,
        })
    }

    /// Nodes at `1, 2, ..., size` on a domain of length `size`.
    pub fn regular(size: usize) -> Result<Self> {
        Self::new((1..=size).map(|i| i as f64).collect(), size as f64)
    }

    pub fn len(&self) -> usize {
        self.locations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locations.is_empty()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn domain_length(&self) -> f64 {
        self.domain_length
    }

    /// Index of the node at coordinate `x`.
    pub fn node_index(&self, x: f64) -> Result<usize> {
        self.locations
            .iter()
            .position(|&l| (l - x).abs() <= 1e-9 * l.abs().max(1.0))
            .ok_or_else(|| Error::Invalid(format!("{x} is not a grid node")))
    }

    pub fn selector_row(&self, x: f64) -> Result<DVector<f64>> {
        let mut row = DVector::zeros(self.len());
        row[self.node_index(x)?] = 1.0;
        Ok(row)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StructuralParams {
    /// Trend coefficients, model unit.
    pub beta: DVector<f64>,
    /// Variance η².
    pub eta2: f64,
    /// Range λ of the exponential correlation.
    pub lambda: f64,
}

impl StructuralParams {
    pub fn new(beta: DVector<f64>, eta2: f64, lambda: f64) -> Result<Self> {
        if !(eta2 > 0.0) || !eta2.is_finite() {
            return Err(Error::Invalid(format!("variance must be positive, got {eta2}")));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::Invalid(format!("range must be positive, got {lambda}")));
        }
        Ok(Self { beta, eta2, lambda })
    }

    pub fn constant_mean(beta: f64, eta2: f64, lambda: f64) -> Result<Self> {
        Self::new(DVector::from_element(1, beta), eta2, lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnchorKind {
    /// Value supplied by type-A data.
    Measured,
    /// Value inferred from type-B data.
    Inverted,
}

/// Anchor functionals `H`: measured rows first, then inverted rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    h: DMatrix<f64>,
    n_measured: usize,
}

impl AnchorSet {
    pub fn new(measured: DMatrix<f64>, inverted: DMatrix<f64>) -> Result<Self> {
        if measured.ncols() != inverted.ncols() {
            return Err(Error::Dimension(format!(
                "measured anchors have {} columns, inverted anchors {}",
                measured.ncols(),
                inverted.ncols()
            )));
        }
        let g = measured.ncols();
        let m = measured.nrows() + inverted.nrows();
        let mut h = DMatrix::zeros(m, g);
        h.view_mut((0, 0), (measured.nrows(), g)).copy_from(&measured);
        h.view_mut((measured.nrows(), 0), (inverted.nrows(), g))
            .copy_from(&inverted);
        for (i, row) in h.row_iter().enumerate() {
            if row.iter().all(|&v| v == 0.0) {
                return Err(Error::Invalid(format!("anchor row {i} is zero")));
            }
        }
        if m > 1 {
            if m > g {
                return Err(Error::Invalid(format!("{m} anchors on a {g}-node grid")));
            }
            let sv = h.clone().svd(false, false).singular_values;
            let max = sv.max();
            if sv.min() <= 1e-8 * max {
                return Err(Error::Invalid(
                    "anchor functionals are duplicated or linearly dependent".into(),
                ));
            }
        }
        Ok(Self {
            h,
            n_measured: measured.nrows(),
        })
    }

    /// Anchor points: unit selectors at the given grid coordinates.
    pub fn points(grid: &Grid1D, measured: &[f64], inverted: &[f64]) -> Result<Self> {
        let rows = |xs: &[f64]| -> Result<DMatrix<f64>> {
            let mut m = DMatrix::zeros(xs.len(), grid.len());
            for (r, &x) in xs.iter().enumerate() {
                m[(r, grid.node_index(x)?)] = 1.0;
            }
            Ok(m)
        };
        Self::new(rows(measured)?, rows(inverted)?)
    }

    pub fn empty(grid_len: usize) -> Self {
        Self {
            h: DMatrix::zeros(0, grid_len),
            n_measured: 0,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    pub fn n_measured(&self) -> usize {
        self.n_measured
    }

    pub fn n_inverted(&self) -> usize {
        self.h.nrows() - self.n_measured
    }

    pub fn kind(&self, row: usize) -> AnchorKind {
        if row < self.n_measured {
            AnchorKind::Measured
        } else {
            AnchorKind::Inverted
        }
    }

    pub fn measured(&self) -> DMatrix<f64> {
        self.h.rows(0, self.n_measured).into_owned()
    }

    pub fn inverted(&self) -> DMatrix<f64> {
        self.h.rows(self.n_measured, self.n_inverted()).into_owned()
    }
}

/// Θ = (θ, ϑ). Anchor values follow the row order of the [`AnchorSet`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub structural: StructuralParams,
    pub anchors: DVector<f64>,
}

/// Grid, trend design matrix and anchor functionals of one field model.
#[derive(Debug, Clone)]
pub struct FieldModel {
    grid: Grid1D,
    design: DMatrix<f64>,
    anchors: AnchorSet,
}

impl FieldModel {
    pub fn new(grid: Grid1D, design: DMatrix<f64>, anchors: AnchorSet) -> Result<Self> {
        if design.nrows() != grid.len() {
            return Err(Error::Dimension(format!(
                "design matrix has {} rows for {} grid nodes",
                design.nrows(),
                grid.len()
            )));
        }
        if anchors.matrix().ncols() != grid.len() {
            return Err(Error::Dimension(format!(
                "anchor functionals have {} columns for {} grid nodes",
                anchors.matrix().ncols(),
                grid.len()
            )));
        }
        Ok(Self {
            grid,
            design,
            anchors,
        })
    }

    /// Constant trend: a single column of ones.
    pub fn constant_mean(grid: Grid1D, anchors: AnchorSet) -> Result<Self> {
        let design = DMatrix::from_element(grid.len(), 1, 1.0);
        Self::new(grid, design, anchors)
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn trend_dim(&self) -> usize {
        self.design.ncols()
    }

    /// Design rows at the given grid coordinates.
    pub fn design_at(&self, xs: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(xs.len(), self.trend_dim());
        for (r, &x) in xs.iter().enumerate() {
            out.row_mut(r)
                .copy_from(&self.design.row(self.grid.node_index(x)?));
        }
        Ok(out)
    }

    fn check_structural(&self, s: &StructuralParams) -> Result<()> {
        if s.beta.len() != self.trend_dim() {
            return Err(Error::Dimension(format!(
                "{} trend coefficients for a {}-column design",
                s.beta.len(),
                self.trend_dim()
            )));
        }
        Ok(())
    }

    fn correlation(&self, lambda: f64) -> DMatrix<f64> {
        let x = self.grid.locations();
        correlation_matrix(x, x, lambda)
    }

    /// `N(Xβ, η² R)`.
    pub fn prior_dist(&self, s: &StructuralParams) -> Result<MvnDist> {
        self.check_structural(s)?;
        let mean = &self.design * &s.beta;
        let cov = self.correlation(s.lambda) * s.eta2;
        Ok(MvnDist::from_parts(mean, cov))
    }

    fn check_values(&self, values: &DVector<f64>) -> Result<()> {
        if values.len() != self.anchors.len() {
            return Err(Error::Dimension(format!(
                "{} anchor values for {} anchors",
                values.len(),
                self.anchors.len()
            )));
        }
        Ok(())
    }

    /// Field law given Θ: the prior conditioned on `H ỹ = ϑ`.
    pub fn anchored_dist(&self, s: &StructuralParams, values: &DVector<f64>) -> Result<MvnDist> {
        self.check_values(values)?;
        self.prior_dist(s)?
            .condition_on_linear(self.anchors.matrix(), values)
    }

    /// One draw from [`FieldModel::anchored_dist`].
    ///
    /// An unconditional draw is corrected by `R Hᵀ (H R Hᵀ)⁻¹ (ϑ − H y)`, which
    /// reproduces the anchors exactly instead of factoring the singular
    /// conditional covariance.
    pub fn simulate<R: Rng + ?Sized>(
        &self,
        s: &StructuralParams,
        values: &DVector<f64>,
        rng: &mut R,
    ) -> Result<GridField> {
        self.check_structural(s)?;
        self.check_values(values)?;
        let corr = self.correlation(s.lambda);
        let factor = mvn::cholesky(&corr, "field correlation")?.unpack();
        let z = mvn::standard_normal_vector(self.grid.len(), rng);
        let mut y = &self.design * &s.beta + factor * z * s.eta2.sqrt();
        if self.anchors.is_empty() {
            return Ok(y);
        }
        let h = self.anchors.matrix();
        let h_corr = h * &corr;
        let s_hh = &h_corr * h.transpose();
        let chol = mvn::conditioning_cholesky(&s_hh, "H R Hᵀ")?;
        let resid = values - h * &y;
        y += h_corr.tr_mul(&chol.solve(&resid));
        Ok(y)
    }

    /// Law of `query · ỹ` given `known · ỹ = known_values`, under the prior.
    pub fn anchor_conditional(
        &self,
        s: &StructuralParams,
        known: &DMatrix<f64>,
        known_values: &DVector<f64>,
        query: &DMatrix<f64>,
    ) -> Result<MvnDist> {
        let g = self.grid.len();
        if known.ncols() != g || query.ncols() != g {
            return Err(Error::Dimension("anchor functionals must span the grid".into()));
        }
        let (nq, nk) = (query.nrows(), known.nrows());
        let mut stacked = DMatrix::zeros(nq + nk, g);
        stacked.rows_mut(0, nq).copy_from(query);
        stacked.rows_mut(nq, nk).copy_from(known);
        self.prior_dist(s)?
            .linear_image(&stacked)?
            .condition_partitioned(nq, known_values)
    }
}
