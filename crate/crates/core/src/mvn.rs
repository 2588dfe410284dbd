//! Multivariate normal algebra: linear images, conditionals, sampling and
//! density. All solves go through Cholesky factors; no explicit inverses.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Relative jitter levels tried after a plain Cholesky fails.
const JITTER_LEVELS: [f64; 2] = [1e-10, 1e-6];

/// Cholesky factor with the jitter fallback: the matrix as given, then with
/// `1e-10` and `1e-6` times its mean diagonal added to the diagonal.
pub fn cholesky(m: &DMatrix<f64>, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let n = m.nrows();
    if n == 0 {
        return Err(Error::NotPositiveDefinite(what));
    }
    let mean_diag = m.diagonal().sum() / n as f64;
    if !(mean_diag.is_finite() && mean_diag > 0.0) {
        return Err(Error::NotPositiveDefinite(what));
    }
    for level in JITTER_LEVELS {
        let mut jittered = m.clone();
        for i in 0..n {
            jittered[(i, i)] += level * mean_diag;
        }
        if let Some(c) = Cholesky::new(jittered) {
            return Ok(c);
        }
    }
    Err(Error::NotPositiveDefinite(what))
}

/// Factor of a matrix that is inverted during conditioning. No jitter: a
/// pivot below `1e-12` of the largest diagonal entry counts as singular.
pub fn conditioning_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let singular = || Error::SingularConditioning(format!("{what} is singular"));
    let scale = m.diagonal().amax();
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(singular());
    }
    let chol = Cholesky::new(m.clone()).ok_or_else(singular)?;
    let l = chol.l_dirty();
    if (0..m.nrows()).any(|i| l[(i, i)] * l[(i, i)] < 1e-12 * scale) {
        return Err(singular());
    }
    Ok(chol)
}

/// Lower factor `L` with `L Lᵀ ≈ cov`; zero for an all-zero covariance.
pub fn sampling_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if cov.iter().all(|&v| v == 0.0) {
        return Ok(DMatrix::zeros(cov.nrows(), cov.ncols()));
    }
    Ok(cholesky(cov, "covariance")?.unpack())
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

pub fn standard_normal_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_fn(dim, |_, _| rng.sample(StandardNormal))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvnDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl MvnDist {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has length {d} but covariance is {}x{}",
                cov.nrows(),
                cov.ncols()
            )));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Invalid("non-finite mean or covariance entry".into()));
        }
        let scale = cov.amax();
        for i in 0..d {
            for j in (i + 1)..d {
                if (cov[(i, j)] - cov[(j, i)]).abs() > 1e-12 * scale {
                    return Err(Error::Invalid(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { mean, cov })
    }

    /// Build from parts already known to be valid.
    pub(crate) fn from_parts(mean: DVector<f64>, mut cov: DMatrix<f64>) -> Self {
        symmetrize(&mut cov);
        Self { mean, cov }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    fn check_columns(&self, h: &DMatrix<f64>) -> Result<()> {
        if h.ncols() != self.dim() {
            return Err(Error::Dimension(format!(
                "operator has {} columns, distribution has dimension {}",
                h.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// `H X ~ N(H μ, H Σ Hᵀ)`.
    pub fn linear_image(&self, h: &DMatrix<f64>) -> Result<MvnDist> {
        self.check_columns(h)?;
        let mean = h * &self.mean;
        let cov = h * &self.cov * h.transpose();
        Ok(Self::from_parts(mean, cov))
    }

    /// Joint law of `(X, H X)`.
    pub fn joint_with_image(&self, h: &DMatrix<f64>) -> Result<MvnDist> {
        self.check_columns(h)?;
        let d = self.dim();
        let m = h.nrows();
        let h_sigma = h * &self.cov;
        let mut mean = DVector::zeros(d + m);
        mean.rows_mut(0, d).copy_from(&self.mean);
        mean.rows_mut(d, m).copy_from(&(h * &self.mean));
        let mut cov = DMatrix::zeros(d + m, d + m);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.cov);
        cov.view_mut((d, 0), (m, d)).copy_from(&h_sigma);
        cov.view_mut((0, d), (d, m)).copy_from(&h_sigma.transpose());
        cov.view_mut((d, d), (m, m))
            .copy_from(&(&h_sigma * h.transpose()));
        Ok(Self::from_parts(mean, cov))
    }

    /// Law of `X` given `H X = obs`.
    pub fn condition_on_linear(&self, h: &DMatrix<f64>, obs: &DVector<f64>) -> Result<MvnDist> {
        self.check_columns(h)?;
        if obs.len() != h.nrows() {
            return Err(Error::Dimension(format!(
                "{} observations for {} functionals",
                obs.len(),
                h.nrows()
            )));
        }
        if h.nrows() == 0 {
            return Ok(self.clone());
        }
        let h_sigma = h * &self.cov;
        let s = &h_sigma * h.transpose();
        let chol = conditioning_cholesky(&s, "H Σ Hᵀ")?;
        let resid = obs - h * &self.mean;
        let mean = &self.mean + h_sigma.tr_mul(&chol.solve(&resid));
        let cov = &self.cov - h_sigma.tr_mul(&chol.solve(&h_sigma));
        Ok(Self::from_parts(mean, cov))
    }

    /// Law of the first `split` coordinates given the rest equal `obs`.
    pub fn condition_partitioned(&self, split: usize, obs: &DVector<f64>) -> Result<MvnDist> {
        let d = self.dim();
        if split > d || obs.len() != d - split {
            return Err(Error::Dimension(format!(
                "split {split} with {} observations in dimension {d}",
                obs.len()
            )));
        }
        let q = d - split;
        let mu1 = self.mean.rows(0, split);
        let mu2 = self.mean.rows(split, q);
        let s11 = self.cov.view((0, 0), (split, split));
        let s21 = self.cov.view((split, 0), (q, split));
        let s22 = self.cov.view((split, split), (q, q)).into_owned();
        if q == 0 {
            return Ok(self.clone());
        }
        let chol = cholesky(&s22, "Σ₂₂").map_err(|_| {
            Error::SingularConditioning("Σ₂₂ is singular beyond jitter tolerance".into())
        })?;
        let resid = obs - mu2;
        let mean = mu1 + s21.tr_mul(&chol.solve(&resid));
        let cov = s11 - s21.tr_mul(&chol.solve(&s21.into_owned()));
        Ok(Self::from_parts(mean, cov))
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, factor: &DMatrix<f64>, rng: &mut R) -> DVector<f64> {
        &self.mean + factor * standard_normal_vector(self.dim(), rng)
    }

    /// `count` i.i.d. draws, one per row.
    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<DMatrix<f64>> {
        let factor = sampling_factor(&self.cov)?;
        let mut out = DMatrix::zeros(count, self.dim());
        for r in 0..count {
            let x = self.sample_one(&factor, rng);
            out.row_mut(r).copy_from(&x.transpose());
        }
        Ok(out)
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!(
                "point has length {}, distribution has dimension {}",
                x.len(),
                self.dim()
            )));
        }
        let chol = cholesky(&self.cov, "covariance")?;
        Ok(log_density_with(&chol, &(x - &self.mean)))
    }
}

/// `log φ(r; 0, L Lᵀ)` from a precomputed factor.
pub(crate) fn log_density_with(chol: &Cholesky<f64, Dyn>, resid: &DVector<f64>) -> f64 {
    let l = chol.l_dirty();
    let mut z = resid.clone();
    l.solve_lower_triangular_mut(&mut z);
    let log_det: f64 = (0..z.len()).map(|i| l[(i, i)].ln()).sum::<f64>() * 2.0;
    -0.5 * (z.norm_squared() + log_det + resid.len() as f64 * LN_2PI)
}
