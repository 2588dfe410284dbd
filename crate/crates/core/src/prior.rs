//! Structural-parameter prior `p(θ) = p(λ) / (η²)^a` and its hierarchical
//! posterior given point values of the field.
//!
//! Sampling follows the discretize-then-sample scheme: λ is drawn from its
//! posterior tabulated on a grid, then `η² | λ` from a scaled inverse
//! chi-square, then `β | η², λ` from a normal.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{correlation_matrix, StructuralParams};
use crate::mvn;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructuralPrior {
    /// Exponent of `1/(η²)^a`.
    pub a: f64,
    pub lambda_lower: f64,
    pub lambda_upper: f64,
    pub lambda_grid_size: usize,
}

impl StructuralPrior {
    pub fn new(a: f64, lambda_lower: f64, lambda_upper: f64, lambda_grid_size: usize) -> Result<Self> {
        if !(lambda_lower > 0.0 && lambda_lower < lambda_upper && lambda_upper.is_finite()) {
            return Err(Error::Invalid(format!(
                "range support must satisfy 0 < lower < upper, got ({lambda_lower}, {lambda_upper})"
            )));
        }
        if lambda_grid_size < 2 {
            return Err(Error::Invalid("range grid needs at least two points".into()));
        }
        if !a.is_finite() {
            return Err(Error::Invalid("prior exponent must be finite".into()));
        }
        Ok(Self {
            a,
            lambda_lower,
            lambda_upper,
            lambda_grid_size,
        })
    }

    /// `a = 1`, λ uniform on `(0.05 L, L)`, 200 grid points.
    pub fn for_domain(domain_length: f64) -> Result<Self> {
        Self::new(1.0, 0.05 * domain_length, domain_length, 200)
    }

    pub fn contains(&self, lambda: f64) -> bool {
        lambda > self.lambda_lower && lambda < self.lambda_upper
    }

    /// Cell midpoints of a uniform partition of the support.
    pub fn lambda_grid(&self) -> Vec<f64> {
        let width = (self.lambda_upper - self.lambda_lower) / self.lambda_grid_size as f64;
        (0..self.lambda_grid_size)
            .map(|j| self.lambda_lower + (j as f64 + 0.5) * width)
            .collect()
    }

    fn log_lambda_density(&self, lambda: f64) -> f64 {
        if self.contains(lambda) {
            -(self.lambda_upper - self.lambda_lower).ln()
        } else {
            f64::NEG_INFINITY
        }
    }
}

/// Point values `y*` of the field at `x*`, with design rows `X*`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointData {
    locations: Vec<f64>,
    values: DVector<f64>,
    design: DMatrix<f64>,
}

impl PointData {
    pub fn new(locations: Vec<f64>, values: DVector<f64>, design: DMatrix<f64>) -> Result<Self> {
        if values.len() != locations.len() || design.nrows() != locations.len() {
            return Err(Error::Dimension(format!(
                "{} locations, {} values, {} design rows",
                locations.len(),
                values.len(),
                design.nrows()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("point data must be finite".into()));
        }
        Ok(Self {
            locations,
            values,
            design,
        })
    }

    pub fn constant_mean(locations: Vec<f64>, values: DVector<f64>) -> Result<Self> {
        let n = locations.len();
        Self::new(locations, values, DMatrix::from_element(n, 1, 1.0))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn trend_dim(&self) -> usize {
        self.design.ncols()
    }

    pub fn locations(&self) -> &[f64] {
        &self.locations
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn with_values(&self, values: DVector<f64>) -> Result<Self> {
        Self::new(self.locations.clone(), values, self.design.clone())
    }
}

/// `n + 2a − d_β − 2`, rejected unless positive.
pub fn degrees_of_freedom(data: &PointData, prior: &StructuralPrior) -> Result<f64> {
    let nu = data.len() as f64 + 2.0 * prior.a - data.trend_dim() as f64 - 2.0;
    if nu > 0.0 {
        Ok(nu)
    } else {
        Err(Error::Invalid(format!(
            "{} data points with {} trend coefficients leave {nu} degrees of freedom",
            data.len(),
            data.trend_dim()
        )))
    }
}

/// Sufficient statistics of the point data at one value of λ.
#[derive(Debug, Clone)]
pub struct LambdaFit {
    pub lambda: f64,
    pub log_density: f64,
    /// `yᵀ (R⁻¹ − R⁻¹ X Q⁻¹ Xᵀ R⁻¹) y`.
    pub s2: f64,
    /// Generalized least-squares trend `Q⁻¹ Xᵀ R⁻¹ y`.
    pub gls: DVector<f64>,
    q_chol: Cholesky<f64, Dyn>,
}

impl LambdaFit {
    pub fn new(lambda: f64, data: &PointData, prior: &StructuralPrior) -> Result<Self> {
        let nu = degrees_of_freedom(data, prior)?;
        if !(lambda > 0.0) {
            return Err(Error::Invalid(format!("range must be positive, got {lambda}")));
        }
        let corr = correlation_matrix(data.locations(), data.locations(), lambda);
        let r_chol = mvn::cholesky(&corr, "data correlation R*")?;
        let l = r_chol.l_dirty();
        let mut wy = data.values().clone();
        l.solve_lower_triangular_mut(&mut wy);
        let mut wx = data.design().clone();
        l.solve_lower_triangular_mut(&mut wx);
        let q = wx.tr_mul(&wx);
        let q_chol = Cholesky::new(q).ok_or_else(|| {
            Error::Numerical("Xᵀ R⁻¹ X is singular; the design is rank deficient".into())
        })?;
        let gls = q_chol.solve(&wx.tr_mul(&wy));
        let s2 = (&wy - &wx * &gls).norm_squared();
        if !(s2 > 0.0) || !s2.is_finite() {
            return Err(Error::Numerical(format!("S² = {s2} is not positive")));
        }
        let log_det_r: f64 = 2.0 * (0..data.len()).map(|i| l[(i, i)].ln()).sum::<f64>();
        let lq = q_chol.l_dirty();
        let log_det_q: f64 = 2.0 * (0..gls.len()).map(|i| lq[(i, i)].ln()).sum::<f64>();
        let log_density = prior.log_lambda_density(lambda)
            - 0.5 * log_det_r
            - 0.5 * log_det_q
            - 0.5 * nu * s2.ln();
        Ok(Self {
            lambda,
            log_density,
            s2,
            gls,
            q_chol,
        })
    }

    /// `η² ~ Inv-χ²(ν, S²/ν)`.
    pub fn sample_variance<R: Rng + ?Sized>(&self, nu: f64, rng: &mut R) -> Result<f64> {
        sample_scaled_inv_chi2(nu, self.s2, rng)
    }

    /// `β ~ N(β̂, η² Q⁻¹)`.
    pub fn sample_trend<R: Rng + ?Sized>(&self, eta2: f64, rng: &mut R) -> DVector<f64> {
        let z = mvn::standard_normal_vector(self.gls.len(), rng);
        let mut x = z * eta2.sqrt();
        self.q_chol.l_dirty().tr_solve_lower_triangular_mut(&mut x);
        &self.gls + x
    }
}

/// Draw from `Inv-χ²(ν, s2/ν)`, i.e. `s2 / χ²_ν`.
pub fn sample_scaled_inv_chi2<R: Rng + ?Sized>(nu: f64, s2: f64, rng: &mut R) -> Result<f64> {
    if !(nu > 0.0) {
        return Err(Error::Invalid(format!("degrees of freedom must be positive, got {nu}")));
    }
    let chi2 = ChiSquared::new(nu).map_err(|e| Error::Invalid(e.to_string()))?;
    Ok(s2 / chi2.sample(rng))
}

/// Unnormalized `log p(λ | y*)`; `-∞` outside the prior support.
pub fn lambda_posterior_logdensity(lambda: f64, data: &PointData, prior: &StructuralPrior) -> Result<f64> {
    if !prior.contains(lambda) {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(LambdaFit::new(lambda, data, prior)?.log_density)
}

pub fn sample_variance_given_lambda<R: Rng + ?Sized>(
    lambda: f64,
    data: &PointData,
    prior: &StructuralPrior,
    rng: &mut R,
) -> Result<f64> {
    let nu = degrees_of_freedom(data, prior)?;
    LambdaFit::new(lambda, data, prior)?.sample_variance(nu, rng)
}

pub fn sample_trend_given_variance<R: Rng + ?Sized>(
    lambda: f64,
    eta2: f64,
    data: &PointData,
    prior: &StructuralPrior,
    rng: &mut R,
) -> Result<DVector<f64>> {
    Ok(LambdaFit::new(lambda, data, prior)?.sample_trend(eta2, rng))
}

/// λ posterior tabulated on the prior grid, with cached per-λ statistics.
#[derive(Debug, Clone)]
pub struct StructuralPosterior {
    prior: StructuralPrior,
    nu: f64,
    fits: Vec<LambdaFit>,
    weights: Vec<f64>,
    index: WeightedIndex<f64>,
}

impl StructuralPosterior {
    pub fn new(data: &PointData, prior: &StructuralPrior) -> Result<Self> {
        let nu = degrees_of_freedom(data, prior)?;
        let fits = prior
            .lambda_grid()
            .into_par_iter()
            .map(|lambda| LambdaFit::new(lambda, data, prior))
            .collect::<Result<Vec<_>>>()?;
        let max = fits
            .iter()
            .map(|f| f.log_density)
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(Error::Numerical("range posterior is zero on the whole grid".into()));
        }
        let raw: Vec<f64> = fits.iter().map(|f| (f.log_density - max).exp()).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let index = WeightedIndex::new(&weights).map_err(|e| Error::Numerical(e.to_string()))?;
        Ok(Self {
            prior: *prior,
            nu,
            fits,
            weights,
            index,
        })
    }

    pub fn prior(&self) -> &StructuralPrior {
        &self.prior
    }

    pub fn degrees_of_freedom(&self) -> f64 {
        self.nu
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.lambda).collect()
    }

    pub fn log_densities(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.log_density).collect()
    }

    /// Normalized grid weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn fits(&self) -> &[LambdaFit] {
        &self.fits
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<StructuralParams> {
        let fit = &self.fits[self.index.sample(rng)];
        let eta2 = fit.sample_variance(self.nu, rng)?;
        let beta = fit.sample_trend(eta2, rng);
        StructuralParams::new(beta, eta2, fit.lambda)
    }

    pub fn sample_many<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<StructuralParams>> {
        (0..count).map(|_| self.sample(rng)).collect()
    }
}

pub fn sample_structural<R: Rng + ?Sized>(
    data: &PointData,
    prior: &StructuralPrior,
    count: usize,
    rng: &mut R,
) -> Result<Vec<StructuralParams>> {
    StructuralPosterior::new(data, prior)?.sample_many(count, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::dvector;

    fn six_points() -> PointData {
        PointData::constant_mean(
            vec![3.0, 11.0, 19.0, 30.0, 52.0, 70.0],
            dvector![-4.1, -3.6, -4.4, -3.0, -2.2, -2.9],
        )
        .unwrap()
    }

    fn prior() -> StructuralPrior {
        StructuralPrior::for_domain(80.0).unwrap()
    }

    #[test]
    fn outside_support_is_negative_infinity() {
        let d = six_points();
        assert_eq!(lambda_posterior_logdensity(3.9, &d, &prior()).unwrap(), f64::NEG_INFINITY);
        assert_eq!(lambda_posterior_logdensity(81.0, &d, &prior()).unwrap(), f64::NEG_INFINITY);
        assert!(lambda_posterior_logdensity(20.0, &d, &prior()).unwrap().is_finite());
    }

    #[test]
    fn invariant_under_permutation() {
        let d = six_points();
        let perm = [4, 0, 5, 2, 1, 3];
        let locs: Vec<f64> = perm.iter().map(|&i| d.locations()[i]).collect();
        let vals = DVector::from_iterator(6, perm.iter().map(|&i| d.values()[i]));
        let p = PointData::constant_mean(locs, vals).unwrap();
        let a = lambda_posterior_logdensity(17.0, &d, &prior()).unwrap();
        let b = lambda_posterior_logdensity(17.0, &p, &prior()).unwrap();
        assert!((a - b).abs() < 1e-10);
    }

    #[test]
    fn s2_is_shift_invariant_with_intercept() {
        let d = six_points();
        let shifted = d.with_values(d.values().add_scalar(123.4)).unwrap();
        for lambda in [5.0, 20.0, 60.0] {
            let a = LambdaFit::new(lambda, &d, &prior()).unwrap();
            let b = LambdaFit::new(lambda, &shifted, &prior()).unwrap();
            assert!((a.s2 - b.s2).abs() < 1e-8);
        }
    }

    #[test]
    fn too_few_points_rejected() {
        let d = PointData::constant_mean(vec![1.0], dvector![0.0]).unwrap();
        let p = StructuralPrior::new(0.0, 4.0, 80.0, 10).unwrap();
        assert!(degrees_of_freedom(&d, &p).is_err());
        assert!(StructuralPosterior::new(&d, &p).is_err());
        assert!(sample_scaled_inv_chi2(0.0, 1.0, &mut rng::stream(0)).is_err());
    }

    #[test]
    fn variance_draws_positive_and_reproducible() {
        let d = six_points();
        let a = sample_variance_given_lambda(20.0, &d, &prior(), &mut rng::stream(3)).unwrap();
        let b = sample_variance_given_lambda(20.0, &d, &prior(), &mut rng::stream(3)).unwrap();
        assert_eq!(a, b);
        let mut r = rng::stream(4);
        for _ in 0..1000 {
            assert!(sample_scaled_inv_chi2(2.0, 0.3, &mut r).unwrap() > 0.0);
        }
    }

    #[test]
    fn inverse_chi_square_mean() {
        let (nu, s2) = (9.0, 2.5);
        let n = 100_000;
        let mut r = rng::stream(5);
        let draws: Vec<f64> = (0..n).map(|_| sample_scaled_inv_chi2(nu, s2, &mut r).unwrap()).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let expected = s2 / (nu - 2.0);
        assert!((mean - expected).abs() < 3.0 * (var / n as f64).sqrt());
    }

    #[test]
    fn trend_limits() {
        let d = six_points();
        let fit = LambdaFit::new(20.0, &d, &prior()).unwrap();
        let beta = fit.sample_trend(1e-24, &mut rng::stream(1));
        assert!((beta - &fit.gls).amax() < 1e-9);

        // Tiny range makes R* the identity, so GLS is the arithmetic mean.
        let p = StructuralPrior::new(1.0, 1e-6, 80.0, 10).unwrap();
        let fit = LambdaFit::new(1e-4, &d, &p).unwrap();
        let mean = d.values().mean();
        assert!((fit.gls[0] - mean).abs() < 1e-12);
    }

    #[test]
    fn trend_draw_covariance() {
        let d = PointData::new(
            vec![2.0, 9.0, 15.0, 33.0, 40.0, 61.0, 75.0],
            dvector![1.0, 1.4, 0.7, 2.0, 2.2, 3.1, 3.0],
            DMatrix::from_fn(7, 2, |i, j| if j == 0 { 1.0 } else { [2.0, 9.0, 15.0, 33.0, 40.0, 61.0, 75.0][i] / 80.0 }),
        )
        .unwrap();
        let fit = LambdaFit::new(10.0, &d, &prior()).unwrap();
        let eta2 = 0.7;
        let q = {
            let corr = correlation_matrix(d.locations(), d.locations(), 10.0);
            let rinv = corr.try_inverse().unwrap();
            d.design().transpose() * rinv * d.design()
        };
        let target = q.try_inverse().unwrap() * eta2;
        let n = 50_000;
        let mut r = rng::stream(8);
        let draws: Vec<DVector<f64>> = (0..n).map(|_| fit.sample_trend(eta2, &mut r)).collect();
        for a in 0..2 {
            for b in 0..2 {
                let prods: Vec<f64> = draws
                    .iter()
                    .map(|x| (x[a] - fit.gls[a]) * (x[b] - fit.gls[b]))
                    .collect();
                let m = prods.iter().sum::<f64>() / n as f64;
                let v = prods.iter().map(|p| (p - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                assert!((m - target[(a, b)]).abs() < 3.0 * (v / n as f64).sqrt(), "({a},{b})");
            }
        }
    }

    #[test]
    fn weights_normalized_and_samples_in_support() {
        let d = six_points();
        let post = StructuralPosterior::new(&d, &prior()).unwrap();
        assert_eq!(post.weights().len(), 200);
        assert!((post.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut r = rng::stream(2);
        for s in post.sample_many(500, &mut r).unwrap() {
            assert!(prior().contains(s.lambda));
            assert!(s.eta2 > 0.0);
        }
    }
}
