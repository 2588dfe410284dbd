//! Independent reference computations for the integration tests. None of
//! these go through the library's Cholesky or tridiagonal code paths.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

/// `A Aᵀ + ridge·I` with standard normal `A`.
pub fn random_spd<R: Rng>(d: usize, ridge: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| normal(rng));
    &a * a.transpose() + DMatrix::identity(d, d) * ridge
}

pub fn random_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

pub fn inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().lu().try_inverse().expect("invertible")
}

pub fn determinant(m: &DMatrix<f64>) -> f64 {
    m.clone().lu().determinant()
}

/// Gaussian log density through an explicit inverse and determinant.
pub fn dense_log_density(mean: &DVector<f64>, cov: &DMatrix<f64>, x: &DVector<f64>) -> f64 {
    let r = x - mean;
    let q = (r.transpose() * inverse(cov) * &r)[0];
    let d = mean.len() as f64;
    -0.5 * (q + determinant(cov).ln() + d * (2.0 * std::f64::consts::PI).ln())
}

pub fn normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    (-0.5 * z * z).exp() / (sd * (2.0 * std::f64::consts::PI).sqrt())
}

/// Textbook Gaussian conditioning `X | H X = obs` through explicit inverses.
pub fn dense_condition(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    h: &DMatrix<f64>,
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let s_inv = inverse(&(h * cov * h.transpose()));
    let gain = cov * h.transpose() * s_inv;
    (mean + &gain * (obs - h * mean), cov - &gain * h * cov)
}

/// Dense assembly and LU solve of the finite-volume system.
pub fn dense_diffusion(y: &[f64], source: &[f64], left: f64, right: f64) -> Vec<f64> {
    let g = y.len();
    let hm = |a: f64, b: f64| 2.0 * a * b / (a + b);
    let mut a = DMatrix::zeros(g, g);
    let mut b = DVector::zeros(g);
    a[(0, 0)] = 1.0;
    b[0] = left;
    a[(g - 1, g - 1)] = 1.0;
    b[g - 1] = right;
    for i in 1..g - 1 {
        let w = hm(y[i - 1], y[i]);
        let e = hm(y[i], y[i + 1]);
        a[(i, i - 1)] = w;
        a[(i, i + 1)] = e;
        a[(i, i)] = -(w + e);
        b[i] = source[i];
    }
    a.lu().solve(&b).expect("nonsingular").iter().copied().collect()
}

/// One-sample Kolmogorov–Smirnov statistic against a CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut s = sample.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    let mut d: f64 = 0.0;
    let mut i = 0;
    while i < s.len() {
        let mut j = i;
        while j + 1 < s.len() && s[j + 1] == s[i] {
            j += 1;
        }
        let f = cdf(s[i]);
        d = d.max((i as f64 / n - f).abs()).max(((j + 1) as f64 / n - f).abs());
        i = j + 1;
    }
    d
}

/// Critical value of the one-sample KS statistic at α = 0.01 for large n.
pub fn ks_critical_01(n: usize) -> f64 {
    1.628 / (n as f64).sqrt()
}

/// Pearson χ² statistic for observed counts against expected probabilities.
pub fn chi_square(counts: &[usize], probs: &[f64]) -> f64 {
    let n: usize = counts.iter().sum();
    counts
        .iter()
        .zip(probs)
        .map(|(&c, &p)| {
            let e = p * n as f64;
            (c as f64 - e).powi(2) / e
        })
        .sum()
}

pub fn chi_square_critical_01(dof: usize) -> f64 {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    ChiSquared::new(dof as f64).unwrap().inverse_cdf(0.99)
}

/// CDF of a distribution tabulated as masses on cells with the given edges,
/// linear within each cell.
pub struct GridCdf {
    edges: Vec<f64>,
    cum: Vec<f64>,
}

impl GridCdf {
    pub fn new(edges: Vec<f64>, masses: &[f64]) -> Self {
        assert_eq!(edges.len(), masses.len() + 1);
        let total: f64 = masses.iter().sum();
        let mut cum = vec![0.0];
        for m in masses {
            cum.push(cum.last().unwrap() + m / total);
        }
        Self { edges, cum }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.edges[0] {
            return 0.0;
        }
        if x >= *self.edges.last().unwrap() {
            return 1.0;
        }
        let i = self.edges.partition_point(|&e| e <= x) - 1;
        let t = (x - self.edges[i]) / (self.edges[i + 1] - self.edges[i]);
        self.cum[i] + t * (self.cum[i + 1] - self.cum[i])
    }
}

/// Trapezoid rule on an even grid.
pub fn trapezoid(values: &[f64], step: f64) -> f64 {
    let n = values.len();
    step * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + statrs::function::erf::erf(z / std::f64::consts::SQRT_2))
}

/// Constant-mean Gaussian-process model terms at one range: `|R|`,
/// `A = 1ᵀR⁻¹1`, `B = 1ᵀR⁻¹y`, `C = yᵀR⁻¹y`, through a dense inverse.
struct ExpCorrTerms {
    log_det: f64,
    a: f64,
    b: f64,
    c: f64,
}

fn exp_corr_terms(locs: &[f64], y: &[f64], lambda: f64) -> ExpCorrTerms {
    let n = locs.len();
    let r = DMatrix::from_fn(n, n, |i, j| (-(locs[i] - locs[j]).abs() / lambda).exp());
    let ri = inverse(&r);
    let one = DVector::from_element(n, 1.0);
    let yv = DVector::from_column_slice(y);
    ExpCorrTerms {
        log_det: determinant(&r).ln(),
        a: (one.transpose() * &ri * &one)[0],
        b: (one.transpose() * &ri * &yv)[0],
        c: (yv.transpose() * &ri * &yv)[0],
    }
}

/// Log of the joint posterior density in `(λ, t = log η²)` with the trend
/// integrated out, up to a constant. Prior `p(λ) ∝ 1`, `p(η²) ∝ (η²)^-a`.
fn log_post_lambda_t(k: &ExpCorrTerms, n: usize, a: f64, t: f64) -> f64 {
    let eta2 = t.exp();
    let resid = k.c - k.b * k.b / k.a;
    -a * t - 0.5 * n as f64 * t - 0.5 * k.log_det + 0.5 * (t - k.a.ln()) - resid / (2.0 * eta2) + t
}

/// Marginal log posterior of λ by midpoint quadrature over `t`.
pub fn log_marginal_lambda(locs: &[f64], y: &[f64], lambda: f64, a: f64, t_lo: f64, t_hi: f64, cells: usize) -> f64 {
    let k = exp_corr_terms(locs, y, lambda);
    let dt = (t_hi - t_lo) / cells as f64;
    let logs: Vec<f64> = (0..cells)
        .map(|i| log_post_lambda_t(&k, y.len(), a, t_lo + (i as f64 + 0.5) * dt))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + (logs.iter().map(|l| (l - max).exp()).sum::<f64>() * dt).ln()
}

/// Grid posterior of `(λ, log η², β)` for a constant-mean model.
pub struct StructuralOracle {
    pub lambdas: Vec<f64>,
    pub lambda_probs: Vec<f64>,
    pub log_eta2: GridCdf,
    pub beta: GridCdf,
}

/// `λ` on the given support points, `log η²` on `t_cells` cells of
/// `[t_lo, t_hi]`, and `β` on `b_cells` cells of `[b_lo, b_hi]`. Given
/// `(λ, η²)` the trend is normal, so each β cell gets its exact mass.
pub fn structural_grid_posterior(
    locs: &[f64],
    y: &[f64],
    lambdas: &[f64],
    a: f64,
    (t_lo, t_hi, t_cells): (f64, f64, usize),
    (b_lo, b_hi, b_cells): (f64, f64, usize),
) -> StructuralOracle {
    let n = y.len();
    let dt = (t_hi - t_lo) / t_cells as f64;
    let db = (b_hi - b_lo) / b_cells as f64;
    let b_edges: Vec<f64> = (0..=b_cells).map(|i| b_lo + i as f64 * db).collect();
    let terms: Vec<ExpCorrTerms> = lambdas.iter().map(|&l| exp_corr_terms(locs, y, l)).collect();
    let mut logs = vec![vec![0.0; t_cells]; lambdas.len()];
    let mut max = f64::NEG_INFINITY;
    for (i, k) in terms.iter().enumerate() {
        for (j, cell) in logs[i].iter_mut().enumerate() {
            let t = t_lo + (j as f64 + 0.5) * dt;
            *cell = log_post_lambda_t(k, n, a, t);
            max = max.max(*cell);
        }
    }
    let mut lambda_mass = vec![0.0; lambdas.len()];
    let mut t_mass = vec![0.0; t_cells];
    let mut b_mass = vec![0.0; b_cells];
    for (i, k) in terms.iter().enumerate() {
        let mu = k.b / k.a;
        for j in 0..t_cells {
            let w = (logs[i][j] - max).exp();
            lambda_mass[i] += w;
            t_mass[j] += w;
            if w < 1e-300 {
                continue;
            }
            let t = t_lo + (j as f64 + 0.5) * dt;
            let sd = (t.exp() / k.a).sqrt();
            let mut prev = std_normal_cdf((b_edges[0] - mu) / sd);
            for c in 0..b_cells {
                let next = std_normal_cdf((b_edges[c + 1] - mu) / sd);
                b_mass[c] += w * (next - prev);
                prev = next;
            }
        }
    }
    let total: f64 = lambda_mass.iter().sum();
    let t_edges = (0..=t_cells).map(|i| t_lo + i as f64 * dt).collect();
    StructuralOracle {
        lambdas: lambdas.to_vec(),
        lambda_probs: lambda_mass.iter().map(|m| m / total).collect(),
        log_eta2: GridCdf::new(t_edges, &t_mass),
        beta: GridCdf::new(b_edges, &b_mass),
    }
}

/// KS statistic of a sample on a finite support against its probabilities.
pub fn discrete_ks(sample: &[f64], support: &[f64], probs: &[f64]) -> f64 {
    let n = sample.len() as f64;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut cdf = 0.0;
    let mut d: f64 = 0.0;
    for (&x, &p) in support.iter().zip(probs) {
        cdf += p;
        let ecdf = sorted.partition_point(|&s| s <= x) as f64 / n;
        d = d.max((ecdf - cdf).abs());
    }
    d
}
