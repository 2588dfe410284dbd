mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use anchored_inversion::mixture::{build_kde, local_covariance, MixtureComponent, NormalMixture, WeightedJointSample};
use anchored_inversion::mvn::MvnDist;
use anchored_inversion::rng::stream;
use common::*;

fn component(weight: f64, mean: &[f64], cov: &[f64]) -> MixtureComponent {
    let d = mean.len();
    MixtureComponent {
        weight,
        mean: DVector::from_row_slice(mean),
        cov: DMatrix::from_row_slice(d, d, cov),
    }
}

fn standard_sample(n: usize, d: usize, seed: u64) -> WeightedJointSample {
    let dist = MvnDist::new(DVector::zeros(d), DMatrix::identity(d, d)).unwrap();
    WeightedJointSample::uniform(dist.sample(n, &mut stream(seed)).unwrap(), d - 1).unwrap()
}

#[test]
fn local_covariance_near_center_of_standard_normal() {
    // The 500 nearest of 5000 standard normal points around the origin fill
    // the disc holding 10% of the mass, radius² r² = −2 ln 0.9. Within it the
    // per-coordinate variance is (2 − r² e^{−r²/2} / (1 − e^{−r²/2})) / 2.
    let sample = standard_sample(5000, 2, 11);
    let center = (0..sample.len())
        .min_by(|&a, &b| sample.point(a).norm().total_cmp(&sample.point(b).norm()))
        .unwrap();
    let r2 = -2.0 * 0.9f64.ln();
    let e = (-r2 / 2.0).exp();
    let per_coord = (2.0 - r2 * e / (1.0 - e)) / 2.0;
    let cov = local_covariance(&sample, center, 500).unwrap();
    let err = (cov - DMatrix::identity(2, 2) * per_coord).norm();
    assert!(err < 0.2 * per_coord, "{err} vs {per_coord}");
}

#[test]
fn full_neighborhoods_reproduce_the_global_covariance() {
    let sample = standard_sample(60, 3, 12);
    let (_, global) = sample.global_covariance().unwrap();
    for i in [0, 17, 59] {
        assert!((local_covariance(&sample, i, 59).unwrap() - &global).amax() < 1e-12);
    }
}

#[test]
fn kde_density_integrates_to_one() {
    let dist = MvnDist::new(
        DVector::from_row_slice(&[1.0, -0.5]),
        DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]),
    )
    .unwrap();
    let sample = WeightedJointSample::uniform(dist.sample(200, &mut stream(13)).unwrap(), 1).unwrap();
    let mix = build_kde(&sample, 50, 1.0).unwrap();
    let (lo, hi, n) = (-9.0, 9.0, 361);
    let step = (hi - lo) / (n - 1) as f64;
    let axis: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    let points: Vec<DVector<f64>> = axis
        .iter()
        .flat_map(|&x| axis.iter().map(move |&y| DVector::from_row_slice(&[x, y])))
        .collect();
    let dens: Vec<f64> = mix.log_densities(&points).unwrap().into_iter().map(f64::exp).collect();
    let rows: Vec<f64> = dens.chunks(n).map(|c| trapezoid(c, step)).collect();
    let total = trapezoid(&rows, step);
    assert!((total - 1.0).abs() < 1e-3, "{total}");
}

#[test]
fn two_component_condition_matches_direct_bayes() {
    let mix = NormalMixture::new(vec![
        component(0.3, &[0.0, 0.0], &[1.0, 0.6, 0.6, 1.0]),
        component(0.7, &[3.0, 2.0], &[0.5, -0.2, -0.2, 0.8]),
    ])
    .unwrap();
    let z = 1.2;
    let post = mix.condition(1, &DVector::from_element(1, z)).unwrap();

    // Posterior over θ from the joint density on a fine grid.
    let joint = |t: f64| {
        mix.components()
            .iter()
            .map(|c| c.weight * dense_log_density(&c.mean, &c.cov, &DVector::from_row_slice(&[t, z])).exp())
            .sum::<f64>()
    };
    let (lo, hi, n) = (-10.0, 12.0, 22_001);
    let step = (hi - lo) / (n - 1) as f64;
    let ts: Vec<f64> = (0..n).map(|i| lo + i as f64 * step).collect();
    let dens: Vec<f64> = ts.iter().map(|&t| joint(t)).collect();
    let norm = trapezoid(&dens, step);
    let m1 = trapezoid(&ts.iter().zip(&dens).map(|(t, d)| t * d).collect::<Vec<_>>(), step) / norm;
    let m2 = trapezoid(&ts.iter().zip(&dens).map(|(t, d)| t * t * d).collect::<Vec<_>>(), step) / norm;
    assert!((post.mean()[0] - m1).abs() < 1e-6);
    assert!((post.covariance()[(0, 0)] - (m2 - m1 * m1)).abs() < 1e-6);
    for &t in &[-1.0, 0.5, 2.0, 3.5] {
        let got = post.log_density(&DVector::from_element(1, t)).unwrap().exp();
        assert!((got - joint(t) / norm).abs() < 1e-6);
    }

    // Weights from the marginal data densities.
    let w: Vec<f64> = mix
        .components()
        .iter()
        .map(|c| c.weight * normal_pdf(z, c.mean[1], c.cov[(1, 1)].sqrt()))
        .collect();
    let total: f64 = w.iter().sum();
    for (c, wi) in post.components().iter().zip(&w) {
        assert!((c.weight - wi / total).abs() < 1e-12);
    }
}

#[test]
fn component_frequencies_follow_weights() {
    let weights = [0.1, 0.4, 0.2, 0.25, 0.05];
    let mix = NormalMixture::new(
        weights
            .iter()
            .enumerate()
            .map(|(i, &w)| component(w, &[i as f64, 0.0], &[1.0, 0.0, 0.0, 1.0]))
            .collect(),
    )
    .unwrap();
    let sampler = mix.sampler().unwrap();
    let mut r = stream(14);
    let mut counts = [0usize; 5];
    let mut draws = Vec::new();
    for _ in 0..20_000 {
        let (i, x) = sampler.draw(&mut r);
        counts[i] += 1;
        draws.push(x[0]);
    }
    assert!(chi_square(&counts, &weights) < chi_square_critical_01(4));
    let se = (mix.covariance()[(0, 0)] / draws.len() as f64).sqrt();
    assert!((mean(&draws) - mix.mean()[0]).abs() < 3.0 * se);
}

#[test]
fn one_dimensional_marginal_integrates_to_one() {
    let mix = NormalMixture::new(vec![
        component(0.5, &[0.0, 1.0, 2.0], &[1.0, 0.2, 0.1, 0.2, 2.0, 0.3, 0.1, 0.3, 0.5]),
        component(0.5, &[4.0, -1.0, 0.0], &[0.3, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]),
    ])
    .unwrap();
    let (lo, hi, n) = (-10.0, 10.0, 4001);
    let step = (hi - lo) / (n - 1) as f64;
    let grid: Vec<DVector<f64>> = (0..n).map(|i| DVector::from_element(1, lo + i as f64 * step)).collect();
    for coord in 0..3 {
        let dens = mix.marginal_density(&[coord], &grid).unwrap();
        assert!((trapezoid(&dens, step) - 1.0).abs() < 1e-3);
    }
}

#[test]
fn conditional_mean_improves_with_sample_size() {
    let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 1.0]);
    let gauss = MvnDist::new(DVector::from_row_slice(&[2.0, 1.0]), cov).unwrap();
    let datum = DVector::from_element(1, 1.5);
    let exact = gauss.condition_partitioned(1, &datum).unwrap().mean()[0];
    let error = |n: usize| {
        (0..20)
            .map(|seed| {
                let pts = gauss.sample(n, &mut stream(1000 + seed)).unwrap();
                let s = WeightedJointSample::uniform(pts, 1).unwrap();
                let k = 500.min(n - 1);
                let post = build_kde(&s, k, 1.0).unwrap().condition(1, &datum).unwrap();
                (post.mean()[0] - exact).abs()
            })
            .sum::<f64>()
            / 20.0
    };
    let (small, large) = (error(500), error(5000));
    assert!(large < small, "n = 5000: {large}, n = 500: {small}");
}

#[test]
fn text_file_round_trip() {
    let mix = build_kde(&standard_sample(30, 3, 15), 8, 0.7).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.txt");
    std::fs::write(&path, mix.to_text()).unwrap();
    let back = NormalMixture::from_text(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back, mix);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn conditioned_weights_normalized_and_covariances_psd(
        seed in 0u64..10_000,
        count in 1usize..6,
        z in prop::collection::vec(-3.0..3.0f64, 2),
    ) {
        let mut r = rng(seed);
        let comps = (0..count)
            .map(|_| MixtureComponent {
                weight: 0.1 + normal(&mut r).abs(),
                mean: DVector::from_fn(4, |_, _| normal(&mut r)),
                cov: random_spd(4, 0.2, &mut r),
            })
            .collect();
        let post = NormalMixture::new(comps).unwrap().condition(2, &DVector::from_vec(z)).unwrap();
        let total: f64 = post.weights().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        for c in post.components() {
            prop_assert!(c.cov.symmetric_eigenvalues().min() > -1e-10 * c.cov.amax());
        }
    }
}
