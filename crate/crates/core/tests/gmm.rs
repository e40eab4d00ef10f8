//! Mixture fitting and density oracles.

use std::f64::consts::PI;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use uavx_core::gmm::{embed, fit, fit_traced, Embedding, GaussianMixture, GmmConfig, EMBED_DIM, VARIANCE_FLOOR};
use uavx_core::nn::Tensor;

fn cloud(rng: &mut ChaCha8Rng, n: usize, d: usize, clusters: usize) -> Vec<Embedding> {
    let centers: Vec<Vec<f64>> = (0..clusters).map(|_| (0..d).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    (0..n)
        .map(|i| {
            let c = &centers[i % clusters];
            let spread = rng.gen_range(0.01..0.2);
            Embedding(c.iter().map(|&m| m + spread * rng.gen_range(-1.0..1.0)).collect())
        })
        .collect()
}

#[test]
fn em_never_decreases_the_penalized_likelihood() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for fixture in 0..20 {
        let d = [2, 5, 16][fixture % 3];
        let n = rng.gen_range(12..80);
        let clusters = rng.gen_range(1..5);
        let points = cloud(&mut rng, n, d, clusters);
        let cfg = GmmConfig {
            components: rng.gen_range(1..5),
            iterations: 30,
            pseudocount: [0.0, 1.0, 2.5][fixture % 3],
            ..GmmConfig::default()
        };
        let (g, trace) = fit_traced(&points, &cfg, fixture as u64).unwrap();
        assert_eq!(trace.len(), cfg.iterations + 1);
        for w in trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9, "fixture {fixture}: {} -> {}", w[0], w[1]);
        }
        let last = g.penalized_log_likelihood(&points, cfg.pseudocount).unwrap();
        assert!((last - trace[trace.len() - 1]).abs() <= 1e-9 * last.abs().max(1.0));
        assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn single_component_is_the_sample_moments() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let points = cloud(&mut rng, 40, 16, 3);
    let g = fit(&points, &GmmConfig { components: 1, ..GmmConfig::default() }, 0).unwrap();
    let n = points.len() as f64;
    for j in 0..16 {
        let mean = points.iter().map(|p| p.0[j]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p.0[j] - mean).powi(2)).sum::<f64>() / n;
        assert!((g.means()[0][j] - mean).abs() < 1e-12);
        assert!((g.variances()[0][j] - var.max(VARIANCE_FLOOR)).abs() < 1e-12);
    }
    assert_eq!(g.weights(), &[1.0]);
}

#[test]
fn identical_points_hit_the_floor() {
    let points = vec![Embedding(vec![0.25; 16]); 10];
    let g = fit(&points, &GmmConfig { components: 1, ..GmmConfig::default() }, 0).unwrap();
    assert!(g.variances()[0].iter().all(|&v| v == VARIANCE_FLOOR));
}

#[test]
fn separated_clusters_are_recovered() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (a, b) = ([0.2, 0.2, 0.8], [0.8, 0.7, 0.1]);
    let mut points = Vec::new();
    for i in 0..60 {
        let c = if i % 2 == 0 { a } else { b };
        points.push(Embedding(c.iter().map(|&m| m + rng.gen_range(-0.05..0.05)).collect()));
    }
    let g = fit(&points, &GmmConfig { components: 2, ..GmmConfig::default() }, 1).unwrap();
    for c in [a, b] {
        let best = g
            .means()
            .iter()
            .map(|m| m.iter().zip(&c).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
            .fold(f64::INFINITY, f64::min);
        assert!(best < 0.1, "centroid {c:?} missed by {best}");
    }
}

#[test]
fn standard_gaussian_at_its_mean() {
    let g = GaussianMixture::new(vec![1.0], vec![vec![0.0; 16]], vec![vec![1.0; 16]]).unwrap();
    let got = g.log_density(&[0.0; 16]).unwrap();
    assert!((got + 8.0 * (2.0 * PI).ln()).abs() < 1e-12);
}

fn direct_density(w: &[f64], means: &[Vec<f64>], vars: &[Vec<f64>], x: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..w.len() {
        let mut pdf = 1.0;
        for j in 0..x.len() {
            let v = vars[k][j];
            pdf *= (-(x[j] - means[k][j]).powi(2) / (2.0 * v)).exp() / (2.0 * PI * v).sqrt();
        }
        total += w[k] * pdf;
    }
    total.ln()
}

#[test]
fn log_density_matches_direct_summation() {
    let w = vec![0.35, 0.65];
    let means = vec![vec![0.0, 1.0], vec![1.5, -0.5]];
    let vars = vec![vec![0.5, 1.2], vec![0.8, 0.3]];
    let g = GaussianMixture::new(w.clone(), means.clone(), vars.clone()).unwrap();
    for i in -10..=10 {
        for j in -10..=10 {
            let x = [i as f64 * 0.3, j as f64 * 0.3];
            let got = g.log_density(&x).unwrap();
            assert!((got - direct_density(&w, &means, &vars, &x)).abs() < 1e-12, "{x:?}");
        }
    }
}

#[test]
fn density_peaks_at_the_mean() {
    let g = GaussianMixture::new(vec![1.0], vec![vec![0.3; 4]], vec![vec![0.1; 4]]).unwrap();
    let at_mean = g.log_density(&[0.3; 4]).unwrap();
    assert!(at_mean > g.log_density(&[2.0; 4]).unwrap());
}

#[test]
fn too_few_points_is_an_error() {
    let points = vec![Embedding(vec![0.0; 4]); 2];
    assert!(fit(&points, &GmmConfig::default(), 0).is_err());
}

#[test]
fn embedding_examples() {
    let flat = Tensor::vector(vec![0.375; 256]).unwrap();
    assert_eq!(embed(&flat).unwrap().0, vec![0.375; EMBED_DIM]);

    // 16 uniform 4x4 blocks with value equal to the block index
    let blocks: Vec<f64> = (0..256).map(|i| ((i / 16 / 4) * 4 + (i % 16) / 4) as f64).collect();
    let e = embed(&Tensor::vector(blocks.clone()).unwrap()).unwrap();
    assert_eq!(e.0, (0..16).map(|b| b as f64).collect::<Vec<_>>());

    let mut changed = blocks.clone();
    changed[5 * 16 + 9] += 1.6;
    let e2 = embed(&Tensor::vector(changed).unwrap()).unwrap();
    for k in 0..16 {
        if k == 4 + 2 {
            assert!((e2.0[k] - e.0[k] - 0.1).abs() < 1e-12);
        } else {
            assert_eq!(e2.0[k], e.0[k]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fits_are_seeded_and_well_formed(seed in any::<u64>(), n in 6usize..40, m in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points = cloud(&mut rng, n, 16, 3);
        let cfg = GmmConfig { components: m, ..GmmConfig::default() };
        let g = fit(&points, &cfg, seed).unwrap();
        prop_assert_eq!(&g, &fit(&points, &cfg, seed).unwrap());
        prop_assert!((g.weights().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(g.weights().iter().all(|&w| w >= 0.0));
        prop_assert!(g.variances().iter().flatten().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn log_density_is_finite_far_away(x in prop::collection::vec(-1e6f64..1e6, 16)) {
        let g = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![vec![0.0; 16], vec![1.0; 16]],
            vec![vec![VARIANCE_FLOOR; 16], vec![0.5; 16]],
        ).unwrap();
        prop_assert!(g.log_density(&x).unwrap().is_finite());
    }
}
