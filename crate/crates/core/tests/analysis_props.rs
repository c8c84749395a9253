use proptest::prelude::*;
use recmetric::analysis::{
    convergence_profile, covering_number, energy_distance, energy_distance_vectors, insertion_radii, ks_test,
    minkowski_fit, moment_estimate, ols, AnalysisError, ProfileOptions,
};
use recmetric::engine::{EngineConfig, ThetaTrie};
use recmetric::models::BranchLaw;
use recmetric::rng::RngStream;

fn euclidean_matrix(points: &[(f64, f64)]) -> Vec<Vec<f64>> {
    points.iter().map(|a| points.iter().map(|b| ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()).collect()).collect()
}

/// Fewest closed `eps`-balls centred at cloud points that cover the cloud,
/// by enumerating every subset.
fn optimal_cover(d: &[Vec<f64>], eps: f64) -> usize {
    let n = d.len();
    (1u32..1 << n)
        .filter(|mask| (0..n).all(|i| (0..n).any(|c| mask & (1 << c) != 0 && d[c][i] <= eps)))
        .map(|mask| mask.count_ones() as usize)
        .min()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn greedy_cover_is_sandwiched(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..11), eps in 0.01f64..0.8) {
        let d = euclidean_matrix(&points);
        let n = covering_number(&insertion_radii(&d), eps);
        prop_assert!(optimal_cover(&d, eps) <= n);
        prop_assert!(n <= optimal_cover(&d, eps / 2.0));
    }

    #[test]
    fn covering_numbers_fall_with_radius(points in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..30), a in 0.0f64..1.0, b in 0.0f64..1.0) {
        let radii = insertion_radii(&euclidean_matrix(&points));
        prop_assert!(radii.windows(2).all(|w| w[0] >= w[1]));
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(covering_number(&radii, lo) >= covering_number(&radii, hi));
        prop_assert_eq!(covering_number(&radii, 0.0), points.len() - count_duplicates(&points));
    }

    #[test]
    fn ols_recovers_exact_lines(slope in -5.0f64..5.0, intercept in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7).collect();
        let y: Vec<f64> = x.iter().map(|v| slope * v + intercept).collect();
        let fit = ols(&x, &y).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9 && (fit.intercept - intercept).abs() < 1e-9);
    }
}

fn count_duplicates(points: &[(f64, f64)]) -> usize {
    (0..points.len()).filter(|&i| points[..i].contains(&points[i])).count()
}

#[test]
fn energy_test_is_calibrated_under_the_null() {
    let mut rng = RngStream::new(41, 0);
    let trials = 200;
    let mut rejections = 0;
    for _ in 0..trials {
        let mut draw = |n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..3).map(|_| rng.uniform()).collect()).collect() };
        let (a, b) = (draw(40), draw(40));
        let test = energy_distance_vectors(&a, &b, 99, &mut RngStream::new(41, 1 + rejections as u64)).unwrap();
        if test.p_value < 0.05 {
            rejections += 1;
        }
    }
    let rate = rejections as f64 / trials as f64;
    assert!((0.01..=0.11).contains(&rate), "null rejection rate {rate}");
}

#[test]
fn energy_test_separates_shallow_from_deep_demo_samples() {
    let engine = EngineConfig { depth: 40, resolution_floor: 1e-6, ..EngineConfig::default() };
    let law = BranchLaw::finite_demo();
    let sample = |depth: usize, salt: u64| {
        (0..200u64)
            .map(|rep| {
                let mut trie = ThetaTrie::new(law.clone(), rep ^ (salt << 32), engine).unwrap();
                trie.distance_matrix(2, depth, &mut RngStream::new(rep, salt)).unwrap()
            })
            .collect::<Vec<_>>()
    };
    let shallow = sample(2, 1);
    let deep = sample(40, 2);
    let test = energy_distance(&shallow, &deep, 199, &mut RngStream::new(42, 0)).unwrap();
    assert!(test.p_value < 0.01, "p = {}", test.p_value);
    let same = energy_distance(&shallow, &shallow, 19, &mut RngStream::new(42, 1)).unwrap();
    assert_eq!(same.statistic, 0.0);
}

#[test]
fn ks_rejects_a_wrong_law() {
    let mut rng = RngStream::new(43, 0);
    let samples: Vec<f64> = (0..2000).map(|_| rng.uniform().powi(2)).collect();
    let (_, p) = ks_test(&samples, |x| x.clamp(0.0, 1.0));
    assert!(p < 1e-6);
}

#[test]
fn moment_estimate_reports_stability() {
    let est = moment_estimate(&[2.0; 64], 2.0).unwrap();
    assert_eq!((est.estimate, est.stderr, est.stable), (4.0, 0.0, true));
    let mut drifting: Vec<f64> = vec![1.0; 50];
    drifting.extend(vec![3.0; 50]);
    assert!(!moment_estimate(&drifting, 1.0).unwrap().stable);
    assert!(moment_estimate(&[1.0], 0.5).is_err());
}

#[test]
fn fits_reject_unusable_grids() {
    let law = BranchLaw::looptree(1.5).unwrap();
    let engine = EngineConfig { resolution_floor: 1e-3, ..EngineConfig::default() };
    let short = minkowski_fit(&law, 10, 50, &[0.1, 0.2, 0.3, 0.4], 1, engine, 1);
    assert!(matches!(short, Err(AnalysisError::Domain(_))));
    let fine = minkowski_fit(&law, 10, 50, &[0.005, 0.01, 0.02, 0.05], 1, engine, 1);
    assert!(matches!(fine, Err(AnalysisError::Resolution(_))));
    let wide = minkowski_fit(&law, 10, 50, &[1.0, 3.0, 6.0, 10.0], 1, engine, 1);
    assert!(matches!(wide, Err(AnalysisError::Resolution(_))));
}

#[test]
fn profile_validates_depths() {
    let law = BranchLaw::finite_demo();
    let options = ProfileOptions { reps: 4, permutations: 9, ..ProfileOptions::default() };
    assert!(convergence_profile(&law, &[], options, EngineConfig::default(), 1).is_err());
    assert!(convergence_profile(&law, &[3, 3], options, EngineConfig::default(), 1).is_err());
    let profile = convergence_profile(&law, &[1, 2, 3], options, EngineConfig::default(), 1).unwrap();
    assert_eq!(profile.discrepancy.len(), 2);
    assert!(profile.mean_height.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn looptree_second_height_moment_is_stable() {
    let engine = EngineConfig { depth: 15, resolution_floor: 1e-3, ..EngineConfig::default() };
    let law = BranchLaw::looptree(1.5).unwrap();
    let mut rng = RngStream::new(44, 0);
    let heights: Vec<f64> = (0..4000u64)
        .map(|rep| {
            let mut trie = ThetaTrie::new(law.clone(), rep, engine).unwrap();
            let p = trie.sample_point(15, recmetric::engine::Measure::Mu, &mut rng).unwrap();
            trie.root_distance(&p, 15).unwrap()
        })
        .collect();
    let est = moment_estimate(&heights, 2.0).unwrap();
    assert!(est.estimate.is_finite() && est.stable, "{est:?}");
}

#[test]
fn mass_scaling_probes() {
    let engine = EngineConfig { resolution_floor: 1e-3, ..EngineConfig::default() };
    let grid = [0.1, 0.17, 0.3, 0.5, 0.87, 1.5];
    let crt = recmetric::analysis::hausdorff_probe(&BranchLaw::brownian_crt(), 40, 100, 1500, &grid, engine, 3).unwrap();
    assert!((1.5..=2.5).contains(&crt.slope), "CRT slope {}", crt.slope);
    let demo_grid = [0.02, 0.035, 0.06, 0.1, 0.17, 0.3];
    let demo = recmetric::analysis::hausdorff_probe(&BranchLaw::finite_demo(), 40, 50, 500, &demo_grid, engine, 3).unwrap();
    assert!(demo.slope.is_finite() && demo.slope > 0.0);
}
