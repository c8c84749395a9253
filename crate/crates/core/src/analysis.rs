//! Statistics on engine output: matrix-distribution discrepancies, moment
//! estimates, covering-number and mass-scaling dimension fits.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{DistanceMatrixSample, EngineConfig, EngineError, Measure, PointAddress, ThetaTrie};
use crate::models::BranchLaw;
use crate::rng::RngStream;
use crate::tree::mix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resolution error: {0}")]
    Resolution(String),
}

type Result<T> = std::result::Result<T, AnalysisError>;

/// Running mean; exact for constant input.
pub fn mean(x: &[f64]) -> f64 {
    let mut m = 0.0;
    for (k, &v) in x.iter().enumerate() {
        m += (v - m) / (k + 1) as f64;
    }
    m
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn std_dev(x: &[f64]) -> f64 {
    if x.len() < 2 {
        return 0.0;
    }
    let m = mean(x);
    (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() - 1) as f64).sqrt()
}

pub fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
}

/// Ordinary least squares of `y` on `x`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    let n = x.len();
    if n != y.len() || n < 2 {
        return Err(AnalysisError::Domain(format!("need two or more paired values, got {n} and {}", y.len())));
    }
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(AnalysisError::Domain("regressor is constant".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let slope_stderr = if n > 2 { (sse / (n - 2) as f64 / sxx).sqrt() } else { 0.0 };
    Ok(LinearFit { slope, intercept, r2, slope_stderr })
}

/// One-sample Kolmogorov-Smirnov test against a continuous CDF; returns the
/// statistic and its asymptotic p-value.
pub fn ks_test(samples: &[f64], cdf: impl Fn(f64) -> f64) -> (f64, f64) {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in v.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    let sqrt_n = n.sqrt();
    (d, kolmogorov_survival((sqrt_n + 0.12 + 0.11 / sqrt_n) * d))
}

/// `P(K > t)` for the Kolmogorov distribution.
fn kolmogorov_survival(t: f64) -> f64 {
    if t < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * t * t).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn energy_from_pooled(d: &[Vec<f64>], idx: &[usize], n: usize) -> f64 {
    let (a, b) = idx.split_at(n);
    let sum = |p: &[usize], q: &[usize]| -> f64 { p.iter().map(|&i| q.iter().map(|&j| d[i][j]).sum::<f64>()).sum() };
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let e = 2.0 * sum(a, b) / (na * nb) - sum(a, a) / (na * na) - sum(b, b) / (nb * nb);
    na * nb / (na + nb) * e
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyTest {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample energy statistic on upper-triangle vectors of the matrices,
/// with a permutation p-value.
pub fn energy_distance(
    a: &[DistanceMatrixSample],
    b: &[DistanceMatrixSample],
    permutations: usize,
    rng: &mut RngStream,
) -> Result<EnergyTest> {
    let va: Vec<Vec<f64>> = a.iter().map(|m| m.upper_triangle()).collect();
    let vb: Vec<Vec<f64>> = b.iter().map(|m| m.upper_triangle()).collect();
    energy_distance_vectors(&va, &vb, permutations, rng)
}

pub fn energy_distance_vectors(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    rng: &mut RngStream,
) -> Result<EnergyTest> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::Domain("energy distance needs two nonempty samples".into()));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(AnalysisError::Domain("matrices differ in size".into()));
    }
    let pooled: Vec<&Vec<f64>> = a.iter().chain(b).collect();
    let total = pooled.len();
    let d: Vec<Vec<f64>> = pooled.iter().map(|x| pooled.iter().map(|y| euclid(x, y)).collect()).collect();
    let mut idx: Vec<usize> = (0..total).collect();
    let statistic = energy_from_pooled(&d, &idx, a.len());
    let mut exceed = 0usize;
    for _ in 0..permutations {
        for i in (1..total).rev() {
            idx.swap(i, rng.below(i + 1));
        }
        if energy_from_pooled(&d, &idx, a.len()) >= statistic {
            exceed += 1;
        }
    }
    Ok(EnergyTest { statistic, p_value: (1 + exceed) as f64 / (1 + permutations) as f64 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceProfile {
    pub depths: Vec<usize>,
    /// Energy statistic between consecutive depths.
    pub discrepancy: Vec<f64>,
    pub p_values: Vec<f64>,
    /// Mean height of the sampled points at each depth.
    pub mean_height: Vec<f64>,
    pub mean_height_stderr: Vec<f64>,
    /// Successive discrepancy ratios.
    pub ratios: Vec<f64>,
    /// Per-level decay of the mean-height increments, one per consecutive
    /// pair of equally spaced increments.
    pub height_ratios: Vec<f64>,
    pub coupled: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileOptions {
    pub k: usize,
    pub reps: usize,
    pub permutations: usize,
    /// One trie per replicate shared by all depths; otherwise a fresh trie
    /// per depth.
    pub coupled: bool,
}

impl Default for ProfileOptions {
    fn default() -> Self {
        ProfileOptions { k: 2, reps: 500, permutations: 199, coupled: true }
    }
}

fn replicate_seed(seed: u64, rep: usize, salt: u64) -> u64 {
    mix64(seed ^ mix64(rep as u64 ^ salt))
}

/// Distance-matrix samples at every depth, plus discrepancies and the
/// mean-height series.
pub fn convergence_profile(
    law: &BranchLaw,
    depths: &[usize],
    options: ProfileOptions,
    engine: EngineConfig,
    seed: u64,
) -> Result<ConvergenceProfile> {
    if depths.is_empty() {
        return Err(AnalysisError::Domain("depths list is empty".into()));
    }
    if depths.windows(2).any(|w| w[0] >= w[1]) {
        return Err(AnalysisError::Domain("depths must be strictly increasing".into()));
    }
    if options.k == 0 || options.reps == 0 {
        return Err(AnalysisError::Domain("k and reps must be positive".into()));
    }
    let deepest = *depths.last().unwrap();
    let engine = EngineConfig { depth: deepest, max_depth: engine.max_depth.max(deepest), ..engine };
    let mut samples: Vec<Vec<DistanceMatrixSample>> = vec![Vec::with_capacity(options.reps); depths.len()];
    for rep in 0..options.reps {
        let mut rng = RngStream::new(seed, replicate_seed(seed, rep, 1));
        if options.coupled {
            let mut trie = ThetaTrie::new(law.clone(), replicate_seed(seed, rep, 2), engine)?;
            let points =
                (0..options.k).map(|_| trie.sample_point(deepest, Measure::Mu, &mut rng)).collect::<std::result::Result<Vec<_>, _>>()?;
            for (slot, &m) in depths.iter().enumerate() {
                samples[slot].push(trie.matrix_for(points.clone(), m)?);
            }
        } else {
            for (slot, &m) in depths.iter().enumerate() {
                let mut trie = ThetaTrie::new(law.clone(), replicate_seed(seed, rep, 3 + slot as u64), engine)?;
                samples[slot].push(trie.distance_matrix(options.k, m, &mut rng)?);
            }
        }
    }
    let mut rng = RngStream::new(seed, 0x7065_726d);
    let mut discrepancy = Vec::new();
    let mut p_values = Vec::new();
    for w in samples.windows(2) {
        let test = energy_distance(&w[0], &w[1], options.permutations, &mut rng)?;
        discrepancy.push(test.statistic);
        p_values.push(test.p_value);
    }
    let heights: Vec<Vec<f64>> =
        samples.iter().map(|ms| ms.iter().flat_map(|m| m.entries[0][1..].to_vec()).collect()).collect();
    let mean_height: Vec<f64> = heights.iter().map(|h| mean(h)).collect();
    let mean_height_stderr: Vec<f64> = heights.iter().map(|h| std_dev(h) / (h.len() as f64).sqrt()).collect();
    let ratios = discrepancy.windows(2).map(|w| w[1] / w[0]).collect();
    let mut height_ratios = Vec::new();
    for t in 0..depths.len().saturating_sub(2) {
        let spacing = depths[t + 1] - depths[t];
        if depths[t + 2] - depths[t + 1] != spacing {
            continue;
        }
        let first = mean_height[t + 1] - mean_height[t];
        let second = mean_height[t + 2] - mean_height[t + 1];
        height_ratios.push((second / first).powf(1.0 / spacing as f64));
    }
    Ok(ConvergenceProfile {
        depths: depths.to_vec(),
        discrepancy,
        p_values,
        mean_height,
        mean_height_stderr,
        ratios,
        height_ratios,
        coupled: options.coupled,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub first_half: f64,
    pub second_half: f64,
    /// Halves agree within 10%.
    pub stable: bool,
}

/// Empirical `p`-th moment with a bootstrap standard error.
pub fn moment_estimate(samples: &[f64], p: f64) -> Result<MomentEstimate> {
    if !(p >= 1.0) {
        return Err(AnalysisError::Domain(format!("moment order {p} must be at least 1")));
    }
    if samples.is_empty() {
        return Err(AnalysisError::Domain("no samples".into()));
    }
    let powered: Vec<f64> = samples.iter().map(|x| x.abs().powf(p)).collect();
    let estimate = mean(&powered);
    let n = powered.len();
    let mut rng = RngStream::new(0x626f_6f74, n as u64);
    let boot: Vec<f64> = (0..200)
        .map(|_| {
            let draw: Vec<f64> = (0..n).map(|_| powered[rng.below(n)]).collect();
            mean(&draw)
        })
        .collect();
    let (a, b) = powered.split_at(n / 2);
    let first_half = if a.is_empty() { estimate } else { mean(a) };
    let second_half = mean(b);
    let scale = first_half.abs().max(second_half.abs());
    let stable = scale == 0.0 || (first_half - second_half).abs() / scale < 0.1;
    Ok(MomentEstimate { estimate, stderr: std_dev(&boot), first_half, second_half, stable })
}

/// Farthest-first traversal of a point cloud: insertion radii are
/// non-increasing, and the first `k` points form a cover at any radius at
/// least the `(k + 1)`-th insertion radius while staying that far apart.
pub fn insertion_radii(d: &[Vec<f64>]) -> Vec<f64> {
    let n = d.len();
    if n == 0 {
        return Vec::new();
    }
    let mut radii = vec![f64::INFINITY];
    let mut nearest: Vec<f64> = d[0].clone();
    let mut used = vec![false; n];
    used[0] = true;
    for _ in 1..n {
        let (far, r) = (0..n).filter(|&i| !used[i]).map(|i| (i, nearest[i])).fold((usize::MAX, -1.0), |acc, x| {
            if x.1 > acc.1 {
                x
            } else {
                acc
            }
        });
        used[far] = true;
        radii.push(r);
        for i in 0..n {
            nearest[i] = nearest[i].min(d[far][i]);
        }
    }
    radii
}

/// Number of radius-`eps` balls in the farthest-first cover.
pub fn covering_number(radii: &[f64], eps: f64) -> usize {
    radii.iter().filter(|&&r| r > eps).count().max(usize::from(!radii.is_empty()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitMode {
    Minkowski,
    HausdorffProbe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub rep: usize,
    pub epsilon: f64,
    pub statistic: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionFit {
    pub grid: Vec<GridPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub slope_stderr: f64,
    pub mode: FitMode,
}

fn check_grid(grid: &[f64], floor: f64) -> Result<()> {
    if grid.len() < 4 {
        return Err(AnalysisError::Domain(format!("grid has {} points, needs at least 4", grid.len())));
    }
    if grid.iter().any(|e| !(*e > 0.0)) {
        return Err(AnalysisError::Domain("grid values must be positive".into()));
    }
    let (lo, hi) = grid.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &e| (l.min(e), h.max(e)));
    if hi / lo < 10.0 * (1.0 - 1e-12) {
        return Err(AnalysisError::Domain(format!("grid spans {lo}..{hi}, less than one decade")));
    }
    if lo < 10.0 * floor {
        return Err(AnalysisError::Resolution(format!(
            "smallest grid value {lo} is below the lower bound 10 x resolution_floor = {}",
            10.0 * floor
        )));
    }
    Ok(())
}

/// Pooled log-log fit of covering numbers against `1/eps`.
pub fn fit_covering(clouds: &[Vec<Vec<f64>>], eps_grid: &[f64]) -> Result<DimensionFit> {
    let mut grid = Vec::new();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for (rep, d) in clouds.iter().enumerate() {
        let radii = insertion_radii(d);
        for &eps in eps_grid {
            let n = covering_number(&radii, eps) as f64;
            grid.push(GridPoint { rep, epsilon: eps, statistic: n });
            xs.push((1.0 / eps).ln());
            ys.push(n.ln());
        }
    }
    let fit = ols(&xs, &ys)?;
    Ok(DimensionFit {
        grid,
        slope: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        slope_stderr: fit.slope_stderr,
        mode: FitMode::Minkowski,
    })
}

fn max_entry(d: &[Vec<f64>]) -> f64 {
    d.iter().flatten().fold(0.0, |a, &b| a.max(b))
}

/// Covering-number slope over `reps` independent realizations, each probed
/// with `n_points` μ-points.
pub fn minkowski_fit(
    law: &BranchLaw,
    depth: usize,
    n_points: usize,
    eps_grid: &[f64],
    reps: usize,
    engine: EngineConfig,
    seed: u64,
) -> Result<DimensionFit> {
    check_grid(eps_grid, engine.resolution_floor)?;
    if reps == 0 || n_points == 0 {
        return Err(AnalysisError::Domain("reps and n_points must be positive".into()));
    }
    let engine = EngineConfig { depth, max_depth: engine.max_depth.max(depth), ..engine };
    let mut clouds = Vec::with_capacity(reps);
    for rep in 0..reps {
        let mut rng = RngStream::new(seed, replicate_seed(seed, rep, 11));
        let mut trie = ThetaTrie::new(law.clone(), replicate_seed(seed, rep, 12), engine)?;
        let points = sample_points(&mut trie, n_points, depth, Measure::Mu, &mut rng)?;
        clouds.push(trie.pairwise(&points, depth)?);
    }
    let diameters: Vec<f64> = clouds.iter().map(|d| max_entry(d)).collect();
    let diameter = median(&diameters);
    let hi = eps_grid.iter().fold(0.0f64, |a, &b| a.max(b));
    if hi > diameter / 2.0 {
        return Err(AnalysisError::Resolution(format!(
            "largest grid value {hi} exceeds the upper bound diameter/2 = {}",
            diameter / 2.0
        )));
    }
    fit_covering(&clouds, eps_grid)
}

fn sample_points(
    trie: &mut ThetaTrie,
    n: usize,
    depth: usize,
    measure: Measure,
    rng: &mut RngStream,
) -> Result<Vec<PointAddress>> {
    (0..n).map(|_| trie.sample_point(depth, measure, rng).map_err(AnalysisError::from)).collect()
}

/// Mass-scaling probe under μ̄: for each center, the fraction of mass points
/// within each radius is regressed on the radius in log-log scale; the
/// reported slope is the median over centers.
pub fn hausdorff_probe(
    law: &BranchLaw,
    depth: usize,
    n_centers: usize,
    n_mass_points: usize,
    radii_grid: &[f64],
    engine: EngineConfig,
    seed: u64,
) -> Result<DimensionFit> {
    check_grid(radii_grid, engine.resolution_floor)?;
    if n_centers == 0 || n_mass_points == 0 {
        return Err(AnalysisError::Domain("n_centers and n_mass_points must be positive".into()));
    }
    let engine = EngineConfig { depth, max_depth: engine.max_depth.max(depth), ..engine };
    let mut rng = RngStream::new(seed, replicate_seed(seed, 0, 21));
    let mut trie = ThetaTrie::new(law.clone(), replicate_seed(seed, 0, 22), engine)?;
    let centers = sample_points(&mut trie, n_centers, depth, Measure::MuBar, &mut rng)?;
    let mass = sample_points(&mut trie, n_mass_points, depth, Measure::MuBar, &mut rng)?;
    let smallest = radii_grid.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let mut grid = Vec::new();
    let mut fits = Vec::new();
    let mut empty_at_smallest = 0;
    for (c, center) in centers.iter().enumerate() {
        let dist: Vec<f64> =
            mass.iter().map(|p| trie.pair_distance(center, p, depth)).collect::<std::result::Result<_, _>>()?;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for &r in radii_grid {
            let frac = dist.iter().filter(|&&d| d <= r).count() as f64 / n_mass_points as f64;
            grid.push(GridPoint { rep: c, epsilon: r, statistic: frac });
            if frac > 0.0 {
                xs.push(r.ln());
                ys.push(frac.ln());
            } else if r == smallest {
                empty_at_smallest += 1;
            }
        }
        if xs.len() >= 2 {
            if let Ok(fit) = ols(&xs, &ys) {
                fits.push(fit);
            }
        }
    }
    if 2 * empty_at_smallest > n_centers {
        return Err(AnalysisError::Resolution(format!(
            "{empty_at_smallest} of {n_centers} centers have empty balls at radius {smallest}"
        )));
    }
    if fits.is_empty() {
        return Err(AnalysisError::Resolution("no center had two nonempty radii".into()));
    }
    let slopes: Vec<f64> = fits.iter().map(|f| f.slope).collect();
    let intercepts: Vec<f64> = fits.iter().map(|f| f.intercept).collect();
    let r2s: Vec<f64> = fits.iter().map(|f| f.r2).collect();
    Ok(DimensionFit {
        grid,
        slope: median(&slopes),
        intercept: median(&intercepts),
        r2: median(&r2s),
        // asymptotic standard error of a sample median
        slope_stderr: 1.2533 * std_dev(&slopes) / (slopes.len() as f64).sqrt(),
        mode: FitMode::HausdorffProbe,
    })
}
