//! Beta, Dirichlet and Poisson-Dirichlet variates, size-biased picks and the
//! a-diversity functional.

use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{gamma, ln_gamma};
use thiserror::Error;

use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplerError {
    #[error("domain error: {0}")]
    Domain(String),
}

type Result<T> = std::result::Result<T, SamplerError>;

fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(SamplerError::Domain(msg.into()))
}

/// Hard cap on stick-breaking steps for [`sample_pd`].
pub const DEFAULT_MAX_STICKS: usize = 1 << 20;

/// Logarithm of a Gamma(shape, 1) variate. Small shapes go through
/// `G(a) = G(a + 1) * U^(1/a)` in log space so they never underflow.
pub fn sample_ln_gamma(rng: &mut RngStream, shape: f64) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("shape checked").sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("shape checked").sample(rng);
        g.ln() + rng.uniform_open0().ln() / shape
    }
}

pub fn sample_beta(rng: &mut RngStream, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return domain(format!("beta parameters must be positive, got ({a}, {b})"));
    }
    Ok(beta_pair(rng, a, b).0)
}

/// A Beta draw together with its complement, each computed from the log-gamma
/// difference so that neither rounds to zero when the other is near one.
fn beta_pair(rng: &mut RngStream, a: f64, b: f64) -> (f64, f64) {
    let la = sample_ln_gamma(rng, a);
    let lb = sample_ln_gamma(rng, b);
    (1.0 / (1.0 + (lb - la).exp()), 1.0 / (1.0 + (la - lb).exp()))
}

pub fn sample_dirichlet(rng: &mut RngStream, betas: &[f64]) -> Result<Vec<f64>> {
    if betas.is_empty() {
        return domain("dirichlet needs at least one parameter");
    }
    if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
        return domain(format!("dirichlet parameters must be positive, got {b}"));
    }
    let logs: Vec<f64> = betas.iter().map(|&b| sample_ln_gamma(rng, b)).collect();
    let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut x: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = x.iter().sum();
    for v in &mut x {
        *v /= total;
    }
    Ok(x)
}

/// A ranked Poisson-Dirichlet sequence cut off once the residual stick is
/// small. The residual is kept as `tail_mass`, never renormalized away.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedPD {
    /// Non-increasing atom masses.
    pub atoms: Vec<f64>,
    pub tail_mass: f64,
    pub a: f64,
    pub b: f64,
    /// Number of stick-breaking steps taken so far.
    pub sticks: usize,
    /// True when the step cap stopped generation before the residual fell
    /// below the requested threshold.
    pub capped: bool,
    /// Index in `atoms` of the first stick broken, which is a size-biased
    /// pick from the untruncated sequence.
    pub first: usize,
}

impl TruncatedPD {
    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().sum::<f64>() + self.tail_mass
    }

    /// Continues stick-breaking on the residual until it drops below
    /// `eps_tail` or `max_sticks` total steps. Returns the new atoms in
    /// generation order, which partition the old tail.
    pub fn refine(&mut self, rng: &mut RngStream, eps_tail: f64, max_sticks: usize) -> Vec<f64> {
        let (fresh, residual, capped) =
            break_sticks(rng, self.a, self.b, self.sticks, self.tail_mass, eps_tail, max_sticks);
        self.sticks += fresh.len();
        self.tail_mass = residual;
        self.capped = capped;
        let head = self.atoms.get(self.first).or(fresh.first()).copied();
        self.atoms.extend_from_slice(&fresh);
        self.atoms.sort_by(|x, y| y.total_cmp(x));
        self.first = head.and_then(|h| self.atoms.iter().position(|&x| x == h)).unwrap_or(0);
        fresh
    }
}

fn check_pd_params(a: f64, b: f64) -> Result<()> {
    if !(a > 0.0 && a < 1.0) {
        return domain(format!("PD discount must lie in (0,1), got {a}"));
    }
    if !(b >= -a) || !b.is_finite() {
        return domain(format!("PD strength must be at least -a = {}, got {b}", -a));
    }
    Ok(())
}

/// Stick-breaking from step `done + 1` with `residual` mass left.
fn break_sticks(
    rng: &mut RngStream,
    a: f64,
    b: f64,
    done: usize,
    mut residual: f64,
    eps_tail: f64,
    max_sticks: usize,
) -> (Vec<f64>, f64, bool) {
    let mut out = Vec::new();
    let mut i = done;
    while residual >= eps_tail && residual > 0.0 {
        if i >= max_sticks {
            return (out, residual, true);
        }
        i += 1;
        let (w, rest) = beta_pair(rng, 1.0 - a, b + i as f64 * a);
        out.push(residual * w);
        residual *= rest;
    }
    (out, residual, false)
}

pub fn sample_pd(rng: &mut RngStream, a: f64, b: f64, eps_tail: f64) -> Result<TruncatedPD> {
    sample_pd_capped(rng, a, b, eps_tail, DEFAULT_MAX_STICKS)
}

pub fn sample_pd_capped(
    rng: &mut RngStream,
    a: f64,
    b: f64,
    eps_tail: f64,
    max_sticks: usize,
) -> Result<TruncatedPD> {
    check_pd_params(a, b)?;
    if !(eps_tail > 0.0 && eps_tail < 1.0) {
        return domain(format!("eps_tail must lie in (0,1), got {eps_tail}"));
    }
    if b == -a {
        return Ok(TruncatedPD { atoms: vec![1.0], tail_mass: 0.0, a, b, sticks: 1, capped: false, first: 0 });
    }
    let (mut atoms, tail_mass, capped) = break_sticks(rng, a, b, 0, 1.0, eps_tail, max_sticks.max(1));
    let sticks = atoms.len();
    let head = atoms.first().copied();
    atoms.sort_by(|x, y| y.total_cmp(x));
    let first = head.and_then(|h| atoms.iter().position(|&x| x == h)).unwrap_or(0);
    Ok(TruncatedPD { atoms, tail_mass, a, b, sticks, capped, first })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pick {
    Index(usize, f64),
    Tail(f64),
}

impl Pick {
    pub fn mass(&self) -> f64 {
        match *self {
            Pick::Index(_, m) | Pick::Tail(m) => m,
        }
    }
}

/// Locates `u` in the cumulative masses; `None` means it fell in the tail.
pub fn locate(masses: &[f64], mut u: f64) -> Option<usize> {
    for (i, &m) in masses.iter().enumerate() {
        if u < m {
            return Some(i);
        }
        u -= m;
    }
    None
}

pub fn size_biased_pick(rng: &mut RngStream, masses: &[f64], tail_mass: f64) -> Result<Pick> {
    if masses.iter().any(|m| !(*m >= 0.0)) || !(tail_mass >= 0.0) {
        return domain("masses must be non-negative");
    }
    let total = masses.iter().sum::<f64>() + tail_mass;
    if (total - 1.0).abs() > 1e-9 {
        return domain(format!("masses sum to {total}, expected 1"));
    }
    let u = rng.uniform() * total;
    match locate(masses, u) {
        // the open upper end of the draw keeps zero-mass atoms unreachable
        Some(i) => Ok(Pick::Index(i, masses[i])),
        None if tail_mass > 0.0 => Ok(Pick::Tail(tail_mass)),
        None => {
            let i = masses.iter().rposition(|m| *m > 0.0).expect("positive total");
            Ok(Pick::Index(i, masses[i]))
        }
    }
}

/// Size-biased pick that never stops at the tail. Given the sticks broken so
/// far, the normalized tail is PD(a, b + n a), whose next stick is itself a
/// size-biased pick, so a tail hit is resolved by breaking one more stick.
pub fn size_biased_mass_resolved(rng: &mut RngStream, pd: &mut TruncatedPD) -> f64 {
    let u = rng.uniform();
    if let Some(i) = locate(&pd.atoms, u) {
        return pd.atoms[i];
    }
    if pd.tail_mass <= 0.0 {
        return *pd.atoms.last().expect("non-empty");
    }
    let cap = pd.sticks + 1;
    pd.refine(rng, 0.0, cap)[0]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityEstimate {
    pub value: f64,
    pub window: usize,
}

/// Default averaging window for [`diversity`]: `max(10, 10%)` of the ranks
/// available.
pub fn default_window(ranks: usize) -> usize {
    (ranks / 10).max(10).min(ranks.max(1))
}

/// `Γ(1-a)` times the mean of `n (P_n)^a` over the last `window` exactly
/// ranked atoms. Only atoms heavier than the tail are known to hold their
/// true rank, so deeper atoms are left out of the window.
pub fn diversity(pd: &TruncatedPD, a: f64, window: Option<usize>) -> Result<DiversityEstimate> {
    if let Some(w) = window {
        if w == 0 {
            return domain("window must be at least 1");
        }
        if w > pd.atoms.len() {
            return domain(format!("window {w} exceeds the {} available atoms", pd.atoms.len()));
        }
    }
    if pd.tail_mass == 0.0 && pd.atoms.len() == 1 {
        return Ok(DiversityEstimate { value: 0.0, window: 1 });
    }
    let ranked = pd.atoms.iter().take_while(|&&m| m > pd.tail_mass).count().max(1);
    let w = window.unwrap_or_else(|| default_window(ranked)).min(ranked);
    let sum: f64 = (ranked - w..ranked).map(|k| (k + 1) as f64 * pd.atoms[k].powf(a)).sum();
    Ok(DiversityEstimate { value: gamma(1.0 - a) * sum / w as f64, window: w })
}

/// Mean a-diversity of PD(a, theta): `Γ(θ+1) (θ/a + 1) / Γ(θ+a+1)`.
pub fn mean_diversity(a: f64, theta: f64) -> f64 {
    (ln_gamma(theta + 1.0) - ln_gamma(theta + a + 1.0)).exp() * (theta / a + 1.0)
}

/// Diversity conditioned on the sticks generated so far. The normalized
/// remainder is PD(a, b + n a) and its diversity scales by `tail^a`, so this
/// replaces the unseen part by its conditional mean.
pub fn diversity_given_sticks(pd: &TruncatedPD) -> f64 {
    if pd.tail_mass <= 0.0 {
        // the degenerate sequence has no tail; a finished sequence is handled
        // by the ranked estimator
        return if pd.atoms.len() == 1 { 0.0 } else { diversity(pd, pd.a, None).map_or(0.0, |d| d.value) };
    }
    let theta = pd.b + pd.sticks as f64 * pd.a;
    pd.tail_mass.powf(pd.a) * mean_diversity(pd.a, theta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mean_sd(x: &[f64]) -> (f64, f64) {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
        (m, v.sqrt())
    }

    #[test]
    fn beta_rejects_bad_parameters() {
        let mut r = RngStream::new(1, 0);
        assert!(sample_beta(&mut r, 0.0, 1.0).is_err());
        assert!(sample_beta(&mut r, 1.0, -2.0).is_err());
        assert!(sample_dirichlet(&mut r, &[]).is_err());
        assert!(sample_dirichlet(&mut r, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn beta_means() {
        let mut r = RngStream::new(2, 0);
        for &(a, b) in &[(2.0, 2.0), (0.5, 1.5), (0.05, 3.0)] {
            let x: Vec<f64> = (0..10_000).map(|_| sample_beta(&mut r, a, b).unwrap()).collect();
            let (m, sd) = mean_sd(&x);
            let target = a / (a + b);
            assert!((m - target).abs() < 3.0 * sd / 100.0, "({a},{b}) mean {m} vs {target}");
        }
    }

    #[test]
    fn dirichlet_on_simplex() {
        let mut r = RngStream::new(3, 0);
        assert_eq!(sample_dirichlet(&mut r, &[5.0]).unwrap(), vec![1.0]);
        let third = 1.0 / 3.0;
        let mut sums = [0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            let x = sample_dirichlet(&mut r, &[third; 4]).unwrap();
            assert!((x.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for (s, v) in sums.iter_mut().zip(&x) {
                *s += v;
            }
        }
        // coordinate variance of Dir(1/3 x4) is (1/4)(3/4)/(4/3 + 1)
        let sd = (0.25 * 0.75 / (4.0 / 3.0 + 1.0) as f64).sqrt();
        for s in sums {
            assert!((s / n as f64 - 0.25).abs() < 3.0 * sd / (n as f64).sqrt());
        }
    }

    #[test]
    fn pd_degenerate_and_conservation() {
        let mut r = RngStream::new(4, 0);
        let pd = sample_pd(&mut r, 0.5, -0.5, 1e-3).unwrap();
        assert_eq!(pd.atoms, vec![1.0]);
        assert_eq!(pd.tail_mass, 0.0);
        let pd = sample_pd(&mut r, 0.3, 2.0, 1e-4).unwrap();
        assert!((pd.total_mass() - 1.0).abs() < 1e-12);
        assert!(pd.tail_mass < 1e-4);
        assert!(pd.atoms.windows(2).all(|w| w[0] >= w[1]));
        assert!(sample_pd(&mut r, 1.0, 0.0, 1e-3).is_err());
        assert!(sample_pd(&mut r, 0.5, -0.6, 1e-3).is_err());
    }

    #[test]
    fn refine_keeps_mass() {
        let mut r = RngStream::new(5, 0);
        let mut pd = sample_pd(&mut r, 0.5, 0.5, 1e-2).unwrap();
        let tail = pd.tail_mass;
        let fresh = pd.refine(&mut r, 1e-4, DEFAULT_MAX_STICKS);
        assert!((fresh.iter().sum::<f64>() + pd.tail_mass - tail).abs() < 1e-15);
        assert!((pd.total_mass() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pick_single_atom_and_symmetry() {
        let mut r = RngStream::new(6, 0);
        for _ in 0..100 {
            assert_eq!(size_biased_pick(&mut r, &[1.0], 0.0).unwrap(), Pick::Index(0, 1.0));
        }
        let n = 10_000;
        let zeros = (0..n)
            .filter(|_| matches!(size_biased_pick(&mut r, &[0.5, 0.5], 0.0).unwrap(), Pick::Index(0, _)))
            .count();
        assert!((zeros as f64 / n as f64 - 0.5).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!(size_biased_pick(&mut r, &[0.5, 0.4], 0.0).is_err());
        for _ in 0..1000 {
            let p = size_biased_pick(&mut r, &[0.0, 0.7, 0.0, 0.3], 0.0).unwrap();
            assert!(p.mass() > 0.0);
        }
    }

    #[test]
    fn diversity_degenerate_is_zero() {
        let mut r = RngStream::new(7, 0);
        let pd = sample_pd(&mut r, 0.4, -0.4, 1e-3).unwrap();
        let d = diversity(&pd, 0.4, None).unwrap();
        assert_eq!(d, DiversityEstimate { value: 0.0, window: 1 });
        assert!(diversity(&pd, 0.4, Some(5)).is_err());
    }

    #[test]
    fn mean_diversity_matches_mittag_leffler_mean() {
        // PD(a, 0) has mean diversity 1 / Γ(1 + a)
        for a in [0.3, 0.5, 0.8] {
            assert!((mean_diversity(a, 0.0) - 1.0 / gamma(1.0 + a)).abs() < 1e-12);
        }
    }

    #[test]
    fn conditional_diversity_tracks_ranked_estimate() {
        let mut r = RngStream::new(8, 0);
        let (a, b) = (0.5, 0.5);
        let mut ranked = Vec::new();
        let mut cond = Vec::new();
        for _ in 0..2000 {
            let pd = sample_pd(&mut r, a, b, 1e-4).unwrap();
            ranked.push(diversity(&pd, a, None).unwrap().value);
            cond.push(diversity_given_sticks(&pd));
        }
        let (mr, sr) = mean_sd(&ranked);
        let (mc, sc) = mean_sd(&cond);
        let exact = mean_diversity(a, b);
        eprintln!("ranked {mr} ({sr}) conditional {mc} ({sc}) exact {exact}");
        assert!((mc - exact).abs() < 4.0 * sc / (2000f64).sqrt(), "{mc} vs {exact}");
        assert!((mr - exact).abs() / exact < 0.15, "{mr} vs {exact}");
    }
}
