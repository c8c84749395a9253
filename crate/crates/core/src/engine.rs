//! The coupled recursion: one lazily realized node per word of the index
//! set, from which heights, pair distances, distance matrices and cut-lines
//! are computed on demand.
//!
//! Node realizations and exit-point letters are pure functions of
//! `(seed, node hash)`, so caches can be dropped at any time without
//! changing results.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::models::{BranchLaw, BranchParams, ModelError};
use crate::rng::{keyed_uniform, RngStream};
use crate::samplers::locate;
use crate::tree::{child_hash, mix64, ThetaAddress, ROOT_HASH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("depth {requested} exceeds the configured maximum {max}")]
    Depth { requested: usize, max: usize },
    #[error("node budget of {max_nodes} exhausted after {} cut-line nodes", partial.nodes.len())]
    Budget { max_nodes: usize, partial: CutLine },
    #[error("domain error: {0}")]
    Domain(String),
}

type Result<T> = std::result::Result<T, EngineError>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EngineConfig {
    /// Default recursion depth for queries that do not pass one.
    pub depth: usize,
    pub max_depth: usize,
    /// Subspaces whose distance scale falls below this are singletons.
    pub resolution_floor: f64,
    /// Realized nodes kept before the node cache is flushed.
    pub node_cache: usize,
    /// Memoized distances kept before the memo is flushed.
    pub memo_cache: usize,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { depth: 20, max_depth: 400, resolution_floor: 0.0, node_cache: 1 << 15, memo_cache: 1 << 20 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    /// Recursive measure built from the sampling weights.
    Mu,
    /// Recursive measure built from the rescaling weights.
    MuBar,
}

/// A sampled point: one letter per level. An address that ends early sits
/// at the root of the subspace where it stops, or inside a remainder
/// singleton when its last letter is a remainder index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointAddress {
    pub letters: Vec<u32>,
    pub measure: Measure,
}

impl PointAddress {
    pub fn new(letters: Vec<u32>, measure: Measure) -> Self {
        PointAddress { letters, measure }
    }

    /// The root point.
    pub fn root() -> Self {
        PointAddress { letters: Vec::new(), measure: Measure::Mu }
    }

    fn key(&self) -> u64 {
        self.letters.iter().fold(0x1f83_d9ab_fb41_bd6b, |h, &l| child_hash(h, l))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceMatrixSample {
    pub entries: Vec<Vec<f64>>,
    pub depth: usize,
    /// The sampled points; row 0 of `entries` is the root.
    pub addresses: Vec<PointAddress>,
}

impl DistanceMatrixSample {
    pub fn size(&self) -> usize {
        self.entries.len()
    }

    /// Number of violated metric axioms: asymmetric or non-zero diagonal
    /// entries and triangle inequalities broken by more than `tol`.
    pub fn metric_violations(&self, tol: f64) -> usize {
        let d = &self.entries;
        let n = d.len();
        let mut bad = 0;
        for i in 0..n {
            if d[i][i] != 0.0 {
                bad += 1;
            }
            for j in 0..n {
                if d[i][j] != d[j][i] || !(d[i][j] >= 0.0) {
                    bad += 1;
                }
                for k in 0..n {
                    if d[i][k] > d[i][j] + d[j][k] + tol {
                        bad += 1;
                    }
                }
            }
        }
        bad
    }

    /// Upper-triangle entries in row order, root row included.
    pub fn upper_triangle(&self) -> Vec<f64> {
        let n = self.entries.len();
        (0..n).flat_map(|i| ((i + 1)..n).map(move |j| (i, j))).map(|(i, j)| self.entries[i][j]).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutNode {
    pub address: ThetaAddress,
    pub mass_r: f64,
    pub mass_s: f64,
    /// The node is a remainder singleton rather than a realized subspace.
    pub remainder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CutLine {
    pub nodes: Vec<CutNode>,
    pub epsilon: f64,
}

impl CutLine {
    pub fn total_mass_r(&self) -> f64 {
        self.nodes.iter().fold(0.0, |acc, n| acc + n.mass_r)
    }

    /// Mass sitting on remainder singletons.
    pub fn censored_mass_r(&self) -> f64 {
        self.nodes.iter().filter(|n| n.remainder).fold(0.0, |acc, n| acc + n.mass_r)
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    hash: u64,
    level: usize,
    /// Product of `R^alpha` along the word.
    scale: f64,
}

/// A point seen from inside some node.
#[derive(Debug, Clone, Copy)]
enum PointRef<'a> {
    Root,
    /// The exit point of the subspace whose node hash is stored.
    Exit(u64),
    /// Remaining letters of a sampled point and its key.
    Sample(&'a [u32], u64),
}

impl PointRef<'_> {
    fn tag(&self) -> u64 {
        match *self {
            PointRef::Root => 0,
            PointRef::Exit(h) => mix64(h ^ 0x3c6e_f372_fe94_f82b) | 1,
            PointRef::Sample(rest, key) => mix64(key ^ (rest.len() as u64).wrapping_mul(0xa54f_f53a_5f1d_36f1)) | 1,
        }
    }
}

/// A lazily realized tree of independent branch draws shared by every
/// query, so that all depths and all points are coupled.
pub struct ThetaTrie {
    law: BranchLaw,
    seed: u64,
    config: EngineConfig,
    fixed: Option<Arc<BranchParams>>,
    nodes: HashMap<u64, Arc<BranchParams>>,
    memo: HashMap<(u64, u64, u64, usize), f64>,
}

impl ThetaTrie {
    pub fn new(law: BranchLaw, seed: u64, config: EngineConfig) -> Result<Self> {
        if config.depth > config.max_depth {
            return Err(EngineError::Depth { requested: config.depth, max: config.max_depth });
        }
        if !(config.resolution_floor >= 0.0) {
            return Err(EngineError::Domain(format!("resolution_floor {} is negative", config.resolution_floor)));
        }
        let fixed = if law.is_deterministic() {
            Some(Arc::new(law.sample_branch(&mut RngStream::new(seed, ROOT_HASH))?))
        } else {
            None
        };
        Ok(ThetaTrie { law, seed, config, fixed, nodes: HashMap::new(), memo: HashMap::new() })
    }

    pub fn law(&self) -> &BranchLaw {
        &self.law
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// Drops cached realizations and distances; results are unaffected.
    pub fn clear_caches(&mut self) {
        self.nodes.clear();
        self.memo.clear();
    }

    fn root_node(&self) -> Node {
        Node { hash: ROOT_HASH, level: 0, scale: 1.0 }
    }

    fn node_at(&mut self, address: &ThetaAddress) -> Result<Node> {
        let mut node = self.root_node();
        for &letter in &address.0 {
            let params = self.realize(node.hash)?;
            if letter as usize >= params.slots() {
                return Err(ModelError::Unrealized(letter as usize).into());
            }
            node = self.child(node, &params, letter);
        }
        Ok(node)
    }

    fn realize(&mut self, hash: u64) -> Result<Arc<BranchParams>> {
        if let Some(p) = &self.fixed {
            return Ok(Arc::clone(p));
        }
        if let Some(p) = self.nodes.get(&hash) {
            return Ok(Arc::clone(p));
        }
        let params = Arc::new(self.law.sample_branch(&mut RngStream::new(self.seed, hash))?);
        if self.nodes.len() >= self.config.node_cache {
            self.nodes.clear();
        }
        self.nodes.insert(hash, Arc::clone(&params));
        Ok(params)
    }

    /// Branch parameters of the node at `address`.
    pub fn params_at(&mut self, address: &ThetaAddress) -> Result<Arc<BranchParams>> {
        let node = self.node_at(address)?;
        self.realize(node.hash)
    }

    fn child(&self, node: Node, params: &BranchParams, letter: u32) -> Node {
        Node {
            hash: child_hash(node.hash, letter),
            level: node.level + 1,
            scale: node.scale * params.mass_r(letter as usize).powf(params.alpha),
        }
    }

    fn check_depth(&self, m: usize) -> Result<()> {
        if m > self.config.max_depth {
            return Err(EngineError::Depth { requested: m, max: self.config.max_depth });
        }
        Ok(())
    }

    fn below_floor(&self, node: Node) -> bool {
        node.scale < self.config.resolution_floor
    }

    fn letter(&self, node: Node, params: &BranchParams, point: PointRef) -> u32 {
        match point {
            PointRef::Root => 0,
            PointRef::Sample(rest, _) => rest.first().copied().unwrap_or(0),
            PointRef::Exit(origin) => {
                pick(params, Measure::Mu, keyed_uniform(self.seed, mix64(node.hash ^ mix64(origin))))
            }
        }
    }

    /// Samples a point to depth `m`. Sampling stops early on a remainder
    /// letter or once the subspace is below the resolution floor.
    pub fn sample_point(&mut self, m: usize, measure: Measure, rng: &mut RngStream) -> Result<PointAddress> {
        self.check_depth(m)?;
        let root = self.root_node();
        self.sample_from(root, m, measure, rng)
    }

    fn sample_from(&mut self, start: Node, m: usize, measure: Measure, rng: &mut RngStream) -> Result<PointAddress> {
        let mut letters = Vec::with_capacity(m);
        let mut node = start;
        for _ in 0..m {
            if self.below_floor(node) {
                break;
            }
            let params = self.realize(node.hash)?;
            let letter = pick(&params, measure, rng.uniform());
            letters.push(letter);
            if Some(letter as usize) == params.remainder_index() {
                break;
            }
            node = self.child(node, &params, letter);
        }
        Ok(PointAddress { letters, measure })
    }

    /// Height of `p` at recursion depth `m`.
    pub fn root_distance(&mut self, p: &PointAddress, m: usize) -> Result<f64> {
        self.check_depth(m)?;
        let root = self.root_node();
        self.dist(root, PointRef::Root, PointRef::Sample(&p.letters, p.key()), m)
    }

    /// Distance between two sampled points at recursion depth `m`.
    pub fn pair_distance(&mut self, p1: &PointAddress, p2: &PointAddress, m: usize) -> Result<f64> {
        self.check_depth(m)?;
        if p1.letters == p2.letters {
            return Ok(0.0);
        }
        // a fixed argument order fixes the summation order, so swaps agree bitwise
        let (p1, p2) = if p1.letters <= p2.letters { (p1, p2) } else { (p2, p1) };
        let root = self.root_node();
        self.dist(root, PointRef::Sample(&p1.letters, p1.key()), PointRef::Sample(&p2.letters, p2.key()), m)
    }

    /// Samples `k` μ-points on this trie and returns their root-anchored
    /// distance matrix at depth `m`.
    pub fn distance_matrix(&mut self, k: usize, m: usize, rng: &mut RngStream) -> Result<DistanceMatrixSample> {
        if k == 0 {
            return Err(EngineError::Domain("k must be at least 1".into()));
        }
        let points = (0..k).map(|_| self.sample_point(m, Measure::Mu, rng)).collect::<Result<Vec<_>>>()?;
        self.matrix_for(points, m)
    }

    /// Distance matrix of given points, row 0 being the root.
    pub fn matrix_for(&mut self, points: Vec<PointAddress>, m: usize) -> Result<DistanceMatrixSample> {
        let n = points.len() + 1;
        let mut entries = vec![vec![0.0; n]; n];
        for a in 0..points.len() {
            let h = self.root_distance(&points[a], m)?;
            entries[0][a + 1] = h;
            entries[a + 1][0] = h;
            for b in (a + 1)..points.len() {
                let d = self.pair_distance(&points[a], &points[b], m)?;
                entries[a + 1][b + 1] = d;
                entries[b + 1][a + 1] = d;
            }
        }
        Ok(DistanceMatrixSample { entries, depth: m, addresses: points })
    }

    /// Pairwise distances of `points` without the root row.
    pub fn pairwise(&mut self, points: &[PointAddress], m: usize) -> Result<Vec<Vec<f64>>> {
        let n = points.len();
        let mut d = vec![vec![0.0; n]; n];
        for a in 0..n {
            for b in (a + 1)..n {
                let v = self.pair_distance(&points[a], &points[b], m)?;
                d[a][b] = v;
                d[b][a] = v;
            }
        }
        Ok(d)
    }

    /// Distance inside the space of `node`, in that space's own units.
    fn dist(&mut self, node: Node, a: PointRef, b: PointRef, remaining: usize) -> Result<f64> {
        if remaining == 0 || self.below_floor(node) {
            return Ok(0.0);
        }
        let (ta, tb) = (a.tag(), b.tag());
        if ta == tb {
            return Ok(0.0);
        }
        let key = (node.hash, ta.min(tb), ta.max(tb), remaining);
        if let Some(&v) = self.memo.get(&key) {
            return Ok(v);
        }
        let params = self.realize(node.hash)?;
        let i = self.letter(node, &params, a);
        let j = self.letter(node, &params, b);
        let value = if i == j {
            self.term(node, &params, i, advance(a), advance(b), remaining)?
        } else {
            let query = self.law.local_tree().path_excl_mrca(i as usize, j as usize).map_err(ModelError::from)?;
            let mut total = params.eval_l(i as usize, j as usize)?;
            if query.q == i as usize {
                let exit = PointRef::Exit(child_hash(node.hash, i));
                total += self.term(node, &params, i, advance(a), exit, remaining)?;
            }
            if query.q == j as usize {
                let exit = PointRef::Exit(child_hash(node.hash, j));
                total += self.term(node, &params, j, advance(b), exit, remaining)?;
            }
            for &k in &query.path {
                let k = k as u32;
                total += if k == i {
                    self.term(node, &params, i, PointRef::Root, advance(a), remaining)?
                } else if k == j {
                    self.term(node, &params, j, PointRef::Root, advance(b), remaining)?
                } else {
                    let exit = PointRef::Exit(child_hash(node.hash, k));
                    self.term(node, &params, k, PointRef::Root, exit, remaining)?
                };
            }
            total
        };
        // pairs of sampled points are rarely revisited; keep the memo for heights
        if !(matches!(a, PointRef::Sample(..)) && matches!(b, PointRef::Sample(..))) {
            if self.memo.len() >= self.config.memo_cache {
                self.memo.clear();
            }
            self.memo.insert(key, value);
        }
        Ok(value)
    }

    /// Rescaled distance inside the copy glued at vertex `k`.
    fn term(&mut self, node: Node, params: &BranchParams, k: u32, a: PointRef, b: PointRef, remaining: usize) -> Result<f64> {
        if Some(k as usize) == params.remainder_index() {
            return Ok(0.0);
        }
        let child = self.child(node, params, k);
        let factor = params.mass_r(k as usize).powf(params.alpha);
        Ok(factor * self.dist(child, a, b, remaining - 1)?)
    }

    /// Breadth-first expansion of the nodes whose mass product is at least
    /// `epsilon`, returning the children where it first drops below.
    pub fn cut_line(&mut self, epsilon: f64, max_nodes: usize) -> Result<CutLine> {
        if !(epsilon > 0.0) {
            return Err(EngineError::Domain(format!("epsilon {epsilon} must be positive")));
        }
        let mut line = CutLine { nodes: Vec::new(), epsilon };
        let mut queue = VecDeque::from([(ThetaAddress::root(), self.root_node(), 1.0, 1.0)]);
        let mut visited = 0usize;
        while let Some((address, node, mass_r, mass_s)) = queue.pop_front() {
            visited += 1;
            if visited + line.nodes.len() > max_nodes {
                return Err(EngineError::Budget { max_nodes, partial: line });
            }
            let params = self.realize(node.hash)?;
            for k in 0..params.slots() {
                let letter = k as u32;
                let child = CutNode {
                    address: address.child(letter),
                    mass_r: mass_r * params.mass_r(k),
                    mass_s: mass_s * params.mass_s(k),
                    remainder: Some(k) == params.remainder_index(),
                };
                if child.remainder || child.mass_r < epsilon {
                    line.nodes.push(child);
                } else {
                    let next = self.child(node, &params, letter);
                    queue.push_back((child.address, next, child.mass_r, child.mass_s));
                }
            }
        }
        Ok(line)
    }

    /// Counts cut-line subspaces whose rescaled height, estimated by the
    /// largest of `height_samples` sampled heights, exceeds `epsilon / 2`.
    pub fn big_subspace_count(
        &mut self,
        cutline: &CutLine,
        epsilon: f64,
        height_samples: usize,
        rng: &mut RngStream,
    ) -> Result<usize> {
        let mut count = 0;
        for cut in cutline.nodes.iter().filter(|n| !n.remainder) {
            let height = self.subspace_height(&cut.address, height_samples, rng)?;
            if height > epsilon / 2.0 {
                count += 1;
            }
        }
        Ok(count)
    }

    /// Largest sampled height of the subspace at `address`, in root units,
    /// using the remaining depth budget below it.
    pub fn subspace_height(&mut self, address: &ThetaAddress, samples: usize, rng: &mut RngStream) -> Result<f64> {
        let node = self.node_at(address)?;
        let remaining = self.config.depth.saturating_sub(node.level);
        let mut best = 0.0f64;
        for _ in 0..samples {
            let p = self.sample_from(node, remaining, Measure::Mu, rng)?;
            let h = self.dist(node, PointRef::Root, PointRef::Sample(&p.letters, p.key()), remaining)?;
            best = best.max(h);
        }
        Ok(node.scale * best)
    }
}

fn advance<'a>(point: PointRef<'a>) -> PointRef<'a> {
    match point {
        PointRef::Sample(rest, key) if rest.len() > 1 => PointRef::Sample(&rest[1..], key),
        PointRef::Sample(..) => PointRef::Root,
        other => other,
    }
}

/// Index drawn from the weights of `measure` (remainder included) by
/// inverting the cumulative sum at `u`.
fn pick(params: &BranchParams, measure: Measure, u: f64) -> u32 {
    let slots = params.slots();
    let mass = |k: usize| match measure {
        Measure::Mu => params.mass_s(k),
        Measure::MuBar => params.mass_r(k),
    };
    let masses: Vec<f64> = (0..slots).map(mass).collect();
    let total: f64 = masses.iter().sum();
    let k = locate(&masses, u * total).unwrap_or_else(|| (0..slots).rev().find(|&k| masses[k] > 0.0).unwrap_or(0));
    k as u32
}

/// Population-dynamics estimate of the mean heights `E[Y_0..=Y_depth]`.
///
/// A pool of `pool_size` height samples is advanced one level at a time,
/// each new sample built from one fresh branch draw and heights resampled
/// from the previous pool. Every pool entry has the exact law of `Y_t`, so
/// the pool means are unbiased even though entries are not independent.
pub fn mean_heights_population(
    law: &BranchLaw,
    depth: usize,
    pool_size: usize,
    rng: &mut RngStream,
) -> Result<Vec<f64>> {
    if pool_size == 0 {
        return Err(EngineError::Domain("pool_size must be positive".into()));
    }
    let fixed = if law.is_deterministic() { Some(law.sample_branch(rng)?) } else { None };
    let mut pool = vec![0.0; pool_size];
    let mut means = vec![0.0];
    for _ in 0..depth {
        let mut next = Vec::with_capacity(pool_size);
        for _ in 0..pool_size {
            let drawn;
            let params = match &fixed {
                Some(p) => p,
                None => {
                    drawn = law.sample_branch(rng)?;
                    &drawn
                }
            };
            let j = pick(params, Measure::Mu, rng.uniform()) as usize;
            let rem = params.remainder_index();
            let scaled = |k: usize, rng: &mut RngStream| {
                if Some(k) == rem {
                    0.0
                } else {
                    params.mass_r(k).powf(params.alpha) * pool[rng.below(pool_size)]
                }
            };
            let y = if j == 0 {
                scaled(0, rng)
            } else {
                let query = law.local_tree().path_excl_mrca(0, j).map_err(ModelError::from)?;
                let mut total = params.l_unchecked(0, j) + scaled(0, rng);
                for &k in &query.path {
                    total += scaled(k, rng);
                }
                total
            };
            next.push(y);
        }
        pool = next;
        means.push(pool.iter().sum::<f64>() / pool_size as f64);
    }
    Ok(means)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn demo(seed: u64) -> ThetaTrie {
        ThetaTrie::new(BranchLaw::finite_demo(), seed, EngineConfig::default()).unwrap()
    }

    #[test]
    fn depth_zero_is_a_point() {
        let mut t = demo(1);
        let mut r = RngStream::new(1, 0);
        let p = t.sample_point(0, Measure::Mu, &mut r).unwrap();
        assert!(p.letters.is_empty());
        let q = t.sample_point(5, Measure::Mu, &mut r).unwrap();
        assert_eq!(t.root_distance(&q, 0).unwrap(), 0.0);
        assert_eq!(t.pair_distance(&q, &q, 5).unwrap(), 0.0);
    }

    #[test]
    fn finite_demo_depth_one_heights() {
        let mut t = demo(2);
        let zero = PointAddress::new(vec![0], Measure::Mu);
        let one = PointAddress::new(vec![1], Measure::Mu);
        assert_eq!(t.root_distance(&zero, 1).unwrap(), 0.0);
        assert_eq!(t.root_distance(&one, 1).unwrap(), 1.0);
        assert_eq!(t.pair_distance(&zero, &one, 1).unwrap(), 1.0);
    }

    #[test]
    fn finite_demo_depth_two_by_hand() {
        // word 1.1: L(0,1) + c * H(exit of node 0) + c * (L(0,1) + ...) at depth 2
        let mut t = demo(3);
        let c = 0.5f64.powf(0.8);
        let p = PointAddress::new(vec![1, 1], Measure::Mu);
        let params = t.params_at(&ThetaAddress::root()).unwrap();
        let exit_letter = pick(&params, Measure::Mu, keyed_uniform(3, mix64(child_hash(ROOT_HASH, 0) ^ mix64(child_hash(ROOT_HASH, 0)))));
        let exit_height = if exit_letter == 1 { 1.0 } else { 0.0 };
        let expected = 1.0 + c * exit_height + c * 1.0;
        assert!((t.root_distance(&p, 2).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn cut_line_on_finite_demo() {
        let mut t = demo(4);
        let line = t.cut_line(0.3, 1000).unwrap();
        assert_eq!(line.nodes.len(), 4);
        assert!(line.nodes.iter().all(|n| n.address.len() == 2));
        assert!((line.total_mass_r() - 1.0).abs() < 1e-12);
        let line = t.cut_line(0.9, 1000).unwrap();
        assert!(line.nodes.iter().all(|n| n.address.len() == 1));
        let line = t.cut_line(1.5, 1000).unwrap();
        assert_eq!(line.nodes.len(), 2);
        assert!(matches!(t.cut_line(0.001, 50), Err(EngineError::Budget { .. })));
    }

    #[test]
    fn depth_limit_is_enforced() {
        let mut t = ThetaTrie::new(BranchLaw::finite_demo(), 1, EngineConfig { max_depth: 10, depth: 5, ..Default::default() }).unwrap();
        let p = PointAddress::root();
        assert!(matches!(t.root_distance(&p, 11), Err(EngineError::Depth { .. })));
    }

    #[test]
    fn population_means_match_scalar_recursion() {
        let law = BranchLaw::finite_demo();
        let mut r = RngStream::new(9, 0);
        let means = mean_heights_population(&law, 30, 20_000, &mut r).unwrap();
        let c = 1.5 * 0.5f64.powf(0.8);
        let mut exact = 0.0;
        for m in means.iter().skip(1) {
            exact = c * exact + 0.5;
            assert!((m - exact).abs() / exact < 0.03, "{m} vs {exact}");
        }
    }
}
