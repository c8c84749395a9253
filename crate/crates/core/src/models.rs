//! Branch laws: one draw gives the rescaling weights, the sampling masses,
//! the distance exponent and the marked-point distances of one gluing step.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngStream;
use crate::samplers::{self, SamplerError};
use crate::tree::{GammaTree, TreeError};

pub mod hypotheses;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("vertex {0} is not realized in this draw")]
    Unrealized(usize),
    #[error(transparent)]
    Sampler(#[from] SamplerError),
    #[error(transparent)]
    Tree(#[from] TreeError),
}

type Result<T> = std::result::Result<T, ModelError>;

/// Finite model given by explicit tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExplicitTables {
    pub parents: Vec<i64>,
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    /// Dense symmetric matrix, row-major.
    pub l: Vec<Vec<f64>>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Looptree { beta: f64 },
    StableTree { beta: f64 },
    BrownianCrt,
    FiniteDemo,
    Explicit(ExplicitTables),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// Per-node bound on the lumped remainder mass.
    pub eps_tail: f64,
    /// Cap on realized vertices per node.
    pub max_children: usize,
}

impl Default for Truncation {
    fn default() -> Self {
        Truncation { eps_tail: 1e-3, max_children: 256 }
    }
}

/// Marked-point geometry of one block, enough to evaluate distances lazily.
#[derive(Debug, Clone, PartialEq)]
pub enum Block {
    /// Circle of the given circumference; positions in `[0, 1)`.
    Circle { circumference: f64, positions: Vec<f64> },
    /// Segment of the given length; positions in `[0, 1]`.
    Segment { length: f64, positions: Vec<f64> },
    /// Explicit distance matrix.
    Dense(Vec<Vec<f64>>),
}

/// All truncated-away vertices lumped into one point mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Remainder {
    pub mass_r: f64,
    pub mass_s: f64,
}

/// One realization of the gluing parameters. Realized vertices are indexed
/// `0..n` with 0 the root; when a remainder exists it is index `n` and its
/// attachment position is the last entry of the block positions.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchParams {
    pub weights_r: Vec<f64>,
    pub weights_s: Vec<f64>,
    pub alpha: f64,
    pub block: Block,
    pub remainder: Option<Remainder>,
}

impl BranchParams {
    /// Number of realized vertices, remainder excluded.
    pub fn len(&self) -> usize {
        self.weights_r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights_r.is_empty()
    }

    /// Index of the remainder atom, if any.
    pub fn remainder_index(&self) -> Option<usize> {
        self.remainder.map(|_| self.len())
    }

    /// Realized vertices plus the remainder.
    pub fn slots(&self) -> usize {
        self.len() + usize::from(self.remainder.is_some())
    }

    pub fn mass_r(&self, i: usize) -> f64 {
        match self.remainder {
            Some(rem) if i == self.len() => rem.mass_r,
            _ => self.weights_r[i],
        }
    }

    pub fn mass_s(&self, i: usize) -> f64 {
        match self.remainder {
            Some(rem) if i == self.len() => rem.mass_s,
            _ => self.weights_s[i],
        }
    }

    pub fn eval_l(&self, i: usize, j: usize) -> Result<f64> {
        let n = self.slots();
        if i >= n {
            return Err(ModelError::Unrealized(i));
        }
        if j >= n {
            return Err(ModelError::Unrealized(j));
        }
        Ok(self.l_unchecked(i, j))
    }

    /// Marked-point distance without bounds checks beyond indexing.
    pub fn l_unchecked(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        match &self.block {
            Block::Circle { circumference, positions } => {
                let d = (positions[i] - positions[j]).abs();
                circumference * d.min(1.0 - d)
            }
            Block::Segment { length, positions } => length * (positions[i] - positions[j]).abs(),
            Block::Dense(m) => m[i][j],
        }
    }

    /// Checks the simplex and metric invariants of one draw.
    pub fn validate(&self) -> Result<()> {
        let rem = self.remainder.unwrap_or(Remainder { mass_r: 0.0, mass_s: 0.0 });
        let sr: f64 = self.weights_r.iter().sum::<f64>() + rem.mass_r;
        let ss: f64 = self.weights_s.iter().sum::<f64>() + rem.mass_s;
        if (sr - 1.0).abs() > 1e-9 || (ss - 1.0).abs() > 1e-9 {
            return Err(ModelError::Domain(format!("weights sum to ({sr}, {ss})")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ModelError::Domain(format!("alpha {} outside (0,1)", self.alpha)));
        }
        if self.weights_r.len() != self.weights_s.len() {
            return Err(ModelError::Domain("r and s lengths differ".into()));
        }
        let n = self.slots();
        for i in 0..n {
            for j in 0..n {
                let l = self.l_unchecked(i, j);
                if !(l >= 0.0) || l != self.l_unchecked(j, i) || (i == j && l != 0.0) {
                    return Err(ModelError::Domain(format!("L({i},{j}) = {l} breaks symmetry")));
                }
            }
        }
        Ok(())
    }
}

/// A law on branch parameters together with its structural tree and
/// truncation policy.
#[derive(Debug, Clone, PartialEq)]
pub struct BranchLaw {
    kind: ModelKind,
    truncation: Truncation,
    tree: GammaTree,
}

impl BranchLaw {
    pub fn new(kind: ModelKind, truncation: Truncation) -> Result<Self> {
        if !(truncation.eps_tail > 0.0 && truncation.eps_tail < 1.0) {
            return Err(ModelError::Domain(format!("eps_tail {} outside (0,1)", truncation.eps_tail)));
        }
        if truncation.max_children < 8 {
            return Err(ModelError::Domain("max_children must be at least 8".into()));
        }
        let tree = match &kind {
            ModelKind::Looptree { beta } => {
                if !(*beta > 1.0 && *beta < 2.0) {
                    return Err(ModelError::Domain(format!("looptree needs beta in (1,2), got {beta}")));
                }
                GammaTree::star_n()
            }
            ModelKind::StableTree { beta } => {
                if !(*beta > 1.0 && *beta <= 2.0) {
                    return Err(ModelError::Domain(format!("stable tree needs beta in (1,2], got {beta}")));
                }
                GammaTree::star_n2()
            }
            ModelKind::BrownianCrt => GammaTree::star_n2(),
            ModelKind::FiniteDemo => GammaTree::from_parents(&[-1, 0])?,
            ModelKind::Explicit(t) => {
                let tree = GammaTree::from_parents(&t.parents)?;
                explicit_params(t)?.validate()?;
                tree
            }
        };
        Ok(BranchLaw { kind, truncation, tree })
    }

    pub fn looptree(beta: f64) -> Result<Self> {
        Self::new(ModelKind::Looptree { beta }, Truncation::default())
    }

    pub fn stable_tree(beta: f64) -> Result<Self> {
        Self::new(ModelKind::StableTree { beta }, Truncation::default())
    }

    pub fn brownian_crt() -> Self {
        Self::new(ModelKind::BrownianCrt, Truncation::default()).expect("valid preset")
    }

    pub fn finite_demo() -> Self {
        Self::new(ModelKind::FiniteDemo, Truncation::default()).expect("valid preset")
    }

    pub fn explicit(tables: ExplicitTables) -> Result<Self> {
        Self::new(ModelKind::Explicit(tables), Truncation::default())
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Result<Self> {
        self = Self::new(self.kind, truncation)?;
        Ok(self)
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// The structural tree of the law.
    pub fn gamma_tree(&self) -> &GammaTree {
        &self.tree
    }

    /// Tree on realized indices: stars keep their shape, the remainder is one
    /// more leaf under the root.
    pub fn local_tree(&self) -> &GammaTree {
        &self.tree
    }

    /// Distance exponent, constant across draws for every supported law.
    pub fn alpha(&self) -> f64 {
        match &self.kind {
            ModelKind::Looptree { beta } => 1.0 / beta,
            ModelKind::StableTree { beta } => 1.0 - 1.0 / beta,
            ModelKind::BrownianCrt => 0.5,
            ModelKind::FiniteDemo => 0.8,
            ModelKind::Explicit(t) => t.alpha,
        }
    }

    /// True when draws do not depend on randomness.
    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, ModelKind::FiniteDemo | ModelKind::Explicit(_))
    }

    pub fn sample_branch(&self, rng: &mut RngStream) -> Result<BranchParams> {
        match &self.kind {
            ModelKind::Looptree { beta } => sample_looptree(*beta, self.truncation, rng),
            ModelKind::StableTree { beta } => sample_stable_tree(*beta, self.truncation, rng),
            ModelKind::BrownianCrt => sample_stable_tree(2.0, self.truncation, rng),
            ModelKind::FiniteDemo => Ok(finite_demo_params()),
            ModelKind::Explicit(t) => explicit_params(t),
        }
    }
}

fn finite_demo_params() -> BranchParams {
    BranchParams {
        weights_r: vec![0.5, 0.5],
        weights_s: vec![0.5, 0.5],
        alpha: 0.8,
        block: Block::Dense(vec![vec![0.0, 1.0], vec![1.0, 0.0]]),
        remainder: None,
    }
}

fn explicit_params(t: &ExplicitTables) -> Result<BranchParams> {
    let n = t.parents.len();
    if t.r.len() != n || t.s.len() != n || t.l.len() != n || t.l.iter().any(|row| row.len() != n) {
        return Err(ModelError::Domain(format!("explicit tables must all have {n} vertices")));
    }
    if t.r.iter().chain(&t.s).any(|w| !(*w >= 0.0 && *w <= 1.0)) {
        return Err(ModelError::Domain("explicit weights must lie in [0,1]".into()));
    }
    Ok(BranchParams {
        weights_r: t.r.clone(),
        weights_s: t.s.clone(),
        alpha: t.alpha,
        block: Block::Dense(t.l.clone()),
        remainder: None,
    })
}

fn sample_looptree(beta: f64, trunc: Truncation, rng: &mut RngStream) -> Result<BranchParams> {
    let a = 1.0 / beta;
    let x = samplers::sample_dirichlet(rng, &[1.0 - a, 1.0 - a, 1.0 - a, 2.0 * a - 1.0])?;
    let loop_mass = x[3];
    let max_sticks = trunc.max_children - 3;
    let eps = (trunc.eps_tail / loop_mass.max(f64::MIN_POSITIVE)).min(0.5);
    let pd = samplers::sample_pd_capped(rng, a, 2.0 * a - 1.0, eps, max_sticks)?;
    let diversity = samplers::diversity_given_sticks(&pd);
    let mut weights: Vec<f64> = x[..3].to_vec();
    weights.extend(pd.atoms.iter().map(|p| loop_mass * p));
    let rem_mass = loop_mass * pd.tail_mass;
    let slots = weights.len() + usize::from(rem_mass > 0.0);
    let positions: Vec<f64> = (0..slots).map(|_| rng.uniform()).collect();
    Ok(BranchParams {
        weights_s: weights.clone(),
        weights_r: weights,
        alpha: a,
        block: Block::Circle { circumference: loop_mass.powf(a) * diversity, positions },
        remainder: (rem_mass > 0.0).then_some(Remainder { mass_r: rem_mass, mass_s: rem_mass }),
    })
}

fn sample_stable_tree(beta: f64, trunc: Truncation, rng: &mut RngStream) -> Result<BranchParams> {
    let spine_a = 1.0 - 1.0 / beta;
    let sub_a = 1.0 / beta;
    let spine = samplers::sample_pd_capped(rng, spine_a, spine_a, trunc.eps_tail, (trunc.max_children / 4).max(2))?;
    let length = samplers::diversity_given_sticks(&spine);
    let spine_pos: Vec<f64> = spine.atoms.iter().map(|_| rng.uniform()).collect();
    let mut weights = Vec::new();
    let mut positions = Vec::new();
    let mut lumped = spine.tail_mass;
    let budget = trunc.max_children.saturating_sub(spine.atoms.len()) as f64;
    let mut root = 0;
    for (i, (p, &u)) in spine.atoms.iter().zip(&spine_pos).enumerate() {
        let cap = ((budget * p).floor() as usize).max(1);
        let sub = samplers::sample_pd_capped(rng, sub_a, sub_a - 1.0, trunc.eps_tail, cap)?;
        if i == spine.first {
            root = weights.len() + sub.first;
        }
        for q in &sub.atoms {
            weights.push(p * q);
            positions.push(u);
        }
        lumped += p * sub.tail_mass;
    }
    // first sticks at both levels form a size-biased couple of the full
    // family; it becomes the root slot
    weights.swap(0, root);
    positions.swap(0, root);
    if lumped > 0.0 {
        positions.push(rng.uniform());
    }
    Ok(BranchParams {
        weights_s: weights.clone(),
        weights_r: weights,
        alpha: spine_a,
        block: Block::Segment { length, positions },
        remainder: (lumped > 0.0).then_some(Remainder { mass_r: lumped, mass_s: lumped }),
    })
}
