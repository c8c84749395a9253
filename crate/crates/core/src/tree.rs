//! Structural plane trees and the word index set of the recursion.
//!
//! Vertex 0 is always the root. Star shapes are symbolic: any id is a valid
//! vertex and every non-root vertex hangs directly off the root.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("vertex {0} is not part of the tree")]
    InvalidVertex(usize),
    #[error("parent array: {0}")]
    BadParents(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaKind {
    ExplicitFinite,
    StarN,
    StarN2,
}

/// Height of a structural tree. Stars have height one but unbounded breadth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreeHeight {
    Finite(usize),
    UnboundedBreadth,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaTree {
    kind: GammaKind,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    depth: Vec<usize>,
}

/// Result of a path query: the common ancestor and the path between the two
/// vertices with the ancestor removed, ordered from `i` to `j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathQuery {
    pub q: usize,
    pub path: Vec<usize>,
}

impl GammaTree {
    pub fn star_n() -> Self {
        Self::symbolic(GammaKind::StarN)
    }

    pub fn star_n2() -> Self {
        Self::symbolic(GammaKind::StarN2)
    }

    fn symbolic(kind: GammaKind) -> Self {
        GammaTree { kind, parent: Vec::new(), children: Vec::new(), depth: Vec::new() }
    }

    /// Builds a finite tree from a parent array where the root holds `-1`.
    pub fn from_parents(parents: &[i64]) -> Result<Self, TreeError> {
        if parents.is_empty() {
            return Err(TreeError::BadParents("empty".into()));
        }
        if parents[0] != -1 {
            return Err(TreeError::BadParents("vertex 0 must be the root (-1)".into()));
        }
        let n = parents.len();
        let mut parent = vec![None; n];
        let mut children = vec![Vec::new(); n];
        let mut depth = vec![0; n];
        for (v, &p) in parents.iter().enumerate().skip(1) {
            if p < 0 || p as usize >= v {
                return Err(TreeError::BadParents(format!(
                    "vertex {v} has parent {p}; parents must precede children"
                )));
            }
            let p = p as usize;
            parent[v] = Some(p);
            children[p].push(v);
            depth[v] = depth[p] + 1;
        }
        Ok(GammaTree { kind: GammaKind::ExplicitFinite, parent, children, depth })
    }

    /// Parent array in the same format accepted by [`GammaTree::from_parents`].
    pub fn parents(&self) -> Vec<i64> {
        self.parent.iter().map(|p| p.map_or(-1, |x| x as i64)).collect()
    }

    pub fn kind(&self) -> GammaKind {
        self.kind
    }

    pub fn is_star(&self) -> bool {
        self.kind != GammaKind::ExplicitFinite
    }

    /// Number of vertices for finite trees, `None` for stars.
    pub fn len(&self) -> Option<usize> {
        match self.kind {
            GammaKind::ExplicitFinite => Some(self.parent.len()),
            _ => None,
        }
    }

    pub fn height(&self) -> TreeHeight {
        match self.kind {
            GammaKind::ExplicitFinite => {
                TreeHeight::Finite(self.depth.iter().copied().max().unwrap_or(0))
            }
            _ => TreeHeight::UnboundedBreadth,
        }
    }

    /// Height as an integer; stars have height one.
    pub fn height_value(&self) -> usize {
        match self.height() {
            TreeHeight::Finite(h) => h,
            TreeHeight::UnboundedBreadth => 1,
        }
    }

    pub fn children(&self, v: usize) -> Result<&[usize], TreeError> {
        self.check(v)?;
        match self.kind {
            GammaKind::ExplicitFinite => Ok(&self.children[v]),
            _ => Ok(&[]),
        }
    }

    fn check(&self, v: usize) -> Result<(), TreeError> {
        match self.kind {
            GammaKind::ExplicitFinite if v >= self.parent.len() => Err(TreeError::InvalidVertex(v)),
            _ => Ok(()),
        }
    }

    pub fn parent(&self, v: usize) -> Result<Option<usize>, TreeError> {
        self.check(v)?;
        Ok(match self.kind {
            GammaKind::ExplicitFinite => self.parent[v],
            _ if v == 0 => None,
            _ => Some(0),
        })
    }

    pub fn depth(&self, v: usize) -> Result<usize, TreeError> {
        self.check(v)?;
        Ok(match self.kind {
            GammaKind::ExplicitFinite => self.depth[v],
            _ => usize::from(v != 0),
        })
    }

    pub fn mrca(&self, i: usize, j: usize) -> Result<usize, TreeError> {
        self.check(i)?;
        self.check(j)?;
        if i == j {
            return Ok(i);
        }
        if self.is_star() {
            return Ok(0);
        }
        let (mut a, mut b) = (i, j);
        while self.depth[a] > self.depth[b] {
            a = self.parent[a].unwrap();
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b].unwrap();
        }
        while a != b {
            a = self.parent[a].unwrap();
            b = self.parent[b].unwrap();
        }
        Ok(a)
    }

    /// True iff `j` lies in the subtree rooted at `i`.
    pub fn in_subtree(&self, i: usize, j: usize) -> Result<bool, TreeError> {
        Ok(self.mrca(i, j)? == i)
    }

    pub fn path_excl_mrca(&self, i: usize, j: usize) -> Result<PathQuery, TreeError> {
        let q = self.mrca(i, j)?;
        if i == j {
            return Ok(PathQuery { q, path: Vec::new() });
        }
        let mut up = Vec::new();
        let mut v = i;
        while v != q {
            up.push(v);
            v = self.parent(v)?.unwrap();
        }
        let mut down = Vec::new();
        let mut v = j;
        while v != q {
            down.push(v);
            v = self.parent(v)?.unwrap();
        }
        up.extend(down.into_iter().rev());
        Ok(PathQuery { q, path: up })
    }
}

/// Flattens a 1-based pair `(i, j)` to a vertex id with `(1, 1) -> 0`
/// using the Cantor pairing of `(i - 1, j - 1)`.
pub fn pair_to_id(i: u64, j: u64) -> u64 {
    assert!(i >= 1 && j >= 1, "pairs are 1-based");
    let (x, y) = (i - 1, j - 1);
    (x + y) * (x + y + 1) / 2 + y
}

pub fn id_to_pair(id: u64) -> (u64, u64) {
    let w = ((((8 * id + 1) as f64).sqrt() - 1.0) / 2.0).floor() as u64;
    // correct any floating error in the triangular root
    let mut w = w;
    while w * (w + 1) / 2 > id {
        w -= 1;
    }
    while (w + 1) * (w + 2) / 2 <= id {
        w += 1;
    }
    let y = id - w * (w + 1) / 2;
    let x = w - y;
    (x + 1, y + 1)
}

/// A word in the recursion index set; the empty word is the index root.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ThetaAddress(pub Vec<u32>);

impl ThetaAddress {
    pub fn root() -> Self {
        ThetaAddress(Vec::new())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn child(&self, letter: u32) -> Self {
        let mut w = self.0.clone();
        w.push(letter);
        ThetaAddress(w)
    }

    pub fn is_prefix_of(&self, other: &ThetaAddress) -> bool {
        other.0.len() >= self.0.len() && other.0[..self.0.len()] == self.0[..]
    }

    pub fn hash_key(&self) -> u64 {
        self.0.iter().fold(ROOT_HASH, |h, &l| child_hash(h, l))
    }
}

impl std::fmt::Display for ThetaAddress {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.0.is_empty() {
            return write!(f, "-");
        }
        let parts: Vec<String> = self.0.iter().map(|l| l.to_string()).collect();
        write!(f, "{}", parts.join("."))
    }
}

pub const ROOT_HASH: u64 = 0x243f_6a88_85a3_08d3;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable hash of `parent · letter`, independent of traversal order.
pub fn child_hash(parent: u64, letter: u32) -> u64 {
    mix64(parent ^ mix64(u64::from(letter).wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn figure_tree() -> GammaTree {
        // root with children 2, 5, 6; 2 has children 3, 4; 6 has child 7; 1 hangs off the root
        GammaTree::from_parents(&[-1, 0, 0, 2, 2, 0, 0, 6]).unwrap()
    }

    #[test]
    fn star_queries() {
        let t = GammaTree::star_n();
        assert_eq!(t.mrca(3, 7).unwrap(), 0);
        assert_eq!(t.mrca(4, 4).unwrap(), 4);
        assert_eq!(t.path_excl_mrca(1, 2).unwrap(), PathQuery { q: 0, path: vec![1, 2] });
        assert_eq!(t.path_excl_mrca(0, 5).unwrap(), PathQuery { q: 0, path: vec![5] });
        assert!(!t.in_subtree(2, 3).unwrap());
        assert!(t.in_subtree(0, 9).unwrap());
        assert!(t.in_subtree(6, 6).unwrap());
        assert_eq!(t.height(), TreeHeight::UnboundedBreadth);
    }

    #[test]
    fn figure_tree_queries() {
        let t = figure_tree();
        assert_eq!(t.mrca(3, 4).unwrap(), 2);
        assert_eq!(t.path_excl_mrca(3, 6).unwrap(), PathQuery { q: 0, path: vec![3, 2, 6] });
        assert_eq!(t.path_excl_mrca(2, 4).unwrap(), PathQuery { q: 2, path: vec![4] });
        assert_eq!(t.path_excl_mrca(5, 5).unwrap().path, Vec::<usize>::new());
        assert_eq!(t.height(), TreeHeight::Finite(2));
        assert!(matches!(t.mrca(0, 8), Err(TreeError::InvalidVertex(8))));
    }

    #[test]
    fn parent_array_validation() {
        assert!(GammaTree::from_parents(&[]).is_err());
        assert!(GammaTree::from_parents(&[0]).is_err());
        assert!(GammaTree::from_parents(&[-1, 1]).is_err());
        assert!(GammaTree::from_parents(&[-1, 2, 0]).is_err());
        assert_eq!(GammaTree::from_parents(&[-1, 0, 1]).unwrap().parents(), vec![-1, 0, 1]);
    }

    #[test]
    fn pairing_roundtrip() {
        assert_eq!(pair_to_id(1, 1), 0);
        for id in 0..5000u64 {
            let (i, j) = id_to_pair(id);
            assert_eq!(pair_to_id(i, j), id);
        }
    }

    #[test]
    fn address_hash_is_prefix_consistent() {
        let a = ThetaAddress(vec![0, 3, 1]);
        assert_eq!(child_hash(ThetaAddress(vec![0, 3]).hash_key(), 1), a.hash_key());
        assert_ne!(ThetaAddress(vec![1, 0]).hash_key(), ThetaAddress(vec![0, 1]).hash_key());
        assert!(ThetaAddress(vec![0, 3]).is_prefix_of(&a));
    }
}
