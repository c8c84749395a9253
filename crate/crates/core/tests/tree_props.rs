use std::collections::VecDeque;

use proptest::prelude::*;
use recmetric::tree::{child_hash, id_to_pair, pair_to_id, GammaTree, ThetaAddress};

fn parents_strategy() -> impl Strategy<Value = Vec<i64>> {
    prop::collection::vec(0.0f64..1.0, 1..40).prop_map(|us| {
        let mut parents = vec![-1i64];
        for (v, u) in us.into_iter().enumerate() {
            parents.push((u * (v + 1) as f64) as i64);
        }
        parents
    })
}

/// Path from `i` to `j` found by breadth-first search on the undirected tree.
fn bfs_path(parents: &[i64], i: usize, j: usize) -> Vec<usize> {
    let n = parents.len();
    let mut adj = vec![Vec::new(); n];
    for (v, &p) in parents.iter().enumerate().skip(1) {
        adj[v].push(p as usize);
        adj[p as usize].push(v);
    }
    let mut prev = vec![usize::MAX; n];
    let mut queue = VecDeque::from([i]);
    prev[i] = i;
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if prev[w] == usize::MAX {
                prev[w] = v;
                queue.push_back(w);
            }
        }
    }
    let mut path = vec![j];
    while *path.last().unwrap() != i {
        path.push(prev[*path.last().unwrap()]);
    }
    path.reverse();
    path
}

proptest! {
    #[test]
    fn path_query_matches_bfs(parents in parents_strategy(), a in 0usize..1000, b in 0usize..1000) {
        let tree = GammaTree::from_parents(&parents).unwrap();
        let n = parents.len();
        let (i, j) = (a % n, b % n);
        let full = bfs_path(&parents, i, j);
        let q = *full.iter().min_by_key(|&&v| tree.depth(v).unwrap()).unwrap();
        let query = tree.path_excl_mrca(i, j).unwrap();
        prop_assert_eq!(query.q, q);
        prop_assert_eq!(tree.mrca(i, j).unwrap(), q);
        let expected: Vec<usize> = full.into_iter().filter(|&v| v != q).collect();
        prop_assert_eq!(&query.path, &expected);
        let len = tree.depth(i).unwrap() + tree.depth(j).unwrap() - 2 * tree.depth(q).unwrap();
        prop_assert_eq!(query.path.len(), len);
    }

    #[test]
    fn mrca_is_symmetric_and_paths_reverse(parents in parents_strategy(), a in 0usize..1000, b in 0usize..1000) {
        let tree = GammaTree::from_parents(&parents).unwrap();
        let n = parents.len();
        let (i, j) = (a % n, b % n);
        prop_assert_eq!(tree.mrca(i, j).unwrap(), tree.mrca(j, i).unwrap());
        let mut back = tree.path_excl_mrca(j, i).unwrap().path;
        back.reverse();
        prop_assert_eq!(tree.path_excl_mrca(i, j).unwrap().path, back);
        prop_assert_eq!(tree.in_subtree(i, j).unwrap(), bfs_path(&parents, 0, j).contains(&i));
    }

    #[test]
    fn parent_array_round_trips(parents in parents_strategy()) {
        let tree = GammaTree::from_parents(&parents).unwrap();
        prop_assert_eq!(tree.parents(), parents);
    }

    #[test]
    fn pairing_is_a_bijection(i in 1u64..100_000, j in 1u64..100_000) {
        prop_assert_eq!(id_to_pair(pair_to_id(i, j)), (i, j));
    }

    #[test]
    fn address_hash_follows_children(letters in prop::collection::vec(0u32..50, 0..12)) {
        let mut address = ThetaAddress::root();
        let mut hash = ThetaAddress::root().hash_key();
        for &letter in &letters {
            address = address.child(letter);
            hash = child_hash(hash, letter);
            prop_assert_eq!(address.hash_key(), hash);
        }
        prop_assert_eq!(address.0, letters);
    }
}

#[test]
fn pair_ids_cover_an_initial_segment() {
    let mut ids: Vec<u64> = (1..=20u64).flat_map(|i| (1..=21 - i).map(move |j| pair_to_id(i, j))).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..ids.len() as u64).collect::<Vec<_>>());
}

#[test]
fn star_queries_route_through_the_root() {
    let star = GammaTree::star_n();
    let q = star.path_excl_mrca(3, 7).unwrap();
    assert_eq!((q.q, q.path), (0, vec![3, 7]));
    assert_eq!(star.path_excl_mrca(0, 4).unwrap().path, vec![4]);
    assert!(star.in_subtree(0, 9).unwrap());
    assert!(!star.in_subtree(2, 9).unwrap());
}
