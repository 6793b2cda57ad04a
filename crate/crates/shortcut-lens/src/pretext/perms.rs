//! Permutation subsets for the jigsaw task, chosen to be mutually far apart
//! in Hamming distance so permutation classes stay distinguishable.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::util::derive_rng;

/// A fixed, ordered set of distinct patch permutations. Entry 0 is always
/// the identity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PermutationSet {
    pub perms: Vec<Vec<usize>>,
}

impl PermutationSet {
    pub fn count(&self) -> usize {
        self.perms.len()
    }

    /// Number of grid cells each permutation rearranges.
    pub fn cells(&self) -> usize {
        self.perms[0].len()
    }
}

fn hamming(a: &[usize], b: &[usize]) -> usize {
    a.iter().zip(b).filter(|(x, y)| x != y).count()
}

/// All permutations of 0..n in lexicographic order (used exhaustively for
/// tiny grids).
fn all_permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    let mut used = vec![false; n];
    fn rec(n: usize, depth: usize, cur: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if depth == n {
            out.push(cur.clone());
            return;
        }
        for v in 0..n {
            if !used[v] {
                used[v] = true;
                cur[depth] = v;
                rec(n, depth + 1, cur, used, out);
                used[v] = false;
            }
        }
    }
    rec(n, 0, &mut cur, &mut used, &mut out);
    out
}

/// Select `count` permutations of `0..grid^2` by greedy max-min-Hamming:
/// starting from the identity, repeatedly add the candidate that maximizes
/// the minimum Hamming distance to everything chosen so far (first
/// candidate wins ties). Candidates are all (grid^2)! permutations when
/// grid is 2, and a deduplicated pool of 10000 seeded samples otherwise.
pub fn select_permutation_subset(count: usize, grid: usize, seed: u64) -> Result<PermutationSet> {
    if count == 0 {
        return Err(Error::config("permutation subset size must be positive"));
    }
    let n = grid * grid;
    let identity: Vec<usize> = (0..n).collect();
    let mut candidates: Vec<Vec<usize>> = if grid <= 2 {
        all_permutations(n)
    } else {
        let mut rng = derive_rng(seed, &["jigsaw-perms", &grid.to_string()]);
        let mut pool = std::collections::BTreeSet::new();
        pool.insert(identity.clone());
        for _ in 0..10_000 {
            let mut p = identity.clone();
            p.shuffle(&mut rng);
            pool.insert(p);
        }
        pool.into_iter().collect()
    };
    if count > candidates.len() {
        return Err(Error::config(format!(
            "requested {count} permutations but only {} distinct candidates exist for grid {grid}",
            candidates.len()
        )));
    }
    candidates.retain(|p| *p != identity);
    let mut chosen = vec![identity];
    // min Hamming distance from each remaining candidate to the chosen set
    let mut min_dist: Vec<usize> = candidates.iter().map(|p| hamming(p, &chosen[0])).collect();
    while chosen.len() < count {
        // first candidate wins ties (max_by_key would keep the last)
        let mut best = 0;
        for i in 1..candidates.len() {
            if min_dist[i] > min_dist[best] {
                best = i;
            }
        }
        let picked = candidates.remove(best);
        min_dist.remove(best);
        for (i, cand) in candidates.iter().enumerate() {
            min_dist[i] = min_dist[i].min(hamming(cand, &picked));
        }
        chosen.push(picked);
    }
    Ok(PermutationSet { perms: chosen })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_permutation_is_identity() {
        let set = select_permutation_subset(1, 3, 0).unwrap();
        assert_eq!(set.perms, vec![(0..9).collect::<Vec<_>>()]);
    }

    #[test]
    fn second_grid2_permutation_is_a_derangement() {
        // brute force over all 24 permutations of four cells: the farthest
        // from identity differ in all four positions
        let set = select_permutation_subset(2, 2, 0).unwrap();
        assert_eq!(set.perms[0], vec![0, 1, 2, 3]);
        assert_eq!(hamming(&set.perms[0], &set.perms[1]), 4);
        for (i, &v) in set.perms[1].iter().enumerate() {
            assert_ne!(i, v, "derangement has no fixed point");
        }
        // ties resolve to the first candidate in lexicographic order
        assert_eq!(set.perms[1], vec![1, 0, 3, 2]);
    }

    #[test]
    fn grid2_full_set_is_distinct_with_min_distance_two() {
        let set = select_permutation_subset(24, 2, 0).unwrap();
        assert_eq!(set.count(), 24);
        for i in 0..24 {
            for j in (i + 1)..24 {
                let d = hamming(&set.perms[i], &set.perms[j]);
                assert!(d >= 2, "distinct permutations differ in >=2 positions, got {d}");
            }
        }
    }

    #[test]
    fn selection_is_deterministic_in_seed() {
        let a = select_permutation_subset(50, 3, 9).unwrap();
        let b = select_permutation_subset(50, 3, 9).unwrap();
        assert_eq!(a, b);
        let all_distinct: std::collections::BTreeSet<_> = a.perms.iter().cloned().collect();
        assert_eq!(all_distinct.len(), 50);
    }

    #[test]
    fn oversized_request_is_a_config_error() {
        let err = select_permutation_subset(25, 2, 0).unwrap_err();
        assert!(err.is_config(), "expected config error, got {err}");
    }
}
