use crate::error::{Error, Result};

/// Optimal one-to-one assignment of predictions to ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `assignment[p]` is the ground-truth index matched to prediction `p`.
    pub assignment: Vec<Option<usize>>,
    pub total_cost: f64,
}

impl MatchResult {
    pub fn matched_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.assignment.iter().enumerate().filter_map(|(p, g)| g.map(|g| (p, g)))
    }

    pub fn num_matched(&self) -> usize {
        self.assignment.iter().flatten().count()
    }

    /// Prediction matched to each ground-truth item.
    pub fn inverse(&self, num_gt: usize) -> Vec<Option<usize>> {
        let mut inv = vec![None; num_gt];
        for (p, g) in self.matched_pairs() {
            inv[g] = Some(p);
        }
        inv
    }
}

/// Minimum-cost assignment for a `P×G` cost matrix (rows are predictions).
/// Exactly `min(P, G)` pairs are matched.
pub fn hungarian_match(cost: &[Vec<f64>]) -> Result<MatchResult> {
    let p = cost.len();
    let g = cost.first().map_or(0, Vec::len);
    if cost.iter().any(|r| r.len() != g) {
        return Err(Error::shape("hungarian_match", "ragged cost matrix"));
    }
    if cost.iter().flatten().any(|c| !c.is_finite()) {
        return Err(Error::NonFinite { op: "hungarian_match" });
    }
    if p == 0 || g == 0 {
        return Ok(MatchResult {
            assignment: vec![None; p],
            total_cost: 0.0,
        });
    }
    let mut assignment = vec![None; p];
    if p <= g {
        for (row, col) in solve(p, g, |i, j| cost[i][j]).into_iter().enumerate() {
            assignment[row] = Some(col);
        }
    } else {
        for (col, row) in solve(g, p, |i, j| cost[j][i]).into_iter().enumerate() {
            assignment[row] = Some(col);
        }
    }
    let total_cost = assignment
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Ok(MatchResult { assignment, total_cost })
}

/// Shortest augmenting path with potentials for `n <= m`; returns the
/// column of every row.
fn solve(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    // 1-based arrays; index 0 is the virtual source column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut cols = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            cols[owner[j] - 1] = j - 1;
        }
    }
    cols
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Minimum over every injective map from the smaller side.
    fn brute_force(cost: &[Vec<f64>]) -> f64 {
        fn rec(cost: &[Vec<f64>], row: usize, used: &mut Vec<bool>, transpose: bool) -> f64 {
            let (n, m) = if transpose {
                (cost[0].len(), cost.len())
            } else {
                (cost.len(), cost[0].len())
            };
            if row == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..m {
                if !used[j] {
                    used[j] = true;
                    let c = if transpose { cost[j][row] } else { cost[row][j] };
                    best = best.min(c + rec(cost, row + 1, used, transpose));
                    used[j] = false;
                }
            }
            best
        }
        let transpose = cost.len() > cost[0].len();
        let m = if transpose { cost.len() } else { cost[0].len() };
        rec(cost, 0, &mut vec![false; m], transpose)
    }

    #[test]
    fn identity_complement() {
        let cost: Vec<Vec<f64>> = (0..4).map(|i| (0..4).map(|j| f64::from(u8::from(i != j))).collect()).collect();
        let m = hungarian_match(&cost).unwrap();
        assert_eq!(m.assignment, (0..4).map(Some).collect::<Vec<_>>());
        assert_eq!(m.total_cost, 0.0);
    }

    #[test]
    fn equals_brute_force() {
        for seed in 0..100u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = rng.gen_range(1..=6);
            let g = rng.gen_range(1..=6);
            let cost: Vec<Vec<f64>> = (0..p).map(|_| (0..g).map(|_| rng.gen_range(-3.0..5.0)).collect()).collect();
            let m = hungarian_match(&cost).unwrap();
            assert_eq!(m.num_matched(), p.min(g));
            let mut seen = vec![false; g];
            for (_, c) in m.matched_pairs() {
                assert!(!seen[c]);
                seen[c] = true;
            }
            let want = brute_force(&cost);
            assert!((m.total_cost - want).abs() < 1e-9, "seed {seed}: {} vs {want}", m.total_cost);
        }
    }

    #[test]
    fn rectangular_two_by_five() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cost: Vec<Vec<f64>> = (0..2).map(|_| (0..5).map(|_| rng.gen::<f64>()).collect()).collect();
        let mut best = f64::INFINITY;
        for a in 0..5 {
            for b in 0..5 {
                if a != b {
                    best = best.min(cost[0][a] + cost[1][b]);
                }
            }
        }
        assert!((hungarian_match(&cost).unwrap().total_cost - best).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_finite_and_handles_empty() {
        assert!(hungarian_match(&[vec![0.0, f64::NAN]]).is_err());
        assert!(hungarian_match(&[vec![0.0], vec![0.0, 1.0]]).is_err());
        let m = hungarian_match(&[vec![], vec![]]).unwrap();
        assert_eq!(m.assignment, vec![None, None]);
        assert_eq!(m.inverse(0), Vec::<Option<usize>>::new());
    }
}
