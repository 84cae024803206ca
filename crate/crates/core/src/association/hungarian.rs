//! Minimum-cost rectangular assignment.
//!
//! The core solver is the O(n²m) shortest-augmenting-path form of the
//! Hungarian method with row and column potentials. On top of it,
//! [`hungarian`] picks the lexicographically smallest `(row, col)` sequence
//! among all optimal assignments, so results do not depend on solver
//! internals.

use crate::diffcore::Matrix;
use crate::error::{Error, Result};

struct Solution {
    u: Vec<f64>,
    v: Vec<f64>,
    cost: f64,
}

/// Solves a problem with `n ≤ m`, where `cost(i, j)` is read through the
/// closure so that transposed and reduced problems need no copies.
fn solve(n: usize, m: usize, cost: impl Fn(usize, usize) -> f64) -> Solution {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
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
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assign = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            assign[p[j] - 1] = j - 1;
        }
    }
    let cost_total = assign.iter().enumerate().map(|(i, &j)| cost(i, j)).sum();
    Solution {
        u: u[1..].to_vec(),
        v: v[1..].to_vec(),
        cost: cost_total,
    }
}

/// Optimal total cost over rows `rows` and columns `cols` of `cost`, matching
/// `min(|rows|, |cols|)` pairs.
fn optimum(cost: &Matrix, rows: &[usize], cols: &[usize]) -> f64 {
    if rows.is_empty() || cols.is_empty() {
        return 0.0;
    }
    if rows.len() <= cols.len() {
        solve(rows.len(), cols.len(), |i, j| cost.get(rows[i], cols[j])).cost
    } else {
        solve(cols.len(), rows.len(), |i, j| cost.get(rows[j], cols[i])).cost
    }
}

/// Total cost of a list of matched pairs, summed in list order.
pub fn assignment_cost(cost: &Matrix, pairs: &[(usize, usize)]) -> f64 {
    pairs.iter().map(|&(r, c)| cost.get(r, c)).sum()
}

/// Minimum-cost matching of `min(rows, cols)` pairs, sorted by row. Among
/// optimal assignments the lexicographically smallest pair sequence wins.
pub fn hungarian(cost: &Matrix) -> Result<Vec<(usize, usize)>> {
    let (rows, cols) = cost.shape();
    if rows == 0 || cols == 0 {
        return Ok(Vec::new());
    }
    if !cost.is_finite() {
        return Err(Error::Data("assignment costs must be finite".into()));
    }
    let scale = 1.0 + cost.data().iter().fold(0.0f64, |a, x| a.max(x.abs()));
    let k = rows.min(cols);
    let tol = 1e-10 * scale * k as f64;

    // Potentials of the full problem certify optimality: an assignment is
    // optimal only if all its edges have (near) zero reduced cost.
    let transposed = rows > cols;
    let sol = if transposed {
        solve(cols, rows, |i, j| cost.get(j, i))
    } else {
        solve(rows, cols, |i, j| cost.get(i, j))
    };
    let best = sol.cost;
    let tight = |r: usize, c: usize| {
        let red = if transposed {
            cost.get(r, c) - sol.u[c] - sol.v[r]
        } else {
            cost.get(r, c) - sol.u[r] - sol.v[c]
        };
        red <= tol
    };

    let mut fixed: Vec<(usize, usize)> = Vec::with_capacity(k);
    let mut fixed_cost = 0.0;
    let mut col_used = vec![false; cols];
    for r in 0..rows {
        if fixed.len() == k {
            break;
        }
        let rest_rows: Vec<usize> = (r + 1..rows).collect();
        let mut chosen = None;
        for c in 0..cols {
            if col_used[c] || !tight(r, c) {
                continue;
            }
            let rest_cols: Vec<usize> = (0..cols).filter(|&j| !col_used[j] && j != c).collect();
            let need = k - fixed.len() - 1;
            if rest_rows.len().min(rest_cols.len()) < need {
                continue;
            }
            let total = fixed_cost + cost.get(r, c) + optimum(cost, &rest_rows, &rest_cols);
            if total <= best + tol {
                chosen = Some(c);
                break;
            }
        }
        if let Some(c) = chosen {
            fixed.push((r, c));
            fixed_cost += cost.get(r, c);
            col_used[c] = true;
        }
        // Otherwise row `r` stays unmatched, which the optimum then permits.
    }
    debug_assert_eq!(fixed.len(), k);
    Ok(fixed)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    /// Exhaustive oracle: every injection of the smaller side into the
    /// larger one, returning the minimum cost and the lexicographically
    /// smallest optimal pair list.
    pub(crate) fn brute_force(cost: &Matrix) -> (f64, Vec<(usize, usize)>) {
        let (rows, cols) = cost.shape();
        let k = rows.min(cols);
        let mut best = (f64::INFINITY, Vec::new());
        let mut pairs = Vec::new();
        let mut used_r = vec![false; rows];
        let mut used_c = vec![false; cols];
        fn rec(
            cost: &Matrix,
            k: usize,
            start_row: usize,
            pairs: &mut Vec<(usize, usize)>,
            used_r: &mut [bool],
            used_c: &mut [bool],
            best: &mut (f64, Vec<(usize, usize)>),
        ) {
            if pairs.len() == k {
                let total = assignment_cost(cost, pairs);
                if total < best.0 || (total == best.0 && *pairs < best.1) {
                    *best = (total, pairs.clone());
                }
                return;
            }
            for r in start_row..cost.rows() {
                if used_r[r] {
                    continue;
                }
                for c in 0..cost.cols() {
                    if used_c[c] {
                        continue;
                    }
                    used_r[r] = true;
                    used_c[c] = true;
                    pairs.push((r, c));
                    rec(cost, k, r + 1, pairs, used_r, used_c, best);
                    pairs.pop();
                    used_r[r] = false;
                    used_c[c] = false;
                }
            }
        }
        rec(cost, k, 0, &mut pairs, &mut used_r, &mut used_c, &mut best);
        if k == 0 {
            return (0.0, Vec::new());
        }
        best
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, integer: bool) -> Matrix {
        let data = (0..rows * cols)
            .map(|_| {
                if integer {
                    rng.random_range(0..4) as f64
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn zero_diagonal_matches_diagonal() {
        let mut m = Matrix::filled(3, 3, 1.0);
        for i in 0..3 {
            m.set(i, i, 0.0);
        }
        let a = hungarian(&m).unwrap();
        assert_eq!(a, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(assignment_cost(&m, &a), 0.0);
    }

    #[test]
    fn two_by_two() {
        let m = Matrix::from_rows(&[[1.0, 2.0], [2.0, 1.0]]).unwrap();
        let a = hungarian(&m).unwrap();
        assert_eq!(a, vec![(0, 0), (1, 1)]);
        assert_eq!(assignment_cost(&m, &a), 2.0);
        assert_eq!(brute_force(&m).0, 2.0);
    }

    #[test]
    fn empty_and_non_finite() {
        assert!(hungarian(&Matrix::zeros(0, 3)).unwrap().is_empty());
        let m = Matrix::from_rows(&[[f64::NAN]]).unwrap();
        assert!(hungarian(&m).is_err());
    }

    #[test]
    fn ties_resolve_lexicographically() {
        let m = Matrix::filled(3, 4, 1.0);
        assert_eq!(hungarian(&m).unwrap(), vec![(0, 0), (1, 1), (2, 2)]);
        let m = Matrix::filled(4, 2, 1.0);
        assert_eq!(hungarian(&m).unwrap(), vec![(0, 0), (1, 1)]);
    }

    #[test]
    fn matches_brute_force_on_random_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..400 {
            let rows = rng.random_range(1..=6);
            let cols = rng.random_range(1..=7);
            let integer = trial % 2 == 0;
            let m = random_matrix(&mut rng, rows, cols, integer);
            let got = hungarian(&m).unwrap();
            let (opt, lex) = brute_force(&m);
            assert_eq!(got.len(), rows.min(cols));
            assert_eq!(assignment_cost(&m, &got), opt, "{m:?}");
            if integer {
                assert_eq!(got, lex, "tie-break differs for {m:?}");
            }
        }
    }

    proptest! {
        #[test]
        fn invariant_under_row_and_column_offsets(
            vals in proptest::collection::vec(0u8..5, 20),
            row in 0usize..4,
            col in 0usize..4,
            shift in 0u8..7,
        ) {
            let m = Matrix::from_vec(4, 5, vals.iter().map(|&v| v as f64).collect()).unwrap();
            let base = hungarian(&m).unwrap();
            // A full row always participates when rows ≤ cols, so shifting it
            // leaves the optimal set unchanged.
            let mut shifted = m.clone();
            for c in 0..5 {
                shifted.set(row, c, m.get(row, c) + shift as f64);
            }
            prop_assert_eq!(hungarian(&shifted).unwrap(), base.clone());
            // Same for a full column of the transposed problem.
            let t = m.transpose();
            let base_t = hungarian(&t).unwrap();
            let mut shifted_t = t.clone();
            for r in 0..5 {
                shifted_t.set(r, row, t.get(r, row) + shift as f64);
            }
            prop_assert_eq!(hungarian(&shifted_t).unwrap(), base_t);
            // Square: both rows and columns are fully used.
            let sq = Matrix::from_vec(4, 4, vals[..16].iter().map(|&v| v as f64).collect()).unwrap();
            let base_sq = hungarian(&sq).unwrap();
            let mut shifted_sq = sq.clone();
            for r in 0..4 {
                shifted_sq.set(r, col, sq.get(r, col) + shift as f64);
            }
            prop_assert_eq!(hungarian(&shifted_sq).unwrap(), base_sq);
        }
    }
}
