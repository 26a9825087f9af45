//! Min-cost bipartite assignment (Kuhn-Munkres with row/column potentials).

use ndarray::Array2;

use super::GroupingError;

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `(row, col)` pairs sorted by row; `min(rows, cols)` of them.
    pub pairs: Vec<(usize, usize)>,
    /// Sum of matched costs, accumulated in row order.
    pub total: f64,
}

impl Assignment {
    /// Column assigned to `row`, if any.
    pub fn col_of(&self, row: usize) -> Option<usize> {
        self.pairs.iter().find(|(r, _)| *r == row).map(|&(_, c)| c)
    }

    pub fn row_of(&self, col: usize) -> Option<usize> {
        self.pairs.iter().find(|(_, c)| *c == col).map(|&(r, _)| r)
    }
}

/// Optimal assignment for a rectangular cost matrix. Non-finite entries are
/// rejected.
pub fn hungarian_match(cost: &Array2<f64>) -> Result<Assignment, GroupingError> {
    if let Some(((r, c), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(GroupingError::NonFiniteCost { row: r, col: c });
    }
    let (rows, cols) = cost.dim();
    if rows == 0 || cols == 0 {
        return Ok(Assignment {
            pairs: Vec::new(),
            total: 0.0,
        });
    }
    let transposed = rows > cols;
    let view = if transposed { cost.t() } else { cost.view() };
    let (n, m) = view.dim();

    // 1-based potentials over n rows (n <= m) and m columns; column 0 is a sentinel.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let reduced = view[(i0 - 1, j - 1)] - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
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

    let mut pairs: Vec<(usize, usize)> = (1..=m)
        .filter(|&j| owner[j] != 0)
        .map(|j| {
            let (r, c) = (owner[j] - 1, j - 1);
            if transposed {
                (c, r)
            } else {
                (r, c)
            }
        })
        .collect();
    pairs.sort_unstable();
    let total = pairs.iter().map(|&(r, c)| cost[(r, c)]).sum();
    Ok(Assignment { pairs, total })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identity_zero_diagonal() {
        let a = hungarian_match(&array![[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 1)]);
        assert_eq!(a.total, 0.0);
    }

    #[test]
    fn single_entry() {
        let a = hungarian_match(&array![[5.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 0)]);
        assert_eq!(a.total, 5.0);
    }

    #[test]
    fn rectangular_both_ways() {
        let wide = array![[2.0, 100.0, 10.0], [10.0, 100.0, 15.0]];
        let a = hungarian_match(&wide).unwrap();
        assert_eq!(a.pairs, vec![(0, 0), (1, 2)]);
        assert_eq!(a.total, 17.0);
        let b = hungarian_match(&wide.t().to_owned()).unwrap();
        assert_eq!(b.pairs, vec![(0, 0), (2, 1)]);
        assert_eq!(b.total, 17.0);
        assert_eq!(b.row_of(1), Some(2));
        assert_eq!(b.col_of(1), None);
    }

    #[test]
    fn negative_costs() {
        let a = hungarian_match(&array![[-1.0, -5.0], [-3.0, -2.0]]).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        assert_eq!(a.total, -8.0);
    }

    #[test]
    fn rejects_nan() {
        assert!(matches!(
            hungarian_match(&array![[0.0, f64::NAN]]),
            Err(GroupingError::NonFiniteCost { row: 0, col: 1 })
        ));
    }

    #[test]
    fn empty_matrix() {
        let a = hungarian_match(&Array2::zeros((0, 3))).unwrap();
        assert!(a.pairs.is_empty());
    }
}
