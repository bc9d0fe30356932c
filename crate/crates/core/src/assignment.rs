//! Minimum-cost bipartite assignment (Kuhn–Munkres with dual potentials).
//!
//! Rectangular problems are padded to square with a constant larger than
//! every real entry. Among equally cheap assignments the lexicographically
//! smallest `(row, col)` sequence is returned, so results never depend on
//! floating-point accident inside the solver.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AssignmentError {
    #[error("cost matrix has {got} entries, expected {rows}x{cols}")]
    Shape { rows: usize, cols: usize, got: usize },
    #[error("cost entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },
}

/// Dense row-major cost matrix. Rows are tracked instances, columns are
/// observations.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, AssignmentError> {
        if data.len() != rows * cols {
            return Err(AssignmentError::Shape {
                rows,
                cols,
                got: data.len(),
            });
        }
        if let Some(i) = data.iter().position(|c| !c.is_finite()) {
            return Err(AssignmentError::NonFinite {
                row: i / cols,
                col: i % cols,
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(
        rows: usize,
        cols: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self, AssignmentError> {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self::new(rows, cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.cols + col]
    }

    pub fn max_entry(&self) -> Option<f64> {
        self.data.iter().copied().reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Matched `(row, col)` pairs sorted by row.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Solves the assignment problem for `costs`, returning `min(rows, cols)`
/// pairs of minimum total cost.
pub fn hungarian(costs: &CostMatrix) -> Assignment {
    let (rows, cols) = (costs.rows, costs.cols);
    let Some(max) = costs.max_entry() else {
        return Assignment {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    };
    let n = rows.max(cols);
    let pad = max.abs() + 1.0;
    let square: Vec<f64> = (0..n * n)
        .map(|k| {
            let (r, c) = (k / n, k % n);
            if r < rows && c < cols {
                costs.get(r, c)
            } else {
                pad
            }
        })
        .collect();

    let scale = square.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let (mut row_to_col, u, v) = solve_square(&square, n);
    let tol = 1e-9 * scale;
    lexicographic_tight_matching(&square, n, &u, &v, tol, &mut row_to_col);

    let pairs: Vec<(usize, usize)> = row_to_col
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < rows && c < cols)
        .map(|(r, &c)| (r, c))
        .collect();
    let total_cost = pairs.iter().map(|&(r, c)| costs.get(r, c)).sum();
    Assignment { pairs, total_cost }
}

/// Shortest augmenting path Hungarian method on an `n x n` matrix.
/// Returns the row→column matching and the optimal dual potentials
/// (`c[i][j] - u[i] - v[j] >= 0`, zero on matched pairs).
fn solve_square(a: &[f64], n: usize) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    // 1-based internal indexing; index 0 is the virtual source column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut col_owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        col_owner[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = a[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if col_owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            col_owner[j0] = col_owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[col_owner[j] - 1] = j - 1;
    }
    (row_to_col, u[1..].to_vec(), v[1..].to_vec())
}

/// Every optimal assignment uses only edges that are tight under an optimal
/// dual, so the lexicographically smallest optimum is the lexicographically
/// smallest perfect matching of the tight subgraph. Rows are fixed in order,
/// each taking the smallest column that still admits a perfect matching.
fn lexicographic_tight_matching(a: &[f64], n: usize, u: &[f64], v: &[f64], tol: f64, row_to_col: &mut [usize]) {
    let tight = |r: usize, c: usize| a[r * n + c] - u[r] - v[c] <= tol;
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    let mut row_fixed = vec![false; n];
    let mut col_fixed = vec![false; n];

    for r in 0..n {
        for c in 0..n {
            if col_fixed[c] || !tight(r, c) {
                continue;
            }
            if row_to_col[r] == c {
                break;
            }
            // Re-route the row currently holding `c` to the column `r` frees.
            let displaced = col_to_row[c];
            let target = row_to_col[r];
            row_fixed[r] = true;
            col_fixed[c] = true;
            let mut visited = vec![false; n];
            let mut path = Vec::new();
            let found = augment(
                displaced, target, n, &tight, &row_fixed, &col_fixed, row_to_col, &mut visited, &mut path,
            );
            row_fixed[r] = false;
            col_fixed[c] = false;
            if !found {
                continue;
            }
            // path holds (row, new col) steps along the alternating path
            for &(pr, pc) in &path {
                row_to_col[pr] = pc;
                col_to_row[pc] = pr;
            }
            row_to_col[r] = c;
            col_to_row[c] = r;
            break;
        }
        row_fixed[r] = true;
        col_fixed[row_to_col[r]] = true;
    }
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    n: usize,
    tight: &impl Fn(usize, usize) -> bool,
    row_fixed: &[bool],
    col_fixed: &[bool],
    row_to_col: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..n {
        if col_fixed[c] || visited[c] || !tight(row, c) || row_to_col[row] == c {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = row_to_col.iter().position(|&cc| cc == c).expect("perfect matching");
        if row_fixed[next] {
            continue;
        }
        path.push((row, c));
        if augment(next, target, n, tight, row_fixed, col_fixed, row_to_col, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}
