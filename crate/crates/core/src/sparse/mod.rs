//! Compressed sparse storage plus the two factorizations the solvers need:
//! an LDLᵀ for symmetric quasi-definite KKT systems (with inertia) and a
//! general LU for power-flow Jacobians.

mod ldl;

pub use ldl::{Inertia, Ldl, LdlError};

use thiserror::Error;

/// Coordinate-format accumulator. Duplicate entries are summed on compression.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub n_rows: usize,
    pub n_cols: usize,
    pub rows: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Triplets {
    pub fn new(n_rows: usize, n_cols: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            ..Default::default()
        }
    }

    pub fn with_capacity(n_rows: usize, n_cols: usize, cap: usize) -> Self {
        Triplets {
            n_rows,
            n_cols,
            rows: Vec::with_capacity(cap),
            cols: Vec::with_capacity(cap),
            vals: Vec::with_capacity(cap),
        }
    }

    #[inline]
    pub fn push(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.n_rows && c < self.n_cols, "({r},{c}) out of bounds");
        self.rows.push(r);
        self.cols.push(c);
        self.vals.push(v);
    }

    /// Pushes into the lower triangle, mirroring upper-triangle coordinates.
    #[inline]
    pub fn push_lower(&mut self, r: usize, c: usize, v: f64) {
        if r >= c {
            self.push(r, c, v)
        } else {
            self.push(c, r, v)
        }
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    pub fn clear(&mut self) {
        self.rows.clear();
        self.cols.clear();
        self.vals.clear();
    }

    pub fn to_csc(&self) -> Csc {
        Csc::from_triplets(self)
    }
}

/// Compressed sparse column matrix with sorted, unique row indices.
#[derive(Debug, Clone, PartialEq)]
pub struct Csc {
    pub n_rows: usize,
    pub n_cols: usize,
    pub col_ptr: Vec<usize>,
    pub row_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csc {
    pub fn from_triplets(t: &Triplets) -> Csc {
        let mut count = vec![0usize; t.n_cols + 1];
        for &c in &t.cols {
            count[c + 1] += 1;
        }
        for j in 0..t.n_cols {
            count[j + 1] += count[j];
        }
        let mut next = count.clone();
        let mut rows = vec![0usize; t.len()];
        let mut vals = vec![0.0; t.len()];
        for k in 0..t.len() {
            let dst = next[t.cols[k]];
            rows[dst] = t.rows[k];
            vals[dst] = t.vals[k];
            next[t.cols[k]] += 1;
        }
        let mut col_ptr = Vec::with_capacity(t.n_cols + 1);
        let mut row_idx = Vec::with_capacity(t.len());
        let mut out_vals = Vec::with_capacity(t.len());
        let mut order: Vec<usize> = Vec::new();
        col_ptr.push(0);
        for j in 0..t.n_cols {
            order.clear();
            order.extend(count[j]..count[j + 1]);
            order.sort_unstable_by_key(|&k| rows[k]);
            let start = row_idx.len();
            for &k in &order {
                if row_idx.len() > start && *row_idx.last().unwrap() == rows[k] {
                    *out_vals.last_mut().unwrap() += vals[k];
                } else {
                    row_idx.push(rows[k]);
                    out_vals.push(vals[k]);
                }
            }
            col_ptr.push(row_idx.len());
        }
        Csc {
            n_rows: t.n_rows,
            n_cols: t.n_cols,
            col_ptr,
            row_idx,
            vals: out_vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for j in 0..self.n_cols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.vals[k] * x[j];
            }
        }
        y
    }

    /// `y = Aᵀ x`.
    pub fn mul_t_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n_cols)
            .map(|j| {
                (self.col_ptr[j]..self.col_ptr[j + 1])
                    .map(|k| self.vals[k] * x[self.row_idx[k]])
                    .sum()
            })
            .collect()
    }

    /// `y = A x` where only the lower triangle of symmetric `A` is stored.
    pub fn sym_lower_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n_rows];
        for j in 0..self.n_cols {
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                let i = self.row_idx[k];
                y[i] += self.vals[k] * x[j];
                if i != j {
                    y[j] += self.vals[k] * x[i];
                }
            }
        }
        y
    }
}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("sparse LU factorization found no usable pivot")]
pub struct SingularMatrix;

/// Solves the square system `A x = b` in place by sparse LU with partial pivoting.
pub fn lu_solve(a: &Csc, b: &mut [f64]) -> Result<(), SingularMatrix> {
    assert_eq!(a.n_rows, a.n_cols);
    match a.n_cols {
        0 => return Ok(()),
        1 => {
            let d: f64 = a.vals.iter().sum();
            if d == 0.0 || !d.is_finite() {
                return Err(SingularMatrix);
            }
            b[0] /= d;
            return Ok(());
        }
        _ => {}
    }
    let m = rsparse::data::Sprs {
        nzmax: a.nnz(),
        m: a.n_rows,
        n: a.n_cols,
        p: a.col_ptr.iter().map(|&p| p as isize).collect(),
        i: a.row_idx.clone(),
        x: a.vals.clone(),
    };
    rsparse::lusol(&m, b, 1, 1.0).map_err(|_| SingularMatrix)?;
    if b.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(SingularMatrix)
    }
}
