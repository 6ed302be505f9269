//! Up-looking sparse LDLᵀ on an AMD-permuted pattern.
//!
//! Input matrices are symmetric with only the lower triangle stored. The
//! symbolic phase is done once per pattern; numeric refactorization reuses it.

use thiserror::Error;

use super::Csc;

const NONE: usize = usize::MAX;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LdlError {
    #[error("matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("fill-reducing ordering failed: {0}")]
    Ordering(String),
    #[error("zero or non-finite pivot at position {0}")]
    ZeroPivot(usize),
    #[error("numeric factorization called with a pattern different from the analyzed one")]
    PatternMismatch,
}

/// Counts of positive and negative pivots of D.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
}

#[derive(Debug, Clone)]
pub struct Ldl {
    n: usize,
    // pattern of the lower-triangle input this was analyzed for
    src_col_ptr: Vec<usize>,
    src_row_idx: Vec<usize>,
    perm: Vec<usize>,
    pinv: Vec<usize>,
    // permuted upper triangle
    up_col_ptr: Vec<usize>,
    up_row_idx: Vec<usize>,
    // source entry k lands at up position dest[k]
    dest: Vec<usize>,
    // source entry index of each diagonal, or NONE
    diag_src: Vec<usize>,
    etree: Vec<usize>,
    l_col_ptr: Vec<usize>,
    l_row_idx: Vec<usize>,
    l_vals: Vec<f64>,
    d: Vec<f64>,
    d_inv: Vec<f64>,
    factored: bool,
}

impl Ldl {
    pub fn analyze(a: &Csc) -> Result<Ldl, LdlError> {
        if a.n_rows != a.n_cols {
            return Err(LdlError::NotSquare(a.n_rows, a.n_cols));
        }
        let n = a.n_cols;
        let ap: Vec<usize> = a.col_ptr.clone();
        let (perm, pinv) = if n == 0 {
            (Vec::new(), Vec::new())
        } else {
            let (p, pinv, _info) = amd::order(n, &ap, &a.row_idx, &amd::Control::default())
                .map_err(|s| LdlError::Ordering(format!("{s:?}")))?;
            (p, pinv)
        };

        // permuted upper triangle pattern
        let mut count = vec![0usize; n + 1];
        for j in 0..n {
            for k in a.col_ptr[j]..a.col_ptr[j + 1] {
                let i = a.row_idx[k];
                let (pi, pj) = (pinv[i], pinv[j]);
                count[pi.max(pj) + 1] += 1;
            }
        }
        for j in 0..n {
            count[j + 1] += count[j];
        }
        let nnz = a.nnz();
        let mut next = count.clone();
        let mut rows = vec![0usize; nnz];
        let mut dest = vec![0usize; nnz];
        let mut diag_src = vec![NONE; n];
        for j in 0..n {
            for k in a.col_ptr[j]..a.col_ptr[j + 1] {
                let i = a.row_idx[k];
                let (pi, pj) = (pinv[i], pinv[j]);
                let c = pi.max(pj);
                rows[next[c]] = pi.min(pj);
                dest[k] = next[c];
                next[c] += 1;
                if i == j {
                    diag_src[pi] = k;
                }
            }
        }
        // sort rows inside each column, carrying the map along
        let mut order: Vec<usize> = Vec::new();
        let mut inv_dest = vec![0usize; nnz];
        for (k, &d) in dest.iter().enumerate() {
            inv_dest[d] = k;
        }
        let mut sorted_rows = vec![0usize; nnz];
        for c in 0..n {
            order.clear();
            order.extend(count[c]..count[c + 1]);
            order.sort_unstable_by_key(|&t| rows[t]);
            for (off, &t) in order.iter().enumerate() {
                let pos = count[c] + off;
                sorted_rows[pos] = rows[t];
                dest[inv_dest[t]] = pos;
            }
        }
        let up_col_ptr = count;
        let up_row_idx = sorted_rows;

        // elimination tree and column counts
        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for p in up_col_ptr[j]..up_col_ptr[j + 1] {
                let mut i = up_row_idx[p];
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }
        let mut l_col_ptr = vec![0usize; n + 1];
        for i in 0..n {
            l_col_ptr[i + 1] = l_col_ptr[i] + lnz[i];
        }
        let total = l_col_ptr[n];
        Ok(Ldl {
            n,
            src_col_ptr: a.col_ptr.clone(),
            src_row_idx: a.row_idx.clone(),
            perm,
            pinv,
            up_col_ptr,
            up_row_idx,
            dest,
            diag_src,
            etree,
            l_col_ptr,
            l_row_idx: vec![0; total],
            l_vals: vec![0.0; total],
            d: vec![0.0; n],
            d_inv: vec![0.0; n],
            factored: false,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.l_col_ptr[self.n]
    }

    pub fn matches_pattern(&self, a: &Csc) -> bool {
        a.n_cols == self.n && a.col_ptr == self.src_col_ptr && a.row_idx == self.src_row_idx
    }

    /// Factors `a + diag(shift)`. `shift` is indexed in the original ordering;
    /// each shifted diagonal must be present in the pattern.
    pub fn factor(&mut self, a: &Csc, shift: Option<&[f64]>) -> Result<Inertia, LdlError> {
        if !self.matches_pattern(a) {
            return Err(LdlError::PatternMismatch);
        }
        self.factored = false;
        let n = self.n;
        let mut ux = vec![0.0; a.nnz()];
        for (k, &v) in a.vals.iter().enumerate() {
            ux[self.dest[k]] += v;
        }
        if let Some(sh) = shift {
            for (orig, &s) in sh.iter().enumerate() {
                if s != 0.0 {
                    let pi = self.pinv[orig];
                    let k = self.diag_src[pi];
                    assert!(k != NONE, "shift on a diagonal absent from the pattern");
                    ux[self.dest[k]] += s;
                }
            }
        }

        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];
        let mut next_space: Vec<usize> = self.l_col_ptr[..n].to_vec();
        let mut inertia = Inertia::default();

        for k in 0..n {
            let mut d_k = 0.0;
            let mut nnz_y = 0;
            for p in self.up_col_ptr[k]..self.up_col_ptr[k + 1] {
                let b = self.up_row_idx[p];
                if b == k {
                    d_k = ux[p];
                    continue;
                }
                y_vals[b] = ux[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut n_e = 1;
                    let mut nx = self.etree[b];
                    while nx != NONE && nx < k {
                        if y_used[nx] {
                            break;
                        }
                        y_used[nx] = true;
                        elim[n_e] = nx;
                        n_e += 1;
                        nx = self.etree[nx];
                    }
                    while n_e > 0 {
                        n_e -= 1;
                        y_idx[nnz_y] = elim[n_e];
                        nnz_y += 1;
                    }
                }
            }
            for t in (0..nnz_y).rev() {
                let c = y_idx[t];
                let slot = next_space[c];
                let yc = y_vals[c];
                for j in self.l_col_ptr[c]..slot {
                    y_vals[self.l_row_idx[j]] -= self.l_vals[j] * yc;
                }
                self.l_row_idx[slot] = k;
                let l = yc * self.d_inv[c];
                self.l_vals[slot] = l;
                d_k -= yc * l;
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if d_k == 0.0 || !d_k.is_finite() {
                return Err(LdlError::ZeroPivot(k));
            }
            if d_k > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.d[k] = d_k;
            self.d_inv[k] = 1.0 / d_k;
        }
        self.factored = true;
        Ok(inertia)
    }

    /// Solves in place with the last successful factorization.
    pub fn solve(&self, b: &mut [f64]) {
        assert!(self.factored, "solve before a successful factor");
        let n = self.n;
        let mut x: Vec<f64> = (0..n).map(|k| b[self.perm[k]]).collect();
        for i in 0..n {
            let xi = x[i];
            if xi != 0.0 {
                for j in self.l_col_ptr[i]..self.l_col_ptr[i + 1] {
                    x[self.l_row_idx[j]] -= self.l_vals[j] * xi;
                }
            }
        }
        for i in 0..n {
            x[i] *= self.d_inv[i];
        }
        for i in (0..n).rev() {
            let mut acc = x[i];
            for j in self.l_col_ptr[i]..self.l_col_ptr[i + 1] {
                acc -= self.l_vals[j] * x[self.l_row_idx[j]];
            }
            x[i] = acc;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }
}
