//! Minimal sparse linear algebra: CSR storage and a sparse LDL^T factorization.
//!
//! The factorization does no pivoting. It is valid for symmetric positive
//! definite matrices and for quasi-definite saddle-point matrices whose rows
//! are ordered with all primal unknowns before all multipliers; callers are
//! responsible for that ordering.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum SparseError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("zero or non-finite pivot at index {0}")]
    ZeroPivot(usize),
}

/// Compressed sparse row matrix with sorted, deduplicated column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n_rows: usize,
    pub n_cols: usize,
    pub indptr: Vec<usize>,
    pub indices: Vec<usize>,
    pub data: Vec<f64>,
}

impl CsrMatrix {
    pub fn zeros(n_rows: usize, n_cols: usize) -> Self {
        CsrMatrix {
            n_rows,
            n_cols,
            indptr: vec![0; n_rows + 1],
            indices: Vec::new(),
            data: Vec::new(),
        }
    }

    /// Builds a CSR matrix from (row, col, value) triplets, summing duplicates.
    /// The accumulation order is deterministic for a given triplet order.
    pub fn from_triplets(
        n_rows: usize,
        n_cols: usize,
        triplets: &[(usize, usize, f64)],
    ) -> CsrMatrix {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));
        let mut indptr = vec![0usize; n_rows + 1];
        let mut indices = Vec::with_capacity(triplets.len());
        let mut data: Vec<f64> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            assert!(r < n_rows && c < n_cols, "triplet out of bounds");
            if last == Some((r, c)) {
                *data.last_mut().unwrap() += v;
            } else {
                indices.push(c);
                data.push(v);
                indptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..n_rows {
            indptr[r + 1] += indptr[r];
        }
        CsrMatrix { n_rows, n_cols, indptr, indices, data }
    }

    pub fn nnz(&self) -> usize {
        self.data.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.indptr[r], self.indptr[r + 1]);
        (&self.indices[a..b], &self.data[a..b])
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_cols);
        let mut y = vec![0.0; self.n_rows];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (c, v) in cols.iter().zip(vals) {
                acc += v * x[*c];
            }
            y[r] = acc;
        }
        y
    }

    /// y = A^T x without forming the transpose.
    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n_rows);
        let mut y = vec![0.0; self.n_cols];
        for r in 0..self.n_rows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                y[*c] += v * x[r];
            }
        }
        y
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(k) => vals[k],
            Err(_) => 0.0,
        }
    }

    /// Extracts the square submatrix with the given (sorted) row/column indices.
    pub fn submatrix(&self, idx: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n_cols];
        for (l, &g) in idx.iter().enumerate() {
            local[g] = l;
        }
        let mut triplets = Vec::new();
        for (lr, &gr) in idx.iter().enumerate() {
            let (cols, vals) = self.row(gr);
            for (c, v) in cols.iter().zip(vals) {
                let lc = local[*c];
                if lc != usize::MAX {
                    triplets.push((lr, lc, *v));
                }
            }
        }
        CsrMatrix::from_triplets(idx.len(), idx.len(), &triplets)
    }

    /// Extracts rows `rows` restricted to columns `cols` (both sorted).
    pub fn extract(&self, rows: &[usize], cols: &[usize]) -> CsrMatrix {
        let mut local = vec![usize::MAX; self.n_cols];
        for (l, &g) in cols.iter().enumerate() {
            local[g] = l;
        }
        let mut triplets = Vec::new();
        for (lr, &gr) in rows.iter().enumerate() {
            let (cs, vs) = self.row(gr);
            for (c, v) in cs.iter().zip(vs) {
                let lc = local[*c];
                if lc != usize::MAX {
                    triplets.push((lr, lc, *v));
                }
            }
        }
        CsrMatrix::from_triplets(rows.len(), cols.len(), &triplets)
    }

    /// Largest absolute entry difference against another matrix of equal shape.
    pub fn max_abs_diff(&self, other: &CsrMatrix) -> f64 {
        assert_eq!((self.n_rows, self.n_cols), (other.n_rows, other.n_cols));
        let mut m: f64 = 0.0;
        for r in 0..self.n_rows {
            let (ca, va) = self.row(r);
            for (c, v) in ca.iter().zip(va) {
                m = m.max((v - other.get(r, *c)).abs());
            }
            let (cb, vb) = other.row(r);
            for (c, v) in cb.iter().zip(vb) {
                m = m.max((v - self.get(r, *c)).abs());
            }
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Symmetric matrix in upper-triangular CSC form, the input of [`LdlFactorization`].
pub struct UpperCsc {
    pub n: usize,
    pub colptr: Vec<usize>,
    pub rowidx: Vec<usize>,
    pub values: Vec<f64>,
}

impl UpperCsc {
    /// Takes the upper triangle (including diagonal) of a full symmetric CSR matrix.
    /// CSR rows of the lower triangle are CSC columns of the upper triangle.
    pub fn from_symmetric_csr(a: &CsrMatrix) -> UpperCsc {
        assert_eq!(a.n_rows, a.n_cols);
        let n = a.n_rows;
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::new();
        let mut values = Vec::new();
        for r in 0..n {
            let (cols, vals) = a.row(r);
            for (c, v) in cols.iter().zip(vals) {
                if *c <= r {
                    rowidx.push(*c);
                    values.push(*v);
                }
            }
            colptr[r + 1] = rowidx.len();
        }
        UpperCsc { n, colptr, rowidx, values }
    }

    /// Assembles the upper triangle of the saddle-point matrix
    /// `[[A, B^T], [B, 0]]` from a symmetric `A` (full CSR) and `B` (CSR).
    pub fn saddle(a: &CsrMatrix, b: &CsrMatrix) -> UpperCsc {
        assert_eq!(a.n_rows, a.n_cols);
        assert_eq!(b.n_cols, a.n_cols);
        let np = a.n_rows;
        let nd = b.n_rows;
        let n = np + nd;
        let mut colptr = vec![0usize; n + 1];
        let mut rowidx = Vec::new();
        let mut values = Vec::new();
        for c in 0..np {
            let (cols, vals) = a.row(c);
            for (r, v) in cols.iter().zip(vals) {
                if *r <= c {
                    rowidx.push(*r);
                    values.push(*v);
                }
            }
            colptr[c + 1] = rowidx.len();
        }
        for j in 0..nd {
            let (cols, vals) = b.row(j);
            for (r, v) in cols.iter().zip(vals) {
                rowidx.push(*r);
                values.push(*v);
            }
            colptr[np + j + 1] = rowidx.len();
        }
        UpperCsc { n, colptr, rowidx, values }
    }
}

/// Sparse LDL^T factorization (up-looking, elimination-tree based, no pivoting).
pub struct LdlFactorization {
    n: usize,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
}

impl LdlFactorization {
    pub fn new(a: &UpperCsc) -> Result<LdlFactorization, SparseError> {
        let n = a.n;
        let mut parent = vec![usize::MAX; n];
        let mut flag = vec![usize::MAX; n];
        let mut lnz = vec![0usize; n];

        // Symbolic pass: elimination tree and column counts.
        for k in 0..n {
            flag[k] = k;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let mut i = a.rowidx[p];
                if i >= k {
                    continue;
                }
                while flag[i] != k {
                    if parent[i] == usize::MAX {
                        parent[i] = k;
                    }
                    lnz[i] += 1;
                    flag[i] = k;
                    i = parent[i];
                }
            }
        }

        let mut lp = vec![0usize; n + 1];
        for k in 0..n {
            lp[k + 1] = lp[k] + lnz[k];
        }
        let nnz = lp[n];
        let mut li = vec![0usize; nnz];
        let mut lx = vec![0.0f64; nnz];
        let mut d = vec![0.0f64; n];
        let mut y = vec![0.0f64; n];
        let mut pattern = vec![0usize; n];
        let mut next = vec![0usize; n]; // per-column fill cursor
        next[..n].copy_from_slice(&lp[..n]);
        for f in flag.iter_mut() {
            *f = usize::MAX;
        }

        // Numeric pass.
        for k in 0..n {
            let mut top = n;
            flag[k] = k;
            for p in a.colptr[k]..a.colptr[k + 1] {
                let i0 = a.rowidx[p];
                if i0 > k {
                    continue;
                }
                y[i0] += a.values[p];
                let mut len = 0usize;
                let mut i = i0;
                while flag[i] != k {
                    pattern[len] = i;
                    len += 1;
                    flag[i] = k;
                    i = parent[i];
                }
                while len > 0 {
                    len -= 1;
                    top -= 1;
                    pattern[top] = pattern[len];
                }
            }
            d[k] = y[k];
            y[k] = 0.0;
            for s in top..n {
                let i = pattern[s];
                let yi = y[i];
                y[i] = 0.0;
                for p in lp[i]..next[i] {
                    y[li[p]] -= lx[p] * yi;
                }
                let lki = yi / d[i];
                d[k] -= lki * yi;
                li[next[i]] = k;
                lx[next[i]] = lki;
                next[i] += 1;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return Err(SparseError::ZeroPivot(k));
            }
        }

        Ok(LdlFactorization { n, lp, li, lx, d })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Diagonal of D; the signs give the inertia of the factored matrix.
    pub fn pivots(&self) -> &[f64] {
        &self.d
    }

    pub fn solve_in_place(&self, b: &mut [f64]) {
        assert_eq!(b.len(), self.n);
        for j in 0..self.n {
            let xj = b[j];
            for p in self.lp[j]..self.lp[j + 1] {
                b[self.li[p]] -= self.lx[p] * xj;
            }
        }
        for j in 0..self.n {
            b[j] /= self.d[j];
        }
        for j in (0..self.n).rev() {
            let mut xj = b[j];
            for p in self.lp[j]..self.lp[j + 1] {
                xj -= self.lx[p] * b[self.li[p]];
            }
            b[j] = xj;
        }
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }
}

/// Direct solver for `[[A, B^T], [B, 0]] [x; y] = [f; g]` with `A` symmetric
/// positive definite on the primal block and `B` of full row rank.
pub struct SaddleSolver {
    ldl: LdlFactorization,
    n_primal: usize,
    n_dual: usize,
}

impl SaddleSolver {
    pub fn new(a: &CsrMatrix, b: &CsrMatrix) -> Result<SaddleSolver, SparseError> {
        if b.n_cols != a.n_cols {
            return Err(SparseError::Dimension(format!(
                "constraint columns {} vs operator size {}",
                b.n_cols, a.n_cols
            )));
        }
        let upper = UpperCsc::saddle(a, b);
        let ldl = LdlFactorization::new(&upper)?;
        Ok(SaddleSolver { ldl, n_primal: a.n_rows, n_dual: b.n_rows })
    }

    pub fn solve(&self, f: &[f64], g: &[f64]) -> (Vec<f64>, Vec<f64>) {
        assert_eq!(f.len(), self.n_primal);
        assert_eq!(g.len(), self.n_dual);
        let mut rhs = Vec::with_capacity(self.ldl.n());
        rhs.extend_from_slice(f);
        rhs.extend_from_slice(g);
        self.ldl.solve_in_place(&mut rhs);
        let y = rhs.split_off(self.n_primal);
        (rhs, y)
    }
}
