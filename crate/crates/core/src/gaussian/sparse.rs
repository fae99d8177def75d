use nalgebra::{DMatrix, DVector};

/// Row-compressed view of a mostly-zero square matrix. The EOM and TMS maps
/// have a handful of nonzeros per row, so congruences cost O(nnz · dim).
#[derive(Debug, Clone)]
pub struct SparseRows {
    dim: usize,
    rows: Vec<Vec<(usize, f64)>>,
}

impl SparseRows {
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        let mut rows = vec![Vec::new(); m.nrows()];
        for c in 0..m.ncols() {
            for (r, &v) in m.column(c).iter().enumerate() {
                if v != 0.0 {
                    rows[r].push((c, v));
                }
            }
        }
        Self { dim: m.ncols(), rows }
    }

    /// `None` once more than an eighth of the entries are nonzero.
    pub fn try_sparse(m: &DMatrix<f64>) -> Option<Self> {
        let nnz = m.iter().filter(|v| **v != 0.0).count();
        (m.is_square() && nnz * 8 <= m.len()).then(|| Self::from_dense(m))
    }

    pub fn nnz(&self) -> usize {
        self.rows.iter().map(Vec::len).sum()
    }

    pub fn matvec(&self, v: &[f64], out: &mut [f64]) {
        for (o, row) in out.iter_mut().zip(&self.rows) {
            *o = row.iter().map(|&(c, a)| a * v[c]).sum();
        }
    }

    /// self · b
    pub fn mul_dense(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        assert_eq!(self.dim, b.nrows());
        let mut out = DMatrix::zeros(self.rows.len(), b.ncols());
        for j in 0..b.ncols() {
            let col = b.column(j);
            let src = col.as_slice();
            let mut dst = out.column_mut(j);
            self.matvec(src, dst.as_mut_slice());
        }
        out
    }

    /// self · Σ · selfᵀ for symmetric Σ.
    pub fn congruence(&self, sigma: &DMatrix<f64>) -> DMatrix<f64> {
        let d = self.dim;
        // Column i of Σ Sᵀ is Σ_k s_ik Σ[:, k].
        let mut t = DMatrix::zeros(d, self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            let mut acc = DVector::zeros(d);
            for &(k, a) in row {
                acc.axpy(a, &sigma.column(k), 1.0);
            }
            t.set_column(i, &acc);
        }
        self.mul_dense(&t)
    }
}
