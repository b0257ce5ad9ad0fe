/// Compressed sparse row matrix with fixed structure, used for neighbor
/// aggregation and pooling inside the recorded graph.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    weights: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from per-row `(column, weight)` lists.
    pub fn from_rows(cols: usize, rows: &[Vec<(usize, f64)>]) -> Self {
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        let mut indices = Vec::new();
        let mut weights = Vec::new();
        indptr.push(0);
        for row in rows {
            for &(c, w) in row {
                debug_assert!(c < cols);
                indices.push(c);
                weights.push(w);
            }
            indptr.push(indices.len());
        }
        Self {
            rows: rows.len(),
            cols,
            indptr,
            indices,
            weights,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (s, e) = (self.indptr[r], self.indptr[r + 1]);
        self.indices[s..e]
            .iter()
            .copied()
            .zip(self.weights[s..e].iter().copied())
    }

    /// `out = self · x` for a dense row-major `x` with `width` columns.
    pub fn mul_dense(&self, x: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols * width);
        debug_assert_eq!(out.len(), self.rows * width);
        out.iter_mut().for_each(|v| *v = 0.0);
        for r in 0..self.rows {
            let dst = &mut out[r * width..(r + 1) * width];
            for (c, w) in self.row(r) {
                let src = &x[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// `out += selfᵀ · g` for a dense `g` with `width` columns.
    pub fn mul_dense_transposed_acc(&self, g: &[f64], width: usize, out: &mut [f64]) {
        debug_assert_eq!(g.len(), self.rows * width);
        debug_assert_eq!(out.len(), self.cols * width);
        for r in 0..self.rows {
            let src = &g[r * width..(r + 1) * width];
            for (c, w) in self.row(r) {
                let dst = &mut out[c * width..(c + 1) * width];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }
}
