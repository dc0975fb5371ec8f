use ndarray::{Array2, ArrayView2};

use crate::graph::Graph;

/// Symmetrically normalized adjacency with self-loops,
/// `D^-1/2 (A + I) D^-1/2`, stored as CSR.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn new(g: &Graph) -> Self {
        let n = g.num_nodes();
        let inv_sqrt: Vec<f64> = (0..n)
            .map(|u| 1.0 / ((g.degree(u) + 1) as f64).sqrt())
            .collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut cols = Vec::with_capacity(2 * g.num_edges() + n);
        let mut vals = Vec::with_capacity(cols.capacity());
        offsets.push(0);
        for u in 0..n {
            let mut diag_done = false;
            for &v in g.neighbors(u) {
                if !diag_done && v > u {
                    cols.push(u);
                    vals.push(inv_sqrt[u] * inv_sqrt[u]);
                    diag_done = true;
                }
                cols.push(v);
                vals.push(inv_sqrt[u] * inv_sqrt[v]);
            }
            if !diag_done {
                cols.push(u);
                vals.push(inv_sqrt[u] * inv_sqrt[u]);
            }
            offsets.push(cols.len());
        }
        NormalizedAdjacency {
            offsets,
            cols,
            vals,
        }
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `(column, value)` pairs of row `u`, ascending by column.
    pub fn row(&self, u: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.offsets[u]..self.offsets[u + 1];
        self.cols[r.clone()]
            .iter()
            .copied()
            .zip(self.vals[r].iter().copied())
    }

    /// Entry `(u, v)`, zero if not stored.
    pub fn get(&self, u: usize, v: usize) -> f64 {
        let r = self.offsets[u]..self.offsets[u + 1];
        match self.cols[r.clone()].binary_search(&v) {
            Ok(i) => self.vals[r.start + i],
            Err(_) => 0.0,
        }
    }

    /// Dense `Â · x`.
    pub fn matmul(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut out = Array2::zeros((self.num_nodes(), x.ncols()));
        for (u, mut orow) in out.rows_mut().into_iter().enumerate() {
            for (v, a) in self.row(u) {
                orow.scaled_add(a, &x.row(v));
            }
        }
        out
    }

    /// Rows `rows` of `Â · x`.
    pub fn matmul_rows(&self, x: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
        let mut out = Array2::zeros((rows.len(), x.ncols()));
        for (i, &u) in rows.iter().enumerate() {
            let mut orow = out.row_mut(i);
            for (v, a) in self.row(u) {
                orow.scaled_add(a, &x.row(v));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let n = self.num_nodes();
        let mut d = Array2::zeros((n, n));
        for u in 0..n {
            for (v, a) in self.row(u) {
                d[[u, v]] = a;
            }
        }
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        Graph::new(n, edges, Array2::zeros((n, 1)), vec![None; n], vec![0; n]).unwrap()
    }

    #[test]
    fn isolated_node_is_identity() {
        let a = NormalizedAdjacency::new(&graph(1, &[]));
        assert_eq!(a.to_dense(), ndarray::array![[1.0]]);
    }

    #[test]
    fn single_edge_is_all_halves() {
        let a = NormalizedAdjacency::new(&graph(2, &[(0, 1)])).to_dense();
        for v in a.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn path_middle_row() {
        let a = NormalizedAdjacency::new(&graph(3, &[(0, 1), (1, 2)]));
        let r = 1.0 / 6f64.sqrt();
        assert!((a.get(1, 0) - r).abs() < 1e-15);
        assert!((a.get(1, 1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((a.get(1, 2) - r).abs() < 1e-15);
        assert!((a.get(0, 0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn symmetric_nonnegative_and_sorted() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (0, 5)]);
        let a = NormalizedAdjacency::new(&g);
        let d = a.to_dense();
        assert_eq!(d, d.t());
        assert!(d.iter().all(|&v| v >= 0.0));
        assert_eq!(a.nnz(), 2 * g.num_edges() + 6);
        for u in 0..6 {
            let cols: Vec<usize> = a.row(u).map(|(c, _)| c).collect();
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
        let x = Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64 * 0.1);
        let dense = d.dot(&x);
        let sparse = a.matmul(x.view());
        assert!((dense - &sparse).iter().all(|v| v.abs() < 1e-12));
        let rows = a.matmul_rows(x.view(), &[4, 1]);
        assert_eq!(rows.row(0), sparse.row(4));
        assert_eq!(rows.row(1), sparse.row(1));
    }
}
