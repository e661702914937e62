//! Symmetric eigendecomposition in a canonical order.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Eigenpairs of a symmetric matrix, eigenvalues descending. Each
/// eigenvector's largest-magnitude entry is made positive so the output does
/// not depend on solver sign conventions; magnitude ties break toward the
/// lower row index.
pub struct SortedEigen {
    pub values: DVector<f64>,
    /// Columns are eigenvectors matching `values`.
    pub vectors: DMatrix<f64>,
}

pub fn sorted_symmetric_eigen(matrix: &DMatrix<f64>) -> SortedEigen {
    let p = matrix.nrows();
    let eig = SymmetricEigen::new(matrix.clone());
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("symmetric eigenvalues are finite")
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(p, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(p, p);
    for (dst, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let mut lead = 0;
        for i in 1..p {
            if col[i].abs() > col[lead].abs() {
                lead = i;
            }
        }
        let sign = if col[lead] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..p {
            vectors[(i, dst)] = sign * col[i];
        }
    }
    SortedEigen { values, vectors }
}
