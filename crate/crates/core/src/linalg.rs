//! Dense symmetric eigendecomposition, sorted ascending.

use nalgebra::DMatrix;

/// Eigenvalues (ascending) and matching orthonormal eigenvectors of a
/// symmetric `n x n` row-major matrix. `vectors[k]` is the k-th eigenvector.
#[derive(Debug, Clone)]
pub struct SymmetricEigen {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

pub fn symmetric_eigen(matrix: &[f64], n: usize) -> SymmetricEigen {
    assert_eq!(matrix.len(), n * n, "matrix must be n x n");
    if n == 0 {
        return SymmetricEigen {
            values: Vec::new(),
            vectors: Vec::new(),
        };
    }
    let eig = DMatrix::from_row_slice(n, n, matrix).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    SymmetricEigen {
        values: order.iter().map(|&k| eig.eigenvalues[k]).collect(),
        vectors: order.iter().map(|&k| eig.eigenvectors.column(k).iter().copied().collect()).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn residual(m: &[f64], n: usize, lambda: f64, v: &[f64]) -> f64 {
        (0..n)
            .map(|i| {
                let mv: f64 = (0..n).map(|j| m[i * n + j] * v[j]).sum();
                (mv - lambda * v[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    #[test]
    fn diagonal_matrix() {
        let m = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
        let eig = symmetric_eigen(&m, 3);
        assert_eq!(eig.values, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn one_by_one() {
        let eig = symmetric_eigen(&[5.0], 1);
        assert_eq!(eig.values, vec![5.0]);
        assert_eq!(eig.vectors, vec![vec![1.0]]);
    }

    #[test]
    fn random_symmetric_matrices_decompose() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for n in [2usize, 3, 5, 8, 13, 40] {
            let mut m = vec![0.0; n * n];
            for i in 0..n {
                for j in i..n {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    m[i * n + j] = v;
                    m[j * n + i] = v;
                }
            }
            let eig = symmetric_eigen(&m, n);
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            let trace: f64 = (0..n).map(|i| m[i * n + i]).sum();
            assert!((eig.values.iter().sum::<f64>() - trace).abs() < 1e-10);
            for (lambda, v) in eig.values.iter().zip(&eig.vectors) {
                assert!(residual(&m, n, *lambda, v) < 1e-10);
            }
            for a in 0..n {
                for b in 0..n {
                    let dot: f64 = eig.vectors[a].iter().zip(&eig.vectors[b]).map(|(x, y)| x * y).sum();
                    let want = if a == b { 1.0 } else { 0.0 };
                    assert!((dot - want).abs() < 1e-10);
                }
            }
        }
    }
}
