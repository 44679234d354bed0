//! Dense symmetric eigendecomposition for the small matrices used by the
//! bound probes (logit-space Hessians, a handful of classes wide).

/// Cyclic Jacobi eigendecomposition of a symmetric `n×n` matrix in row-major
/// order. Returns `(eigenvalues, eigenvectors)` with eigenvector `i` stored
/// in column `i`.
pub fn jacobi_eigen(matrix: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(matrix.len(), n * n);
    let mut a = matrix.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigenvalues = (0..n).map(|i| a[i * n + i]).collect();
    (eigenvalues, v)
}

/// Spectral norm (largest absolute eigenvalue) of a symmetric matrix.
pub fn spectral_norm_sym(matrix: &[f64], n: usize) -> f64 {
    let (vals, _) = jacobi_eigen(matrix, n);
    vals.iter().map(|v| v.abs()).fold(0.0, f64::max)
}

/// Apply the Moore–Penrose pseudo-inverse of a symmetric matrix to `g`.
/// Eigenvalues below `1e-12` of the largest magnitude are treated as zero.
pub fn pinv_apply_sym(matrix: &[f64], n: usize, g: &[f64]) -> Vec<f64> {
    let (vals, vecs) = jacobi_eigen(matrix, n);
    let max_abs = vals.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let tol = max_abs * 1e-12;
    let mut out = vec![0.0; n];
    for (i, &lambda) in vals.iter().enumerate() {
        if lambda.abs() <= tol {
            continue;
        }
        let mut dot = 0.0;
        for k in 0..n {
            dot += vecs[k * n + i] * g[k];
        }
        let coef = dot / lambda;
        for k in 0..n {
            out[k] += coef * vecs[k * n + i];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eigen_of_diagonal() {
        let m = [3.0, 0.0, 0.0, -1.0];
        let (vals, _) = jacobi_eigen(&m, 2);
        let mut sorted = vals.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((sorted[0] + 1.0).abs() < 1e-12);
        assert!((sorted[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let m = [2.0, 1.0, 0.5, 1.0, 3.0, -0.5, 0.5, -0.5, 1.5];
        let n = 3;
        let (vals, vecs) = jacobi_eigen(&m, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs[i * n + k] * vals[k] * vecs[j * n + k];
                }
                assert!((acc - m[i * n + j]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn softmax_hessian_spectral_norm() {
        // diag(p) − ppᵀ at p = (0.5, 0.5): [[0.25,−0.25],[−0.25,0.25]], norm 0.5
        let h = [0.25, -0.25, -0.25, 0.25];
        assert!((spectral_norm_sym(&h, 2) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pinv_solves_on_range_and_kills_null_space() {
        // same rank-1 matrix: null space spanned by (1,1)
        let h = [0.25, -0.25, -0.25, 0.25];
        // g in range: (1,−1) → H⁺g should satisfy H(H⁺g) = g
        let g = [1.0, -1.0];
        let x = pinv_apply_sym(&h, 2, &g);
        let hx = [
            h[0] * x[0] + h[1] * x[1],
            h[2] * x[0] + h[3] * x[1],
        ];
        assert!((hx[0] - g[0]).abs() < 1e-10);
        assert!((hx[1] - g[1]).abs() < 1e-10);
        // g in null space → zero
        let g0 = [1.0, 1.0];
        let x0 = pinv_apply_sym(&h, 2, &g0);
        assert!(x0[0].abs() < 1e-12 && x0[1].abs() < 1e-12);
    }
}
