//! Symmetric eigendecomposition by cyclic Jacobi rotations.

use super::Matrix;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_SWEEPS: usize = 100;

/// Stop once the off-diagonal norm falls below this fraction of the Frobenius norm.
pub const RELATIVE_OFF_DIAGONAL_TOL: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct SymEigen {
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// Columns are unit eigenvectors, in the order of `eigenvalues`.
    pub eigenvectors: Matrix,
    pub sweeps: usize,
}

impl SymEigen {
    /// `Φ Λ Φᵀ`
    pub fn reconstruct(&self) -> Matrix {
        let n = self.eigenvalues.len();
        let mut scaled = self.eigenvectors.clone();
        for r in 0..n {
            for (c, lambda) in self.eigenvalues.iter().enumerate() {
                scaled.set(r, c, scaled.get(r, c) * lambda);
            }
        }
        scaled
            .matmul_t(&self.eigenvectors)
            .expect("square factors")
    }
}

pub fn sym_eigen(c: &Matrix) -> Result<SymEigen> {
    sym_eigen_with_budget(c, DEFAULT_MAX_SWEEPS)
}

/// Diagonalizes `(c + cᵀ)/2`.
///
/// Rows of `vt` hold the eigenvectors during the iteration so every rotation
/// touches two contiguous rows; only the symmetric mirror writes are strided.
pub fn sym_eigen_with_budget(c: &Matrix, max_sweeps: usize) -> Result<SymEigen> {
    let mut a = c.symmetrized()?;
    let n = a.rows();
    let mut vt = Matrix::identity(n);

    let frob = a.frobenius_norm();
    let threshold = RELATIVE_OFF_DIAGONAL_TOL * frob;
    let mut sweeps = 0;

    loop {
        let off = off_diagonal_norm(&a);
        if off <= threshold || frob == 0.0 {
            break;
        }
        if sweeps == max_sweeps {
            return Err(Error::Convergence {
                sweeps,
                off_norm: off,
            });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut vt, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i)).collect();
    order.sort_by(|&i, &j| diag[j].total_cmp(&diag[i]));

    let eigenvalues = order.iter().map(|&i| diag[i]).collect();
    let eigenvectors = Matrix::from_fn(n, n, |r, k| vt.get(order[k], r));
    Ok(SymEigen {
        eigenvalues,
        eigenvectors,
        sweeps,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for p in 0..n {
        for q in (p + 1)..n {
            let v = a.get(p, q);
            s += 2.0 * v * v;
        }
    }
    s.sqrt()
}

fn rotate(a: &mut Matrix, vt: &mut Matrix, p: usize, q: usize) {
    let n = a.rows();
    let apq = a.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = a.get(p, p);
    let aqq = a.get(q, q);
    let theta = (aqq - app) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;

    a.set(p, p, app - t * apq);
    a.set(q, q, aqq + t * apq);
    a.set(p, q, 0.0);
    a.set(q, p, 0.0);

    {
        let data = a.as_mut_slice();
        let (row_p, row_q) = two_rows(data, n, p, q);
        for k in 0..n {
            if k == p || k == q {
                continue;
            }
            let akp = row_p[k];
            let akq = row_q[k];
            row_p[k] = c * akp - s * akq;
            row_q[k] = s * akp + c * akq;
        }
    }
    for k in 0..n {
        if k == p || k == q {
            continue;
        }
        let vp = a.get(p, k);
        let vq = a.get(q, k);
        a.set(k, p, vp);
        a.set(k, q, vq);
    }

    let data = vt.as_mut_slice();
    let (row_p, row_q) = two_rows(data, n, p, q);
    for (vp, vq) in row_p.iter_mut().zip(row_q.iter_mut()) {
        let (x, y) = (*vp, *vq);
        *vp = c * x - s * y;
        *vq = s * x + c * y;
    }
}

fn two_rows(data: &mut [f64], n: usize, p: usize, q: usize) -> (&mut [f64], &mut [f64]) {
    debug_assert!(p < q);
    let (head, tail) = data.split_at_mut(q * n);
    (&mut head[p * n..(p + 1) * n], &mut tail[..n])
}
