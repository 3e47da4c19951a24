//! Minimal dense linear algebra: row-major matrices, Gauss-Jordan inversion
//! and LU solves with partial pivoting. Problem sizes here stay in the low
//! thousands, so dense routines are the simplest correct tool.

/// Dense row-major square matrix.
#[derive(Debug, Clone)]
pub struct DMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl DMatrix {
    pub fn zeros(n: usize) -> DMatrix {
        DMatrix {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> DMatrix {
        let mut m = DMatrix::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.n..(i + 1) * self.n]
    }

    /// Invert by Gauss-Jordan elimination with partial pivoting. Returns
    /// `None` when a pivot falls below `tol`.
    pub fn inverse(&self, tol: f64) -> Option<DMatrix> {
        let n = self.n;
        let mut a = self.clone();
        let mut inv = DMatrix::identity(n);
        for col in 0..n {
            let pivot_row = (col..n)
                .max_by(|&i, &j| {
                    a.at(i, col)
                        .abs()
                        .partial_cmp(&a.at(j, col).abs())
                        .unwrap()
                })
                .unwrap();
            let pivot = a.at(pivot_row, col);
            if pivot.abs() < tol {
                return None;
            }
            if pivot_row != col {
                a.data.swap_rows(n, pivot_row, col);
                inv.data.swap_rows(n, pivot_row, col);
            }
            let inv_pivot = 1.0 / pivot;
            for v in a.row_mut(col) {
                *v *= inv_pivot;
            }
            for v in inv.row_mut(col) {
                *v *= inv_pivot;
            }
            for r in 0..n {
                if r == col {
                    continue;
                }
                let factor = a.at(r, col);
                if factor == 0.0 {
                    continue;
                }
                for c in 0..n {
                    let v = a.at(col, c);
                    a.data[r * n + c] -= factor * v;
                }
                for c in 0..n {
                    let v = inv.at(col, c);
                    inv.data[r * n + c] -= factor * v;
                }
            }
        }
        Some(inv)
    }
}

trait SwapRows {
    fn swap_rows(&mut self, n: usize, a: usize, b: usize);
}

impl SwapRows for Vec<f64> {
    fn swap_rows(&mut self, n: usize, a: usize, b: usize) {
        if a == b {
            return;
        }
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (head, tail) = self.split_at_mut(hi * n);
        head[lo * n..(lo + 1) * n].swap_with_slice(&mut tail[..n]);
    }
}

/// Solve `a x = b` by LU with partial pivoting; `a` is consumed as scratch.
/// Returns `None` when the matrix is singular to `tol`.
pub fn solve(mut a: DMatrix, mut b: Vec<f64>, tol: f64) -> Option<Vec<f64>> {
    let n = a.n;
    assert_eq!(b.len(), n);
    for col in 0..n {
        let pivot_row = (col..n)
            .max_by(|&i, &j| {
                a.at(i, col)
                    .abs()
                    .partial_cmp(&a.at(j, col).abs())
                    .unwrap()
            })
            .unwrap();
        if a.at(pivot_row, col).abs() < tol {
            return None;
        }
        if pivot_row != col {
            a.data.swap_rows(n, pivot_row, col);
            b.swap(pivot_row, col);
        }
        let pivot = a.at(col, col);
        for r in col + 1..n {
            let factor = a.at(r, col) / pivot;
            if factor == 0.0 {
                continue;
            }
            for c in col..n {
                let v = a.at(col, c);
                a.data[r * n + c] -= factor * v;
            }
            b[r] -= factor * b[col];
        }
    }
    for col in (0..n).rev() {
        let mut acc = b[col];
        for c in col + 1..n {
            acc -= a.at(col, c) * b[c];
        }
        b[col] = acc / a.at(col, col);
    }
    Some(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(n: usize, entries: &[f64]) -> DMatrix {
        DMatrix {
            n,
            data: entries.to_vec(),
        }
    }

    #[test]
    fn inverse_of_small_matrix() {
        let a = mat(2, &[4.0, 7.0, 2.0, 6.0]);
        let inv = a.inverse(1e-12).unwrap();
        let expect = [0.6, -0.7, -0.2, 0.4];
        for (got, want) in inv.data.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = mat(2, &[1.0, 2.0, 2.0, 4.0]);
        assert!(a.inverse(1e-12).is_none());
        assert!(solve(a, vec![1.0, 1.0], 1e-12).is_none());
    }

    #[test]
    fn solve_matches_inverse() {
        let a = mat(
            3,
            &[3.0, 2.0, -1.0, 2.0, -2.0, 4.0, -1.0, 0.5, -1.0],
        );
        let x = solve(a, vec![1.0, -2.0, 0.0], 1e-12).unwrap();
        let expect = [1.0, -2.0, -2.0];
        for (got, want) in x.iter().zip(expect) {
            assert!((got - want).abs() < 1e-10);
        }
    }
}
