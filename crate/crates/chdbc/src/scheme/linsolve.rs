//! Direct solver for the Newton linear systems.
//!
//! Ordering the unknowns by x-column makes the Jacobian block tridiagonal
//! with periodic corner blocks: the diagonal blocks vary (through I''(phi))
//! while every off-diagonal block is the same sparse coupling matrix E
//! coming from the periodic D_x^2 stencils. The system is solved by block
//! Thomas elimination along the chain of columns 0..P-2 while carrying the
//! coupling to the border column P-1, then a dense solve for the border and
//! a back-substitution pass. Fully deterministic.

use nalgebra::{DMatrix, DVector};

/// Sparse m x m coupling block stored as triplets.
pub struct SparseBlock {
    pub m: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseBlock {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(self.m, self.m);
        for &(r, c, v) in &self.entries {
            d[(r, c)] += v;
        }
        d
    }

    /// out = self * rhs (dense, m x k).
    pub fn mul_mat(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.m, rhs.ncols());
        for &(r, c, v) in &self.entries {
            for k in 0..rhs.ncols() {
                out[(r, k)] += v * rhs[(c, k)];
            }
        }
        out
    }

    pub fn mul_vec(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.m);
        for &(r, c, v) in &self.entries {
            out[r] += v * rhs[c];
        }
        out
    }
}

/// Solve the cyclic block tridiagonal system with diagonal blocks `a[i]`,
/// constant off-diagonal block `e` (both sub and super, plus the two
/// periodic corners) and right-hand sides `b[i]`. Returns `None` if a
/// pivot block is singular.
pub fn solve_cyclic_block_tridiag(
    a: &[DMatrix<f64>],
    e: &SparseBlock,
    b: &[DVector<f64>],
) -> Option<Vec<DVector<f64>>> {
    let p = a.len();
    let m = e.m;
    assert!(p >= 4, "cyclic block solver requires at least 4 columns");
    let q = p - 1; // border column
    let e_dense = e.to_dense();

    // Forward sweep: x_i = f_i - G_i x_{i+1} - H_i x_q for i = 0..q-2,
    // and x_{q-1} = f_{q-1} - H_{q-1} x_q.
    let mut gs: Vec<DMatrix<f64>> = Vec::with_capacity(q);
    let mut hs: Vec<DMatrix<f64>> = Vec::with_capacity(q);
    let mut fs: Vec<DVector<f64>> = Vec::with_capacity(q);
    for i in 0..q {
        let (mi, ci, rhs) = if i == 0 {
            (a[0].clone(), e_dense.clone(), b[0].clone())
        } else {
            let mi = &a[i] - e.mul_mat(&gs[i - 1]);
            let mut ci = -e.mul_mat(&hs[i - 1]);
            if i == q - 1 {
                ci += &e_dense;
            }
            let rhs = &b[i] - e.mul_vec(&fs[i - 1]);
            (mi, ci, rhs)
        };
        let lu = mi.lu();
        let gi = if i < q - 1 {
            lu.solve(&e_dense)?
        } else {
            DMatrix::zeros(m, m)
        };
        let hi = lu.solve(&ci)?;
        let fi = lu.solve(&rhs)?;
        gs.push(gi);
        hs.push(hi);
        fs.push(fi);
    }

    // Backward pass: affine representation x_i = p_i - Q_i x_q.
    let mut ps = vec![DVector::<f64>::zeros(m); q];
    let mut qs = vec![DMatrix::<f64>::zeros(m, m); q];
    ps[q - 1] = fs[q - 1].clone();
    qs[q - 1] = hs[q - 1].clone();
    for i in (0..q - 1).rev() {
        ps[i] = &fs[i] - &gs[i] * &ps[i + 1];
        qs[i] = &hs[i] - &gs[i] * &qs[i + 1];
    }

    // Border row: E x_{q-1} + A_q x_q + E x_0 = b_q.
    let s = &a[q] - e.mul_mat(&qs[q - 1]) - e.mul_mat(&qs[0]);
    let rhs = &b[q] - e.mul_vec(&ps[q - 1]) - e.mul_vec(&ps[0]);
    let xq = s.lu().solve(&rhs)?;

    let mut xs: Vec<DVector<f64>> = Vec::with_capacity(p);
    for i in 0..q {
        xs.push(&ps[i] - &qs[i] * &xq);
    }
    xs.push(xq);
    Some(xs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assemble_dense(a: &[DMatrix<f64>], e: &SparseBlock) -> DMatrix<f64> {
        let p = a.len();
        let m = e.m;
        let mut full = DMatrix::zeros(p * m, p * m);
        let ed = e.to_dense();
        for i in 0..p {
            full.view_mut((i * m, i * m), (m, m)).copy_from(&a[i]);
            let left = (i + p - 1) % p;
            let right = (i + 1) % p;
            full.view_mut((i * m, left * m), (m, m)).copy_from(&ed);
            full.view_mut((i * m, right * m), (m, m)).copy_from(&ed);
        }
        full
    }

    #[test]
    fn matches_dense_lu() {
        let p = 6;
        let m = 5;
        // Deterministic pseudo-random diagonally dominant blocks.
        let mut seed = 1234567u64;
        let mut rng = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((seed >> 33) as f64 / (1u64 << 31) as f64) - 1.0
        };
        let e = SparseBlock {
            m,
            entries: vec![(0, 0, 0.3), (1, 2, -0.4), (3, 3, 0.2), (4, 1, 0.1)],
        };
        let mut a = Vec::new();
        for _ in 0..p {
            let mut blk = DMatrix::zeros(m, m);
            for r in 0..m {
                for c in 0..m {
                    blk[(r, c)] = 0.5 * rng();
                }
                blk[(r, r)] += 4.0;
            }
            a.push(blk);
        }
        let b: Vec<DVector<f64>> = (0..p)
            .map(|_| DVector::from_fn(m, |_, _| rng()))
            .collect();
        let x = solve_cyclic_block_tridiag(&a, &e, &b).unwrap();

        let full = assemble_dense(&a, &e);
        let mut rhs = DVector::zeros(p * m);
        for i in 0..p {
            rhs.rows_mut(i * m, m).copy_from(&b[i]);
        }
        let xref = full.lu().solve(&rhs).unwrap();
        for i in 0..p {
            for k in 0..m {
                assert!(
                    (x[i][k] - xref[i * m + k]).abs() < 1e-10,
                    "mismatch at block {i} row {k}"
                );
            }
        }
    }
}
