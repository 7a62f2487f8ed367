//! Newton solver shared by both time steppers.
//!
//! Unknowns per x-column i (m = 2(N+1) + 4 of them): phi_{i,0..N},
//! mu_{i,0..N}, the wall potentials muB_i, muT_i and the wall normal
//! derivatives gB_i, gT_i. The phi ghost rows are eliminated through the
//! long-stencil relations phi_{i,-1} = phi_{i,1} - 2h gB_i and
//! phi_{i,N+1} = phi_{i,N-1} + 2h gT_i; the mu ghost rows by reflection.
//!
//! Both schemes reduce to the same residual shape; only the coefficients
//! and the known (previous-step) fields differ:
//!   ct phi - Delta_h mu - r_evo = 0                    (all rows)
//!   mu - I'(phi) + c1 Delta_h phi + k_pot = 0          (all rows)
//!   ct phi^B - D_x^2 muB - r_surf_bottom = 0
//!   ct phi^T - D_x^2 muT - r_surf_top = 0
//!   muB - I'(phi^B) + cgam D_x^2 phi^B + cg gB + k_surf_bottom = 0
//!   muT - I'(phi^T) + cgam D_x^2 phi^T - cg gT + k_surf_top = 0

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{ChdbcError, Result};
use crate::grid::{
    dx2_gamma, laplacian_neumann, laplacian_with_ghosts, BoundaryField, BulkField, Mesh,
};
use crate::potential::{i_prime, i_second};
use crate::sum::pairwise_sum_fn;

use super::linsolve::{solve_cyclic_block_tridiag, SparseBlock};

/// Coefficients and known fields of one nonlinear step.
pub(super) struct NewtonProblem {
    pub mesh: Arc<Mesh>,
    /// Time-derivative coefficient: 1/dt (CS1) or 3/(2 dt) (BDF2).
    pub ct: f64,
    /// Coefficient on Delta_h phi in the bulk potential equation.
    pub c1: f64,
    /// Coefficient on D_x^2 phi^B in the surface potential equations.
    pub cgam: f64,
    /// Coefficient on the wall normal derivative (minus at the bottom in
    /// the chemical potential, plus at the top).
    pub cg: f64,
    pub r_evo: BulkField,
    pub k_pot: BulkField,
    pub r_surf_bottom: BoundaryField,
    pub r_surf_top: BoundaryField,
    pub k_surf_bottom: BoundaryField,
    pub k_surf_top: BoundaryField,
}

/// One Newton iterate: the full unknown set.
#[derive(Clone)]
pub(super) struct Iterate {
    pub phi: BulkField,
    pub mu: BulkField,
    pub mu_bottom: BoundaryField,
    pub mu_top: BoundaryField,
    pub g_bottom: BoundaryField,
    pub g_top: BoundaryField,
}

pub(super) struct Residual {
    pub evo: BulkField,
    pub pot: BulkField,
    pub surf_evo_bottom: BoundaryField,
    pub surf_evo_top: BoundaryField,
    pub surf_pot_bottom: BoundaryField,
    pub surf_pot_top: BoundaryField,
}

impl Residual {
    pub fn norm(&self) -> f64 {
        let sq = |s: &[f64]| pairwise_sum_fn(s.len(), |k| s[k] * s[k]);
        (sq(self.evo.data())
            + sq(self.pot.data())
            + sq(self.surf_evo_bottom.data())
            + sq(self.surf_evo_top.data())
            + sq(self.surf_pot_bottom.data())
            + sq(self.surf_pot_top.data()))
        .sqrt()
    }
}

/// The ghost rows of `phi` implied by the long-stencil normal derivatives.
pub(super) fn ghost_rows(
    phi: &BulkField,
    g_bottom: &BoundaryField,
    g_top: &BoundaryField,
) -> (BoundaryField, BoundaryField) {
    let n = phi.mesh().n;
    let two_h = 2.0 * phi.mesh().h;
    let gb = phi.trace(1).axpy(-two_h, g_bottom);
    let gt = phi.trace(n - 1).axpy(two_h, g_top);
    (gb, gt)
}

fn map_i_prime_bulk(f: &BulkField) -> Result<BulkField> {
    let mut out = BulkField::zeros(f.mesh());
    let n = f.mesh().n;
    for j in 0..=n {
        for i in 0..n {
            out.set(i, j, i_prime(f.get(i, j))?);
        }
    }
    Ok(out)
}

fn map_i_prime_boundary(f: &BoundaryField) -> Result<BoundaryField> {
    let mut out = BoundaryField::zeros(f.mesh());
    for i in 0..f.mesh().n {
        out.set(i, i_prime(f.get(i))?);
    }
    Ok(out)
}

impl NewtonProblem {
    pub fn residual(&self, it: &Iterate) -> Result<Residual> {
        let (gb, gt) = ghost_rows(&it.phi, &it.g_bottom, &it.g_top);
        let lap_phi = laplacian_with_ghosts(&it.phi, &gb, &gt);
        let lap_mu = laplacian_neumann(&it.mu);
        let iprime = map_i_prime_bulk(&it.phi)?;

        let evo = it
            .phi
            .map(|v| self.ct * v)
            .axpy(-1.0, &lap_mu)
            .axpy(-1.0, &self.r_evo);
        let pot = it
            .mu
            .axpy(-1.0, &iprime)
            .axpy(self.c1, &lap_phi)
            .axpy(1.0, &self.k_pot);

        let phi_b = it.phi.trace(0);
        let phi_t = it.phi.trace(self.mesh.n);
        let surf_evo_bottom = phi_b
            .map(|v| self.ct * v)
            .axpy(-1.0, &dx2_gamma(&it.mu_bottom))
            .axpy(-1.0, &self.r_surf_bottom);
        let surf_evo_top = phi_t
            .map(|v| self.ct * v)
            .axpy(-1.0, &dx2_gamma(&it.mu_top))
            .axpy(-1.0, &self.r_surf_top);
        let surf_pot_bottom = it
            .mu_bottom
            .axpy(-1.0, &map_i_prime_boundary(&phi_b)?)
            .axpy(self.cgam, &dx2_gamma(&phi_b))
            .axpy(self.cg, &it.g_bottom)
            .axpy(1.0, &self.k_surf_bottom);
        let surf_pot_top = it
            .mu_top
            .axpy(-1.0, &map_i_prime_boundary(&phi_t)?)
            .axpy(self.cgam, &dx2_gamma(&phi_t))
            .axpy(-self.cg, &it.g_top)
            .axpy(1.0, &self.k_surf_top);

        Ok(Residual {
            evo,
            pot,
            surf_evo_bottom,
            surf_evo_top,
            surf_pot_bottom,
            surf_pot_top,
        })
    }

    /// Per-column unknown/equation layout.
    fn layout(&self) -> (usize, usize, usize, usize, usize, usize) {
        let n = self.mesh.n;
        let mu0 = n + 1;
        let mub = 2 * n + 2;
        let mut_ = 2 * n + 3;
        let gb = 2 * n + 4;
        let gt = 2 * n + 5;
        (2 * n + 6, mu0, mub, mut_, gb, gt)
    }

    /// Constant part of a diagonal Jacobian block; the variable I'' entries
    /// are added per column on top of a clone.
    fn base_diag_block(&self) -> DMatrix<f64> {
        let n = self.mesh.n;
        let h = self.mesh.h;
        let h2 = h * h;
        let (m, mu0, mub, mut_, gb, gt) = self.layout();
        let mut a = DMatrix::zeros(m, m);
        for j in 0..=n {
            // Evolution row j: ct phi_{i,j} - Delta_h mu (mu ghosts reflected).
            a[(j, j)] += self.ct;
            a[(j, mu0 + j)] += 4.0 / h2;
            if j == 0 {
                a[(j, mu0 + 1)] += -2.0 / h2;
            } else if j == n {
                a[(j, mu0 + n - 1)] += -2.0 / h2;
            } else {
                a[(j, mu0 + j - 1)] += -1.0 / h2;
                a[(j, mu0 + j + 1)] += -1.0 / h2;
            }
            // Potential row j: mu - I'(phi) + c1 Delta_h phi (phi ghosts via g).
            let r = mu0 + j;
            a[(r, mu0 + j)] += 1.0;
            a[(r, j)] += -4.0 * self.c1 / h2;
            if j == 0 {
                a[(r, 1)] += 2.0 * self.c1 / h2;
                a[(r, gb)] += -2.0 * self.c1 / h;
            } else if j == n {
                a[(r, n - 1)] += 2.0 * self.c1 / h2;
                a[(r, gt)] += 2.0 * self.c1 / h;
            } else {
                a[(r, j - 1)] += self.c1 / h2;
                a[(r, j + 1)] += self.c1 / h2;
            }
        }
        // Surface evolution rows.
        a[(mub, 0)] += self.ct;
        a[(mub, mub)] += 2.0 / h2;
        a[(mut_, n)] += self.ct;
        a[(mut_, mut_)] += 2.0 / h2;
        // Surface potential rows.
        a[(gb, mub)] += 1.0;
        a[(gb, 0)] += -2.0 * self.cgam / h2;
        a[(gb, gb)] += self.cg;
        a[(gt, mut_)] += 1.0;
        a[(gt, n)] += -2.0 * self.cgam / h2;
        a[(gt, gt)] += -self.cg;
        a
    }

    /// The constant coupling block to either x-neighbor column.
    fn coupling_block(&self) -> SparseBlock {
        let n = self.mesh.n;
        let h2 = self.mesh.h * self.mesh.h;
        let (m, mu0, mub, mut_, gb, gt) = self.layout();
        let mut entries = Vec::with_capacity(2 * (n + 1) + 4);
        for j in 0..=n {
            entries.push((j, mu0 + j, -1.0 / h2));
            entries.push((mu0 + j, j, self.c1 / h2));
        }
        entries.push((mub, mub, -1.0 / h2));
        entries.push((mut_, mut_, -1.0 / h2));
        entries.push((gb, 0, self.cgam / h2));
        entries.push((gt, n, self.cgam / h2));
        SparseBlock { m, entries }
    }

    fn diag_block(&self, base: &DMatrix<f64>, it: &Iterate, i: usize) -> Result<DMatrix<f64>> {
        let n = self.mesh.n;
        let (_, mu0, _, _, gb, gt) = self.layout();
        let mut a = base.clone();
        for j in 0..=n {
            a[(mu0 + j, j)] += -i_second(it.phi.get(i, j))?;
        }
        a[(gb, 0)] += -i_second(it.phi.get(i, 0))?;
        a[(gt, n)] += -i_second(it.phi.get(i, n))?;
        Ok(a)
    }

    fn pack_rhs(&self, r: &Residual) -> Vec<DVector<f64>> {
        let n = self.mesh.n;
        let (m, mu0, mub, mut_, gb, gt) = self.layout();
        (0..n)
            .map(|i| {
                let mut b = DVector::zeros(m);
                for j in 0..=n {
                    b[j] = -r.evo.get(i, j);
                    b[mu0 + j] = -r.pot.get(i, j);
                }
                b[mub] = -r.surf_evo_bottom.get(i);
                b[mut_] = -r.surf_evo_top.get(i);
                b[gb] = -r.surf_pot_bottom.get(i);
                b[gt] = -r.surf_pot_top.get(i);
                b
            })
            .collect()
    }

    fn unpack_update(&self, x: &[DVector<f64>]) -> Iterate {
        let n = self.mesh.n;
        let (_, mu0, mub, mut_, gb, gt) = self.layout();
        let mut phi = BulkField::zeros(&self.mesh);
        let mut mu = BulkField::zeros(&self.mesh);
        let mut mu_bottom = BoundaryField::zeros(&self.mesh);
        let mut mu_top = BoundaryField::zeros(&self.mesh);
        let mut g_bottom = BoundaryField::zeros(&self.mesh);
        let mut g_top = BoundaryField::zeros(&self.mesh);
        for i in 0..n {
            for j in 0..=n {
                phi.set(i, j, x[i][j]);
                mu.set(i, j, x[i][mu0 + j]);
            }
            mu_bottom.set(i, x[i][mub]);
            mu_top.set(i, x[i][mut_]);
            g_bottom.set(i, x[i][gb]);
            g_top.set(i, x[i][gt]);
        }
        Iterate { phi, mu, mu_bottom, mu_top, g_bottom, g_top }
    }

    /// Largest step length keeping every |phi + lambda dphi| < 1.
    fn max_step(phi: &BulkField, dphi: &BulkField) -> f64 {
        let mut lam = f64::INFINITY;
        for (v, d) in phi.data().iter().zip(dphi.data()) {
            if *d > 0.0 {
                lam = lam.min((1.0 - v) / d);
            } else if *d < 0.0 {
                lam = lam.min((-1.0 - v) / d);
            }
        }
        lam
    }

    /// Run Newton from `init` to the tolerance `tol` (absolute, on the
    /// stacked residual). Returns the solution, the number of linear solves
    /// and the final residual norm.
    pub fn solve(
        &self,
        init: Iterate,
        tol: f64,
        max_iter: usize,
        safeguard_fraction: f64,
    ) -> Result<(Iterate, usize, f64)> {
        let base = self.base_diag_block();
        let e = self.coupling_block();
        let mut it = init;
        let mut res = self.residual(&it)?;
        let mut rnorm = res.norm();
        for iter in 0..max_iter {
            if rnorm <= tol {
                return Ok((it, iter, rnorm));
            }
            let a: Vec<DMatrix<f64>> = (0..self.mesh.n)
                .map(|i| self.diag_block(&base, &it, i))
                .collect::<Result<_>>()?;
            let b = self.pack_rhs(&res);
            let x = solve_cyclic_block_tridiag(&a, &e, &b).ok_or(ChdbcError::SolverFailure {
                residual: rnorm,
                threshold: tol,
            })?;
            let delta = self.unpack_update(&x);
            let lambda = (safeguard_fraction * Self::max_step(&it.phi, &delta.phi)).min(1.0);
            if lambda < 1e-12 {
                return Err(ChdbcError::PositivityLoss { lambda });
            }
            it = Iterate {
                phi: it.phi.axpy(lambda, &delta.phi),
                mu: it.mu.axpy(lambda, &delta.mu),
                mu_bottom: it.mu_bottom.axpy(lambda, &delta.mu_bottom),
                mu_top: it.mu_top.axpy(lambda, &delta.mu_top),
                g_bottom: it.g_bottom.axpy(lambda, &delta.g_bottom),
                g_top: it.g_top.axpy(lambda, &delta.g_top),
            };
            res = self.residual(&it)?;
            rnorm = res.norm();
        }
        if rnorm <= tol {
            return Ok((it, max_iter, rnorm));
        }
        Err(ChdbcError::NewtonDivergence { residual: rnorm, iters: max_iter })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample_problem(mesh: &Arc<Mesh>) -> NewtonProblem {
        // CS1-shaped coefficients with arbitrary knowns.
        let dt = 1e-3;
        let eps = 0.1;
        NewtonProblem {
            mesh: Arc::clone(mesh),
            ct: 1.0 / dt,
            c1: eps * eps,
            cgam: 0.5 * eps,
            cg: eps * eps,
            r_evo: BulkField::from_fn(mesh, |x, y| 0.1 * x + 0.2 * y),
            k_pot: BulkField::from_fn(mesh, |x, y| 0.3 * (x - y)),
            r_surf_bottom: BoundaryField::from_fn(mesh, |x| 0.05 * x),
            r_surf_top: BoundaryField::from_fn(mesh, |x| -0.04 * x),
            k_surf_bottom: BoundaryField::from_fn(mesh, |x| 0.01 * x),
            k_surf_top: BoundaryField::from_fn(mesh, |x| 0.02 * x),
        }
    }

    fn random_iterate(mesh: &Arc<Mesh>, rng: &mut ChaCha8Rng) -> Iterate {
        let n = mesh.n;
        let mut phi = BulkField::zeros(mesh);
        let mut mu = BulkField::zeros(mesh);
        for j in 0..=n {
            for i in 0..n {
                phi.set(i, j, rng.gen_range(-0.6..0.6));
                mu.set(i, j, rng.gen_range(-1.0..1.0));
            }
        }
        let rf = |rng: &mut ChaCha8Rng| {
            let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            BoundaryField::from_data(mesh, data)
        };
        Iterate {
            phi,
            mu,
            mu_bottom: rf(rng),
            mu_top: rf(rng),
            g_bottom: rf(rng),
            g_top: rf(rng),
        }
    }

    fn pack_iterate(p: &NewtonProblem, it: &Iterate) -> Vec<f64> {
        let n = p.mesh.n;
        let (m, mu0, mub, mut_, gb, gt) = p.layout();
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            for j in 0..=n {
                out[i * m + j] = it.phi.get(i, j);
                out[i * m + mu0 + j] = it.mu.get(i, j);
            }
            out[i * m + mub] = it.mu_bottom.get(i);
            out[i * m + mut_] = it.mu_top.get(i);
            out[i * m + gb] = it.g_bottom.get(i);
            out[i * m + gt] = it.g_top.get(i);
        }
        out
    }

    fn unpack_iterate(p: &NewtonProblem, v: &[f64]) -> Iterate {
        let n = p.mesh.n;
        let (m, _, _, _, _, _) = p.layout();
        let cols: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_column_slice(&v[i * m..(i + 1) * m]))
            .collect();
        p.unpack_update(&cols)
    }

    fn pack_residual(p: &NewtonProblem, r: &Residual) -> Vec<f64> {
        p.pack_rhs(r).iter().flat_map(|b| b.iter().map(|v| -v).collect::<Vec<_>>()).collect()
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let mesh = Mesh::new(4);
        let p = sample_problem(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let it = random_iterate(&mesh, &mut rng);
        let n = mesh.n;
        let (m, ..) = p.layout();
        let total = n * m;

        // Assemble the full dense Jacobian from the blocks.
        let base = p.base_diag_block();
        let e = p.coupling_block().to_dense();
        let mut full = DMatrix::<f64>::zeros(total, total);
        for i in 0..n {
            let a = p.diag_block(&base, &it, i).unwrap();
            full.view_mut((i * m, i * m), (m, m)).copy_from(&a);
            let left = (i + n - 1) % n;
            let right = (i + 1) % n;
            full.view_mut((i * m, left * m), (m, m)).copy_from(&e);
            full.view_mut((i * m, right * m), (m, m)).copy_from(&e);
        }

        let u0 = pack_iterate(&p, &it);
        let delta = 1e-6;
        for col in 0..total {
            let mut up = u0.clone();
            let mut dn = u0.clone();
            up[col] += delta;
            dn[col] -= delta;
            let rp = pack_residual(&p, &p.residual(&unpack_iterate(&p, &up)).unwrap());
            let rm = pack_residual(&p, &p.residual(&unpack_iterate(&p, &dn)).unwrap());
            for row in 0..total {
                let fd = (rp[row] - rm[row]) / (2.0 * delta);
                let an = full[(row, col)];
                assert!(
                    (fd - an).abs() <= 1e-4 * an.abs().max(1.0),
                    "Jacobian mismatch at ({row}, {col}): fd = {fd}, analytic = {an}"
                );
            }
        }
    }

    #[test]
    fn newton_converges_on_synthetic_problem() {
        // Manufacture a problem whose exact solution is a chosen iterate:
        // pick the unknowns, then set the known fields so the residual is 0.
        let mesh = Mesh::new(8);
        let mut p = sample_problem(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let sol = random_iterate(&mesh, &mut rng);
        let r = p.residual(&sol).unwrap();
        p.r_evo = p.r_evo.axpy(1.0, &r.evo);
        p.k_pot = p.k_pot.axpy(-1.0, &r.pot);
        p.r_surf_bottom = p.r_surf_bottom.axpy(1.0, &r.surf_evo_bottom);
        p.r_surf_top = p.r_surf_top.axpy(1.0, &r.surf_evo_top);
        p.k_surf_bottom = p.k_surf_bottom.axpy(-1.0, &r.surf_pot_bottom);
        p.k_surf_top = p.k_surf_top.axpy(-1.0, &r.surf_pot_top);
        assert!(p.residual(&sol).unwrap().norm() < 1e-12);

        // Start from a flattened copy of the solution.
        let init = Iterate {
            phi: sol.phi.map(|v| 0.5 * v),
            mu: sol.mu.map(|v| 0.5 * v),
            mu_bottom: sol.mu_bottom.map(|v| 0.5 * v),
            mu_top: sol.mu_top.map(|v| 0.5 * v),
            g_bottom: sol.g_bottom.map(|v| 0.5 * v),
            g_top: sol.g_top.map(|v| 0.5 * v),
        };
        let (out, iters, rnorm) = p.solve(init, 1e-11, 50, 0.9).unwrap();
        assert!(rnorm <= 1e-11);
        assert!(iters > 0 && iters < 50);
        for (a, b) in out.phi.data().iter().zip(sol.phi.data()) {
            assert!((a - b).abs() < 1e-9);
        }

        // Restarting from the solution converges without a linear solve.
        let (_, iters2, _) = p.solve(out, 1e-11, 50, 0.9).unwrap();
        assert_eq!(iters2, 0);
    }
}
