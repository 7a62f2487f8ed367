//! Inverse operators on the weighted-mean-zero spaces and the discrete
//! H^{-1} norms built from them.
//!
//! `L_h psi = f` is solved by a real-to-complex FFT in the periodic x
//! direction followed by one tridiagonal solve in y per wavenumber. The
//! boundary rows of L_h carry the factor-2 ghost coupling; scaling row j
//! by omega_j makes each y-system symmetric positive (semi)definite, and
//! the singular k = 0 system is handled by projecting its right side to
//! mean zero, pinning one unknown, and recentering the solution.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{ChdbcError, Result};
use crate::grid::{
    apply_lh, boundary_inner, boundary_mean, dx2_gamma, inner, norm_sq, weighted_mean,
    BoundaryField, BulkField, Mesh,
};
use crate::sum::pairwise_sum_fn;

/// Absolute tolerance on the mean of an inverse-solve right-hand side.
pub const MEAN_ZERO_TOL: f64 = 1e-11;
/// Relative residual accepted from an inverse solve.
pub const RESIDUAL_TOL: f64 = 1e-10;

pub struct EllipticWorkspace {
    mesh: Arc<Mesh>,
    /// x-wavenumber eigenvalues lambda_k = (2 - 2 cos(2 pi k h)) / h^2.
    pub lambda: Vec<f64>,
    fft_fwd: Arc<dyn Fft<f64>>,
    fft_inv: Arc<dyn Fft<f64>>,
}

impl EllipticWorkspace {
    pub fn new(mesh: &Arc<Mesh>) -> EllipticWorkspace {
        let n = mesh.n;
        let h2 = mesh.h * mesh.h;
        let lambda = (0..n)
            .map(|k| {
                let t = 2.0 * std::f64::consts::PI * k as f64 * mesh.h;
                (2.0 - 2.0 * t.cos()) / h2
            })
            .collect();
        let mut planner = FftPlanner::new();
        EllipticWorkspace {
            mesh: Arc::clone(mesh),
            lambda,
            fft_fwd: planner.plan_fft_forward(n),
            fft_inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    /// Forward transform of each j-row of a bulk field: spectra[j][k].
    fn rows_to_spectra(&self, f: &BulkField) -> Vec<Vec<Complex<f64>>> {
        let n = self.mesh.n;
        (0..=n)
            .map(|j| {
                let mut buf: Vec<Complex<f64>> =
                    f.row(j).iter().map(|&v| Complex::new(v, 0.0)).collect();
                self.fft_fwd.process(&mut buf);
                buf
            })
            .collect()
    }

    fn spectra_to_rows(&self, spectra: &[Vec<Complex<f64>>]) -> BulkField {
        let n = self.mesh.n;
        let scale = 1.0 / n as f64;
        let mut out = BulkField::zeros(&self.mesh);
        for (j, spec) in spectra.iter().enumerate() {
            let mut buf = spec.clone();
            self.fft_inv.process(&mut buf);
            for i in 0..n {
                out.set(i, j, buf[i].re * scale);
            }
        }
        out
    }

    /// Solve the omega-scaled symmetric tridiagonal y-system for wavenumber k.
    /// The matrix has diagonal `omega_j (lambda + 2/h^2)` and off-diagonals
    /// `-1/h^2`; for lambda = 0 it is singular with constant nullspace, in
    /// which case the last unknown is pinned to zero (the caller recenters).
    fn solve_y_system(&self, lambda: f64, rhs_re: &mut [f64], rhs_im: &mut [f64]) {
        let n = self.mesh.n;
        let h2 = self.mesh.h * self.mesh.h;
        let off = -1.0 / h2;
        let diag_of = |j: usize| self.mesh.weights[j] * (lambda + 2.0 / h2);
        // Scale RHS rows by omega_j.
        for j in 0..=n {
            rhs_re[j] *= self.mesh.weights[j];
            rhs_im[j] *= self.mesh.weights[j];
        }
        let rows = if lambda == 0.0 { n } else { n + 1 };
        // Thomas elimination (SPD, no pivoting needed).
        let mut diag = vec![0.0; rows];
        diag[0] = diag_of(0);
        for j in 1..rows {
            let m = off / diag[j - 1];
            diag[j] = diag_of(j) - m * off;
            rhs_re[j] -= m * rhs_re[j - 1];
            rhs_im[j] -= m * rhs_im[j - 1];
        }
        if lambda == 0.0 {
            rhs_re[n] = 0.0;
            rhs_im[n] = 0.0;
        }
        rhs_re[rows - 1] /= diag[rows - 1];
        rhs_im[rows - 1] /= diag[rows - 1];
        for j in (0..rows - 1).rev() {
            rhs_re[j] = (rhs_re[j] - off * rhs_re[j + 1]) / diag[j];
            rhs_im[j] = (rhs_im[j] - off * rhs_im[j + 1]) / diag[j];
        }
    }

    /// Solve `L_h psi = f` for the unique weighted-mean-zero psi.
    pub fn solve_lh(&self, f: &BulkField) -> Result<BulkField> {
        let n = self.mesh.n;
        let mean = weighted_mean(f);
        if mean.abs() > MEAN_ZERO_TOL {
            return Err(ChdbcError::NonZeroMean { mean, tol: MEAN_ZERO_TOL });
        }
        let spectra = self.rows_to_spectra(f);
        let mut out_spectra = vec![vec![Complex::new(0.0, 0.0); n]; n + 1];
        let mut re = vec![0.0; n + 1];
        let mut im = vec![0.0; n + 1];
        for k in 0..n {
            for j in 0..=n {
                re[j] = spectra[j][k].re;
                im[j] = spectra[j][k].im;
            }
            if k == 0 {
                // Project the singular mode's right side to exact mean zero.
                let wsum = n as f64; // sum of omega_j
                let mre = pairwise_sum_fn(n + 1, |j| self.mesh.weights[j] * re[j]) / wsum;
                let mim = pairwise_sum_fn(n + 1, |j| self.mesh.weights[j] * im[j]) / wsum;
                for j in 0..=n {
                    re[j] -= mre;
                    im[j] -= mim;
                }
            }
            self.solve_y_system(self.lambda[k], &mut re, &mut im);
            if k == 0 {
                // Recenter the zero mode to weighted mean zero.
                let wsum = n as f64;
                let mre = pairwise_sum_fn(n + 1, |j| self.mesh.weights[j] * re[j]) / wsum;
                let mim = pairwise_sum_fn(n + 1, |j| self.mesh.weights[j] * im[j]) / wsum;
                for j in 0..=n {
                    re[j] -= mre;
                    im[j] -= mim;
                }
            }
            for j in 0..=n {
                out_spectra[j][k] = Complex::new(re[j], im[j]);
            }
        }
        let psi = self.spectra_to_rows(&out_spectra);
        // Residual audit.
        let fnorm = norm_sq(f).sqrt();
        if fnorm > 0.0 {
            let r = apply_lh(&psi).axpy(-1.0, f);
            let residual = norm_sq(&r).sqrt();
            if residual > RESIDUAL_TOL * fnorm {
                return Err(ChdbcError::SolverFailure {
                    residual,
                    threshold: RESIDUAL_TOL * fnorm,
                });
            }
        }
        Ok(psi)
    }

    /// Discrete H^{-1} norm `sqrt((f, L_h^{-1} f))`.
    pub fn hminus1_norm(&self, f: &BulkField) -> Result<f64> {
        let psi = self.solve_lh(f)?;
        Ok(inner(f, &psi).max(0.0).sqrt())
    }

    /// Solve `-D_x^2 psi = f` on a wall for the unique mean-zero psi.
    pub fn solve_dx2_gamma(&self, f: &BoundaryField) -> Result<BoundaryField> {
        let n = self.mesh.n;
        let mean = boundary_mean(f);
        if mean.abs() > MEAN_ZERO_TOL {
            return Err(ChdbcError::NonZeroMean { mean, tol: MEAN_ZERO_TOL });
        }
        let mut buf: Vec<Complex<f64>> = f.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
        self.fft_fwd.process(&mut buf);
        buf[0] = Complex::new(0.0, 0.0);
        for k in 1..n {
            buf[k] /= self.lambda[k];
        }
        self.fft_inv.process(&mut buf);
        let scale = 1.0 / n as f64;
        let psi = BoundaryField::from_data(
            &self.mesh,
            buf.iter().map(|c| c.re * scale).collect(),
        );
        let fnorm = boundary_inner(f, f).sqrt();
        if fnorm > 0.0 {
            let r = dx2_gamma(&psi).axpy(1.0, f); // -D_x^2 psi - f = -(D_x^2 psi + f)
            let residual = boundary_inner(&r, &r).sqrt();
            if residual > RESIDUAL_TOL * fnorm {
                return Err(ChdbcError::SolverFailure {
                    residual,
                    threshold: RESIDUAL_TOL * fnorm,
                });
            }
        }
        Ok(psi)
    }

    /// Wall H^{-1} norm `sqrt((f, (-D_x^2)^{-1} f)_Gamma)`.
    pub fn hminus1_gamma_norm(&self, f: &BoundaryField) -> Result<f64> {
        let psi = self.solve_dx2_gamma(f)?;
        Ok(boundary_inner(f, &psi).max(0.0).sqrt())
    }

    /// H^{-1} norm after removing the (tiny) weighted mean; returns the
    /// norm together with the removed mean's magnitude.
    pub fn hminus1_norm_centered(&self, f: &BulkField) -> Result<(f64, f64)> {
        let mean = weighted_mean(f);
        let centered = f.map(|v| v - mean);
        Ok((self.hminus1_norm(&centered)?, mean.abs()))
    }

    pub fn hminus1_gamma_norm_centered(&self, f: &BoundaryField) -> Result<(f64, f64)> {
        let mean = boundary_mean(f);
        let centered = f.map(|v| v - mean);
        Ok((self.hminus1_gamma_norm(&centered)?, mean.abs()))
    }
}
