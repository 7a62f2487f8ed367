//! The two time steppers — first-order convex splitting and stabilized
//! BDF2 — their Newton solver with positivity safeguard, the discrete
//! energies and the variational functionals they minimize.

mod linsolve;
mod newton;

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::elliptic::EllipticWorkspace;
use crate::error::{ChdbcError, Result};
use crate::grid::{
    boundary_inner, boundary_mean, boundary_norm_sq, dx2_gamma, dx_gamma_norm_sq, grad_norm_sq,
    inner, laplacian_with_ghosts, norm_sq, weighted_mean, BoundaryField, BulkField, Mesh, State,
};
use crate::potential::{i_prime, i_val, ModelParams};
use crate::sum::pairwise_sum_fn;

use newton::{ghost_rows, Iterate, NewtonProblem};

/// Per-step slack allowed on the (modified) energy dissipation inequality.
pub const DISSIPATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeKind {
    Cs1,
    Bdf2,
}

impl FromStr for SchemeKind {
    type Err = ChdbcError;
    fn from_str(s: &str) -> Result<SchemeKind> {
        match s {
            "cs1" => Ok(SchemeKind::Cs1),
            "bdf2" => Ok(SchemeKind::Bdf2),
            other => Err(ChdbcError::Config(format!(
                "unknown scheme '{other}' (expected cs1 or bdf2)"
            ))),
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::Cs1 => "cs1",
            SchemeKind::Bdf2 => "bdf2",
        })
    }
}

/// Time step and solver knobs shared by both schemes. The stabilizers
/// `stab_a`, `stab_b` only enter the BDF2 scheme; energy stability there
/// needs both at least theta0^2 / 16.
#[derive(Debug, Clone, Copy)]
pub struct SchemeParams {
    pub dt: f64,
    pub stab_a: f64,
    pub stab_b: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub safeguard_fraction: f64,
}

impl SchemeParams {
    pub fn new(dt: f64) -> SchemeParams {
        SchemeParams {
            dt,
            stab_a: 0.0,
            stab_b: 0.0,
            newton_tol: 1e-11,
            newton_max_iter: 50,
            safeguard_fraction: 0.9,
        }
    }

    /// BDF2 defaults: both stabilizers at the threshold theta0^2 / 16.
    pub fn with_default_stabilizers(dt: f64, theta0: f64) -> SchemeParams {
        let s = theta0 * theta0 / 16.0;
        SchemeParams { stab_a: s, stab_b: s, ..SchemeParams::new(dt) }
    }

    fn validate(&self) {
        assert!(self.dt > 0.0, "dt must be positive");
        assert!(self.stab_a >= 0.0 && self.stab_b >= 0.0, "stabilizers must be nonnegative");
        assert!(self.newton_tol > 0.0, "newton_tol must be positive");
        assert!(self.newton_max_iter > 0, "newton_max_iter must be positive");
        assert!(
            self.safeguard_fraction > 0.0 && self.safeguard_fraction < 1.0,
            "safeguard_fraction must lie in (0, 1)"
        );
    }
}

/// Wall normal derivatives of a phase field, produced by a step and
/// consumed by the next BDF2 step's stabilizer terms.
#[derive(Debug, Clone)]
pub struct WallDerivatives {
    pub bottom: BoundaryField,
    pub top: BoundaryField,
}

impl WallDerivatives {
    /// Zero normal derivatives (exact for y-symmetric initial data such as
    /// the presets; the generic fallback for arbitrary snapshots).
    pub fn zero(mesh: &Arc<Mesh>) -> WallDerivatives {
        WallDerivatives {
            bottom: BoundaryField::zeros(mesh),
            top: BoundaryField::zeros(mesh),
        }
    }
}

/// Everything a step reports besides the new state.
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub mu: BulkField,
    pub mu_bottom: BoundaryField,
    pub mu_top: BoundaryField,
    /// Wall normal derivatives of the new phase field at j = 0 and j = N.
    pub ghost_bottom: BoundaryField,
    pub ghost_top: BoundaryField,
    pub newton_iters: usize,
    pub final_residual: f64,
    /// Bulk weighted mean, bottom mean, top mean of the new state.
    pub masses: (f64, f64, f64),
    pub energy: f64,
    pub dissipation_residual: f64,
}

impl StepDiagnostics {
    pub fn wall_derivatives(&self) -> WallDerivatives {
        WallDerivatives {
            bottom: self.ghost_bottom.clone(),
            top: self.ghost_top.clone(),
        }
    }
}

/// The discrete free energy split into its summands.
#[derive(Debug, Clone, Copy)]
pub struct EnergyBreakdown {
    pub bulk_entropy: f64,
    pub surface_entropy: f64,
    pub quadratic: f64,
    pub bulk_gradient: f64,
    pub surface_gradient: f64,
    pub total: f64,
}

fn entropy_bulk(phi: &BulkField) -> Result<f64> {
    let n = phi.mesh().n;
    let mut vals = BulkField::zeros(phi.mesh());
    for j in 0..=n {
        for i in 0..n {
            vals.set(i, j, i_val(phi.get(i, j))?);
        }
    }
    Ok(weighted_mean(&vals))
}

fn entropy_boundary(phi: &BoundaryField) -> Result<f64> {
    let mut vals = BoundaryField::zeros(phi.mesh());
    for i in 0..phi.mesh().n {
        vals.set(i, i_val(phi.get(i))?);
    }
    Ok(boundary_mean(&vals))
}

/// The discrete free energy E_h: logarithmic entropy in the bulk and on
/// both walls, the destabilizing quadratic part, and positive-definite
/// gradient energies (epsilon^2/2 in the bulk, kappa epsilon/2 on the walls).
pub fn energy_eh(s: &State, m: &ModelParams) -> Result<EnergyBreakdown> {
    let bulk_entropy = entropy_bulk(&s.phi)?;
    let surface_entropy = entropy_boundary(&s.phi_bottom)? + entropy_boundary(&s.phi_top)?;
    let quadratic = -0.5
        * m.theta0
        * (norm_sq(&s.phi) + boundary_norm_sq(&s.phi_bottom) + boundary_norm_sq(&s.phi_top));
    let bulk_gradient = 0.5 * m.epsilon * m.epsilon * grad_norm_sq(&s.phi);
    let surface_gradient = 0.5
        * m.kappa
        * m.epsilon
        * (dx_gamma_norm_sq(&s.phi_bottom) + dx_gamma_norm_sq(&s.phi_top));
    let total = bulk_entropy + surface_entropy + quadratic + bulk_gradient + surface_gradient;
    Ok(EnergyBreakdown {
        bulk_entropy,
        surface_entropy,
        quadratic,
        bulk_gradient,
        surface_gradient,
        total,
    })
}

/// Time stepper bound to one mesh, model and parameter set. Owns the FFT
/// workspace used by the H^{-1} norms of the modified energy.
pub struct Stepper {
    mesh: Arc<Mesh>,
    pub model: ModelParams,
    pub params: SchemeParams,
    elliptic: EllipticWorkspace,
}

impl Stepper {
    pub fn new(mesh: &Arc<Mesh>, model: ModelParams, params: SchemeParams) -> Stepper {
        params.validate();
        Stepper {
            mesh: Arc::clone(mesh),
            model,
            params,
            elliptic: EllipticWorkspace::new(mesh),
        }
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn elliptic(&self) -> &EllipticWorkspace {
        &self.elliptic
    }

    fn prime_bulk(f: &BulkField) -> Result<BulkField> {
        let n = f.mesh().n;
        let mut out = BulkField::zeros(f.mesh());
        for j in 0..=n {
            for i in 0..n {
                out.set(i, j, i_prime(f.get(i, j))?);
            }
        }
        Ok(out)
    }

    fn prime_boundary(f: &BoundaryField) -> Result<BoundaryField> {
        let mut out = BoundaryField::zeros(f.mesh());
        for i in 0..f.mesh().n {
            out.set(i, i_prime(f.get(i))?);
        }
        Ok(out)
    }

    /// Initial iterate with the potential equations satisfied exactly for
    /// the supplied phi and wall derivative guesses, so the initial
    /// residual lives in the evolution rows only.
    fn consistent_init(
        &self,
        problem: &NewtonProblem,
        phi: BulkField,
        g_bottom: BoundaryField,
        g_top: BoundaryField,
    ) -> Result<Iterate> {
        let (gb, gt) = ghost_rows(&phi, &g_bottom, &g_top);
        let lap = laplacian_with_ghosts(&phi, &gb, &gt);
        let mu = Self::prime_bulk(&phi)?
            .axpy(-problem.c1, &lap)
            .axpy(-1.0, &problem.k_pot);
        let pb = phi.trace(0);
        let pt = phi.trace(self.mesh.n);
        let mu_bottom = Self::prime_boundary(&pb)?
            .axpy(-problem.cgam, &dx2_gamma(&pb))
            .axpy(-problem.cg, &g_bottom)
            .axpy(-1.0, &problem.k_surf_bottom);
        let mu_top = Self::prime_boundary(&pt)?
            .axpy(-problem.cgam, &dx2_gamma(&pt))
            .axpy(problem.cg, &g_top)
            .axpy(-1.0, &problem.k_surf_top);
        Ok(Iterate { phi, mu, mu_bottom, mu_top, g_bottom, g_top })
    }

    fn run_newton(&self, problem: &NewtonProblem, init: Iterate, s_n: &State) -> Result<(Iterate, usize, f64)> {
        let tol = self.params.newton_tol * norm_sq(&s_n.phi).sqrt().max(1.0);
        problem.solve(
            init,
            tol,
            self.params.newton_max_iter,
            self.params.safeguard_fraction,
        )
    }

    fn check_masses(&self, new: &State, old: &State) -> Result<()> {
        let a = new.masses();
        let b = old.masses();
        let tol = 10.0 * self.params.newton_tol;
        for (label, d) in [
            ("bulk mass", a.0 - b.0),
            ("bottom mass", a.1 - b.1),
            ("top mass", a.2 - b.2),
        ] {
            if d.abs() > tol {
                return Err(ChdbcError::StructureViolation {
                    step: 0,
                    what: format!("{label} drifted by {d:e} (tolerance {tol:e})"),
                });
            }
        }
        Ok(())
    }

    /// One step of the first-order convex-splitting scheme.
    pub fn step_cs1(&self, s_n: &State) -> Result<(State, StepDiagnostics)> {
        let m = &self.model;
        let dt = self.params.dt;
        let problem = NewtonProblem {
            mesh: Arc::clone(&self.mesh),
            ct: 1.0 / dt,
            c1: m.epsilon * m.epsilon,
            cgam: m.kappa * m.epsilon,
            cg: m.epsilon * m.epsilon,
            r_evo: s_n.phi.map(|v| v / dt),
            k_pot: s_n.phi.map(|v| m.theta0 * v),
            r_surf_bottom: s_n.phi_bottom.map(|v| v / dt),
            r_surf_top: s_n.phi_top.map(|v| v / dt),
            k_surf_bottom: s_n.phi_bottom.map(|v| m.theta0 * v),
            k_surf_top: s_n.phi_top.map(|v| m.theta0 * v),
        };
        let init = self.consistent_init(
            &problem,
            s_n.phi.clone(),
            BoundaryField::zeros(&self.mesh),
            BoundaryField::zeros(&self.mesh),
        )?;
        let (sol, iters, rnorm) = self.run_newton(&problem, init, s_n)?;

        let new_state = State::from_bulk(sol.phi.clone());
        self.check_masses(&new_state, s_n)?;
        let e_new = energy_eh(&new_state, m)?.total;
        let e_old = energy_eh(s_n, m)?.total;
        let rate = grad_norm_sq(&sol.mu)
            + dx_gamma_norm_sq(&sol.mu_bottom)
            + dx_gamma_norm_sq(&sol.mu_top);
        let dissipation_residual = e_new + dt * rate - e_old;
        if dissipation_residual > DISSIPATION_TOL {
            return Err(ChdbcError::StructureViolation {
                step: 0,
                what: format!("energy dissipation violated by {dissipation_residual:e}"),
            });
        }
        let diag = StepDiagnostics {
            mu: sol.mu,
            mu_bottom: sol.mu_bottom,
            mu_top: sol.mu_top,
            ghost_bottom: sol.g_bottom,
            ghost_top: sol.g_top,
            newton_iters: iters,
            final_residual: rnorm,
            masses: new_state.masses(),
            energy: e_new,
            dissipation_residual,
        };
        Ok((new_state, diag))
    }

    /// One step of the stabilized BDF2 scheme. `wall_n` carries the wall
    /// normal derivatives of `s_n` produced by the previous step
    /// (`StepDiagnostics::wall_derivatives`); the stabilizer terms need them.
    pub fn step_bdf2(
        &self,
        s_n: &State,
        s_nm1: &State,
        wall_n: &WallDerivatives,
    ) -> Result<(State, StepDiagnostics)> {
        let m = &self.model;
        let dt = self.params.dt;
        let adt = self.params.stab_a * dt;
        let bdt = self.params.stab_b * dt;
        let hat = s_n.phi.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi);
        let hat_b = s_n.phi_bottom.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi_bottom);
        let hat_t = s_n.phi_top.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi_top);
        // Delta_h phi^n with the previous step's wall derivative data.
        let (gn_b, gn_t) = ghost_rows(&s_n.phi, &wall_n.bottom, &wall_n.top);
        let lap_n = laplacian_with_ghosts(&s_n.phi, &gn_b, &gn_t);

        let problem = NewtonProblem {
            mesh: Arc::clone(&self.mesh),
            ct: 1.5 / dt,
            c1: m.epsilon * m.epsilon + adt,
            cgam: m.kappa * m.epsilon + bdt,
            cg: m.epsilon * m.epsilon + adt,
            r_evo: s_n.phi.map(|v| 2.0 * v / dt).axpy(-0.5 / dt, &s_nm1.phi),
            k_pot: hat.map(|v| m.theta0 * v).axpy(-adt, &lap_n),
            r_surf_bottom: s_n
                .phi_bottom
                .map(|v| 2.0 * v / dt)
                .axpy(-0.5 / dt, &s_nm1.phi_bottom),
            r_surf_top: s_n.phi_top.map(|v| 2.0 * v / dt).axpy(-0.5 / dt, &s_nm1.phi_top),
            k_surf_bottom: hat_b
                .map(|v| m.theta0 * v)
                .axpy(-bdt, &dx2_gamma(&s_n.phi_bottom))
                .axpy(-adt, &wall_n.bottom),
            k_surf_top: hat_t
                .map(|v| m.theta0 * v)
                .axpy(-bdt, &dx2_gamma(&s_n.phi_top))
                .axpy(adt, &wall_n.top),
        };

        // Initial iterate: the extrapolation, safeguarded into (-1, 1).
        let dphi = hat.axpy(-1.0, &s_n.phi);
        let mut lam: f64 = 1.0;
        for (v, d) in s_n.phi.data().iter().zip(dphi.data()) {
            if *d > 0.0 {
                lam = lam.min(self.params.safeguard_fraction * (1.0 - v) / d);
            } else if *d < 0.0 {
                lam = lam.min(self.params.safeguard_fraction * (-1.0 - v) / d);
            }
        }
        let phi0 = s_n.phi.axpy(lam, &dphi);
        let init =
            self.consistent_init(&problem, phi0, wall_n.bottom.clone(), wall_n.top.clone())?;
        let (sol, iters, rnorm) = self.run_newton(&problem, init, s_n)?;

        let new_state = State::from_bulk(sol.phi.clone());
        self.check_masses(&new_state, s_n)?;
        let e_new = self.modified_energy(&new_state, s_n)?;
        let e_old = self.modified_energy(s_n, s_nm1)?;
        let dissipation_residual = e_new - e_old;
        let stable = self.params.stab_a >= m.theta0 * m.theta0 / 16.0
            && self.params.stab_b >= m.theta0 * m.theta0 / 16.0;
        if stable && dissipation_residual > DISSIPATION_TOL {
            return Err(ChdbcError::StructureViolation {
                step: 0,
                what: format!("modified energy dissipation violated by {dissipation_residual:e}"),
            });
        }
        let diag = StepDiagnostics {
            mu: sol.mu,
            mu_bottom: sol.mu_bottom,
            mu_top: sol.mu_top,
            ghost_bottom: sol.g_bottom,
            ghost_top: sol.g_top,
            newton_iters: iters,
            final_residual: rnorm,
            masses: new_state.masses(),
            energy: energy_eh(&new_state, m)?.total,
            dissipation_residual,
        };
        Ok((new_state, diag))
    }

    /// The stabilized energy E~_h(phi^{n+1}, phi^n): E_h plus nonnegative
    /// H^{-1} and l2 penalties on the increment.
    pub fn modified_energy(&self, s_np1: &State, s_n: &State) -> Result<f64> {
        let dt = self.params.dt;
        let d = s_np1.phi.axpy(-1.0, &s_n.phi);
        let db = s_np1.phi_bottom.axpy(-1.0, &s_n.phi_bottom);
        let dtp = s_np1.phi_top.axpy(-1.0, &s_n.phi_top);
        let (nb, _) = self.elliptic.hminus1_norm_centered(&d)?;
        let (nbb, _) = self.elliptic.hminus1_gamma_norm_centered(&db)?;
        let (nbt, _) = self.elliptic.hminus1_gamma_norm_centered(&dtp)?;
        let eh = energy_eh(s_np1, &self.model)?.total;
        Ok(eh
            + (nb * nb + nbb * nbb + nbt * nbt) / (4.0 * dt)
            + 0.5
                * self.model.theta0
                * (norm_sq(&d) + boundary_norm_sq(&db) + boundary_norm_sq(&dtp)))
    }

    fn check_admissible(&self, s: &State, s_n: &State) -> Result<()> {
        let a = s.masses();
        let b = s_n.masses();
        for d in [a.0 - b.0, a.1 - b.1, a.2 - b.2] {
            if d.abs() > 1e-9 {
                return Err(ChdbcError::NonZeroMean { mean: d, tol: 1e-9 });
            }
        }
        Ok(())
    }

    /// The convex functional whose unique stationary point in the
    /// admissible set is the convex-splitting step from `s_n`.
    pub fn functional_fhn(&self, s: &State, s_n: &State) -> Result<f64> {
        self.check_admissible(s, s_n)?;
        let m = &self.model;
        let dt = self.params.dt;
        let d = s.phi.axpy(-1.0, &s_n.phi);
        let db = s.phi_bottom.axpy(-1.0, &s_n.phi_bottom);
        let dtp = s.phi_top.axpy(-1.0, &s_n.phi_top);
        let (nb, _) = self.elliptic.hminus1_norm_centered(&d)?;
        let (nbb, _) = self.elliptic.hminus1_gamma_norm_centered(&db)?;
        let (nbt, _) = self.elliptic.hminus1_gamma_norm_centered(&dtp)?;
        Ok((nb * nb + nbb * nbb + nbt * nbt) / (2.0 * dt)
            + entropy_bulk(&s.phi)?
            + entropy_boundary(&s.phi_bottom)?
            + entropy_boundary(&s.phi_top)?
            + 0.5 * m.epsilon * m.epsilon * grad_norm_sq(&s.phi)
            + 0.5
                * m.kappa
                * m.epsilon
                * (dx_gamma_norm_sq(&s.phi_bottom) + dx_gamma_norm_sq(&s.phi_top))
            - m.theta0
                * (inner(&s_n.phi, &s.phi)
                    + boundary_inner(&s_n.phi_bottom, &s.phi_bottom)
                    + boundary_inner(&s_n.phi_top, &s.phi_top)))
    }

    /// The analogous functional for the BDF2 step.
    pub fn functional_jhn(&self, s: &State, s_n: &State, s_nm1: &State) -> Result<f64> {
        self.check_admissible(s, s_n)?;
        let m = &self.model;
        let dt = self.params.dt;
        let w = s
            .phi
            .map(|v| 3.0 * v)
            .axpy(-4.0, &s_n.phi)
            .axpy(1.0, &s_nm1.phi);
        let wb = s
            .phi_bottom
            .map(|v| 3.0 * v)
            .axpy(-4.0, &s_n.phi_bottom)
            .axpy(1.0, &s_nm1.phi_bottom);
        let wt = s
            .phi_top
            .map(|v| 3.0 * v)
            .axpy(-4.0, &s_n.phi_top)
            .axpy(1.0, &s_nm1.phi_top);
        let (nb, _) = self.elliptic.hminus1_norm_centered(&w)?;
        let (nbb, _) = self.elliptic.hminus1_gamma_norm_centered(&wb)?;
        let (nbt, _) = self.elliptic.hminus1_gamma_norm_centered(&wt)?;
        let d = s.phi.axpy(-1.0, &s_n.phi);
        let db = s.phi_bottom.axpy(-1.0, &s_n.phi_bottom);
        let dtp = s.phi_top.axpy(-1.0, &s_n.phi_top);
        let hat = s_n.phi.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi);
        let hat_b = s_n.phi_bottom.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi_bottom);
        let hat_t = s_n.phi_top.map(|v| 2.0 * v).axpy(-1.0, &s_nm1.phi_top);
        Ok((nb * nb + nbb * nbb + nbt * nbt) / (12.0 * dt)
            + entropy_bulk(&s.phi)?
            + entropy_boundary(&s.phi_bottom)?
            + entropy_boundary(&s.phi_top)?
            + 0.5 * m.epsilon * m.epsilon * grad_norm_sq(&s.phi)
            + 0.5 * self.params.stab_a * dt * grad_norm_sq(&d)
            + 0.5
                * m.kappa
                * m.epsilon
                * (dx_gamma_norm_sq(&s.phi_bottom) + dx_gamma_norm_sq(&s.phi_top))
            + 0.5 * self.params.stab_b * dt * (dx_gamma_norm_sq(&db) + dx_gamma_norm_sq(&dtp))
            - m.theta0
                * (inner(&hat, &s.phi)
                    + boundary_inner(&hat_b, &s.phi_bottom)
                    + boundary_inner(&hat_t, &s.phi_top)))
    }

    /// A fixed set of admissible probe directions: zero mean on each wall
    /// row, zero bulk weighted mean, unit Euclidean size.
    fn probe_directions(&self) -> Vec<BulkField> {
        let n = self.mesh.n;
        (0..5u64)
            .map(|k| {
                let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9 + k);
                let mut v = BulkField::zeros(&self.mesh);
                for j in 0..=n {
                    for i in 0..n {
                        v.set(i, j, rng.gen_range(-1.0..1.0));
                    }
                }
                // Center the wall rows, then fix the bulk mean using the
                // interior rows only (their weights are all 1).
                for j in [0, n] {
                    let mean = boundary_mean(&v.trace(j));
                    for i in 0..n {
                        v.set(i, j, v.get(i, j) - mean);
                    }
                }
                let c = weighted_mean(&v) * n as f64 / (n as f64 - 1.0);
                for j in 1..n {
                    for i in 0..n {
                        v.set(i, j, v.get(i, j) - c);
                    }
                }
                let scale =
                    1.0 / pairwise_sum_fn(v.data().len(), |idx| v.data()[idx] * v.data()[idx]).sqrt();
                v.map(|x| x * scale)
            })
            .collect()
    }

    fn gradcheck(&self, s: &State, f: impl Fn(&State) -> Result<f64>) -> Result<f64> {
        let margin = s.positivity_margin();
        let delta = (1e-5_f64).min(margin / 4.0);
        let mut worst: f64 = 0.0;
        for v in self.probe_directions() {
            let fp = f(&State::from_bulk(s.phi.axpy(delta, &v)))?;
            let fm = f(&State::from_bulk(s.phi.axpy(-delta, &v)))?;
            worst = worst.max(((fp - fm) / (2.0 * delta)).abs());
        }
        Ok(worst)
    }

    /// Largest central-difference directional derivative of F_h^n over the
    /// probe set; near zero exactly when `s` is the CS1 step from `s_n`.
    pub fn functional_fhn_gradcheck(&self, s: &State, s_n: &State) -> Result<f64> {
        self.check_admissible(s, s_n)?;
        self.gradcheck(s, |c| self.functional_fhn(c, s_n))
    }

    /// BDF2 analogue, vanishing at the step from (s_n, s_nm1).
    pub fn functional_jhn_gradcheck(&self, s: &State, s_n: &State, s_nm1: &State) -> Result<f64> {
        self.check_admissible(s, s_n)?;
        self.gradcheck(s, |c| self.functional_jhn(c, s_n, s_nm1))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn lambda1(h: f64) -> f64 {
        (2.0 - 2.0 * (2.0 * PI * h).cos()) / (h * h)
    }

    fn model() -> ModelParams {
        ModelParams::new(0.1, 1.0, 3.0)
    }

    fn cosine_state(mesh: &Arc<Mesh>, a: f64) -> State {
        State::from_bulk(BulkField::from_fn(mesh, |x, y| {
            a * (2.0 * PI * x).cos() * (PI * y).cos()
        }))
    }

    #[test]
    fn energy_of_zero_state() {
        let mesh = Mesh::new(8);
        let s = State::from_bulk(BulkField::zeros(&mesh));
        let e = energy_eh(&s, &model()).unwrap();
        assert_eq!(e.total, 0.0);
        assert_eq!(e.bulk_entropy, 0.0);
        assert_eq!(e.quadratic, 0.0);
    }

    #[test]
    fn energy_of_constant_half() {
        // I(0.5) = 1.5 ln 1.5 + 0.5 ln 0.5; quadratic = -1.5 * 0.75.
        let mesh = Mesh::new(8);
        let s = State::from_bulk(BulkField::from_fn(&mesh, |_, _| 0.5));
        let e = energy_eh(&s, &model()).unwrap();
        let i_half = 1.5 * 1.5_f64.ln() + 0.5 * 0.5_f64.ln();
        assert!((e.bulk_entropy - i_half).abs() < 1e-14);
        assert!((e.surface_entropy - 2.0 * i_half).abs() < 1e-14);
        assert!((e.quadratic + 1.125).abs() < 1e-14);
        assert_eq!(e.bulk_gradient, 0.0);
        assert!((e.total - (3.0 * i_half - 1.125)).abs() < 1e-13);
        assert!((e.total + 0.3401268).abs() < 1e-6);
    }

    #[test]
    fn energy_gradient_parts_of_cosine() {
        let mesh = Mesh::new(8);
        let m = model();
        let s = State::from_bulk(BulkField::from_fn(&mesh, |x, _| 0.5 * (2.0 * PI * x).cos()));
        let e = energy_eh(&s, &m).unwrap();
        let lam = lambda1(mesh.h);
        // grad_norm_sq(a cos) = a^2 lam / 2, same on each wall.
        let expect_bulk = 0.5 * m.epsilon * m.epsilon * 0.25 * lam / 2.0;
        let expect_surf = 0.5 * m.kappa * m.epsilon * 2.0 * 0.25 * lam / 2.0;
        assert!((e.bulk_gradient - expect_bulk).abs() < 1e-12);
        assert!((e.surface_gradient - expect_surf).abs() < 1e-12);
    }

    #[test]
    fn cs1_constant_is_fixed_point() {
        let mesh = Mesh::new(8);
        let m = model();
        let stepper = Stepper::new(&mesh, m, SchemeParams::new(1e-3));
        let s0 = State::from_bulk(BulkField::from_fn(&mesh, |_, _| 0.3));
        let (s1, diag) = stepper.step_cs1(&s0).unwrap();
        for v in s1.phi.data() {
            assert_eq!(*v, 0.3);
        }
        assert_eq!(diag.newton_iters, 0);
        assert_eq!(diag.dissipation_residual, 0.0);
        let expect_mu = i_prime(0.3).unwrap() - 3.0 * 0.3;
        for v in diag.mu.data() {
            assert!((v - expect_mu).abs() < 1e-12);
        }
    }

    #[test]
    fn cs1_structure_on_cosine() {
        let mesh = Mesh::new(8);
        let stepper = Stepper::new(&mesh, model(), SchemeParams::new(1e-3));
        let s0 = cosine_state(&mesh, 0.3);
        let m0 = s0.masses();
        let mut s = s0.clone();
        let mut last_energy = energy_eh(&s0, &model()).unwrap().total;
        for _ in 0..5 {
            let (next, diag) = stepper.step_cs1(&s).unwrap();
            assert!(diag.final_residual <= 1e-11);
            assert!(diag.dissipation_residual <= DISSIPATION_TOL);
            assert!(diag.energy <= last_energy + DISSIPATION_TOL);
            last_energy = diag.energy;
            assert!(next.positivity_margin() > 0.0);
            let mm = next.masses();
            assert!((mm.0 - m0.0).abs() < 1e-10);
            assert!((mm.1 - m0.1).abs() < 1e-10);
            assert!((mm.2 - m0.2).abs() < 1e-10);
            s = next;
        }
    }

    #[test]
    fn cs1_output_is_stationary_point_of_fhn() {
        let mesh = Mesh::new(8);
        let stepper = Stepper::new(&mesh, model(), SchemeParams::new(1e-3));
        let s0 = cosine_state(&mesh, 0.3);
        let (s1, _) = stepper.step_cs1(&s0).unwrap();
        // Minimizer property.
        let f_sol = stepper.functional_fhn(&s1, &s0).unwrap();
        let f_start = stepper.functional_fhn(&s0, &s0).unwrap();
        assert!(f_sol <= f_start);
        // Gradient nearly vanishes at the solution and not at the start.
        let g_sol = stepper.functional_fhn_gradcheck(&s1, &s0).unwrap();
        let g_start = stepper.functional_fhn_gradcheck(&s0, &s0).unwrap();
        assert!(g_sol <= 1e-6, "gradient residual at solution: {g_sol:e}");
        assert!(g_start > g_sol);
    }

    #[test]
    fn bdf2_constant_is_fixed_point() {
        let mesh = Mesh::new(8);
        let m = model();
        let stepper = Stepper::new(&mesh, m, SchemeParams::with_default_stabilizers(1e-3, 3.0));
        let s0 = State::from_bulk(BulkField::from_fn(&mesh, |_, _| -0.4));
        let walls = WallDerivatives::zero(&mesh);
        let (s1, diag) = stepper.step_bdf2(&s0, &s0, &walls).unwrap();
        for v in s1.phi.data() {
            assert_eq!(*v, -0.4);
        }
        assert_eq!(diag.newton_iters, 0);
    }

    #[test]
    fn bdf2_modified_energy_monotone() {
        let mesh = Mesh::new(8);
        let m = model();
        let stepper = Stepper::new(&mesh, m, SchemeParams::with_default_stabilizers(1e-3, 3.0));
        let s0 = cosine_state(&mesh, 0.3);
        let (s1, d1) = stepper.step_cs1(&s0).unwrap();
        let mut prev = s0;
        let mut cur = s1;
        let mut walls = d1.wall_derivatives();
        let mut last = stepper.modified_energy(&cur, &prev).unwrap();
        for _ in 0..8 {
            let (next, diag) = stepper.step_bdf2(&cur, &prev, &walls).unwrap();
            assert!(diag.dissipation_residual <= DISSIPATION_TOL);
            let me = stepper.modified_energy(&next, &cur).unwrap();
            assert!(me <= last + DISSIPATION_TOL);
            last = me;
            walls = diag.wall_derivatives();
            prev = cur;
            cur = next;
        }
    }

    #[test]
    fn bdf2_output_is_stationary_point_of_jhn() {
        let mesh = Mesh::new(8);
        let stepper =
            Stepper::new(&mesh, model(), SchemeParams::with_default_stabilizers(1e-3, 3.0));
        let s0 = cosine_state(&mesh, 0.3);
        let (s1, d1) = stepper.step_cs1(&s0).unwrap();
        let (s2, _) = stepper.step_bdf2(&s1, &s0, &d1.wall_derivatives()).unwrap();
        let g_sol = stepper.functional_jhn_gradcheck(&s2, &s1, &s0).unwrap();
        assert!(g_sol <= 1e-6, "gradient residual at BDF2 solution: {g_sol:e}");
        let j_sol = stepper.functional_jhn(&s2, &s1, &s0).unwrap();
        let j_alt = stepper.functional_jhn(&s1, &s1, &s0).unwrap();
        assert!(j_sol <= j_alt);
    }

    #[test]
    fn modified_energy_examples() {
        let mesh = Mesh::new(8);
        let m = model();
        let dt = 1e-3;
        let stepper = Stepper::new(&mesh, m, SchemeParams::new(dt));
        let s = cosine_state(&mesh, 0.3);
        // Equal states: the increments vanish.
        let me = stepper.modified_energy(&s, &s).unwrap();
        let eh = energy_eh(&s, &m).unwrap().total;
        assert!((me - eh).abs() < 1e-13);
        // Eigenfunction increment with closed-form norms.
        let base = State::from_bulk(BulkField::from_fn(&mesh, |x, _| 0.2 * (2.0 * PI * x).cos()));
        let bump = BulkField::from_fn(&mesh, |x, _| 0.01 * (2.0 * PI * x).cos());
        let next = State::from_bulk(base.phi.axpy(1.0, &bump));
        let lam = lambda1(mesh.h);
        let hm1 = 1e-4 * 0.5 / lam;
        let l2 = 1e-4 * 0.5;
        let expect = energy_eh(&next, &m).unwrap().total
            + 3.0 * hm1 / (4.0 * dt)
            + 0.5 * 3.0 * 3.0 * l2;
        let got = stepper.modified_energy(&next, &base).unwrap();
        assert!((got - expect).abs() < 1e-10 * expect.abs().max(1.0));
        // Always at least the plain energy.
        assert!(got >= energy_eh(&next, &m).unwrap().total);
    }

    #[test]
    fn scheme_kind_parsing() {
        assert_eq!("cs1".parse::<SchemeKind>().unwrap(), SchemeKind::Cs1);
        assert_eq!("bdf2".parse::<SchemeKind>().unwrap(), SchemeKind::Bdf2);
        assert!("cn2".parse::<SchemeKind>().is_err());
        assert_eq!(SchemeKind::Cs1.to_string(), "cs1");
    }
}
