//! Flory-Huggins free-energy densities and their convex/concave splitting.
//!
//! The logarithmic part I is convex and singular at phi = +-1; the
//! quadratic part carries the coefficient theta0 and is treated explicitly
//! by the schemes. Out-of-domain inputs are hard errors, never clamped:
//! positivity of the discrete solution is a theorem, not something to patch.

use crate::error::{ChdbcError, Result};

/// Physical model parameters.
#[derive(Debug, Clone, Copy)]
pub struct ModelParams {
    /// Interface width epsilon > 0.
    pub epsilon: f64,
    /// Surface diffusion kappa >= 0.
    pub kappa: f64,
    /// Quadratic coefficient theta0 >= 0 of the Flory-Huggins potential.
    pub theta0: f64,
}

impl ModelParams {
    pub fn new(epsilon: f64, kappa: f64, theta0: f64) -> ModelParams {
        assert!(epsilon > 0.0, "epsilon must be positive");
        assert!(kappa >= 0.0, "kappa must be nonnegative");
        assert!(theta0 >= 0.0, "theta0 must be nonnegative");
        ModelParams { epsilon, kappa, theta0 }
    }
}

fn check_domain(phi: f64) -> Result<()> {
    if phi > -1.0 && phi < 1.0 {
        Ok(())
    } else {
        Err(ChdbcError::DomainError { value: phi })
    }
}

/// `I(phi) = (1 + phi) ln(1 + phi) + (1 - phi) ln(1 - phi)`, via log1p
/// for accuracy as |phi| -> 1.
pub fn i_val(phi: f64) -> Result<f64> {
    check_domain(phi)?;
    Ok((1.0 + phi) * phi.ln_1p() + (1.0 - phi) * (-phi).ln_1p())
}

/// `I'(phi) = ln(1 + phi) - ln(1 - phi)`.
pub fn i_prime(phi: f64) -> Result<f64> {
    check_domain(phi)?;
    Ok(phi.ln_1p() - (-phi).ln_1p())
}

/// `I''(phi) = 2 / (1 - phi^2)`, strictly positive on the domain.
pub fn i_second(phi: f64) -> Result<f64> {
    check_domain(phi)?;
    Ok(2.0 / (1.0 - phi * phi))
}

/// Flory-Huggins density `I(phi) - theta0/2 phi^2`; the surface density G
/// takes the same form.
pub fn flory_huggins_f(phi: f64, theta0: f64) -> Result<f64> {
    Ok(i_val(phi)? - 0.5 * theta0 * phi * phi)
}

/// Polynomial double well `(phi^2 - 1)^2 / 4` (evaluation only).
pub fn polynomial_f(phi: f64) -> f64 {
    let q = phi * phi - 1.0;
    0.25 * q * q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetry_at_zero() {
        assert_eq!(i_val(0.0).unwrap(), 0.0);
        assert_eq!(i_prime(0.0).unwrap(), 0.0);
    }

    #[test]
    fn direct_evaluation_oracle() {
        // 1.5 ln 1.5 + 0.5 ln 0.5
        let expect = 1.5 * 1.5f64.ln() + 0.5 * 0.5f64.ln();
        assert!((i_val(0.5).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.26162407).abs() < 5e-8);
        assert!((i_prime(0.5).unwrap() - 3.0f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn flory_huggins_examples() {
        assert_eq!(flory_huggins_f(0.0, 3.0).unwrap(), 0.0);
        let v = flory_huggins_f(0.5, 3.0).unwrap();
        assert!((v - (i_val(0.5).unwrap() - 0.375)).abs() < 1e-15);
        // Evenness.
        for phi in [0.1, 0.45, 0.93] {
            let a = flory_huggins_f(phi, 3.0).unwrap();
            let b = flory_huggins_f(-phi, 3.0).unwrap();
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn polynomial_examples() {
        assert_eq!(polynomial_f(1.0), 0.0);
        assert_eq!(polynomial_f(-1.0), 0.0);
        assert_eq!(polynomial_f(0.0), 0.25);
        assert_eq!(polynomial_f(2.0), 2.25);
    }

    #[test]
    fn domain_errors() {
        assert!(i_val(1.0).is_err());
        assert!(i_prime(-1.0).is_err());
        assert!(flory_huggins_f(1.2, 1.0).is_err());
    }

    #[test]
    fn i_prime_finite_difference() {
        let d = 1e-5;
        for phi in [-0.9, 0.0, 0.9] {
            let fd = (i_val(phi + d).unwrap() - i_val(phi - d).unwrap()) / (2.0 * d);
            assert!((fd - i_prime(phi).unwrap()).abs() < 1e-8);
        }
    }

    #[test]
    fn i_prime_monotone() {
        // Convexity: (I'(a) - I'(b))(a - b) >= 0.
        let vals = [-0.99, -0.6, -0.2, 0.0, 0.3, 0.77, 0.999];
        for &a in &vals {
            for &b in &vals {
                let m = (i_prime(a).unwrap() - i_prime(b).unwrap()) * (a - b);
                assert!(m >= 0.0);
            }
        }
    }
}
