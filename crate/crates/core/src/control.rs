//! RIS phase design and BS/MS beamformers.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;

use crate::channel::steering;
use crate::error::{Error, Result};
use crate::numerics::{eig_hermitian, svd, ComplexMatrix, ComplexVector, ZERO};

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDesign {
    /// Unit-modulus RIS phases, first entry real-positive.
    pub omega_star: ComplexVector,
    /// `‖G(ω*)‖²_F`.
    pub objective: f64,
}

/// `C = [α(sin δ₁)ρ₁, …]`, `N_R × L_RB·L_MR`.
pub fn build_c(n_r: usize, delta: &[f64], rho_prod: &[Complex64]) -> Result<ComplexMatrix> {
    if delta.len() != rho_prod.len() {
        return Err(Error::Dimension(format!(
            "{} angle differences and {} gain products",
            delta.len(),
            rho_prod.len()
        )));
    }
    let mut c = ComplexMatrix::zeros(n_r, delta.len());
    for (i, (d, r)) in delta.iter().zip(rho_prod).enumerate() {
        c.set_column(i, &(steering(n_r, d.sin()) * *r));
    }
    Ok(c)
}

/// `‖G(ω)‖²_F = Σᵢ |ρᵢ ωᵀ α(sin δᵢ)|²`.
pub fn phase_objective(omega: &ComplexVector, delta: &[f64], rho_prod: &[Complex64]) -> f64 {
    delta
        .iter()
        .zip(rho_prod)
        .map(|(d, r)| (r * omega.dot(&steering(omega.len(), d.sin()))).norm_sqr())
        .sum()
}

/// Maximizes `‖G(ω)‖²_F` over the unit-modulus set by projecting the top
/// eigenvector of `CCᴴ`.
pub fn design_phases(n_r: usize, delta: &[f64], rho_prod: &[Complex64]) -> Result<PhaseDesign> {
    let c = build_c(n_r, delta, rho_prod)?;
    if c.iter().all(|z| *z == ZERO) {
        return Err(Error::Degenerate("all gain products are zero".into()));
    }
    let gram = &c * c.adjoint();
    let eig = eig_hermitian(&gram)?;
    let e = eig.eigenvectors.column(0);
    let phase0 = e[0].arg();
    let omega_star = ComplexVector::from_fn(n_r, |i, _| Complex64::from_polar(1.0, -(e[i].arg() - phase0)));
    let objective = phase_objective(&omega_star, delta, rho_prod);
    Ok(PhaseDesign { omega_star, objective })
}

/// Independent uniform phases on every element.
pub fn random_phases<R: Rng + ?Sized>(n: usize, rng: &mut R) -> ComplexVector {
    ComplexVector::from_fn(n, |_, _| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI)))
}

/// Leading left and right singular vectors `(w, f)` of `Ĥ`.
pub fn design_beamformers(h: &ComplexMatrix) -> Result<(ComplexVector, ComplexVector)> {
    if h.is_empty() || h.iter().all(|z| *z == ZERO) {
        return Err(Error::Degenerate("zero channel estimate".into()));
    }
    let s = svd(h);
    Ok((s.u.column(0).into_owned(), s.v.column(0).into_owned()))
}
