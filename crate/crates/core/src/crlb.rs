//! Fisher information and Cramér-Rao bounds for both estimation stages.
//!
//! Both stages observe `μ = s·vec(A H B)` with `H = Σ ρₗ α(sin φₗ) α(sin θₗ)ᴴ`
//! in white Gaussian noise. The real parameter vector is ordered
//! `(θ₁..θ_L, φ₁..φ_L, Re ρ₁..Re ρ_L, Im ρ₁..Im ρ_L)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::channel::{steering, steering_derivative, PathSet};
use crate::error::{Error, Result};
use crate::numerics::{vec, ComplexMatrix, ComplexVector, J};
use crate::sounding::{reflected_sequence, PhaseSchedule};

/// Relative eigenvalue floor below which the FIM is treated as singular.
const SINGULAR_RTOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamClass {
    Aod,
    Aoa,
    Gain,
}

/// Sensing operators of one stage: `μ = s·vec(left · H · right)`.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub left: ComplexMatrix,
    pub right: ComplexMatrix,
    pub scale: f64,
}

impl LinearModel {
    /// Stage 1: `left = W_H`, `right = X`.
    pub fn stage1(x: &ComplexMatrix, w_h: &ComplexMatrix, scale: f64) -> Self {
        Self {
            left: w_h.clone(),
            right: x.clone(),
            scale,
        }
    }

    /// Stage 2: `left = W_Bᴴ`, `right = Ũ`.
    pub fn stage2(u_tilde: &ComplexMatrix, w_b: &ComplexMatrix, scale: f64) -> Self {
        Self {
            left: w_b.adjoint(),
            right: u_tilde.clone(),
            scale,
        }
    }

    fn n_rx(&self) -> usize {
        self.left.ncols()
    }

    fn n_tx(&self) -> usize {
        self.right.nrows()
    }

    fn check(&self, p: &PathSet) -> Result<()> {
        if p.is_empty() {
            return Err(Error::Dimension("no paths".into()));
        }
        Ok(())
    }

    /// `s·vec(left · a bᴴ · right)`.
    fn column(&self, a: &ComplexVector, b: &ComplexVector) -> ComplexVector {
        let la = &self.left * a;
        let br = b.adjoint() * &self.right;
        vec(&(la * br)) * Complex64::new(self.scale, 0.0)
    }
}

/// Ũ built from the true MS-RIS channel.
pub fn u_tilde(schedule: &PhaseSchedule, h_mr: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    reflected_sequence(schedule, h_mr, x)
}

/// Noiseless observation mean.
pub fn mean(model: &LinearModel, p: &PathSet) -> Result<ComplexVector> {
    model.check(p)?;
    let mut mu = ComplexVector::zeros(model.left.nrows() * model.right.ncols());
    for l in 0..p.len() {
        let a = steering(model.n_rx(), p.aoa[l].sin());
        let b = steering(model.n_tx(), p.aod[l].sin());
        mu += model.column(&a, &b) * p.gains[l];
    }
    Ok(mu)
}

/// Stage-1 mean of `vec(Y_H)`.
pub fn mu1(p: &PathSet, x: &ComplexMatrix, w_h: &ComplexMatrix, scale: f64) -> Result<ComplexVector> {
    mean(&LinearModel::stage1(x, w_h, scale), p)
}

/// Stage-2 mean of `vec(Y)`.
pub fn mu2(p: &PathSet, u_tilde: &ComplexMatrix, w_b: &ComplexMatrix, scale: f64) -> Result<ComplexVector> {
    mean(&LinearModel::stage2(u_tilde, w_b, scale), p)
}

/// Analytic `∂μ/∂ζ`, one column per real parameter.
pub fn jacobian(model: &LinearModel, p: &PathSet) -> Result<ComplexMatrix> {
    model.check(p)?;
    let l = p.len();
    let mut jac = ComplexMatrix::zeros(model.left.nrows() * model.right.ncols(), 4 * l);
    for i in 0..l {
        let (th, ph, rho) = (p.aod[i], p.aoa[i], p.gains[i]);
        let a = steering(model.n_rx(), ph.sin());
        let b = steering(model.n_tx(), th.sin());
        // d/dθ of α(sin θ)ᴴ is (jπ cos θ · α̃)ᴴ.
        let db = steering_derivative(model.n_tx(), th.sin()) * Complex64::new(0.0, PI * th.cos());
        let da = steering_derivative(model.n_rx(), ph.sin()) * Complex64::new(0.0, PI * ph.cos());
        let v = model.column(&a, &b);
        jac.set_column(i, &(model.column(&a, &db) * rho));
        jac.set_column(l + i, &(model.column(&da, &b) * rho));
        jac.set_column(2 * l + i, &v);
        jac.set_column(3 * l + i, &(v * J));
    }
    Ok(jac)
}

pub fn jacobian_mu1(p: &PathSet, x: &ComplexMatrix, w_h: &ComplexMatrix, scale: f64) -> Result<ComplexMatrix> {
    jacobian(&LinearModel::stage1(x, w_h, scale), p)
}

pub fn jacobian_mu2(p: &PathSet, u_tilde: &ComplexMatrix, w_b: &ComplexMatrix, scale: f64) -> Result<ComplexMatrix> {
    jacobian(&LinearModel::stage2(u_tilde, w_b, scale), p)
}

fn perturbed(p: &PathSet, k: usize, h: f64) -> PathSet {
    let l = p.len();
    let mut q = p.clone();
    match k / l {
        0 => q.aod[k % l] += h,
        1 => q.aoa[k % l] += h,
        2 => q.gains[k % l] += Complex64::new(h, 0.0),
        _ => q.gains[k % l] += Complex64::new(0.0, h),
    }
    q
}

/// Central-difference `∂μ/∂ζ` with step `h`.
pub fn jacobian_fd(model: &LinearModel, p: &PathSet, h: f64) -> Result<ComplexMatrix> {
    model.check(p)?;
    let l = p.len();
    let rows = model.left.nrows() * model.right.ncols();
    let mut jac = ComplexMatrix::zeros(rows, 4 * l);
    let inv = Complex64::new(0.5 / h, 0.0);
    for k in 0..4 * l {
        let plus = mean(model, &perturbed(p, k, h))?;
        let minus = mean(model, &perturbed(p, k, -h))?;
        jac.set_column(k, &((plus - minus) * inv));
    }
    Ok(jac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FimReport {
    pub j: DMatrix<f64>,
    /// Diagonal of `J⁻¹`, or of its pseudo-inverse when `singular`.
    pub crlb_diag: Vec<f64>,
    pub param_labels: Vec<String>,
    pub singular: bool,
}

impl FimReport {
    pub fn paths(&self) -> usize {
        self.param_labels.len() / 4
    }
}

pub fn param_labels(l: usize) -> Vec<String> {
    let mut out = Vec::with_capacity(4 * l);
    for prefix in ["theta", "phi", "re_rho", "im_rho"] {
        for i in 0..l {
            out.push(format!("{prefix}{}", i + 1));
        }
    }
    out
}

/// `J = (2/σ²)·Re(JμᴴJμ)`.
pub fn fim_from_jacobian(jac: &ComplexMatrix, sigma2: f64) -> DMatrix<f64> {
    let g = jac.adjoint() * jac;
    let mut out = DMatrix::from_fn(g.nrows(), g.ncols(), |i, k| 2.0 / sigma2 * g[(i, k)].re);
    // Re(JᴴJ) is symmetric; remove rounding asymmetry.
    let t = out.transpose();
    out = (out + t) * 0.5;
    out
}

/// Inverts a real symmetric PSD matrix after Jacobi scaling; falls back to
/// the pseudo-inverse when the scaled spectrum has a null direction.
fn inverse_diagonal(j: &DMatrix<f64>) -> (Vec<f64>, bool) {
    let n = j.nrows();
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = j[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, k| d[i] * j[(i, k)] * d[k]);
    let eig = SymmetricEigen::new(scaled);
    let top = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    let floor = SINGULAR_RTOL * top;
    let singular = top <= 0.0 || eig.eigenvalues.iter().any(|&e| e <= floor);
    let diag = (0..n)
        .map(|i| {
            let mut s = 0.0;
            for (k, &e) in eig.eigenvalues.iter().enumerate() {
                if e > floor {
                    s += eig.eigenvectors[(i, k)].powi(2) / e;
                }
            }
            s * d[i] * d[i]
        })
        .collect();
    (diag, singular)
}

pub fn fim(model: &LinearModel, p: &PathSet, sigma2: f64) -> Result<FimReport> {
    if !(sigma2 > 0.0) {
        return Err(Error::Config(format!("noise power must be positive, got {sigma2}")));
    }
    let jac = jacobian(model, p)?;
    let j = fim_from_jacobian(&jac, sigma2);
    let (crlb_diag, singular) = inverse_diagonal(&j);
    Ok(FimReport {
        j,
        crlb_diag,
        param_labels: param_labels(p.len()),
        singular,
    })
}

pub fn fim_stage1(p: &PathSet, x: &ComplexMatrix, w_h: &ComplexMatrix, scale: f64, sigma2: f64) -> Result<FimReport> {
    fim(&LinearModel::stage1(x, w_h, scale), p, sigma2)
}

pub fn fim_stage2(
    p: &PathSet,
    u_tilde: &ComplexMatrix,
    w_b: &ComplexMatrix,
    scale: f64,
    sigma2: f64,
) -> Result<FimReport> {
    fim(&LinearModel::stage2(u_tilde, w_b, scale), p, sigma2)
}

/// Per-path angle bounds.
pub fn crlb_angle(report: &FimReport, which: ParamClass) -> Vec<f64> {
    let l = report.paths();
    match which {
        ParamClass::Aod => report.crlb_diag[..l].to_vec(),
        ParamClass::Aoa => report.crlb_diag[l..2 * l].to_vec(),
        ParamClass::Gain => crlb_gain(report),
    }
}

/// Per-path complex-gain bounds, `bound(Re ρ) + bound(Im ρ)`.
pub fn crlb_gain(report: &FimReport) -> Vec<f64> {
    let l = report.paths();
    (0..l)
        .map(|i| report.crlb_diag[2 * l + i] + report.crlb_diag[3 * l + i])
        .collect()
}

/// Path-averaged bound of one class, comparable to a per-trial `‖·‖²/L` error.
pub fn mean_bound(report: &FimReport, which: ParamClass) -> f64 {
    let b = crlb_angle(report, which);
    b.iter().sum::<f64>() / b.len() as f64
}
