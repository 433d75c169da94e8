//! Two-stage channel estimation.
//!
//! Stage 1 recovers the MS-RIS channel from the active-element observations;
//! stage 2 recovers the RIS-BS channel from the BS observations, treating the
//! stage-1 reconstruction as exact. In each stage the ANM certificates give
//! the spatial frequencies via root-MUSIC, least squares gives the gains, and
//! the channel is rebuilt from the parameters.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::anm::{self, AnmProblem, AnmSolution, Residuals, SolverOptions, TraceRow, WarmStart};
use crate::channel::{steering, synth_channel, PathSet};
use crate::error::{Error, Result, Stage};
use crate::numerics::{
    condition_number, eig_hermitian, pinv, polynomial_roots, vec, ComplexMatrix, ComplexVector, ZERO,
};
use crate::sounding::{reflected_sequence, PhaseSchedule, SoundingConfig, SoundingRecord};

/// Largest model order for which exhaustive permutation search is used.
const MAX_BRUTE_FORCE_ORDER: usize = 8;

/// Non-fatal conditions met while extracting frequencies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Warning {
    /// No gap between the signal and noise eigenvalues.
    NoEigenGap,
    /// The selected roots are far from the unit circle.
    RootsOffCircle,
    /// The certificate is identically zero; estimates are set to zero.
    ZeroCertificate,
    /// Estimated paths coincide; gains are the minimum-norm fit.
    IllConditionedGains,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RootMusic {
    /// Ascending spatial frequencies in `[0, 1]`.
    pub freqs: Vec<f64>,
    pub warnings: Vec<Warning>,
}

impl RootMusic {
    pub fn is_zero(&self) -> bool {
        self.warnings.contains(&Warning::ZeroCertificate)
    }
}

/// Pseudo-spectrum `P(f) = α(f)ᴴ Pₙ α(f) = Σₖ cₖ e^{jπkf}` and its first two
/// derivatives, with `c` holding the superdiagonal sums `c₀..c_{n-1}`.
fn pseudo_spectrum(c: &[Complex64], f: f64) -> (f64, f64, f64) {
    let mut p = c[0].re;
    let mut d1 = 0.0;
    let mut d2 = 0.0;
    for (k, ck) in c.iter().enumerate().skip(1) {
        let w = PI * k as f64;
        let e = ck * Complex64::from_polar(1.0, w * f);
        p += 2.0 * e.re;
        d1 += -2.0 * w * e.im;
        d2 += -2.0 * w * w * e.re;
    }
    (p, d1, d2)
}

/// Newton refinement of a near-unit-circle root on the pseudo-spectrum.
/// Double roots on the circle lose half their digits in the companion
/// eigenvalue solve; the spectrum minimum recovers them.
fn polish(c: &[Complex64], mut f: f64, n: usize) -> f64 {
    let max_step = 0.5 / n as f64;
    let start = f;
    let (mut p, _, _) = pseudo_spectrum(c, f);
    for _ in 0..30 {
        let (_, d1, d2) = pseudo_spectrum(c, f);
        if d2 <= 0.0 {
            break;
        }
        let step = d1 / d2;
        let cand = f - step;
        if (cand - start).abs() > max_step {
            break;
        }
        let (pc, _, _) = pseudo_spectrum(c, cand);
        if pc > p {
            break;
        }
        f = cand;
        p = pc;
        if step.abs() < 1e-15 {
            break;
        }
    }
    f
}

fn wrap_frequency(f: f64) -> f64 {
    let f = if f < -0.5 { f + 2.0 } else { f };
    f.clamp(0.0, 1.0)
}

/// Root-MUSIC on a PSD Toeplitz certificate for `l` frequencies, returned
/// ascending in `[0, 1]`, the spatial-frequency range of angles in `[0, π)`.
pub fn freqs_from_toeplitz(t: &ComplexMatrix, l: usize) -> Result<RootMusic> {
    let n = t.nrows();
    if l >= n {
        return Err(Error::Order { order: l, dim: n });
    }
    let mut warnings = Vec::new();
    if l == 0 {
        return Ok(RootMusic { freqs: Vec::new(), warnings });
    }
    if t.iter().all(|z| *z == ZERO) {
        warnings.push(Warning::ZeroCertificate);
        return Ok(RootMusic {
            freqs: vec![0.0; l],
            warnings,
        });
    }
    let eig = eig_hermitian(t)?;
    let ev = &eig.eigenvalues;
    if ev[l - 1] - ev[l] <= 1e-9 * ev[0].abs() {
        warnings.push(Warning::NoEigenGap);
    }
    let noise = eig.eigenvectors.columns(l, n - l);
    let pn = &noise * noise.adjoint();
    let c: Vec<Complex64> = (0..n)
        .map(|k| (0..n - k).map(|i| pn[(i, i + k)]).sum())
        .collect();
    // Coefficient of z^m is c_{m-(n-1)}, with c_{-k} = conj(c_k).
    let coeffs: Vec<Complex64> = (0..2 * n - 1)
        .map(|m| {
            let k = m as isize - (n as isize - 1);
            if k >= 0 {
                c[k as usize]
            } else {
                c[(-k) as usize].conj()
            }
        })
        .collect();
    let mut cands: Vec<Complex64> = polynomial_roots(&coeffs)
        .into_iter()
        .filter(|z| z.norm() > 0.0 && z.is_finite())
        .map(|z| if z.norm() > 1.0 { 1.0 / z.conj() } else { z })
        .collect();
    cands.sort_by(|a, b| (1.0 - a.norm()).total_cmp(&(1.0 - b.norm())));
    let mut chosen: Vec<Complex64> = Vec::with_capacity(l);
    for z in cands {
        if chosen.len() == l {
            break;
        }
        // Each conjugate-reciprocal pair reflects onto the same point.
        if chosen.iter().all(|s| (s - z).norm() > 1e-5) {
            chosen.push(z);
        }
    }
    while chosen.len() < l {
        chosen.push(Complex64::new(1.0, 0.0));
    }
    if chosen.iter().any(|z| 1.0 - z.norm() > 0.2) {
        warnings.push(Warning::RootsOffCircle);
    }
    let mut freqs: Vec<f64> = chosen
        .iter()
        .map(|z| {
            let f = z.arg() / PI;
            let f = if 1.0 - z.norm() < 1e-4 { polish(&c, f, n) } else { f };
            wrap_frequency(f)
        })
        .collect();
    freqs.sort_by(f64::total_cmp);
    Ok(RootMusic { freqs, warnings })
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            if k % 2 == 0 {
                p.swap(i, k - 1);
            } else {
                p.swap(0, k - 1);
            }
        }
    }
    heap(n, &mut p, &mut out);
    out
}

/// Reorders `est` to minimize `Σ |est[π(l)] − truth[l]|`.
fn align(est: &[f64], truth: &[f64]) -> Vec<f64> {
    let l = est.len();
    if l > MAX_BRUTE_FORCE_ORDER {
        let mut e = est.to_vec();
        e.sort_by(f64::total_cmp);
        let mut order: Vec<usize> = (0..l).collect();
        order.sort_by(|&a, &b| truth[a].total_cmp(&truth[b]));
        let mut out = vec![0.0; l];
        for (rank, &i) in order.iter().enumerate() {
            out[i] = e[rank];
        }
        return out;
    }
    let cost = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(i, &j)| (est[j] - truth[i]).abs()).sum() };
    let best = permutations(l)
        .into_iter()
        .min_by(|a, b| cost(a).total_cmp(&cost(b)))
        .expect("at least one permutation");
    best.iter().map(|&j| est[j]).collect()
}

/// Aligns AoD and AoA frequency estimates. With `truth`, each side takes the
/// permutation minimizing its total absolute error against the true
/// frequencies; otherwise each side is sorted ascending.
pub fn pair_and_order(est_aod: &[f64], est_aoa: &[f64], truth: Option<&PathSet>) -> Result<(Vec<f64>, Vec<f64>)> {
    if est_aod.len() != est_aoa.len() {
        return Err(Error::Dimension(format!(
            "{} AoD and {} AoA estimates",
            est_aod.len(),
            est_aoa.len()
        )));
    }
    match truth {
        Some(p) => {
            if p.len() != est_aod.len() {
                return Err(Error::Dimension(format!(
                    "{} estimates against {} true paths",
                    est_aod.len(),
                    p.len()
                )));
            }
            Ok((align(est_aod, &p.aod_freqs()), align(est_aoa, &p.aoa_freqs())))
        }
        None => {
            let mut a = est_aod.to_vec();
            let mut b = est_aoa.to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            Ok((a, b))
        }
    }
}

/// Maps spatial frequencies to angles in `[0, π/2]`. A ULA cannot tell `x`
/// from `π − x`; when reference angles are given, each estimate is placed on
/// the same side of broadside as its reference.
pub fn freqs_to_angles(freqs: &[f64], reference: Option<&[f64]>) -> Vec<f64> {
    freqs
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let a = f.clamp(0.0, 1.0).asin();
            match reference {
                Some(r) if r[i] > PI / 2.0 => PI - a,
                _ => a,
            }
        })
        .collect()
}

/// Least-squares path gains for `Y = s·A·H·B` with `H = Σ ρₗ α(sin φₗ) α(sin θₗ)ᴴ`.
pub fn ls_gains(
    y: &ComplexVector,
    left: &ComplexMatrix,
    right: &ComplexMatrix,
    theta: &[f64],
    phi: &[f64],
    scale: f64,
) -> Result<Vec<Complex64>> {
    let l = theta.len();
    if phi.len() != l {
        return Err(Error::Dimension("AoD and AoA lists differ in length".into()));
    }
    if y.len() != left.nrows() * right.ncols() {
        return Err(Error::Dimension(format!(
            "observation length {} does not match {}x{}",
            y.len(),
            left.nrows(),
            right.ncols()
        )));
    }
    if y.iter().all(|z| *z == ZERO) {
        return Ok(vec![ZERO; l]);
    }
    let reg = regressor(left, right, theta, phi, scale);
    let cond = condition_number(&reg);
    if !(cond <= 1e10) {
        return Err(Error::IllConditioned(cond));
    }
    Ok((pinv(&reg) * y).iter().copied().collect())
}

/// Columns `s·vec(A α(sin φₗ) α(sin θₗ)ᴴ B)`.
pub fn regressor(left: &ComplexMatrix, right: &ComplexMatrix, theta: &[f64], phi: &[f64], scale: f64) -> ComplexMatrix {
    let rows = left.nrows() * right.ncols();
    let mut r = ComplexMatrix::zeros(rows, theta.len());
    for (c, (t, p)) in theta.iter().zip(phi).enumerate() {
        let ar = left * steering(left.ncols(), p.sin());
        let at = steering(right.nrows(), t.sin()).adjoint() * right;
        let outer = &ar * &at * Complex64::new(scale, 0.0);
        r.set_column(c, &vec(&outer));
    }
    r
}

/// Stage-1 gains from `vec(Y_H)` with sensing `W_H` and pilots `X`.
pub fn ls_gains_stage1(
    y_h: &ComplexVector,
    x: &ComplexMatrix,
    w_h: &ComplexMatrix,
    theta_hat: &[f64],
    phi_hat: &[f64],
    scale: f64,
) -> Result<Vec<Complex64>> {
    ls_gains(y_h, w_h, x, theta_hat, phi_hat, scale)
}

/// Stage-2 gains from `vec(Y)` with combiner `W_B` and RIS output `Û`.
pub fn ls_gains_stage2(
    y: &ComplexVector,
    u_hat: &ComplexMatrix,
    w_b: &ComplexMatrix,
    theta_hat: &[f64],
    phi_hat: &[f64],
    scale: f64,
) -> Result<Vec<Complex64>> {
    ls_gains(y, &w_b.adjoint(), u_hat, theta_hat, phi_hat, scale)
}

/// `[Ω₁ Ĥ_MR X, …, Ω_K Ĥ_MR X]`.
pub fn build_u_hat(schedule: &PhaseSchedule, h_mr_hat: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    reflected_sequence(schedule, h_mr_hat, x)
}

/// `Δ[p][l] = asin(sin φ_MR,l − sin θ_RB,p)`, `L_RB × L_MR`.
pub fn angle_differences(phi_mr: &[f64], theta_rb: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(theta_rb.len(), phi_mr.len(), |p, l| {
        let arg = phi_mr[l].sin() - theta_rb[p].sin();
        if arg.abs() > 1.0 + 1e-12 {
            log::warn!("angle difference argument {arg} outside [-1, 1]; clamping");
        }
        arg.clamp(-1.0, 1.0).asin()
    })
}

/// Row-major flattening of [`angle_differences`], matching [`gain_products`].
pub fn delta_vector(delta: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(delta.len());
    for p in 0..delta.nrows() {
        for l in 0..delta.ncols() {
            out.push(delta[(p, l)]);
        }
    }
    out
}

/// `ρ_RB ⊗ ρ_MR`.
pub fn gain_products(rho_rb: &[Complex64], rho_mr: &[Complex64]) -> Vec<Complex64> {
    rho_rb.iter().flat_map(|a| rho_mr.iter().map(move |b| a * b)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorOptions {
    pub solver: SolverOptions,
    /// Constant in the stage-1 regularization weight.
    pub c_tau: f64,
    /// Constant in the stage-2 regularization weight.
    pub c_nu: f64,
    /// Warm-start stage 2 from the least-squares channel estimate.
    pub warm_start: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            solver: SolverOptions::default(),
            c_tau: 1.0,
            c_nu: 1.0,
            warm_start: true,
        }
    }
}

/// Solver health of one ANM stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub residuals: Residuals,
    pub min_eig: f64,
    pub trace_norm: f64,
    pub objective: f64,
    pub trace: Vec<TraceRow>,
}

impl StageReport {
    fn from_solution(sol: &AnmSolution) -> Self {
        let (min_eig, trace_norm) = sol.psd_margin();
        Self {
            residuals: sol.residuals,
            min_eig,
            trace_norm,
            objective: sol.objective,
            trace: sol.trace.clone(),
        }
    }

    /// Certificate PSD to `1e-8·trace`.
    pub fn psd_ok(&self) -> bool {
        self.min_eig >= -1e-8 * self.trace_norm.abs()
    }
}

#[derive(Debug, Clone)]
pub struct EstimationResult {
    pub h_mr_hat: ComplexMatrix,
    pub h_rb_hat: ComplexMatrix,
    pub theta_mr: Vec<f64>,
    pub phi_mr: Vec<f64>,
    pub rho_mr: Vec<Complex64>,
    pub theta_rb: Vec<f64>,
    pub phi_rb: Vec<f64>,
    pub rho_rb: Vec<Complex64>,
    /// `L_RB × L_MR`.
    pub delta_hat: DMatrix<f64>,
    /// `ρ_RB ⊗ ρ_MR`.
    pub rho_prod: Vec<Complex64>,
    pub warnings: Vec<(Stage, Warning)>,
    pub stage1: StageReport,
    pub stage2: StageReport,
}

impl EstimationResult {
    /// True when a stage produced a zero certificate or coincident paths.
    pub fn is_degenerate(&self) -> bool {
        self.warnings
            .iter()
            .any(|(_, w)| matches!(w, Warning::ZeroCertificate | Warning::IllConditionedGains))
    }
}

/// True channel parameters, used only to align estimates for evaluation.
#[derive(Debug, Clone, Copy)]
pub struct Truth<'a> {
    pub mr: &'a PathSet,
    pub rb: &'a PathSet,
}

struct StageEstimate {
    theta: Vec<f64>,
    phi: Vec<f64>,
    rho: Vec<Complex64>,
    h: ComplexMatrix,
    report: StageReport,
    warnings: Vec<Warning>,
}

#[allow(clippy::too_many_arguments)]
fn estimate_stage(
    problem: &AnmProblem,
    warm: Option<&WarmStart>,
    l: usize,
    truth: Option<&PathSet>,
    opts: &SolverOptions,
    stage: Stage,
) -> Result<StageEstimate> {
    let (n1, n2) = problem.dims();
    let sol = match warm {
        Some(w) => anm::solve_from(problem, opts, w),
        None => anm::solve(problem, opts),
    }
    .map_err(|e| e.in_stage(stage))?;
    let report = StageReport::from_solution(&sol);
    let (left, right) = anm::assemble_certificate(&sol).map_err(|e| e.in_stage(stage))?;
    let arrival = freqs_from_toeplitz(&left, l).map_err(|e| e.in_stage(stage))?;
    let departure = freqs_from_toeplitz(&right, l).map_err(|e| e.in_stage(stage))?;
    let mut warnings = arrival.warnings.clone();
    for w in &departure.warnings {
        if !warnings.contains(w) {
            warnings.push(*w);
        }
    }
    if arrival.is_zero() || departure.is_zero() {
        if !warnings.contains(&Warning::ZeroCertificate) {
            warnings.push(Warning::ZeroCertificate);
        }
        let (theta, phi) = (vec![0.0; l], vec![0.0; l]);
        return Ok(StageEstimate {
            theta,
            phi,
            rho: vec![ZERO; l],
            h: ComplexMatrix::zeros(n1, n2),
            report,
            warnings,
        });
    }
    let (f_dep, f_arr) = pair_and_order(&departure.freqs, &arrival.freqs, truth)?;
    let y = vec(&problem.observations);
    let fitted = match truth {
        Some(_) => {
            let (t, p) = (freqs_to_angles(&f_dep, None), freqs_to_angles(&f_arr, None));
            ls_gains(&y, &problem.sensing_left, &problem.sensing_right, &t, &p, problem.scale).map(|rho| (f_dep.clone(), rho))
        }
        None => pair_by_fit(&y, problem, &f_dep, &f_arr),
    };
    let (f_dep, rho) = match fitted {
        Ok(v) => v,
        Err(Error::IllConditioned(_)) => {
            warnings.push(Warning::IllConditionedGains);
            let (t, p) = (freqs_to_angles(&f_dep, None), freqs_to_angles(&f_arr, None));
            let reg = regressor(&problem.sensing_left, &problem.sensing_right, &t, &p, problem.scale);
            (f_dep, (pinv(&reg) * &y).iter().copied().collect())
        }
        Err(e) => return Err(e.in_stage(stage)),
    };
    let theta = freqs_to_angles(&f_dep, truth.map(|p| p.aod.as_slice()));
    let phi = freqs_to_angles(&f_arr, truth.map(|p| p.aoa.as_slice()));
    let paths = PathSet::new(theta.clone(), phi.clone(), rho.clone())?;
    let h = synth_channel(&paths, n1, n2);
    Ok(StageEstimate {
        theta,
        phi,
        rho,
        h,
        report,
        warnings,
    })
}

/// Without ground truth, chooses the AoD permutation whose least-squares fit
/// leaves the smallest residual.
fn pair_by_fit(
    y: &ComplexVector,
    problem: &AnmProblem,
    f_dep: &[f64],
    f_arr: &[f64],
) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let phi = freqs_to_angles(f_arr, None);
    let perms = if f_dep.len() <= MAX_BRUTE_FORCE_ORDER {
        permutations(f_dep.len())
    } else {
        vec![(0..f_dep.len()).collect()]
    };
    let mut best: Option<(f64, Vec<f64>, Vec<Complex64>)> = None;
    let mut last_err = None;
    for p in perms {
        let cand: Vec<f64> = p.iter().map(|&i| f_dep[i]).collect();
        let theta = freqs_to_angles(&cand, None);
        match ls_gains(y, &problem.sensing_left, &problem.sensing_right, &theta, &phi, problem.scale) {
            Ok(rho) => {
                let reg = regressor(&problem.sensing_left, &problem.sensing_right, &theta, &phi, problem.scale);
                let fit = &reg * ComplexVector::from_vec(rho.clone());
                let res = (y - fit).norm();
                if best.as_ref().is_none_or(|b| res < b.0) {
                    best = Some((res, cand, rho));
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    match best {
        Some((_, f, rho)) => Ok((f, rho)),
        None => Err(last_err.expect("at least one pairing was tried")),
    }
}

/// Runs both estimation stages on one sounding record.
pub fn two_stage_estimate(
    record: &SoundingRecord,
    cfg: &SoundingConfig,
    l_mr: usize,
    l_rb: usize,
    truth: Option<Truth<'_>>,
    opts: &EstimatorOptions,
) -> Result<EstimationResult> {
    let sigma = cfg.sigma2.sqrt();
    let s1 = cfg.p_t.sqrt() * record.beta1;
    let s2 = cfg.p_t.sqrt() * record.beta2;

    let tau = anm::regularization_weight(sigma, cfg.n_r, cfg.n_m, opts.c_tau);
    let p1 = AnmProblem::new(record.w_h.clone(), record.x.clone(), record.y_h.clone(), s1, tau)
        .map_err(|e| e.in_stage(Stage::First))?;
    let st1 = estimate_stage(&p1, None, l_mr, truth.map(|t| t.mr), &opts.solver, Stage::First)?;

    let u_hat = build_u_hat(&record.schedule, &st1.h, &record.x);
    let nu = anm::regularization_weight(sigma, cfg.n_r, cfg.n_b, opts.c_nu);
    let w_bh = record.w_b.adjoint();
    let p2 = AnmProblem::new(w_bh.clone(), u_hat.clone(), record.y.clone(), s2, nu)
        .map_err(|e| e.in_stage(Stage::Second))?;
    let warm = if opts.warm_start {
        let h0 = pinv(&(&w_bh * Complex64::new(s2, 0.0))) * &record.y * pinv(&u_hat);
        Some(WarmStart::from_estimate(&p2, &h0).map_err(|e| e.in_stage(Stage::Second))?)
    } else {
        None
    };
    let st2 = estimate_stage(&p2, warm.as_ref(), l_rb, truth.map(|t| t.rb), &opts.solver, Stage::Second)?;

    let delta_hat = angle_differences(&st1.phi, &st2.theta);
    let rho_prod = gain_products(&st2.rho, &st1.rho);
    let mut warnings: Vec<(Stage, Warning)> = st1.warnings.iter().map(|w| (Stage::First, *w)).collect();
    warnings.extend(st2.warnings.iter().map(|w| (Stage::Second, *w)));
    Ok(EstimationResult {
        h_mr_hat: st1.h,
        h_rb_hat: st2.h,
        theta_mr: st1.theta,
        phi_mr: st1.phi,
        rho_mr: st1.rho,
        theta_rb: st2.theta,
        phi_rb: st2.phi,
        rho_rb: st2.rho,
        delta_hat,
        rho_prod,
        warnings,
        stage1: st1.report,
        stage2: st2.report,
    })
}
