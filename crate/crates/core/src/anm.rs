//! Regularized atomic-norm channel recovery.
//!
//! Each estimation stage observes `Y = s·A·H·B + noise` and solves
//!
//! ```text
//! minimize   s·reg·( tr T(u)/(2 n1) + tr T(v)/(2 n2) ) + ½‖s·A·H·B − Y‖²_F
//! subject to [[T(u), H], [Hᴴ, T(v)]] ⪰ 0
//! ```
//!
//! where `H` is `n1 × n2` and `T(·)` builds a Hermitian Toeplitz matrix from
//! its first row. The top-left block therefore spans the row dimension of
//! `H` and carries the arrival-side frequencies, the bottom-right block the
//! departure-side ones. With `reg == 0` the data term becomes the constraint
//! `A·H·B = Y/s` (projected onto the range of the sensing operators) and the
//! atomic norm alone is minimized.
//!
//! The solver is ADMM on the splitting `B(u, v, H) = Z`, `Z ⪰ 0`, applied to
//! a normalized copy of the problem in which `‖Y‖` matches the sensing gain.

use faer::{Mat, Side};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::numerics::{
    eig_hermitian_ascending, from_faer, min_eigenvalue, pinv, spectral_norm, to_faer, ComplexMatrix,
    HermitianToeplitz, ZERO,
};

#[derive(Debug, Clone)]
pub struct AnmProblem {
    /// Applied on the left of the channel (`W_H` or `W_Bᴴ`).
    pub sensing_left: ComplexMatrix,
    /// Applied on the right of the channel (`X` or `Û`).
    pub sensing_right: ComplexMatrix,
    pub observations: ComplexMatrix,
    /// Amplitude `√P_T·β` multiplying the noiseless signal.
    pub scale: f64,
    pub reg: f64,
}

impl AnmProblem {
    pub fn new(
        sensing_left: ComplexMatrix,
        sensing_right: ComplexMatrix,
        observations: ComplexMatrix,
        scale: f64,
        reg: f64,
    ) -> Result<Self> {
        let expect = (sensing_left.nrows(), sensing_right.ncols());
        if observations.shape() != expect {
            return Err(Error::Dimension(format!(
                "observations are {}x{}, sensing operators produce {}x{}",
                observations.nrows(),
                observations.ncols(),
                expect.0,
                expect.1
            )));
        }
        if sensing_left.ncols() == 0 || sensing_right.nrows() == 0 {
            return Err(Error::Dimension("channel dimensions must be positive".into()));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Config(format!("signal scale must be positive, got {scale}")));
        }
        if !(reg >= 0.0 && reg.is_finite()) {
            return Err(Error::Config(format!("regularization must be non-negative, got {reg}")));
        }
        Ok(Self {
            sensing_left,
            sensing_right,
            observations,
            scale,
            reg,
        })
    }

    /// `(n1, n2)`: the shape of the unknown channel.
    pub fn dims(&self) -> (usize, usize) {
        (self.sensing_left.ncols(), self.sensing_right.nrows())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    /// Initial ADMM penalty.
    pub rho: f64,
    /// Multiplicative penalty change during residual balancing.
    pub adapt_factor: f64,
    /// Residual ratio that triggers a penalty change.
    pub adapt_ratio: f64,
    /// Iterations between balancing checks.
    pub adapt_interval: usize,
    /// Maximum number of penalty changes; the penalty is frozen afterwards.
    pub adapt_limit: usize,
    /// Residual floor in normalized units; residuals are measured relative
    /// to `max(magnitude, abs_tol/rel_tol)`.
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
    /// Record one [`TraceRow`] per iteration.
    pub trace: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            adapt_factor: 2.0,
            adapt_ratio: 10.0,
            adapt_interval: 20,
            adapt_limit: 100,
            abs_tol: 5e-7,
            rel_tol: 5e-7,
            max_iter: 50_000,
            trace: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    /// Best objective of a feasible point seen so far (original units).
    pub objective: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

/// Final ADMM residuals. The relative values divide by the iterate magnitude
/// floored at `abs_tol/rel_tol`, so convergence means both are below `rel_tol`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Residuals {
    pub iterations: usize,
    pub primal: f64,
    pub dual: f64,
    pub primal_abs: f64,
    pub dual_abs: f64,
}

/// Solver state sufficient to resume ADMM. Stored in normalized units
/// together with the normalization it refers to.
#[derive(Debug, Clone)]
pub struct WarmStart {
    z: ComplexMatrix,
    lambda: ComplexMatrix,
    rho: f64,
    kappa: f64,
}

impl WarmStart {
    /// Starts from a channel guess `h0` with identity-scaled Toeplitz blocks
    /// large enough to make the block matrix PSD.
    pub fn from_estimate(problem: &AnmProblem, h0: &ComplexMatrix) -> Result<Self> {
        let (n1, n2) = problem.dims();
        if h0.shape() != (n1, n2) {
            return Err(Error::Dimension(format!(
                "warm start is {}x{}, channel is {n1}x{n2}",
                h0.nrows(),
                h0.ncols()
            )));
        }
        let kappa = normalization(problem).unwrap_or(1.0);
        let g = h0 / Complex64::new(kappa, 0.0);
        let c = spectral_norm(&g);
        let n = n1 + n2;
        let mut z = ComplexMatrix::zeros(n, n);
        for i in 0..n {
            z[(i, i)] = Complex64::new(c, 0.0);
        }
        z.view_mut((0, n1), (n1, n2)).copy_from(&g);
        z.view_mut((n1, 0), (n2, n1)).copy_from(&g.adjoint());
        Ok(Self {
            z,
            lambda: ComplexMatrix::zeros(n, n),
            rho: SolverOptions::default().rho,
            kappa,
        })
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }
}

#[derive(Debug, Clone)]
pub struct AnmSolution {
    pub h_hat: ComplexMatrix,
    /// `n1 × n1` block, arrival side.
    pub toeplitz_left: HermitianToeplitz,
    /// `n2 × n2` block, departure side.
    pub toeplitz_right: HermitianToeplitz,
    /// Value of the minimized criterion at the returned point; the atomic
    /// norm bound itself when `reg == 0`.
    pub objective: f64,
    pub residuals: Residuals,
    pub trace: Vec<TraceRow>,
    pub warm: WarmStart,
}

impl AnmSolution {
    /// The full block matrix `[[T(u), H], [Hᴴ, T(v)]]`.
    pub fn block_matrix(&self) -> ComplexMatrix {
        let (n1, n2) = self.h_hat.shape();
        let mut m = ComplexMatrix::zeros(n1 + n2, n1 + n2);
        m.view_mut((0, 0), (n1, n1)).copy_from(&self.toeplitz_left.materialize());
        m.view_mut((n1, n1), (n2, n2)).copy_from(&self.toeplitz_right.materialize());
        m.view_mut((0, n1), (n1, n2)).copy_from(&self.h_hat);
        m.view_mut((n1, 0), (n2, n1)).copy_from(&self.h_hat.adjoint());
        m
    }

    /// Smallest eigenvalue of the block matrix and its trace.
    pub fn psd_margin(&self) -> (f64, f64) {
        let b = self.block_matrix();
        let tr = self.toeplitz_left.trace() + self.toeplitz_right.trace();
        (min_eigenvalue(&b), tr)
    }
}

/// `c·σ·√(N_a N_b ln(N_a N_b))`.
pub fn regularization_weight(sigma: f64, n_a: usize, n_b: usize, c: f64) -> f64 {
    let n = (n_a * n_b) as f64;
    c * sigma * (n * n.ln()).max(0.0).sqrt()
}

/// Materialized certificates, checked PSD to `1e-8·trace`.
pub fn assemble_certificate(sol: &AnmSolution) -> Result<(ComplexMatrix, ComplexMatrix)> {
    let mut out = Vec::with_capacity(2);
    for t in [&sol.toeplitz_left, &sol.toeplitz_right] {
        let m = t.materialize();
        let min_eig = min_eigenvalue(&m);
        let bound = -1e-8 * t.trace().abs();
        if min_eig < bound {
            return Err(Error::Certificate { min_eig, bound });
        }
        out.push(m);
    }
    let right = out.pop().expect("two certificates");
    let left = out.pop().expect("two certificates");
    Ok((left, right))
}

pub fn solve(problem: &AnmProblem, opts: &SolverOptions) -> Result<AnmSolution> {
    Admm::new(problem, opts)?.run(None)
}

/// Resumes from `warm`; re-solving from a returned solution's state is a fixed point.
pub fn solve_from(problem: &AnmProblem, opts: &SolverOptions, warm: &WarmStart) -> Result<AnmSolution> {
    Admm::new(problem, opts)?.run(Some(warm))
}

/// `κ = ‖Y‖ / (s‖A‖‖B‖)`, or `None` when there is nothing to fit.
fn normalization(problem: &AnmProblem) -> Option<f64> {
    let y = problem.observations.norm();
    let a = spectral_norm(&problem.sensing_left);
    let b = spectral_norm(&problem.sensing_right);
    let denom = problem.scale * a * b;
    if y == 0.0 || denom == 0.0 || !y.is_finite() {
        None
    } else {
        Some(y / denom)
    }
}

type FMat = Mat<Complex64>;

fn fnorm(m: &FMat) -> f64 {
    m.as_ref().norm_l2()
}

/// x-update data for the penalized fit: eigenbases of AᴴA and BBᴴ.
struct PenalizedFit {
    p: FMat,
    q: FMat,
    da: Vec<f64>,
    db: Vec<f64>,
    /// `Pᴴ AᴴỸBᴴ Q`.
    rhs: FMat,
}

/// x-update data for the exact-fit constraint.
struct ExactFit {
    proj_a: FMat,
    proj_b: FMat,
    g0: FMat,
}

enum Fit {
    Penalized(PenalizedFit),
    Exact(ExactFit),
}

struct Admm<'a> {
    problem: &'a AnmProblem,
    opts: SolverOptions,
    n1: usize,
    n2: usize,
    kappa: Option<f64>,
    lam: f64,
    a: FMat,
    b: FMat,
    y: FMat,
    fit: Option<Fit>,
}

struct Iterate {
    u: Vec<Complex64>,
    v: Vec<Complex64>,
    g: FMat,
}

impl<'a> Admm<'a> {
    fn new(problem: &'a AnmProblem, opts: &SolverOptions) -> Result<Self> {
        let (n1, n2) = problem.dims();
        let kappa = normalization(problem);
        let sk = problem.scale * kappa.unwrap_or(1.0);
        // With an exact-fit constraint the atomic norm is the whole objective.
        let lam = if problem.reg == 0.0 { 1.0 } else { problem.reg / sk };
        let a = to_faer(&problem.sensing_left);
        let b = to_faer(&problem.sensing_right);
        let mut y = to_faer(&problem.observations);
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                y[(i, j)] /= sk;
            }
        }
        Ok(Self {
            problem,
            opts: *opts,
            n1,
            n2,
            kappa,
            lam,
            a,
            b,
            y,
            fit: None,
        })
    }

    fn zero_solution(&self, iterations: usize) -> AnmSolution {
        let n = self.n1 + self.n2;
        AnmSolution {
            h_hat: ComplexMatrix::zeros(self.n1, self.n2),
            toeplitz_left: HermitianToeplitz::zeros(self.n1),
            toeplitz_right: HermitianToeplitz::zeros(self.n2),
            objective: 0.5 * self.problem.observations.norm_squared(),
            residuals: Residuals {
                iterations,
                ..Residuals::default()
            },
            trace: Vec::new(),
            warm: WarmStart {
                z: ComplexMatrix::zeros(n, n),
                lambda: ComplexMatrix::zeros(n, n),
                rho: self.opts.rho,
                kappa: self.kappa.unwrap_or(1.0),
            },
        }
    }

    /// Zero is optimal once λ dominates the dual atomic norm of the data
    /// gradient, which is at most `√(n1 n2)·‖AᴴỸBᴴ‖₂`.
    fn zero_is_optimal(&self) -> bool {
        if self.problem.reg == 0.0 {
            return false;
        }
        let grad = self.a.adjoint() * &self.y * self.b.adjoint();
        let gn = spectral_norm(&from_faer(grad.as_ref()));
        self.lam >= ((self.n1 * self.n2) as f64).sqrt() * gn
    }

    fn prepare(&mut self) {
        let fit = if self.problem.reg > 0.0 {
            let ata = from_faer((self.a.adjoint() * &self.a).as_ref());
            let bbt = from_faer((&self.b * self.b.adjoint()).as_ref());
            let (da, p) = eig_hermitian_ascending(&hermitize(&ata));
            let (db, q) = eig_hermitian_ascending(&hermitize(&bbt));
            let p = to_faer(&p);
            let q = to_faer(&q);
            let rhs = p.adjoint() * (self.a.adjoint() * &self.y * self.b.adjoint()) * &q;
            Fit::Penalized(PenalizedFit {
                p,
                q,
                da: da.into_iter().map(|x| x.max(0.0)).collect(),
                db: db.into_iter().map(|x| x.max(0.0)).collect(),
                rhs,
            })
        } else {
            let ap = to_faer(&pinv(&self.problem.sensing_left));
            let bp = to_faer(&pinv(&self.problem.sensing_right));
            Fit::Exact(ExactFit {
                proj_a: &ap * &self.a,
                proj_b: &self.b * &bp,
                g0: &ap * &self.y * &bp,
            })
        };
        self.fit = Some(fit);
    }

    fn x_update(&self, m: &FMat, rho: f64) -> Iterate {
        let (n1, n2) = (self.n1, self.n2);
        let mut u = toeplitz_average(m, 0, n1);
        let mut v = toeplitz_average(m, n1, n2);
        u[0].re -= self.lam / (2.0 * rho * n1 as f64);
        v[0].re -= self.lam / (2.0 * rho * n2 as f64);
        let mavg = FMat::from_fn(n1, n2, |i, j| (m[(i, n1 + j)] + m[(n1 + j, i)].conj()) * 0.5);
        let g = match self.fit.as_ref().expect("prepared") {
            Fit::Penalized(f) => {
                let mut w = f.p.adjoint() * &mavg * &f.q;
                for j in 0..n2 {
                    for i in 0..n1 {
                        w[(i, j)] = (f.rhs[(i, j)] + w[(i, j)] * (2.0 * rho)) / (f.da[i] * f.db[j] + 2.0 * rho);
                    }
                }
                &f.p * w * f.q.adjoint()
            }
            Fit::Exact(f) => &mavg - &f.proj_a * &mavg * &f.proj_b + &f.g0,
        };
        Iterate { u, v, g }
    }

    fn block(&self, x: &Iterate) -> FMat {
        let (n1, n2) = (self.n1, self.n2);
        FMat::from_fn(n1 + n2, n1 + n2, |i, j| match (i < n1, j < n1) {
            (true, true) => toeplitz_entry(&x.u, i, j),
            (false, false) => toeplitz_entry(&x.v, i - n1, j - n1),
            (true, false) => x.g[(i, j - n1)],
            (false, true) => x.g[(j, i - n1)].conj(),
        })
    }

    /// Normalized objective at `x`, before any feasibility shift.
    fn objective(&self, x: &Iterate) -> f64 {
        let atomic = x.u[0].re * 0.5 + x.v[0].re * 0.5;
        if self.problem.reg == 0.0 {
            return atomic;
        }
        let r = &self.a * &x.g * &self.b - &self.y;
        self.lam * atomic + 0.5 * fnorm(&r).powi(2)
    }

    /// Converts a normalized objective to original units.
    fn to_original(&self, obj: f64) -> f64 {
        let kappa = self.kappa.unwrap_or(1.0);
        if self.problem.reg == 0.0 {
            kappa * obj
        } else {
            (self.problem.scale * kappa).powi(2) * obj
        }
    }

    fn run(mut self, warm: Option<&WarmStart>) -> Result<AnmSolution> {
        let Some(kappa) = self.kappa else {
            return Ok(self.zero_solution(0));
        };
        if self.zero_is_optimal() {
            return Ok(self.zero_solution(0));
        }
        self.prepare();
        let n = self.n1 + self.n2;
        let (mut z, mut lambda, mut rho) = match warm {
            Some(w) if w.z.nrows() == n => {
                let r = w.kappa / kappa;
                let z = if r == 1.0 { to_faer(&w.z) } else { to_faer(&(&w.z * Complex64::new(r, 0.0))) };
                let l = if r == 1.0 {
                    to_faer(&w.lambda)
                } else {
                    to_faer(&(&w.lambda * Complex64::new(r, 0.0)))
                };
                (z, l, w.rho)
            }
            _ => (FMat::zeros(n, n), FMat::zeros(n, n), self.opts.rho),
        };
        let opts = self.opts;
        let mut trace = Vec::new();
        let mut best = f64::INFINITY;
        let mut last = (f64::NAN, f64::NAN);
        // Cost of shifting both Toeplitz diagonals by the primal residual.
        let shift_cost = self.lam;
        let mut adaptations = 0;
        let floor = if opts.rel_tol > 0.0 { opts.abs_tol / opts.rel_tol } else { 1.0 };
        for iter in 1..=opts.max_iter {
            let (z_in, l_in, rho_in) = (z.clone(), lambda.clone(), rho);
            let m = &z - &lambda;
            let x = self.x_update(&m, rho);
            let bx = self.block(&x);
            let z_next = project_psd_faer(&(&bx + &lambda));
            let diff = &bx - &z_next;
            let r = fnorm(&diff);
            let s = rho * fnorm(&(&z_next - &z));
            lambda = &lambda + &diff;
            z = z_next;

            let scale_pri = fnorm(&bx).max(fnorm(&z));
            let scale_dual = rho * fnorm(&lambda);
            let eps_pri = opts.abs_tol.max(opts.rel_tol * scale_pri);
            let eps_dual = opts.abs_tol.max(opts.rel_tol * scale_dual);
            let rel = |v: f64, sc: f64| v / sc.max(floor);
            let residuals = Residuals {
                iterations: iter,
                primal: rel(r, scale_pri),
                dual: rel(s, scale_dual),
                primal_abs: r,
                dual_abs: s,
            };
            if opts.trace {
                let feasible = self.objective(&x) + shift_cost * r;
                best = best.min(self.to_original(feasible));
                trace.push(TraceRow {
                    iter,
                    objective: best,
                    primal_res: residuals.primal,
                    dual_res: residuals.dual,
                });
            }
            last = (residuals.primal, residuals.dual);
            if r < eps_pri && s < eps_dual {
                let warm = WarmStart {
                    z: from_faer(z_in.as_ref()),
                    lambda: from_faer(l_in.as_ref()),
                    rho: rho_in,
                    kappa,
                };
                return Ok(self.finish(x, residuals, trace, warm));
            }
            let check = adaptations < opts.adapt_limit && iter % opts.adapt_interval.max(1) == 0;
            if check && r > opts.adapt_ratio * s {
                rho *= opts.adapt_factor;
                scale_in_place(&mut lambda, 1.0 / opts.adapt_factor);
                adaptations += 1;
            } else if check && s > opts.adapt_ratio * r {
                rho /= opts.adapt_factor;
                scale_in_place(&mut lambda, opts.adapt_factor);
                adaptations += 1;
            }
            if !r.is_finite() || !s.is_finite() {
                break;
            }
        }
        let (primal, dual) = last;
        Err(Error::Convergence {
            iterations: opts.max_iter,
            primal,
            dual,
        })
    }

    /// Shifts both Toeplitz diagonals by the exact PSD deficit and maps the
    /// iterate back to original units.
    fn finish(&self, mut x: Iterate, residuals: Residuals, trace: Vec<TraceRow>, warm: WarmStart) -> AnmSolution {
        let bx = from_faer(self.block(&x).as_ref());
        let min_eig = min_eigenvalue(&bx);
        if min_eig < 0.0 {
            x.u[0].re -= min_eig;
            x.v[0].re -= min_eig;
        }
        let objective = self.to_original(self.objective(&x));
        let kappa = warm.kappa;
        let k = Complex64::new(kappa, 0.0);
        let u: Vec<Complex64> = x.u.iter().map(|z| z * k).collect();
        let v: Vec<Complex64> = x.v.iter().map(|z| z * k).collect();
        AnmSolution {
            h_hat: from_faer(x.g.as_ref()) * k,
            toeplitz_left: HermitianToeplitz::from_generator_unchecked(u),
            toeplitz_right: HermitianToeplitz::from_generator_unchecked(v),
            objective,
            residuals,
            trace,
            warm,
        }
    }
}

fn hermitize(m: &ComplexMatrix) -> ComplexMatrix {
    (m + m.adjoint()) * Complex64::new(0.5, 0.0)
}

fn scale_in_place(m: &mut FMat, s: f64) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            m[(i, j)] *= s;
        }
    }
}

fn toeplitz_entry(gen: &[Complex64], i: usize, j: usize) -> Complex64 {
    if j >= i {
        gen[j - i]
    } else {
        gen[i - j].conj()
    }
}

/// Least-squares Hermitian Toeplitz fit to the diagonal block of `m`
/// starting at `(off, off)` with size `n`.
fn toeplitz_average(m: &FMat, off: usize, n: usize) -> Vec<Complex64> {
    let mut gen = vec![ZERO; n];
    for (k, g) in gen.iter_mut().enumerate() {
        let mut acc = ZERO;
        for i in 0..n - k {
            acc += m[(off + i, off + i + k)] + m[(off + i + k, off + i)].conj();
        }
        *g = acc / (2.0 * (n - k) as f64);
    }
    gen[0].im = 0.0;
    gen
}

fn project_psd_faer(m: &FMat) -> FMat {
    let n = m.nrows();
    let dec = m
        .self_adjoint_eigen(Side::Lower)
        .expect("eigendecomposition of finite Hermitian matrix");
    let s = dec.S().column_vector();
    let u = dec.U();
    let keep: Vec<usize> = (0..n).filter(|&k| s[k].re > 0.0).collect();
    if keep.is_empty() {
        return FMat::zeros(n, n);
    }
    let scaled = FMat::from_fn(n, keep.len(), |i, c| u[(i, keep[c])] * s[keep[c]].re.sqrt());
    &scaled * scaled.adjoint()
}
