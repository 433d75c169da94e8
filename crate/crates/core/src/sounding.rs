//! Training schedules, received-signal synthesis and training overheads.
//!
//! During hybrid training the MS repeats the same pilot matrix `X` in each of
//! `K` blocks. A fixed set of `M` active RIS elements samples the MS-RIS
//! channel directly, while the remaining passive elements reflect towards the
//! BS with a fresh random phase pattern per block. Active elements are zeroed
//! in the reflection matrix.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::complex_normal;
use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector, ONE, ZERO};

/// Array sizes, training lengths, RF chains, power and noise for one run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoundingConfig {
    pub n_b: usize,
    pub n_r: usize,
    pub n_m: usize,
    /// Active RIS elements.
    pub m: usize,
    /// Training blocks.
    pub k: usize,
    /// Pilot length per block.
    pub t: usize,
    /// BS combiner columns.
    pub n_cb: usize,
    pub n_rfb: usize,
    pub n_rfr: usize,
    /// Transmit power (W).
    pub p_t: f64,
    /// Noise power (W).
    pub sigma2: f64,
}

/// The four hybrid-RIS configurations evaluated in the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Setup {
    Setup1,
    Setup2,
    Setup3,
    Setup4,
}

impl Setup {
    pub const ALL: [Setup; 4] = [Setup::Setup1, Setup::Setup2, Setup::Setup3, Setup::Setup4];

    /// `(N_R, M, N_RFR, K, T, N_CB, N_RFB)`.
    pub fn parameters(self) -> (usize, usize, usize, usize, usize, usize, usize) {
        match self {
            Setup::Setup1 => (32, 4, 4, 5, 8, 8, 8),
            Setup::Setup2 => (32, 2, 2, 5, 8, 8, 8),
            Setup::Setup3 => (64, 8, 8, 7, 8, 8, 8),
            Setup::Setup4 => (64, 6, 6, 7, 8, 8, 8),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Setup::Setup1 => "setup1",
            Setup::Setup2 => "setup2",
            Setup::Setup3 => "setup3",
            Setup::Setup4 => "setup4",
        }
    }

    /// Configuration with 16-element BS and MS arrays.
    pub fn config(self, p_t: f64, sigma2: f64) -> SoundingConfig {
        let (n_r, m, n_rfr, k, t, n_cb, n_rfb) = self.parameters();
        SoundingConfig {
            n_b: 16,
            n_r,
            n_m: 16,
            m,
            k,
            t,
            n_cb,
            n_rfb,
            n_rfr,
            p_t,
            sigma2,
        }
    }
}

impl SoundingConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_b == 0 || self.n_r == 0 || self.n_m == 0 {
            return bad("array sizes must be positive".into());
        }
        if self.m == 0 || self.m > self.n_r {
            return bad(format!("active elements M={} must lie in 1..={}", self.m, self.n_r));
        }
        if self.n_cb == 0 || self.n_cb > self.n_b {
            return bad(format!("combiner columns N_CB={} must lie in 1..={}", self.n_cb, self.n_b));
        }
        if self.k == 0 || self.t == 0 {
            return bad("K and T must be at least 1".into());
        }
        if self.n_rfb == 0 || self.n_rfr == 0 {
            return bad("RF chain counts must be positive".into());
        }
        if !(self.p_t >= 0.0 && self.p_t.is_finite()) || !(self.sigma2 >= 0.0 && self.sigma2.is_finite()) {
            return bad("transmit and noise powers must be finite and non-negative".into());
        }
        Ok(())
    }
}

/// Per-block RIS reflection patterns with a fixed active set.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSchedule {
    /// Diagonal of each Ω_k.
    diagonals: Vec<ComplexVector>,
    active_set: Vec<usize>,
}

impl PhaseSchedule {
    /// Checks that every active diagonal entry is zero and every passive one unit-modulus.
    pub fn new(diagonals: Vec<ComplexVector>, active_set: Vec<usize>) -> Result<Self> {
        for d in &diagonals {
            for (i, z) in d.iter().enumerate() {
                let ok = if active_set.contains(&i) {
                    *z == ZERO
                } else {
                    (z.norm() - 1.0).abs() < 1e-12
                };
                if !ok {
                    return Err(Error::Structure(format!(
                        "phase entry {i} violates the active-set pattern"
                    )));
                }
            }
        }
        Ok(Self {
            diagonals,
            active_set,
        })
    }

    pub fn blocks(&self) -> usize {
        self.diagonals.len()
    }

    pub fn active_set(&self) -> &[usize] {
        &self.active_set
    }

    pub fn diagonal(&self, k: usize) -> &ComplexVector {
        &self.diagonals[k]
    }

    /// Ω_k as a dense diagonal matrix.
    pub fn omega(&self, k: usize) -> ComplexMatrix {
        ComplexMatrix::from_diagonal(&self.diagonals[k])
    }
}

#[derive(Debug, Clone)]
pub struct SoundingRecord {
    /// `MK × T`, blocks stacked vertically.
    pub y_h: ComplexMatrix,
    /// `N_CB × TK`, blocks side by side.
    pub y: ComplexMatrix,
    /// `MK × N_R` stacked row selection.
    pub w_h: ComplexMatrix,
    pub w_b: ComplexMatrix,
    pub x: ComplexMatrix,
    pub schedule: PhaseSchedule,
    pub beta1: f64,
    pub beta2: f64,
}

/// How the active RIS elements are placed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivePlacement {
    #[default]
    Random,
    First,
}

fn random_phase<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * PI))
}

/// Unit-modulus random-phase pilots scaled so each column has unit norm.
pub fn make_training_matrix<R: Rng + ?Sized>(n_m: usize, t: usize, rng: &mut R) -> ComplexMatrix {
    let s = 1.0 / (n_m as f64).sqrt();
    ComplexMatrix::from_fn(n_m, t, |_, _| random_phase(rng) * s)
}

/// Analog combiner with entries `exp(jψ)/√N_B`.
pub fn make_combiner<R: Rng + ?Sized>(n_b: usize, n_cb: usize, rng: &mut R) -> ComplexMatrix {
    let s = 1.0 / (n_b as f64).sqrt();
    ComplexMatrix::from_fn(n_b, n_cb, |_, _| random_phase(rng) * s)
}

/// `M` distinct element indices in ascending order.
pub fn make_active_set<R: Rng + ?Sized>(
    n_r: usize,
    m: usize,
    placement: ActivePlacement,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if m > n_r {
        return Err(Error::Config(format!("cannot activate {m} of {n_r} elements")));
    }
    let mut set = match placement {
        ActivePlacement::First => (0..m).collect(),
        ActivePlacement::Random => sample(rng, n_r, m).into_vec(),
    };
    set.sort_unstable();
    Ok(set)
}

pub fn make_phase_schedule<R: Rng + ?Sized>(
    n_r: usize,
    k: usize,
    active_set: &[usize],
    rng: &mut R,
) -> PhaseSchedule {
    let mut active = vec![false; n_r];
    for &i in active_set {
        active[i] = true;
    }
    let diagonals = (0..k)
        .map(|_| {
            ComplexVector::from_fn(n_r, |i, _| if active[i] { ZERO } else { random_phase(rng) })
        })
        .collect();
    PhaseSchedule {
        diagonals,
        active_set: active_set.to_vec(),
    }
}

/// `K` stacked copies of the rows of `I_{N_R}` indexed by the active set.
pub fn selection_matrix(n_r: usize, active_set: &[usize], k: usize) -> ComplexMatrix {
    let m = active_set.len();
    let mut w = ComplexMatrix::zeros(m * k, n_r);
    for b in 0..k {
        for (r, &i) in active_set.iter().enumerate() {
            w[(b * m + r, i)] = ONE;
        }
    }
    w
}

fn noise<R: Rng + ?Sized>(rows: usize, cols: usize, sigma2: f64, rng: &mut R) -> ComplexMatrix {
    if sigma2 == 0.0 {
        return ComplexMatrix::zeros(rows, cols);
    }
    let s = sigma2.sqrt();
    ComplexMatrix::from_fn(rows, cols, |_, _| complex_normal(rng) * s)
}

fn check_shape(name: &str, m: &ComplexMatrix, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

/// `[Ω_1 H X, …, Ω_K H X]`, the RIS output seen by the BS over all blocks.
pub fn reflected_sequence(schedule: &PhaseSchedule, h_mr: &ComplexMatrix, x: &ComplexMatrix) -> ComplexMatrix {
    let hx = h_mr * x;
    let (n_r, t) = hx.shape();
    let mut u = ComplexMatrix::zeros(n_r, t * schedule.blocks());
    for k in 0..schedule.blocks() {
        let d = schedule.diagonal(k);
        for c in 0..t {
            for r in 0..n_r {
                u[(r, k * t + c)] = d[r] * hx[(r, c)];
            }
        }
    }
    u
}

/// Synthesizes the RIS and BS observations of one hybrid training round.
#[allow(clippy::too_many_arguments)]
pub fn sound_hybrid<R: Rng + ?Sized>(
    cfg: &SoundingConfig,
    h_mr: &ComplexMatrix,
    h_rb: &ComplexMatrix,
    schedule: &PhaseSchedule,
    x: &ComplexMatrix,
    w_b: &ComplexMatrix,
    (beta1, beta2): (f64, f64),
    rng: &mut R,
) -> Result<SoundingRecord> {
    cfg.validate()?;
    check_shape("H_MR", h_mr, cfg.n_r, cfg.n_m)?;
    check_shape("H_RB", h_rb, cfg.n_b, cfg.n_r)?;
    check_shape("X", x, cfg.n_m, cfg.t)?;
    check_shape("W_B", w_b, cfg.n_b, cfg.n_cb)?;
    if schedule.blocks() != cfg.k || schedule.active_set().len() != cfg.m {
        return Err(Error::Dimension(format!(
            "schedule has {} blocks and {} active elements, config wants {} and {}",
            schedule.blocks(),
            schedule.active_set().len(),
            cfg.k,
            cfg.m
        )));
    }
    let (m, t, k) = (cfg.m, cfg.t, cfg.k);
    let sqrt_p = cfg.p_t.sqrt();
    let sel = selection_matrix(cfg.n_r, schedule.active_set(), 1);
    let hx = h_mr * x;
    let w_bh = w_b.adjoint();

    let mut y_h = ComplexMatrix::zeros(m * k, t);
    let mut y = ComplexMatrix::zeros(cfg.n_cb, t * k);
    let clean_h = &sel * &hx * Complex64::new(sqrt_p * beta1, 0.0);
    for b in 0..k {
        let z1 = noise(cfg.n_r, t, cfg.sigma2, rng);
        let block = &clean_h + &sel * z1;
        y_h.view_mut((b * m, 0), (m, t)).copy_from(&block);

        let omega = schedule.omega(b);
        let z2 = noise(cfg.n_b, t, cfg.sigma2, rng);
        let block = &w_bh * h_rb * omega * &hx * Complex64::new(sqrt_p * beta2, 0.0) + &w_bh * z2;
        y.view_mut((0, b * t), (cfg.n_cb, t)).copy_from(&block);
    }
    Ok(SoundingRecord {
        y_h,
        y,
        w_h: selection_matrix(cfg.n_r, schedule.active_set(), k),
        w_b: w_b.clone(),
        x: x.clone(),
        schedule: schedule.clone(),
        beta1,
        beta2,
    })
}

/// Received blocks of a fully passive RIS: `√P_T β₂ W_kᴴ H_RB Ω_k H_MR X_k + W_kᴴ Z_k`.
#[allow(clippy::too_many_arguments)]
pub fn sound_passive<R: Rng + ?Sized>(
    p_t: f64,
    sigma2: f64,
    beta2: f64,
    h_mr: &ComplexMatrix,
    h_rb: &ComplexMatrix,
    omegas: &[ComplexVector],
    xs: &[ComplexMatrix],
    ws: &[ComplexMatrix],
    rng: &mut R,
) -> Result<Vec<ComplexMatrix>> {
    if omegas.len() != xs.len() || omegas.len() != ws.len() {
        return Err(Error::Dimension("per-block schedules differ in length".into()));
    }
    let n_r = h_mr.nrows();
    if h_rb.ncols() != n_r {
        return Err(Error::Dimension("H_RB and H_MR do not chain".into()));
    }
    let scale = Complex64::new(p_t.sqrt() * beta2, 0.0);
    let mut out = Vec::with_capacity(omegas.len());
    for ((d, x), w) in omegas.iter().zip(xs).zip(ws) {
        if d.len() != n_r || x.nrows() != h_mr.ncols() || w.nrows() != h_rb.nrows() {
            return Err(Error::Dimension("passive block dimensions inconsistent".into()));
        }
        if d.iter().any(|z| (z.norm() - 1.0).abs() > 1e-12) {
            return Err(Error::Structure("passive RIS phases must be unit-modulus".into()));
        }
        let omega = ComplexMatrix::from_diagonal(d);
        let wh = w.adjoint();
        let z = noise(h_rb.nrows(), x.ncols(), sigma2, rng);
        out.push(&wh * h_rb * omega * h_mr * x * scale + &wh * z);
    }
    Ok(out)
}

/// Hybrid training overhead `K T ⌈N_CB/N_RFB⌉ ⌈M/N_RFR⌉` in channel uses.
pub fn overhead_hybrid(cfg: &SoundingConfig) -> usize {
    cfg.k * cfg.t * cfg.n_cb.div_ceil(cfg.n_rfb) * cfg.m.div_ceil(cfg.n_rfr)
}

/// Passive training overhead `N0 ⌈M0/N_RFB⌉ + T L_MR ⌈L_RB/N_RFB⌉`.
pub fn overhead_passive(n0_beams: usize, m0: usize, t: usize, l_mr: usize, l_rb: usize, n_rfb: usize) -> usize {
    n0_beams * m0.div_ceil(n_rfb) + t * l_mr * l_rb.div_ceil(n_rfb)
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

pub fn watts_to_dbm(w: f64) -> f64 {
    10.0 * w.log10() + 30.0
}

/// Noise power in watts from a density in dBm/Hz over bandwidth `b_hz`.
pub fn noise_power(n0_dbm_per_hz: f64, b_hz: f64) -> Result<f64> {
    if !(b_hz > 0.0) {
        return Err(Error::Config(format!("bandwidth must be positive, got {b_hz}")));
    }
    Ok(dbm_to_watts(n0_dbm_per_hz + 10.0 * b_hz.log10()))
}
