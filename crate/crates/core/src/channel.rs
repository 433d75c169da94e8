//! Geometric mmWave channels over half-wavelength ULAs.
//!
//! A hop with `L` paths is `H = A(φ) diag(ρ) Aᴴ(θ)`, where θ are departure
//! angles at the transmitting array, φ arrival angles at the receiving array,
//! and the columns of `A` are steering vectors evaluated at `sin(angle)`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ComplexMatrix, ComplexVector, ZERO};

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 3.0e8;

/// Rejection-sampling budget before a scene is declared infeasible.
const MAX_SCENE_DRAWS: usize = 100_000;

/// Parameters of one propagation hop.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSet {
    /// Departure angles θ (radians).
    pub aod: Vec<f64>,
    /// Arrival angles φ (radians).
    pub aoa: Vec<f64>,
    pub gains: Vec<Complex64>,
}

impl PathSet {
    pub fn new(aod: Vec<f64>, aoa: Vec<f64>, gains: Vec<Complex64>) -> Result<Self> {
        if aod.len() != aoa.len() || aod.len() != gains.len() {
            return Err(Error::Dimension(format!(
                "path set lengths differ: {} AoDs, {} AoAs, {} gains",
                aod.len(),
                aoa.len(),
                gains.len()
            )));
        }
        Ok(Self { aod, aoa, gains })
    }

    pub fn len(&self) -> usize {
        self.gains.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gains.is_empty()
    }

    /// Spatial frequencies `sin θ`.
    pub fn aod_freqs(&self) -> Vec<f64> {
        self.aod.iter().map(|a| a.sin()).collect()
    }

    /// Spatial frequencies `sin φ`.
    pub fn aoa_freqs(&self) -> Vec<f64> {
        self.aoa.iter().map(|a| a.sin()).collect()
    }
}

/// Horizontal layout of BS, RIS and MS.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Topology {
    /// BS-MS horizontal distance (m).
    pub d_t: f64,
    /// RIS-MS horizontal offset (m).
    pub d_x: f64,
    /// RIS lateral offset (m).
    pub d_y: f64,
}

impl Default for Topology {
    fn default() -> Self {
        Self {
            d_t: 22.0,
            d_x: 15.0,
            d_y: 2.0,
        }
    }
}

impl Topology {
    /// MS-RIS distance.
    pub fn d1(&self) -> f64 {
        self.d_x.hypot(self.d_y)
    }

    /// RIS-BS distance.
    pub fn d2(&self) -> f64 {
        (self.d_t - self.d_x).hypot(self.d_y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PathLossModel {
    /// Reference distance (m).
    pub d0: f64,
    pub gamma: f64,
    /// Carrier frequency (Hz).
    pub fc: f64,
}

impl Default for PathLossModel {
    fn default() -> Self {
        Self {
            d0: 1.0,
            gamma: 3.0,
            fc: 28.0e9,
        }
    }
}

impl PathLossModel {
    pub fn wavelength(&self) -> f64 {
        SPEED_OF_LIGHT / self.fc
    }

    /// Power loss at the reference distance, `(λ / 4π d0)²`.
    pub fn beta0(&self) -> f64 {
        (self.wavelength() / (4.0 * PI * self.d0)).powi(2)
    }

    /// Power loss of a single hop of length `d1`.
    pub fn single_hop(&self, d1: f64) -> f64 {
        self.beta0() * (self.d0 / d1).powf(self.gamma)
    }

    /// Power loss of the reflected route `d1` then `d2`.
    pub fn two_hop(&self, d1: f64, d2: f64) -> f64 {
        self.beta0() * (self.d0 / (d1 * d2)).powf(self.gamma)
    }
}

/// `α(f)[n] = exp(jπ n f)` for `n = 0..N`.
pub fn steering(n: usize, f: f64) -> ComplexVector {
    ComplexVector::from_fn(n, |k, _| Complex64::from_polar(1.0, PI * k as f64 * f))
}

/// `α̃(f)[n] = n · exp(jπ n f)`; the angular derivative of `α(sin x)` is
/// `jπ cos(x) α̃(sin x)`.
pub fn steering_derivative(n: usize, f: f64) -> ComplexVector {
    ComplexVector::from_fn(n, |k, _| {
        Complex64::from_polar(k as f64, PI * k as f64 * f)
    })
}

/// Steering matrix with one column per angle, evaluated at `sin(angle)`.
pub fn steering_matrix(n: usize, angles: &[f64]) -> ComplexMatrix {
    let mut a = ComplexMatrix::zeros(n, angles.len());
    for (c, ang) in angles.iter().enumerate() {
        a.set_column(c, &steering(n, ang.sin()));
    }
    a
}

/// `H = A_rx(φ) diag(ρ) A_txᴴ(θ)`, `n_rx × n_tx`.
pub fn synth_channel(p: &PathSet, n_rx: usize, n_tx: usize) -> ComplexMatrix {
    let mut a_rx = steering_matrix(n_rx, &p.aoa);
    for (c, g) in p.gains.iter().enumerate() {
        for v in a_rx.column_mut(c).iter_mut() {
            *v *= g;
        }
    }
    a_rx * steering_matrix(n_tx, &p.aod).adjoint()
}

/// End-to-end channel `H_RB Ω H_MR`.
pub fn cascade(h_rb: &ComplexMatrix, omega: &ComplexMatrix, h_mr: &ComplexMatrix) -> Result<ComplexMatrix> {
    let n_r = omega.nrows();
    if omega.ncols() != n_r || h_rb.ncols() != n_r || h_mr.nrows() != n_r {
        return Err(Error::Dimension(format!(
            "cascade needs H_RB ({}x{}), Ω ({}x{}), H_MR ({}x{}) to chain",
            h_rb.nrows(),
            h_rb.ncols(),
            omega.nrows(),
            omega.ncols(),
            h_mr.nrows(),
            h_mr.ncols()
        )));
    }
    for i in 0..n_r {
        for j in 0..n_r {
            if i != j && omega[(i, j)] != ZERO {
                return Err(Error::Structure("phase matrix must be diagonal".into()));
            }
        }
    }
    Ok(h_rb * omega * h_mr)
}

/// `G = diag(ρ_RB) Aᴴ(θ_RB) diag(ω) A(φ_MR) diag(ρ_MR)`, `L_RB × L_MR`.
pub fn effective_channel(
    rho_rb: &[Complex64],
    theta_rb: &[f64],
    omega: &[Complex64],
    phi_mr: &[f64],
    rho_mr: &[Complex64],
) -> Result<ComplexMatrix> {
    if rho_rb.len() != theta_rb.len() || rho_mr.len() != phi_mr.len() {
        return Err(Error::Dimension("gain and angle lists differ in length".into()));
    }
    let n_r = omega.len();
    let a_rb = steering_matrix(n_r, theta_rb);
    let a_mr = steering_matrix(n_r, phi_mr);
    let mut g = ComplexMatrix::zeros(rho_rb.len(), rho_mr.len());
    for p in 0..rho_rb.len() {
        for l in 0..rho_mr.len() {
            let mut acc = ZERO;
            for n in 0..n_r {
                acc += a_rb[(n, p)].conj() * omega[n] * a_mr[(n, l)];
            }
            g[(p, l)] = rho_rb[p] * acc * rho_mr[l];
        }
    }
    Ok(g)
}

/// One CN(0, 1) draw.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

fn separated(freqs: &[f64], min_sep: f64) -> bool {
    for i in 0..freqs.len() {
        for j in i + 1..freqs.len() {
            if (freqs[i] - freqs[j]).abs() < min_sep {
                return false;
            }
        }
    }
    true
}

fn draw_angles<R: Rng + ?Sized>(rng: &mut R, l: usize, min_sep: f64) -> Result<Vec<f64>> {
    for _ in 0..MAX_SCENE_DRAWS {
        let angles: Vec<f64> = (0..l).map(|_| rng.random_range(0.0..PI)).collect();
        let freqs: Vec<f64> = angles.iter().map(|a| a.sin()).collect();
        if separated(&freqs, min_sep) {
            return Ok(angles);
        }
    }
    Err(Error::Config(format!(
        "could not place {l} paths with spatial separation {min_sep}"
    )))
}

/// Draws a hop whose AoD frequencies are `min_sep_tx` apart and AoA frequencies
/// `min_sep_rx` apart, with i.i.d. CN(0, 1) gains.
pub fn sample_scene<R: Rng + ?Sized>(
    rng: &mut R,
    l: usize,
    min_sep_tx: f64,
    min_sep_rx: f64,
) -> Result<PathSet> {
    if l == 0 {
        return Err(Error::Config("path count must be positive".into()));
    }
    for sep in [min_sep_tx, min_sep_rx] {
        if !(sep >= 0.0) || l as f64 * sep >= 1.0 {
            return Err(Error::Config(format!(
                "{l} paths cannot be separated by {sep} in spatial frequency"
            )));
        }
    }
    let aod = draw_angles(rng, l, min_sep_tx)?;
    let aoa = draw_angles(rng, l, min_sep_rx)?;
    let gains = (0..l).map(|_| complex_normal(rng)).collect();
    PathSet::new(aod, aoa, gains)
}

/// [`sample_scene`] with the default `4/N` separation on each array.
pub fn sample_scene_for_arrays<R: Rng + ?Sized>(
    rng: &mut R,
    l: usize,
    n_tx: usize,
    n_rx: usize,
) -> Result<PathSet> {
    sample_scene(rng, l, 4.0 / n_tx as f64, 4.0 / n_rx as f64)
}

/// Amplitude scales `(β₁, β₂) = (√β(d₁), √β(d₁, d₂))`.
pub fn path_loss(top: &Topology, m: &PathLossModel) -> Result<(f64, f64)> {
    let (d1, d2) = (top.d1(), top.d2());
    if !(d1 > 0.0 && d2 > 0.0) {
        return Err(Error::Config(format!(
            "hop distances must be positive, got d1={d1}, d2={d2}"
        )));
    }
    Ok((m.single_hop(d1).sqrt(), m.two_hop(d1, d2).sqrt()))
}
