//! Estimation error and effective spectral efficiency.

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Per-trial outcome used by the aggregate metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialRecord {
    /// `‖θ_MR − θ̂_MR‖²/L_MR`, and likewise below.
    pub se_theta_mr: f64,
    pub se_phi_mr: f64,
    pub se_rho_mr: f64,
    pub se_theta_rb: f64,
    pub se_phi_rb: f64,
    pub se_rho_rb: f64,
    pub se_delta: f64,
    /// `|wᴴĤf|²` at the receiver.
    pub bf_gain: f64,
    /// `wᴴ H_e f`.
    pub channel_error: Complex64,
    pub t_h: usize,
    pub t_c: usize,
}

/// `‖truth − est‖²/L` for angles (radians²).
pub fn trial_error(est: &[f64], truth: &[f64]) -> Result<f64> {
    check(est.len(), truth.len())?;
    Ok(est.iter().zip(truth).map(|(e, t)| (t - e).powi(2)).sum::<f64>() / est.len() as f64)
}

/// Sine-domain variant of [`trial_error`].
pub fn trial_error_sine(est: &[f64], truth: &[f64]) -> Result<f64> {
    check(est.len(), truth.len())?;
    Ok(est.iter().zip(truth).map(|(e, t)| (t.sin() - e.sin()).powi(2)).sum::<f64>() / est.len() as f64)
}

/// `‖truth − est‖²/L` for complex gains.
pub fn trial_error_complex(est: &[Complex64], truth: &[Complex64]) -> Result<f64> {
    check(est.len(), truth.len())?;
    Ok(est.iter().zip(truth).map(|(e, t)| (t - e).norm_sqr()).sum::<f64>() / est.len() as f64)
}

fn check(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} estimates against {b} true values")));
    }
    if a == 0 {
        return Err(Error::Dimension("empty parameter list".into()));
    }
    Ok(())
}

/// Trial average of per-trial errors.
pub fn mse(per_trial: &[f64]) -> f64 {
    if per_trial.is_empty() {
        return f64::NAN;
    }
    per_trial.iter().sum::<f64>() / per_trial.len() as f64
}

/// `(T_c − T_H)/T_c`.
pub fn training_prefactor(t_c: usize, t_h: usize) -> Result<f64> {
    if t_h >= t_c {
        return Err(Error::Config(format!("training length {t_h} leaves no data in coherence time {t_c}")));
    }
    Ok((t_c - t_h) as f64 / t_c as f64)
}

/// Unbiased sample variance of complex samples; zero for fewer than two.
pub fn complex_sample_variance(xs: &[Complex64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<Complex64>() / n as f64;
    xs.iter().map(|x| (x - mean).norm_sqr()).sum::<f64>() / (n - 1) as f64
}

/// Per-trial rate `log₂(1 + gain/(σ² + var))`, before the training prefactor.
pub fn trial_rate(bf_gain: f64, sigma2: f64, error_var: f64) -> f64 {
    (1.0 + bf_gain / (sigma2 + error_var)).log2()
}

/// Average effective spectral efficiency in bits/s/Hz.
pub fn effective_se(trials: &[TrialRecord], sigma2: f64, t_c: usize, t_h: usize) -> Result<f64> {
    let pre = training_prefactor(t_c, t_h)?;
    if trials.is_empty() {
        return Ok(f64::NAN);
    }
    let errs: Vec<Complex64> = trials.iter().map(|t| t.channel_error).collect();
    let var = complex_sample_variance(&errs);
    let rates: Vec<f64> = trials.iter().map(|t| trial_rate(t.bf_gain, sigma2, var)).collect();
    Ok(pre * mse(&rates))
}
