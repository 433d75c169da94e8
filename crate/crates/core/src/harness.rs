//! Monte Carlo experiment runner.
//!
//! A run sweeps transmit power and RIS position, draws independent scenes per
//! trial, estimates both hops, designs the RIS phases and beamformers, and
//! writes one CSV row per successful trial. Trials run in parallel; each owns
//! a ChaCha substream keyed by `(grid index, trial index)`, so outputs are
//! byte-identical for a given seed regardless of scheduling.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anm::TraceRow;
use crate::channel::{cascade, path_loss, sample_scene_for_arrays, synth_channel, PathLossModel, PathSet, Topology};
use crate::control::{design_beamformers, design_phases, random_phases};
use crate::crlb::{fim_stage1, fim_stage2, mean_bound, u_tilde, ParamClass};
use crate::error::{Error, Result};
use crate::estimation::{angle_differences, delta_vector, two_stage_estimate, EstimationResult, EstimatorOptions, Truth};
use crate::metrics::{complex_sample_variance, mse, training_prefactor, trial_error, trial_error_complex, trial_rate};
use crate::numerics::{ComplexMatrix, ComplexVector};
use crate::sounding::{
    dbm_to_watts, make_active_set, make_combiner, make_phase_schedule, make_training_matrix, noise_power,
    overhead_hybrid, sound_hybrid, ActivePlacement, Setup, SoundingConfig, SoundingRecord,
};

/// Schema tag written as the first line of every result CSV.
pub const CSV_VERSION: &str = "# ris-anm-sim v1";

pub const CSV_COLUMNS: [&str; 19] = [
    "setup",
    "p_t_dbm",
    "d_x_m",
    "trial",
    "mse_theta_mr",
    "mse_phi_mr",
    "mse_rho_mr",
    "mse_theta_rb",
    "mse_phi_rb",
    "mse_rho_rb",
    "mse_delta",
    "se_bits",
    "crlb_theta_mr",
    "crlb_phi_mr",
    "crlb_rho_mr",
    "crlb_theta_rb",
    "crlb_phi_rb",
    "crlb_rho_rb",
    "status",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SetupChoice {
    Setup1,
    Setup2,
    Setup3,
    Setup4,
    Custom,
}

impl SetupChoice {
    pub fn name(self) -> &'static str {
        match self {
            SetupChoice::Setup1 => "setup1",
            SetupChoice::Setup2 => "setup2",
            SetupChoice::Setup3 => "setup3",
            SetupChoice::Setup4 => "setup4",
            SetupChoice::Custom => "custom",
        }
    }

    fn preset(self) -> Option<Setup> {
        match self {
            SetupChoice::Setup1 => Some(Setup::Setup1),
            SetupChoice::Setup2 => Some(Setup::Setup2),
            SetupChoice::Setup3 => Some(Setup::Setup3),
            SetupChoice::Setup4 => Some(Setup::Setup4),
            SetupChoice::Custom => None,
        }
    }
}

/// Everything a run needs. Loaded from the `[setup]` table of a TOML file;
/// omitted keys take the defaults below.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setup: SetupChoice,
    pub n_b: Option<usize>,
    pub n_r: Option<usize>,
    pub n_m: Option<usize>,
    pub m: Option<usize>,
    pub k: Option<usize>,
    pub t: Option<usize>,
    pub n_cb: Option<usize>,
    pub n_rfb: Option<usize>,
    pub n_rfr: Option<usize>,
    pub p_t_dbm: Vec<f64>,
    pub d_t: f64,
    pub d_x: Vec<f64>,
    pub d_y: f64,
    pub trials: usize,
    pub seed: u64,
    pub l_mr: usize,
    pub l_rb: usize,
    pub noise_dbm_per_hz: f64,
    pub bandwidth_hz: f64,
    pub carrier_hz: f64,
    pub path_loss_exponent: f64,
    pub coherence_time: usize,
    pub c_tau: f64,
    pub c_nu: f64,
    pub active_placement: ActivePlacement,
    /// Use `W_B = I` instead of random-phase combining (needs `N_CB = N_B`).
    pub identity_combiner: bool,
    pub crlb: bool,
    /// Sound without noise.
    pub noiseless_oracle: bool,
    /// Also evaluate the rate with random RIS phases.
    pub phase_design_baseline: bool,
    pub crlb_only: bool,
    pub trace_solver: bool,
    pub max_iter: usize,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            setup: SetupChoice::Setup1,
            n_b: None,
            n_r: None,
            n_m: None,
            m: None,
            k: None,
            t: None,
            n_cb: None,
            n_rfb: None,
            n_rfr: None,
            p_t_dbm: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            d_t: 22.0,
            d_x: vec![15.0],
            d_y: 2.0,
            trials: 100,
            seed: 1,
            l_mr: 2,
            l_rb: 2,
            noise_dbm_per_hz: -173.0,
            bandwidth_hz: 100e6,
            carrier_hz: 28e9,
            path_loss_exponent: 3.0,
            coherence_time: 500,
            c_tau: 1.0,
            c_nu: 1.0,
            active_placement: ActivePlacement::Random,
            identity_combiner: false,
            crlb: true,
            noiseless_oracle: false,
            phase_design_baseline: false,
            crlb_only: false,
            trace_solver: false,
            max_iter: 50_000,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    setup: ExperimentConfig,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let file: ConfigFile = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        file.setup.validate()?;
        Ok(file.setup)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&s)
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            setup: &'a ExperimentConfig,
        }
        toml::to_string(&Out { setup: self }).expect("config serializes")
    }

    /// Array and training sizes at transmit power `p_t` (W).
    pub fn sounding(&self, p_t: f64) -> Result<SoundingConfig> {
        let sigma2 = if self.noiseless_oracle {
            0.0
        } else {
            noise_power(self.noise_dbm_per_hz, self.bandwidth_hz)?
        };
        let base = match self.setup.preset() {
            Some(s) => s.config(p_t, sigma2),
            None => {
                let need = |v: Option<usize>, name: &str| {
                    v.ok_or_else(|| Error::Config(format!("custom setup needs `{name}`")))
                };
                SoundingConfig {
                    n_b: need(self.n_b, "n_b")?,
                    n_r: need(self.n_r, "n_r")?,
                    n_m: need(self.n_m, "n_m")?,
                    m: need(self.m, "m")?,
                    k: need(self.k, "k")?,
                    t: need(self.t, "t")?,
                    n_cb: need(self.n_cb, "n_cb")?,
                    n_rfb: need(self.n_rfb, "n_rfb")?,
                    n_rfr: need(self.n_rfr, "n_rfr")?,
                    p_t,
                    sigma2,
                }
            }
        };
        let cfg = SoundingConfig {
            n_b: self.n_b.unwrap_or(base.n_b),
            n_r: self.n_r.unwrap_or(base.n_r),
            n_m: self.n_m.unwrap_or(base.n_m),
            m: self.m.unwrap_or(base.m),
            k: self.k.unwrap_or(base.k),
            t: self.t.unwrap_or(base.t),
            n_cb: self.n_cb.unwrap_or(base.n_cb),
            n_rfb: self.n_rfb.unwrap_or(base.n_rfb),
            n_rfr: self.n_rfr.unwrap_or(base.n_rfr),
            ..base
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn path_loss_model(&self) -> PathLossModel {
        PathLossModel {
            fc: self.carrier_hz,
            gamma: self.path_loss_exponent,
            ..PathLossModel::default()
        }
    }

    pub fn topology(&self, d_x: f64) -> Topology {
        Topology {
            d_t: self.d_t,
            d_x,
            d_y: self.d_y,
        }
    }

    pub fn estimator(&self) -> EstimatorOptions {
        let mut o = EstimatorOptions {
            c_tau: self.c_tau,
            c_nu: self.c_nu,
            ..EstimatorOptions::default()
        };
        o.solver.trace = self.trace_solver;
        o.solver.max_iter = self.max_iter;
        o
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.p_t_dbm.is_empty() || self.d_x.is_empty() {
            return bad("power and distance sweeps must be nonempty".into());
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.p_t_dbm.iter().chain(&self.d_x).any(|v| !v.is_finite()) {
            return bad("sweep values must be finite".into());
        }
        let cfg = self.sounding(1.0)?;
        for (l, n, what) in [
            (self.l_mr, cfg.n_m, "MS"),
            (self.l_mr, cfg.n_r, "RIS"),
            (self.l_rb, cfg.n_r, "RIS"),
            (self.l_rb, cfg.n_b, "BS"),
        ] {
            if l == 0 || 4 * l >= n {
                return bad(format!("{l} paths cannot be 4/N-separated on the {n}-element {what} array"));
            }
            if l >= n {
                return bad(format!("{l} paths exceed the {n}-element {what} array"));
            }
        }
        if self.identity_combiner && cfg.n_cb != cfg.n_b {
            return bad("identity combiner needs n_cb equal to n_b".into());
        }
        training_prefactor(self.coherence_time, overhead_hybrid(&cfg))?;
        for &d_x in &self.d_x {
            path_loss(&self.topology(d_x), &self.path_loss_model())?;
        }
        if !(self.c_tau >= 0.0 && self.c_nu >= 0.0) {
            return bad("regularization constants must be non-negative".into());
        }
        if self.max_iter == 0 {
            return bad("max_iter must be positive".into());
        }
        Ok(())
    }

    /// `(P_T dBm, d_x)` pairs, power-major.
    pub fn grid(&self) -> Vec<GridPoint> {
        let mut out = Vec::new();
        for &p in &self.p_t_dbm {
            for &d in &self.d_x {
                out.push(GridPoint {
                    index: out.len(),
                    p_t_dbm: p,
                    d_x: d,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub index: usize,
    pub p_t_dbm: f64,
    pub d_x: f64,
}

/// Substream of `seed` for one trial at one grid point.
pub fn trial_rng(seed: u64, grid: usize, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((grid as u64) << 32) | trial as u64);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Degenerate,
    CrlbOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub setup: String,
    pub p_t_dbm: f64,
    pub d_x_m: f64,
    pub trial: usize,
    pub mse_theta_mr: f64,
    pub mse_phi_mr: f64,
    pub mse_rho_mr: f64,
    pub mse_theta_rb: f64,
    pub mse_phi_rb: f64,
    pub mse_rho_rb: f64,
    pub mse_delta: f64,
    pub se_bits: f64,
    pub crlb_theta_mr: f64,
    pub crlb_phi_mr: f64,
    pub crlb_rho_mr: f64,
    pub crlb_theta_rb: f64,
    pub crlb_phi_rb: f64,
    pub crlb_rho_rb: f64,
    pub status: Status,
}

/// One drawn scene with its sounding.
#[derive(Debug, Clone)]
pub struct Scene {
    pub cfg: SoundingConfig,
    pub mr: PathSet,
    pub rb: PathSet,
    pub h_mr: ComplexMatrix,
    pub h_rb: ComplexMatrix,
    pub record: SoundingRecord,
}

/// Draws paths, pilots, phases and noise for one trial.
pub fn draw_scene(config: &ExperimentConfig, point: &GridPoint, rng: &mut ChaCha8Rng) -> Result<Scene> {
    let cfg = config.sounding(dbm_to_watts(point.p_t_dbm))?;
    let betas = path_loss(&config.topology(point.d_x), &config.path_loss_model())?;
    let mr = sample_scene_for_arrays(rng, config.l_mr, cfg.n_m, cfg.n_r)?;
    let rb = sample_scene_for_arrays(rng, config.l_rb, cfg.n_r, cfg.n_b)?;
    let h_mr = synth_channel(&mr, cfg.n_r, cfg.n_m);
    let h_rb = synth_channel(&rb, cfg.n_b, cfg.n_r);
    let active = make_active_set(cfg.n_r, cfg.m, config.active_placement, rng)?;
    let schedule = make_phase_schedule(cfg.n_r, cfg.k, &active, rng);
    let x = make_training_matrix(cfg.n_m, cfg.t, rng);
    let w_b = if config.identity_combiner {
        ComplexMatrix::identity(cfg.n_b, cfg.n_b)
    } else {
        make_combiner(cfg.n_b, cfg.n_cb, rng)
    };
    let record = sound_hybrid(&cfg, &h_mr, &h_rb, &schedule, &x, &w_b, betas, rng)?;
    Ok(Scene {
        cfg,
        mr,
        rb,
        h_mr,
        h_rb,
        record,
    })
}

/// Path-averaged CRLBs `(θ_MR, φ_MR, ρ_MR, θ_RB, φ_RB, ρ_RB)`.
pub fn scene_bounds(scene: &Scene) -> Result<[f64; 6]> {
    let cfg = &scene.cfg;
    if cfg.sigma2 == 0.0 {
        return Ok([f64::NAN; 6]);
    }
    let rec = &scene.record;
    let s1 = cfg.p_t.sqrt() * rec.beta1;
    let s2 = cfg.p_t.sqrt() * rec.beta2;
    let f1 = fim_stage1(&scene.mr, &rec.x, &rec.w_h, s1, cfg.sigma2)?;
    let u = u_tilde(&rec.schedule, &scene.h_mr, &rec.x);
    let f2 = fim_stage2(&scene.rb, &u, &rec.w_b, s2, cfg.sigma2)?;
    Ok([
        mean_bound(&f1, ParamClass::Aod),
        mean_bound(&f1, ParamClass::Aoa),
        mean_bound(&f1, ParamClass::Gain),
        mean_bound(&f2, ParamClass::Aod),
        mean_bound(&f2, ParamClass::Aoa),
        mean_bound(&f2, ParamClass::Gain),
    ])
}

/// Received beamforming gain and error scalar for RIS phases `omega`.
fn link(scene: &Scene, est: &EstimationResult, omega: &ComplexVector) -> Result<(f64, Complex64)> {
    let diag = ComplexMatrix::from_diagonal(omega);
    let amp = Complex64::new(scene.cfg.p_t.sqrt() * scene.record.beta2, 0.0);
    let h_hat = cascade(&est.h_rb_hat, &diag, &est.h_mr_hat)? * amp;
    let h_true = cascade(&scene.h_rb, &diag, &scene.h_mr)? * amp;
    let (w, f) = match design_beamformers(&h_hat) {
        Ok(v) => v,
        Err(Error::Degenerate(_)) => {
            let mut w = ComplexVector::zeros(h_hat.nrows());
            let mut f = ComplexVector::zeros(h_hat.ncols());
            w[0] = Complex64::new(1.0, 0.0);
            f[0] = Complex64::new(1.0, 0.0);
            (w, f)
        }
        Err(e) => return Err(e),
    };
    let gain = w.dotc(&(&h_hat * &f)).norm_sqr();
    let err = w.dotc(&((h_true - &h_hat) * &f));
    Ok((gain, err))
}

/// Everything measured in one trial, before grid-level aggregation.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub grid: usize,
    pub trial: usize,
    pub errors: [f64; 7],
    pub bounds: [f64; 6],
    pub bf_gain: f64,
    pub channel_error: Complex64,
    pub random_gain: f64,
    pub random_error: Complex64,
    pub status: Status,
    pub estimate: Option<EstimationResult>,
}

impl TrialOutcome {
    /// Solver traces of both stages, empty unless tracing was enabled.
    pub fn traces(&self) -> (&[TraceRow], &[TraceRow]) {
        match &self.estimate {
            Some(e) => (&e.stage1.trace, &e.stage2.trace),
            None => (&[], &[]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialFailure {
    pub grid: usize,
    pub trial: usize,
    pub p_t_dbm: f64,
    pub d_x: f64,
    pub message: String,
}

/// Runs one trial end to end.
pub fn run_trial(config: &ExperimentConfig, point: &GridPoint, trial: usize) -> Result<TrialOutcome> {
    let mut rng = trial_rng(config.seed, point.index, trial);
    let scene = draw_scene(config, point, &mut rng)?;
    let bounds = if config.crlb || config.crlb_only {
        scene_bounds(&scene)?
    } else {
        [f64::NAN; 6]
    };
    if config.crlb_only {
        return Ok(TrialOutcome {
            grid: point.index,
            trial,
            errors: [f64::NAN; 7],
            bounds,
            bf_gain: f64::NAN,
            channel_error: Complex64::new(f64::NAN, f64::NAN),
            random_gain: f64::NAN,
            random_error: Complex64::new(f64::NAN, f64::NAN),
            status: Status::CrlbOnly,
            estimate: None,
        });
    }
    let truth = Truth {
        mr: &scene.mr,
        rb: &scene.rb,
    };
    let est = two_stage_estimate(&scene.record, &scene.cfg, config.l_mr, config.l_rb, Some(truth), &config.estimator())?;
    let true_delta = delta_vector(&angle_differences(&scene.mr.aoa, &scene.rb.aod));
    let est_delta = delta_vector(&est.delta_hat);
    let errors = [
        trial_error(&est.theta_mr, &scene.mr.aod)?,
        trial_error(&est.phi_mr, &scene.mr.aoa)?,
        trial_error_complex(&est.rho_mr, &scene.mr.gains)?,
        trial_error(&est.theta_rb, &scene.rb.aod)?,
        trial_error(&est.phi_rb, &scene.rb.aoa)?,
        trial_error_complex(&est.rho_rb, &scene.rb.gains)?,
        trial_error(&est_delta, &true_delta)?,
    ];
    let mut status = if est.is_degenerate() { Status::Degenerate } else { Status::Ok };
    let n_r = scene.cfg.n_r;
    let omega = match design_phases(n_r, &est_delta, &est.rho_prod) {
        Ok(p) => p.omega_star,
        Err(Error::Degenerate(_)) => {
            status = Status::Degenerate;
            ComplexVector::from_element(n_r, Complex64::new(1.0, 0.0))
        }
        Err(e) => return Err(e),
    };
    let (bf_gain, channel_error) = link(&scene, &est, &omega)?;
    let (random_gain, random_error) = if config.phase_design_baseline {
        link(&scene, &est, &random_phases(n_r, &mut rng))?
    } else {
        (f64::NAN, Complex64::new(f64::NAN, f64::NAN))
    };
    Ok(TrialOutcome {
        grid: point.index,
        trial,
        errors,
        bounds,
        bf_gain,
        channel_error,
        random_gain,
        random_error,
        status,
        estimate: Some(est),
    })
}

/// Aggregates of one grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSummary {
    pub point: GridPoint,
    pub rows: usize,
    pub failures: usize,
    pub median_mse_theta_mr: f64,
    /// Trial-averaged errors in row order.
    pub mse: [f64; 7],
    pub mean_bounds: [f64; 6],
    pub se_bits: f64,
    pub se_random_bits: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub csv: PathBuf,
    pub summary: PathBuf,
    pub failures_log: PathBuf,
    pub rows: Vec<Row>,
    pub failures: Vec<TrialFailure>,
    pub grid: Vec<GridSummary>,
    /// Monotone trend of the median `MSE(θ_MR)` across `d_x`, for distance sweeps.
    pub distance_trend: Option<bool>,
}

fn median(v: &[f64]) -> f64 {
    let mut s: Vec<f64> = v.iter().copied().filter(|x| !x.is_nan()).collect();
    if s.is_empty() {
        return f64::NAN;
    }
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Executes every trial at every grid point without touching the filesystem.
pub fn execute(config: &ExperimentConfig) -> Result<(Vec<TrialOutcome>, Vec<TrialFailure>)> {
    config.validate()?;
    let grid = config.grid();
    let jobs: Vec<(GridPoint, usize)> = grid
        .iter()
        .flat_map(|g| (0..config.trials).map(move |t| (*g, t)))
        .collect();
    let results: Vec<std::result::Result<TrialOutcome, TrialFailure>> = jobs
        .par_iter()
        .map(|(g, t)| {
            run_trial(config, g, *t).map_err(|e| TrialFailure {
                grid: g.index,
                trial: *t,
                p_t_dbm: g.p_t_dbm,
                d_x: g.d_x,
                message: e.to_string(),
            })
        })
        .collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for r in results {
        match r {
            Ok(o) => ok.push(o),
            Err(f) => {
                log::warn!("grid {} trial {}: {}", f.grid, f.trial, f.message);
                failed.push(f);
            }
        }
    }
    Ok((ok, failed))
}

/// Turns trial outcomes into CSV rows and grid summaries.
pub fn tabulate(
    config: &ExperimentConfig,
    outcomes: &[TrialOutcome],
    failures: &[TrialFailure],
) -> Result<(Vec<Row>, Vec<GridSummary>)> {
    let mut rows = Vec::with_capacity(outcomes.len());
    let mut summaries = Vec::new();
    for point in config.grid() {
        let here: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.grid == point.index).collect();
        let cfg = config.sounding(dbm_to_watts(point.p_t_dbm))?;
        let pre = training_prefactor(config.coherence_time, overhead_hybrid(&cfg))?;
        let var = complex_sample_variance(&here.iter().map(|o| o.channel_error).collect::<Vec<_>>());
        let var_rand = complex_sample_variance(&here.iter().map(|o| o.random_error).collect::<Vec<_>>());
        let mut se = Vec::new();
        let mut se_rand = Vec::new();
        for o in &here {
            let se_bits = pre * trial_rate(o.bf_gain, cfg.sigma2, var);
            se.push(se_bits);
            se_rand.push(pre * trial_rate(o.random_gain, cfg.sigma2, var_rand));
            let [e0, e1, e2, e3, e4, e5, e6] = o.errors;
            let [b0, b1, b2, b3, b4, b5] = o.bounds;
            rows.push(Row {
                setup: config.setup.name().to_string(),
                p_t_dbm: point.p_t_dbm,
                d_x_m: point.d_x,
                trial: o.trial,
                mse_theta_mr: e0,
                mse_phi_mr: e1,
                mse_rho_mr: e2,
                mse_theta_rb: e3,
                mse_phi_rb: e4,
                mse_rho_rb: e5,
                mse_delta: e6,
                se_bits,
                crlb_theta_mr: b0,
                crlb_phi_mr: b1,
                crlb_rho_mr: b2,
                crlb_theta_rb: b3,
                crlb_phi_rb: b4,
                crlb_rho_rb: b5,
                status: o.status,
            });
        }
        let col = |i: usize| mse(&here.iter().map(|o| o.errors[i]).collect::<Vec<_>>());
        let bound = |i: usize| mse(&here.iter().map(|o| o.bounds[i]).collect::<Vec<_>>());
        summaries.push(GridSummary {
            point,
            rows: here.len(),
            failures: failures.iter().filter(|f| f.grid == point.index).count(),
            median_mse_theta_mr: median(&here.iter().map(|o| o.errors[0]).collect::<Vec<_>>()),
            mse: std::array::from_fn(col),
            mean_bounds: std::array::from_fn(bound),
            se_bits: mse(&se),
            se_random_bits: mse(&se_rand),
        });
    }
    Ok((rows, summaries))
}

pub fn write_csv(path: &Path, rows: &[Row]) -> Result<()> {
    let mut file = fs::File::create(path)?;
    writeln!(file, "{CSV_VERSION}")?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    w.write_record(CSV_COLUMNS).map_err(std::io::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(std::io::Error::from)?;
    }
    w.flush()?;
    Ok(())
}

fn write_summary(path: &Path, config: &ExperimentConfig, grid: &[GridSummary], trend: Option<bool>) -> Result<()> {
    let mut s = String::new();
    s.push_str(CSV_VERSION);
    s.push('\n');
    s.push_str(
        "setup,p_t_dbm,d_x_m,rows,failures,median_mse_theta_mr,mse_theta_mr,mse_phi_mr,mse_rho_mr,\
         mse_theta_rb,mse_phi_rb,mse_rho_rb,mse_delta,crlb_theta_mr,crlb_phi_mr,crlb_rho_mr,\
         crlb_theta_rb,crlb_phi_rb,crlb_rho_rb,se_bits,se_random_bits\n",
    );
    for g in grid {
        let _ = write!(
            s,
            "{},{},{},{},{},{}",
            config.setup.name(),
            g.point.p_t_dbm,
            g.point.d_x,
            g.rows,
            g.failures,
            g.median_mse_theta_mr
        );
        for v in g.mse.iter().chain(&g.mean_bounds) {
            let _ = write!(s, ",{v}");
        }
        let _ = writeln!(s, ",{},{}", g.se_bits, g.se_random_bits);
    }
    if let Some(t) = trend {
        let _ = writeln!(s, "# trend median_mse_theta_mr increasing_in_d_x={t}");
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_failures(path: &Path, failures: &[TrialFailure]) -> Result<()> {
    let mut s = String::new();
    for f in failures {
        let _ = writeln!(
            s,
            "grid={} p_t_dbm={} d_x_m={} trial={} error={}",
            f.grid, f.p_t_dbm, f.d_x, f.trial, f.message
        );
    }
    fs::write(path, s)?;
    Ok(())
}

fn write_traces(dir: &Path, outcomes: &[TrialOutcome]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for o in outcomes {
        let (t1, t2) = o.traces();
        for (stage, rows) in [(1, t1), (2, t2)] {
            let mut s = String::from("iter,objective,primal_res,dual_res\n");
            for r in rows {
                let _ = writeln!(s, "{},{},{},{}", r.iter, r.objective, r.primal_res, r.dual_res);
            }
            fs::write(dir.join(format!("grid{}_trial{}_stage{stage}.csv", o.grid, o.trial)), s)?;
        }
    }
    Ok(())
}

fn run_named(config: &ExperimentConfig, stem: &str, trend: bool) -> Result<RunOutput> {
    config.validate()?;
    fs::create_dir_all(&config.out)?;
    let (outcomes, failures) = execute(config)?;
    let (rows, grid) = tabulate(config, &outcomes, &failures)?;
    let distance_trend = trend.then(|| {
        grid.windows(2)
            .all(|w| w[1].median_mse_theta_mr > w[0].median_mse_theta_mr)
    });
    let csv = config.out.join(format!("{stem}.csv"));
    let summary = config.out.join(format!("{stem}_summary.csv"));
    let failures_log = config.out.join(format!("{stem}_failures.log"));
    write_csv(&csv, &rows)?;
    write_summary(&summary, config, &grid, distance_trend)?;
    write_failures(&failures_log, &failures)?;
    if config.trace_solver {
        write_traces(&config.out.join(format!("{stem}_traces")), &outcomes)?;
    }
    Ok(RunOutput {
        csv,
        summary,
        failures_log,
        rows,
        failures,
        grid,
        distance_trend,
    })
}

/// Runs the full power × distance grid.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    run_named(config, "results", false)
}

/// Runs at a single transmit power across the `d_x` list and reports
/// whether the median `MSE(θ_MR)` grows with distance.
pub fn sweep_distance(config: &ExperimentConfig) -> Result<RunOutput> {
    if config.p_t_dbm.len() != 1 {
        return Err(Error::Config(format!(
            "distance sweep needs exactly one transmit power, got {}",
            config.p_t_dbm.len()
        )));
    }
    let mut c = config.clone();
    let mut d = c.d_x.clone();
    d.sort_by(f64::total_cmp);
    c.d_x = d;
    run_named(&c, "distance", true)
}

/// Parsed result CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<Row>,
}

/// Reads a result CSV, reporting the 1-based line of the first problem.
pub fn read_csv(path: &Path) -> Result<ResultTable> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<ResultTable> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.starts_with('#') => continue,
            Some(h) => break h,
            None => {
                return Err(Error::Parse {
                    line: 1,
                    message: "missing header".into(),
                })
            }
        }
    };
    let cols: Vec<&str> = header.1.split(',').map(str::trim).collect();
    if cols != CSV_COLUMNS {
        return Err(Error::Parse {
            line: header.0 as u64 + 1,
            message: format!("unexpected header `{}`", header.1),
        });
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let err = |m: String| Error::Parse { line: i as u64 + 1, message: m };
        if fields.len() != CSV_COLUMNS.len() {
            return Err(err(format!("expected {} fields, found {}", CSV_COLUMNS.len(), fields.len())));
        }
        let num = |k: usize| -> Result<f64> {
            fields[k]
                .parse::<f64>()
                .map_err(|_| err(format!("column `{}` is not a number: `{}`", CSV_COLUMNS[k], fields[k])))
        };
        let status = match fields[18] {
            "ok" => Status::Ok,
            "degenerate" => Status::Degenerate,
            "crlb_only" => Status::CrlbOnly,
            s => return Err(err(format!("unknown status `{s}`"))),
        };
        let trial = fields[3]
            .parse::<usize>()
            .map_err(|_| err(format!("trial is not an integer: `{}`", fields[3])))?;
        rows.push(Row {
            setup: fields[0].to_string(),
            p_t_dbm: num(1)?,
            d_x_m: num(2)?,
            trial,
            mse_theta_mr: num(4)?,
            mse_phi_mr: num(5)?,
            mse_rho_mr: num(6)?,
            mse_theta_rb: num(7)?,
            mse_phi_rb: num(8)?,
            mse_rho_rb: num(9)?,
            mse_delta: num(10)?,
            se_bits: num(11)?,
            crlb_theta_mr: num(12)?,
            crlb_phi_mr: num(13)?,
            crlb_rho_mr: num(14)?,
            crlb_theta_rb: num(15)?,
            crlb_phi_rb: num(16)?,
            crlb_rho_rb: num(17)?,
            status,
        });
    }
    Ok(ResultTable { rows })
}

const PLOT_COLUMNS: [(&str, &str); 7] = [
    ("mse_theta_mr", "MSE theta_MR"),
    ("mse_phi_mr", "MSE phi_MR"),
    ("mse_rho_mr", "MSE rho_MR"),
    ("mse_theta_rb", "MSE theta_RB"),
    ("mse_phi_rb", "MSE phi_RB"),
    ("mse_rho_rb", "MSE rho_RB"),
    ("mse_delta", "MSE delta"),
];

fn row_value(r: &Row, col: &str) -> f64 {
    match col {
        "mse_theta_mr" => r.mse_theta_mr,
        "mse_phi_mr" => r.mse_phi_mr,
        "mse_rho_mr" => r.mse_rho_mr,
        "mse_theta_rb" => r.mse_theta_rb,
        "mse_phi_rb" => r.mse_phi_rb,
        "mse_rho_rb" => r.mse_rho_rb,
        "mse_delta" => r.mse_delta,
        "se_bits" => r.se_bits,
        _ => f64::NAN,
    }
}

/// Series label → P_T → rows. Series are setups, split by `d_x` when a setup
/// has several.
fn series(table: &ResultTable) -> BTreeMap<String, BTreeMap<i64, Vec<&Row>>> {
    let mut dists: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for r in &table.rows {
        let d = dists.entry(&r.setup).or_default();
        if !d.contains(&r.d_x_m) {
            d.push(r.d_x_m);
        }
    }
    let mut out: BTreeMap<String, BTreeMap<i64, Vec<&Row>>> = BTreeMap::new();
    for r in &table.rows {
        let label = if dists[r.setup.as_str()].len() > 1 {
            format!("{} d_x={}", r.setup, r.d_x_m)
        } else {
            r.setup.clone()
        };
        // Key on milli-dBm so the map orders numerically.
        let key = (r.p_t_dbm * 1000.0).round() as i64;
        out.entry(label).or_default().entry(key).or_default().push(r);
    }
    out
}

/// Gnuplot script text for MSE-vs-P_T (log scale) and SE-vs-P_T figures.
pub fn plot_script(table: &ResultTable) -> String {
    let groups = series(table);
    let mut s = String::new();
    s.push_str("# gnuplot script generated by ris-anm-sim\n");
    if groups.is_empty() {
        s.push_str("# warning: no data rows\n");
    }
    let names: Vec<String> = (0..groups.len()).map(|i| format!("$series{i}")).collect();
    for ((label, by_p), name) in groups.iter().zip(&names) {
        let _ = writeln!(s, "# {label}");
        let _ = writeln!(s, "{name} << EOD");
        let _ = writeln!(s, "# p_t_dbm {} se_bits", PLOT_COLUMNS.map(|c| c.0).join(" "));
        for (key, rows) in by_p {
            let _ = write!(s, "{}", *key as f64 / 1000.0);
            for (col, _) in PLOT_COLUMNS.iter().chain(std::iter::once(&("se_bits", ""))) {
                let vals: Vec<f64> = rows.iter().map(|r| row_value(r, col)).filter(|v| v.is_finite()).collect();
                let _ = write!(s, " {}", if vals.is_empty() { f64::NAN } else { mse(&vals) });
            }
            s.push('\n');
        }
        s.push_str("EOD\n");
    }
    s.push_str("set terminal pngcairo size 1600,900\nset output 'mse.png'\n");
    s.push_str("set multiplot layout 2,4\nset logscale y\nset xlabel 'P_T [dBm]'\nset key bottom left\n");
    let curves = |col: usize| -> String {
        if names.is_empty() {
            return "plot 1/0 notitle\n".to_string();
        }
        let parts: Vec<String> = groups
            .keys()
            .zip(&names)
            .map(|(label, name)| format!("{name} using 1:{col} with linespoints title '{label}'"))
            .collect();
        format!("plot {}\n", parts.join(", \\\n     "))
    };
    for (i, (_, title)) in PLOT_COLUMNS.iter().enumerate() {
        let _ = writeln!(s, "set title '{title}'\nset ylabel 'MSE'");
        s.push_str(&curves(i + 2));
    }
    s.push_str("unset multiplot\n");
    s.push_str("set output 'se.png'\nset terminal pngcairo size 800,600\nunset logscale y\n");
    s.push_str("set title 'Effective SE'\nset ylabel 'bits/s/Hz'\nset key top left\n");
    s.push_str(&curves(PLOT_COLUMNS.len() + 2));
    s
}

/// Writes `<csv stem>.gp` next to the CSV.
pub fn emit_plot_script(csv_path: &Path) -> Result<PathBuf> {
    let table = read_csv(csv_path)?;
    let out = csv_path.with_extension("gp");
    fs::write(&out, plot_script(&table))?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            setup: SetupChoice::Custom,
            n_b: Some(10),
            n_r: Some(12),
            n_m: Some(10),
            m: Some(3),
            k: Some(3),
            t: Some(4),
            n_cb: Some(6),
            n_rfb: Some(6),
            n_rfr: Some(3),
            p_t_dbm: vec![20.0],
            trials: 2,
            l_mr: 1,
            l_rb: 1,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn toml_defaults_and_overrides() {
        let c = ExperimentConfig::from_toml_str("[setup]\nsetup = \"setup2\"\ntrials = 7\nd_x = [20.0, 35.0]\n").unwrap();
        assert_eq!(c.setup, SetupChoice::Setup2);
        assert_eq!(c.trials, 7);
        assert_eq!(c.p_t_dbm, vec![0.0, 5.0, 10.0, 15.0, 20.0]);
        assert_eq!(c.grid().len(), 10);
        let cfg = c.sounding(1.0).unwrap();
        assert_eq!((cfg.n_r, cfg.m, cfg.n_b), (32, 2, 16));
        assert!((cfg.sigma2 - 5.011872336272725e-13).abs() < 1e-25);
        let back = ExperimentConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn config_errors() {
        for bad in [
            "[setup]\ntrials = 0\n",
            "[setup]\np_t_dbm = []\n",
            "[setup]\nbogus = 1\n",
            "[setup]\nsetup = \"custom\"\n",
            "[setup]\nl_mr = 4\n",
            "[setup]\nidentity_combiner = true\n",
            "not toml",
        ] {
            let e = ExperimentConfig::from_toml_str(bad).unwrap_err();
            assert!(e.is_config(), "{bad}: {e}");
        }
    }

    #[test]
    fn substreams_are_independent_of_order() {
        use rand::Rng;
        let a: u64 = trial_rng(5, 2, 7).random();
        let _ = trial_rng(5, 0, 0).random::<u64>();
        let b: u64 = trial_rng(5, 2, 7).random();
        assert_eq!(a, b);
        assert_ne!(a, trial_rng(5, 2, 8).random::<u64>());
        assert_ne!(a, trial_rng(5, 3, 7).random::<u64>());
    }

    #[test]
    fn single_trial_outcome() {
        let c = small();
        let o = run_trial(&c, &c.grid()[0], 0).unwrap();
        assert!(o.errors.iter().all(|e| *e >= 0.0));
        assert!(o.bounds.iter().all(|b| *b > 0.0));
        assert!(o.bf_gain > 0.0);
    }

    #[test]
    fn crlb_only_rows() {
        let c = ExperimentConfig {
            crlb_only: true,
            ..small()
        };
        let (o, f) = execute(&c).unwrap();
        assert!(f.is_empty());
        assert!(o.iter().all(|o| o.status == Status::CrlbOnly && o.errors[0].is_nan()));
    }

    #[test]
    fn csv_round_trip() {
        let c = ExperimentConfig {
            crlb_only: true,
            ..small()
        };
        let (o, f) = execute(&c).unwrap();
        let (rows, _) = tabulate(&c, &o, &f).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_csv(&p, &rows).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().filter(|l| l.starts_with("setup,")).count(), 1);
        assert_eq!(read_csv(&p).unwrap().rows.len(), rows.len());
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let mut text = format!("{CSV_VERSION}\n{}\n", CSV_COLUMNS.join(","));
        assert!(parse_csv(&text).unwrap().rows.is_empty());
        text.push_str("setup1,0,15,0,1,1,1,1,1,1,1,1,1,1,1,1,1,1,ok\n");
        assert_eq!(parse_csv(&text).unwrap().rows.len(), 1);
        text.push_str("setup1,zero,15,1,1,1,1,1,1,1,1,1,1,1,1,1,1,1,ok\n");
        match parse_csv(&text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("{other:?}"),
        }
        match parse_csv("a,b\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn plot_script_curves() {
        let header = format!("{CSV_VERSION}\n{}\n", CSV_COLUMNS.join(","));
        let empty = plot_script(&parse_csv(&header).unwrap());
        assert!(empty.contains("# warning: no data rows"));
        assert!(empty.contains("plot 1/0 notitle"));
        let mut one = header.clone();
        one.push_str("setup1,0,15,0,1,1,1,1,1,1,1,2,1,1,1,1,1,1,ok\n");
        let s = plot_script(&parse_csv(&one).unwrap());
        let se = &s[s.find("set output 'se.png'").unwrap()..];
        assert_eq!(se.matches("title 'setup1'").count(), 1);
        let mut three = header;
        for name in ["setup1", "setup2", "setup3"] {
            three.push_str(&format!("{name},0,15,0,1,1,1,1,1,1,1,2,1,1,1,1,1,1,ok\n"));
            three.push_str(&format!("{name},10,15,0,1,1,1,1,1,1,1,2,1,1,1,1,1,1,ok\n"));
        }
        let s = plot_script(&parse_csv(&three).unwrap());
        let se = &s[s.find("set output 'se.png'").unwrap()..];
        for name in ["setup1", "setup2", "setup3"] {
            assert_eq!(se.matches(&format!("title '{name}'")).count(), 1);
        }
    }
}
