//! Event-playback calibration: filter initialization, sequential UKF playback
//! over an interpolated frame stream for either machine model, Monte Carlo
//! aggregation (parameter mean/std and worst-case post-convergence MSE in
//! dB), and calibrated-vs-uncalibrated output replay.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::aug_model::{active_power, AugmentedModel, PreparedAugInput, AUGMENTED_DIM, AUGMENTED_STATE_NAMES};
use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::gen_model::{ConventionalInput, ConventionalModel, CONVENTIONAL_DIM, CONVENTIONAL_STATE_NAMES};
use crate::params::GeneratorParams;
use crate::pmu_synth::{interpolate, sample_frames, NoiseSpec, PmuFrame};
use crate::sigma_filter::{self, GaussianBelief, NoiseMatrices, UkfTuning};
use crate::truth_sim::{simulate, Scenario, TruthTrajectory};

/// Which transition/measurement pair the playback runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Conventional,
    Augmented,
}

impl ModelKind {
    pub fn state_dim(&self) -> usize {
        match self {
            ModelKind::Conventional => CONVENTIONAL_DIM,
            ModelKind::Augmented => AUGMENTED_DIM,
        }
    }

    pub fn measurement_dim(&self) -> usize {
        match self {
            ModelKind::Conventional => 2,
            ModelKind::Augmented => 4,
        }
    }

    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            ModelKind::Conventional => &CONVENTIONAL_STATE_NAMES,
            ModelKind::Augmented => &AUGMENTED_STATE_NAMES,
        }
    }

    /// Indices of the calibration states (H, K_A).
    pub fn calib_indices(&self) -> (usize, usize) {
        match self {
            ModelKind::Conventional => (9, 10),
            ModelKind::Augmented => (10, 11),
        }
    }
}

/// Initial-condition multipliers: δ ← delta·θ₀, H ← h·H_guess,
/// K_A ← ka·K_A_guess; the dynamic states start at 1 (Ṗ_m at 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitMultipliers {
    pub delta: f64,
    pub h: f64,
    pub ka: f64,
}

impl Default for InitMultipliers {
    fn default() -> Self {
        InitMultipliers {
            delta: 1.1,
            h: 0.8,
            ka: 0.6,
        }
    }
}

/// Post-convergence window rule: the window opens once both parameter
/// estimates have stayed within ±band of their final values for `hold`
/// seconds continuously.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRule {
    pub band: f64,
    pub hold: f64,
}

impl Default for ConvergenceRule {
    fn default() -> Self {
        ConvergenceRule {
            band: 0.05,
            hold: 1.0,
        }
    }
}

/// Filter-side configuration of one playback run.
#[derive(Debug, Clone, PartialEq)]
pub struct PlaybackConfig {
    pub model: ModelKind,
    pub gamma: f64,
    pub beta: f64,
    pub kappa: f64,
    /// Process noise Q = q_scale·Δt·I.
    pub q_scale: f64,
    /// Filter start, seconds after fault clearance.
    pub start_offset: f64,
    pub init: InitMultipliers,
    /// RK4 sub-steps per filter interval.
    pub substeps: usize,
    pub convergence: ConvergenceRule,
}

impl PlaybackConfig {
    pub fn paper_default(model: ModelKind) -> Self {
        PlaybackConfig {
            model,
            gamma: 1e-3,
            beta: 2.0,
            kappa: 0.0,
            q_scale: 1e-10,
            start_offset: 0.033,
            init: InitMultipliers::default(),
            substeps: 1,
            convergence: ConvergenceRule::default(),
        }
    }

    pub fn tuning(&self) -> Result<UkfTuning> {
        UkfTuning::new(self.gamma, self.beta, self.kappa, self.model.state_dim())
    }
}

/// Configuration keys shared by the pipeline (noise, rates, filter) so that a
/// single scenario file can carry everything.
pub const PIPELINE_KEYS: [&str; 20] = [
    "model",
    "tve",
    "fe_hz",
    "rfe_hzps",
    "deriv_noise",
    "f_r",
    "k_int",
    "gamma",
    "beta",
    "kappa",
    "q_scale",
    "start_offset",
    "substeps",
    "h_mul",
    "ka_mul",
    "delta_mul",
    "pm0_bias",
    "conv_band",
    "conv_hold",
    "trials",
];

/// Synthesis + playback settings read from the same flat config file as the
/// scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub f_r: f64,
    pub k_int: u32,
    pub tve: f64,
    pub fe_hz: f64,
    pub rfe_hzps: f64,
    /// Perturb the phasor-derivative channels too (off reproduces the
    /// configuration whose noise is fully specified by TVE/FE/RFE).
    pub deriv_noise: bool,
    pub playback: PlaybackConfig,
    /// Fractional bias applied to the conventional filter's pm0 guess.
    pub pm0_bias: f64,
    pub trials: usize,
}

impl PipelineConfig {
    pub fn paper_default(model: ModelKind) -> Self {
        PipelineConfig {
            f_r: 60.0,
            k_int: 16,
            tve: 0.01,
            fe_hz: 0.005,
            rfe_hzps: 0.1,
            deriv_noise: false,
            playback: PlaybackConfig::paper_default(model),
            pm0_bias: 0.0,
            trials: 100,
        }
    }

    pub fn from_config(cfg: &ConfigMap, default_model: ModelKind) -> Result<Self> {
        let model = match cfg.get_str_or("model", "") {
            "" => default_model,
            "conventional" => ModelKind::Conventional,
            "augmented" => ModelKind::Augmented,
            other => return Err(Error::config(0, format!("unknown model `{other}`"))),
        };
        let d = PipelineConfig::paper_default(model);
        let deriv_noise = match cfg.get_str_or("deriv_noise", "off") {
            "on" => true,
            "off" => false,
            other => return Err(Error::config(0, format!("deriv_noise must be on|off, got `{other}`"))),
        };
        Ok(PipelineConfig {
            f_r: cfg.get_f64_or("f_r", d.f_r)?,
            k_int: cfg.get_u64_or("k_int", d.k_int as u64)? as u32,
            tve: cfg.get_f64_or("tve", d.tve)?,
            fe_hz: cfg.get_f64_or("fe_hz", d.fe_hz)?,
            rfe_hzps: cfg.get_f64_or("rfe_hzps", d.rfe_hzps)?,
            deriv_noise,
            playback: PlaybackConfig {
                model,
                gamma: cfg.get_f64_or("gamma", d.playback.gamma)?,
                beta: cfg.get_f64_or("beta", d.playback.beta)?,
                kappa: cfg.get_f64_or("kappa", d.playback.kappa)?,
                q_scale: cfg.get_f64_or("q_scale", d.playback.q_scale)?,
                start_offset: cfg.get_f64_or("start_offset", d.playback.start_offset)?,
                init: InitMultipliers {
                    delta: cfg.get_f64_or("delta_mul", 1.1)?,
                    h: cfg.get_f64_or("h_mul", 0.8)?,
                    ka: cfg.get_f64_or("ka_mul", 0.6)?,
                },
                substeps: cfg.get_u64_or("substeps", d.playback.substeps as u64)? as usize,
                convergence: ConvergenceRule {
                    band: cfg.get_f64_or("conv_band", 0.05)?,
                    hold: cfg.get_f64_or("conv_hold", 1.0)?,
                },
            },
            pm0_bias: cfg.get_f64_or("pm0_bias", 0.0)?,
            trials: cfg.get_u64_or("trials", d.trials as u64)? as usize,
        })
    }

    pub fn to_config_string(&self) -> String {
        let p = &self.playback;
        let model = match p.model {
            ModelKind::Conventional => "conventional",
            ModelKind::Augmented => "augmented",
        };
        format!(
            "model = {model}\nf_r = {}\nk_int = {}\ntve = {}\nfe_hz = {}\nrfe_hzps = {}\n\
             deriv_noise = {}\ngamma = {}\nbeta = {}\nkappa = {}\nq_scale = {}\n\
             start_offset = {}\ndelta_mul = {}\nh_mul = {}\nka_mul = {}\nsubsteps = {}\n\
             conv_band = {}\nconv_hold = {}\npm0_bias = {}\ntrials = {}\n",
            self.f_r,
            self.k_int,
            self.tve,
            self.fe_hz,
            self.rfe_hzps,
            if self.deriv_noise { "on" } else { "off" },
            p.gamma,
            p.beta,
            p.kappa,
            p.q_scale,
            p.start_offset,
            p.init.delta,
            p.init.h,
            p.init.ka,
            p.substeps,
            p.convergence.band,
            p.convergence.hold,
            self.pm0_bias,
            self.trials
        )
    }

    pub fn noise_spec(&self, f_nominal: f64) -> NoiseSpec {
        let mut s = NoiseSpec::derive_sigmas(self.tve, self.fe_hz, self.rfe_hzps, 1.0, f_nominal);
        if !self.deriv_noise {
            s.deriv_factor = 0.0;
        }
        s
    }
}

// ---------------------------------------------------------------------------
// Fixed-size RK4 with per-stage inputs
// ---------------------------------------------------------------------------

fn add_scaled<const N: usize>(x: &[f64; N], k: &[f64; N], a: f64) -> [f64; N] {
    let mut out = *x;
    for i in 0..N {
        out[i] += a * k[i];
    }
    out
}

/// RK4 over `substeps` sub-intervals; `inputs` holds the input evaluated at
/// the 2·substeps+1 stage times.
fn rk4_staged<const N: usize, U>(
    rhs: impl Fn(&[f64; N], &U) -> [f64; N],
    x0: &[f64; N],
    inputs: &[U],
    dt: f64,
) -> [f64; N] {
    let substeps = (inputs.len() - 1) / 2;
    let h = dt / substeps as f64;
    let mut x = *x0;
    for j in 0..substeps {
        let u0 = &inputs[2 * j];
        let um = &inputs[2 * j + 1];
        let u1 = &inputs[2 * j + 2];
        let k1 = rhs(&x, u0);
        let k2 = rhs(&add_scaled(&x, &k1, 0.5 * h), um);
        let k3 = rhs(&add_scaled(&x, &k2, 0.5 * h), um);
        let k4 = rhs(&add_scaled(&x, &k3, h), u1);
        for i in 0..N {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }
    x
}

fn lerp_frame(a: &PmuFrame, b: &PmuFrame, w: f64) -> PmuFrame {
    PmuFrame {
        t: a.t + w * (b.t - a.t),
        v: a.v + w * (b.v - a.v),
        i: a.i + w * (b.i - a.i),
        v_dot: a.v_dot + w * (b.v_dot - a.v_dot),
        i_dot: a.i_dot + w * (b.i_dot - a.i_dot),
        f_hz: a.f_hz + w * (b.f_hz - a.f_hz),
        rocof_hzps: a.rocof_hzps + w * (b.rocof_hzps - a.rocof_hzps),
    }
}

// ---------------------------------------------------------------------------
// Initial belief
// ---------------------------------------------------------------------------

/// x₀, P₀ and Q for one playback: the misinitialized state built from the
/// start frame, the diagonal covariance of the componentwise uniform spread
/// between x₀ and the reference, and Q = q_scale·Δt·I.
pub fn build_initial_belief(
    start_frame: &PmuFrame,
    truth_ref: &DVector<f64>,
    params_guess: &GeneratorParams,
    cfg: &PlaybackConfig,
    dt: f64,
) -> Result<(GaussianBelief, DMatrix<f64>)> {
    let n = cfg.model.state_dim();
    if truth_ref.len() != n {
        return Err(Error::Conditioning(format!(
            "truth reference has dimension {}, expected {n}",
            truth_ref.len()
        )));
    }
    let f_nom = params_guess.f_nominal();
    let theta0 = start_frame.v.arg();
    let f0 = start_frame.f_hz / f_nom;
    let alpha0 = start_frame.rocof_hzps / f_nom;
    let h0 = cfg.init.h * params_guess.h;
    let ka0 = cfg.init.ka * params_guess.ka;

    let x0 = match cfg.model {
        ModelKind::Conventional => DVector::from_row_slice(&[
            cfg.init.delta * theta0,
            f0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            h0,
            ka0,
        ]),
        ModelKind::Augmented => DVector::from_row_slice(&[
            cfg.init.delta * theta0,
            f0,
            alpha0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            1.0,
            0.0,
            h0,
            ka0,
        ]),
    };

    // Uniform spread with half-width |x0_ref − x0| has variance Δ²/3.
    let mut p0 = DMatrix::zeros(n, n);
    for j in 0..n {
        let half_width = (truth_ref[j] - x0[j]).abs();
        p0[(j, j)] = (half_width * half_width / 3.0).max(1e-12);
    }
    let q = DMatrix::identity(n, n) * (cfg.q_scale * dt);
    Ok((GaussianBelief::new(x0, p0)?, q))
}

// ---------------------------------------------------------------------------
// Playback
// ---------------------------------------------------------------------------

/// One playback run: per-step estimates and covariance diagonals, the aligned
/// truth, the final calibration values, and the post-convergence MSE.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub model: ModelKind,
    pub times: Vec<f64>,
    pub estimates: Vec<DVector<f64>>,
    pub cov_diag: Vec<DVector<f64>>,
    pub truth_states: Vec<DVector<f64>>,
    pub final_h: f64,
    pub final_ka: f64,
    /// Time at which the post-convergence window opens.
    pub convergence_time: Option<f64>,
    /// Index into `times` of the window start.
    pub window_start: Option<usize>,
    /// Per-state MSE over the post-convergence window, dB.
    pub mse_db: Option<Vec<f64>>,
}

fn truth_state_vector(truth: &TruthTrajectory, t: f64, model: ModelKind) -> Result<DVector<f64>> {
    let s = truth.sample_at(t)?;
    let p = &truth.params;
    Ok(match model {
        ModelKind::Conventional => DVector::from_row_slice(&[
            s.delta, s.omega, s.ed_p, s.eq_p, s.psi_d, s.psi_q, s.efd, s.vtr, s.pm, p.h, p.ka,
        ]),
        ModelKind::Augmented => DVector::from_row_slice(&[
            s.delta,
            s.omega,
            s.omega_dot,
            s.ed_p,
            s.eq_p,
            s.psi_d,
            s.psi_q,
            s.efd,
            s.vtr,
            s.pm_dot,
            p.h,
            p.ka,
        ]),
    })
}

fn stream_dt(stream: &[PmuFrame]) -> Result<f64> {
    if stream.len() < 2 {
        return Err(Error::InvalidFrame("stream holds fewer than two samples".into()));
    }
    let dt = stream[1].t - stream[0].t;
    for w in stream.windows(2) {
        if ((w[1].t - w[0].t) - dt).abs() > 1e-9 {
            return Err(Error::InvalidFrame("stream spacing is not uniform".into()));
        }
    }
    Ok(dt)
}

/// Sequential UKF playback over an interpolated frame stream.
///
/// The filter starts `cfg.start_offset` seconds after `clearance_time`; each
/// step integrates the continuous model over one stream interval with RK4
/// sub-stepping, the input linearly interpolated at the stage times, and
/// corrects with that interval's end frame.
pub fn run_playback(
    stream: &[PmuFrame],
    truth: &TruthTrajectory,
    clearance_time: f64,
    params_guess: &GeneratorParams,
    r: &DMatrix<f64>,
    cfg: &PlaybackConfig,
) -> Result<TrialResult> {
    let dt = stream_dt(stream)?;
    if cfg.substeps == 0 {
        return Err(Error::InvalidParameter("substeps must be >= 1".into()));
    }
    if r.nrows() != cfg.model.measurement_dim() {
        return Err(Error::Conditioning(format!(
            "R is {}x{}, model needs {}",
            r.nrows(),
            r.ncols(),
            cfg.model.measurement_dim()
        )));
    }
    let start_time = clearance_time + cfg.start_offset;
    let k0 = stream
        .iter()
        .position(|f| f.t >= start_time - 1e-12)
        .ok_or_else(|| Error::InvalidFrame(format!("no frame at or after t = {start_time}")))?;
    if k0 + 1 >= stream.len() {
        return Err(Error::InvalidFrame("no frames after the start time".into()));
    }

    let f_nom = params_guess.f_nominal();
    let tuning = cfg.tuning()?;
    let w = sigma_filter::weights(&tuning)?;
    let truth_ref0 = truth_state_vector(truth, stream[k0].t, cfg.model)?;
    let (mut belief, q) =
        build_initial_belief(&stream[k0], &truth_ref0, params_guess, cfg, dt)?;
    let noises = NoiseMatrices { q, r: r.clone() };

    let steps = stream.len() - (k0 + 1);
    let mut result = TrialResult {
        model: cfg.model,
        times: Vec::with_capacity(steps),
        estimates: Vec::with_capacity(steps),
        cov_diag: Vec::with_capacity(steps),
        truth_states: Vec::with_capacity(steps),
        final_h: f64::NAN,
        final_ka: f64::NAN,
        convergence_time: None,
        window_start: None,
        mse_db: None,
    };

    match cfg.model {
        ModelKind::Conventional => {
            let model = ConventionalModel::new(params_guess)?;
            let u_series: Vec<ConventionalInput> = stream
                .iter()
                .map(|f| ConventionalInput {
                    pe: active_power(f.v, f.i),
                    i_re: f.i.re,
                    i_im: f.i.im,
                })
                .collect();
            for k in (k0 + 1)..stream.len() {
                let stage_count = 2 * cfg.substeps + 1;
                let mut stage_inputs = Vec::with_capacity(stage_count);
                for m in 0..stage_count {
                    let wgt = m as f64 / (stage_count - 1) as f64;
                    let a = &u_series[k - 1];
                    let b = &u_series[k];
                    stage_inputs.push(ConventionalInput {
                        pe: a.pe + wgt * (b.pe - a.pe),
                        i_re: a.i_re + wgt * (b.i_re - a.i_re),
                        i_im: a.i_im + wgt * (b.i_im - a.i_im),
                    });
                }
                let transition = |x: &DVector<f64>| -> DVector<f64> {
                    let arr: [f64; CONVENTIONAL_DIM] = x.as_slice().try_into().unwrap();
                    let out = rk4_staged(|s, u| model.rhs_raw(s, u), &arr, &stage_inputs, dt);
                    DVector::from_row_slice(&out)
                };
                let u_k = u_series[k];
                let measure = |x: &DVector<f64>| -> DVector<f64> {
                    let arr: [f64; CONVENTIONAL_DIM] = x.as_slice().try_into().unwrap();
                    let m2 = model.measure(&arr, &u_k);
                    DVector::from_row_slice(&[m2.v_re, m2.v_im])
                };
                let z = DVector::from_row_slice(&[stream[k].v.re, stream[k].v.im]);
                let out = sigma_filter::step(&belief, transition, measure, &z, &noises, &w)
                    .map_err(|e| playback_error(e, k, stream[k].t))?;
                belief = out.belief;
                record_step(&mut result, truth, stream[k].t, &belief, cfg.model)?;
            }
        }
        ModelKind::Augmented => {
            let model = AugmentedModel::new(params_guess)?;
            for k in (k0 + 1)..stream.len() {
                let stage_count = 2 * cfg.substeps + 1;
                let mut stage_inputs = Vec::with_capacity(stage_count);
                for m in 0..stage_count {
                    let wgt = m as f64 / (stage_count - 1) as f64;
                    let frame = lerp_frame(&stream[k - 1], &stream[k], wgt);
                    let prepared = PreparedAugInput::new(
                        &crate::aug_model::AugmentedInput {
                            v: frame.v,
                            i: frame.i,
                            v_dot: frame.v_dot,
                            i_dot: frame.i_dot,
                        },
                        params_guess.ra,
                    )
                    .map_err(|e| playback_error(e, k, stream[k].t))?;
                    stage_inputs.push(prepared);
                }
                let transition = |x: &DVector<f64>| -> DVector<f64> {
                    let arr: [f64; AUGMENTED_DIM] = x.as_slice().try_into().unwrap();
                    let out = rk4_staged(|s, u| model.rhs_raw(s, u), &arr, &stage_inputs, dt);
                    DVector::from_row_slice(&out)
                };
                let (i_re, i_im) = (stream[k].i.re, stream[k].i.im);
                let measure = |x: &DVector<f64>| -> DVector<f64> {
                    let arr: [f64; AUGMENTED_DIM] = x.as_slice().try_into().unwrap();
                    let m4 = model.measure(&arr, i_re, i_im);
                    DVector::from_row_slice(&[m4.v_re, m4.v_im, m4.f, m4.alpha])
                };
                let z = DVector::from_row_slice(&[
                    stream[k].v.re,
                    stream[k].v.im,
                    stream[k].f_hz / f_nom,
                    stream[k].rocof_hzps / f_nom,
                ]);
                let out = sigma_filter::step(&belief, transition, measure, &z, &noises, &w)
                    .map_err(|e| playback_error(e, k, stream[k].t))?;
                belief = out.belief;
                record_step(&mut result, truth, stream[k].t, &belief, cfg.model)?;
            }
        }
    }

    finalize_trial(&mut result, cfg, dt)?;
    Ok(result)
}

fn playback_error(e: Error, step: usize, t: f64) -> Error {
    Error::Integration {
        t,
        message: format!("filter step {step}: {e}"),
    }
}

fn record_step(
    result: &mut TrialResult,
    truth: &TruthTrajectory,
    t: f64,
    belief: &GaussianBelief,
    model: ModelKind,
) -> Result<()> {
    result.times.push(t);
    result.estimates.push(belief.mean.clone());
    result.cov_diag.push(belief.covariance.diagonal());
    result.truth_states.push(truth_state_vector(truth, t, model)?);
    Ok(())
}

fn finalize_trial(result: &mut TrialResult, cfg: &PlaybackConfig, dt: f64) -> Result<()> {
    let (hi, ki) = cfg.model.calib_indices();
    let last = result
        .estimates
        .last()
        .ok_or_else(|| Error::InvalidFrame("playback produced no steps".into()))?;
    result.final_h = last[hi];
    result.final_ka = last[ki];

    let hold_steps = (cfg.convergence.hold / dt).round() as usize;
    let n_steps = result.estimates.len();
    if hold_steps == 0 || hold_steps >= n_steps {
        return Ok(());
    }
    let band = cfg.convergence.band;
    let in_band = |idx: usize| -> bool {
        let e = &result.estimates[idx];
        (e[hi] - result.final_h).abs() <= band * result.final_h.abs()
            && (e[ki] - result.final_ka).abs() <= band * result.final_ka.abs()
    };
    // First index from which the estimates stay in-band for `hold` seconds.
    let mut run_start = None;
    let mut run_len = 0usize;
    for idx in 0..n_steps {
        if in_band(idx) {
            if run_len == 0 {
                run_start = Some(idx);
            }
            run_len += 1;
            if run_len > hold_steps {
                let window = run_start.unwrap() + hold_steps;
                result.window_start = Some(window);
                result.convergence_time = Some(result.times[window]);
                break;
            }
        } else {
            run_len = 0;
            run_start = None;
        }
    }
    if let Some(window) = result.window_start {
        result.mse_db = Some(mse_db(
            &result.estimates,
            &result.truth_states,
            window..n_steps,
        )?);
    }
    Ok(())
}

/// Per-state mean squared error over a window, in dB (10·log10), with exact
/// zeros clamped to the −200 dB sentinel.
pub fn mse_db(
    estimates: &[DVector<f64>],
    truth: &[DVector<f64>],
    window: std::ops::Range<usize>,
) -> Result<Vec<f64>> {
    if window.is_empty() || window.end > estimates.len() || estimates.len() != truth.len() {
        return Err(Error::InvalidParameter("empty or out-of-range MSE window".into()));
    }
    let n = estimates[0].len();
    let count = window.len() as f64;
    let mut out = vec![0.0; n];
    for idx in window {
        for j in 0..n {
            let e = estimates[idx][j] - truth[idx][j];
            out[j] += e * e;
        }
    }
    for v in &mut out {
        let mse = *v / count;
        *v = if mse > 0.0 { 10.0 * mse.log10() } else { -200.0 };
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Monte Carlo
// ---------------------------------------------------------------------------

/// Synthesis settings for Monte Carlo trials.
#[derive(Debug, Clone)]
pub struct SynthSettings {
    pub f_r: f64,
    pub k_int: u32,
    pub spec: NoiseSpec,
}

/// Aggregate over Monte Carlo trials.
#[derive(Debug, Clone)]
pub struct MonteCarloStats {
    pub model: ModelKind,
    pub trials: usize,
    pub failures: usize,
    pub mean_h: f64,
    pub std_h: f64,
    pub mean_ka: f64,
    pub std_ka: f64,
    /// Worst (largest) across-trial MSE per state over the common
    /// post-convergence window, dB.
    pub worst_mse_db: Vec<f64>,
    /// Time at which the common window opens.
    pub window_time: f64,
}

fn mix_seed(seed: u64, trial: u64) -> u64 {
    let mut z = seed ^ trial.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct TrialOutcome {
    final_h: f64,
    final_ka: f64,
    window_start: Option<usize>,
    sq_err: Option<Vec<f64>>, // steps × n, row-major
    steps: usize,
    error: Option<String>,
}

/// Independent noise realizations through the full synth + playback pipeline.
/// Trials run in parallel; aggregation is ordered by trial index and the
/// whole procedure is deterministic under (seed, M).
pub fn monte_carlo(
    truth: &TruthTrajectory,
    clearance_time: f64,
    synth: &SynthSettings,
    params_guess: &GeneratorParams,
    r: &DMatrix<f64>,
    cfg: &PlaybackConfig,
    m: usize,
    seed: u64,
) -> Result<MonteCarloStats> {
    if m == 0 {
        return Err(Error::InvalidParameter("need at least one trial".into()));
    }
    let n = cfg.model.state_dim();
    let outcomes: Vec<TrialOutcome> = (0..m as u64)
        .into_par_iter()
        .map(|trial| {
            let run = || -> Result<TrialResult> {
                let frames = sample_frames(truth, synth.f_r, &synth.spec, mix_seed(seed, trial))?;
                let stream = interpolate(&frames, synth.k_int);
                run_playback(&stream, truth, clearance_time, params_guess, r, cfg)
            };
            match run() {
                Ok(tr) => {
                    let steps = tr.estimates.len();
                    let mut sq = vec![0.0; steps * n];
                    for (idx, (e, t)) in tr.estimates.iter().zip(&tr.truth_states).enumerate() {
                        for j in 0..n {
                            let d = e[j] - t[j];
                            sq[idx * n + j] = d * d;
                        }
                    }
                    TrialOutcome {
                        final_h: tr.final_h,
                        final_ka: tr.final_ka,
                        window_start: tr.window_start,
                        sq_err: Some(sq),
                        steps,
                        error: None,
                    }
                }
                Err(e) => TrialOutcome {
                    final_h: f64::NAN,
                    final_ka: f64::NAN,
                    window_start: None,
                    sq_err: None,
                    steps: 0,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let good: Vec<&TrialOutcome> = outcomes
        .iter()
        .filter(|o| o.error.is_none() && o.window_start.is_some())
        .collect();
    let failures = m - good.len();
    if good.is_empty() {
        return Err(Error::NoConvergence {
            residual: f64::NAN,
            iterations: m,
        });
    }

    let count = good.len() as f64;
    let mean_h = good.iter().map(|o| o.final_h).sum::<f64>() / count;
    let mean_ka = good.iter().map(|o| o.final_ka).sum::<f64>() / count;
    let var = |mean: f64, pick: &dyn Fn(&TrialOutcome) -> f64| -> f64 {
        if good.len() < 2 {
            return 0.0;
        }
        good.iter()
            .map(|o| {
                let d = pick(o) - mean;
                d * d
            })
            .sum::<f64>()
            / (count - 1.0)
    };
    let std_h = var(mean_h, &|o| o.final_h).sqrt();
    let std_ka = var(mean_ka, &|o| o.final_ka).sqrt();

    let steps = good[0].steps;
    let window = good
        .iter()
        .map(|o| o.window_start.unwrap())
        .max()
        .unwrap()
        .min(steps - 1);
    let mut worst = vec![f64::NEG_INFINITY; n];
    for k in window..steps {
        for j in 0..n {
            let mse = good
                .iter()
                .map(|o| o.sq_err.as_ref().unwrap()[k * n + j])
                .sum::<f64>()
                / count;
            let db = if mse > 0.0 { 10.0 * mse.log10() } else { -200.0 };
            if db > worst[j] {
                worst[j] = db;
            }
        }
    }

    // Window time: steps share the stream grid; reconstruct from spacing.
    let window_time = clearance_time + cfg.start_offset + (window as f64 + 1.0) / (synth.f_r * synth.k_int as f64);

    Ok(MonteCarloStats {
        model: cfg.model,
        trials: m,
        failures,
        mean_h,
        std_h,
        mean_ka,
        std_ka,
        worst_mse_db: worst,
        window_time,
    })
}

// ---------------------------------------------------------------------------
// Output replay
// ---------------------------------------------------------------------------

/// One replayed output trace and its rms errors against the true-parameter run.
#[derive(Debug, Clone)]
pub struct ReplayCase {
    pub label: String,
    pub h: f64,
    pub ka: f64,
    pub pe: Vec<f64>,
    pub qe: Vec<f64>,
    pub rms_pe_err: f64,
    pub rms_qe_err: f64,
}

#[derive(Debug, Clone)]
pub struct ReplayComparison {
    pub t: Vec<f64>,
    pub cases: Vec<ReplayCase>,
}

/// Rerun the truth scenario with each labeled (H, K_A) pair and compare the
/// active/reactive power outputs against the true-parameter run (always the
/// first case, labeled "true").
pub fn replay_outputs(
    scenario: &Scenario,
    calibrations: &[(String, f64, f64)],
) -> Result<ReplayComparison> {
    let reference = simulate(scenario)?;
    let t: Vec<f64> = reference.samples.iter().map(|s| s.t).collect();
    let ref_pe: Vec<f64> = reference.samples.iter().map(|s| s.pe).collect();
    let ref_qe: Vec<f64> = reference.samples.iter().map(|s| s.qe).collect();
    let mut cases = vec![ReplayCase {
        label: "true".into(),
        h: scenario.params.h,
        ka: scenario.params.ka,
        pe: ref_pe.clone(),
        qe: ref_qe.clone(),
        rms_pe_err: 0.0,
        rms_qe_err: 0.0,
    }];
    for (label, h, ka) in calibrations {
        let mut s = scenario.clone();
        s.params.h = *h;
        s.params.ka = *ka;
        let traj = simulate(&s)?;
        let pe: Vec<f64> = traj.samples.iter().map(|s| s.pe).collect();
        let qe: Vec<f64> = traj.samples.iter().map(|s| s.qe).collect();
        let rms = |a: &[f64], b: &[f64]| -> f64 {
            (a.iter()
                .zip(b)
                .map(|(x, y)| (x - y) * (x - y))
                .sum::<f64>()
                / a.len() as f64)
                .sqrt()
        };
        cases.push(ReplayCase {
            label: label.clone(),
            h: *h,
            ka: *ka,
            rms_pe_err: rms(&pe, &ref_pe),
            rms_qe_err: rms(&qe, &ref_qe),
            pe,
            qe,
        });
    }
    Ok(ReplayComparison { t, cases })
}

// ---------------------------------------------------------------------------
// Reports and CSV
// ---------------------------------------------------------------------------

/// Parameter mean/std table across labeled runs, in the layout
/// rows = (H̄, s_H, K̄_A, s_KA), columns = run labels.
pub fn format_param_table(title: &str, columns: &[(String, &MonteCarloStats)]) -> String {
    let mut s = format!("{title}\n");
    s.push_str(&format!("{:<8}", ""));
    for (label, _) in columns {
        s.push_str(&format!("{label:>12}"));
    }
    s.push('\n');
    let rows: [(&str, Box<dyn Fn(&MonteCarloStats) -> f64>); 4] = [
        ("H_mean", Box::new(|m| m.mean_h)),
        ("H_std", Box::new(|m| m.std_h)),
        ("KA_mean", Box::new(|m| m.mean_ka)),
        ("KA_std", Box::new(|m| m.std_ka)),
    ];
    for (name, pick) in rows {
        s.push_str(&format!("{name:<8}"));
        for (_, st) in columns {
            s.push_str(&format!("{:>12.5}", pick(st)));
        }
        s.push('\n');
    }
    let failures: Vec<String> = columns
        .iter()
        .map(|(_, st)| format!("{}/{}", st.failures, st.trials))
        .collect();
    s.push_str(&format!("{:<8}{}\n", "fail", failures.iter().map(|f| format!("{f:>12}")).collect::<String>()));
    s
}

/// Worst-case post-convergence MSE[dB] table, rows = states.
pub fn format_mse_table(title: &str, columns: &[(String, &MonteCarloStats)]) -> String {
    let mut s = format!("{title}\n");
    if columns.is_empty() {
        return s;
    }
    let names = columns[0].1.model.state_names();
    s.push_str(&format!("{:<10}", "state"));
    for (label, _) in columns {
        s.push_str(&format!("{label:>12}"));
    }
    s.push('\n');
    for (j, name) in names.iter().enumerate() {
        s.push_str(&format!("{name:<10}"));
        for (_, st) in columns {
            s.push_str(&format!("{:>12.3}", st.worst_mse_db[j]));
        }
        s.push('\n');
    }
    s
}

pub const PLAYBACK_CSV_SCHEMA: &str = "gencal-playback v1";

/// Per-step estimate/truth/variance CSV for one trial.
pub fn write_playback_csv<W: Write>(trial: &TrialResult, mut w: W) -> Result<()> {
    writeln!(w, "# schema: {PLAYBACK_CSV_SCHEMA}")?;
    let names = trial.model.state_names();
    let mut header = String::from("t_s");
    for n in names {
        header.push_str(&format!(",{n}_est"));
    }
    for n in names {
        header.push_str(&format!(",{n}_truth"));
    }
    for n in names {
        header.push_str(&format!(",{n}_var"));
    }
    writeln!(w, "{header}")?;
    for (idx, t) in trial.times.iter().enumerate() {
        let mut line = format!("{t}");
        for v in trial.estimates[idx].iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in trial.truth_states[idx].iter() {
            line.push_str(&format!(",{v}"));
        }
        for v in trial.cov_diag[idx].iter() {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Columns of a playback CSV: (state names, times, per-step estimates,
/// per-step truth values).
#[allow(clippy::type_complexity)]
pub fn read_playback_csv<R: BufRead>(
    r: R,
) -> Result<(Vec<String>, Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let mut names: Vec<String> = Vec::new();
    let mut times = Vec::new();
    let mut est = Vec::new();
    let mut tru = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.starts_with("t_s") {
            names = line
                .split(',')
                .skip(1)
                .filter(|c| c.ends_with("_est"))
                .map(|c| c.trim_end_matches("_est").to_string())
                .collect();
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::config(idx + 1, format!("bad number `{c}`")))
            })
            .collect::<Result<_>>()?;
        let n = names.len();
        if cols.len() != 1 + 3 * n {
            return Err(Error::config(idx + 1, "column count mismatch"));
        }
        times.push(cols[0]);
        est.push(cols[1..1 + n].to_vec());
        tru.push(cols[1 + n..1 + 2 * n].to_vec());
    }
    Ok((names, times, est, tru))
}
