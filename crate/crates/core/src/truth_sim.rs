//! Ground-truth trajectory generation: one sub-transient machine with AVR and
//! a selectable turbine governor against an infinite bus through a line
//! reactance, with a timed three-phase fault at the terminal, integrated by a
//! fixed-step classical Runge-Kutta scheme.
//!
//! Emitted channels include the terminal phasors and their analytic time
//! derivatives (obtained by differentiating the network algebraic map along
//! the ODE flow), frequency, ROCOF, and active/reactive power.

use std::io::{BufRead, Write};

use nalgebra::DVector;
use num_complex::Complex64;

use crate::config::ConfigMap;
use crate::error::{Error, Result};
use crate::gen_model::{
    dq_currents, electric_torque, equilibrium_solve, internal_emf, subtransient_flux,
    ConventionalModel,
};
use crate::params::{GeneratorParams, PARAM_KEYS};

// ---------------------------------------------------------------------------
// Turbine governors
// ---------------------------------------------------------------------------

/// Multi-stage steam governor constants: servo pole, reheat lead/lag pair,
/// and a second pole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteamTg {
    pub t_s: f64,
    pub t3: f64,
    pub t4: f64,
    pub t5: f64,
}

impl Default for SteamTg {
    fn default() -> Self {
        // Cascade with a -3 dB cutoff near 1/2.4 rad/s.
        SteamTg {
            t_s: 0.1,
            t3: 1.0,
            t4: 2.69,
            t5: 0.5,
        }
    }
}

/// Hydro governor constants: transient-droop compensation, gate servo, and
/// the non-minimum-phase water column (1 − T_w s)/(1 + T_w s/2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HydroTg {
    /// Temporary droop (dimensionless, > permanent droop).
    pub r_t: f64,
    /// Reset time of the droop compensation, s.
    pub t_r: f64,
    /// Water starting time, s.
    pub t_w: f64,
    /// Gate servo time constant, s.
    pub t_g: f64,
}

impl Default for HydroTg {
    fn default() -> Self {
        HydroTg {
            r_t: 0.38,
            t_r: 5.0,
            t_w: 1.0,
            t_g: 0.2,
        }
    }
}

/// Turbine-governor variant. Droop, `t_ef`, and the power offset `pm0` come
/// from [`GeneratorParams`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TgModel {
    SimplePole,
    MultiStageSteam(SteamTg),
    Hydro(HydroTg),
}

impl TgModel {
    /// Number of internal states of the variant.
    pub fn order(&self) -> usize {
        match self {
            TgModel::SimplePole => 1,
            TgModel::MultiStageSteam(_) | TgModel::Hydro(_) => 3,
        }
    }

    /// Internal state at equilibrium (speed at nominal).
    pub fn equilibrium_state(&self, p: &GeneratorParams) -> [f64; 3] {
        match self {
            TgModel::SimplePole => [p.pm0, 0.0, 0.0],
            _ => [0.0; 3],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &str, v: f64| Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
        match self {
            TgModel::SimplePole => Ok(()),
            TgModel::MultiStageSteam(s) => {
                for (n, v) in [("tg_Ts", s.t_s), ("tg_T3", s.t3), ("tg_T4", s.t4), ("tg_T5", s.t5)] {
                    if !(v > 0.0) {
                        return bad(n, v);
                    }
                }
                Ok(())
            }
            TgModel::Hydro(h) => {
                for (n, v) in [("tg_rt", h.r_t), ("tg_Tr", h.t_r), ("tg_Tw", h.t_w), ("tg_Tg", h.t_g)] {
                    if !(v > 0.0) {
                        return bad(n, v);
                    }
                }
                Ok(())
            }
        }
    }
}

/// Governor state derivatives plus the produced mechanical power and its rate.
///
/// The drive signal is the droop-scaled speed error (1 − ω)/r, offset by
/// `pm0` at the output.
pub fn tg_dynamics(
    tg: &TgModel,
    state: &[f64; 3],
    omega: f64,
    p: &GeneratorParams,
) -> ([f64; 3], f64, f64) {
    let e = (p.omega0 - omega) / p.droop;
    match tg {
        TgModel::SimplePole => {
            let pm = state[0];
            let dpm = (-pm + e + p.pm0) / p.t_ef;
            ([dpm, 0.0, 0.0], pm, dpm)
        }
        TgModel::MultiStageSteam(s) => {
            let [s1, s2, s3] = *state;
            let ds1 = (e - s1) / s.t_s;
            let ds2 = (s1 - s2) / s.t4;
            let lead = s.t3 / s.t4;
            let y2 = lead * s1 + (1.0 - lead) * s2;
            let ds3 = (y2 - s3) / s.t5;
            ([ds1, ds2, ds3], p.pm0 + s3, ds3)
        }
        TgModel::Hydro(h) => {
            let [s1, s2, s3] = *state;
            let t_rt = (h.r_t / p.droop) * h.t_r;
            let lead = h.t_r / t_rt;
            let ds1 = (e - s1) / t_rt;
            let y1 = lead * e + (1.0 - lead) * s1;
            let ds2 = (y1 - s2) / h.t_g;
            let tau = 0.5 * h.t_w;
            let ds3 = (s2 - s3) / tau;
            // Water column (1 − T_w s)/(1 + T_w s/2) realized as 3·s3 − 2·s2.
            let pm = p.pm0 + 3.0 * s3 - 2.0 * s2;
            let pm_dot = 3.0 * ds3 - 2.0 * ds2;
            ([ds1, ds2, ds3], pm, pm_dot)
        }
    }
}

/// Magnitude of the speed-to-power transfer function at angular frequency w,
/// normalized to unit DC gain.
fn tg_normalized_gain(tg: &TgModel, p: &GeneratorParams, w: f64) -> f64 {
    let pole = |t: f64| (1.0 + (w * t).powi(2)).sqrt();
    match tg {
        TgModel::SimplePole => 1.0 / pole(p.t_ef),
        TgModel::MultiStageSteam(s) => pole(s.t3) / (pole(s.t_s) * pole(s.t4) * pole(s.t5)),
        TgModel::Hydro(h) => {
            let t_rt = (h.r_t / p.droop) * h.t_r;
            pole(h.t_r) / pole(t_rt) / pole(h.t_g) * pole(h.t_w) / pole(0.5 * h.t_w)
        }
    }
}

/// Effective first-order time constant of a governor: the reciprocal of the
/// −3 dB cutoff of its linearized speed-to-power response.
pub fn effective_time_constant(tg: &TgModel, p: &GeneratorParams) -> f64 {
    if let TgModel::SimplePole = tg {
        return p.t_ef;
    }
    let target = std::f64::consts::FRAC_1_SQRT_2;
    // Bracket the first crossing on a log sweep, then bisect.
    let mut w_lo = 1e-6;
    let mut g_lo = tg_normalized_gain(tg, p, w_lo);
    let mut w_hi = w_lo;
    let mut found = false;
    while w_hi < 1e6 {
        w_hi = w_lo * 1.05;
        let g_hi = tg_normalized_gain(tg, p, w_hi);
        if g_lo >= target && g_hi < target {
            found = true;
            break;
        }
        w_lo = w_hi;
        g_lo = g_hi;
    }
    if !found {
        return f64::INFINITY;
    }
    for _ in 0..100 {
        let w_mid = 0.5 * (w_lo + w_hi);
        if tg_normalized_gain(tg, p, w_mid) >= target {
            w_lo = w_mid;
        } else {
            w_hi = w_mid;
        }
    }
    2.0 / (w_lo + w_hi)
}

// ---------------------------------------------------------------------------
// Scenario
// ---------------------------------------------------------------------------

/// How the emitted phasor-derivative channels are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DerivMode {
    /// Differentiate the network algebraic map along the ODE flow.
    Analytic,
    /// Post-process centered differences of the sampled phasors.
    CenteredDifference,
}

/// Full description of one truth run.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub params: GeneratorParams,
    pub tg: TgModel,
    /// Line reactance between the terminal and the infinite bus, p.u.
    pub line_x: f64,
    /// Infinite bus voltage magnitude (angle reference 0), p.u.
    pub bus_v: f64,
    /// Scheduled active power at the terminal, p.u.
    pub dispatch_p: f64,
    /// Terminal voltage magnitude at the pre-fault operating point, p.u.
    pub terminal_v: f64,
    pub fault_start: f64,
    pub fault_duration: f64,
    /// Fault reactance to ground at the terminal during the fault, p.u.
    pub fault_x: f64,
    pub t_end: f64,
    pub dt_sim: f64,
    pub seed: u64,
    pub deriv_mode: DerivMode,
}

impl Scenario {
    /// Canonical desk-scale scenario: loaded machine, steam governor, 100 ms
    /// terminal fault at t = 0.1 s.
    pub fn desk_default() -> Self {
        Scenario {
            params: GeneratorParams::desk_default(),
            tg: TgModel::MultiStageSteam(SteamTg::default()),
            line_x: 0.4,
            bus_v: 0.95,
            dispatch_p: 0.9,
            terminal_v: 1.0,
            fault_start: 0.1,
            fault_duration: 0.1,
            fault_x: 1e-4,
            t_end: 20.0,
            dt_sim: 1.0 / 9600.0,
            seed: 1,
            deriv_mode: DerivMode::Analytic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.tg.validate()?;
        if !(self.dt_sim > 0.0) {
            return Err(Error::InvalidParameter("dt_sim must be > 0".into()));
        }
        if self.fault_duration < 0.0
            || self.fault_start < 0.0
            || self.fault_start + self.fault_duration > self.t_end
        {
            return Err(Error::InvalidParameter(
                "fault window must lie within [0, t_end]".into(),
            ));
        }
        if !(self.line_x > 0.0 && self.bus_v > 0.0 && self.terminal_v > 0.0) {
            return Err(Error::InvalidParameter(
                "line_x, bus_v, terminal_v must be > 0".into(),
            ));
        }
        if self.fault_x < 0.0 {
            return Err(Error::InvalidParameter("fault_x must be >= 0".into()));
        }
        let s = self.dispatch_p * self.line_x / (self.terminal_v * self.bus_v);
        if s.abs() >= 1.0 {
            return Err(Error::InvalidParameter(format!(
                "dispatch infeasible over the line: P·X/(Vt·Vb) = {s:.3}"
            )));
        }
        Ok(())
    }

    /// Pre-fault terminal voltage and current phasors implied by the dispatch.
    pub fn terminal_conditions(&self) -> Result<(Complex64, Complex64)> {
        self.validate()?;
        let s = self.dispatch_p * self.line_x / (self.terminal_v * self.bus_v);
        let theta = s.asin();
        let v = Complex64::from_polar(self.terminal_v, theta);
        let bus = Complex64::new(self.bus_v, 0.0);
        let i = (v - bus) / Complex64::new(0.0, self.line_x);
        Ok((v, i))
    }

    const SCENARIO_KEYS: [&'static str; 17] = [
        "tg", "tg_Ts", "tg_T3", "tg_T4", "tg_T5", "tg_rt", "tg_Tr", "tg_Tw", "tg_Tg", "line_x",
        "bus_v", "dispatch_p", "terminal_v", "fault_start", "fault_duration", "fault_x",
        "deriv_mode",
    ];

    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let mut known: Vec<&str> = PARAM_KEYS.to_vec();
        known.extend_from_slice(&Self::SCENARIO_KEYS);
        known.extend_from_slice(&["t_end", "dt_sim", "seed"]);
        // Playback/noise keys may share the file; tolerate them here.
        known.extend_from_slice(&crate::calib::PIPELINE_KEYS);
        cfg.ensure_known(&known)?;

        let params = GeneratorParams::from_config(cfg)?;
        let tg = match cfg.get_str_or("tg", "steam") {
            "simple" => TgModel::SimplePole,
            "steam" => TgModel::MultiStageSteam(SteamTg {
                t_s: cfg.get_f64_or("tg_Ts", SteamTg::default().t_s)?,
                t3: cfg.get_f64_or("tg_T3", SteamTg::default().t3)?,
                t4: cfg.get_f64_or("tg_T4", SteamTg::default().t4)?,
                t5: cfg.get_f64_or("tg_T5", SteamTg::default().t5)?,
            }),
            "hydro" => TgModel::Hydro(HydroTg {
                r_t: cfg.get_f64_or("tg_rt", HydroTg::default().r_t)?,
                t_r: cfg.get_f64_or("tg_Tr", HydroTg::default().t_r)?,
                t_w: cfg.get_f64_or("tg_Tw", HydroTg::default().t_w)?,
                t_g: cfg.get_f64_or("tg_Tg", HydroTg::default().t_g)?,
            }),
            other => {
                return Err(Error::config(0, format!("unknown tg variant `{other}`")));
            }
        };
        let deriv_mode = match cfg.get_str_or("deriv_mode", "analytic") {
            "analytic" => DerivMode::Analytic,
            "centered" => DerivMode::CenteredDifference,
            other => {
                return Err(Error::config(0, format!("unknown deriv_mode `{other}`")));
            }
        };
        let d = Scenario::desk_default();
        let s = Scenario {
            params,
            tg,
            line_x: cfg.get_f64_or("line_x", d.line_x)?,
            bus_v: cfg.get_f64_or("bus_v", d.bus_v)?,
            dispatch_p: cfg.get_f64_or("dispatch_p", d.dispatch_p)?,
            terminal_v: cfg.get_f64_or("terminal_v", d.terminal_v)?,
            fault_start: cfg.get_f64_or("fault_start", d.fault_start)?,
            fault_duration: cfg.get_f64_or("fault_duration", d.fault_duration)?,
            fault_x: cfg.get_f64_or("fault_x", d.fault_x)?,
            t_end: cfg.get_f64_or("t_end", d.t_end)?,
            dt_sim: cfg.get_f64_or("dt_sim", d.dt_sim)?,
            seed: cfg.get_u64_or("seed", d.seed)?,
            deriv_mode,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn to_config_string(&self) -> String {
        let mut out = self.params.to_config_string();
        out.push('\n');
        match &self.tg {
            TgModel::SimplePole => out.push_str("tg = simple\n"),
            TgModel::MultiStageSteam(s) => {
                out.push_str("tg = steam\n");
                out.push_str(&format!("tg_Ts = {}\ntg_T3 = {}\ntg_T4 = {}\ntg_T5 = {}\n", s.t_s, s.t3, s.t4, s.t5));
            }
            TgModel::Hydro(h) => {
                out.push_str("tg = hydro\n");
                out.push_str(&format!("tg_rt = {}\ntg_Tr = {}\ntg_Tw = {}\ntg_Tg = {}\n", h.r_t, h.t_r, h.t_w, h.t_g));
            }
        }
        out.push_str(&format!(
            "line_x = {}\nbus_v = {}\ndispatch_p = {}\nterminal_v = {}\n",
            self.line_x, self.bus_v, self.dispatch_p, self.terminal_v
        ));
        out.push_str(&format!(
            "fault_start = {}\nfault_duration = {}\nfault_x = {}\n",
            self.fault_start, self.fault_duration, self.fault_x
        ));
        out.push_str(&format!("t_end = {}\ndt_sim = {}\nseed = {}\n", self.t_end, self.dt_sim, self.seed));
        out.push_str(match self.deriv_mode {
            DerivMode::Analytic => "deriv_mode = analytic\n",
            DerivMode::CenteredDifference => "deriv_mode = centered\n",
        });
        out
    }
}

// ---------------------------------------------------------------------------
// Network interface
// ---------------------------------------------------------------------------

/// Solve the series circuit machine EMF → (r_A + jx''_d) → terminal →
/// (jX_line) → infinite bus, optionally with a fault reactance to ground at
/// the terminal. Returns the terminal voltage and the machine current.
pub fn network_interface(
    e_int: Complex64,
    p: &GeneratorParams,
    line_x: f64,
    bus: Complex64,
    fault_x: Option<f64>,
) -> Result<(Complex64, Complex64)> {
    let z_m = Complex64::new(p.ra, p.xd_pp);
    match fault_x {
        None => {
            let z_tot = z_m + Complex64::new(0.0, line_x);
            if z_tot.norm() < 1e-12 {
                return Err(Error::InvalidParameter("zero total impedance".into()));
            }
            let i = (e_int - bus) / z_tot;
            Ok((e_int - z_m * i, i))
        }
        Some(xf) if xf == 0.0 => {
            if z_m.norm() < 1e-12 {
                return Err(Error::InvalidParameter("zero machine impedance".into()));
            }
            Ok((Complex64::new(0.0, 0.0), e_int / z_m))
        }
        Some(xf) => {
            let y_m = 1.0 / z_m;
            let y_f = 1.0 / Complex64::new(0.0, xf);
            let y_l = 1.0 / Complex64::new(0.0, line_x);
            let y_sum = y_m + y_f + y_l;
            if y_sum.norm() < 1e-12 {
                return Err(Error::InvalidParameter("singular fault network".into()));
            }
            let v = (y_m * e_int + y_l * bus) / y_sum;
            Ok((v, (e_int - v) * y_m))
        }
    }
}

/// Derivatives of the terminal voltage and current for a given EMF rate,
/// holding the network topology fixed.
fn network_derivative(
    de_int: Complex64,
    p: &GeneratorParams,
    line_x: f64,
    fault_x: Option<f64>,
) -> (Complex64, Complex64) {
    let z_m = Complex64::new(p.ra, p.xd_pp);
    match fault_x {
        None => {
            let z_tot = z_m + Complex64::new(0.0, line_x);
            let di = de_int / z_tot;
            (de_int - z_m * di, di)
        }
        Some(xf) if xf == 0.0 => (Complex64::new(0.0, 0.0), de_int / z_m),
        Some(xf) => {
            let y_m = 1.0 / z_m;
            let y_f = 1.0 / Complex64::new(0.0, xf);
            let y_l = 1.0 / Complex64::new(0.0, line_x);
            let dv = y_m * de_int / (y_m + y_f + y_l);
            (dv, (de_int - dv) * y_m)
        }
    }
}

// ---------------------------------------------------------------------------
// Integration
// ---------------------------------------------------------------------------

/// One classical 4-stage Runge-Kutta step from `t`.
pub fn rk4_step<F>(f: F, t: f64, state: &DVector<f64>, dt: f64) -> Result<DVector<f64>>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let k1 = f(t, state);
    let k2 = f(t + 0.5 * dt, &(state + 0.5 * dt * &k1));
    let k3 = f(t + 0.5 * dt, &(state + 0.5 * dt * &k2));
    let k4 = f(t + dt, &(state + dt * &k3));
    let next = state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::Integration {
            t,
            message: "state became non-finite".into(),
        });
    }
    Ok(next)
}

// ---------------------------------------------------------------------------
// Trajectory
// ---------------------------------------------------------------------------

/// One uniformly sampled record of the full truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub t: f64,
    pub delta: f64,
    pub omega: f64,
    /// dω/dt, p.u./s.
    pub omega_dot: f64,
    pub ed_p: f64,
    pub eq_p: f64,
    pub psi_d: f64,
    pub psi_q: f64,
    pub efd: f64,
    pub vtr: f64,
    pub pm: f64,
    /// dP_m/dt, p.u./s.
    pub pm_dot: f64,
    pub te: f64,
    pub v: Complex64,
    pub i: Complex64,
    pub v_dot: Complex64,
    pub i_dot: Complex64,
    /// Frequency, p.u. (equals ω in this single-machine setting).
    pub f_pu: f64,
    /// ROCOF, p.u./s (equals dω/dt here).
    pub alpha: f64,
    pub pe: f64,
    pub qe: f64,
}

/// Uniformly sampled truth with the parameter set actually used (operating
/// references solved by the equilibrium).
#[derive(Debug, Clone)]
pub struct TruthTrajectory {
    pub dt: f64,
    pub samples: Vec<TruthSample>,
    pub params: GeneratorParams,
}

impl TruthTrajectory {
    pub fn sample_at(&self, t: f64) -> Result<&TruthSample> {
        let idx = (t / self.dt).round() as usize;
        self.samples.get(idx).ok_or_else(|| Error::InvalidFrame(format!(
            "time {t} outside the trajectory"
        )))
    }
}

pub const TRUTH_CSV_SCHEMA: &str = "gencal-truth v1";
const TRUTH_HEADER: &str = "t_s,delta_rad,omega_pu,omega_dot_pups,edp_pu,eqp_pu,psid_pu,psiq_pu,efd_pu,vtr_pu,pm_pu,pmdot_pups,te_pu,v_re_pu,v_im_pu,i_re_pu,i_im_pu,vdot_re_pups,vdot_im_pups,idot_re_pups,idot_im_pups,f_pu,alpha_pups,pe_pu,qe_pu";

pub fn write_truth_csv<W: Write>(traj: &TruthTrajectory, mut w: W) -> Result<()> {
    writeln!(w, "# schema: {TRUTH_CSV_SCHEMA}")?;
    writeln!(w, "{TRUTH_HEADER}")?;
    for s in &traj.samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            s.t, s.delta, s.omega, s.omega_dot, s.ed_p, s.eq_p, s.psi_d, s.psi_q, s.efd, s.vtr,
            s.pm, s.pm_dot, s.te, s.v.re, s.v.im, s.i.re, s.i.im, s.v_dot.re, s.v_dot.im,
            s.i_dot.re, s.i_dot.im, s.f_pu, s.alpha, s.pe, s.qe
        )?;
    }
    Ok(())
}

pub fn read_truth_csv<R: BufRead>(r: R) -> Result<(f64, Vec<TruthSample>)> {
    let mut samples = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line.starts_with("t_s") {
            continue;
        }
        let cols: Vec<f64> = line
            .split(',')
            .map(|c| {
                c.parse::<f64>()
                    .map_err(|_| Error::config(idx + 1, format!("bad number `{c}`")))
            })
            .collect::<Result<_>>()?;
        if cols.len() != 25 {
            return Err(Error::config(idx + 1, format!("expected 25 columns, got {}", cols.len())));
        }
        samples.push(TruthSample {
            t: cols[0],
            delta: cols[1],
            omega: cols[2],
            omega_dot: cols[3],
            ed_p: cols[4],
            eq_p: cols[5],
            psi_d: cols[6],
            psi_q: cols[7],
            efd: cols[8],
            vtr: cols[9],
            pm: cols[10],
            pm_dot: cols[11],
            te: cols[12],
            v: Complex64::new(cols[13], cols[14]),
            i: Complex64::new(cols[15], cols[16]),
            v_dot: Complex64::new(cols[17], cols[18]),
            i_dot: Complex64::new(cols[19], cols[20]),
            f_pu: cols[21],
            alpha: cols[22],
            pe: cols[23],
            qe: cols[24],
        });
    }
    if samples.len() < 2 {
        return Err(Error::config(0, "truth CSV holds fewer than two samples"));
    }
    let dt = samples[1].t - samples[0].t;
    Ok((dt, samples))
}

// ---------------------------------------------------------------------------
// Simulation
// ---------------------------------------------------------------------------

struct TruthRig {
    model: ConventionalModel,
    tg: TgModel,
    line_x: f64,
    bus: Complex64,
}

impl TruthRig {
    /// Machine + governor derivatives with the network closed.
    fn rhs(&self, y: &DVector<f64>, fault_x: Option<f64>) -> DVector<f64> {
        let p = &self.model.p;
        let x8: [f64; 8] = y.as_slice()[..8].try_into().unwrap();
        let tg_state: [f64; 3] = [
            y[8],
            if y.len() > 9 { y[9] } else { 0.0 },
            if y.len() > 10 { y[10] } else { 0.0 },
        ];
        let (psi_d_pp, psi_q_pp) = subtransient_flux(x8[2], x8[3], x8[4], x8[5], p);
        let e_int = internal_emf(x8[0], psi_d_pp, psi_q_pp);
        let (v, i) = match network_interface(e_int, p, self.line_x, self.bus, fault_x) {
            Ok(vi) => vi,
            Err(_) => {
                return DVector::from_element(y.len(), f64::NAN);
            }
        };
        let (i_d, i_q) = dq_currents(x8[0], i.re, i.im);
        let pe = (v * i.conj()).re;
        let te = electric_torque(pe, i_d, i_q, p.ra);
        let (e_d, e_q) = (
            psi_q_pp - p.ra * i_d + p.xd_pp * i_q,
            psi_d_pp - p.ra * i_q - p.xd_pp * i_d,
        );
        let v_mag = e_d.hypot(e_q);
        let (dtg, pm, _) = tg_dynamics(&self.tg, &tg_state, x8[1], p);
        let dm = self
            .model
            .machine8_rhs(&x8, i_d, i_q, te, v_mag, pm, p.h, p.ka);
        let mut dy = DVector::zeros(y.len());
        dy.as_mut_slice()[..8].copy_from_slice(&dm);
        for j in 0..self.tg.order() {
            dy[8 + j] = dtg[j];
        }
        dy
    }

    /// Full output record at one instant.
    fn outputs(&self, t: f64, y: &DVector<f64>, fault_x: Option<f64>) -> TruthSample {
        let p = &self.model.p;
        let x8: [f64; 8] = y.as_slice()[..8].try_into().unwrap();
        let tg_state: [f64; 3] = [
            y[8],
            if y.len() > 9 { y[9] } else { 0.0 },
            if y.len() > 10 { y[10] } else { 0.0 },
        ];
        let (psi_d_pp, psi_q_pp) = subtransient_flux(x8[2], x8[3], x8[4], x8[5], p);
        let e_int = internal_emf(x8[0], psi_d_pp, psi_q_pp);
        let (v, i) = network_interface(e_int, p, self.line_x, self.bus, fault_x)
            .expect("network solved during integration");
        let (i_d, i_q) = dq_currents(x8[0], i.re, i.im);
        let s_power = v * i.conj();
        let te = electric_torque(s_power.re, i_d, i_q, p.ra);
        let dy = self.rhs(y, fault_x);
        let (_, pm, pm_dot) = tg_dynamics(&self.tg, &tg_state, x8[1], p);

        // EMF rate along the flow: rotate the flux rates and add the frame
        // rotation jδ̇·E.
        let dq = p.xq_p - p.x_ls;
        let dd = p.xd_p - p.x_ls;
        let dpsi_q_pp = (p.x_ls - p.xq_pp) / dq * dy[2] - (p.xq_p - p.xq_pp) / dq * dy[5];
        let dpsi_d_pp = (p.xd_pp - p.x_ls) / dd * dy[3] + (p.xd_p - p.xd_pp) / dd * dy[4];
        let rot = Complex64::from_polar(1.0, x8[0] - std::f64::consts::FRAC_PI_2);
        let de_int = Complex64::new(dpsi_q_pp, dpsi_d_pp) * rot
            + Complex64::new(0.0, dy[0]) * e_int;
        let (v_dot, i_dot) = network_derivative(de_int, p, self.line_x, fault_x);

        TruthSample {
            t,
            delta: x8[0],
            omega: x8[1],
            omega_dot: dy[1],
            ed_p: x8[2],
            eq_p: x8[3],
            psi_d: x8[4],
            psi_q: x8[5],
            efd: x8[6],
            vtr: x8[7],
            pm,
            pm_dot,
            te,
            v,
            i,
            v_dot,
            i_dot,
            f_pu: x8[1],
            alpha: dy[1],
            pe: s_power.re,
            qe: s_power.im,
        }
    }
}

/// Integrate a scenario and emit the uniformly sampled truth.
pub fn simulate(s: &Scenario) -> Result<TruthTrajectory> {
    s.validate()?;
    let (v_term, i_term) = s.terminal_conditions()?;
    let eq = equilibrium_solve(v_term, i_term, &s.params)?;
    let params = eq.params.clone();
    let model = ConventionalModel::new(&params)?;
    let rig = TruthRig {
        model,
        tg: s.tg,
        line_x: s.line_x,
        bus: Complex64::new(s.bus_v, 0.0),
    };

    let n_state = 8 + s.tg.order();
    let mut y = DVector::zeros(n_state);
    let st = eq.state;
    y.as_mut_slice()[..8].copy_from_slice(&[
        st.delta, st.omega, st.ed_p, st.eq_p, st.psi_d, st.psi_q, st.efd, st.vtr,
    ]);
    let tg0 = s.tg.equilibrium_state(&params);
    for j in 0..s.tg.order() {
        y[8 + j] = tg0[j];
    }

    let n_steps = (s.t_end / s.dt_sim).round() as usize;
    let fs_idx = (s.fault_start / s.dt_sim).round() as usize;
    let fe_idx = ((s.fault_start + s.fault_duration) / s.dt_sim).round() as usize;
    let has_fault = s.fault_duration > 0.0 && fe_idx > fs_idx;
    let fault_at = |idx: usize| -> Option<f64> {
        if has_fault && idx >= fs_idx && idx < fe_idx {
            Some(s.fault_x)
        } else {
            None
        }
    };

    let mut samples = Vec::with_capacity(n_steps + 1);
    for idx in 0..=n_steps {
        let t = idx as f64 * s.dt_sim;
        let fx = fault_at(idx);
        samples.push(rig.outputs(t, &y, fx));
        if idx < n_steps {
            y = rk4_step(|_, x| rig.rhs(x, fx), t, &y, s.dt_sim)?;
        }
    }

    if s.deriv_mode == DerivMode::CenteredDifference {
        let boundaries = if has_fault {
            vec![0usize, fs_idx, fe_idx, n_steps]
        } else {
            vec![0usize, n_steps]
        };
        apply_centered_differences(&mut samples, s.dt_sim, &boundaries);
    }

    Ok(TruthTrajectory {
        dt: s.dt_sim,
        samples,
        params,
    })
}

/// Replace the phasor-derivative channels by finite differences of the phasor
/// channels, centered in the interior of each smooth segment and one-sided at
/// segment edges.
fn apply_centered_differences(samples: &mut [TruthSample], dt: f64, boundaries: &[usize]) {
    for seg in boundaries.windows(2) {
        let (lo, hi) = (seg[0], seg[1]);
        if hi <= lo + 1 {
            continue;
        }
        for idx in lo..=hi {
            let (v_dot, i_dot) = if idx == lo {
                (
                    (samples[idx + 1].v - samples[idx].v) / dt,
                    (samples[idx + 1].i - samples[idx].i) / dt,
                )
            } else if idx == hi {
                (
                    (samples[idx].v - samples[idx - 1].v) / dt,
                    (samples[idx].i - samples[idx - 1].i) / dt,
                )
            } else {
                (
                    (samples[idx + 1].v - samples[idx - 1].v) / (2.0 * dt),
                    (samples[idx + 1].i - samples[idx - 1].i) / (2.0 * dt),
                )
            };
            samples[idx].v_dot = v_dot;
            samples[idx].i_dot = i_dot;
        }
    }
}
