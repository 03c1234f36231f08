//! Machine, AVR, and turbine-governor constants.

use crate::config::ConfigMap;
use crate::error::{Error, Result};

/// Canonical desk-scale parameter file shipped with the crate.
pub const DEFAULT_GEN_CONF: &str = include_str!("../../../config/default_gen.conf");

/// All synchronous-machine, AVR, and TG constants, p.u. on the machine base
/// unless noted. `v_ref` and `pm0` are operating-point values normally
/// re-solved per scenario by the equilibrium solver.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    /// Stator resistance.
    pub ra: f64,
    /// d/q synchronous reactances.
    pub xd: f64,
    pub xq: f64,
    /// d/q transient reactances.
    pub xd_p: f64,
    pub xq_p: f64,
    /// d/q sub-transient reactances.
    pub xd_pp: f64,
    pub xq_pp: f64,
    /// Stator leakage reactance.
    pub x_ls: f64,
    /// Open-circuit time constants, s.
    pub td_p: f64,
    pub tq_p: f64,
    pub td_pp: f64,
    pub tq_pp: f64,
    /// Inertia constant, s.
    pub h: f64,
    /// Damping factor.
    pub d: f64,
    /// Saturation polynomial S(E'_q) = ksat1·E'_q² + ksat2·E'_q + ksat3.
    pub ksat1: f64,
    pub ksat2: f64,
    pub ksat3: f64,
    /// Exciter gain and time constant.
    pub ka: f64,
    pub ta: f64,
    /// Transducer time constant, s.
    pub tr: f64,
    /// Excitation reference, p.u.
    pub v_ref: f64,
    /// Constant stabilizer signal, p.u.
    pub pss: f64,
    /// Governor droop (TG gain is 1/droop).
    pub droop: f64,
    /// Governor effective time constant, s.
    pub t_ef: f64,
    /// Steady-state mechanical power, p.u.
    pub pm0: f64,
    /// Nominal rotor speed, p.u.
    pub omega0: f64,
    /// Synchronous base angular speed, rad/s.
    pub omega_s: f64,
}

pub const PARAM_KEYS: [&str; 27] = [
    "ra", "xd", "xq", "xd_p", "xq_p", "xd_pp", "xq_pp", "x_ls", "Td_p", "Tq_p", "Td_pp", "Tq_pp",
    "H", "D", "ksat1", "ksat2", "ksat3", "KA", "TA", "TR", "VREF", "pss", "r", "Tef", "Pm0",
    "omega0", "omega_s",
];

impl GeneratorParams {
    /// The canonical desk-scale set, parsed from the shipped config file.
    pub fn desk_default() -> Self {
        let cfg = ConfigMap::parse(DEFAULT_GEN_CONF).expect("shipped default config parses");
        Self::from_config(&cfg).expect("shipped default config is valid")
    }

    pub fn from_config(cfg: &ConfigMap) -> Result<Self> {
        let p = GeneratorParams {
            ra: cfg.get_f64("ra")?,
            xd: cfg.get_f64("xd")?,
            xq: cfg.get_f64("xq")?,
            xd_p: cfg.get_f64("xd_p")?,
            xq_p: cfg.get_f64("xq_p")?,
            xd_pp: cfg.get_f64("xd_pp")?,
            xq_pp: cfg.get_f64("xq_pp")?,
            x_ls: cfg.get_f64("x_ls")?,
            td_p: cfg.get_f64("Td_p")?,
            tq_p: cfg.get_f64("Tq_p")?,
            td_pp: cfg.get_f64("Td_pp")?,
            tq_pp: cfg.get_f64("Tq_pp")?,
            h: cfg.get_f64("H")?,
            d: cfg.get_f64("D")?,
            ksat1: cfg.get_f64("ksat1")?,
            ksat2: cfg.get_f64("ksat2")?,
            ksat3: cfg.get_f64("ksat3")?,
            ka: cfg.get_f64("KA")?,
            ta: cfg.get_f64("TA")?,
            tr: cfg.get_f64("TR")?,
            v_ref: cfg.get_f64("VREF")?,
            pss: cfg.get_f64("pss")?,
            droop: cfg.get_f64("r")?,
            t_ef: cfg.get_f64("Tef")?,
            pm0: cfg.get_f64("Pm0")?,
            omega0: cfg.get_f64("omega0")?,
            omega_s: cfg.get_f64("omega_s")?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: f64, unit: &str| {
            s.push_str(&format!("{k} = {v}    # {unit}\n"));
        };
        kv("ra", self.ra, "stator resistance, p.u.");
        kv("xd", self.xd, "d-axis synchronous reactance, p.u.");
        kv("xq", self.xq, "q-axis synchronous reactance, p.u.");
        kv("xd_p", self.xd_p, "d-axis transient reactance, p.u.");
        kv("xq_p", self.xq_p, "q-axis transient reactance, p.u.");
        kv("xd_pp", self.xd_pp, "d-axis sub-transient reactance, p.u.");
        kv("xq_pp", self.xq_pp, "q-axis sub-transient reactance, p.u.");
        kv("x_ls", self.x_ls, "stator leakage reactance, p.u.");
        kv("Td_p", self.td_p, "T'_d, s");
        kv("Tq_p", self.tq_p, "T'_q, s");
        kv("Td_pp", self.td_pp, "T''_d, s");
        kv("Tq_pp", self.tq_pp, "T''_q, s");
        kv("H", self.h, "inertia constant, s");
        kv("D", self.d, "damping factor, p.u.");
        kv("ksat1", self.ksat1, "saturation quadratic coefficient");
        kv("ksat2", self.ksat2, "saturation linear coefficient");
        kv("ksat3", self.ksat3, "saturation constant coefficient");
        kv("KA", self.ka, "exciter gain");
        kv("TA", self.ta, "exciter time constant, s");
        kv("TR", self.tr, "transducer time constant, s");
        kv("VREF", self.v_ref, "excitation reference, p.u.");
        kv("pss", self.pss, "stabilizer signal, p.u.");
        kv("r", self.droop, "governor droop");
        kv("Tef", self.t_ef, "governor effective time constant, s");
        kv("Pm0", self.pm0, "steady-state mechanical power, p.u.");
        kv("omega0", self.omega0, "nominal rotor speed, p.u.");
        kv("omega_s", self.omega_s, "synchronous angular speed, rad/s");
        s
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::InvalidParameter(m.to_string()));
        if !(self.x_ls > 0.0 && self.xd_pp > self.x_ls && self.xq_pp > self.x_ls) {
            return err("need x''_d > x_ls > 0 and x''_q > x_ls");
        }
        if !(self.xd >= self.xd_p && self.xd_p >= self.xd_pp) {
            return err("need x_d >= x'_d >= x''_d");
        }
        if !(self.xq >= self.xq_p && self.xq_p >= self.xq_pp) {
            return err("need x_q >= x'_q >= x''_q");
        }
        if self.xd_p - self.x_ls <= 0.0 || self.xq_p - self.x_ls <= 0.0 {
            return err("degenerate reactances: x'_d and x'_q must exceed x_ls");
        }
        for (name, v) in [
            ("Td_p", self.td_p),
            ("Tq_p", self.tq_p),
            ("Td_pp", self.td_pp),
            ("Tq_pp", self.tq_pp),
            ("H", self.h),
            ("TA", self.ta),
            ("TR", self.tr),
            ("Tef", self.t_ef),
            ("r", self.droop),
            ("omega_s", self.omega_s),
        ] {
            if !(v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Nominal electrical frequency in Hz.
    pub fn f_nominal(&self) -> f64 {
        self.omega_s / (2.0 * std::f64::consts::PI)
    }
}
