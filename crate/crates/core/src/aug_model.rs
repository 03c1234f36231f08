//! Augmented sub-transient model: the rotor-acceleration state chain driven by
//! the time derivative of the electric torque, the phasor magnitude/phase
//! derivative utilities, and the 4-channel measurement function
//! [V_re, V_im, f, α].

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::gen_model::{dq_currents, ConventionalModel, Measurement2};
use crate::params::GeneratorParams;

/// Dimension of the augmented state vector.
pub const AUGMENTED_DIM: usize = 12;

/// Display names for the augmented state coordinates, in vector order.
pub const AUGMENTED_STATE_NAMES: [&str; AUGMENTED_DIM] = [
    "delta", "omega", "omega_dot", "ed_p", "eq_p", "psi_d", "psi_q", "efd", "vtr", "pm_dot", "H",
    "KA",
];

/// Augmented state: the conventional rotor/AVR coordinates plus the rotor
/// acceleration ω̇ and the mechanical-power rate Ṗ_m in place of P_m.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedState {
    pub delta: f64,
    pub omega: f64,
    /// Rotor acceleration, p.u./s.
    pub omega_dot: f64,
    pub ed_p: f64,
    pub eq_p: f64,
    pub psi_d: f64,
    pub psi_q: f64,
    pub efd: f64,
    pub vtr: f64,
    /// Mechanical power rate, p.u./s.
    pub pm_dot: f64,
    pub h_est: f64,
    pub ka_est: f64,
}

impl AugmentedState {
    pub fn to_array(&self) -> [f64; AUGMENTED_DIM] {
        [
            self.delta,
            self.omega,
            self.omega_dot,
            self.ed_p,
            self.eq_p,
            self.psi_d,
            self.psi_q,
            self.efd,
            self.vtr,
            self.pm_dot,
            self.h_est,
            self.ka_est,
        ]
    }

    pub fn from_array(x: &[f64; AUGMENTED_DIM]) -> Self {
        AugmentedState {
            delta: x[0],
            omega: x[1],
            omega_dot: x[2],
            ed_p: x[3],
            eq_p: x[4],
            psi_d: x[5],
            psi_q: x[6],
            efd: x[7],
            vtr: x[8],
            pm_dot: x[9],
            h_est: x[10],
            ka_est: x[11],
        }
    }
}

/// Input of the augmented model: the measured voltage and current phasors and
/// their complex time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentedInput {
    pub v: Complex64,
    pub i: Complex64,
    pub v_dot: Complex64,
    pub i_dot: Complex64,
}

/// Measurement vector of the augmented model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement4 {
    pub v_re: f64,
    pub v_im: f64,
    /// Frequency, p.u.
    pub f: f64,
    /// ROCOF, p.u./s.
    pub alpha: f64,
}

/// Split a complex phasor derivative into amplitude and phase rates:
/// d|ph|/dt = |ph|·Re{ph̊/ph}, dθ/dt = Im{ph̊/ph}.
pub fn phasor_log_derivative(phasor: Complex64, phasor_dot: Complex64) -> Result<(f64, f64)> {
    let mag = phasor.norm();
    if mag <= 0.0 {
        return Err(Error::InvalidFrame(
            "zero-magnitude phasor has no defined amplitude/phase rates".into(),
        ));
    }
    let ratio = phasor_dot / phasor;
    Ok((mag * ratio.re, ratio.im))
}

/// Active power Re{V·I*}.
pub fn active_power(v: Complex64, i: Complex64) -> f64 {
    (v * i.conj()).re
}

/// Product-rule expansion of d/dt [V·I·cos(θ−φ)].
#[allow(clippy::too_many_arguments)]
pub fn active_power_rate(
    v_mag: f64,
    i_mag: f64,
    theta: f64,
    phi: f64,
    v_rate: f64,
    i_rate: f64,
    theta_rate: f64,
    phi_rate: f64,
) -> f64 {
    let (s, c) = (theta - phi).sin_cos();
    (v_rate * i_mag + v_mag * i_rate) * c - v_mag * i_mag * s * (theta_rate - phi_rate)
}

/// Rates of the dq-frame currents for a rotating frame.
///
/// `rotation_rate` is the instantaneous angular rate of the dq frame (the
/// chain-rule factor on the current components; rad/s for δ in rad and t in
/// seconds).
pub fn current_dq_rates(
    delta: f64,
    rotation_rate: f64,
    i_re: f64,
    i_im: f64,
    di_re: f64,
    di_im: f64,
) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    let di_d = (di_re + i_im * rotation_rate) * s + (i_re * rotation_rate - di_im) * c;
    let di_q = (di_im - i_re * rotation_rate) * s + (i_im * rotation_rate + di_re) * c;
    (di_d, di_q)
}

/// Electric-torque rate in its simplified frame-independent form,
/// Ṫ_e = Ṗ_e + 2·r_A·(I_re·İ_re + I_im·İ_im).
pub fn torque_rate(pe_rate: f64, i_re: f64, i_im: f64, di_re: f64, di_im: f64, ra: f64) -> f64 {
    pe_rate + 2.0 * ra * (i_re * di_re + i_im * di_im)
}

/// Input-derived quantities shared by every sigma point at one evaluation
/// instant.
#[derive(Debug, Clone, Copy)]
pub struct PreparedAugInput {
    pub i_re: f64,
    pub i_im: f64,
    /// |V|, feeding the AVR transducer.
    pub v_mag: f64,
    /// Ṫ_e from the measured phasors and their derivatives.
    pub te_rate: f64,
}

impl PreparedAugInput {
    pub fn new(u: &AugmentedInput, ra: f64) -> Result<Self> {
        let (v_rate, theta_rate) = phasor_log_derivative(u.v, u.v_dot)?;
        let (i_rate, phi_rate) = phasor_log_derivative(u.i, u.i_dot)?;
        let pe_rate = active_power_rate(
            u.v.norm(),
            u.i.norm(),
            u.v.arg(),
            u.i.arg(),
            v_rate,
            i_rate,
            theta_rate,
            phi_rate,
        );
        Ok(PreparedAugInput {
            i_re: u.i.re,
            i_im: u.i.im,
            v_mag: u.v.norm(),
            te_rate: torque_rate(pe_rate, u.i.re, u.i.im, u.i_dot.re, u.i_dot.im, ra),
        })
    }
}

/// Precomputed augmented model bound to one parameter set.
#[derive(Debug, Clone)]
pub struct AugmentedModel {
    pub conv: ConventionalModel,
}

impl AugmentedModel {
    pub fn new(p: &GeneratorParams) -> Result<Self> {
        Ok(AugmentedModel {
            conv: ConventionalModel::new(p)?,
        })
    }

    pub fn params(&self) -> &GeneratorParams {
        &self.conv.p
    }

    /// Augmented transition map. NaN-fills the output when the estimated
    /// inertia state is not positive.
    pub fn rhs_raw(&self, x: &[f64; AUGMENTED_DIM], u: &PreparedAugInput) -> [f64; AUGMENTED_DIM] {
        let h = x[10];
        if !(h > 0.0) {
            return [f64::NAN; AUGMENTED_DIM];
        }
        let p = self.params();
        let (delta, omega, omega_dot) = (x[0], x[1], x[2]);
        let pm_dot = x[9];
        let ka = x[11];
        let (i_d, i_q) = dq_currents(delta, u.i_re, u.i_im);
        let r = self
            .conv
            .rotor_avr_rhs(x[3], x[4], x[5], x[6], x[7], x[8], i_d, i_q, u.v_mag, ka);
        [
            p.omega_s * (omega - p.omega0),
            omega_dot,
            p.omega0 / (2.0 * h) * (pm_dot - u.te_rate - p.d * omega_dot),
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
            (-pm_dot - omega_dot / p.droop) / p.t_ef,
            0.0,
            0.0,
        ]
    }

    /// 4-channel measurement: voltage phasor from the dynamic circuit, then
    /// f = ω and α = ω̇.
    pub fn measure(&self, x: &[f64; AUGMENTED_DIM], i_re: f64, i_im: f64) -> Measurement4 {
        let conv_x = [
            x[0], x[1], x[3], x[4], x[5], x[6], x[7], x[8], 0.0, x[10], x[11],
        ];
        let u2 = crate::gen_model::ConventionalInput {
            pe: 0.0,
            i_re,
            i_im,
        };
        let Measurement2 { v_re, v_im } = self.conv.measure(&conv_x, &u2);
        Measurement4 {
            v_re,
            v_im,
            f: x[1],
            alpha: x[2],
        }
    }
}

/// Time derivative of the augmented state.
pub fn augmented_dynamics(
    x: &AugmentedState,
    u: &AugmentedInput,
    p: &GeneratorParams,
) -> Result<[f64; AUGMENTED_DIM]> {
    if !(x.h_est > 0.0) {
        return Err(Error::SingularState(format!(
            "estimated inertia must be positive, got {}",
            x.h_est
        )));
    }
    let model = AugmentedModel::new(p)?;
    let prepared = PreparedAugInput::new(u, p.ra)?;
    let dx = model.rhs_raw(&x.to_array(), &prepared);
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "augmented dynamics".into(),
        });
    }
    Ok(dx)
}

/// Measurement function of the augmented model.
pub fn augmented_measurement(
    x: &AugmentedState,
    u: &AugmentedInput,
    p: &GeneratorParams,
) -> Measurement4 {
    let model = AugmentedModel::new(p).expect("validated parameters");
    model.measure(&x.to_array(), u.i.re, u.i.im)
}

/// Trapezoidal integration of a uniformly sampled Ṗ_m series, anchored at the
/// provided initial mechanical power.
pub fn integrate_pm(pm_dot: &[f64], dt: f64, pm_initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(pm_dot.len());
    let mut acc = pm_initial;
    out.push(acc);
    for w in pm_dot.windows(2) {
        acc += 0.5 * dt * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen_model::{conventional_measurement, equilibrium_solve, ConventionalState};
    use crate::params::GeneratorParams;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::FRAC_PI_2;

    fn params() -> GeneratorParams {
        GeneratorParams::desk_default()
    }

    #[test]
    fn log_derivative_pure_rotation_and_growth() {
        let (a, w) =
            phasor_log_derivative(Complex64::new(1.0, 0.0), Complex64::new(0.0, 3.7)).unwrap();
        assert!(a.abs() < 1e-15 && (w - 3.7).abs() < 1e-15);
        let (a, w) =
            phasor_log_derivative(Complex64::new(1.0, 0.0), Complex64::new(0.25, 0.0)).unwrap();
        assert!((a - 0.25).abs() < 1e-15 && w.abs() < 1e-15);
    }

    #[test]
    fn log_derivative_round_trip() {
        // Forward-construct the complex derivative from amplitude/phase rates
        // and invert it.
        let cases = [(1.02, 0.3, 0.05, -2.0), (0.7, -1.1, -0.3, 0.8)];
        for (v, th, dv, dth) in cases {
            let ph = Complex64::from_polar(v, th);
            let ph_dot = Complex64::new(dv, v * dth) * Complex64::from_polar(1.0, th);
            let (a, w) = phasor_log_derivative(ph, ph_dot).unwrap();
            assert!((a - dv).abs() < 1e-12, "{a} vs {dv}");
            assert!((w - dth).abs() < 1e-12, "{w} vs {dth}");
        }
    }

    #[test]
    fn log_derivative_round_trip_randomized() {
        let mut rng = StdRng::seed_from_u64(7);
        for _ in 0..500 {
            let v: f64 = rng.gen_range(0.1..2.0);
            let th: f64 = rng.gen_range(-3.0..3.0);
            let dv: f64 = rng.gen_range(-1.0..1.0);
            let dth: f64 = rng.gen_range(-5.0..5.0);
            let ph = Complex64::from_polar(v, th);
            let ph_dot = Complex64::new(dv, v * dth) * Complex64::from_polar(1.0, th);
            let (a, w) = phasor_log_derivative(ph, ph_dot).unwrap();
            assert!((a - dv).abs() < 1e-12);
            assert!((w - dth).abs() < 1e-12);
        }
    }

    #[test]
    fn log_derivative_zero_phasor_errors() {
        assert!(
            phasor_log_derivative(Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)).is_err()
        );
    }

    #[test]
    fn active_power_examples() {
        assert!(
            (active_power(Complex64::new(1.0, 0.0), Complex64::new(1.0, 0.0)) - 1.0).abs() < 1e-15
        );
        let i = Complex64::from_polar(1.0, FRAC_PI_2);
        assert!(active_power(Complex64::new(1.0, 0.0), i).abs() < 1e-15);
        let v = Complex64::from_polar(1.02, 0.3);
        let i = Complex64::from_polar(0.9, 0.1);
        assert!((active_power(v, i) - 0.9 * 1.02 * 0.2f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn active_power_rate_trivial_cases() {
        assert_eq!(
            active_power_rate(1.0, 0.9, 0.4, 0.1, 0.0, 0.0, 0.0, 0.0),
            0.0
        );
        let r = active_power_rate(1.0, 0.9, 0.4, 0.4, 0.0, 0.0, 2.0, -1.0);
        assert!(r.abs() < 1e-15);
    }

    /// Smooth synthetic phasor pair used by the finite-difference oracles.
    #[allow(clippy::type_complexity)]
    fn path(t: f64) -> (Complex64, Complex64, f64, f64, f64, f64) {
        let v = 1.02 + 0.05 * (2.0 * t).sin();
        let th = 0.3 + 0.2 * (1.3 * t).cos();
        let i = 0.9 + 0.08 * (1.7 * t).cos();
        let ph = -0.1 + 0.15 * (2.3 * t).sin();
        let dv = 0.1 * (2.0 * t).cos();
        let dth = -0.26 * (1.3 * t).sin();
        let di = -0.136 * (1.7 * t).sin();
        let dph = 0.345 * (2.3 * t).cos();
        let _ = (v, i);
        (
            Complex64::from_polar(v, th),
            Complex64::from_polar(i, ph),
            dv,
            dth,
            di,
            dph,
        )
    }

    #[test]
    fn active_power_rate_matches_centered_difference() {
        let t0 = 0.37;
        let mut errs = Vec::new();
        for h in [1e-3, 5e-4] {
            let (v, i, dv, dth, di, dph) = path(t0);
            let rate = active_power_rate(v.norm(), i.norm(), v.arg(), i.arg(), dv, di, dth, dph);
            let (vp, ip, ..) = path(t0 + h);
            let (vm, im, ..) = path(t0 - h);
            let fd = (active_power(vp, ip) - active_power(vm, im)) / (2.0 * h);
            errs.push((rate - fd).abs());
        }
        // Second-order convergence: halving h divides the error by ~4.
        assert!(errs[0] < 1e-5, "coarse error {}", errs[0]);
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn current_dq_rates_examples() {
        // Frozen frame at quadrature.
        let (dd, dq) = current_dq_rates(FRAC_PI_2, 0.0, 0.4, -0.7, 0.11, 0.22);
        assert!((dd - 0.11).abs() < 1e-15 && (dq - 0.22).abs() < 1e-15);
        // Static phasor in a rotating frame at delta = 0.
        let (dd, dq) = current_dq_rates(0.0, 1.5, 0.4, -0.7, 0.0, 0.0);
        assert!((dd - 0.4 * 1.5).abs() < 1e-15);
        assert!((dq - (-0.7) * 1.5).abs() < 1e-15);
    }

    #[test]
    fn current_dq_rates_match_centered_difference() {
        // delta(t), I(t) path; the rotation rate fed to the operation is the
        // path's own d(delta)/dt.
        let delta = |t: f64| 0.8 + 0.3 * (2.0 * t).sin();
        let ddelta = |t: f64| 0.6 * (2.0 * t).cos();
        let i_re = |t: f64| 0.9 + 0.1 * (3.0 * t).sin();
        let di_re = |t: f64| 0.3 * (3.0 * t).cos();
        let i_im = |t: f64| -0.2 + 0.15 * (1.1 * t).cos();
        let di_im = |t: f64| -0.165 * (1.1 * t).sin();
        let t0 = 0.52;
        let mut errs = Vec::new();
        for h in [1e-3, 5e-4] {
            let (dd, dq) = current_dq_rates(
                delta(t0),
                ddelta(t0),
                i_re(t0),
                i_im(t0),
                di_re(t0),
                di_im(t0),
            );
            let f = |t: f64| dq_currents(delta(t), i_re(t), i_im(t));
            let (dp, qp) = f(t0 + h);
            let (dm, qm) = f(t0 - h);
            let fd_d = (dp - dm) / (2.0 * h);
            let fd_q = (qp - qm) / (2.0 * h);
            errs.push((dd - fd_d).abs().max((dq - fd_q).abs()));
        }
        assert!(errs[0] < 1e-5);
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.0 && ratio < 5.0, "ratio {ratio}");
    }

    #[test]
    fn torque_rate_trivial_cases() {
        assert_eq!(torque_rate(0.7, 1.0, 2.0, 0.3, 0.4, 0.0), 0.7);
        assert_eq!(torque_rate(0.7, 1.0, 2.0, 0.0, 0.0, 0.01), 0.7);
    }

    #[test]
    fn torque_rate_equals_unsimplified_form() {
        // The dq-frame form r_A·(2·I_d·İ_d + 2·I_q·İ_q) collapses to the
        // rectangular form for any rotation rate.
        let mut rng = StdRng::seed_from_u64(42);
        for _ in 0..10_000 {
            let delta: f64 = rng.gen_range(-3.3..3.3);
            let rate: f64 = rng.gen_range(-400.0..400.0);
            let i_re: f64 = rng.gen_range(-2.0..2.0);
            let i_im: f64 = rng.gen_range(-2.0..2.0);
            let di_re: f64 = rng.gen_range(-10.0..10.0);
            let di_im: f64 = rng.gen_range(-10.0..10.0);
            let pe_rate: f64 = rng.gen_range(-5.0..5.0);
            let ra: f64 = rng.gen_range(0.0..0.05);
            let (i_d, i_q) = dq_currents(delta, i_re, i_im);
            let (di_d, di_q) = current_dq_rates(delta, rate, i_re, i_im, di_re, di_im);
            let unsimplified = pe_rate + ra * (2.0 * i_d * di_d + 2.0 * i_q * di_q);
            let simplified = torque_rate(pe_rate, i_re, i_im, di_re, di_im, ra);
            let scale = 1.0f64.max(unsimplified.abs());
            assert!(
                (unsimplified - simplified).abs() < 1e-12 * scale,
                "{unsimplified} vs {simplified}"
            );
        }
    }

    /// Conventional equilibrium embedded into the augmented coordinates with
    /// static phasor inputs.
    fn embedded_equilibrium(
        p: &GeneratorParams,
    ) -> (AugmentedState, AugmentedInput, GeneratorParams) {
        let v = Complex64::from_polar(1.0, 0.35);
        let i = Complex64::from_polar(0.95, 0.29);
        let eq = equilibrium_solve(v, i, p).unwrap();
        let s = eq.state;
        let x = AugmentedState {
            delta: s.delta,
            omega: s.omega,
            omega_dot: 0.0,
            ed_p: s.ed_p,
            eq_p: s.eq_p,
            psi_d: s.psi_d,
            psi_q: s.psi_q,
            efd: s.efd,
            vtr: s.vtr,
            pm_dot: 0.0,
            h_est: p.h,
            ka_est: p.ka,
        };
        let u = AugmentedInput {
            v,
            i,
            v_dot: Complex64::new(0.0, 0.0),
            i_dot: Complex64::new(0.0, 0.0),
        };
        (x, u, eq.params)
    }

    #[test]
    fn equilibrium_embeds_as_fixed_point() {
        let p = params();
        let (x, u, solved) = embedded_equilibrium(&p);
        let dx = augmented_dynamics(&x, &u, &solved).unwrap();
        let max = dx.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max < 1e-10, "residual {max}");
    }

    #[test]
    fn pm_dot_decay() {
        let p = params();
        let (mut x, u, solved) = embedded_equilibrium(&p);
        x.pm_dot = 0.1;
        let dx = augmented_dynamics(&x, &u, &solved).unwrap();
        assert!((dx[9] - (-0.1 / 2.4)).abs() < 1e-12);
    }

    #[test]
    fn measurement_passthrough_and_channel_equality() {
        let p = params();
        let (mut x, u, solved) = embedded_equilibrium(&p);
        x.omega = 1.002;
        x.omega_dot = -0.05;
        let m = augmented_measurement(&x, &u, &solved);
        assert_eq!(m.f, 1.002);
        assert_eq!(m.alpha, -0.05);

        // Channels 1-2 equal the conventional measurement on the embedded state.
        let conv = ConventionalState {
            delta: x.delta,
            omega: x.omega,
            ed_p: x.ed_p,
            eq_p: x.eq_p,
            psi_d: x.psi_d,
            psi_q: x.psi_q,
            efd: x.efd,
            vtr: x.vtr,
            pm: 0.0,
            h_est: x.h_est,
            ka_est: x.ka_est,
        };
        let u2 = crate::gen_model::ConventionalInput {
            pe: 0.0,
            i_re: u.i.re,
            i_im: u.i.im,
        };
        let m2 = conventional_measurement(&conv, &u2, &solved);
        assert_eq!(m.v_re, m2.v_re);
        assert_eq!(m.v_im, m2.v_im);

        let mut x1 = x;
        x1.omega = 1.0;
        x1.omega_dot = 0.0;
        let m = augmented_measurement(&x1, &u, &solved);
        assert_eq!((m.f, m.alpha), (1.0, 0.0));
    }

    #[test]
    fn integrate_pm_cases() {
        let zeros = vec![0.0; 11];
        let out = integrate_pm(&zeros, 0.1, 0.9);
        assert!(out.iter().all(|v| (*v - 0.9).abs() < 1e-15));

        let c = vec![0.25; 41];
        let out = integrate_pm(&c, 0.05, 1.0);
        assert!((out.last().unwrap() - (1.0 + 0.25 * 2.0)).abs() < 1e-12);

        // sin ramp against its closed-form integral, second order in dt.
        let dt = 1e-3;
        let n = 2001;
        let rates: Vec<f64> = (0..n).map(|k| (1.7 * k as f64 * dt).sin()).collect();
        let out = integrate_pm(&rates, dt, 0.0);
        let t_end = (n - 1) as f64 * dt;
        let exact = (1.0 - (1.7 * t_end).cos()) / 1.7;
        assert!((out.last().unwrap() - exact).abs() < 1e-6);
    }
}
