//! Conventional sub-transient generator model: domain types, the state
//! transition function, the 2-channel measurement function, and the
//! complementary algebraic equations (dq rotation, torque, saturation,
//! sub-transient flux, internal voltages), plus the steady-state solver used
//! to start simulations from rest.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::params::GeneratorParams;

/// Dimension of the conventional state vector.
pub const CONVENTIONAL_DIM: usize = 11;

/// Display names for the conventional state coordinates, in vector order.
pub const CONVENTIONAL_STATE_NAMES: [&str; CONVENTIONAL_DIM] = [
    "delta", "omega", "ed_p", "eq_p", "psi_d", "psi_q", "efd", "vtr", "pm", "H", "KA",
];

/// Conventional state vector: rotor angle/speed, transient voltages,
/// sub-transient fluxes, AVR states, mechanical power, and the two
/// calibration parameters carried as constant states.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConventionalState {
    /// Rotor angle, rad.
    pub delta: f64,
    /// Rotor speed, p.u.
    pub omega: f64,
    /// d/q-axis transient voltages, p.u.
    pub ed_p: f64,
    pub eq_p: f64,
    /// d/q-axis sub-transient flux states, p.u.
    pub psi_d: f64,
    pub psi_q: f64,
    /// Field voltage, p.u.
    pub efd: f64,
    /// Transducer output, p.u.
    pub vtr: f64,
    /// Mechanical power, p.u.
    pub pm: f64,
    /// Calibration states: estimated inertia and exciter gain.
    pub h_est: f64,
    pub ka_est: f64,
}

impl ConventionalState {
    pub fn to_array(&self) -> [f64; CONVENTIONAL_DIM] {
        [
            self.delta, self.omega, self.ed_p, self.eq_p, self.psi_d, self.psi_q, self.efd,
            self.vtr, self.pm, self.h_est, self.ka_est,
        ]
    }

    pub fn from_array(x: &[f64; CONVENTIONAL_DIM]) -> Self {
        ConventionalState {
            delta: x[0],
            omega: x[1],
            ed_p: x[2],
            eq_p: x[3],
            psi_d: x[4],
            psi_q: x[5],
            efd: x[6],
            vtr: x[7],
            pm: x[8],
            h_est: x[9],
            ka_est: x[10],
        }
    }

    pub fn to_dvector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.to_array())
    }
}

/// Control input of the conventional model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConventionalInput {
    /// Active power at the terminal, p.u.
    pub pe: f64,
    /// Current phasor rectangular components, p.u.
    pub i_re: f64,
    pub i_im: f64,
}

/// Measurement vector of the conventional model: terminal voltage phasor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement2 {
    pub v_re: f64,
    pub v_im: f64,
}

/// The four rotor coupling constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CouplingConstants {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub k4: f64,
}

/// Rotor coupling constants from the machine reactances.
pub fn coupling_constants(p: &GeneratorParams) -> Result<CouplingConstants> {
    let dq = p.xq_p - p.x_ls;
    let dd = p.xd_p - p.x_ls;
    if dq.abs() < 1e-12 || dd.abs() < 1e-12 {
        return Err(Error::InvalidParameter(
            "degenerate reactances: x'_d = x_ls or x'_q = x_ls".into(),
        ));
    }
    Ok(CouplingConstants {
        k1: (p.xq - p.xq_p) * (p.xq_p - p.xq_pp) / (dq * dq),
        k2: (p.xq - p.x_ls) * (p.xq_pp - p.x_ls) / dq,
        k3: (p.xd - p.xd_p) * (p.xd_p - p.xd_pp) / (dd * dd),
        k4: (p.xd - p.xd_p) * (p.xd_pp - p.x_ls) / dd,
    })
}

/// Rotate the rectangular current phasor into the machine dq frame.
pub fn dq_currents(delta: f64, i_re: f64, i_im: f64) -> (f64, f64) {
    let (s, c) = delta.sin_cos();
    (i_re * s - i_im * c, i_im * s + i_re * c)
}

/// q-axis core saturation S(E'_q), a quadratic in E'_q.
pub fn saturation(eq_p: f64, p: &GeneratorParams) -> f64 {
    p.ksat1 * eq_p * eq_p + p.ksat2 * eq_p + p.ksat3
}

/// Electric torque from terminal active power plus stator copper loss.
pub fn electric_torque(pe: f64, i_d: f64, i_q: f64, ra: f64) -> f64 {
    pe + ra * (i_d * i_d + i_q * i_q)
}

/// Sub-transient flux linkages (Ψ''_d, Ψ''_q) from the transient voltages and
/// flux states.
pub fn subtransient_flux(
    ed_p: f64,
    eq_p: f64,
    psi_d: f64,
    psi_q: f64,
    p: &GeneratorParams,
) -> (f64, f64) {
    let dq = p.xq_p - p.x_ls;
    let dd = p.xd_p - p.x_ls;
    let psi_q_pp = (p.x_ls - p.xq_pp) / dq * ed_p - (p.xq_p - p.xq_pp) / dq * psi_q;
    let psi_d_pp = (p.xd_pp - p.x_ls) / dd * eq_p + (p.xd_p - p.xd_pp) / dd * psi_d;
    (psi_d_pp, psi_q_pp)
}

/// Internal voltage components behind the sub-transient impedance and their
/// magnitude V (which equals the terminal voltage magnitude).
pub fn internal_voltages(
    psi_d_pp: f64,
    psi_q_pp: f64,
    i_d: f64,
    i_q: f64,
    p: &GeneratorParams,
) -> (f64, f64, f64) {
    let e_d = psi_q_pp - p.ra * i_d + p.xd_pp * i_q;
    let e_q = psi_d_pp - p.ra * i_q - p.xd_pp * i_d;
    (e_d, e_q, e_d.hypot(e_q))
}

/// Internal EMF phasor of the sub-transient dynamic circuit,
/// (Ψ''_q + jΨ''_d)·e^{j(δ−π/2)}.
pub fn internal_emf(delta: f64, psi_d_pp: f64, psi_q_pp: f64) -> Complex64 {
    Complex64::new(psi_q_pp, psi_d_pp) * Complex64::from_polar(1.0, delta - std::f64::consts::FRAC_PI_2)
}

/// Precomputed conventional model bound to one parameter set.
///
/// `rhs_raw` is total (it fills the output with NaN on a singular state) so it
/// can be used directly as a sigma-point transition; the checked entry point
/// is [`conventional_dynamics`].
#[derive(Debug, Clone)]
pub struct ConventionalModel {
    pub p: GeneratorParams,
    pub k: CouplingConstants,
    /// q-axis current coupling, mirror of k4 on the q axis:
    /// (x_q − x'_q)(x''_q − x_ls)/(x'_q − x_ls).
    pub kq4: f64,
}

impl ConventionalModel {
    pub fn new(p: &GeneratorParams) -> Result<Self> {
        p.validate()?;
        let k = coupling_constants(p)?;
        let dq = p.xq_p - p.x_ls;
        let kq4 = (p.xq - p.xq_p) * (p.xq_pp - p.x_ls) / dq;
        Ok(ConventionalModel {
            p: p.clone(),
            k,
            kq4,
        })
    }

    /// Derivatives of the four rotor states and the two AVR states, in order
    /// [E'_d, E'_q, Ψ_d, Ψ_q, E_fd, V_TR].
    ///
    /// `v` is the voltage magnitude feeding the transducer; `ka` the exciter
    /// gain in effect (true value in truth simulation, calibration state
    /// during playback).
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn rotor_avr_rhs(
        &self,
        ed_p: f64,
        eq_p: f64,
        psi_d: f64,
        psi_q: f64,
        efd: f64,
        vtr: f64,
        i_d: f64,
        i_q: f64,
        v: f64,
        ka: f64,
    ) -> [f64; 6] {
        let p = &self.p;
        let s = saturation(eq_p, p);
        [
            (-ed_p - self.k.k1 * (ed_p - psi_q) - self.kq4 * i_q) / p.tq_p,
            (efd - s - self.k.k3 * (eq_p - psi_d) - self.k.k4 * i_d) / p.td_p,
            (-psi_d + eq_p - (p.xd_p - p.x_ls) * i_d) / p.td_pp,
            (-psi_q + ed_p - (p.xq_p - p.x_ls) * i_q) / p.tq_pp,
            (-efd + ka * (p.pss + p.v_ref - vtr)) / p.ta,
            (v - vtr) / p.tr,
        ]
    }

    /// Rotor-angle, swing, rotor and AVR derivatives shared by every variant.
    ///
    /// `x8` is [δ, ω, E'_d, E'_q, Ψ_d, Ψ_q, E_fd, V_TR]; `h` and `ka` are the
    /// inertia and exciter gain in effect.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn machine8_rhs(
        &self,
        x8: &[f64; 8],
        i_d: f64,
        i_q: f64,
        t_e: f64,
        v: f64,
        pm: f64,
        h: f64,
        ka: f64,
    ) -> [f64; 8] {
        let p = &self.p;
        let [_, omega, ed_p, eq_p, psi_d, psi_q, efd, vtr] = *x8;
        let r = self.rotor_avr_rhs(ed_p, eq_p, psi_d, psi_q, efd, vtr, i_d, i_q, v, ka);
        [
            p.omega_s * (omega - p.omega0),
            p.omega0 / (2.0 * h) * (pm - t_e - p.d * (omega - p.omega0)),
            r[0],
            r[1],
            r[2],
            r[3],
            r[4],
            r[5],
        ]
    }

    /// Full conventional transition map. NaN-fills the output when the
    /// estimated inertia state is not positive.
    pub fn rhs_raw(&self, x: &[f64; CONVENTIONAL_DIM], u: &ConventionalInput) -> [f64; CONVENTIONAL_DIM] {
        let h = x[9];
        if !(h > 0.0) {
            return [f64::NAN; CONVENTIONAL_DIM];
        }
        let p = &self.p;
        let (i_d, i_q) = dq_currents(x[0], u.i_re, u.i_im);
        let t_e = electric_torque(u.pe, i_d, i_q, p.ra);
        let (psi_d_pp, psi_q_pp) = subtransient_flux(x[2], x[3], x[4], x[5], p);
        let (_, _, v) = internal_voltages(psi_d_pp, psi_q_pp, i_d, i_q, p);
        let x8: [f64; 8] = x[..8].try_into().unwrap();
        let m = self.machine8_rhs(&x8, i_d, i_q, t_e, v, x[8], h, x[10]);
        let dpm = (-x[8] + (1.0 - x[1]) / p.droop + p.pm0) / p.t_ef;
        [
            m[0], m[1], m[2], m[3], m[4], m[5], m[6], m[7], dpm, 0.0, 0.0,
        ]
    }

    /// Terminal voltage phasor predicted from the state and the input current.
    pub fn measure(&self, x: &[f64; CONVENTIONAL_DIM], u: &ConventionalInput) -> Measurement2 {
        let p = &self.p;
        let (psi_d_pp, psi_q_pp) = subtransient_flux(x[2], x[3], x[4], x[5], p);
        let (s, c) = x[0].sin_cos();
        Measurement2 {
            v_re: psi_q_pp * s + psi_d_pp * c + u.i_im * p.xd_pp - u.i_re * p.ra,
            v_im: -psi_q_pp * c + psi_d_pp * s - u.i_re * p.xd_pp - u.i_im * p.ra,
        }
    }
}

/// Time derivative of the conventional state.
pub fn conventional_dynamics(
    x: &ConventionalState,
    u: &ConventionalInput,
    p: &GeneratorParams,
) -> Result<[f64; CONVENTIONAL_DIM]> {
    if !(x.h_est > 0.0) {
        return Err(Error::SingularState(format!(
            "estimated inertia must be positive, got {}",
            x.h_est
        )));
    }
    let model = ConventionalModel::new(p)?;
    let dx = model.rhs_raw(&x.to_array(), u);
    if dx.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            context: "conventional dynamics".into(),
        });
    }
    Ok(dx)
}

/// Measurement function of the conventional model.
pub fn conventional_measurement(
    x: &ConventionalState,
    u: &ConventionalInput,
    p: &GeneratorParams,
) -> Measurement2 {
    let model = ConventionalModel::new(p).expect("validated parameters");
    model.measure(&x.to_array(), u)
}

/// A solved steady state: the resting state/input pair plus the parameter set
/// with `v_ref` and `pm0` replaced by their back-solved values.
#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub state: ConventionalState,
    pub input: ConventionalInput,
    pub params: GeneratorParams,
}

/// Solve for the machine state (and `V_REF`, `P_m0`) that rests at the given
/// terminal voltage and current phasors.
///
/// Damped Newton iteration on the 9 physical states plus the two operating
/// references, with a finite-difference Jacobian. The residual stacks the nine
/// state derivatives with the two terminal-voltage mismatch equations.
pub fn equilibrium_solve(
    v_term: Complex64,
    i_term: Complex64,
    p: &GeneratorParams,
) -> Result<Equilibrium> {
    p.validate()?;
    let pe = (v_term * i_term.conj()).re;
    if pe < -1e-9 {
        return Err(Error::InvalidParameter(format!(
            "terminal conditions describe a motor (P_e = {pe:.4}), expected a generating unit"
        )));
    }

    let residual = |y: &DVector<f64>| -> Result<DVector<f64>> {
        let mut params = p.clone();
        params.v_ref = y[9];
        params.pm0 = y[10];
        let state = ConventionalState {
            delta: y[0],
            omega: y[1],
            ed_p: y[2],
            eq_p: y[3],
            psi_d: y[4],
            psi_q: y[5],
            efd: y[6],
            vtr: y[7],
            pm: y[8],
            h_est: p.h,
            ka_est: p.ka,
        };
        let input = ConventionalInput {
            pe,
            i_re: i_term.re,
            i_im: i_term.im,
        };
        let dx = conventional_dynamics(&state, &input, &params)?;
        let meas = conventional_measurement(&state, &input, &params);
        let mut r = DVector::zeros(11);
        r.as_mut_slice()[..9].copy_from_slice(&dx[..9]);
        r[9] = meas.v_re - v_term.re;
        r[10] = meas.v_im - v_term.im;
        Ok(r)
    };

    // Classical closed-form initialization.
    let e_q_axis = v_term + Complex64::new(p.ra, p.xq) * i_term;
    let delta0 = e_q_axis.arg();
    let (i_d0, i_q0) = dq_currents(delta0, i_term.re, i_term.im);
    let (sn, cs) = delta0.sin_cos();
    let v_q0 = v_term.im * sn + v_term.re * cs;
    let eq_p0 = v_q0 + p.ra * i_q0 + p.xd_p * i_d0;
    let ed_p0 = -(p.xq - p.xq_p) * i_q0;
    let efd0 = saturation(eq_p0, p) + (p.xd - p.xd_p) * i_d0;
    let te0 = electric_torque(pe, i_d0, i_q0, p.ra);
    let v0 = v_term.norm();
    let mut y = DVector::from_row_slice(&[
        delta0,
        p.omega0,
        ed_p0,
        eq_p0,
        eq_p0 - (p.xd_p - p.x_ls) * i_d0,
        ed_p0 - (p.xq_p - p.x_ls) * i_q0,
        efd0,
        v0,
        te0,
        efd0 / p.ka - p.pss + v0,
        te0,
    ]);

    let mut r = residual(&y)?;
    let mut rnorm = r.amax();
    const TOL: f64 = 1e-13;
    const MAX_ITER: usize = 100;
    for _ in 0..MAX_ITER {
        if rnorm < TOL {
            break;
        }
        // Central-difference Jacobian.
        let n = y.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let h = 1e-7 * (1.0 + y[j].abs());
            let mut yp = y.clone();
            let mut ym = y.clone();
            yp[j] += h;
            ym[j] -= h;
            let col = (residual(&yp)? - residual(&ym)?) / (2.0 * h);
            jac.set_column(j, &col);
        }
        let step = jac
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Conditioning("singular Jacobian in equilibrium solve".into()))?;
        // Backtracking line search on the residual norm.
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let y_try = &y - alpha * &step;
            if let Ok(r_try) = residual(&y_try) {
                let n_try = r_try.amax();
                if n_try < rnorm {
                    y = y_try;
                    r = r_try;
                    rnorm = n_try;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !(rnorm < 1e-10) {
        return Err(Error::NoConvergence {
            residual: rnorm,
            iterations: MAX_ITER,
        });
    }

    let mut params = p.clone();
    params.v_ref = y[9];
    params.pm0 = y[10];
    let state = ConventionalState {
        delta: y[0],
        omega: y[1],
        ed_p: y[2],
        eq_p: y[3],
        psi_d: y[4],
        psi_q: y[5],
        efd: y[6],
        vtr: y[7],
        pm: y[8],
        h_est: p.h,
        ka_est: p.ka,
    };
    let input = ConventionalInput {
        pe,
        i_re: i_term.re,
        i_im: i_term.im,
    };
    Ok(Equilibrium {
        state,
        input,
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

    fn params() -> GeneratorParams {
        GeneratorParams::desk_default()
    }

    #[test]
    fn coupling_constants_zero_numerators() {
        let mut p = params();
        p.xq_p = p.xq; // no transient saliency on q
        let k = coupling_constants(&p).unwrap();
        assert_eq!(k.k1, 0.0);

        let mut p = params();
        p.xq_pp = p.x_ls + 0.0; // x''_q = x_ls violates validate() but not the formula
        let k = coupling_constants(&p).unwrap();
        assert_eq!(k.k2, 0.0);
    }

    #[test]
    fn coupling_constants_default_set() {
        // Independent evaluation of the four rational expressions.
        let p = params();
        let k = coupling_constants(&p).unwrap();
        let k1 = (1.7 - 0.55) * (0.55 - 0.25) / ((0.55 - 0.2) * (0.55 - 0.2));
        let k2 = (1.7 - 0.2) * (0.25 - 0.2) / (0.55 - 0.2);
        let k3 = (1.8 - 0.3) * (0.3 - 0.25) / ((0.3 - 0.2) * (0.3 - 0.2));
        let k4 = (1.8 - 0.3) * (0.25 - 0.2) / (0.3 - 0.2);
        assert!((k.k1 - k1).abs() < 1e-15);
        assert!((k.k2 - k2).abs() < 1e-15);
        assert!((k.k3 - k3).abs() < 1e-15);
        assert!((k.k4 - k4).abs() < 1e-15);
    }

    #[test]
    fn coupling_constants_degenerate_error() {
        let mut p = params();
        p.xd_p = p.x_ls;
        assert!(coupling_constants(&p).is_err());
    }

    #[test]
    fn dq_rotation_examples() {
        let (id, iq) = dq_currents(FRAC_PI_2, 1.0, 0.0);
        assert!((id - 1.0).abs() < 1e-15 && iq.abs() < 1e-15);
        let (id, iq) = dq_currents(0.0, 1.0, 0.0);
        assert!(id.abs() < 1e-15 && (iq - 1.0).abs() < 1e-15);
        let (id, iq) = dq_currents(FRAC_PI_4, 0.6, 0.8);
        assert!((id - (-0.141421356)).abs() < 1e-8);
        assert!((iq - 0.989949494).abs() < 1e-8);
    }

    #[test]
    fn dq_rotation_is_isometry() {
        // Frame isometry over a delta grid.
        for k in 0..360 {
            let delta = k as f64 * PI / 180.0;
            let (i_re, i_im) = (0.37, -1.22);
            let (id, iq) = dq_currents(delta, i_re, i_im);
            assert!((id * id + iq * iq - (i_re * i_re + i_im * i_im)).abs() < 1e-14);
        }
    }

    #[test]
    fn saturation_examples() {
        let mut p = params();
        p.ksat1 = 0.0;
        p.ksat2 = 0.0;
        p.ksat3 = 0.0;
        assert_eq!(saturation(1.3, &p), 0.0);
        p.ksat2 = 1.0;
        assert!((saturation(1.05, &p) - 1.05).abs() < 1e-15);
        p.ksat1 = 0.1;
        p.ksat2 = 0.2;
        p.ksat3 = 0.0;
        assert!((saturation(1.0, &p) - 0.3).abs() < 1e-15);
    }

    #[test]
    fn electric_torque_examples() {
        assert_eq!(electric_torque(0.9, 123.0, -4.0, 0.0), 0.9);
        assert!((electric_torque(0.9, 0.6, 0.8, 0.01) - 0.91).abs() < 1e-15);
        assert_eq!(electric_torque(0.0, 0.0, 0.0, 0.003), 0.0);
    }

    #[test]
    fn subtransient_flux_degenerate_weights() {
        let mut p = params();
        p.xd_pp = p.xd_p; // first weight 1, second 0
        let (psi_d_pp, _) = subtransient_flux(0.3, 1.0, 0.95, 0.25, &p);
        assert!((psi_d_pp - 1.0).abs() < 1e-15);

        let mut p = params();
        p.xq_pp = p.xq_p;
        let (_, psi_q_pp) = subtransient_flux(0.3, 1.0, 0.95, 0.25, &p);
        let expect = (p.x_ls - p.xq_pp) / (p.xq_p - p.x_ls) * 0.3;
        assert!((psi_q_pp - expect).abs() < 1e-15);
    }

    #[test]
    fn subtransient_flux_default_values() {
        // Independent evaluation of the two weighted combinations.
        let p = params();
        let (ed_p, eq_p, psi_d, psi_q) = (0.3, 1.0, 0.95, 0.25);
        let (psi_d_pp, psi_q_pp) = subtransient_flux(ed_p, eq_p, psi_d, psi_q, &p);
        let dq = 0.55 - 0.2;
        let dd = 0.3 - 0.2;
        let expect_q = (0.2 - 0.25) / dq * ed_p - (0.55 - 0.25) / dq * psi_q;
        let expect_d = (0.25 - 0.2) / dd * eq_p + (0.3 - 0.25) / dd * psi_d;
        assert!((psi_q_pp - expect_q).abs() < 1e-15);
        assert!((psi_d_pp - expect_d).abs() < 1e-15);
    }

    #[test]
    fn internal_voltage_examples() {
        let p = params();
        // Open circuit: (E_d, E_q) reduce to the flux components.
        let (e_d, e_q, v) = internal_voltages(0.7, -0.3, 0.0, 0.0, &p);
        assert_eq!((e_d, e_q), (-0.3, 0.7));
        assert!((v - 0.7f64.hypot(0.3)).abs() < 1e-15);

        let mut p2 = params();
        p2.ra = 0.01;
        p2.xd_pp = 0.25;
        let (e_d, e_q, _) = internal_voltages(1.0, 0.0, 1.0, 0.0, &p2);
        assert!((e_d - (-0.01)).abs() < 1e-15);
        assert!((e_q - 0.75).abs() < 1e-15);

        let (_, _, v) = internal_voltages(0.0, 0.0, 0.0, 0.0, &p);
        assert_eq!(v, 0.0);
    }

    #[test]
    fn measurement_examples() {
        let p = params();
        // Pure sine term.
        let x = ConventionalState {
            delta: FRAC_PI_2,
            omega: 1.0,
            ed_p: 0.0,
            eq_p: 0.0,
            psi_d: 0.0,
            psi_q: 0.0,
            efd: 0.0,
            vtr: 0.0,
            pm: 0.0,
            h_est: p.h,
            ka_est: p.ka,
        };
        // Choose flux states so that (psi_d_pp, psi_q_pp) = (0, 1).
        // psi_q_pp = a·ed_p − b·psi_q with a = (x_ls−x''_q)/(x'_q−x_ls).
        let a = (p.x_ls - p.xq_pp) / (p.xq_p - p.x_ls);
        let mut x = x;
        x.ed_p = 1.0 / a;
        let u = ConventionalInput {
            pe: 0.0,
            i_re: 0.0,
            i_im: 0.0,
        };
        let m = conventional_measurement(&x, &u, &p);
        assert!((m.v_re - 1.0).abs() < 1e-12);
        assert!(m.v_im.abs() < 1e-12);

        // Zero state with pure real current.
        let mut p2 = params();
        p2.ra = 0.01;
        p2.xd_pp = 0.25;
        let x0 = ConventionalState {
            delta: 0.0,
            omega: 1.0,
            ed_p: 0.0,
            eq_p: 0.0,
            psi_d: 0.0,
            psi_q: 0.0,
            efd: 0.0,
            vtr: 0.0,
            pm: 0.0,
            h_est: p2.h,
            ka_est: p2.ka,
        };
        let u = ConventionalInput {
            pe: 0.0,
            i_re: 1.0,
            i_im: 0.0,
        };
        let m = conventional_measurement(&x0, &u, &p2);
        assert!((m.v_re - (-0.01)).abs() < 1e-15);
        assert!((m.v_im - (-0.25)).abs() < 1e-15);
    }

    #[test]
    fn measurement_round_trip_recovers_current() {
        // Feed the dynamic-circuit branch relation forward and back: with
        // x''_q = x''_d the measured voltage and the flux states determine the
        // current exactly.
        let p = params();
        let x = ConventionalState {
            delta: 0.83,
            omega: 1.0,
            ed_p: -0.42,
            eq_p: 1.07,
            psi_d: 0.91,
            psi_q: -0.55,
            efd: 1.8,
            vtr: 1.0,
            pm: 0.9,
            h_est: p.h,
            ka_est: p.ka,
        };
        let u = ConventionalInput {
            pe: 0.9,
            i_re: 0.82,
            i_im: -0.31,
        };
        let m = conventional_measurement(&x, &u, &p);
        let (psi_d_pp, psi_q_pp) = subtransient_flux(x.ed_p, x.eq_p, x.psi_d, x.psi_q, &p);
        let e_int = internal_emf(x.delta, psi_d_pp, psi_q_pp);
        let v = Complex64::new(m.v_re, m.v_im);
        let i = (e_int - v) / Complex64::new(p.ra, p.xd_pp);
        assert!((i.re - u.i_re).abs() < 1e-12);
        assert!((i.im - u.i_im).abs() < 1e-12);
    }

    #[test]
    fn calibration_states_are_stationary() {
        let p = params();
        let x = ConventionalState {
            delta: 0.9,
            omega: 1.001,
            ed_p: -0.4,
            eq_p: 1.0,
            psi_d: 0.9,
            psi_q: -0.5,
            efd: 1.9,
            vtr: 1.0,
            pm: 0.92,
            h_est: 5.9,
            ka_est: 171.0,
        };
        let u = ConventionalInput {
            pe: 0.9,
            i_re: 0.9,
            i_im: 0.1,
        };
        let dx = conventional_dynamics(&x, &u, &p).unwrap();
        assert_eq!(dx[9], 0.0);
        assert_eq!(dx[10], 0.0);
    }

    #[test]
    fn dynamics_rejects_nonpositive_inertia() {
        let p = params();
        let mut x = ConventionalState {
            delta: 0.9,
            omega: 1.0,
            ed_p: -0.4,
            eq_p: 1.0,
            psi_d: 0.9,
            psi_q: -0.5,
            efd: 1.9,
            vtr: 1.0,
            pm: 0.92,
            h_est: 0.0,
            ka_est: 200.0,
        };
        let u = ConventionalInput {
            pe: 0.9,
            i_re: 0.9,
            i_im: 0.1,
        };
        assert!(conventional_dynamics(&x, &u, &p).is_err());
        x.h_est = -1.0;
        assert!(conventional_dynamics(&x, &u, &p).is_err());
    }

    /// Second, independent transcription of the six ODE groups, written
    /// directly from the model equations without reusing the implementation.
    fn dynamics_oracle(
        x: &ConventionalState,
        u: &ConventionalInput,
        p: &GeneratorParams,
    ) -> [f64; 11] {
        let k1 = (p.xq - p.xq_p) * (p.xq_p - p.xq_pp) / (p.xq_p - p.x_ls).powi(2);
        let k3 = (p.xd - p.xd_p) * (p.xd_p - p.xd_pp) / (p.xd_p - p.x_ls).powi(2);
        let k4 = (p.xd - p.xd_p) * (p.xd_pp - p.x_ls) / (p.xd_p - p.x_ls);
        let kq4 = (p.xq - p.xq_p) * (p.xq_pp - p.x_ls) / (p.xq_p - p.x_ls);
        let i_d = u.i_re * x.delta.sin() - u.i_im * x.delta.cos();
        let i_q = u.i_im * x.delta.sin() + u.i_re * x.delta.cos();
        let t_e = u.pe + p.ra * (i_d * i_d + i_q * i_q);
        let psi_q_pp = (p.x_ls - p.xq_pp) / (p.xq_p - p.x_ls) * x.ed_p
            - (p.xq_p - p.xq_pp) / (p.xq_p - p.x_ls) * x.psi_q;
        let psi_d_pp = (p.xd_pp - p.x_ls) / (p.xd_p - p.x_ls) * x.eq_p
            + (p.xd_p - p.xd_pp) / (p.xd_p - p.x_ls) * x.psi_d;
        let e_d = psi_q_pp - p.ra * i_d + p.xd_pp * i_q;
        let e_q = psi_d_pp - p.ra * i_q - p.xd_pp * i_d;
        let v = (e_d * e_d + e_q * e_q).sqrt();
        let s = p.ksat1 * x.eq_p * x.eq_p + p.ksat2 * x.eq_p + p.ksat3;
        [
            p.omega_s * (x.omega - p.omega0),
            p.omega0 / (2.0 * x.h_est) * (x.pm - t_e - p.d * (x.omega - p.omega0)),
            (-x.ed_p - k1 * (x.ed_p - x.psi_q) - kq4 * i_q) / p.tq_p,
            (x.efd - s - k3 * (x.eq_p - x.psi_d) - k4 * i_d) / p.td_p,
            (-x.psi_d + x.eq_p - (p.xd_p - p.x_ls) * i_d) / p.td_pp,
            (-x.psi_q + x.ed_p - (p.xq_p - p.x_ls) * i_q) / p.tq_pp,
            (-x.efd + x.ka_est * (p.pss + p.v_ref - x.vtr)) / p.ta,
            (v - x.vtr) / p.tr,
            (-x.pm + (1.0 - x.omega) / p.droop + p.pm0) / p.t_ef,
            0.0,
            0.0,
        ]
    }

    #[test]
    fn dynamics_matches_independent_transcription() {
        let p = params();
        let x = ConventionalState {
            delta: 1.13,
            omega: 1.001,
            ed_p: -0.47,
            eq_p: 0.97,
            psi_d: 0.88,
            psi_q: -0.61,
            efd: 2.21,
            vtr: 0.99,
            pm: 0.91,
            h_est: 6.1,
            ka_est: 182.0,
        };
        let u = ConventionalInput {
            pe: 0.88,
            i_re: 0.93,
            i_im: 0.04,
        };
        let got = conventional_dynamics(&x, &u, &p).unwrap();
        let want = dynamics_oracle(&x, &u, &p);
        assert!((got[0] - p.omega_s * 0.001).abs() < 1e-12);
        for i in 0..11 {
            assert!(
                (got[i] - want[i]).abs() < 1e-13,
                "component {i}: {} vs {}",
                got[i],
                want[i]
            );
        }
    }

    #[test]
    fn balanced_torque_freezes_speed() {
        let p = params();
        let mut x = ConventionalState {
            delta: 0.8,
            omega: p.omega0,
            ed_p: -0.4,
            eq_p: 1.0,
            psi_d: 0.9,
            psi_q: -0.5,
            efd: 1.9,
            vtr: 1.0,
            pm: 0.0,
            h_est: p.h,
            ka_est: p.ka,
        };
        let u = ConventionalInput {
            pe: 0.9,
            i_re: 0.9,
            i_im: 0.1,
        };
        let (i_d, i_q) = dq_currents(x.delta, u.i_re, u.i_im);
        x.pm = electric_torque(u.pe, i_d, i_q, p.ra);
        let dx = conventional_dynamics(&x, &u, &p).unwrap();
        assert!(dx[1].abs() < 1e-15);
    }

    #[test]
    fn equilibrium_no_load() {
        let p = params();
        let eq = equilibrium_solve(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), &p).unwrap();
        assert!(eq.state.delta.abs() < 1e-9);
        assert!(eq.state.ed_p.abs() < 1e-9);
        assert!((eq.state.eq_p - 1.0).abs() < 1e-6 || eq.state.eq_p > 0.9);
        assert!(eq.state.pm.abs() < 1e-9);
        assert!(eq.params.pm0.abs() < 1e-9);
    }

    #[test]
    fn equilibrium_loaded_residual() {
        let p = params();
        // A representative loaded condition: V = 1.0∠20°, slightly lagging current.
        let v = Complex64::from_polar(1.0, 0.35);
        let i = Complex64::from_polar(0.95, 0.29);
        assert!((v * i.conj()).re > 0.9);
        let eq = equilibrium_solve(v, i, &p).unwrap();
        let dx = conventional_dynamics(&eq.state, &eq.input, &eq.params).unwrap();
        let max = dx.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        assert!(max < 1e-10, "residual {max}");
        let m = conventional_measurement(&eq.state, &eq.input, &eq.params);
        assert!((m.v_re - v.re).abs() < 1e-10);
        assert!((m.v_im - v.im).abs() < 1e-10);
    }

    #[test]
    fn equilibrium_is_nondegenerate() {
        let p = params();
        let v = Complex64::new(1.0, 0.0);
        let i = Complex64::new(0.9, -0.2);
        let eq = equilibrium_solve(v, i, &p).unwrap();
        let base = eq.state.to_array();
        for j in 0..9 {
            let mut arr = base;
            arr[j] += 1e-3;
            let x = ConventionalState::from_array(&arr);
            let dx = conventional_dynamics(&x, &eq.input, &eq.params).unwrap();
            let max = dx.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            assert!(max > 1e-7, "perturbing state {j} left the residual at {max}");
        }
    }
}
