//! Model-agnostic Unscented Kalman Filter.
//!
//! Sigma points are the mean plus/minus the columns of the scaled lower
//! Cholesky factor of the covariance. The correction step uses the
//! cross-covariance form of the gain, K = C·S⁻¹ with
//! S = Σ w_c (ẑⁱ−ẑ)(ẑⁱ−ẑ)ᵀ + R and C = Σ w_c (x̂ⁱ−x̂)(ẑⁱ−ẑ)ᵀ, and the
//! covariance update P⁺ = P⁻ − K·S·Kᵀ; solves go through a symmetric
//! factorization of S, never an explicit inverse.
//!
//! Weighted means are accumulated relative to the center sigma point. With
//! small spread parameters (γ ~ 1e-3) the center weights are of order
//! ±1e6 and the naive weighted sum loses several digits to cancellation; the
//! anchored form Σ wᵢ·xᵢ = x₀ + Σ_{i≥1} wᵢ·(xᵢ − x₀) is algebraically
//! identical and numerically benign.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// UKF spread/weighting scalars and the state dimension they apply to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UkfTuning {
    pub gamma: f64,
    pub beta: f64,
    pub kappa: f64,
    pub n: usize,
}

impl UkfTuning {
    pub fn new(gamma: f64, beta: f64, kappa: f64, n: usize) -> Result<Self> {
        let t = UkfTuning {
            gamma,
            beta,
            kappa,
            n,
        };
        weights(&t)?;
        Ok(t)
    }

    pub fn lambda(&self) -> f64 {
        self.gamma * self.gamma * (self.n as f64 + self.kappa) - self.n as f64
    }
}

/// Sigma-point weights: λ plus the 2n+1 mean and covariance weights.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfWeights {
    pub lambda: f64,
    pub w_mean: Vec<f64>,
    pub w_cov: Vec<f64>,
}

/// Process and measurement noise covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseMatrices {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

/// Gaussian state belief.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::Conditioning(format!(
                "covariance {}x{} does not match state dimension {}",
                covariance.nrows(),
                covariance.ncols(),
                mean.len()
            )));
        }
        let asym = (&covariance - covariance.transpose()).amax();
        if asym > 1e-12 {
            return Err(Error::NonPsdCovariance {
                context: format!("asymmetry {asym:.3e} exceeds 1e-12"),
            });
        }
        Ok(GaussianBelief { mean, covariance })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// λ and the 2n+1 mean/covariance weights from the tuning scalars.
pub fn weights(t: &UkfTuning) -> Result<UkfWeights> {
    if !(t.gamma > 0.0) {
        return Err(Error::InvalidTuning(format!(
            "gamma must be > 0, got {}",
            t.gamma
        )));
    }
    if t.n == 0 {
        return Err(Error::InvalidTuning("state dimension must be positive".into()));
    }
    let n = t.n as f64;
    let lambda = t.lambda();
    let n_lambda = n + lambda;
    if n_lambda == 0.0 {
        return Err(Error::InvalidTuning("n + lambda must be nonzero".into()));
    }
    if n_lambda < 0.0 {
        // A negative scaling would require a complex matrix square root.
        return Err(Error::InvalidTuning(format!(
            "n + lambda = {n_lambda:.6e} must be positive"
        )));
    }
    let count = 2 * t.n + 1;
    let w_h = 1.0 / (2.0 * n_lambda);
    let mut w_mean = vec![w_h; count];
    let mut w_cov = vec![w_h; count];
    w_mean[0] = lambda / n_lambda;
    w_cov[0] = lambda / n_lambda + (1.0 - t.gamma * t.gamma + t.beta);
    Ok(UkfWeights {
        lambda,
        w_mean,
        w_cov,
    })
}

/// Symmetrize, then factor; on failure add one shot of diagonal jitter
/// proportional to the trace before giving up.
fn cholesky_psd(m: &DMatrix<f64>, context: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = 0.5 * (m + m.transpose());
    if let Some(c) = Cholesky::new(sym.clone()) {
        return Ok(c);
    }
    let n = sym.nrows() as f64;
    let jitter = 1e-12 * sym.trace().abs().max(f64::MIN_POSITIVE) / n;
    let repaired = &sym + DMatrix::identity(sym.nrows(), sym.ncols()) * jitter;
    Cholesky::new(repaired).ok_or_else(|| Error::NonPsdCovariance {
        context: context.to_string(),
    })
}

/// The 2n+1 sigma points of a belief: the mean, then the + column offsets of
/// the scaled Cholesky factor, then the − offsets. The w_mean-weighted
/// average of the points reconstructs the mean.
pub fn sigma_points(b: &GaussianBelief, lambda: f64) -> Result<Vec<DVector<f64>>> {
    let n = b.dim();
    let scale = n as f64 + lambda;
    if scale <= 0.0 {
        return Err(Error::InvalidTuning(format!(
            "sigma-point scale n + lambda = {scale:.6e} must be positive"
        )));
    }
    let chol = cholesky_psd(&b.covariance, "sigma-point generation")?;
    let l = chol.l() * scale.sqrt();
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(b.mean.clone());
    for j in 0..n {
        points.push(&b.mean + l.column(j));
    }
    for j in 0..n {
        points.push(&b.mean - l.column(j));
    }
    Ok(points)
}

/// Weighted mean anchored at the center point.
fn weighted_mean(points: &[DVector<f64>], w: &[f64]) -> DVector<f64> {
    let mut acc = DVector::zeros(points[0].len());
    for (p, wi) in points.iter().zip(w).skip(1) {
        acc.axpy(*wi, &(p - &points[0]), 1.0);
    }
    acc + &points[0]
}

/// Weighted outer-product covariance of `points` about `mean`.
fn weighted_cov(points: &[DVector<f64>], mean: &DVector<f64>, w: &[f64]) -> DMatrix<f64> {
    let n = mean.len();
    let mut cov = DMatrix::zeros(n, n);
    for (p, wi) in points.iter().zip(w) {
        let d = p - mean;
        cov.ger(*wi, &d, &d, 1.0);
    }
    cov
}

fn check_finite(points: &[DVector<f64>], what: &str) -> Result<()> {
    for (i, p) in points.iter().enumerate() {
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("{what} output at sigma point {i}"),
            });
        }
    }
    Ok(())
}

/// Prediction step: propagate the sigma points through the transition map and
/// reassemble mean and covariance, adding the process noise.
pub fn predict<F>(
    b: &GaussianBelief,
    transition: F,
    q: &DMatrix<f64>,
    w: &UkfWeights,
) -> Result<GaussianBelief>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    let points = sigma_points(b, w.lambda)?;
    let propagated: Vec<DVector<f64>> = points.iter().map(&transition).collect();
    check_finite(&propagated, "transition")?;
    let mean = weighted_mean(&propagated, &w.w_mean);
    let mut cov = weighted_cov(&propagated, &mean, &w.w_cov);
    cov += q;
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(GaussianBelief {
        mean,
        covariance: cov,
    })
}

/// Corrected belief plus the innovation that produced it.
#[derive(Debug, Clone)]
pub struct Update {
    pub belief: GaussianBelief,
    pub innovation: DVector<f64>,
}

/// Correction step: fresh sigma points from the predicted belief, measurement
/// statistics, cross-covariance gain, and the covariance downdate.
pub fn update<H>(
    predicted: &GaussianBelief,
    measurement_fn: H,
    z: &DVector<f64>,
    r: &DMatrix<f64>,
    w: &UkfWeights,
) -> Result<Update>
where
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let points = sigma_points(predicted, w.lambda)?;
    let predicted_meas: Vec<DVector<f64>> = points.iter().map(&measurement_fn).collect();
    check_finite(&predicted_meas, "measurement")?;
    let z_mean = weighted_mean(&predicted_meas, &w.w_mean);

    let m = z.len();
    let n = predicted.dim();
    let mut s = r.clone();
    let mut cross = DMatrix::zeros(n, m);
    for ((p, zp), wi) in points.iter().zip(&predicted_meas).zip(&w.w_cov) {
        let dz = zp - &z_mean;
        let dx = p - &predicted.mean;
        s.ger(*wi, &dz, &dz, 1.0);
        cross.ger(*wi, &dx, &dz, 1.0);
    }
    let s = 0.5 * (&s + s.transpose());

    let chol = cholesky_psd(&s, "innovation covariance")
        .map_err(|_| Error::Conditioning("innovation covariance is singular or indefinite".into()))?;
    // K = C·S⁻¹ via Kᵀ = S⁻¹·Cᵀ (S symmetric).
    let k_t = chol.solve(&cross.transpose());
    let gain = k_t.transpose();

    let innovation = z - &z_mean;
    let mean = &predicted.mean + &gain * &innovation;
    // P⁺ = P⁻ − K·S·Kᵀ, with K·S = C.
    let cov = &predicted.covariance - &cross * &k_t;
    let cov = 0.5 * (&cov + cov.transpose());
    Ok(Update {
        belief: GaussianBelief {
            mean,
            covariance: cov,
        },
        innovation,
    })
}

/// One prediction + correction cycle.
pub fn step<F, H>(
    b: &GaussianBelief,
    transition: F,
    measurement_fn: H,
    z: &DVector<f64>,
    noises: &NoiseMatrices,
    w: &UkfWeights,
) -> Result<Update>
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
    H: Fn(&DVector<f64>) -> DVector<f64>,
{
    let predicted = predict(b, transition, &noises.q, w)?;
    update(&predicted, measurement_fn, z, &noises.r, w)
}
