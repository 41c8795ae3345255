//! Linear stability of the positive steady state: the oscillatory pair
//! ±i with its first-order correction, the continuous band, the spectrum
//! of the truncated Jacobian, and a direct measurement of the damping time.

use crate::error::{Error, Result};
use crate::integrate::{integrate_log_full_with, StepperConfig};
use crate::model::{steady_state_truncated, SimState, SteadyState, SystemParams};
use crate::numeric::linear_fit;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Chain length for eigenvector residuals; r^j underflows to zero long before.
pub const RESIDUAL_CHAIN: usize = 2000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearizedSpectrum {
    pub lambda0_pair: [Complex64; 2],
    pub r: Complex64,
    /// Correction for λ₀ = i; the λ₀ = −i branch is its conjugate.
    pub lambda1: Complex64,
    pub v0: Complex64,
    pub w0: Complex64,
    /// φ_{j,0} for j = 1..=len.
    pub eigvec_profile: Vec<Complex64>,
    /// (β, λ₀(β))
    pub continuous_band: Vec<(f64, f64)>,
}

fn i() -> Complex64 {
    Complex64::i()
}

/// The recurrence root 1 + i/2 − √(i − 1/4), of modulus below one.
pub fn recurrence_root() -> Complex64 {
    1.0 + 0.5 * i() - (i() - 0.25).sqrt()
}

fn phi0_coefficient(r: Complex64) -> Complex64 {
    (1.0 + i()) / (1.0 - r)
}

pub fn oscillatory_mode(profile_len: usize) -> Result<LinearizedSpectrum> {
    let r = recurrence_root();
    let c = phi0_coefficient(r);
    let lambda1 = -0.5 * (i() + (1.0 + i()) * r / (1.0 - r));
    if !(lambda1.re < 0.0) {
        return Err(Error::Domain(format!("first-order correction is not damping: {lambda1}")));
    }
    let mut eigvec_profile = Vec::with_capacity(profile_len);
    let mut rj = r;
    for _ in 0..profile_len {
        eigvec_profile.push(c * rj);
        rj *= r;
    }
    let betas: Vec<f64> = (0..64).map(|k| 2.0 * PI * k as f64 / 64.0).collect();
    Ok(LinearizedSpectrum {
        lambda0_pair: [i(), -i()],
        r,
        lambda1,
        v0: Complex64::new(1.0, 0.0),
        w0: -i(),
        eigvec_profile,
        continuous_band: continuous_spectrum(&betas)?.into_iter().map(|b| (b.beta, b.lambda)).collect(),
    })
}

/// Eigenvector to first order in θ for λ = i + θλ₁.
#[derive(Debug, Clone, PartialEq)]
pub struct FirstOrderMode {
    pub lambda: Complex64,
    pub v: Complex64,
    pub w: Complex64,
    /// φ_j for j = 1..=len + 1.
    pub phi: Vec<Complex64>,
}

pub fn first_order_mode(theta: f64, len: usize) -> FirstOrderMode {
    let r = recurrence_root();
    let c = phi0_coefficient(r);
    let lambda1 = -0.5 * (i() + (1.0 + i()) * r / (1.0 - r));
    let (v0, w0) = (Complex64::new(1.0, 0.0), -i());
    let (v1, w1) = (-i() * lambda1, Complex64::new(0.0, 0.0));
    let p = i() - 1.0;
    let g = c * (lambda1 - 1.0 + r);
    let d = g * r / (r * r - 1.0);
    let phi0 = |j: usize| c * r.powu(j as u32);
    // the j = 1 equation fixes the homogeneous part K r^j
    let rest = lambda1 * phi0(1) + w1 - v1 - (w0 + phi0(1) - v0 - phi0(2));
    let k = ((1.0 + i()) * (p + d * r) + rest - p - 2.0 * d * r * r) / (r * r - (1.0 + i()) * r);
    let phi = (1..=len + 1)
        .map(|j| {
            let rj = r.powu(j as u32);
            phi0(j) + theta * (p + d * j as f64 * rj + k * rj)
        })
        .collect();
    FirstOrderMode { lambda: i() + theta * lambda1, v: v0 + theta * v1, w: w0 + theta * w1, phi }
}

impl FirstOrderMode {
    /// Largest residual of the linearized eigen-equations at parameter θ.
    pub fn residual(&self, theta: f64) -> f64 {
        let (l, v, w, phi) = (self.lambda, self.v, self.w, &self.phi);
        let q = 1.0 - theta;
        let mut worst = (l * v + q * w + theta * phi[0]).norm().max((l * w - v).norm());
        worst = worst.max((l * phi[0] + q * (w + phi[0] - v - phi[1])).norm());
        for j in 1..phi.len() - 1 {
            let lhs = l * phi[j];
            let rhs = (phi[j - 1] - phi[j] + w - v) - q * (phi[j] - phi[j + 1] + w - v);
            worst = worst.max((lhs - rhs).norm());
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandPoint {
    pub beta: f64,
    pub lambda: f64,
    /// Interior recurrence residual over the sampled profile.
    pub residual: f64,
    /// |(λ + 1)φ₁ − φ₂|
    pub boundary_residual: f64,
}

/// Generalized eigenvectors of the continuous band λ = 2(cos β − 1).
pub fn continuous_spectrum(betas: &[f64]) -> Result<Vec<BandPoint>> {
    const LEN: usize = 64;
    betas
        .iter()
        .map(|&beta| {
            if !(0.0..2.0 * PI).contains(&beta) {
                return Err(Error::InvalidParameter(format!("beta = {beta} outside [0, 2pi)")));
            }
            let lambda = 2.0 * (beta.cos() - 1.0);
            let phi: Vec<Complex64> = if beta == 0.0 {
                vec![Complex64::new(1.0, 0.0); LEN]
            } else {
                let rp = Complex64::from_polar(1.0, beta);
                let rm = rp.conj();
                let ratio = (1.0 - rm) / (1.0 - rp);
                (0..LEN).map(|k| rp.powu(k as u32) - ratio * rm.powu(k as u32)).collect()
            };
            let residual = (1..LEN - 1)
                .map(|j| (lambda * phi[j] - (phi[j - 1] - 2.0 * phi[j] + phi[j + 1])).norm())
                .fold(0.0, f64::max);
            let boundary_residual = ((lambda + 1.0) * phi[0] - phi[1]).norm();
            Ok(BandPoint { beta, lambda, residual, boundary_residual })
        })
        .collect()
}

/// Jacobian of the truncated system at a steady state, in the variables
/// (v, w, c₁, …, c_N) with ε = Σc.
pub fn truncated_jacobian(ss: &SteadyState) -> DMatrix<f64> {
    let c = &ss.c_bar;
    let n = c.len();
    let (v, w) = (ss.v_bar, ss.w_bar);
    let dim = n + 2;
    let mut jac = DMatrix::zeros(dim, dim);
    let tail: f64 = c[1..].iter().sum();
    let head: f64 = c[..n - 1].iter().sum();
    jac[(0, 0)] = tail - w;
    jac[(0, 1)] = -v;
    for k in 1..n {
        jac[(0, 2 + k)] = v;
    }
    jac[(1, 0)] = w;
    jac[(1, 1)] = v - head;
    for k in 0..n - 1 {
        jac[(1, 2 + k)] = -w;
    }
    // J_j = w c_j − v c_{j+1} for j = 1..N−1 enters dc_j with − and dc_{j+1} with +
    for j in 0..n - 1 {
        let grads = [(0, -c[j + 1]), (1, c[j]), (2 + j, w), (3 + j, -v)];
        for (col, g) in grads {
            jac[(2 + j, col)] -= g;
            jac[(3 + j, col)] += g;
        }
    }
    jac
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedSpectrum {
    pub epsilon: f64,
    pub theta: f64,
    pub n_max: usize,
    pub max_real: f64,
    /// Eigenvalue closest to iε, divided by ε.
    pub oscillatory: Complex64,
    /// i + θλ₁
    pub predicted: Complex64,
}

pub fn truncated_spectrum(eps: f64, n_max: usize) -> Result<TruncatedSpectrum> {
    let ss = steady_state_truncated(&SystemParams::new(eps, n_max))?;
    let eig = truncated_jacobian(&ss).complex_eigenvalues();
    let max_real = eig.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let target = Complex64::new(0.0, eps);
    let osc = eig
        .iter()
        .min_by(|a, b| (*a - target).norm().total_cmp(&(*b - target).norm()))
        .copied()
        .ok_or_else(|| Error::Domain("empty spectrum".into()))?;
    let lambda1 = oscillatory_mode(0)?.lambda1;
    Ok(TruncatedSpectrum {
        epsilon: eps,
        theta: ss.theta,
        n_max,
        max_real,
        oscillatory: osc / eps,
        predicted: i() + ss.theta * lambda1,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingReport {
    pub epsilon: f64,
    pub theta: f64,
    pub perturbation: f64,
    /// εθ|Re λ₁|, per unit t.
    pub predicted_rate: f64,
    pub fitted_rate: Option<f64>,
    /// Angular frequency in t from upward zero crossings of v − v̄.
    pub frequency: Option<f64>,
    /// 1/(fitted rate) in units of 1/ε².
    pub decay_time_over_eps2: Option<f64>,
    /// (window centre, max |v − v̄|) per oscillation period.
    pub envelope: Vec<(f64, f64)>,
}

/// Perturb v by +δv̄ and w by −δv̄ (mass and cluster number unchanged),
/// integrate the full truncated system for about three predicted damping
/// times and fit the envelope of v − v̄.
pub fn verify_damping_timescale(eps: f64, delta: f64) -> Result<DampingReport> {
    if !(eps > 0.0 && eps <= 0.05) {
        return Err(Error::OutOfRegime(format!("damping check needs eps <= 0.05, got {eps}")));
    }
    if !(delta >= 0.0 && delta < 0.1) {
        return Err(Error::InvalidParameter(format!("relative perturbation {delta} outside [0, 0.1)")));
    }
    let theta0 = crate::model::theta_unit_mass(eps);
    let n_max = (40.0 / theta0).ceil() as usize;
    let params = SystemParams::new(eps, n_max);
    let ss = steady_state_truncated(&params)?;
    let lambda1 = oscillatory_mode(0)?.lambda1;
    let predicted_rate = eps * ss.theta * lambda1.re.abs();
    let mut report = DampingReport {
        epsilon: eps,
        theta: ss.theta,
        perturbation: delta,
        predicted_rate,
        fitted_rate: None,
        frequency: None,
        decay_time_over_eps2: None,
        envelope: Vec::new(),
    };
    if delta == 0.0 {
        return Ok(report);
    }
    let shift = delta * ss.v_bar;
    let state0 = SimState { t: 0.0, v: ss.v_bar + shift, w: ss.w_bar - shift, c: ss.c_bar.clone() };
    let t_end = 3.0 / predicted_rate;
    let dt = 2.0 * PI / eps / 64.0;
    let v_bar = ss.v_bar;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    let mut next = 0.0;
    let mut worst: f64 = 0.0;
    let cfg = StepperConfig::with_tolerances(1e-14, 1e-11);
    integrate_log_full_with(&params, &state0, t_end, cfg, |step| {
        let t1 = step.t();
        let dense = step.dense();
        while next <= t1 {
            let dev = dense.eval_component(0, next).exp() - v_bar;
            worst = worst.max(dev.abs() / v_bar);
            samples.push((next, dev));
            next += dt;
        }
        if worst > 0.1 {
            return Err(Error::NonlinearRegime(worst));
        }
        Ok(true)
    })?;
    let ups: Vec<f64> = samples
        .windows(2)
        .filter(|w| w[0].1 < 0.0 && w[1].1 >= 0.0)
        .map(|w| w[0].0 + (w[1].0 - w[0].0) * w[0].1 / (w[0].1 - w[1].1))
        .collect();
    if ups.len() >= 3 {
        let period = (ups[ups.len() - 1] - ups[0]) / (ups.len() - 1) as f64;
        report.frequency = Some(2.0 * PI / period);
        for w in ups.windows(2) {
            let amp = samples
                .iter()
                .filter(|s| s.0 >= w[0] && s.0 < w[1])
                .map(|s| s.1.abs())
                .fold(0.0, f64::max);
            report.envelope.push((0.5 * (w[0] + w[1]), amp));
        }
        let (x, y): (Vec<f64>, Vec<f64>) = report.envelope.iter().map(|&(t, a)| (t, a.ln())).unzip();
        let rate = -linear_fit(&x, &y).0;
        report.fitted_rate = Some(rate);
        report.decay_time_over_eps2 = Some(eps * eps / rate);
    }
    Ok(report)
}
