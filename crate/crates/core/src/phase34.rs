//! Late-time dynamics: the rescaled Phase III chain and its spectral decay
//! constant, the damping of the residual oscillations, and the Phase IV
//! free-boundary drift-diffusion limit.

use crate::error::{Error, Result};
use crate::integrate::{integrate_ode, Direction, Event, StepperConfig};
use crate::numeric::{linear_fit, solve_tridiagonal, KahanSum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

pub const FAR_FIELD: f64 = 2.0 / PI;
/// Value quoted for a in the energy-decay law; reported next to the computed one.
pub const A_QUOTED: f64 = 3.6922;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralConstants {
    pub r_minus: Complex64,
    pub r_plus: Complex64,
    pub k0: Complex64,
    /// Re((1+i)K₀)
    pub re_factor: f64,
    /// 4 Re((1+i)K₀)
    pub a: f64,
    pub a_quoted: f64,
}

/// Roots of r² − (2+i)r + 1 = 0 and the boundary coefficient K₀.
pub fn spectral_constants() -> SpectralConstants {
    let i = Complex64::i();
    let disc = (4.0 * i - 1.0).sqrt();
    let r_minus = 0.5 * ((2.0 + i) - disc);
    let r_plus = 0.5 * ((2.0 + i) + disc);
    let k0 = 1.0 / ((1.0 + i) - r_minus);
    let re_factor = ((1.0 + i) * k0).re;
    SpectralConstants { r_minus, r_plus, k0, re_factor, a: 4.0 * re_factor, a_quoted: A_QUOTED }
}

impl SpectralConstants {
    /// |r² − (2+i)r + 1| for r₋ and |K₀((1+i) − r₋) − 1|.
    pub fn residuals(&self) -> (f64, f64) {
        let i = Complex64::i();
        let r = self.r_minus;
        ((r * r - (2.0 + i) * r + 1.0).norm(), (self.k0 * ((1.0 + i) - r) - 1.0).norm())
    }
}

/// η_j(τ) = √(2Ẽ) Re((1+i) K₀ r₋^{j−1} e^{iτ}).
pub fn linearized_profile(j: usize, tau: f64, e_tilde: f64) -> Result<f64> {
    if j == 0 {
        return Err(Error::InvalidParameter("cluster index starts at 1".into()));
    }
    let s = spectral_constants();
    let i = Complex64::i();
    let phi = s.k0 * s.r_minus.powi(j as i32 - 1) * (i * tau).exp();
    Ok((2.0 * e_tilde).sqrt() * ((1.0 + i) * phi).re)
}

/// Chain length used for the far-field pin.
pub fn far_field_size(eps: f64) -> usize {
    200usize.max((20.0 / eps.sqrt()).ceil() as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase3Model {
    /// Conservative LV for (V, W) driving the chain; energy updated per cycle.
    Reduced,
    /// Fully coupled rescaled system.
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase3Cycle {
    pub n: usize,
    pub tau_start: f64,
    pub period: f64,
    pub e_tilde: f64,
    /// ε∫(1 − V)C₁ over the cycle.
    pub decrement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase3Run {
    pub model: Phase3Model,
    pub epsilon: f64,
    pub cycles: Vec<Phase3Cycle>,
    pub e_tilde_final: f64,
    pub c_final: Vec<f64>,
}

impl Phase3Run {
    /// Least-squares slope of log Ẽ_n against n over cycles `from..`.
    pub fn log_decay_per_cycle(&self, from: usize) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .cycles
            .iter()
            .skip(from)
            .filter(|c| c.e_tilde > 0.0)
            .map(|c| (c.n as f64, c.e_tilde.ln()))
            .collect();
        if pts.len() < 3 {
            return None;
        }
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        Some(linear_fit(&x, &y).0)
    }

    /// Mean of decrement/Ẽ over cycles `from..`.
    pub fn mean_relative_decrement(&self, from: usize) -> Option<f64> {
        let v: Vec<f64> = self.cycles.iter().skip(from).map(|c| c.decrement / c.e_tilde).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

fn phase3_rhs(model: Phase3Model, eps: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |_t, u, du| {
        let n = u.len();
        let (v, w) = (u[0].exp(), u[1].exp());
        let c = &u[2..n - 1];
        let m = c.len();
        let c1 = c[0];
        du[0] = match model {
            Phase3Model::Reduced => 1.0 - w,
            Phase3Model::Full => 1.0 - w - eps * c1,
        };
        du[1] = v - 1.0;
        let mut j_prev = 0.0;
        for k in 0..m {
            let next = if k + 1 < m { c[k + 1] } else { FAR_FIELD };
            let flux = w * c[k] - v * next;
            du[2 + k] = j_prev - flux;
            j_prev = flux;
        }
        du[n - 1] = eps * (1.0 - v) * c1;
    }
}

fn check_far_field(c: &[f64]) -> Result<()> {
    let worst = c.iter().rev().take(10).map(|&x| (x - FAR_FIELD).abs()).fold(0.0, f64::max);
    if worst > 0.05 {
        return Err(Error::FarField(worst));
    }
    Ok(())
}

/// Per-cycle energies of the rescaled Phase III dynamics.
pub fn run_phase3_cycle(
    e_tilde: f64,
    eps: f64,
    c_init: Option<&[f64]>,
    n_cycles: usize,
    model: Phase3Model,
) -> Result<Phase3Run> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("eps must lie in (0, 1), got {eps}")));
    }
    if e_tilde != 0.0 && !(e_tilde > eps * eps && e_tilde <= 10.0) {
        return Err(Error::OutOfRegime(format!("rescaled energy {e_tilde} outside (eps^2, 10]")));
    }
    let n_chain = far_field_size(eps);
    let mut c: Vec<f64> = match c_init {
        Some(c) => c.to_vec(),
        None => vec![FAR_FIELD; n_chain - 1],
    };
    if c.len() < 2 {
        return Err(Error::InvalidParameter("cluster chain too short".into()));
    }
    if e_tilde == 0.0 {
        let cycles = (0..n_cycles)
            .map(|n| Phase3Cycle { n, tau_start: 2.0 * PI * n as f64, period: 2.0 * PI, e_tilde: 0.0, decrement: 0.0 })
            .collect();
        return Ok(Phase3Run { model, epsilon: eps, cycles, e_tilde_final: 0.0, c_final: c });
    }
    let rhs = phase3_rhs(model, eps);
    let events = [Event::new("cycle", Direction::Rising, |_t, u| if u[0] > 0.0 { u[1] - u[0] } else { -1.0 })
        .terminal()];
    let cfg = StepperConfig::with_tolerances(1e-12, 1e-10);
    let p0 = crate::lv::start_from_energy(e_tilde, 1.0)?.ln();
    let mut u: Vec<f64> = [p0, p0].into_iter().chain(c.iter().copied()).chain([0.0]).collect();
    let mut e = e_tilde;
    let mut tau = 0.0;
    let mut cycles = Vec::with_capacity(n_cycles);
    let energy_of = |x: f64, y: f64| x.exp_m1() + y.exp_m1() - x - y;
    for n in 0..n_cycles {
        if model == Phase3Model::Reduced {
            let p = crate::lv::start_from_energy(e, 1.0)?.ln();
            u[0] = p;
            u[1] = p;
        } else {
            e = energy_of(u[0], u[1]);
        }
        let last = u.len() - 1;
        u[last] = 0.0;
        let horizon = 40.0 * PI * (1.0 + e);
        let mut t0 = tau;
        if model == Phase3Model::Full && n > 0 {
            // step off the section so rounding cannot re-trigger the crossing
            let lead = integrate_ode(&rhs, &u, (tau, tau + 0.25), cfg, &[])?;
            u = lead.y_end().to_vec();
            t0 = tau + 0.25;
        }
        let tr = integrate_ode(&rhs, &u, (t0, tau + horizon), cfg, &events)?;
        let hit = tr
            .hits
            .iter()
            .find(|h| h.event == 0)
            .ok_or_else(|| Error::EventNotFound(format!("phase III cycle {n} did not close")))?;
        let decrement = hit.y[last];
        cycles.push(Phase3Cycle { n, tau_start: tau, period: hit.t - tau, e_tilde: e, decrement });
        tau = hit.t;
        u = hit.y.clone();
        check_far_field(&u[2..last])?;
        if model == Phase3Model::Reduced {
            e += decrement;
            if e <= 0.0 {
                break;
            }
        }
    }
    let last = u.len() - 1;
    let e_final = match model {
        Phase3Model::Reduced => e,
        Phase3Model::Full => energy_of(u[0], u[1]),
    };
    c = u[2..last].to_vec();
    Ok(Phase3Run { model, epsilon: eps, cycles, e_tilde_final: e_final, c_final: c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DampingTrace {
    /// (τ, Ê) sampled every 2π.
    pub samples: Vec<(f64, f64)>,
    /// Fitted −d log Ê/dτ over the samples with Ê above `fit_floor`.
    pub rate: f64,
    pub fit_floor: f64,
}

/// Integrate the perturbed linear system for (α̃, β̃, η̃_j) from Ê₀ and
/// record Ê = (α̃² + β̃²)/2 once per 2π. `with_source` toggles the constant
/// C∞ feed of η̃₁.
pub fn damping_tail(eps: f64, e_hat0: f64, n_cycles: usize, c_inf: f64, with_source: bool) -> Result<DampingTrace> {
    if !(eps > 0.0 && e_hat0 > 0.0) {
        return Err(Error::InvalidParameter("need eps > 0 and E0 > 0".into()));
    }
    let n = 400usize.max((8.0 * (2.0 * PI * n_cycles as f64).sqrt()) as usize);
    let src = if with_source { c_inf } else { 0.0 };
    let rhs = move |_t: f64, u: &[f64], du: &mut [f64]| {
        let (a, b) = (u[0], u[1]);
        let eta = &u[2..];
        let m = eta.len();
        let at = |k: usize| if k < m { eta[k] } else { 0.0 };
        du[0] = -b - eps * a * b - eps * c_inf * eta[0];
        du[1] = a * (1.0 - eps * c_inf) + eps * a * b;
        du[2] = at(1) - eta[0] + a - b + src + eps * (a * at(1) - b * eta[0] + c_inf * eta[0]);
        for k in 1..m {
            let (em, e0, ep) = (eta[k - 1], eta[k], at(k + 1));
            let lap = em - 2.0 * e0 + ep;
            du[2 + k] = eps * 0.5 * (b - a) * (em - ep) + lap - eps * c_inf * (em - e0) + eps * 0.5 * (b + a) * lap;
        }
    };
    let mut u = vec![0.0; n + 2];
    u[0] = (2.0 * e_hat0).sqrt();
    let t_end = 2.0 * PI * n_cycles as f64;
    let cfg = StepperConfig::with_tolerances(1e-12, 1e-10);
    let tr = integrate_ode(&rhs, &u, (0.0, t_end), cfg, &[])?;
    let samples: Vec<(f64, f64)> = (0..=n_cycles)
        .map(|k| {
            let t = (2.0 * PI * k as f64).min(t_end);
            let y = tr.eval(t).unwrap();
            (t, 0.5 * (y[0] * y[0] + y[1] * y[1]))
        })
        .collect();
    u.clear();
    let fit_floor = 10.0 * eps;
    let pts: Vec<(f64, f64)> = samples.iter().filter(|p| p.1 > fit_floor).map(|&(t, e)| (t, e.ln())).collect();
    let rate = if pts.len() >= 3 {
        let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
        -linear_fit(&x, &y).0
    } else {
        f64::NAN
    };
    Ok(DampingTrace { samples, rate, fit_floor })
}

/// Constant-source chain dη₁/dτ = η₂ − η₁ + C∞, discrete heat equation for
/// j ≥ 2, η → 0 far away. Returns (τ, η₁) at the requested times.
pub fn constant_source_chain(c_inf: f64, taus: &[f64], n: usize) -> Result<Vec<(f64, f64)>> {
    let t_end = taus.iter().copied().fold(0.0, f64::max);
    let rhs = move |_t: f64, e: &[f64], de: &mut [f64]| {
        let m = e.len();
        de[0] = e[1] - e[0] + c_inf;
        for k in 1..m {
            let next = if k + 1 < m { e[k + 1] } else { 0.0 };
            de[k] = e[k - 1] - 2.0 * e[k] + next;
        }
    };
    let tr = integrate_ode(&rhs, &vec![0.0; n], (0.0, t_end), StepperConfig::with_tolerances(1e-12, 1e-10), &[])?;
    Ok(taus.iter().map(|&t| (t, tr.eval_component(0, t).unwrap_or(0.0))).collect())
}

/// Power-law exponent p of |y| ∝ τ^p by log-log least squares.
pub fn power_law_exponent(trace: &[(f64, f64)]) -> f64 {
    let (x, y): (Vec<f64>, Vec<f64>) = trace.iter().filter(|p| p.0 > 0.0).map(|p| (p.0.ln(), p.1.abs().ln())).unzip();
    linear_fit(&x, &y).0
}

/// Discrete diffusion chain dC₁ = C₂ − C₁, dC_j = C_{j−1} − 2C_j + C_{j+1},
/// C pinned to `c_inf` beyond the last site. Returns (τ, sup|C − C∞|).
pub fn relax_small_clusters(c_init: &[f64], c_inf: f64, taus: &[f64]) -> Result<Vec<(f64, f64)>> {
    if c_init.len() < 2 {
        return Err(Error::InvalidParameter("chain needs at least two sites".into()));
    }
    let rhs = move |_t: f64, c: &[f64], dc: &mut [f64]| {
        let m = c.len();
        dc[0] = c[1] - c[0];
        for k in 1..m {
            let next = if k + 1 < m { c[k + 1] } else { c_inf };
            dc[k] = c[k - 1] - 2.0 * c[k] + next;
        }
    };
    let t_end = taus.iter().copied().fold(0.0, f64::max);
    let sup = |c: &[f64]| c.iter().map(|&x| (x - c_inf).abs()).fold(0.0, f64::max);
    if t_end <= 0.0 {
        return Ok(taus.iter().map(|&t| (t, sup(c_init))).collect());
    }
    let tr = integrate_ode(&rhs, c_init, (0.0, t_end), StepperConfig::with_tolerances(1e-13, 1e-11), &[])?;
    Ok(taus.iter().map(|&t| (t, sup(&tr.eval(t.max(0.0)).unwrap()))).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase4Config {
    pub x_max: f64,
    pub h: f64,
    pub dt: f64,
}

impl Default for Phase4Config {
    fn default() -> Self {
        Self { x_max: 40.0, h: 0.02, dt: 0.01 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase4Snapshot {
    pub tau: f64,
    pub boundary: f64,
    pub mass: f64,
    pub first_moment: f64,
    pub l1_to_exp: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase4Run {
    pub x: Vec<f64>,
    pub c: Vec<f64>,
    pub history: Vec<Phase4Snapshot>,
    /// Largest one-step change of the discrete mass.
    pub max_mass_step: f64,
}

/// z/(e^z − 1)
fn bernoulli(z: f64) -> f64 {
    if z == 0.0 {
        1.0
    } else {
        z / z.exp_m1()
    }
}

fn trapezoid_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

struct Phase4Grid {
    x: Vec<f64>,
    w: Vec<f64>,
    h: f64,
}

impl Phase4Grid {
    fn snapshot(&self, tau: f64, c: &[f64]) -> Phase4Snapshot {
        let (mut m0, mut m1, mut l1) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
        for i in 0..c.len() {
            m0.add(self.w[i] * c[i]);
            m1.add(self.w[i] * self.x[i] * c[i]);
            l1.add(self.w[i] * (c[i] - (-self.x[i]).exp()).abs());
        }
        let tail = (-self.x.last().unwrap()).exp();
        Phase4Snapshot { tau, boundary: c[0], mass: m0.value(), first_moment: m1.value(), l1_to_exp: l1.value() + tail }
    }

    fn mass(&self, c: &[f64]) -> f64 {
        let mut acc = KahanSum::new();
        for (w, c) in self.w.iter().zip(c) {
            acc.add(w * c);
        }
        acc.value()
    }

    /// Backward Euler step with Scharfetter-Gummel fluxes at drift b.
    fn implicit_step(&self, c: &[f64], b: f64, dt: f64) -> Result<Vec<f64>> {
        let n = c.len();
        let h = self.h;
        let al = bernoulli(b * h) / h;
        let be = bernoulli(-b * h) / h;
        let mut sub = vec![-dt * al; n];
        let mut diag = vec![0.0; n];
        let mut sup = vec![-dt * be; n];
        for i in 0..n {
            diag[i] = self.w[i]
                + dt * match i {
                    0 => al,
                    _ if i == n - 1 => be,
                    _ => al + be,
                };
        }
        sub[0] = 0.0;
        sup[n - 1] = 0.0;
        let rhs: Vec<f64> = c.iter().zip(&self.w).map(|(c, w)| c * w).collect();
        solve_tridiagonal(&sub, &diag, &sup, &rhs)
    }
}

/// Solve ∂C/∂τ̄ = C(0)∂C/∂x + ∂²C/∂x² with zero total flux at x = 0, which
/// is the Robin condition ∂C/∂x(0) + C(0)² = 0. Each implicit step solves the
/// scalar fixed point b = C(0) by the secant method.
pub fn run_phase4(
    c_init: impl Fn(f64) -> f64,
    tau_end: f64,
    cfg: Phase4Config,
    record_every: usize,
) -> Result<Phase4Run> {
    if !(cfg.h > 0.0 && cfg.dt > 0.0 && cfg.x_max > 10.0 * cfg.h && tau_end >= 0.0) {
        return Err(Error::InvalidParameter(format!("bad phase IV grid {cfg:?}")));
    }
    let n = (cfg.x_max / cfg.h).round() as usize + 1;
    let h = cfg.x_max / (n - 1) as f64;
    let x: Vec<f64> = (0..n).map(|i| i as f64 * h).collect();
    let grid = Phase4Grid { w: trapezoid_weights(n, h), x, h };
    let mut c: Vec<f64> = grid.x.iter().map(|&x| c_init(x)).collect();
    if c.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidParameter("initial profile must be finite and non-negative".into()));
    }
    let s0 = grid.snapshot(0.0, &c);
    if (s0.mass - 1.0).abs() > 1e-3 || (s0.first_moment - 1.0).abs() > 1e-3 {
        return Err(Error::InvalidParameter(format!(
            "initial profile must have unit mass and first moment (got {}, {})",
            s0.mass, s0.first_moment
        )));
    }
    let steps = (tau_end / cfg.dt).round() as usize;
    let mut history = vec![s0];
    let mut max_mass_step: f64 = 0.0;
    let mut mass = grid.mass(&c);
    for k in 1..=steps {
        let residual = |b: f64| -> Result<(f64, Vec<f64>)> {
            let next = grid.implicit_step(&c, b, cfg.dt)?;
            Ok((b - next[0], next))
        };
        let mut b0 = c[0];
        let (mut f0, mut next) = residual(b0)?;
        let mut b1 = b0 * (1.0 + 1e-6) + 1e-9;
        let mut converged = f0.abs() < 1e-14;
        for _ in 0..60 {
            if converged {
                break;
            }
            let (f1, n1) = residual(b1)?;
            next = n1;
            if f1.abs() < 1e-14 || (b1 - b0).abs() < 1e-15 * b1.abs().max(1.0) {
                converged = true;
                break;
            }
            let b2 = b1 - f1 * (b1 - b0) / (f1 - f0);
            b0 = b1;
            f0 = f1;
            b1 = b2;
        }
        if !converged {
            return Err(Error::RootFinding(format!("boundary drift solve failed at step {k}")));
        }
        c = next;
        let m = grid.mass(&c);
        max_mass_step = max_mass_step.max((m - mass).abs());
        mass = m;
        if record_every > 0 && (k % record_every == 0 || k == steps) {
            history.push(grid.snapshot(k as f64 * cfg.dt, &c));
        }
    }
    Ok(Phase4Run { x: grid.x, c, history, max_mass_step })
}
