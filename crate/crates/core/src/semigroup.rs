//! Cycle-to-cycle maps for rescaled cluster profiles in the early phases,
//! the energy lost per cycle and the slow envelope for length and energy.

use crate::error::{Error, Result};
use crate::integrate::{integrate_ode, StepperConfig};
use crate::numeric::{
    brent, half_hat_weight, hat_coefficients, hat_weight, normal_pdf, normal_q, GaussRule, KahanSum,
};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Heat kernel G(ξ; s) = exp(−ξ²/4s)/√(4πs).
pub fn heat_kernel(xi: f64, s: f64) -> Result<f64> {
    if !(s > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs s > 0, got {s}")));
    }
    Ok((-xi * xi / (4.0 * s)).exp() / (4.0 * PI * s).sqrt())
}

/// Fixed-point profile (2/π) exp(−x²/π).
pub fn psi_star(x: f64) -> f64 {
    2.0 / PI * (-x * x / PI).exp()
}

/// Rescaled size distribution: a smooth density ψ on a uniform grid plus a
/// point mass m at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterProfile {
    pub length: f64,
    pub m: f64,
    pub x_max: f64,
    pub psi: Vec<f64>,
}

impl ClusterProfile {
    pub const X_MAX: f64 = 8.0;
    pub const NODES: usize = 4096;

    pub fn dx(&self) -> f64 {
        self.x_max / (self.psi.len() - 1) as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        i as f64 * self.dx()
    }

    pub fn from_fn(length: f64, m: f64, nodes: usize, x_max: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        if nodes < 3 || !(x_max > 0.0) || !(0.0..=1.0).contains(&m) {
            return Err(Error::InvalidParameter("bad profile grid or Dirac weight".into()));
        }
        let dx = x_max / (nodes - 1) as f64;
        let psi = (0..nodes).map(|i| f(i as f64 * dx)).collect();
        let mut p = Self { length, m, x_max, psi };
        if m < 1.0 {
            p.normalize()?;
        }
        Ok(p)
    }

    /// The fixed point itself, with no point mass.
    pub fn half_gaussian(length: f64) -> Self {
        Self::from_fn(length, 0.0, Self::NODES, Self::X_MAX, psi_star).unwrap()
    }

    /// Pure point mass. Its first image is twice as wide as the fixed
    /// point, so the grid is doubled at equal spacing.
    pub fn dirac(length: f64) -> Self {
        Self { length, m: 1.0, x_max: 2.0 * Self::X_MAX, psi: vec![0.0; 2 * Self::NODES - 1] }
    }

    /// Hat-basis coefficients for the sampled ψ.
    pub fn coeffs(&self) -> Vec<f64> {
        hat_coefficients(&self.psi)
    }

    /// ∫ψ and ∫xψ, fourth order in the grid spacing.
    pub fn moments(&self) -> (f64, f64) {
        let dx = self.dx();
        let c = self.coeffs();
        let (mut m0, mut m1) = (KahanSum::new(), KahanSum::new());
        for i in 0..c.len() - 1 {
            let (a, b) = (c[i], c[i + 1]);
            let (xa, xb) = (self.x(i), self.x(i + 1));
            m0.add(0.5 * dx * (a + b));
            m1.add(dx / 6.0 * ((2.0 * xa + xb) * a + (xa + 2.0 * xb) * b));
        }
        (m0.value(), m1.value())
    }

    /// Rescale ψ in amplitude and x so that m + ∫ψ = 1 and ∫xψ = 1.
    /// Returns (α, β) with ψ ← α β ψ(β x).
    pub fn normalize(&mut self) -> Result<(f64, f64)> {
        let (m0, m1) = self.moments();
        if !(m0 > 0.0 && m1 > 0.0) {
            return Err(Error::Quadrature("profile has no mass".into()));
        }
        // ψ̃(x) = a ψ(b x): ∫ψ̃ = a m0 / b, ∫xψ̃ = a m1 / b²
        let target = 1.0 - self.m;
        let b = m1 / m0 * target;
        let a = target * b / m0;
        if (b - 1.0).abs() > 1e-14 {
            let old = self.clone();
            for i in 0..self.psi.len() {
                self.psi[i] = old.interp(b * self.x(i));
            }
        }
        let scale = a;
        self.psi.iter_mut().for_each(|p| *p *= scale);
        Ok((a / b, b))
    }

    /// Local cubic interpolation, zero beyond the grid.
    pub fn interp(&self, x: f64) -> f64 {
        cubic_interp(&self.psi, self.dx(), x)
    }

    /// ∫|ψ − ψ*| on the grid.
    pub fn l1_to_fixed_point(&self) -> f64 {
        let rule = GaussRule::new(4);
        let dx = self.dx();
        let mut acc = KahanSum::new();
        for i in 0..self.psi.len() - 1 {
            let (a, b) = (self.psi[i], self.psi[i + 1]);
            let x0 = self.x(i);
            acc.add(rule.integrate(x0, x0 + dx, |x| {
                let s = (x - x0) / dx;
                (a + s * (b - a) - psi_star(x)).abs()
            }));
        }
        // analytic tail of ψ* beyond the grid
        acc.add(2.0 * normal_q(self.x_max / (PI / 2.0).sqrt()));
        acc.value()
    }

    pub fn csv_rows(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        (0..self.psi.len()).map(move |i| (self.x(i), self.psi[i]))
    }
}

fn cubic_interp(f: &[f64], dx: f64, x: f64) -> f64 {
    let n = f.len();
    if x < 0.0 || x > (n - 1) as f64 * dx {
        return 0.0;
    }
    let s = x / dx;
    let i = (s.floor() as usize).min(n - 2);
    let t = s - i as f64;
    let at = |k: isize| -> f64 {
        let j = i as isize + k;
        if j < 0 {
            // linear extrapolation through the first two nodes
            2.0 * f[0] - f[1]
        } else if j as usize >= n {
            0.0
        } else {
            f[j as usize]
        }
    };
    let (p0, p1, p2, p3) = (at(-1), at(0), at(1), at(2));
    // cubic Lagrange through i-1..i+2
    let w0 = -t * (t - 1.0) * (t - 2.0) / 6.0;
    let w1 = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0;
    let w2 = -(t + 1.0) * t * (t - 2.0) / 2.0;
    let w3 = (t + 1.0) * t * (t - 1.0) / 6.0;
    w0 * p0 + w1 * p1 + w2 * p2 + w3 * p3
}

/// Outcome of one application of the profile map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileStep {
    pub profile: ClusterProfile,
    /// L_{n+1}/L_n before renormalization.
    pub ratio: f64,
    /// Amplitude and stretch corrections applied by renormalization.
    pub alpha: f64,
    pub beta: f64,
}

/// ∫ψ(η)[sd φ(η/sd) − η Q(η/sd)] dη, the smooth part of the length gain.
fn smooth_gain(p: &ClusterProfile, sd: f64) -> f64 {
    let rule = GaussRule::new(6);
    let dx = p.dx();
    let c = p.coeffs();
    let mut acc = KahanSum::new();
    for i in 0..c.len() - 1 {
        let x0 = p.x(i);
        if x0 > 40.0 * sd {
            break;
        }
        let (a, b) = (c[i], c[i + 1]);
        acc.add(rule.integrate(x0, x0 + dx, |x| {
            let s = (x - x0) / dx;
            (a + s * (b - a)) * (sd * normal_pdf(x / sd) - x * normal_q(x / sd))
        }));
    }
    acc.value()
}

fn smooth_loss(p: &ClusterProfile, sd: f64) -> f64 {
    let rule = GaussRule::new(6);
    let dx = p.dx();
    let c = p.coeffs();
    let mut acc = KahanSum::new();
    for i in 0..c.len() - 1 {
        let x0 = p.x(i);
        if x0 > 40.0 * sd {
            break;
        }
        let (a, b) = (c[i], c[i + 1]);
        acc.add(rule.integrate(x0, x0 + dx, |x| {
            let s = (x - x0) / dx;
            (a + s * (b - a)) * normal_q(x / sd)
        }));
    }
    acc.value()
}

/// Heat-evolved smooth part ∫G(y − η; σ²)ψ(η)dη on nodes y_i = i dx, i < n_out.
fn evolve_on_grid(p: &ClusterProfile, sd: f64, n_out: usize) -> Vec<f64> {
    let dx = p.dx();
    let c = p.coeffs();
    let n = c.len();
    let reach = ((9.0 * sd / dx).ceil() as usize + 2).min(n + n_out);
    let w: Vec<f64> = (0..=reach).map(|d| hat_weight(d as f64 * dx, dx, sd)).collect();
    let mut out = vec![0.0; n_out];
    for (i, o) in out.iter_mut().enumerate() {
        let y = i as f64 * dx;
        let mut acc = if i <= reach + 1 { c[0] * half_hat_weight(y, dx, sd) } else { 0.0 };
        let lo = i.saturating_sub(reach).max(1);
        let hi = (i + reach).min(n - 1);
        for k in lo..=hi {
            acc += c[k] * w[i.abs_diff(k)];
        }
        *o = acc;
    }
    out
}

/// One step of the profile map at σ² = D/L².
pub fn iterate_profile(p: &ClusterProfile, sigma2: f64) -> Result<ProfileStep> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("sigma^2 must be positive, got {sigma2}")));
    }
    let sigma = sigma2.sqrt();
    let sd = sigma * 2f64.sqrt();
    // first moment of the positive part; the current one is 1 unless ψ = 0
    let (_, m1) = p.moments();
    let lambda = m1 + smooth_gain(p, sd) + p.m * sigma / PI.sqrt();
    let m_next = smooth_loss(p, sd) + 0.5 * p.m;
    let dx = p.dx();
    let n = p.psi.len();
    let n_out = ((n as f64) * lambda).ceil() as usize + 4;
    let u = evolve_on_grid(p, sd, n_out);
    let psi: Vec<f64> = (0..n)
        .map(|i| {
            let y = lambda * i as f64 * dx;
            let smooth = cubic_interp(&u, dx, y);
            lambda * (smooth + p.m * normal_pdf(y / sd) / sd)
        })
        .collect();
    let mut next = ClusterProfile { length: p.length * lambda, m: m_next, x_max: p.x_max, psi };
    let (alpha, beta) = next.normalize()?;
    if (alpha - 1.0).abs() > 1e-6 || (beta - 1.0).abs() > 1e-6 {
        return Err(Error::Quadrature(format!(
            "moment drift too large: alpha-1 = {:e}, beta-1 = {:e}",
            alpha - 1.0,
            beta - 1.0
        )));
    }
    next.length *= beta;
    Ok(ProfileStep { profile: next, ratio: lambda * beta, alpha, beta })
}

/// Iterate at fixed σ² until the sup-norm change drops below `tol`.
pub fn iterate_to_fixed_point(
    start: &ClusterProfile,
    sigma2: f64,
    tol: f64,
    max_iter: usize,
) -> Result<(ClusterProfile, usize)> {
    let mut p = start.clone();
    let mut last = f64::INFINITY;
    for it in 1..=max_iter {
        let next = iterate_profile(&p, sigma2)?.profile;
        last = next.psi.iter().zip(&p.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        last = last.max((next.m - p.m).abs());
        p = next;
        if last < tol {
            return Ok((p, it));
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, last_change: last, history: vec![] })
}

/// Linearized map ψ ↦ λ[ψ + σ²ψ''](λx) with λ = 1 + (2/π)σ².
pub fn linearized_step(p: &ClusterProfile, sigma2: f64) -> ClusterProfile {
    let lambda = 1.0 + 2.0 / PI * sigma2;
    let dx = p.dx();
    let n = p.psi.len();
    let f = &p.psi;
    let d2 = |i: usize| -> f64 {
        if i == 0 {
            // even reflection at the origin
            2.0 * (f[1] - f[0]) / (dx * dx)
        } else if i == n - 1 {
            (f[n - 2] - 2.0 * f[n - 1]) / (dx * dx)
        } else {
            (f[i + 1] - 2.0 * f[i] + f[i - 1]) / (dx * dx)
        }
    };
    let g: Vec<f64> = (0..n).map(|i| f[i] + sigma2 * d2(i)).collect();
    let psi = (0..n).map(|i| lambda * cubic_interp(&g, dx, lambda * i as f64 * dx)).collect();
    ClusterProfile { length: p.length * lambda, m: p.m, x_max: p.x_max, psi }
}

/// Residual of aψ + axψ' + ψ'' = 0 for the closed form, a = 2/π.
pub fn psi_equation_residual(xs: &[f64]) -> f64 {
    let a = 2.0 / PI;
    xs.iter()
        .map(|&x| {
            let p = psi_star(x);
            let dp = -2.0 * x / PI * p;
            let ddp = (4.0 * x * x / (PI * PI) - 2.0 / PI) * p;
            (a * p + a * x * dp + ddp).abs()
        })
        .fold(0.0, f64::max)
}

/// σ² = D(E, ε)/L², with D from a full cycle integration unless E ≫ ε.
pub fn sigma2_for(length: f64, energy: f64, eps: f64) -> Result<f64> {
    let d = if energy / eps < 100.0 { crate::lv::solve_cycle(energy, eps)?.diffusion } else { energy / eps };
    Ok(d / (length * length))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyDecrement {
    pub sigma2: f64,
    /// −∫_{s<0}|s|W(s)ds by double quadrature.
    pub integral: f64,
    /// εL(mσ/√π + smooth term).
    pub decomposed: f64,
    pub dirac_term: f64,
    pub smooth_term: f64,
}

/// Energy lost in one cycle, both as a double integral and in closed form.
pub fn energy_decrement(p: &ClusterProfile, energy: f64, eps: f64) -> Result<EnergyDecrement> {
    let sigma2 = sigma2_for(p.length, energy, eps)?;
    energy_decrement_at(p, sigma2, eps)
}

pub fn energy_decrement_at(p: &ClusterProfile, sigma2: f64, eps: f64) -> Result<EnergyDecrement> {
    let sigma = sigma2.sqrt();
    let sd = sigma * 2f64.sqrt();
    let scale = eps * p.length;
    let dirac_term = p.m * sigma / PI.sqrt();
    let smooth_term = smooth_gain(p, sd);
    // outer integral over y < 0 of |y| times the evolved density
    let dx = p.dx();
    let reach = ((10.0 * sd / dx).ceil() as usize + 2).min(p.psi.len() - 1);
    let c = p.coeffs();
    let evolved = |y: f64| -> f64 {
        let mut acc = c[0] * half_hat_weight(y, dx, sd);
        for k in 1..=reach {
            acc += c[k] * hat_weight(y - p.x(k), dx, sd);
        }
        acc + p.m * normal_pdf(y / sd) / sd
    };
    let y_lo = -12.0 * sd;
    let rule = GaussRule::new(12);
    let integral = rule.composite(y_lo, 0.0, 64, |y| -y * evolved(y));
    Ok(EnergyDecrement {
        sigma2,
        integral: -scale * integral,
        decomposed: -scale * (dirac_term + smooth_term),
        dirac_term,
        smooth_term,
    })
}

/// One step of L_{n+1}/L_n − 1 = A E/(εL²), E_{n+1} − E_n = −A E/L.
pub fn iterate_length_energy(length: f64, energy: f64, eps: f64, a: f64) -> Result<(f64, f64)> {
    if energy <= 5.0 * eps {
        return Err(Error::OutOfRegime(format!("E = {energy} is not large against eps = {eps}")));
    }
    Ok((length * (1.0 + a * energy / (eps * length * length)), energy - a * energy / length))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeState {
    pub s: f64,
    pub ell: f64,
    pub e: f64,
}

/// −ℓ − log(1 − ℓ), with its Taylor series near 0.
fn envelope_f(ell: f64) -> f64 {
    if ell < 1e-3 {
        let mut acc = 0.0;
        let mut p = ell * ell;
        for k in 2..12 {
            acc += p / k as f64;
            p *= ell;
        }
        acc
    } else {
        -ell - (-ell).ln_1p()
    }
}

/// Solve −ℓ − log(1 − ℓ) = A s for ℓ, with e = 1 − ℓ.
pub fn envelope_at(s: f64, a: f64) -> Result<EnvelopeState> {
    if !(a > 0.0) || s < 0.0 {
        return Err(Error::InvalidParameter(format!("envelope needs A > 0, s >= 0 (A = {a}, s = {s})")));
    }
    let target = a * s;
    if target == 0.0 {
        return Ok(EnvelopeState { s, ell: 0.0, e: 1.0 });
    }
    if target < 0.5 {
        let hi = (2.0 * target).sqrt().min(0.999).max(1e-300) * 1.5;
        let ell = brent(|l| envelope_f(l) - target, 0.0, hi.min(1.0 - 1e-12), 1e-17 * hi, 400)?;
        Ok(EnvelopeState { s, ell, e: 1.0 - ell })
    } else {
        // in u = log e: u − e^u = −As − 1
        let u = brent(|u| u - u.exp() + target + 1.0, -target - 2.0, 0.0, 1e-15, 400)?;
        let e = u.exp();
        Ok(EnvelopeState { s, ell: 1.0 - e, e })
    }
}

pub fn envelope_solve(s_grid: &[f64], a: f64) -> Result<Vec<EnvelopeState>> {
    s_grid.iter().map(|&s| envelope_at(s, a)).collect()
}

/// Integrate dℓ/ds = Ae/ℓ, de/ds = −Ae/ℓ from the small-s series at s₀.
pub fn envelope_ode(s0: f64, s_grid: &[f64], a: f64) -> Result<Vec<EnvelopeState>> {
    let r = (2.0 * a * s0).sqrt();
    let ell0 = r - r * r / 3.0 + r * r * r / 36.0;
    let s_end = s_grid.iter().copied().fold(s0, f64::max);
    let rhs = move |_s: f64, y: &[f64], dy: &mut [f64]| {
        let g = a * y[1] / y[0];
        dy[0] = g;
        dy[1] = -g;
    };
    let cfg = StepperConfig::with_tolerances(1e-15, 1e-13);
    let tr = integrate_ode(&rhs, &[ell0, 1.0 - ell0], (s0, s_end), cfg, &[])?;
    s_grid
        .iter()
        .map(|&s| {
            let y = tr.eval(s.max(s0)).ok_or_else(|| Error::Domain(format!("s = {s} outside ODE range")))?;
            Ok(EnvelopeState { s, ell: y[0], e: y[1] })
        })
        .collect()
}

/// c₁(τ) ≈ ∫_{−∞}^{2(τ−τ*)} W(s) ds for a front arriving at τ*.
pub fn boundary_collision_c1(w: impl Fn(f64) -> f64, s_min: f64, tau: &[f64], tau_star: f64) -> Vec<f64> {
    let rule = GaussRule::new(10);
    tau.iter()
        .map(|&t| {
            let top = 2.0 * (t - tau_star);
            if top <= s_min {
                0.0
            } else {
                rule.composite(s_min, top, 200, &w)
            }
        })
        .collect()
}

/// Discrete chain dc_j/dτ = 2(c_{j+1} − c_j), dc₁/dτ = 2(c₂ − κc₁), with
/// c_j(0) = W(j − 1 − 2τ*). Returns c₁ at the requested times.
pub fn boundary_chain_c1(
    w: impl Fn(f64) -> f64,
    s_max: f64,
    tau: &[f64],
    tau_star: f64,
    kappa: f64,
) -> Result<Vec<f64>> {
    let n = (2.0 * tau_star + s_max).ceil() as usize + 2;
    let c0: Vec<f64> = (1..=n).map(|j| w(j as f64 - 1.0 - 2.0 * tau_star)).collect();
    let rhs = move |_t: f64, c: &[f64], dc: &mut [f64]| {
        let n = c.len();
        dc[0] = 2.0 * (c[1] - kappa * c[0]);
        for j in 1..n {
            let up = if j + 1 < n { c[j + 1] } else { 0.0 };
            dc[j] = 2.0 * (up - c[j]);
        }
    };
    let t_end = tau.iter().copied().fold(0.0, f64::max);
    let cfg = StepperConfig::with_tolerances(1e-12, 1e-10);
    let tr = integrate_ode(&rhs, &c0, (0.0, t_end), cfg, &[])?;
    tau.iter()
        .map(|&t| tr.eval_component(0, t).ok_or_else(|| Error::Domain(format!("tau = {t} outside range"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_basics() {
        let s = 0.3;
        assert!((heat_kernel(0.0, s).unwrap() - 1.0 / (4.0 * PI * s).sqrt()).abs() < 1e-15);
        assert_eq!(heat_kernel(0.7, s).unwrap(), heat_kernel(-0.7, s).unwrap());
        assert!(heat_kernel(0.0, 0.0).is_err());
        let rule = GaussRule::new(12);
        let total = rule.composite(-10.0, 10.0, 40, |x| heat_kernel(x, s).unwrap());
        assert!((total - 1.0).abs() < 1e-13);
        let first = rule.composite(0.0, 10.0, 40, |x| x * heat_kernel(x, s).unwrap());
        assert!((first - s.sqrt() / PI.sqrt()).abs() < 1e-13);
    }

    #[test]
    fn closed_form_solves_profile_equation() {
        let xs: Vec<f64> = (0..2000).map(|i| i as f64 * 0.004).collect();
        assert!(psi_equation_residual(&xs) < 1e-10);
        let p = ClusterProfile::half_gaussian(1.0);
        let (m0, m1) = p.moments();
        assert!((m0 - 1.0).abs() < 1e-6 && (m1 - 1.0).abs() < 1e-6);
        assert!(p.l1_to_fixed_point() < 1e-6);
    }

    #[test]
    fn pure_dirac_step() {
        let sigma2: f64 = 0.05;
        let step = iterate_profile(&ClusterProfile::dirac(1.0), sigma2).unwrap();
        assert!((step.profile.m - 0.5).abs() < 1e-14);
        let ratio = (sigma2 / PI).sqrt();
        assert!((step.ratio - ratio).abs() < 1e-9, "{} {ratio} {}", step.ratio, step.beta);
        // half-Gaussian of variance 2σ² stretched by the length ratio
        let sd = (2.0 * sigma2).sqrt();
        for i in [0usize, 10, 40, 80] {
            let x = step.profile.x(i);
            let expected = ratio * normal_pdf(ratio * x / sd) / sd;
            assert!((step.profile.psi[i] - expected).abs() < 1e-6 * expected.max(1.0), "{i}");
        }
    }

    #[test]
    fn length_always_grows_and_moments_hold() {
        let mut p = iterate_profile(&ClusterProfile::dirac(3.0), 0.02).unwrap().profile;
        for _ in 0..5 {
            let step = iterate_profile(&p, 0.02).unwrap();
            assert!(step.ratio > 1.0);
            let (m0, m1) = step.profile.moments();
            assert!((m0 + step.profile.m - 1.0).abs() < 1e-12);
            assert!((m1 - 1.0).abs() < 1e-12);
            assert!((step.alpha - 1.0).abs() < 1e-8 && (step.beta - 1.0).abs() < 1e-8);
            p = step.profile;
        }
    }

    #[test]
    fn linearized_map_fixes_closed_form() {
        let p = ClusterProfile::half_gaussian(1.0);
        let q = linearized_step(&p, 1e-4);
        let d = q.psi.iter().zip(&p.psi).map(|(a, b)| (a - b).abs()).sum::<f64>() * p.dx();
        assert!(d < 5e-4, "{d}");
    }

    #[test]
    fn decrement_routes_agree() {
        let mut p = ClusterProfile::dirac(5.0);
        p = iterate_profile(&p, 0.1).unwrap().profile;
        for sigma2 in [1e-3, 0.05, 1.0] {
            let d = energy_decrement_at(&p, sigma2, 0.02).unwrap();
            assert!((d.integral / d.decomposed - 1.0).abs() < 1e-6, "{sigma2}: {d:?}");
        }
        let zero = ClusterProfile { m: 0.0, psi: vec![0.0; 64], ..ClusterProfile::dirac(1.0) };
        assert_eq!(energy_decrement_at(&zero, 0.1, 0.02).unwrap().integral, 0.0);
    }

    #[test]
    fn decrement_small_sigma_asymptotics() {
        let (eps, energy, length): (f64, f64, f64) = (1e-3, 1.0, 200.0);
        let mut p = ClusterProfile::half_gaussian(length);
        p.m = 0.1;
        p.normalize().unwrap();
        let d = energy_decrement_at(&p, energy / eps / (length * length), eps).unwrap();
        let estimate = p.m * (energy * eps).sqrt() + energy / length * p.psi[0];
        let r = d.decomposed.abs() / estimate;
        assert!((1.0 / 3.0..3.0).contains(&r), "{r}");
    }

    #[test]
    fn length_energy_recursion() {
        let eps: f64 = 0.01;
        let (l1, _) = iterate_length_energy(1.0 / eps.sqrt(), 1.0, eps, 1.0).unwrap();
        assert!((l1 * eps.sqrt() - 2.0).abs() < 1e-12);
        assert!(iterate_length_energy(10.0, 0.04, eps, 1.0).is_err());
    }

    #[test]
    fn envelope_small_and_large_s() {
        let a = 0.73;
        let st = envelope_at(1e-6, a).unwrap();
        assert!((st.ell / (2.0 * a * 1e-6f64).sqrt() - 1.0).abs() < 1e-2);
        let st = envelope_at(10.0 / a, a).unwrap();
        assert!((st.e / (-11f64).exp() - 1.0).abs() < 0.05);
    }

    #[test]
    fn envelope_matches_ode() {
        let a = 0.73;
        let grid: Vec<f64> = (1..=50).map(|k| 0.2 * k as f64).collect();
        let implicit = envelope_solve(&grid, a).unwrap();
        let ode = envelope_ode(1e-12, &grid, a).unwrap();
        for (p, q) in implicit.iter().zip(&ode) {
            assert!((p.ell - q.ell).abs() < 1e-8 && (p.e - q.e).abs() < 1e-8, "{p:?} {q:?}");
            assert!((p.e + p.ell - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn collision_cumulative_and_chain() {
        let width = 20.0;
        let w = move |s: f64| (-0.5 * (s / width).powi(2)).exp() / (width * (2.0 * PI).sqrt());
        let tau: Vec<f64> = (0..=60).map(|k| 2.0 * k as f64).collect();
        let tau_star = 50.0;
        let cum = boundary_collision_c1(w, -8.0 * width, &tau, tau_star);
        assert!(cum.windows(2).all(|p| p[1] >= p[0] - 1e-15));
        assert!((cum.last().unwrap() - 1.0).abs() < 1e-6);
        let chain = boundary_chain_c1(w, 8.0 * width, &tau, tau_star, 1e-4).unwrap();
        let peak = cum.iter().copied().fold(0.0, f64::max);
        let dev = cum.iter().zip(&chain).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(dev < 0.1 * peak, "{dev}");
        let none = boundary_collision_c1(|_| 0.0, -10.0, &tau, tau_star);
        assert!(none.iter().all(|&c| c == 0.0));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn envelope_stays_on_the_line(s in 0.0f64..40.0, a in 0.1f64..3.0) {
            let st = envelope_at(s, a).unwrap();
            prop_assert!((0.0..=1.0).contains(&st.ell));
            prop_assert!((st.e + st.ell - 1.0).abs() < 1e-15);
            if a * s < 0.5 {
                prop_assert!((envelope_f(st.ell) - a * s).abs() <= 1e-9 * (a * s).max(1e-12));
            } else {
                let u = st.e.ln();
                prop_assert!((u - st.e + a * s + 1.0).abs() <= 1e-12 * (a * s));
            }
        }
    }
}
