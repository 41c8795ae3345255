//! Core model types, conserved quantities, the Lotka-Volterra energy and
//! the positive steady state.

use crate::error::{Error, Result};
use crate::numeric::{brent, compensated_sum, KahanSum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub epsilon: f64,
    #[serde(default = "one")]
    pub total_mass: f64,
    pub n_max: usize,
    #[serde(default = "default_abs_tol")]
    pub abs_tol: f64,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
}

fn one() -> f64 {
    1.0
}
fn default_abs_tol() -> f64 {
    1e-14
}
fn default_rel_tol() -> f64 {
    1e-12
}

impl SystemParams {
    pub fn new(epsilon: f64, n_max: usize) -> Self {
        Self {
            epsilon,
            total_mass: 1.0,
            n_max,
            abs_tol: default_abs_tol(),
            rel_tol: default_rel_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "epsilon must lie in (0, 1/2), got {}",
                self.epsilon
            )));
        }
        if self.n_max < 2 {
            return Err(Error::InvalidParameter("n_max must be at least 2".into()));
        }
        if !(self.total_mass > 0.0 && self.total_mass.is_finite()) {
            return Err(Error::InvalidParameter("total_mass must be positive".into()));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        Ok(())
    }
}

/// State of the discrete system; `c[j - 1]` holds c_j.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub t: f64,
    pub v: f64,
    pub w: f64,
    pub c: Vec<f64>,
}

impl SimState {
    pub fn validate(&self) -> Result<()> {
        if !(self.v >= 0.0 && self.w >= 0.0) {
            return Err(Error::Domain("monomer concentrations must be nonnegative".into()));
        }
        if let Some((j, x)) = self.c.iter().enumerate().find(|(_, x)| !(**x >= 0.0)) {
            return Err(Error::Domain(format!("c_{} = {x} is negative or NaN", j + 1)));
        }
        if !(cluster_number(self).is_finite() && total_mass(self).is_finite()) {
            return Err(Error::Domain("moments are not finite".into()));
        }
        Ok(())
    }

    /// First moment over zeroth moment of the cluster distribution.
    pub fn mean_size(&self) -> f64 {
        first_moment(&self.c) / cluster_number(self)
    }
}

pub fn cluster_number(state: &SimState) -> f64 {
    compensated_sum(state.c.iter().copied())
}

pub fn first_moment(c: &[f64]) -> f64 {
    compensated_sum(c.iter().enumerate().map(|(i, &x)| (i + 1) as f64 * x))
}

pub fn total_mass(state: &SimState) -> f64 {
    let mut acc = KahanSum::new();
    acc.add(state.v);
    acc.add(state.w);
    acc.add(first_moment(&state.c));
    acc.value()
}

/// Zeroth and first moments of samples `c` located at `sizes` with quadrature weight `weight`.
pub fn weighted_moments(sizes: &[f64], c: &[f64], weight: f64) -> (f64, f64) {
    let m0 = compensated_sum(c.iter().map(|&x| weight * x));
    let m1 = compensated_sum(sizes.iter().zip(c).map(|(&j, &x)| weight * j * x));
    (m0, m1)
}

/// e^p - 1 - p, accurate for small |p|.
pub fn h_log(p: f64) -> f64 {
    if p.abs() < 1e-3 {
        let p2 = p * p;
        p2 * (0.5 + p * (1.0 / 6.0 + p * (1.0 / 24.0 + p * (1.0 / 120.0 + p / 720.0))))
    } else {
        p.exp_m1() - p
    }
}

/// Lotka-Volterra energy from log-concentrations x = log v, y = log w.
pub fn lv_energy_log(x: f64, y: f64, eps: f64) -> f64 {
    let le = eps.ln();
    eps * (h_log(x - le) + h_log(y - le))
}

/// E = v + w - 2ε - ε log(vw/ε²), evaluated as ε[h(v/ε) + h(w/ε)].
pub fn lv_energy(v: f64, w: f64, eps: f64) -> Result<f64> {
    if !(v > 0.0 && w > 0.0) {
        return Err(Error::Domain(format!("lv_energy needs v, w > 0 (v = {v}, w = {w})")));
    }
    Ok(lv_energy_log(v.ln(), w.ln(), eps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub theta: f64,
    pub c_bar: Vec<f64>,
    pub v_bar: f64,
    pub w_bar: f64,
    pub e_bar: f64,
}

/// θ for unit total mass, written without cancellation.
pub fn theta_unit_mass(eps: f64) -> f64 {
    let s = ((1.0 - 2.0 * eps).powi(2) + 4.0 * eps * eps).sqrt();
    2.0 * eps / (1.0 - 2.0 * eps + s)
}

/// Positive steady state of the infinite system, sampled up to n_max.
///
/// For total mass M the system is scaled to unit mass, so θ = θ₁(ε/M).
pub fn steady_state(params: &SystemParams) -> Result<SteadyState> {
    let eps = params.epsilon;
    let rho = eps / params.total_mass;
    if !(rho > 0.0 && rho < 0.5) || params.n_max < 1 {
        return Err(Error::InvalidParameter(format!(
            "no positive steady state for epsilon/M = {rho}"
        )));
    }
    let theta = theta_unit_mass(rho);
    let c1 = eps * theta;
    let q = 1.0 - theta;
    let mut c_bar = Vec::with_capacity(params.n_max);
    let mut x = c1;
    for _ in 0..params.n_max {
        c_bar.push(x);
        x *= q;
    }
    Ok(SteadyState {
        theta,
        c_bar,
        v_bar: eps,
        w_bar: eps * q,
        e_bar: eps * (-theta - (-theta).ln_1p()),
    })
}

/// Exact equilibrium of the system truncated at n_max with J_{n_max} = 0.
///
/// Geometric profiles c_{j+1} = q c_j with Σc = ε are equilibria for every
/// ratio q; the total mass selects q.
pub fn steady_state_truncated(params: &SystemParams) -> Result<SteadyState> {
    params.validate()?;
    let eps = params.epsilon;
    let n = params.n_max;
    let build = |q: f64| -> (f64, Vec<f64>, f64, f64) {
        let mut shape = Vec::with_capacity(n);
        let mut x = 1.0;
        for _ in 0..n {
            shape.push(x);
            x *= q;
        }
        let s = compensated_sum(shape.iter().copied());
        let c: Vec<f64> = shape.iter().map(|&x| eps * x / s).collect();
        let w = eps - c[0];
        let v = eps - c[n - 1];
        let mass = v + w + first_moment(&c);
        (mass, c, v, w)
    };
    let target = params.total_mass;
    let q = brent(|q| build(q).0 - target, 0.0, 1.0 - 1e-15, 1e-16, 300).map_err(|_| {
        Error::InvalidParameter(format!(
            "no truncated equilibrium with mass {target} for epsilon = {eps}, n_max = {n}"
        ))
    })?;
    let (_, c_bar, v_bar, w_bar) = build(q);
    let e_bar = lv_energy(v_bar, w_bar, eps)?;
    Ok(SteadyState { theta: 1.0 - q, c_bar, v_bar, w_bar, e_bar })
}

/// Right-hand side of the truncated system (J_N = 0, consistent monomer
/// consumption) with ε = Σc supplied by the caller.
///
/// `dc` must have the length of `c`.
pub fn bd_rhs(eps: f64, v: f64, w: f64, c: &[f64], dc: &mut [f64]) -> (f64, f64) {
    let n = c.len();
    let mut j_prev = 0.0;
    for j in 0..n {
        let flux = if j + 1 < n { w * c[j] - v * c[j + 1] } else { 0.0 };
        dc[j] = j_prev - flux;
        j_prev = flux;
    }
    let dv = v * (-w + eps - c[0]);
    let dw = w * (v - eps + c[n - 1]);
    (dv, dw)
}

/// Residuals of the infinite system at a steady state whose sequence
/// continues geometrically beyond the sampled range.
pub fn steady_residual(ss: &SteadyState) -> f64 {
    let n = ss.c_bar.len();
    let q = 1.0 - ss.theta;
    let tail = ss.c_bar[n - 1] * q / ss.theta;
    let sum_all = compensated_sum(ss.c_bar.iter().copied()) + tail;
    let (v, w) = (ss.v_bar, ss.w_bar);
    let dv = -v * w + v * (sum_all - ss.c_bar[0]);
    let dw = v * w - w * sum_all;
    let mut worst = dv.abs().max(dw.abs());
    let flux = |j: usize| -> f64 {
        // J_j for j >= 1 on the infinite sequence
        let cj = ss.c_bar[j - 1];
        let cj1 = if j < n { ss.c_bar[j] } else { ss.c_bar[n - 1] * q };
        w * cj - v * cj1
    };
    let mut j_prev = 0.0;
    for j in 1..=n {
        let jj = flux(j);
        worst = worst.max((j_prev - jj).abs());
        j_prev = jj;
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(v: f64, w: f64, c: Vec<f64>) -> SimState {
        SimState { t: 0.0, v, w, c }
    }

    #[test]
    fn cluster_number_and_mass_trivial_cases() {
        let eps = 0.02;
        let s = state(0.3, 0.2, vec![eps, 0.0, 0.0]);
        assert_eq!(cluster_number(&s), eps);
        assert_eq!(cluster_number(&state(0.1, 0.1, vec![0.0; 5])), 0.0);
        assert_eq!(total_mass(&state(0.0, 0.0, vec![1.0])), 1.0);
        assert_eq!(total_mass(&state(0.5, 0.5, vec![0.0; 4])), 1.0);
    }

    #[test]
    fn energy_vanishes_only_at_center() {
        let eps = 0.02;
        assert_eq!(lv_energy(eps, eps, eps).unwrap(), 0.0);
        for i in 1..40 {
            for k in 1..40 {
                let v = 0.002 * i as f64;
                let w = 0.002 * k as f64;
                if (v - eps).abs() < 1e-15 && (w - eps).abs() < 1e-15 {
                    continue;
                }
                assert!(lv_energy(v, w, eps).unwrap() > 0.0);
            }
        }
        assert!(lv_energy(0.0, 0.1, eps).is_err());
        assert!(lv_energy(0.1, -1.0, eps).is_err());
    }

    #[test]
    fn energy_matches_direct_formula() {
        let eps: f64 = 0.02;
        let (v, w): (f64, f64) = (0.5, 0.5);
        let direct = v + w - 2.0 * eps - eps * (v * w / (eps * eps)).ln();
        let e = lv_energy(v, w, eps).unwrap();
        assert!((e - direct).abs() < 1e-14);
    }

    #[test]
    fn theta_against_extended_precision() {
        // 40-digit evaluation of 1 - (1 - sqrt((1-2e)^2 + 4e^2)) / (2e) at e = 0.02
        let reference = 0.020_824_298_928_627_732;
        let ss = steady_state(&SystemParams::new(0.02, 500)).unwrap();
        assert!((ss.theta - reference).abs() < 1e-17);
    }

    #[test]
    fn theta_over_eps_tends_to_one() {
        let mut prev = f64::INFINITY;
        for k in 2..10 {
            let eps = 10f64.powi(-k);
            let r = (theta_unit_mass(eps) / eps - 1.0).abs();
            assert!(r < prev);
            prev = r;
        }
        assert!(prev < 1e-8);
    }

    #[test]
    fn steady_state_solves_fixed_point_equations() {
        for &eps in &[0.02, 0.01, 0.005] {
            let ss = steady_state(&SystemParams::new(eps, 2000)).unwrap();
            assert!(steady_residual(&ss) < 1e-12);
            // unit mass in the infinite sum
            let mass = ss.v_bar + ss.w_bar + ss.c_bar[0] / (ss.theta * ss.theta);
            assert!((mass - 1.0).abs() < 1e-12);
            let r = ss.e_bar / (eps.powi(3) / 2.0);
            assert!((0.8..1.2).contains(&r), "ratio {r}");
        }
        assert!(steady_state(&SystemParams::new(0.5, 10)).is_err());
    }

    #[test]
    fn steady_state_tail_is_geometric() {
        let ss = steady_state(&SystemParams::new(0.02, 300)).unwrap();
        for w in ss.c_bar.windows(2) {
            assert!((w[1] / w[0] - (1.0 - ss.theta)).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_equilibrium_is_exact_for_truncated_rhs() {
        let p = SystemParams::new(0.02, 200);
        let ss = steady_state_truncated(&p).unwrap();
        let mut dc = vec![0.0; p.n_max];
        let (dv, dw) = bd_rhs(p.epsilon, ss.v_bar, ss.w_bar, &ss.c_bar, &mut dc);
        assert!(dv.abs() < 1e-17 && dw.abs() < 1e-17);
        assert!(dc.iter().all(|x| x.abs() < 1e-17));
        let s = SimState { t: 0.0, v: ss.v_bar, w: ss.w_bar, c: ss.c_bar.clone() };
        assert!((total_mass(&s) - 1.0).abs() < 1e-13);
        assert!((cluster_number(&s) - 0.02).abs() < 1e-16);
    }

    #[test]
    fn rescaled_mass_steady_state() {
        let mut p = SystemParams::new(0.02, 3000);
        p.total_mass = 2.0;
        let ss = steady_state(&p).unwrap();
        assert!((ss.theta - theta_unit_mass(0.01)).abs() < 1e-17);
        assert!(steady_residual(&ss) < 1e-12);
    }

    proptest! {
        #[test]
        fn rhs_conserves_number_and_mass(
            eps in 0.005f64..0.1,
            v in 0.01f64..1.0,
            w in 0.01f64..1.0,
            shape in proptest::collection::vec(0.0f64..1.0, 3..40),
        ) {
            let s: f64 = shape.iter().sum();
            prop_assume!(s > 1e-3);
            let c: Vec<f64> = shape.iter().map(|x| eps * x / s).collect();
            let mut dc = vec![0.0; c.len()];
            let (dv, dw) = bd_rhs(eps, v, w, &c, &mut dc);
            let dn: f64 = dc.iter().sum();
            let dm = dv + dw + dc.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum::<f64>();
            prop_assert!(dn.abs() < 1e-15);
            prop_assert!(dm.abs() < 1e-13);
        }

        #[test]
        fn energy_nonnegative(v in 1e-6f64..2.0, w in 1e-6f64..2.0, eps in 1e-4f64..0.4) {
            prop_assert!(lv_energy(v, w, eps).unwrap() >= 0.0);
        }
    }
}
