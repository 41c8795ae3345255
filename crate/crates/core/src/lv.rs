//! Unperturbed Lotka-Volterra cycles: stage decomposition, period,
//! displacement and diffusion integrals, scaling identities.

use crate::error::{Error, Result};
use crate::integrate::{integrate_log_lv, Direction, Event, StepperConfig, Trajectory};
use crate::model::{h_log, lv_energy_log};
use crate::numeric::{brent, GaussRule, KahanSum};
use serde::{Deserialize, Serialize};

/// v(0) = w(0) > ε on the level set E of the energy.
pub fn start_from_energy(energy: f64, eps: f64) -> Result<f64> {
    if !(energy > 0.0 && eps > 0.0) {
        return Err(Error::InvalidParameter(format!("need E, eps > 0 (E = {energy}, eps = {eps})")));
    }
    // 2ε h(p) = E with p = log(v0/ε)
    let target = energy / (2.0 * eps);
    let mut hi = 1.0;
    while h_log(hi) < target {
        hi *= 2.0;
        if hi > 1e6 {
            return Err(Error::RootFinding("energy level too large".into()));
        }
    }
    let p = brent(|p| h_log(p) - target, 0.0, hi, 1e-15, 300)?;
    Ok(eps * p.exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageTimes {
    pub t1: f64,
    pub t12: Option<f64>,
    pub t2: f64,
    pub t23: f64,
    pub t3: f64,
    pub t34: Option<f64>,
    pub t4: f64,
    pub t5: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleRecord {
    pub energy: f64,
    pub epsilon: f64,
    pub v0: f64,
    pub stages: StageTimes,
    pub period: f64,
    /// (t, Y(t)) at the accepted steps and stage times.
    pub y_samples: Vec<(f64, f64)>,
    pub y_max: f64,
    pub y_end: f64,
    pub diffusion: f64,
    pub mean_v: f64,
    pub mean_w: f64,
    /// log v at t₂.
    pub log_v_t2: f64,
    /// Largest relative energy deviation over the accepted steps.
    pub energy_drift: f64,
}

/// A solved cycle together with its dense trajectory in (log v, log w).
#[derive(Debug, Clone)]
pub struct SolvedCycle {
    pub record: CycleRecord,
    pub trajectory: Trajectory,
}

impl SolvedCycle {
    /// (v, w) at time t within the cycle.
    pub fn vw(&self, t: f64) -> Option<(f64, f64)> {
        self.trajectory.eval(t).map(|u| (u[0].exp(), u[1].exp()))
    }

    /// ∫_a^b g(v, w) dt by Gauss-Legendre on the dense steps.
    pub fn integral(&self, a: f64, b: f64, g: impl Fn(f64, f64) -> f64) -> f64 {
        integrate_on(&self.trajectory, a, b, &g)
    }
}

fn integrate_on(tr: &Trajectory, a: f64, b: f64, g: &dyn Fn(f64, f64) -> f64) -> f64 {
    let rule = GaussRule::new(10);
    let mut acc = KahanSum::new();
    for d in &tr.dense {
        let lo = d.t0.max(a);
        let hi = d.t1().min(b);
        if hi <= lo {
            continue;
        }
        acc.add(rule.integrate(lo, hi, |t| {
            g(d.eval_component(0, t).exp(), d.eval_component(1, t).exp())
        }));
    }
    acc.value()
}

/// Rough period used to bound the search horizon.
fn expected_period(energy: f64, eps: f64) -> f64 {
    let slow = energy / (eps * eps) + 2.0 * (1.0 + (energy / eps).max(1.0).ln()) / eps;
    slow.max(2.0 * std::f64::consts::PI / eps)
}

pub fn solve_cycle(energy: f64, eps: f64) -> Result<CycleRecord> {
    solve_cycle_full(energy, eps, StepperConfig::default()).map(|c| c.record)
}

/// Integrate one cycle from the v = w > ε crossing back to it.
pub fn solve_cycle_full(energy: f64, eps: f64, cfg: StepperConfig) -> Result<SolvedCycle> {
    let v0 = start_from_energy(energy, eps)?;
    let x0 = v0.ln();
    let le = eps.ln();
    let l32 = 1.5 * le;
    let events = [
        Event::new("t1", Direction::Falling, move |_t, u| u[0] - le),
        Event::new("t12", Direction::Falling, move |_t, u| u[0] - l32),
        Event::new("t2", Direction::Falling, move |_t, u| u[1] - le),
        Event::new("t23", Direction::Rising, |_t, u| u[0] - u[1]),
        Event::new("t3", Direction::Rising, move |_t, u| u[0] - le),
        Event::new("t34", Direction::Rising, move |_t, u| u[1] - l32),
        Event::new("t4", Direction::Rising, move |_t, u| u[1] - le),
        Event::new("t5", Direction::Rising, move |_t, u| if u[0] > le { u[1] - u[0] } else { -1.0 })
            .terminal(),
    ];
    let horizon = 10.0 * expected_period(energy, eps);
    let tr = integrate_log_lv(eps, x0, x0, (0.0, horizon), cfg, &events)?;
    let t5 = tr
        .hits
        .iter()
        .find(|h| h.event == 7)
        .map(|h| h.t)
        .ok_or_else(|| Error::EventNotFound(format!("cycle end not reached within t = {horizon}")))?;

    // first hitting times, each after the previous stage
    let mut t_prev = 0.0;
    let mut next = |ev: usize, required: bool| -> Result<Option<f64>> {
        let hit = tr.hits.iter().find(|h| h.event == ev && h.t > t_prev && h.t <= t5).map(|h| h.t);
        match hit {
            Some(t) => {
                t_prev = t;
                Ok(Some(t))
            }
            None if required => Err(Error::EventNotFound(format!("stage event {}", events[ev].name))),
            None => Ok(None),
        }
    };
    let t1 = next(0, true)?.unwrap();
    let t12 = next(1, false)?;
    let t2 = next(2, true)?.unwrap();
    let t23 = next(3, true)?.unwrap();
    let t3 = next(4, true)?.unwrap();
    let t34 = next(5, false)?;
    let t4 = next(6, true)?.unwrap();
    let stages = StageTimes { t1, t12, t2, t23, t3, t34, t4, t5 };

    let e_ref = lv_energy_log(x0, x0, eps);
    let energy_drift = tr
        .y
        .iter()
        .map(|u| (lv_energy_log(u[0], u[1], eps) / e_ref - 1.0).abs())
        .fold(0.0, f64::max);

    // cumulative displacement at step ends and stage times
    let rule = GaussRule::new(10);
    let stage_list = [t1, t2, t23, t3, t4, t5];
    let mut y_samples = vec![(0.0, 0.0)];
    let mut y_acc = KahanSum::new();
    let (mut d_acc, mut v_acc, mut w_acc) = (KahanSum::new(), KahanSum::new(), KahanSum::new());
    for d in &tr.dense {
        let lo = d.t0;
        let hi = d.t1().min(t5);
        if hi <= lo {
            continue;
        }
        let mut cuts: Vec<f64> = stage_list.iter().copied().filter(|&s| s > lo && s < hi).collect();
        cuts.push(hi);
        let mut a = lo;
        for b in cuts {
            let piece = |f: &dyn Fn(f64, f64) -> f64| {
                rule.integrate(a, b, |t| f(d.eval_component(0, t).exp(), d.eval_component(1, t).exp()))
            };
            y_acc.add(piece(&|v, w| w - v));
            let iv = piece(&|v, _| v);
            let iw = piece(&|_, w| w);
            v_acc.add(iv);
            w_acc.add(iw);
            d_acc.add(0.5 * (iv + iw));
            y_samples.push((b, y_acc.value()));
            a = b;
        }
    }
    let y_max = y_samples.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let log_v_t2 = tr.eval_component(0, t2).unwrap();
    let record = CycleRecord {
        energy,
        epsilon: eps,
        v0,
        stages,
        period: t5,
        y_end: y_acc.value(),
        y_samples,
        y_max,
        diffusion: d_acc.value(),
        mean_v: v_acc.value() / t5,
        mean_w: w_acc.value() / t5,
        log_v_t2,
        energy_drift,
    };
    Ok(SolvedCycle { record, trajectory: tr })
}

impl CycleRecord {
    /// Displacement Y(t) interpolated linearly between stored samples.
    pub fn displacement_at(&self, t: f64) -> f64 {
        let i = self.y_samples.partition_point(|p| p.0 < t);
        if i == 0 {
            return self.y_samples[0].1;
        }
        if i >= self.y_samples.len() {
            return self.y_samples.last().unwrap().1;
        }
        let (t0, y0) = self.y_samples[i - 1];
        let (t1, y1) = self.y_samples[i];
        if t1 == t0 {
            return y1;
        }
        y0 + (y1 - y0) * (t - t0) / (t1 - t0)
    }

    pub fn csv_header() -> &'static str {
        "E,eps,t1,t12,t2,t23,t3,t34,t4,t5,T,Ymax,D,mean_v,mean_w"
    }

    pub fn csv_row(&self) -> Vec<f64> {
        let s = &self.stages;
        vec![
            self.energy,
            self.epsilon,
            s.t1,
            s.t12.unwrap_or(f64::NAN),
            s.t2,
            s.t23,
            s.t3,
            s.t34.unwrap_or(f64::NAN),
            s.t4,
            s.t5,
            self.period,
            self.y_max,
            self.diffusion,
            self.mean_v,
            self.mean_w,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub energy: f64,
    pub epsilon: f64,
    pub period_dev: f64,
    pub diffusion_dev: f64,
    /// max over the cycle of |(w, v)(t; E, ε) − E (w, v)(E t; 1, ε/E)| / E
    pub orbit_dev: f64,
}

impl ScalingReport {
    pub fn max_dev(&self) -> f64 {
        self.period_dev.max(self.diffusion_dev).max(self.orbit_dev)
    }
}

pub fn check_scaling(energy: f64, eps: f64) -> Result<ScalingReport> {
    let cfg = StepperConfig::with_tolerances(1e-13, 1e-12);
    let a = solve_cycle_full(energy, eps, cfg)?;
    let b = solve_cycle_full(1.0, eps / energy, cfg)?;
    let period_dev = (a.record.period * energy / b.record.period - 1.0).abs();
    let diffusion_dev = (a.record.diffusion / b.record.diffusion - 1.0).abs();
    let n = 4000;
    let mut orbit_dev: f64 = 0.0;
    for k in 0..=n {
        let t = a.record.period * k as f64 / n as f64;
        let ts = (energy * t).min(b.record.period);
        let (va, wa) = a.vw(t).unwrap();
        let (vb, wb) = b.vw(ts).unwrap();
        orbit_dev = orbit_dev.max((va - energy * vb).abs() / energy).max((wa - energy * wb).abs() / energy);
    }
    Ok(ScalingReport { energy, epsilon: eps, period_dev, diffusion_dev, orbit_dev })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageAsymptotics {
    pub epsilon: f64,
    /// t₁ / (−log ε)
    pub r_t1: f64,
    /// (t₁,₂ − t₁) / (−½ log ε)
    pub r_t12: f64,
    /// (t₂ − t₁) ε / log(1/ε)
    pub r_t2: f64,
    /// (t₃ − t₂) ε²
    pub r_t3: f64,
    /// (t₄ − t₃) ε / log(1/ε)
    pub r_t4: f64,
    /// (t₅ − t₄) / log(1/ε)
    pub r_t5: f64,
    /// v(t₂) / (ε e^{−1} e^{−1/ε}), evaluated in log space
    pub r_v_t2: f64,
    /// T ε²
    pub r_period: f64,
    pub mean_v: f64,
    pub mean_w: f64,
}

pub fn check_stage_asymptotics(eps_sweep: &[f64]) -> Result<Vec<StageAsymptotics>> {
    eps_sweep
        .iter()
        .map(|&eps| {
            let r = solve_cycle(1.0, eps)?;
            let s = r.stages;
            let l = -eps.ln();
            let t12 = s.t12.unwrap_or(f64::NAN);
            Ok(StageAsymptotics {
                epsilon: eps,
                r_t1: s.t1 / l,
                r_t12: (t12 - s.t1) / (0.5 * l),
                r_t2: (s.t2 - s.t1) * eps / l,
                r_t3: (s.t3 - s.t2) * eps * eps,
                r_t4: (s.t4 - s.t3) * eps / l,
                r_t5: (s.t5 - s.t4) / l,
                r_v_t2: (r.log_v_t2 - (eps.ln() - 1.0 - 1.0 / eps)).exp(),
                r_period: r.period * eps * eps,
                mean_v: r.mean_v,
                mean_w: r.mean_w,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DisplacementReport {
    pub y_max: f64,
    pub diffusion: f64,
    /// share of D on (t₁, t₂) and on (t₃, t₄)
    pub share_12: f64,
    pub share_34: f64,
    /// Y increasing on (0, t₂)
    pub increasing_before_t2: bool,
    /// relative variation of Y on (t₂, t₃)
    pub flat_variation_23: f64,
    /// Y decreasing on (t₃, t₅)
    pub decreasing_after_t3: bool,
}

pub fn displacement_and_diffusion(cycle: &SolvedCycle) -> DisplacementReport {
    let r = &cycle.record;
    let s = r.stages;
    let d = |a: f64, b: f64| 0.5 * cycle.integral(a, b, |v, w| v + w);
    let share_12 = d(s.t1, s.t2) / r.diffusion;
    let share_34 = d(s.t3, s.t4) / r.diffusion;
    let ys: Vec<(f64, f64)> = r.y_samples.clone();
    let monotone = |a: f64, b: f64, up: bool| {
        let pts: Vec<f64> = ys.iter().filter(|p| p.0 >= a && p.0 <= b).map(|p| p.1).collect();
        pts.windows(2).all(|w| if up { w[1] >= w[0] } else { w[1] <= w[0] })
    };
    let y2 = r.displacement_at(s.t2);
    let y3 = r.displacement_at(s.t3);
    let in_23: Vec<f64> = ys.iter().filter(|p| p.0 >= s.t2 && p.0 <= s.t3).map(|p| p.1).collect();
    let hi = in_23.iter().copied().fold(y2.max(y3), f64::max);
    let lo = in_23.iter().copied().fold(y2.min(y3), f64::min);
    DisplacementReport {
        y_max: r.y_max,
        diffusion: r.diffusion,
        share_12,
        share_34,
        increasing_before_t2: monotone(0.0, s.t2, true),
        flat_variation_23: (hi - lo) / r.y_max,
        decreasing_after_t3: monotone(s.t3, s.t5, false),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn start_matches_small_eps_expansion() {
        let eps: f64 = 0.02;
        let v0 = start_from_energy(1.0, eps).unwrap();
        let approx = 0.5 + eps * (1.0 / eps).ln() + eps * (1.0 - 2f64.ln());
        assert!((v0 - approx).abs() < 5.0 * eps * eps * (1.0 / eps).ln().powi(2), "{v0} vs {approx}");
        assert!((lv_energy_log(v0.ln(), v0.ln(), eps) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn cycle_is_closed_and_ordered() {
        let eps: f64 = 0.02;
        let c = solve_cycle_full(1.0, eps, StepperConfig::default()).unwrap();
        let r = &c.record;
        let s = r.stages;
        let seq = [0.0, s.t1, s.t12.unwrap(), s.t2, s.t23, s.t3, s.t34.unwrap(), s.t4, s.t5];
        assert!(seq.windows(2).all(|w| w[0] < w[1]), "{seq:?}");
        assert!(r.energy_drift < 1e-9);
        let end = c.trajectory.y_end();
        assert!((end[0] - r.v0.ln()).abs() < 1e-7 && (end[1] - r.v0.ln()).abs() < 1e-7);
    }

    #[test]
    fn quadratures_satisfy_log_identities() {
        // over a period: ∫w = εT − Δx = εT, ∫v = εT + Δy = εT
        let eps: f64 = 0.01;
        let c = solve_cycle_full(1.0, eps, StepperConfig::default()).unwrap();
        let r = &c.record;
        assert!((r.mean_v - eps).abs() < 1e-8, "{}", r.mean_v - eps);
        assert!((r.mean_w - eps).abs() < 1e-8);
        assert!((r.diffusion - eps * r.period).abs() < 1e-8 * r.diffusion.max(1.0) * 10.0);
        // Y(t) = −Δx − Δy at an interior time
        let t = r.stages.t3;
        let u = c.trajectory.eval(t).unwrap();
        let x0 = r.v0.ln();
        let expected = -(u[0] - x0) - (u[1] - x0);
        assert!((r.displacement_at(t) - expected).abs() < 1e-7);
    }

    #[test]
    fn period_tends_to_inverse_eps_squared() {
        let mut prev = f64::INFINITY;
        for &eps in &[1e-2, 3e-3, 1e-3] {
            let r = solve_cycle(1.0, eps).unwrap();
            let dev = (r.period * eps * eps - 1.0).abs();
            assert!(dev < prev, "eps {eps}: {dev}");
            prev = dev;
        }
    }

    #[test]
    fn scaling_identity_is_exact_for_unit_energy() {
        let r = check_scaling(1.0, 0.02).unwrap();
        assert!(r.max_dev() < 1e-12);
    }

    #[test]
    fn displacement_shape() {
        let eps = 1e-3;
        let c = solve_cycle_full(1.0, eps, StepperConfig::default()).unwrap();
        let rep = displacement_and_diffusion(&c);
        assert!((0.8..1.2).contains(&(rep.y_max * eps)), "{}", rep.y_max * eps);
        assert!((0.8..1.2).contains(&(rep.diffusion * eps)));
        assert!(1.0 - rep.share_12 - rep.share_34 < 0.05);
        assert!(rep.increasing_before_t2 && rep.decreasing_after_t3);
        assert!(rep.flat_variation_23 < 0.05);
    }

    #[test]
    fn v_at_t2_is_exponentially_small() {
        let rows = check_stage_asymptotics(&[1e-3]).unwrap();
        let r = rows[0];
        assert!((0.5..2.0).contains(&r.r_v_t2), "{}", r.r_v_t2);
        assert!((0.75..1.25).contains(&r.r_t1));
        assert!((0.75..1.25).contains(&r.r_t3));
    }

    #[test]
    fn entry_and_exit_stages_are_symmetric() {
        let r = solve_cycle(1.0, 1e-3).unwrap();
        let s = r.stages;
        assert!(((s.t5 - s.t4) / s.t1 - 1.0).abs() < 0.2);
    }
}
