//! Adaptive high-order explicit integration with dense output and event
//! location, plus the log-transformed Lotka-Volterra and full systems.

mod dop853;
mod tableau;

pub use dop853::{DenseOutput, Dop853, OdeRhs, StepStats};

use crate::error::{Error, Result};
use crate::model::{bd_rhs, SimState, SystemParams};
use crate::numeric::brent;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepperConfig {
    /// Order tag; only the 8th-order pair is available.
    pub order: u8,
    pub abs_tol: f64,
    pub rel_tol: f64,
    /// Zero selects the automatic initial step.
    pub h_init: f64,
    pub h_min: f64,
    pub h_max: f64,
    pub max_steps: usize,
}

impl Default for StepperConfig {
    fn default() -> Self {
        Self {
            order: 8,
            abs_tol: 1e-12,
            rel_tol: 1e-10,
            h_init: 0.0,
            h_min: 1e-14,
            h_max: f64::INFINITY,
            max_steps: 50_000_000,
        }
    }
}

impl StepperConfig {
    pub fn with_tolerances(abs_tol: f64, rel_tol: f64) -> Self {
        Self { abs_tol, rel_tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.order != 8 {
            return Err(Error::InvalidParameter(format!("unsupported order {}", self.order)));
        }
        if !(self.abs_tol > 0.0 && self.rel_tol > 0.0) {
            return Err(Error::InvalidParameter("tolerances must be positive".into()));
        }
        let h0_ok = self.h_init == 0.0 || (self.h_min <= self.h_init && self.h_init <= self.h_max);
        if !(self.h_min >= 0.0 && self.h_min <= self.h_max && h0_ok) {
            return Err(Error::InvalidParameter("need h_min <= h_init <= h_max".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidParameter("max_steps must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Rising,
    Falling,
    Either,
}

impl Direction {
    fn accepts(self, g0: f64, g1: f64) -> bool {
        let up = g0 < 0.0 && g1 > 0.0;
        let down = g0 > 0.0 && g1 < 0.0;
        match self {
            Direction::Rising => up,
            Direction::Falling => down,
            Direction::Either => up || down,
        }
    }
}

/// Scalar event function g(t, y) located at strict sign changes.
pub struct Event<'a> {
    pub name: String,
    pub g: Box<dyn Fn(f64, &[f64]) -> f64 + 'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a> Event<'a> {
    pub fn new(name: &str, direction: Direction, g: impl Fn(f64, &[f64]) -> f64 + 'a) -> Self {
        Self { name: name.to_string(), g: Box::new(g), direction, terminal: false }
    }

    pub fn terminal(mut self) -> Self {
        self.terminal = true;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventHit {
    pub event: usize,
    pub t: f64,
    pub y: Vec<f64>,
}

/// Event time tolerance used by bisection-type refinement.
pub const EVENT_TOL: f64 = 1e-12;

/// Sign-change times of `g` inside one dense step, searched on `sub`
/// equal sub-intervals and refined by Brent's method.
pub fn locate_crossings(
    d: &DenseOutput,
    sub: usize,
    direction: Direction,
    mut g: impl FnMut(f64, &DenseOutput) -> f64,
) -> Vec<f64> {
    let mut roots = Vec::new();
    let mut t_prev = d.t0;
    let mut g_prev = g(t_prev, d);
    for k in 1..=sub {
        let t = if k == sub { d.t1() } else { d.t0 + d.h * k as f64 / sub as f64 };
        let gt = g(t, d);
        if direction.accepts(g_prev, gt) {
            let tol = EVENT_TOL * t.abs().max(1.0);
            if let Ok(r) = brent(|s| g(s, d), t_prev, t, tol, 200) {
                roots.push(r);
            }
        }
        if gt != 0.0 {
            t_prev = t;
            g_prev = gt;
        }
    }
    roots
}

/// Output of [`integrate_ode`]: accepted step points, their dense
/// extensions, and event hits.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dense: Vec<DenseOutput>,
    pub hits: Vec<EventHit>,
    pub stats: StepStats,
}

impl Trajectory {
    pub fn t_end(&self) -> f64 {
        *self.t.last().unwrap()
    }

    pub fn y_end(&self) -> &[f64] {
        self.y.last().unwrap()
    }

    fn segment(&self, t: f64) -> Option<&DenseOutput> {
        if self.dense.is_empty() || t < self.t[0] || t > self.t_end() {
            return None;
        }
        let idx = self.dense.partition_point(|d| d.t1() < t);
        self.dense.get(idx.min(self.dense.len() - 1))
    }

    /// State at time t via the dense extension.
    pub fn eval(&self, t: f64) -> Option<Vec<f64>> {
        self.segment(t).map(|d| d.eval(t))
    }

    pub fn eval_component(&self, i: usize, t: f64) -> Option<f64> {
        self.segment(t).map(|d| d.eval_component(i, t))
    }
}

/// Integrate y' = f(t, y) over `t_span`, recording every accepted step and
/// locating events on the dense output. Stops at the first terminal event.
pub fn integrate_ode<F: OdeRhs + ?Sized>(
    f: &F,
    y0: &[f64],
    t_span: (f64, f64),
    cfg: StepperConfig,
    events: &[Event<'_>],
) -> Result<Trajectory> {
    let (t0, t1) = t_span;
    if !(t1 > t0) {
        return Err(Error::InvalidParameter(format!("need t1 > t0, got [{t0}, {t1}]")));
    }
    let mut st = Dop853::new(f, t0, y0, cfg)?;
    let mut out = Trajectory {
        t: vec![t0],
        y: vec![y0.to_vec()],
        dense: Vec::new(),
        hits: Vec::new(),
        stats: StepStats::default(),
    };
    'outer: while st.t() < t1 {
        st.step(t1)?;
        let d = st.dense().clone();
        let mut stop_at = None;
        for (ei, ev) in events.iter().enumerate() {
            let roots = locate_crossings(&d, 4, ev.direction, |t, d| (ev.g)(t, &d.eval(t)));
            for r in roots {
                out.hits.push(EventHit { event: ei, t: r, y: d.eval(r) });
                if ev.terminal {
                    stop_at = Some(stop_at.map_or(r, |s: f64| s.min(r)));
                }
            }
        }
        if let Some(ts) = stop_at {
            out.hits.retain(|h| h.t <= ts);
            out.hits.sort_by(|a, b| a.t.total_cmp(&b.t));
            out.t.push(ts);
            out.y.push(d.eval(ts));
            out.dense.push(d);
            break 'outer;
        }
        out.hits.sort_by(|a, b| a.t.total_cmp(&b.t));
        out.t.push(st.t());
        out.y.push(st.y().to_vec());
        out.dense.push(d);
    }
    out.stats = st.stats();
    Ok(out)
}

/// Lotka-Volterra core in log variables: x' = ε - e^y, y' = e^x - ε.
pub fn lv_log_rhs(eps: f64) -> impl Fn(f64, &[f64], &mut [f64]) {
    move |_t, u, du| {
        du[0] = eps - u[1].exp();
        du[1] = u[0].exp() - eps;
    }
}

/// Integrate the unperturbed system in (x, y) = (log v, log w).
pub fn integrate_log_lv(
    eps: f64,
    x0: f64,
    y0: f64,
    t_span: (f64, f64),
    cfg: StepperConfig,
    events: &[Event<'_>],
) -> Result<Trajectory> {
    let f = lv_log_rhs(eps);
    integrate_ode(&f, &[x0, y0], t_span, cfg, events)
}

/// Full system with v, w in log variables; the state vector is
/// (log v, log w, c_1, ..., c_N).
pub struct FullSystem {
    pub eps: f64,
}

impl OdeRhs for FullSystem {
    fn eval(&self, _t: f64, u: &[f64], du: &mut [f64]) {
        let v = u[0].exp();
        let w = u[1].exp();
        let (du_vw, dc) = du.split_at_mut(2);
        let (dv, dw) = bd_rhs(self.eps, v, w, &u[2..], dc);
        du_vw[0] = dv / v;
        du_vw[1] = dw / w;
    }
}

pub fn pack_state(state: &SimState) -> Result<Vec<f64>> {
    if !(state.v > 0.0 && state.w > 0.0) {
        return Err(Error::Domain("log variables need v(0), w(0) > 0".into()));
    }
    if state.c.iter().any(|&c| !(c >= 0.0)) {
        return Err(Error::Domain("cluster concentrations must be nonnegative".into()));
    }
    let mut u = Vec::with_capacity(state.c.len() + 2);
    u.push(state.v.ln());
    u.push(state.w.ln());
    u.extend_from_slice(&state.c);
    Ok(u)
}

pub fn unpack_state(t: f64, u: &[f64]) -> SimState {
    SimState { t, v: u[0].exp(), w: u[1].exp(), c: u[2..].to_vec() }
}

/// Callback view of one accepted step of the full system.
pub struct FullStep<'s, 'a> {
    stepper: &'s mut Dop853<'a, FullSystem>,
}

impl FullStep<'_, '_> {
    pub fn t_prev(&self) -> f64 {
        self.stepper.t_prev()
    }
    pub fn t(&self) -> f64 {
        self.stepper.t()
    }
    pub fn u(&self) -> &[f64] {
        self.stepper.y()
    }
    pub fn u_prev(&self) -> &[f64] {
        self.stepper.y_prev()
    }
    pub fn dense(&mut self) -> &DenseOutput {
        self.stepper.dense()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FullRunStats {
    pub steps: usize,
    pub rejected: usize,
    pub evals: usize,
    pub clamps: usize,
}

/// Integrate the full system, calling `observe` after every accepted step.
/// The observer returns `false` to stop early. Returns the final state.
///
/// Entries of c that fall in [-abs_tol, 0) after a step are clamped to
/// zero and counted; anything below -abs_tol is a scheme failure.
pub fn integrate_log_full_with<O>(
    params: &SystemParams,
    state0: &SimState,
    t_end: f64,
    cfg: StepperConfig,
    mut observe: O,
) -> Result<(SimState, FullRunStats)>
where
    O: FnMut(&mut FullStep<'_, '_>) -> Result<bool>,
{
    params.validate()?;
    if !(t_end > state0.t) {
        return Err(Error::InvalidParameter("t_end must exceed the initial time".into()));
    }
    let eps = crate::model::cluster_number(state0);
    // the chain's fastest rate is about 4ε; longer steps leave the explicit
    // stability region near equilibrium
    let cfg = StepperConfig { h_max: cfg.h_max.min(1.0 / eps), ..cfg };
    let sys = FullSystem { eps };
    let u0 = pack_state(state0)?;
    let mut st = Dop853::new(&sys, state0.t, &u0, cfg)?;
    let mut clamps = 0usize;
    let mut buf = u0.clone();
    while st.t() < t_end {
        st.step(t_end)?;
        let keep_going = observe(&mut FullStep { stepper: &mut st })?;
        let mut needs_clamp = false;
        for (j, &c) in st.y()[2..].iter().enumerate() {
            if c < 0.0 {
                if c < -cfg.abs_tol {
                    return Err(Error::NegativeConcentration { t: st.t(), index: j + 1, value: c });
                }
                needs_clamp = true;
            }
        }
        if needs_clamp {
            buf.copy_from_slice(st.y());
            for c in &mut buf[2..] {
                if *c < 0.0 {
                    *c = 0.0;
                    clamps += 1;
                }
            }
            st.reset_state(&buf);
        }
        if !keep_going {
            break;
        }
    }
    let s = st.stats();
    let stats = FullRunStats { steps: s.accepted, rejected: s.rejected, evals: s.evals, clamps };
    Ok((unpack_state(st.t(), st.y()), stats))
}

/// Integrate the full system and sample the state at `n_samples` equally
/// spaced times (including both ends).
pub fn integrate_log_full(
    params: &SystemParams,
    state0: &SimState,
    t_end: f64,
    cfg: StepperConfig,
    n_samples: usize,
) -> Result<(Vec<SimState>, FullRunStats)> {
    let n_samples = n_samples.max(2);
    let t0 = state0.t;
    let dt = (t_end - t0) / (n_samples - 1) as f64;
    let mut samples = vec![state0.clone()];
    let mut next = 1usize;
    let (last, stats) = integrate_log_full_with(params, state0, t_end, cfg, |step| {
        while next < n_samples - 1 && t0 + next as f64 * dt <= step.t() {
            let ts = t0 + next as f64 * dt;
            let u = step.dense().eval(ts);
            samples.push(unpack_state(ts, &u));
            next += 1;
        }
        Ok(true)
    })?;
    samples.push(last);
    Ok((samples, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{cluster_number, lv_energy_log, steady_state_truncated, total_mass};

    #[test]
    fn exponential_decay() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let cfg = StepperConfig::with_tolerances(1e-12, 1e-10);
        let tr = integrate_ode(&f, &[1.0], (0.0, 1.0), cfg, &[]).unwrap();
        assert!((tr.y_end()[0] - (-1f64).exp()).abs() < 1e-10);
        assert_eq!(tr.t_end(), 1.0);
    }

    #[test]
    fn harmonic_oscillator_returns_after_two_pi() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[1];
            dy[1] = y[0];
        };
        let tr = integrate_ode(&f, &[1.0, 0.0], (0.0, 2.0 * std::f64::consts::PI), StepperConfig::default(), &[])
            .unwrap();
        let y = tr.y_end();
        assert!((y[0] - 1.0).abs() < 1e-8 && y[1].abs() < 1e-8);
    }

    #[test]
    fn dense_output_is_accurate_between_steps() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[1];
            dy[1] = y[0];
        };
        let tr = integrate_ode(&f, &[1.0, 0.0], (0.0, 10.0), StepperConfig::default(), &[]).unwrap();
        for k in 0..997 {
            let t = 0.01 * k as f64 + 0.0037;
            let y = tr.eval(t).unwrap();
            assert!((y[0] - t.cos()).abs() < 1e-9, "t = {t}");
            assert!((y[1] - t.sin()).abs() < 1e-9);
        }
    }

    #[test]
    fn observed_order_is_high() {
        // error of y' = y cos t at t = 5 against exp(sin 5) over a tolerance ladder
        let f = |t: f64, y: &[f64], dy: &mut [f64]| dy[0] = y[0] * t.cos();
        let exact = 5f64.sin().exp();
        let mut pts = Vec::new();
        for k in 0..4 {
            let tol = 1e-6 / 10f64.powi(k);
            let tr = integrate_ode(&f, &[1.0], (0.0, 5.0), StepperConfig::with_tolerances(tol, tol), &[]).unwrap();
            let err = (tr.y_end()[0] - exact).abs();
            let evals = tr.stats.evals as f64;
            pts.push((evals.ln(), err.ln()));
        }
        let x: Vec<f64> = pts.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pts.iter().map(|p| p.1).collect();
        let (slope, _) = crate::numeric::linear_fit(&x, &y);
        assert!(-slope >= 7.0, "observed order {}", -slope);
    }

    #[test]
    fn events_are_found_and_stable_under_refinement() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[1];
            dy[1] = y[0];
        };
        let mut prev = None;
        for &tol in &[1e-8, 1e-10, 1e-12] {
            let ev = [Event::new("x=0", Direction::Falling, |_t, y| y[0])];
            let tr =
                integrate_ode(&f, &[1.0, 0.0], (0.0, 4.0), StepperConfig::with_tolerances(tol, tol), &ev).unwrap();
            assert_eq!(tr.hits.len(), 1);
            let t = tr.hits[0].t;
            assert!((t - std::f64::consts::FRAC_PI_2).abs() < 1e-7);
            if let Some(p) = prev {
                let d: f64 = t - p;
                assert!(d.abs() < 1e-7);
            }
            prev = Some(t);
        }
    }

    #[test]
    fn terminal_event_stops_integration() {
        let f = |_t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0;
        let ev = [Event::new("y=2.5", Direction::Rising, |_t, y| y[0] - 2.5).terminal()];
        let tr = integrate_ode(&f, &[0.0], (0.0, 10.0), StepperConfig::default(), &ev).unwrap();
        assert!((tr.t_end() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn underflow_is_reported() {
        let f = |t: f64, _y: &[f64], dy: &mut [f64]| dy[0] = 1.0 / (1.0 - t);
        let cfg = StepperConfig { h_min: 1e-9, ..StepperConfig::default() };
        match integrate_ode(&f, &[0.0], (0.0, 2.0), cfg, &[]) {
            Err(Error::StepUnderflow { .. }) | Err(Error::NonFinite { .. }) => {}
            other => panic!("expected failure, got {:?}", other.map(|t| t.t_end())),
        }
    }

    #[test]
    fn budget_is_enforced() {
        let f = |_t: f64, y: &[f64], dy: &mut [f64]| dy[0] = -y[0];
        let cfg = StepperConfig { max_steps: 3, ..StepperConfig::default() };
        assert!(matches!(
            integrate_ode(&f, &[1.0], (0.0, 100.0), cfg, &[]),
            Err(Error::StepBudget { .. })
        ));
    }

    #[test]
    fn log_lv_constant_at_center() {
        let eps: f64 = 0.02;
        let tr = integrate_log_lv(eps, eps.ln(), eps.ln(), (0.0, 100.0), StepperConfig::default(), &[]).unwrap();
        assert!((tr.y_end()[0] - eps.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_lv_energy_is_conserved() {
        let eps: f64 = 0.02;
        let x0 = 0.5f64.ln();
        let e0 = lv_energy_log(x0, x0, eps);
        let tr = integrate_log_lv(eps, x0, x0, (0.0, 3000.0), StepperConfig::default(), &[]).unwrap();
        let worst = tr.y.iter().map(|u| (lv_energy_log(u[0], u[1], eps) / e0 - 1.0).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-9, "energy drift {worst}");
    }

    #[test]
    fn log_lv_matches_untransformed_system() {
        let eps = 0.02;
        let raw = move |_t: f64, y: &[f64], dy: &mut [f64]| {
            dy[0] = -y[0] * y[1] + eps * y[0];
            dy[1] = y[0] * y[1] - eps * y[1];
        };
        let t_end = 400.0;
        let a = integrate_ode(&raw, &[0.5, 0.5], (0.0, t_end), StepperConfig::default(), &[]).unwrap();
        let b = integrate_log_lv(eps, 0.5f64.ln(), 0.5f64.ln(), (0.0, t_end), StepperConfig::default(), &[])
            .unwrap();
        for k in 0..=400 {
            let t = k as f64;
            let ya = a.eval(t).unwrap();
            let yb = b.eval(t).unwrap();
            for i in 0..2 {
                let exact = yb[i].exp();
                // the raw system only resolves values above its absolute tolerance
                if exact > 1e-6 {
                    assert!((ya[i] / exact - 1.0).abs() < 1e-6, "t = {t}");
                } else {
                    assert!((ya[i] - exact).abs() < 1e-9, "t = {t}");
                }
            }
        }
    }

    #[test]
    fn log_lv_reaches_tiny_values_without_sign_loss() {
        let eps = 0.01;
        let x0 = crate::lv::start_from_energy(1.0, eps).unwrap().ln();
        let tr = integrate_log_lv(eps, x0, x0, (0.0, 12_000.0), StepperConfig::default(), &[]).unwrap();
        let min_log = tr.y.iter().map(|u| u[0].min(u[1])).fold(f64::INFINITY, f64::min);
        assert!(min_log < (1e-20f64).ln());
    }

    #[test]
    fn full_system_at_truncated_equilibrium_stays_put() {
        let p = SystemParams::new(0.02, 200);
        let ss = steady_state_truncated(&p).unwrap();
        let s0 = SimState { t: 0.0, v: ss.v_bar, w: ss.w_bar, c: ss.c_bar.clone() };
        let (samples, _) = integrate_log_full(&p, &s0, 10.0 / p.epsilon, StepperConfig::default(), 11).unwrap();
        for s in &samples {
            assert!((s.v - s0.v).abs() < 1e-10 && (s.w - s0.w).abs() < 1e-10, "{} {}", s.v - s0.v, s.w - s0.w);
            let dev = s.c.iter().zip(&s0.c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-10, "{dev}");
        }
    }

    #[test]
    fn full_system_conserves_number_and_mass() {
        let p = SystemParams::new(0.02, 150);
        let mut c: Vec<f64> = (1..=150).map(|j| (-((j as f64 - 10.0).powi(2)) / 20.0).exp()).collect();
        let s: f64 = c.iter().sum();
        c.iter_mut().for_each(|x| *x *= 0.02 / s);
        let m1: f64 = c.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x).sum();
        let vw = (1.0 - m1) / 2.0;
        let s0 = SimState { t: 0.0, v: vw, w: vw, c };
        let (samples, _) = integrate_log_full(&p, &s0, 500.0, StepperConfig::default(), 6).unwrap();
        let (n0, m0) = (cluster_number(&s0), total_mass(&s0));
        for s in &samples {
            assert!((cluster_number(s) / n0 - 1.0).abs() < 1e-12);
            assert!((total_mass(s) / m0 - 1.0).abs() < 1e-9);
            assert!(s.v > 0.0 && s.w > 0.0);
        }
    }
}
