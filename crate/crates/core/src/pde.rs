//! Continuum limit ∂c/∂t + Ṽ ∂c/∂j = (d/2) ∂²c/∂j² with Ṽ = w − v and
//! d = w + v, discretized by a backward-Euler centred scheme whose boundary
//! rows conserve Σc exactly.

use crate::error::{Error, Result};
use crate::integrate::{integrate_log_lv, StepperConfig, Trajectory};
use crate::numeric::{solve_tridiagonal, KahanSum};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub l_domain: f64,
    pub dj: f64,
    pub n_cells: usize,
    pub dt: f64,
}

impl Grid1D {
    pub fn new(l_domain: f64, dj: f64, dt: f64) -> Result<Self> {
        if !(l_domain > 0.0 && dj > 0.0 && dt > 0.0) {
            return Err(Error::InvalidParameter("grid extents and steps must be positive".into()));
        }
        let n_cells = (l_domain / dj).round() as usize;
        if n_cells < 4 || ((n_cells as f64) * dj - l_domain).abs() > 1e-9 * l_domain {
            return Err(Error::InvalidParameter(format!("L = {l_domain} is not a multiple of dj = {dj}")));
        }
        Ok(Self { l_domain, dj, n_cells, dt })
    }

    /// Grid of the published run: L = 250, Δj = 0.5, Δt = 0.05.
    pub fn reference() -> Self {
        Self { l_domain: 250.0, dj: 0.5, n_cells: 500, dt: 0.05 }
    }

    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dj
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_cells).map(|k| self.node(k)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeState {
    pub t: f64,
    /// c_k at j_k = kΔj, k = 0..=N.
    pub c: Vec<f64>,
}

impl PdeState {
    pub fn from_fn(grid: &Grid1D, f: impl Fn(f64) -> f64) -> Self {
        Self { t: 0.0, c: grid.nodes().into_iter().map(f).collect() }
    }

    /// μ√(2/(πσ)) e^{−j²/(2σ)}
    pub fn half_gaussian(grid: &Grid1D, sigma: f64, mu: f64) -> Self {
        let amp = mu * (2.0 / (PI * sigma)).sqrt();
        Self::from_fn(grid, |j| amp * (-j * j / (2.0 * sigma)).exp())
    }

    /// Δj Σ_{k=0}^N c_k
    pub fn epsilon(&self, grid: &Grid1D) -> f64 {
        let mut acc = KahanSum::new();
        self.c.iter().for_each(|&x| acc.add(x));
        grid.dj * acc.value()
    }

    /// Δj Σ j_k c_k
    pub fn first_moment(&self, grid: &Grid1D) -> f64 {
        let mut acc = KahanSum::new();
        self.c.iter().enumerate().for_each(|(k, &x)| acc.add(grid.node(k) * x));
        grid.dj * acc.value()
    }

    pub fn centroid(&self, grid: &Grid1D) -> f64 {
        self.first_moment(grid) / self.epsilon(grid)
    }

    pub fn variance(&self, grid: &Grid1D) -> f64 {
        let m = self.centroid(grid);
        let mut acc = KahanSum::new();
        self.c.iter().enumerate().for_each(|(k, &x)| acc.add((grid.node(k) - m).powi(2) * x));
        grid.dj * acc.value() / self.epsilon(grid)
    }

    pub fn min_value(&self) -> f64 {
        self.c.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub a: f64,
    pub b: f64,
    /// |Σc^{n+1} − Σc^n| / Σc^n
    pub conservation_error: f64,
    /// ΔM − Δt Ṽ ε, the first-moment change not explained by transport.
    pub first_moment_increment: f64,
    pub predicted_increment: f64,
    /// max(0, −min c)
    pub undershoot: f64,
}

/// Δt (d − ΔjṼ)/2 · c₀^{n+1}
pub fn mass_growth_per_step(c0_next: f64, v_next: f64, w_next: f64, grid: &Grid1D) -> f64 {
    let vt = w_next - v_next;
    let d = w_next + v_next;
    grid.dt * 0.5 * (d - grid.dj * vt) * c0_next
}

/// One backward-Euler step with coefficients taken at the new time level.
pub fn step_implicit(state: &PdeState, v_next: f64, w_next: f64, grid: &Grid1D) -> Result<(PdeState, StepDiagnostics)> {
    if !(v_next >= 0.0 && w_next >= 0.0) {
        return Err(Error::Domain(format!("monomer signal must be nonnegative (v = {v_next}, w = {w_next})")));
    }
    let n = grid.n_cells + 1;
    if state.c.len() != n {
        return Err(Error::InvalidParameter(format!("state has {} nodes, grid has {n}", state.c.len())));
    }
    let vt = w_next - v_next;
    let d = w_next + v_next;
    let a = grid.dt * vt / (2.0 * grid.dj);
    let b = grid.dt * d / (2.0 * grid.dj * grid.dj);
    let mut sub = vec![-(a + b); n];
    let mut diag = vec![1.0 + 2.0 * b; n];
    let mut sup = vec![a - b; n];
    sub[0] = 0.0;
    diag[0] = 1.0 + a + b;
    sup[0] = a - b;
    sub[n - 1] = -(a + b);
    diag[n - 1] = 1.0 - a + b;
    sup[n - 1] = 0.0;
    let c = solve_tridiagonal(&sub, &diag, &sup, &state.c)?;
    let next = PdeState { t: state.t + grid.dt, c };
    let eps0 = state.epsilon(grid);
    let eps1 = next.epsilon(grid);
    let diag = StepDiagnostics {
        a,
        b,
        conservation_error: if eps0 != 0.0 { (eps1 - eps0).abs() / eps0.abs() } else { eps1.abs() },
        first_moment_increment: next.first_moment(grid) - state.first_moment(grid) - grid.dt * vt * eps1,
        predicted_increment: mass_growth_per_step(next.c[0], v_next, w_next, grid),
        undershoot: (-next.min_value()).max(0.0),
    };
    Ok((next, diag))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdeRun {
    pub snapshots: Vec<PdeState>,
    pub final_state: PdeState,
    pub max_conservation_error: f64,
    pub max_undershoot: f64,
    pub total_mass_growth: f64,
    /// Steps with |a| > 1 (an accuracy concern only for the implicit scheme).
    pub cfl_warnings: usize,
    pub steps: usize,
}

/// March the profile to `t_end` with (v, w) = `signal(t)`, recording the
/// states closest to each time in `snapshot_times`.
pub fn run_coupled(
    init: &PdeState,
    signal: impl Fn(f64) -> (f64, f64),
    t_end: f64,
    grid: &Grid1D,
    snapshot_times: &[f64],
) -> Result<PdeRun> {
    let steps = ((t_end - init.t) / grid.dt).round().max(0.0) as usize;
    let mut state = init.clone();
    let mut run = PdeRun {
        snapshots: Vec::new(),
        final_state: init.clone(),
        max_conservation_error: 0.0,
        max_undershoot: 0.0,
        total_mass_growth: 0.0,
        cfl_warnings: 0,
        steps,
    };
    let mut pending: Vec<f64> = snapshot_times.to_vec();
    pending.sort_by(f64::total_cmp);
    let mut pending = pending.into_iter().peekable();
    while pending.next_if(|&t| t <= state.t + 0.5 * grid.dt).is_some() {
        run.snapshots.push(state.clone());
    }
    for k in 1..=steps {
        let t = init.t + k as f64 * grid.dt;
        let (v, w) = signal(t);
        let (next, diag) = step_implicit(&state, v, w, grid)?;
        run.max_conservation_error = run.max_conservation_error.max(diag.conservation_error);
        run.max_undershoot = run.max_undershoot.max(diag.undershoot);
        run.total_mass_growth += diag.predicted_increment;
        if diag.a.abs() > 1.0 {
            run.cfl_warnings += 1;
        }
        state = PdeState { t, ..next };
        while pending.next_if(|&s| s <= state.t + 0.5 * grid.dt).is_some() {
            run.snapshots.push(state.clone());
        }
    }
    run.final_state = state;
    Ok(run)
}

/// Lotka-Volterra signal in log variables covering [0, t_end].
pub fn lv_signal(eps: f64, v0: f64, w0: f64, t_end: f64) -> Result<Trajectory> {
    if !(v0 > 0.0 && w0 > 0.0) {
        return Err(Error::Domain("initial monomers must be positive".into()));
    }
    integrate_log_lv(eps, v0.ln(), w0.ln(), (0.0, t_end), StepperConfig::default(), &[])
}

/// (v, w) from a log-variable trajectory.
pub fn signal_from(tr: &Trajectory) -> impl Fn(f64) -> (f64, f64) + '_ {
    move |t| {
        let u = tr.eval(t.min(tr.t_end())).unwrap_or_else(|| tr.y_end().to_vec());
        (u[0].exp(), u[1].exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub dj: f64,
    pub dt: f64,
    pub max_error: f64,
    /// log₂ of the error ratio to the previous level.
    pub observed_order: Option<f64>,
}

/// Heat equation ∂c/∂t = ∂²c/∂j² (d = 2, Ṽ = 0) for a Gaussian far from the
/// boundaries against its exact solution; Δj halves and Δt quarters per level.
pub fn heat_refinement_ladder(levels: usize) -> Result<Vec<LadderLevel>> {
    let (centre, s0, t_end, l) = (50.0, 4.0, 2.0, 100.0);
    let exact = |j: f64, t: f64| {
        let var = s0 * s0 + 2.0 * t;
        (-(j - centre).powi(2) / (2.0 * var)).exp() / (2.0 * PI * var).sqrt()
    };
    let mut out: Vec<LadderLevel> = Vec::with_capacity(levels);
    for lvl in 0..levels {
        let dj = 0.5 / 2f64.powi(lvl as i32);
        let dt = 0.1 / 4f64.powi(lvl as i32);
        let grid = Grid1D::new(l, dj, dt)?;
        let init = PdeState::from_fn(&grid, |j| exact(j, 0.0));
        let run = run_coupled(&init, |_| (1.0, 1.0), t_end, &grid, &[])?;
        let max_error = run
            .final_state
            .c
            .iter()
            .enumerate()
            .map(|(k, &c)| (c - exact(grid.node(k), t_end)).abs())
            .fold(0.0, f64::max);
        let observed_order = out.last().map(|p| (p.max_error / max_error).log2());
        out.push(LadderLevel { dj, dt, max_error, observed_order });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn bump(grid: &Grid1D) -> PdeState {
        PdeState::from_fn(grid, |j| (-(j - 20.0).powi(2) / 30.0).exp() + 0.3 * (-j / 5.0).exp())
    }

    #[test]
    fn frozen_signal_is_identity() {
        let grid = Grid1D::new(50.0, 0.5, 0.1).unwrap();
        let s = bump(&grid);
        let (next, _) = step_implicit(&s, 0.0, 0.0, &grid).unwrap();
        assert_eq!(next.c, s.c);
    }

    #[test]
    fn moment_increment_matches_prediction() {
        let grid = Grid1D::new(200.0, 0.5, 0.05).unwrap();
        let mut s = bump(&grid);
        for (v, w) in [(0.1, 0.6), (0.6, 0.02), (0.3, 0.3)] {
            let (next, d) = step_implicit(&s, v, w, &grid).unwrap();
            assert!(d.conservation_error < 1e-13);
            assert!((d.first_moment_increment - d.predicted_increment).abs() < 1e-12, "{d:?}");
            assert!(d.predicted_increment > 0.0 || w - v > 0.0);
            s = next;
        }
        assert_eq!(mass_growth_per_step(0.0, 0.2, 0.4, &grid), 0.0);
    }

    #[test]
    fn heat_ladder_is_second_order() {
        let ladder = heat_refinement_ladder(3).unwrap();
        for l in &ladder[1..] {
            let p = l.observed_order.unwrap();
            assert!((p - 2.0).abs() < 0.4, "{ladder:?}");
        }
    }

    #[test]
    fn pure_translation_moves_centroid_at_drift_speed() {
        let grid = Grid1D::new(200.0, 0.125, 0.01).unwrap();
        let init = PdeState::from_fn(&grid, |j| (-(j - 50.0).powi(2) / 50.0).exp());
        let run = run_coupled(&init, |_| (0.0, 1.0), 40.0, &grid, &[]).unwrap();
        let moved = run.final_state.centroid(&grid) - init.centroid(&grid);
        assert!((moved / 40.0 - 1.0).abs() < 0.01, "{moved}");
    }

    #[test]
    fn reference_run_conserves_clusters() {
        let grid = Grid1D::reference();
        let init = PdeState::half_gaussian(&grid, 10.0, 0.02);
        let eps = init.epsilon(&grid);
        assert!((eps - 0.0212).abs() < 5e-4, "{eps}");
        let tr = lv_signal(eps, 0.6, 0.6, 2000.0).unwrap();
        let run = run_coupled(&init, signal_from(&tr), 2000.0, &grid, &[100.0, 1000.0]).unwrap();
        assert_eq!(run.snapshots.len(), 2);
        assert!((run.final_state.epsilon(&grid) - eps).abs() < 1e-10 * eps);
        assert!(run.max_conservation_error < 1e-13);
        assert!(run.total_mass_growth > 0.0);
    }

    proptest! {
        #[test]
        fn sum_is_conserved_for_any_signal(v in 0.0..2.0f64, w in 0.0..2.0f64, dt in 0.01..1.0f64) {
            let grid = Grid1D::new(40.0, 0.5, dt).unwrap();
            let s = bump(&grid);
            let (next, d) = step_implicit(&s, v, w, &grid).unwrap();
            prop_assert!(d.conservation_error < 1e-13);
            prop_assert!((next.t - dt).abs() < 1e-15);
        }
    }
}
