//! One runner per command. Each computes everything first and only then
//! writes, so a failed run leaves no data files behind.

use crate::config::*;
use crate::output::Output;
use bimono::bdsim::{self, presets, CycleObservables, RunLimits, TrajectorySample};
use bimono::model::{lv_energy, SimState, SystemParams};
use bimono::phase34::{self, Phase3Model};
use bimono::semigroup::{self, psi_star, ClusterProfile};
use bimono::{blayer, lv, pde, stability};
use serde_json::{json, Value};
use std::f64::consts::PI;

pub enum Status {
    Ok,
    /// An invariant failed; the value is the diagnostic document.
    Breach(Value),
}

#[derive(Debug)]
pub enum RunError {
    Model(bimono::Error),
    Io(std::io::Error),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Model(e) => write!(f, "{e}"),
            RunError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl From<bimono::Error> for RunError {
    fn from(e: bimono::Error) -> Self {
        RunError::Model(e)
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Io(e)
    }
}

type CmdResult = Result<Status, RunError>;

/// A parsed and validated command.
pub enum Job {
    Simulate(SimulateConfig),
    Lv(LvConfig),
    Pde(PdeConfig),
    Semigroup(SemigroupConfig),
    Blayer(BlayerConfig),
    Phase3 { cfg: Phase3Config, spectral_only: bool },
    Phase4(Phase4Config),
    Stability(StabilityConfig),
    Sweep { cfg: SweepConfig, members: Vec<(f64, Job)> },
}

impl Job {
    pub fn parse(command: &str, v: Value, spectral_only: bool) -> Result<Job, String> {
        Ok(match command {
            "simulate" => Job::Simulate(parse(v)?),
            "lv" => Job::Lv(parse(v)?),
            "pde" => Job::Pde(parse(v)?),
            "semigroup" => Job::Semigroup(parse(v)?),
            "blayer" => Job::Blayer(parse(v)?),
            "phase3" => Job::Phase3 { cfg: parse(v)?, spectral_only },
            "phase4" => Job::Phase4(parse(v)?),
            "stability" => Job::Stability(parse(v)?),
            "sweep" => {
                let cfg: SweepConfig = parse(v)?;
                let members = cfg
                    .epsilons
                    .iter()
                    .map(|&eps| {
                        Job::parse(&cfg.command, cfg.member(eps), false)
                            .map(|j| (eps, j))
                            .map_err(|e| format!("sweep member epsilon = {eps}: {e}"))
                    })
                    .collect::<Result<_, _>>()?;
                Job::Sweep { cfg, members }
            }
            other => return Err(format!("unknown command '{other}'")),
        })
    }

    pub fn run(&self, out: &mut Output) -> CmdResult {
        match self {
            Job::Simulate(c) => simulate(c, out),
            Job::Lv(c) => lv_cycle(c, out),
            Job::Pde(c) => pde_run(c, out),
            Job::Semigroup(c) => semigroup_run(c, out),
            Job::Blayer(c) => blayer_run(c, out),
            Job::Phase3 { cfg, spectral_only } => phase3_run(cfg, *spectral_only, out),
            Job::Phase4(c) => phase4_run(c, out),
            Job::Stability(c) => stability_run(c, out),
            Job::Sweep { cfg, members } => sweep(cfg, members, out),
        }
    }
}

fn initial_state(c: &SimulateConfig) -> bimono::Result<(SystemParams, SimState)> {
    let (eps, n) = (c.epsilon, c.n_max);
    let (mut p, s) = match c.initial {
        Initial::SelfSimilar => presets::self_similar(eps, n)?,
        Initial::PaperPhase1 => presets::paper_phase1(n)?,
        Initial::Dirac => presets::dirac(eps, c.dirac_a, n)?,
        Initial::SmallClusters => presets::small_clusters(eps, n)?,
        Initial::Steady => presets::steady(eps, n)?,
    };
    p.abs_tol = c.abs_tol;
    p.rel_tol = c.rel_tol;
    Ok((p, s))
}

fn header(h: &str) -> Vec<&str> {
    h.split(',').collect()
}

fn simulate(c: &SimulateConfig, out: &mut Output) -> CmdResult {
    let (params, state) = initial_state(c)?;
    let limits = RunLimits { max_cycles: c.max_cycles, t_end: c.t_end, sample_dt: c.sample_dt };
    let run = bdsim::run_full(&params, &state, limits)?;
    let eps = params.epsilon;
    let phases = if run.cycles.len() >= 3 {
        Some(bdsim::classify_phases(&run.cycles, eps, bdsim::PhaseThresholds::default())?)
    } else {
        None
    };
    let first_cycle = bdsim::first_cycle_stages(&params, &state, c.t_end).ok();
    let f = &run.final_state;
    let summary = json!({
        "config": c,
        "epsilon": eps,
        "total_mass": params.total_mass,
        "n_max": params.n_max,
        "cycles": run.cycles.len(),
        "steps": run.steps,
        "rejected_steps": run.rejected,
        "clamped_entries": run.clamps,
        "conservation": run.conservation,
        "conservation_holds": run.conservation.holds(),
        "final": {"t": f.t, "v": f.v, "w": f.w, "energy": lv_energy(f.v, f.w, eps).ok(), "mean_size": f.mean_size()},
        "first_cycle_stages": first_cycle,
        "phases": phases,
    });
    let samples: Vec<Vec<f64>> = run.samples.iter().map(TrajectorySample::csv_row).collect();
    let cycles: Vec<Vec<f64>> = run.cycles.iter().map(CycleObservables::csv_row).collect();
    out.table("trajectory", &header(TrajectorySample::csv_header()), &samples)?;
    out.table("cycles", &header(CycleObservables::csv_header()), &cycles)?;
    out.json("summary", &summary)?;
    if run.conservation.holds() {
        Ok(Status::Ok)
    } else {
        Ok(Status::Breach(json!({"error": "conservation invariant violated", "conservation": run.conservation})))
    }
}

fn lv_cycle(c: &LvConfig, out: &mut Output) -> CmdResult {
    let cycle = lv::solve_cycle_full(c.energy, c.epsilon, Default::default())?;
    let shape = lv::displacement_and_diffusion(&cycle);
    let asymptotics = lv::check_stage_asymptotics(&c.asymptotics)?;
    let r = &cycle.record;
    let mut record = serde_json::to_value(r).map_err(std::io::Error::from)?;
    record.as_object_mut().unwrap().remove("y_samples");
    let y: Vec<Vec<f64>> = r.y_samples.iter().map(|&(t, y)| vec![t, y]).collect();
    let rows: Vec<Vec<f64>> = asymptotics
        .iter()
        .map(|a| {
            vec![a.epsilon, a.r_t1, a.r_t12, a.r_t2, a.r_t3, a.r_t4, a.r_t5, a.r_v_t2, a.r_period, a.mean_v, a.mean_w]
        })
        .collect();
    out.table("displacement", &["t", "y"], &y)?;
    if !rows.is_empty() {
        out.table(
            "asymptotics",
            &["epsilon", "r_t1", "r_t12", "r_t2", "r_t3", "r_t4", "r_t5", "r_v_t2", "r_period", "mean_v", "mean_w"],
            &rows,
        )?;
    }
    out.json("summary", &json!({"config": c, "cycle": record, "shape": shape}))?;
    if r.energy_drift < 1e-8 {
        Ok(Status::Ok)
    } else {
        Ok(Status::Breach(json!({"error": "energy drift over the cycle", "energy_drift": r.energy_drift})))
    }
}

fn pde_run(c: &PdeConfig, out: &mut Output) -> CmdResult {
    let grid = pde::Grid1D::new(c.l_domain, c.dj, c.dt)?;
    let init = pde::PdeState::half_gaussian(&grid, c.sigma, c.mu);
    let eps = init.epsilon(&grid);
    let tr = pde::lv_signal(eps, c.v0, c.w0, c.t_end)?;
    let run = pde::run_coupled(&init, pde::signal_from(&tr), c.t_end, &grid, &c.snapshot_times)?;
    let nodes = grid.nodes();
    let mut rows = Vec::new();
    for s in run.snapshots.iter().chain([&run.final_state]) {
        rows.extend(nodes.iter().zip(&s.c).map(|(&j, &v)| vec![s.t, j, v]));
    }
    let moments: Vec<Value> = run
        .snapshots
        .iter()
        .chain([&run.final_state])
        .map(|s| json!({"t": s.t, "epsilon": s.epsilon(&grid), "centroid": s.centroid(&grid), "variance": s.variance(&grid)}))
        .collect();
    out.table("profiles", &["t", "j", "c"], &rows)?;
    out.json(
        "summary",
        &json!({
            "config": c,
            "epsilon": eps,
            "steps": run.steps,
            "max_conservation_error": run.max_conservation_error,
            "max_undershoot": run.max_undershoot,
            "total_mass_growth": run.total_mass_growth,
            "cfl_warnings": run.cfl_warnings,
            "moments": moments,
        }),
    )?;
    if run.max_conservation_error < 1e-12 {
        Ok(Status::Ok)
    } else {
        Ok(Status::Breach(json!({"error": "cluster number not conserved", "max_conservation_error": run.max_conservation_error})))
    }
}

fn semigroup_run(c: &SemigroupConfig, out: &mut Output) -> CmdResult {
    let start = match c.start {
        ProfileStart::Dirac => ClusterProfile::dirac(1.0),
        ProfileStart::HalfGaussian => ClusterProfile::half_gaussian(1.0),
    };
    let (p, iterations) = semigroup::iterate_to_fixed_point(&start, c.sigma2, c.tol, c.max_iter)?;
    let step = semigroup::iterate_profile(&p, c.sigma2)?;
    let k = c.envelope_points;
    let grid: Vec<f64> = (1..=k).map(|i| c.envelope_s_max * i as f64 / k as f64).collect();
    let env = semigroup::envelope_solve(&grid, c.envelope_a)?;
    let xs: Vec<f64> = (0..4000).map(|i| i as f64 * 0.002).collect();
    let profile: Vec<Vec<f64>> = p.csv_rows().map(|(x, y)| vec![x, y, psi_star(x)]).collect();
    let envelope: Vec<Vec<f64>> = env.iter().map(|s| vec![s.s, s.ell, s.e]).collect();
    let l1 = p.l1_to_fixed_point();
    out.table("profile", &["x", "psi", "psi_star"], &profile)?;
    out.table("envelope", &["s", "ell", "e"], &envelope)?;
    out.json(
        "summary",
        &json!({
            "config": c,
            "iterations": iterations,
            "point_mass": p.m,
            "point_mass_over_sigma": p.m / c.sigma2.sqrt(),
            "length_ratio_per_step": step.ratio,
            "l1_smooth_to_psi_star": l1,
            "l1_total_to_psi_star": l1 + p.m,
            "closed_form_residual": semigroup::psi_equation_residual(&xs),
        }),
    )?;
    Ok(Status::Ok)
}

fn blayer_run(c: &BlayerConfig, out: &mut Output) -> CmdResult {
    let l = blayer::solve_stationary(c.xi_max, c.nodes, c.tol, c.max_iter)?;
    let (smooth, dirac) = l.a_parts();
    let rows: Vec<Vec<f64>> = l.xi.iter().zip(&l.u).map(|(&x, &u)| vec![x, u]).collect();
    out.table("layer", &["xi", "u"], &rows)?;
    out.json(
        "summary",
        &json!({
            "config": c,
            "m": l.m,
            "a": smooth + dirac,
            "a_smooth": smooth,
            "a_point_mass": dirac,
            "far_field_target": blayer::FAR_FIELD,
            "u_at_xi_max": l.u.last(),
            "far_field_error": l.far_field_error(),
            "residual_u": l.residual_u,
            "residual_m": l.residual_m,
            "iterations": l.iterations,
            "contraction_ratio_10": l.contraction_ratio(10),
        }),
    )?;
    Ok(Status::Ok)
}

fn spectral_json(eps: f64) -> Value {
    let s = phase34::spectral_constants();
    let (r1, r2) = s.residuals();
    json!({
        "r_minus": [s.r_minus.re, s.r_minus.im],
        "r_minus_abs": s.r_minus.norm(),
        "k0": [s.k0.re, s.k0.im],
        "re_one_plus_i_k0": s.re_factor,
        "a": s.a,
        "a_quoted": s.a_quoted,
        "a_eps": s.a * eps,
        "residuals": [r1, r2],
    })
}

fn phase3_run(c: &Phase3Config, spectral_only: bool, out: &mut Output) -> CmdResult {
    if spectral_only {
        out.json("spectral", &spectral_json(c.epsilon))?;
        return Ok(Status::Ok);
    }
    let model = match c.model {
        Model::Reduced => Phase3Model::Reduced,
        Model::Full => Phase3Model::Full,
    };
    let run = phase34::run_phase3_cycle(c.e_tilde, c.epsilon, None, c.n_cycles, model)?;
    let rows: Vec<Vec<f64>> =
        run.cycles.iter().map(|k| vec![k.n as f64, k.tau_start, k.period, k.e_tilde, k.decrement]).collect();
    let skip = (run.cycles.len() / 6).min(5);
    out.table("cycles", &["n", "tau_start", "period", "e_tilde", "decrement"], &rows)?;
    out.json(
        "summary",
        &json!({
            "config": c,
            "e_tilde_final": run.e_tilde_final,
            "log_decay_per_cycle": run.log_decay_per_cycle(skip),
            "mean_relative_decrement": run.mean_relative_decrement(skip),
            "spectral": spectral_json(c.epsilon),
        }),
    )?;
    Ok(Status::Ok)
}

fn phase4_run(c: &Phase4Config, out: &mut Output) -> CmdResult {
    let cfg = phase34::Phase4Config { x_max: c.x_max, h: c.h, dt: c.dt };
    let run = match c.initial {
        Phase4Start::Psi => phase34::run_phase4(psi_star, c.tau_end, cfg, c.record_every)?,
        Phase4Start::Exponential => phase34::run_phase4(|x| (-x).exp(), c.tau_end, cfg, c.record_every)?,
    };
    let hist: Vec<Vec<f64>> =
        run.history.iter().map(|s| vec![s.tau, s.boundary, s.mass, s.first_moment, s.l1_to_exp]).collect();
    let profile: Vec<Vec<f64>> = run.x.iter().zip(&run.c).map(|(&x, &v)| vec![x, v, (-x).exp()]).collect();
    let first = run.history.first().unwrap();
    let last = run.history.last().unwrap();
    let mass_dev = (last.mass - first.mass).abs();
    out.table("history", &["tau", "boundary", "mass", "first_moment", "l1_to_exp"], &hist)?;
    out.table("profile", &["x", "c", "exp_minus_x"], &profile)?;
    out.json(
        "summary",
        &json!({"config": c, "final": last, "mass_deviation": mass_dev, "max_mass_step": run.max_mass_step}),
    )?;
    if mass_dev < 1e-8 {
        Ok(Status::Ok)
    } else {
        Ok(Status::Breach(json!({"error": "mass not conserved", "mass_deviation": mass_dev})))
    }
}

fn stability_run(c: &StabilityConfig, out: &mut Output) -> CmdResult {
    let mode = stability::oscillatory_mode(c.profile_len)?;
    let k = c.band_points;
    let betas: Vec<f64> = (0..k).map(|i| PI * i as f64 / (k - 1) as f64).collect();
    let band = stability::continuous_spectrum(&betas)?;
    let truncated = if c.n_max > 0 { Some(stability::truncated_spectrum(c.epsilon, c.n_max)?) } else { None };
    let damping = if c.delta > 0.0 { Some(stability::verify_damping_timescale(c.epsilon, c.delta)?) } else { None };
    let band_rows: Vec<Vec<f64>> = band.iter().map(|b| vec![b.beta, b.lambda, b.residual, b.boundary_residual]).collect();
    let profile: Vec<Vec<f64>> =
        mode.eigvec_profile.iter().enumerate().map(|(j, z)| vec![(j + 1) as f64, z.re, z.im]).collect();
    out.table("band", &["beta", "lambda", "residual", "boundary_residual"], &band_rows)?;
    out.table("eigenvector", &["j", "re", "im"], &profile)?;
    let mut damping_summary = Value::Null;
    if let Some(d) = &damping {
        let env: Vec<Vec<f64>> = d.envelope.iter().map(|&(t, a)| vec![t, a]).collect();
        out.table("damping_envelope", &["t", "amplitude"], &env)?;
        let mut v = serde_json::to_value(d).map_err(std::io::Error::from)?;
        v.as_object_mut().unwrap().remove("envelope");
        damping_summary = v;
    }
    let cplx = |z: num_complex::Complex64| json!([z.re, z.im]);
    out.json(
        "summary",
        &json!({
            "config": c,
            "lambda0": [cplx(mode.lambda0_pair[0]), cplx(mode.lambda0_pair[1])],
            "r": cplx(mode.r),
            "lambda1": cplx(mode.lambda1),
            "re_lambda1_negative": mode.lambda1.re < 0.0,
            "band_range": [band.iter().map(|b| b.lambda).fold(f64::INFINITY, f64::min), band.iter().map(|b| b.lambda).fold(f64::NEG_INFINITY, f64::max)],
            "truncated": truncated.map(|t| json!({
                "epsilon": t.epsilon,
                "theta": t.theta,
                "n_max": t.n_max,
                "max_real": t.max_real,
                "oscillatory": cplx(t.oscillatory),
                "predicted": cplx(t.predicted),
            })),
            "damping": damping_summary,
        }),
    )?;
    Ok(Status::Ok)
}

fn sweep(cfg: &SweepConfig, members: &[(f64, Job)], out: &mut Output) -> CmdResult {
    let workers = if cfg.workers > 0 {
        cfg.workers
    } else {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    }
    .min(members.len());
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut results: Vec<(usize, Value)> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                s.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        let Some((eps, job)) = members.get(i) else { break };
                        let mut sub = out.subdir(&format!("eps-{eps}"));
                        let status = match job.run(&mut sub) {
                            Ok(Status::Ok) => json!({"epsilon": eps, "status": "ok"}),
                            Ok(Status::Breach(d)) => {
                                let _ = sub.json("diagnostic", &d);
                                json!({"epsilon": eps, "status": "invariant-breach", "diagnostic": d})
                            }
                            Err(e) => {
                                let d = json!({"error": e.to_string()});
                                let _ = sub.json("diagnostic", &d);
                                json!({"epsilon": eps, "status": "error", "diagnostic": d})
                            }
                        };
                        done.push((i, status));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.sort_by_key(|r| r.0);
    let all_ok = results.iter().all(|r| r.1["status"] == "ok");
    let members: Vec<Value> = results.into_iter().map(|r| r.1).collect();
    let summary = json!({"command": cfg.command, "workers": workers, "members": members});
    out.json("sweep", &summary)?;
    if all_ok {
        Ok(Status::Ok)
    } else {
        Ok(Status::Breach(json!({"error": "one or more sweep members failed", "members": members})))
    }
}
