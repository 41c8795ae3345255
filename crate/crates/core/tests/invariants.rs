use bimono::bdsim::{presets, run_full, RunLimits};
use bimono::lv;
use bimono::model::{bd_rhs, first_moment, lv_energy};
use bimono::pde::{lv_signal, run_coupled, signal_from, Grid1D, PdeState};
use bimono::phase34::{self, Phase3Model};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rhs_conserves_number_and_mass(
        eps in 1e-3f64..0.4,
        v in 1e-4f64..2.0,
        w in 1e-4f64..2.0,
        c in prop::collection::vec(0.0f64..1.0, 2..40),
    ) {
        let mut dc = vec![0.0; c.len()];
        let (dv, dw) = bd_rhs(eps, v, w, &c, &mut dc);
        let scale = 1.0 + c.iter().sum::<f64>() * (v + w);
        prop_assert!(dc.iter().sum::<f64>().abs() < 1e-14 * scale * c.len() as f64);
        let dm = dv + dw + first_moment(&dc);
        // the monomer sinks balance the chain exactly when Σc = ε
        let expected = (w - v) * (c.iter().sum::<f64>() - eps);
        prop_assert!((dm - expected).abs() < 1e-12 * scale * (c.len() * c.len()) as f64,
            "dm = {dm}");
    }

    #[test]
    fn lv_energy_is_nonnegative_and_zero_only_at_rest(eps in 1e-3f64..0.4, a in 0.01f64..20.0, b in 0.01f64..20.0) {
        let e = lv_energy(a * eps, b * eps, eps).unwrap();
        prop_assert!(e >= 0.0);
        prop_assert!(lv_energy(eps, eps, eps).unwrap().abs() < 1e-16);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn lv_cycle_conserves_energy_and_averages_to_eps(energy in 0.05f64..2.0, eps in 0.005f64..0.05) {
        let r = lv::solve_cycle(energy, eps).unwrap();
        prop_assert!(r.energy_drift < 1e-8, "drift {}", r.energy_drift);
        prop_assert!((r.mean_v / eps - 1.0).abs() < 1e-6);
        prop_assert!((r.mean_w / eps - 1.0).abs() < 1e-6);
        prop_assert!(r.stages.t1 < r.stages.t2 && r.stages.t2 < r.stages.t3);
        prop_assert!(r.stages.t3 < r.stages.t4 && r.stages.t4 < r.stages.t5);
    }
}

#[test]
fn full_run_decreases_energy_cycle_to_cycle() {
    let (p, s) = presets::self_similar(0.05, 400).unwrap();
    let run = run_full(&p, &s, RunLimits { max_cycles: 8, t_end: 1e6, sample_dt: 0.0 }).unwrap();
    assert_eq!(run.cycles.len(), 8);
    assert!(run.conservation.holds(), "{:?}", run.conservation);
    for w in run.cycles.windows(2) {
        assert!(w[1].energy < w[0].energy);
        assert!((w[0].d_energy - (w[1].energy - w[0].energy)).abs() < 1e-12);
    }
    for c in &run.cycles {
        let scale = c.d_energy.abs().max(1e-12);
        assert!((c.d_energy - c.d_energy_quadrature).abs() < 1e-4 * scale, "{c:?}");
    }
}

#[test]
fn pde_cycle_moves_and_spreads_like_the_lv_signal() {
    let grid = Grid1D::new(400.0, 0.5, 0.02).unwrap();
    let eps = 0.02;
    let init = PdeState::from_fn(&grid, |j| eps * (-(j - 200.0).powi(2) / 200.0).exp() / (200.0 * std::f64::consts::PI).sqrt());
    let cycle = lv::solve_cycle_full(1.0, eps, Default::default()).unwrap();
    let (v0, w0) = cycle.vw(0.0).unwrap();
    let period = cycle.record.period;
    let tr = lv_signal(eps, v0, w0, period).unwrap();
    let run = run_coupled(&init, signal_from(&tr), period, &grid, &[]).unwrap();
    let two_d = 2.0 * cycle.record.diffusion;
    assert!(run.max_conservation_error < 1e-13);
    assert!(run.max_undershoot == 0.0);
    let shift = run.final_state.centroid(&grid) - init.centroid(&grid);
    assert!((shift - cycle.record.y_end).abs() < 0.05 * two_d.sqrt(), "{shift} vs {}", cycle.record.y_end);
    let dvar = run.final_state.variance(&grid) - init.variance(&grid);
    assert!((dvar / two_d - 1.0).abs() < 0.2, "{dvar} vs {two_d}");
}

#[test]
fn phase3_full_and_reduced_agree_on_decay() {
    let eps = 0.02;
    let red = phase34::run_phase3_cycle(0.5, eps, None, 12, Phase3Model::Reduced).unwrap();
    let full = phase34::run_phase3_cycle(0.5, eps, None, 12, Phase3Model::Full).unwrap();
    assert!(red.e_tilde_final < 0.5 && full.e_tilde_final < 0.5);
    let ratio = full.e_tilde_final / red.e_tilde_final;
    assert!((0.7..1.4).contains(&ratio), "{ratio}");
}
