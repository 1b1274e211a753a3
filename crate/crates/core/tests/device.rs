use spinfv::device::{build_mesfet, energy_decay_run, iv_sweep, run_steady, transient_switch, BiasPoint, DeviceConfig, DRAIN, SOURCE};

fn coarse() -> DeviceConfig {
    let mut cfg = DeviceConfig::default();
    cfg.mesh.nx = 12;
    cfg.mesh.ny = 4;
    cfg
}

#[test]
fn steady_open_state_balances_currents() {
    let cfg = coarse();
    let setup = build_mesfet(&cfg, &BiasPoint::from_config(&cfg.bias)).unwrap();
    let run = run_steady(&setup, &cfg.solver).unwrap();
    assert!(run.converged(), "{:?}", run.trajectory.termination);
    assert!(run.ramp_stages > 1);
    // Electrons enter at the source and leave at the drain.
    assert!(run.currents[DRAIN] > 1.0);
    let sum: f64 = run.currents.iter().sum();
    assert!(sum.abs() < 1e-3 * run.currents[DRAIN], "{:?}", run.currents);
    assert!((run.currents[SOURCE] + run.currents[DRAIN]).abs() < 1e-3 * run.currents[DRAIN]);
}

#[test]
fn closed_gate_suppresses_current() {
    let cfg = coarse();
    let rows = iv_sweep(&cfg, &[0.0, -1.0, -2.0], &[0.0, 1.2], &cfg.solver).unwrap();
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|r| r.converged));
    let open: Vec<f64> = rows.iter().filter(|r| r.gate == 0.0).map(|r| r.current).collect();
    let closed: Vec<f64> = rows.iter().filter(|r| r.gate == 1.2).map(|r| r.current).collect();
    assert!(open[0].abs() < 1e-3 && open[1] < open[2]);
    assert!(closed[2].abs() * 1e3 < open[2]);
}

#[test]
fn switching_transient_decays() {
    let mut cfg = coarse();
    cfg.run.transient_duration_ps = 1.0;
    cfg.run.transient_dt_ps = 0.1;
    let run = transient_switch(&cfg, &cfg.solver).unwrap();
    assert_eq!(run.times_ps.len(), 11);
    assert!((run.times_ps[10] - 1.0).abs() < 1e-9);
    let last = *run.drain_current.last().unwrap();
    assert!(last.abs() < 0.5 * run.open_current, "{last} vs {}", run.open_current);
}

#[test]
fn energy_run_stops_at_floor() {
    let cfg = coarse();
    let run = energy_decay_run(&cfg, &cfg.solver).unwrap();
    let e0 = run.energy[0];
    assert!(e0 > 0.0);
    assert!(*run.energy.last().unwrap() <= cfg.energy.floor * e0);
    assert!(run.energy.windows(2).all(|w| w[1] < w[0]));
    assert!(run.fit.is_some());
}
