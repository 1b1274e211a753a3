use rayon::prelude::*;

use super::config::DeviceConfig;
use super::setup::{bound_constants, boundary_from_values, build_mesfet, initial_state, BiasPoint, ContactValue, MesfetSetup, DRAIN};
use crate::diagnostics::{contact_current, DiagnosticsMonitor};
use crate::error::{Error, Result};
use crate::flux::{solve_equilibrium_potential, EdgeFluxSet, State};
use crate::mesh::{Mesh, MeshField};
use crate::model::{BoundaryData, ModelParams};
use crate::solver::{step_solve, time_march, SolverConfig, StepHook, Termination, Trajectory};

/// Smallest continuation increment, as a fraction of the whole ramp.
const MIN_RAMP_FRACTION: f64 = 1e-6;

fn interpolate(a: &[ContactValue], b: &[ContactValue], s: f64) -> Vec<ContactValue> {
    a.iter()
        .zip(b)
        .map(|(a, b)| ContactValue {
            density: (a.density.ln() * (1.0 - s) + b.density.ln() * s).exp(),
            potential: a.potential * (1.0 - s) + b.potential * s,
        })
        .collect()
}

/// Boundary values with every contact at zero potential and the ohmic density.
pub fn flat_values(setup: &MesfetSetup) -> Vec<ContactValue> {
    vec![ContactValue { density: setup.values[0].density, potential: 0.0 }; setup.values.len()]
}

/// Implicit steps that move the boundary data from `from` to `to`. Stages change
/// potentials by at most `ramp_step` volts and log-densities by the same amount
/// in thermal units; a failed stage is retried with half the increment.
pub fn ramp(setup: &MesfetSetup, start: &State, from: &[ContactValue], to: &[ContactValue], cfg: &SolverConfig) -> Result<(State, usize)> {
    let ut = setup.scales.potential;
    let limit = setup.config.run.ramp_step / ut;
    let span = from
        .iter()
        .zip(to)
        .map(|(a, b)| (a.potential - b.potential).abs().max((a.density.ln() - b.density.ln()).abs()))
        .fold(0.0, f64::max);
    let doping = &setup.params.material.doping;
    let mut cur = start.clone();
    if span == 0.0 {
        let bd = boundary_from_values(&setup.mesh, &setup.contacts, to, doping)?;
        return Ok((cur.with_boundary(&bd), 0));
    }
    let mut h = (limit / span).min(1.0);
    let mut s = 0.0;
    let mut stages = 0;
    while s < 1.0 {
        let next = (s + h).min(1.0);
        let bd = boundary_from_values(&setup.mesh, &setup.contacts, &interpolate(from, to, next), doping)?;
        match step_solve(&setup.mesh, &cur.with_boundary(&bd), &setup.params, cfg) {
            Ok((st, _)) => {
                cur = st;
                s = next;
                stages += 1;
            }
            Err(e) => {
                h *= 0.5;
                if h < MIN_RAMP_FRACTION {
                    return Err(e);
                }
                log::debug!("ramp stage failed at s = {next}: {e}; halving to {h}");
            }
        }
    }
    Ok((cur, stages))
}

/// Result of a steady-state computation at one bias point.
pub struct SteadyRun {
    pub trajectory: Trajectory,
    pub monitor: DiagnosticsMonitor,
    pub ramp_stages: usize,
    /// Per contact, A/m, in contact order.
    pub currents: Vec<f64>,
}

impl SteadyRun {
    pub fn state(&self) -> &State {
        self.trajectory.last()
    }

    pub fn converged(&self) -> bool {
        self.trajectory.termination == Termination::Steady
    }

    pub fn drain_current(&self) -> f64 {
        self.currents[DRAIN]
    }
}

pub fn monitor_for(setup: &MesfetSetup, params: &ModelParams, boundary: &BoundaryData, cfg: &SolverConfig) -> DiagnosticsMonitor {
    DiagnosticsMonitor::new(
        params.clone(),
        boundary.clone(),
        setup.constants,
        setup.contacts.clone(),
        setup.scales.current,
        10.0 * cfg.newton_tol,
    )
}

/// Contact currents in A/m; positive values are charge flux leaving the device.
pub fn currents(setup: &MesfetSetup, state: &State) -> Result<Vec<f64>> {
    let fl = EdgeFluxSet::compute(&setup.mesh, state, &setup.params);
    setup.contacts.iter().map(|c| contact_current(&setup.mesh, &fl, &c.edges, setup.scales.current)).collect()
}

/// Ramps from `start` (whose boundary values are `from`) to the setup's bias,
/// then marches to a steady state.
pub fn run_steady_from(setup: &MesfetSetup, start: &State, from: &[ContactValue], cfg: &SolverConfig) -> Result<SteadyRun> {
    let (ramped, ramp_stages) = ramp(setup, start, from, &setup.values, cfg)?;
    let mut monitor = monitor_for(setup, &setup.params, &setup.boundary, cfg);
    let trajectory = time_march(&setup.mesh, &ramped, &setup.params, cfg, Some(&mut monitor as &mut dyn StepHook))?;
    if let Termination::SolverFailure(msg) = &trajectory.termination {
        log::warn!("steady run at V_D = {}, V_G = {}: {msg}", setup.bias.drain, setup.bias.gate);
    }
    let currents = currents(setup, trajectory.last())?;
    Ok(SteadyRun { trajectory, monitor, ramp_stages, currents })
}

/// Steady state at the setup's bias, reached from flat boundary data.
pub fn run_steady(setup: &MesfetSetup, cfg: &SolverConfig) -> Result<SteadyRun> {
    let flat = flat_values(setup);
    let bd = boundary_from_values(&setup.mesh, &setup.contacts, &flat, &setup.params.material.doping)?;
    let start = initial_state(&setup.mesh, &setup.params, &bd, setup.initial.spin.cells.clone())?;
    run_steady_from(setup, &start, &flat, cfg)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IvRow {
    pub gate: f64,
    pub drain: f64,
    /// Drain current, A/m; `NaN` when the point failed.
    pub current: f64,
    pub steps: usize,
    pub energy: f64,
    pub converged: bool,
    pub message: String,
}

/// Drain current for every `(V_G, V_D)`. Curves of different gate voltages
/// run in parallel; along a curve each point starts from the previous one.
/// A failed point is recorded and the curve restarts from flat data.
pub fn iv_sweep(cfg: &DeviceConfig, drains: &[f64], gates: &[f64], solver: &SolverConfig) -> Result<Vec<IvRow>> {
    if drains.is_empty() || gates.is_empty() {
        return Err(Error::Config("sweep lists must be nonempty".into()));
    }
    let base = build_mesfet(cfg, &BiasPoint::new(&cfg.bias, drains[0], gates[0]))?;
    let curves: Vec<Result<Vec<IvRow>>> = gates
        .par_iter()
        .map(|&vg| {
            let mut rows = Vec::with_capacity(drains.len());
            let mut prev: Option<(State, Vec<ContactValue>)> = None;
            for &vd in drains {
                let bias = BiasPoint::new(&cfg.bias, vd, vg);
                let setup = build_mesfet(cfg, &bias)?;
                let (start, from) = match prev.take() {
                    Some(p) => p,
                    None => {
                        let flat = flat_values(&base);
                        let bd = boundary_from_values(&setup.mesh, &setup.contacts, &flat, &setup.params.material.doping)?;
                        (initial_state(&setup.mesh, &setup.params, &bd, setup.initial.spin.cells.clone())?, flat)
                    }
                };
                match run_steady_from(&setup, &start, &from, solver) {
                    Ok(run) => {
                        let converged = run.converged();
                        rows.push(IvRow {
                            gate: vg,
                            drain: vd,
                            current: run.drain_current(),
                            steps: run.trajectory.steps(),
                            energy: run.monitor.records.last().map_or(f64::NAN, |r| r.energy),
                            converged,
                            message: format!("{:?}", run.trajectory.termination),
                        });
                        if converged {
                            prev = Some((run.state().clone(), setup.values.to_vec()));
                        }
                    }
                    Err(e) => rows.push(IvRow {
                        gate: vg,
                        drain: vd,
                        current: f64::NAN,
                        steps: 0,
                        energy: f64::NAN,
                        converged: false,
                        message: e.to_string(),
                    }),
                }
            }
            Ok(rows)
        })
        .collect();
    let mut out = Vec::new();
    for c in curves {
        out.extend(c?);
    }
    Ok(out)
}

pub struct TransientRun {
    /// Drain current of the open-state steady solution, A/m.
    pub open_current: f64,
    pub times_ps: Vec<f64>,
    /// Drain current after each step, A/m; the first entry is at t = 0.
    pub drain_current: Vec<f64>,
    pub monitor: DiagnosticsMonitor,
    pub termination: Termination,
}

/// Open-state steady solution at the configured drain voltage, then the gate
/// switches to the closed state at t = 0 and the device evolves with the
/// physical step `transient_dt_ps`.
pub fn transient_switch(cfg: &DeviceConfig, solver: &SolverConfig) -> Result<TransientRun> {
    let open_gate = if cfg.bias.gate >= cfg.bias.closed_gate { 0.0 } else { cfg.bias.gate };
    let open = build_mesfet(cfg, &BiasPoint { drain: cfg.bias.drain, gate: open_gate, closed: false })?;
    let steady = run_steady(&open, solver)?;
    if !steady.converged() {
        return Err(Error::Config(format!("open-state run did not reach a steady state: {:?}", steady.trajectory.termination)));
    }
    let closed_bias = BiasPoint { drain: cfg.bias.drain, gate: cfg.bias.closed_gate, closed: true };
    let bd = open.boundary_for(&closed_bias)?;
    let dt = open.scales.scaled_time_from_ps(cfg.run.transient_dt_ps);
    let params = open.params.with_dt(dt)?;
    let steps = (cfg.run.transient_duration_ps / cfg.run.transient_dt_ps).round().max(1.0) as usize;
    let mut start = steady.state().with_boundary(&bd);
    start.step = 0;
    let march = SolverConfig { max_steps: steps, steady_threshold: f64::MIN_POSITIVE, ..solver.clone() };
    let mut monitor = monitor_for(&open, &params, &bd, &march);
    let traj = time_march(&open.mesh, &start, &params, &march, Some(&mut monitor as &mut dyn StepHook))?;
    let times_ps = monitor.records.iter().map(|r| open.scales.time_ps(r.time)).collect();
    let drain_current = monitor.records.iter().map(|r| r.currents[DRAIN]).collect();
    Ok(TransientRun { open_current: steady.drain_current(), times_ps, drain_current, monitor, termination: traj.termination })
}

/// Zero-bias reference of the energy experiment: gate densities consistent with
/// the ohmic contacts, and the exact discrete equilibrium as the extension of
/// the boundary data into the domain.
pub fn equilibrium_boundary(setup: &MesfetSetup, tol: f64) -> Result<BoundaryData> {
    let zero = BiasPoint { drain: 0.0, gate: 0.0, closed: false };
    let raw = setup.boundary_for(&zero)?;
    let a = setup.values[0].density;
    let vd = raw.potential.dirichlet.clone();
    let nd: Vec<f64> = vd.iter().map(|v| a * (-v).exp()).collect();
    let veq = solve_equilibrium_potential(&setup.mesh, &setup.params.material.doping, setup.params.lambda_d, &vd, a, tol)?;
    let neq: Vec<f64> = veq.cells.iter().map(|v| a * (-v).exp()).collect();
    BoundaryData::new(&setup.mesh, MeshField::new(&setup.mesh, neq, nd)?, veq)
}

struct FloorStop<'a> {
    inner: &'a mut DiagnosticsMonitor,
    floor: f64,
}

impl StepHook for FloorStop<'_> {
    fn on_state(&mut self, mesh: &Mesh, state: &State, time: f64) -> Result<()> {
        self.inner.on_state(mesh, state, time)
    }

    fn stop(&self) -> bool {
        let r = &self.inner.records;
        r.len() > 1 && r.last().unwrap().energy <= self.floor * r[0].energy
    }
}

pub struct EnergyRun {
    pub steps: Vec<usize>,
    pub energy: Vec<f64>,
    pub monitor: DiagnosticsMonitor,
    pub termination: Termination,
    /// Least-squares fit `log E^k ≈ a − r k` before the floor: `(r, rms residual)`.
    pub fit: Option<(f64, f64)>,
}

fn exponential_fit(steps: &[usize], energy: &[f64], floor: f64) -> Option<(f64, f64)> {
    let e0 = *energy.first()?;
    let pts: Vec<(f64, f64)> = steps
        .iter()
        .zip(energy)
        .filter(|&(_, &e)| e > floor * e0 && e > 0.0)
        .map(|(&k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 3 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let rms = (pts.iter().map(|p| (p.1 - my - slope * (p.0 - mx)).powi(2)).sum::<f64>() / n).sqrt();
    Some((-slope, rms))
}

/// Relaxation of the unbiased device toward thermal equilibrium, recording the
/// free energy relative to that equilibrium.
pub fn energy_decay_run(cfg: &DeviceConfig, solver: &SolverConfig) -> Result<EnergyRun> {
    let setup = build_mesfet(cfg, &BiasPoint { drain: 0.0, gate: 0.0, closed: false })?;
    let bd = equilibrium_boundary(&setup, 1e-3 * solver.newton_tol)?;
    let params = setup.params.with_dt(cfg.energy.dt)?;
    let initial = initial_state(&setup.mesh, &params, &bd, setup.initial.spin.cells.clone())?;
    let march = SolverConfig { max_steps: cfg.energy.max_steps, steady_threshold: f64::MIN_POSITIVE, ..solver.clone() };
    let constants = bound_constants(&params, &bd, &initial)?;
    let mut monitor = DiagnosticsMonitor::new(params.clone(), bd, constants, setup.contacts.clone(), setup.scales.current, 10.0 * march.newton_tol);
    let termination = {
        let mut hook = FloorStop { inner: &mut monitor, floor: cfg.energy.floor };
        time_march(&setup.mesh, &initial, &params, &march, Some(&mut hook as &mut dyn StepHook))?.termination
    };
    let steps: Vec<usize> = monitor.records.iter().map(|r| r.step).collect();
    let energy: Vec<f64> = monitor.records.iter().map(|r| r.energy).collect();
    let fit = exponential_fit(&steps, &energy, cfg.energy.floor);
    Ok(EnergyRun { steps, energy, monitor, termination, fit })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interpolation_is_linear_in_potential_and_log_density() {
        let a = [ContactValue { density: 1.0, potential: 0.0 }];
        let b = [ContactValue { density: 1e-4, potential: 10.0 }];
        let m = interpolate(&a, &b, 0.5);
        assert_relative_eq!(m[0].density, 1e-2, max_relative = 1e-12);
        assert_relative_eq!(m[0].potential, 5.0);
        assert_eq!(interpolate(&a, &b, 1.0)[0].potential, 10.0);
    }

    #[test]
    fn fit_recovers_rate() {
        let steps: Vec<usize> = (0..20).collect();
        let e: Vec<f64> = steps.iter().map(|&k| 3.0 * (-0.7 * k as f64).exp()).collect();
        let (r, rms) = exponential_fit(&steps, &e, 1e-30).unwrap();
        assert_relative_eq!(r, 0.7, max_relative = 1e-10);
        assert!(rms < 1e-10);
    }

    #[test]
    fn equilibrium_reference_has_constant_quasi_fermi_level() {
        let mut cfg = DeviceConfig::default();
        cfg.mesh.nx = 12;
        cfg.mesh.ny = 4;
        let setup = build_mesfet(&cfg, &BiasPoint { drain: 0.0, gate: 0.0, closed: false }).unwrap();
        let bd = equilibrium_boundary(&setup, 1e-12).unwrap();
        for (n, v) in bd.density.cells.iter().chain(&bd.density.dirichlet).zip(bd.potential.cells.iter().chain(&bd.potential.dirichlet)) {
            assert!((n.ln() + v).abs() < 1e-12);
        }
    }
}
