//! Implicit Euler stepping: a fully coupled Newton solve per step, the
//! stabilized linearized fixed-point map as an alternative, and steady-state
//! detection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flux::{assemble_jacobian, assemble_residual, density_block, solve_poisson, State, Unknown, NUM_FIELDS};
use crate::linalg::{LinearSolver, SparseMatrix};
use crate::mesh::Mesh;
use crate::model::{eta, ModelParams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    #[default]
    Newton,
    Picard,
}

impl std::str::FromStr for SolverKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "newton" => Ok(SolverKind::Newton),
            "picard" => Ok(SolverKind::Picard),
            _ => Err(Error::Config(format!("unknown solver kind '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKind,
    /// Max-norm of the residual accepted by Newton.
    pub newton_tol: f64,
    pub max_newton_iter: usize,
    /// Smallest step length tried by the halving line search.
    pub damping_floor: f64,
    /// Max-norm of `n − ρ` accepted by the fixed-point map.
    pub picard_tol: f64,
    pub max_picard_iter: usize,
    /// Replaces the stabilization parameter computed from the data.
    pub picard_mu: Option<f64>,
    pub linear_solver: LinearSolver,
    /// Mesh-weighted ℓ² step increment below which a run is steady.
    pub steady_threshold: f64,
    pub max_steps: usize,
    /// Keep every accepted state instead of only the first and last.
    pub record_states: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Newton,
            newton_tol: 1e-10,
            max_newton_iter: 50,
            damping_floor: 1.0 / 1024.0,
            picard_tol: 1e-10,
            max_picard_iter: 10_000,
            picard_mu: None,
            linear_solver: LinearSolver::Direct,
            steady_threshold: 1e-5,
            max_steps: 100_000,
            record_states: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !pos(self.newton_tol) || !pos(self.picard_tol) || !pos(self.steady_threshold) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        if !(self.damping_floor > 0.0 && self.damping_floor <= 1.0) {
            return Err(Error::Config("damping floor must lie in (0, 1]".into()));
        }
        if self.max_newton_iter == 0 || self.max_picard_iter == 0 || self.max_steps == 0 {
            return Err(Error::Config("iteration limits must be at least 1".into()));
        }
        if self.picard_mu.is_some_and(|m| !(m >= 0.0)) {
            return Err(Error::Config("picard_mu must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final residual max-norm (Newton) or increment max-norm (Picard).
    pub residual: f64,
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| if x.is_nan() { f64::NAN } else { m.max(x.abs()) })
}

/// One implicit Euler step by damped Newton. The initial guess is `prev` with the potential
/// re-solved for the boundary data carried by `prev`, so that abrupt contact changes do not
/// start Newton far from the solution.
pub fn newton_step_solve(mesh: &Mesh, prev: &State, params: &ModelParams, cfg: &SolverConfig) -> Result<(State, SolveStats)> {
    let mut guess = prev.clone();
    if mesh.has_dirichlet() {
        guess.potential = solve_poisson(mesh, &prev.n0.cells, &params.material.doping, params.lambda_d, &prev.potential.dirichlet)?;
    }
    newton_from(mesh, &guess, prev, params, cfg)
}

/// Newton solve of the step from `prev` with an explicit initial guess.
pub fn newton_from(mesh: &Mesh, guess: &State, prev: &State, params: &ModelParams, cfg: &SolverConfig) -> Result<(State, SolveStats)> {
    let mut s = guess.clone();
    s.step = prev.step + 1;
    let mut r = assemble_residual(mesh, &s, prev, params)?;
    let mut norm = max_norm(&r);
    if !norm.is_finite() {
        return Err(Error::NonFinite("initial Newton residual".into()));
    }
    // Without Dirichlet data the potential is fixed by pinning the update of cell 0.
    let gauge = (!mesh.has_dirichlet()).then(|| Unknown::V.index(0));
    for it in 0..cfg.max_newton_iter {
        if norm <= cfg.newton_tol {
            log::trace!("Newton converged in {it} iterations (residual {norm:e})");
            return Ok((s, SolveStats { iterations: it, residual: norm }));
        }
        let mut jac = assemble_jacobian(mesh, &s, params)?;
        let mut rhs: Vec<f64> = r.iter().map(|v| -v).collect();
        if let Some(g) = gauge {
            jac.set_unit_row(g);
            rhs[g] = 0.0;
        }
        let delta = cfg.linear_solver.solve(&jac, &rhs)?;
        let u = s.unknowns();
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + step * d).collect();
            let mut ts = s.clone();
            ts.set_unknowns(&trial);
            let tr = assemble_residual(mesh, &ts, prev, params)?;
            let tn = max_norm(&tr);
            if tn.is_finite() && (tn < norm || tn <= cfg.newton_tol) {
                s = ts;
                r = tr;
                norm = tn;
                break;
            }
            step *= 0.5;
            if step < cfg.damping_floor {
                return Err(Error::NewtonFailure { iterations: it + 1, residual: norm });
            }
        }
    }
    if norm <= cfg.newton_tol {
        Ok((s, SolveStats { iterations: cfg.max_newton_iter, residual: norm }))
    } else {
        Err(Error::NewtonFailure { iterations: cfg.max_newton_iter, residual: norm })
    }
}

/// `μ = (D ‖C‖∞ / λ_D²) max(1/η², (1+p)/2) Δt` with the largest `D` and `p`.
pub fn picard_mu(params: &ModelParams) -> f64 {
    let (d, p) = params.effective_d_p();
    let e = eta(p);
    d * params.doping_sup_norm() / (params.lambda_d * params.lambda_d) * (1.0 / (e * e)).max(0.5 * (1.0 + p)) * params.dt
}

/// One implicit Euler step by iterating the stabilized linearized map
/// `ρ ↦ n` until `‖n − ρ‖∞ ≤ picard_tol`.
pub fn picard_solve(mesh: &Mesh, prev: &State, params: &ModelParams, cfg: &SolverConfig) -> Result<(State, SolveStats)> {
    if !mesh.has_dirichlet() {
        return Err(Error::Singular("fixed-point map needs Dirichlet data for the potential".into()));
    }
    let ncell = mesh.num_cells();
    let mu = cfg.picard_mu.unwrap_or_else(|| picard_mu(params));
    let linear = match cfg.linear_solver {
        LinearSolver::Gmres { restart, max_iter, rel_tol, .. } => LinearSolver::Gmres { restart, max_iter, rel_tol, block: 4 },
        d => d,
    };
    let vd = &prev.potential.dirichlet;
    let poisson = |s: &State| solve_poisson(mesh, &s.n0.cells, &params.material.doping, params.lambda_d, vd);

    let mut rho = prev.clone();
    rho.step = prev.step + 1;
    let mut inc = f64::INFINITY;
    for it in 1..=cfg.max_picard_iter {
        rho.potential = poisson(&rho)?;
        let r = assemble_residual(mesh, &rho, prev, params)?;
        let fnn: Vec<f64> = (0..ncell)
            .flat_map(|k| (0..4).map(move |c| (k, c)))
            .map(|(k, c)| -r[NUM_FIELDS * k + c])
            .collect();
        let mut t: Vec<(usize, usize, f64)> = Vec::new();
        let jnn = density_block(mesh, &rho, params)?;
        for row in 0..jnn.dim() {
            t.extend(jnn.row(row).map(|(c, v)| (row, c, v)));
        }
        for c in mesh.cells() {
            for l in 0..4 {
                t.push((4 * c.id + l, 4 * c.id + l, mu * c.measure / params.dt));
            }
        }
        let dn = linear.solve(&SparseMatrix::from_triplets(4 * ncell, t), &fnn)?;
        inc = max_norm(&dn);
        if !inc.is_finite() {
            return Err(Error::NonFinite("fixed-point increment".into()));
        }
        for k in 0..ncell {
            rho.n0.cells[k] += dn[4 * k];
            for l in 0..3 {
                rho.spin.cells[k][l] += dn[4 * k + 1 + l];
            }
        }
        if inc <= cfg.picard_tol {
            rho.potential = poisson(&rho)?;
            return Ok((rho, SolveStats { iterations: it, residual: inc }));
        }
    }
    Err(Error::PicardStagnation { iterations: cfg.max_picard_iter, increment: inc })
}

/// Solves one step with the configured method.
pub fn step_solve(mesh: &Mesh, prev: &State, params: &ModelParams, cfg: &SolverConfig) -> Result<(State, SolveStats)> {
    match cfg.kind {
        SolverKind::Newton => newton_step_solve(mesh, prev, params, cfg),
        SolverKind::Picard => picard_solve(mesh, prev, params, cfg),
    }
}

/// Observer of accepted states during a run.
pub trait StepHook {
    /// Called with the initial state (`k = 0`) and every accepted step.
    fn on_state(&mut self, mesh: &Mesh, state: &State, time: f64) -> Result<()>;

    /// Ends the run after the current step when true.
    fn stop(&self) -> bool {
        false
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Termination {
    Steady,
    MaxSteps,
    /// A hook requested the end of the run.
    Stopped,
    SolverFailure(String),
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    /// Recorded states; at least the initial and the last accepted one.
    pub states: Vec<State>,
    pub times: Vec<f64>,
    /// Step increments `‖state^k − state^{k−1}‖₂`, one per accepted step.
    pub increments: Vec<f64>,
    pub stats: Vec<SolveStats>,
    pub termination: Termination,
}

impl Trajectory {
    pub fn last(&self) -> &State {
        self.states.last().expect("trajectory holds the initial state")
    }

    pub fn steps(&self) -> usize {
        self.increments.len()
    }
}

/// Steps from `initial` until the increment falls below the steady threshold,
/// `max_steps` is reached, or a step solve fails.
pub fn time_march(
    mesh: &Mesh,
    initial: &State,
    params: &ModelParams,
    cfg: &SolverConfig,
    mut hook: Option<&mut dyn StepHook>,
) -> Result<Trajectory> {
    cfg.validate()?;
    let t0 = initial.step as f64 * params.dt;
    if let Some(h) = hook.as_deref_mut() {
        h.on_state(mesh, initial, t0)?;
    }
    let mut traj = Trajectory {
        states: vec![initial.clone()],
        times: vec![t0],
        increments: Vec::new(),
        stats: Vec::new(),
        termination: Termination::MaxSteps,
    };
    let mut cur = initial.clone();
    for _ in 0..cfg.max_steps {
        let (next, stats) = match step_solve(mesh, &cur, params, cfg) {
            Ok(v) => v,
            Err(e) => {
                traj.termination = Termination::SolverFailure(e.to_string());
                break;
            }
        };
        let inc = next.distance_l2(&cur, mesh);
        let t = next.step as f64 * params.dt;
        if let Some(h) = hook.as_deref_mut() {
            h.on_state(mesh, &next, t)?;
        }
        traj.increments.push(inc);
        traj.stats.push(stats);
        if cfg.record_states || traj.states.len() == 1 {
            traj.states.push(next.clone());
            traj.times.push(t);
        } else {
            *traj.states.last_mut().unwrap() = next.clone();
            *traj.times.last_mut().unwrap() = t;
        }
        cur = next;
        if hook.as_deref().is_some_and(|h| h.stop()) {
            traj.termination = Termination::Stopped;
            break;
        }
        if inc < cfg.steady_threshold {
            traj.termination = Termination::Steady;
            break;
        }
    }
    Ok(traj)
}
