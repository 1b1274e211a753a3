//! Scaled model parameters, boundary and initial data, and the constants of
//! the discrete `L^∞` bounds.

use crate::error::{Error, Result};
use crate::mesh::{EdgeKind, Mesh, ScalarField};
use crate::vec3::{self, Vec3};

/// `η = √(1 − p²)`
#[inline]
pub fn eta(p: f64) -> f64 {
    ((1.0 - p) * (1.0 + p)).sqrt()
}

/// Cellwise material data.
#[derive(Clone, Debug)]
pub struct MaterialFields {
    pub diffusion: Vec<f64>,
    pub polarization: Vec<f64>,
    pub magnetization: Vec<Vec3>,
    pub doping: Vec<f64>,
}

impl MaterialFields {
    pub fn uniform(mesh: &Mesh, diffusion: f64, polarization: f64, magnetization: Vec3, doping: f64) -> Self {
        let n = mesh.num_cells();
        MaterialFields {
            diffusion: vec![diffusion; n],
            polarization: vec![polarization; n],
            magnetization: vec![magnetization; n],
            doping: vec![doping; n],
        }
    }
}

/// Coefficients `D_σ, p_σ, η_σ, m_σ` of one edge.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EdgeCoefficients {
    pub diffusion: f64,
    pub polarization: f64,
    pub eta: f64,
    pub magnetization: Vec3,
}

/// Distance-weighted harmonic mean `d_σ a b / (d_K b + d_L a)`; zero unless
/// both sides are nonzero with the same sign.
pub fn weighted_harmonic(a: f64, b: f64, d_k: f64, d_l: f64) -> f64 {
    if a * b <= 0.0 {
        return 0.0;
    }
    (d_k + d_l) * a * b / (d_k * b + d_l * a)
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub material: MaterialFields,
    pub gamma: f64,
    pub tau: f64,
    pub lambda_d: f64,
    pub dt: f64,
    edges: Vec<EdgeCoefficients>,
}

impl ModelParams {
    pub fn new(mesh: &Mesh, material: MaterialFields, gamma: f64, tau: f64, lambda_d: f64, dt: f64) -> Result<Self> {
        let n = mesh.num_cells();
        if material.diffusion.len() != n
            || material.polarization.len() != n
            || material.magnetization.len() != n
            || material.doping.len() != n
        {
            return Err(Error::SizeMismatch("material fields vs mesh".into()));
        }
        let bad = |what: &str| Err(Error::InvalidParameter(what.to_string()));
        if !(gamma >= 0.0 && gamma.is_finite()) {
            return bad("gamma must be >= 0");
        }
        if !(tau > 0.0) {
            return bad("tau must be > 0");
        }
        if !(lambda_d > 0.0) {
            return bad("lambda_D must be > 0");
        }
        if !(dt > 0.0) {
            return bad("dt must be > 0");
        }
        for k in 0..n {
            if !(material.diffusion[k] > 0.0) {
                return bad(&format!("D must be > 0 (cell {k})"));
            }
            let p = material.polarization[k];
            if !(0.0..1.0).contains(&p) {
                return bad(&format!("p must lie in [0, 1) (cell {k})"));
            }
            let mn = vec3::norm(material.magnetization[k]);
            if mn > 1e-12 && (mn - 1.0).abs() > 1e-12 {
                return bad(&format!("|m| must be 0 or 1 (cell {k})"));
            }
            if !material.doping[k].is_finite() {
                return bad(&format!("doping not finite (cell {k})"));
            }
        }
        let edges = mesh
            .edges()
            .iter()
            .map(|e| {
                let k = e.owner();
                let (d, p, m) = match e.kind {
                    EdgeKind::Interior { l, .. } => {
                        let (dk, dl) = (e.dist_k, e.dist_l.unwrap_or(0.0));
                        let h = |a: f64, b: f64| weighted_harmonic(a, b, dk, dl);
                        let (mk, ml) = (material.magnetization[k], material.magnetization[l]);
                        (
                            h(material.diffusion[k], material.diffusion[l]),
                            h(material.polarization[k], material.polarization[l]),
                            [h(mk[0], ml[0]), h(mk[1], ml[1]), h(mk[2], ml[2])],
                        )
                    }
                    // Piecewise-constant cell data: the trace mean is the owner's value.
                    _ => (material.diffusion[k], material.polarization[k], material.magnetization[k]),
                };
                EdgeCoefficients { diffusion: d, polarization: p, eta: eta(p), magnetization: m }
            })
            .collect();
        Ok(ModelParams { material, gamma, tau, lambda_d, dt, edges })
    }

    pub fn edge(&self, e: usize) -> &EdgeCoefficients {
        &self.edges[e]
    }

    pub fn num_cells(&self) -> usize {
        self.material.doping.len()
    }

    pub fn doping_sup_norm(&self) -> f64 {
        self.material.doping.iter().fold(0.0_f64, |m, c| m.max(c.abs()))
    }

    /// The constants `(D, p)` the bound theory uses: exact if uniform, else the
    /// maxima (which give the conservative constraint values).
    pub fn effective_d_p(&self) -> (f64, f64) {
        let d = self.material.diffusion.iter().cloned().fold(0.0, f64::max);
        let p = self.material.polarization.iter().cloned().fold(0.0, f64::max);
        (d, p)
    }

    /// Whether `D, p, m` are constant with `|m| = 1`.
    pub fn within_hypotheses(&self) -> bool {
        let m = &self.material;
        let uniform = |v: &[f64]| v.iter().all(|&x| x == v[0]);
        uniform(&m.diffusion)
            && uniform(&m.polarization)
            && m.magnetization.iter().all(|&x| x == m.magnetization[0])
            && (vec3::norm(m.magnetization[0]) - 1.0).abs() <= 1e-12
    }

    /// Same parameters with a different time step.
    pub fn with_dt(&self, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter("dt must be > 0".into()));
        }
        let mut p = self.clone();
        p.dt = dt;
        Ok(p)
    }
}

/// Dirichlet data `n^D, V^D`, each with cell values (the extension into the
/// domain used by the free energy) and one trace per Dirichlet edge. The spin
/// trace is identically zero.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub density: ScalarField,
    pub potential: ScalarField,
}

impl BoundaryData {
    pub fn new(mesh: &Mesh, density: ScalarField, potential: ScalarField) -> Result<Self> {
        if !density.matches(mesh) || !potential.matches(mesh) {
            return Err(Error::SizeMismatch("boundary data vs mesh".into()));
        }
        if let Some(i) = density.dirichlet.iter().chain(&density.cells).position(|&v| !(v >= 0.0)) {
            return Err(Error::InvalidParameter(format!("n^D must be >= 0 (entry {i})")));
        }
        Ok(BoundaryData { density, potential })
    }

    pub fn constant(mesh: &Mesh, density: f64, potential: f64) -> Result<Self> {
        BoundaryData::new(mesh, ScalarField::uniform(mesh, density), ScalarField::uniform(mesh, potential))
    }

    pub fn density_trace_sup(&self) -> f64 {
        self.density.dirichlet.iter().cloned().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct InitialData {
    pub n0: Vec<f64>,
    pub spin: Vec<Vec3>,
}

impl InitialData {
    /// Validates `½n0 ± n·m ≥ 0` cellwise.
    pub fn new(n0: Vec<f64>, spin: Vec<Vec3>, magnetization: &[Vec3]) -> Result<Self> {
        if n0.len() != spin.len() || n0.len() != magnetization.len() {
            return Err(Error::SizeMismatch("initial data".into()));
        }
        for k in 0..n0.len() {
            let par = vec3::dot(spin[k], magnetization[k]);
            if 0.5 * n0[k] - par.abs() < 0.0 {
                return Err(Error::SignCondition { cell: k });
            }
        }
        Ok(InitialData { n0, spin })
    }
}

/// `α = D(1+p)‖C‖_∞/λ_D²` together with `M^0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundConstants {
    pub alpha: f64,
    pub m0: f64,
}

impl BoundConstants {
    pub fn new(params: &ModelParams, m0: f64) -> Self {
        let (d, p) = params.effective_d_p();
        BoundConstants { alpha: d * (1.0 + p) * params.doping_sup_norm() / params.lambda_d.powi(2), m0 }
    }

    pub fn m_k(&self, dt: f64, k: usize) -> Result<f64> {
        m_bound_sequence(self.m0, self.alpha, dt, k)
    }
}

/// `M^0 = max(½ sup n^D, sup(½n0⁰ + |n⁰·m|), sup|n⁰_⊥|, sup C)` over the
/// discrete values.
pub fn compute_m0(initial: &InitialData, boundary: &BoundaryData, doping: &[f64], magnetization: &[Vec3]) -> Result<f64> {
    let checked = InitialData::new(initial.n0.clone(), initial.spin.clone(), magnetization)?;
    let mut m0 = 0.5 * boundary.density_trace_sup();
    for k in 0..checked.n0.len() {
        let m = magnetization[k];
        let par = vec3::dot(checked.spin[k], m);
        let perp = vec3::sub(checked.spin[k], vec3::scale(m, par));
        m0 = m0.max(0.5 * checked.n0[k] + par.abs()).max(vec3::norm(perp));
    }
    Ok(doping.iter().fold(m0, |a, &c| a.max(c)))
}

/// `M^k = M^0 (1 − αΔt)^{−k}`.
pub fn m_bound_sequence(m0: f64, alpha: f64, dt: f64, k: usize) -> Result<f64> {
    let a = alpha * dt;
    if !(a < 1.0) || a < 0.0 {
        return Err(Error::BoundSequence(a));
    }
    Ok(m0 * (1.0 - a).powi(-(k as i32)))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintReport {
    /// `1/α`; `None` when the semiconductor is undoped.
    pub dt_bound: Option<f64>,
    /// `ηλ_D²/(D‖C‖_∞)`; `None` when undoped.
    pub tau_bound: Option<f64>,
    pub dt_ok: bool,
    pub tau_ok: bool,
    /// Constant `D, p, m` with `|m| = 1`; the bound theory applies only then.
    pub within_hypotheses: bool,
}

impl ConstraintReport {
    pub fn satisfied(&self) -> bool {
        self.dt_ok && self.tau_ok
    }
}

/// Evaluates the time-step and relaxation-time constraints of the existence theory.
pub fn check_constraints(params: &ModelParams) -> ConstraintReport {
    let (d, p) = params.effective_d_p();
    let c = params.doping_sup_norm();
    let lam2 = params.lambda_d.powi(2);
    let (dt_bound, tau_bound) = if c == 0.0 {
        (None, None)
    } else {
        (Some(lam2 / (d * (1.0 + p) * c)), Some(eta(p) * lam2 / (d * c)))
    };
    ConstraintReport {
        dt_bound,
        tau_bound,
        dt_ok: dt_bound.is_none_or(|b| params.dt <= b),
        tau_ok: tau_bound.is_none_or(|b| params.tau <= b),
        within_hypotheses: params.within_hypotheses(),
    }
}
