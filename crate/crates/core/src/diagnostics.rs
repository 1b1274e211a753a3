//! Spin projections, free energy and its dissipation, the `L∞` bound
//! monitors, and contact currents.

use std::io::Write;

use crate::error::{Error, Result};
use crate::flux::{EdgeFluxSet, State};
use crate::mesh::{EdgeKind, Mesh};
use crate::model::{BoundConstants, BoundaryData, ModelParams};
use crate::solver::StepHook;
use crate::vec3::{self, Vec3};

/// Comparison tolerance of the bound monitors.
pub const MONITOR_TOL: f64 = 1e-10;

/// `n± = ½n0 ± n·m`, cellwise.
pub fn project_updown(n0: &[f64], spin: &[Vec3], magnetization: &[Vec3]) -> (Vec<f64>, Vec<f64>) {
    n0.iter()
        .zip(spin)
        .zip(magnetization)
        .map(|((&n, &s), &m)| {
            let par = vec3::dot(s, m);
            (0.5 * n + par, 0.5 * n - par)
        })
        .unzip()
}

/// `n_⊥ = n − (n·m)m`, cellwise.
pub fn project_perp(spin: &[Vec3], magnetization: &[Vec3]) -> Vec<Vec3> {
    spin.iter().zip(magnetization).map(|(&s, &m)| vec3::sub(s, vec3::scale(m, vec3::dot(s, m)))).collect()
}

fn entropy(n: f64, half_nd: f64) -> f64 {
    if n == 0.0 {
        half_nd
    } else {
        n * (n.ln() - 1.0) - n * half_nd.ln() + half_nd
    }
}

/// Discrete free energy relative to the boundary data: entropy of `n±` against
/// `n^D/2` plus the electric energy of `V − V^D`. Values of `n±` in
/// `[−MONITOR_TOL, 0)` count as zero.
pub fn free_energy(mesh: &Mesh, state: &State, boundary: &BoundaryData, magnetization: &[Vec3], lambda_d: f64) -> Result<f64> {
    let (np, nm) = project_updown(&state.n0.cells, &state.spin.cells, magnetization);
    let mut e = 0.0;
    for c in mesh.cells() {
        let half = 0.5 * boundary.density.cells[c.id];
        for n in [np[c.id], nm[c.id]] {
            if n < -MONITOR_TOL || n.is_nan() {
                return Err(Error::NegativeDensity { cell: c.id, value: n });
            }
            e += c.measure * entropy(n.max(0.0), half);
        }
    }
    let w = state.potential.zip_map(&boundary.potential, |v, vd| v - vd);
    let mut el = 0.0;
    for edge in mesh.edges() {
        let d = w.diff(mesh, edge.owner(), edge.id);
        el += edge.transmissibility * d * d;
    }
    Ok(e + 0.5 * lambda_d * lambda_d * el)
}

/// `(Δt/2) Σ± D(1±p) Σ_σ τ_σ min(n±_K, n±_{K,σ}) (D(log n± + V))²` with the
/// edge coefficients `D_σ, p_σ` and traces `n^D/2` on Dirichlet edges.
pub fn dissipation_rate(mesh: &Mesh, state: &State, params: &ModelParams) -> f64 {
    let mag = &params.material.magnetization;
    let (np, nm) = project_updown(&state.n0.cells, &state.spin.cells, mag);
    let mut total = 0.0;
    for e in mesh.edges() {
        let k = e.owner();
        let (l_vals, v_other) = match e.kind {
            EdgeKind::Neumann { .. } => continue,
            EdgeKind::Interior { l, .. } => ([np[l], nm[l]], state.potential.cells[l]),
            EdgeKind::Dirichlet { .. } => {
                let slot = mesh.dirichlet_slot(e.id).unwrap();
                let half = 0.5 * state.n0.dirichlet[slot];
                ([half, half], state.potential.dirichlet[slot])
            }
        };
        let coef = params.edge(e.id);
        for (i, (nk, nl)) in [np[k], nm[k]].into_iter().zip(l_vals).enumerate() {
            let lo = nk.min(nl);
            if !(lo > 0.0) {
                continue;
            }
            let sign = if i == 0 { 1.0 } else { -1.0 };
            let g = (nl.ln() + v_other) - (nk.ln() + state.potential.cells[k]);
            total += coef.diffusion * (1.0 + sign * coef.polarization) * e.transmissibility * lo * g * g;
        }
    }
    0.5 * params.dt * total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extrema {
    pub min_np: f64,
    pub max_np: f64,
    pub min_nm: f64,
    pub max_nm: f64,
    pub max_n0: f64,
    pub max_nperp: f64,
    pub max_spin: f64,
}

impl Extrema {
    pub fn of(state: &State, magnetization: &[Vec3]) -> Extrema {
        let (np, nm) = project_updown(&state.n0.cells, &state.spin.cells, magnetization);
        let perp = project_perp(&state.spin.cells, magnetization);
        let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Extrema {
            min_np: min(&np),
            max_np: max(&np),
            min_nm: min(&nm),
            max_nm: max(&nm),
            max_n0: max(&state.n0.cells),
            max_nperp: perp.iter().map(|&p| vec3::norm(p)).fold(0.0, f64::max),
            max_spin: state.spin.cells.iter().map(|&s| vec3::norm(s)).fold(0.0, f64::max),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundFlags {
    /// `n± ≥ 0`
    pub positive: bool,
    /// `n± ≤ M^0`
    pub upper: bool,
    /// `n0 ≤ 2M^0`
    pub charge: bool,
    /// `|n_⊥| ≤ M^k`
    pub perp: bool,
    /// `|n| ≤ 2M^k`
    pub spin: bool,
}

impl BoundFlags {
    pub fn all(&self) -> bool {
        self.positive && self.upper && self.charge && self.perp && self.spin
    }
}

/// Evaluates the bounds at step `k`; an infinite `M^k` (when `αΔt ≥ 1`) makes
/// the `k`-dependent bounds vacuous.
pub fn bound_monitor(state: &State, magnetization: &[Vec3], constants: &BoundConstants, dt: f64, k: usize) -> (BoundFlags, Extrema, f64) {
    let x = Extrema::of(state, magnetization);
    let mk = constants.m_k(dt, k).unwrap_or(f64::INFINITY);
    let m0 = constants.m0;
    let flags = BoundFlags {
        positive: x.min_np >= -MONITOR_TOL && x.min_nm >= -MONITOR_TOL,
        upper: x.max_np <= m0 + MONITOR_TOL && x.max_nm <= m0 + MONITOR_TOL,
        charge: x.max_n0 <= 2.0 * m0 + MONITOR_TOL,
        perp: x.max_nperp <= mk + MONITOR_TOL,
        spin: x.max_spin <= 2.0 * mk + MONITOR_TOL,
    };
    (flags, x, mk)
}

fn check_contact(mesh: &Mesh, contact: &[usize]) -> Result<()> {
    match contact.iter().find(|&&e| e >= mesh.num_edges() || !mesh.edge(e).is_dirichlet()) {
        Some(&e) => Err(Error::NotDirichlet(e)),
        None => Ok(()),
    }
}

/// `scale · Σ_{σ ∈ contact} j_{0,K_σ,σ}`, the charge flux leaving the domain
/// through the contact.
pub fn contact_current(mesh: &Mesh, fluxes: &EdgeFluxSet, contact: &[usize], scale: f64) -> Result<f64> {
    check_contact(mesh, contact)?;
    Ok(scale * contact.iter().map(|&e| fluxes.combined[e][0]).sum::<f64>())
}

/// Spin analogue of [`contact_current`].
pub fn contact_spin_current(mesh: &Mesh, fluxes: &EdgeFluxSet, contact: &[usize], scale: f64) -> Result<Vec3> {
    check_contact(mesh, contact)?;
    let mut s = [0.0; 3];
    for &e in contact {
        let f = fluxes.combined[e];
        s = vec3::add(s, [f[1], f[2], f[3]]);
    }
    Ok(vec3::scale(s, scale))
}

/// A named set of Dirichlet edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Contact {
    pub name: String,
    pub edges: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiagnosticsRecord {
    pub step: usize,
    pub time: f64,
    /// `NaN` when a density left the admissible range.
    pub energy: f64,
    pub dissipation: f64,
    pub extrema: Extrema,
    pub m_k: f64,
    pub bounds: BoundFlags,
    /// `E^k + D^k ≤ E^{k−1} + slack`; true at `k = 0`.
    pub energy_monotone: bool,
    /// Whether the bound and dissipation guarantees apply to this problem.
    pub within_hypotheses: bool,
    pub currents: Vec<f64>,
}

impl DiagnosticsRecord {
    /// Names of failed checks joined by `|`, or `ok`; prefixed by `outside:`
    /// when the guarantees do not apply.
    pub fn flag_string(&self) -> String {
        let b = &self.bounds;
        let failed: Vec<&str> = [
            (b.positive, "positive"),
            (b.upper, "upper"),
            (b.charge, "charge"),
            (b.perp, "perp"),
            (b.spin, "spin"),
            (self.energy_monotone, "energy"),
        ]
        .iter()
        .filter(|(ok, _)| !ok)
        .map(|&(_, n)| n)
        .collect();
        let flags = if failed.is_empty() { "ok".to_string() } else { failed.join("|") };
        if self.within_hypotheses {
            flags
        } else {
            format!("outside:{flags}")
        }
    }
}

/// `log(n^D/2) + V^D` takes one value on all Dirichlet traces, to `1e-10`.
fn equilibrium_traces(boundary: &BoundaryData) -> bool {
    let q: Vec<f64> = boundary.density.dirichlet.iter().zip(&boundary.potential.dirichlet).map(|(n, v)| (0.5 * n).ln() + v).collect();
    let (lo, hi) = q.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    q.is_empty() || (lo.is_finite() && hi - lo <= 1e-10)
}

/// Records one [`DiagnosticsRecord`] per accepted state.
pub struct DiagnosticsMonitor {
    pub params: ModelParams,
    pub boundary: BoundaryData,
    pub constants: BoundConstants,
    pub contacts: Vec<Contact>,
    pub current_scale: f64,
    /// Allowed increase of `E^k + D^k` over `E^{k−1}`.
    pub energy_slack: f64,
    /// Constant `D, p, m` with `|m| = 1` and `log(n^D/2) + V^D` constant on the Dirichlet traces.
    pub within_hypotheses: bool,
    pub records: Vec<DiagnosticsRecord>,
}

impl DiagnosticsMonitor {
    pub fn new(params: ModelParams, boundary: BoundaryData, constants: BoundConstants, contacts: Vec<Contact>, current_scale: f64, energy_slack: f64) -> Self {
        let within_hypotheses = params.within_hypotheses() && equilibrium_traces(&boundary);
        DiagnosticsMonitor { params, boundary, constants, contacts, current_scale, energy_slack, within_hypotheses, records: Vec::new() }
    }

    pub fn record(&self, mesh: &Mesh, state: &State, time: f64) -> Result<DiagnosticsRecord> {
        if !state.is_finite() {
            return Err(Error::NonFinite(format!("state at step {}", state.step)));
        }
        let mag = &self.params.material.magnetization;
        let energy = free_energy(mesh, state, &self.boundary, mag, self.params.lambda_d).unwrap_or(f64::NAN);
        let dissipation = dissipation_rate(mesh, state, &self.params);
        let (bounds, extrema, m_k) = bound_monitor(state, mag, &self.constants, self.params.dt, state.step);
        let energy_monotone = match self.records.last() {
            None => !energy.is_nan(),
            Some(p) => energy + dissipation <= p.energy + self.energy_slack,
        };
        let fluxes = EdgeFluxSet::compute(mesh, state, &self.params);
        let currents = self
            .contacts
            .iter()
            .map(|c| contact_current(mesh, &fluxes, &c.edges, self.current_scale))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DiagnosticsRecord {
            step: state.step,
            time,
            energy,
            dissipation,
            extrema,
            m_k,
            bounds,
            energy_monotone,
            within_hypotheses: self.within_hypotheses,
            currents,
        })
    }

    pub fn all_passed(&self) -> bool {
        self.records.iter().all(|r| r.bounds.all() && r.energy_monotone)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "k,t,E,dissipation,min_np,max_np,min_nm,max_nm,max_nperp,Mk,flags")?;
        for c in &self.contacts {
            write!(w, ",current_{}", c.name)?;
        }
        writeln!(w)?;
        for r in &self.records {
            let x = &r.extrema;
            write!(
                w,
                "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{}",
                r.step, r.time, r.energy, r.dissipation, x.min_np, x.max_np, x.min_nm, x.max_nm, x.max_nperp, r.m_k,
                r.flag_string()
            )?;
            for i in &r.currents {
                write!(w, ",{i:e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

impl StepHook for DiagnosticsMonitor {
    fn on_state(&mut self, mesh: &Mesh, state: &State, time: f64) -> Result<()> {
        let rec = self.record(mesh, state, time)?;
        if !rec.bounds.all() || !rec.energy_monotone {
            if rec.within_hypotheses {
                log::warn!("step {}: monitor flags {}", rec.step, rec.flag_string());
            } else {
                log::debug!("step {}: monitor flags {}", rec.step, rec.flag_string());
            }
        }
        self.records.push(rec);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flux::sg_edge_flux;
    use crate::mesh::{build_rect_mesh, BoundaryFace, BoundaryKind, MeshField, Rect};
    use crate::model::MaterialFields;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lr(face: BoundaryFace, _: crate::mesh::Point) -> Option<BoundaryKind> {
        Some(match face {
            BoundaryFace::Left | BoundaryFace::Right => BoundaryKind::Dirichlet,
            _ => BoundaryKind::Neumann,
        })
    }

    #[test]
    fn projection_examples() {
        let (p, m) = project_updown(&[2.0, 3.0], &[[0.0; 3], [0.0, 0.0, 1.0]], &[[0.0, 0.0, 1.0]; 2]);
        assert_eq!((p[0], m[0]), (1.0, 1.0));
        assert_eq!((p[1], m[1]), (2.5, 0.5));
        let (p, m) = project_updown(&[2.0], &[[0.0, 0.0, 1.0]], &[[0.0, 0.0, 1.0]]);
        assert_eq!((p[0], m[0]), (2.0, 0.0));
        assert_eq!(project_perp(&[[1.0, 1.0, 1.0]], &[[0.0, 0.0, 1.0]]), vec![[1.0, 1.0, 0.0]]);
        assert_eq!(project_perp(&[[0.0, 0.0, 2.0]], &[[0.0, 0.0, 1.0]]), vec![[0.0; 3]]);
        assert_eq!(project_perp(&[[0.3, -1.0, 2.0]], &[[0.0; 3]]), vec![[0.3, -1.0, 2.0]]);
    }

    proptest! {
        #[test]
        fn projection_identities(n0 in 0.0f64..10.0, s in prop::array::uniform3(-3.0f64..3.0), th in 0.0f64..std::f64::consts::PI, ph in 0.0f64..std::f64::consts::TAU) {
            let m = [th.sin() * ph.cos(), th.sin() * ph.sin(), th.cos()];
            let (p, q) = project_updown(&[n0], &[s], &[m]);
            prop_assert!((p[0] + q[0] - n0).abs() <= 1e-15 * (1.0 + n0));
            prop_assert!((0.5 * (p[0] - q[0]) - vec3::dot(s, m)).abs() <= 1e-15 * 4.0);
            let perp = project_perp(&[s], &[m])[0];
            prop_assert!(vec3::dot(perp, m).abs() < 1e-14);
            let back = vec3::add(perp, vec3::scale(m, vec3::dot(s, m)));
            for i in 0..3 {
                prop_assert!((back[i] - s[i]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn free_energy_examples() {
        let mesh = build_rect_mesh(2, 1, Rect::unit(), &lr).unwrap();
        let mag = vec![[0.0, 0.0, 1.0]; 2];
        let bd = BoundaryData::constant(&mesh, 2.0, 0.5).unwrap();
        let eq = State::new(&mesh, &bd, vec![2.0; 2], vec![[0.0; 3]; 2], vec![0.5; 2]).unwrap();
        assert_eq!(free_energy(&mesh, &eq, &bd, &mag, 1.0).unwrap(), 0.0);

        // n± = 2 against n^D/2 = 1: per cell 2 · (2(log 2 − 1) + 1) over unit total measure.
        let s = State::new(&mesh, &bd, vec![4.0; 2], vec![[0.0; 3]; 2], vec![0.5; 2]).unwrap();
        let e = free_energy(&mesh, &s, &bd, &mag, 1.0).unwrap();
        assert_relative_eq!(e, 2.0 * (2.0 * 2f64.ln() - 1.0), max_relative = 1e-14);
        assert_relative_eq!(e, 0.772589, max_relative = 1e-6);

        // V − V^D = (0.1, 0.3): τ = 4 on both contacts, τ = 2 inside.
        let v = State::new(&mesh, &bd, vec![2.0; 2], vec![[0.0; 3]; 2], vec![0.6, 0.8]).unwrap();
        let lam = 0.7;
        let el = 0.5 * lam * lam * (4.0 * 0.01 + 4.0 * 0.09 + 2.0 * 0.04);
        assert_relative_eq!(free_energy(&mesh, &v, &bd, &mag, lam).unwrap(), el, max_relative = 1e-13);

        // Exactly vanishing n− contributes n^D/2.
        let z = State::new(&mesh, &bd, vec![2.0; 2], vec![[0.0, 0.0, 1.0]; 2], vec![0.5; 2]).unwrap();
        let expect = 2.0 * 0.5 * ((2.0 * (2f64.ln() - 1.0) - 0.0 + 1.0) + 1.0);
        assert_relative_eq!(free_energy(&mesh, &z, &bd, &mag, 1.0).unwrap(), expect, max_relative = 1e-14);

        let neg = State::new(&mesh, &bd, vec![2.0; 2], vec![[0.0, 0.0, 1.1]; 2], vec![0.5; 2]).unwrap();
        assert!(matches!(free_energy(&mesh, &neg, &bd, &mag, 1.0), Err(Error::NegativeDensity { .. })));
    }

    #[test]
    fn dissipation_examples() {
        let mesh = build_rect_mesh(2, 1, Rect::unit(), &|_, _| Some(BoundaryKind::Neumann)).unwrap();
        let mat = MaterialFields::uniform(&mesh, 1.3, 0.0, [0.0, 0.0, 1.0], 0.0);
        let dt = 0.05;
        let params = ModelParams::new(&mesh, mat, 0.0, 1.0, 1.0, dt).unwrap();
        let bd = BoundaryData::constant(&mesh, 1.0, 0.0).unwrap();
        let e1 = (-1f64).exp();
        // n0 = 2n+ with zero spin so n− = n+.
        let s = State::new(&mesh, &bd, vec![2.0, 2.0 * e1], vec![[0.0; 3]; 2], vec![0.0, 1.0]).unwrap();
        assert!(dissipation_rate(&mesh, &s, &params).abs() < 1e-15);
        let s2 = State::new(&mesh, &bd, vec![2.0, 2.0 * e1], vec![[0.0; 3]; 2], vec![0.0, 2.0]).unwrap();
        assert_relative_eq!(dissipation_rate(&mesh, &s2, &params), dt * 1.3 * 2.0 * e1, max_relative = 1e-13);
    }

    #[test]
    fn bound_monitor_examples() {
        let mesh = build_rect_mesh(2, 2, Rect::unit(), &lr).unwrap();
        let mat = MaterialFields::uniform(&mesh, 1.0, 0.5, [0.0, 0.0, 1.0], 0.0);
        let params = ModelParams::new(&mesh, mat, 0.0, 1.0, 1.0, 0.1).unwrap();
        let consts = BoundConstants::new(&params, 1.0);
        assert_eq!(consts.alpha, 0.0);
        let bd = BoundaryData::constant(&mesh, 2.0, 0.0).unwrap();
        let mut s = State::new(&mesh, &bd, vec![2.0; 4], vec![[0.0; 3]; 4], vec![0.0; 4]).unwrap();
        let mag = &params.material.magnetization;
        let (f, _, mk) = bound_monitor(&s, mag, &consts, 0.1, 7);
        assert!(f.all());
        assert_eq!(mk, 1.0);
        s.n0.cells[1] = -1e-6;
        let (f, _, _) = bound_monitor(&s, mag, &consts, 0.1, 7);
        assert!(!f.positive);
        s.n0.cells[1] = 2.0;
        s.spin.cells[2] = [1.0 + 1e-9, 0.0, 0.0];
        let (f, x, _) = bound_monitor(&s, mag, &consts, 0.1, 7);
        assert!(!f.perp && f.spin && f.positive);
        assert!(x.max_nperp > 1.0);
    }

    #[test]
    fn two_cell_contact_current() {
        let mesh = build_rect_mesh(2, 1, Rect::unit(), &lr).unwrap();
        let mat = MaterialFields::uniform(&mesh, 1.0, 0.0, [0.0, 0.0, 1.0], 0.0);
        let params = ModelParams::new(&mesh, mat, 0.0, 1.0, 1.0, 0.1).unwrap();
        let dens = [1.0, 0.5];
        let pot = [0.0, 0.8];
        let nd: Vec<f64> = mesh.dirichlet_edges().iter().map(|&e| if mesh.edge(e).midpoint[0] < 0.5 { dens[0] } else { dens[1] }).collect();
        let vd: Vec<f64> = mesh.dirichlet_edges().iter().map(|&e| if mesh.edge(e).midpoint[0] < 0.5 { pot[0] } else { pot[1] }).collect();
        let bd = BoundaryData::new(&mesh, MeshField::new(&mesh, vec![1.0; 2], nd).unwrap(), MeshField::new(&mesh, vec![0.0; 2], vd).unwrap()).unwrap();
        let s = State::new(&mesh, &bd, vec![0.9, 0.6], vec![[0.0; 3]; 2], vec![0.2, 0.5]).unwrap();
        let fl = EdgeFluxSet::compute(&mesh, &s, &params);
        let right = *mesh.dirichlet_edges().iter().find(|&&e| mesh.edge(e).midpoint[0] > 0.5).unwrap();
        let oracle = sg_edge_flux(0.6, 0.5, 0.8 - 0.5, 4.0);
        assert_relative_eq!(contact_current(&mesh, &fl, &[right], 2.5).unwrap(), 2.5 * oracle, max_relative = 1e-14);
        let interior = mesh.edges().iter().find(|e| !e.is_exterior()).unwrap().id;
        assert!(matches!(contact_current(&mesh, &fl, &[interior], 1.0), Err(Error::NotDirichlet(_))));

        let eq = State::new(&mesh, &BoundaryData::constant(&mesh, 1.0, 0.0).unwrap(), vec![1.0; 2], vec![[0.0; 3]; 2], vec![0.0; 2]).unwrap();
        let f0 = EdgeFluxSet::compute(&mesh, &eq, &params);
        assert_eq!(contact_current(&mesh, &f0, mesh.dirichlet_edges(), 1.0).unwrap(), 0.0);
    }

    #[test]
    fn monitor_csv_layout() {
        let mesh = build_rect_mesh(2, 1, Rect::unit(), &lr).unwrap();
        let mat = MaterialFields::uniform(&mesh, 1.0, 0.0, [0.0, 0.0, 1.0], 1.0);
        let params = ModelParams::new(&mesh, mat, 0.0, 1.0, 1.0, 0.1).unwrap();
        let bd = BoundaryData::constant(&mesh, 1.0, 0.0).unwrap();
        let consts = BoundConstants::new(&params, 1.0);
        let contacts = vec![Contact { name: "left".into(), edges: vec![mesh.dirichlet_edges()[0]] }];
        let mut mon = DiagnosticsMonitor::new(params, bd.clone(), consts, contacts, 1.0, 1e-9);
        let s = State::new(&mesh, &bd, vec![1.0; 2], vec![[0.0; 3]; 2], vec![0.0; 2]).unwrap();
        mon.on_state(&mesh, &s, 0.0).unwrap();
        let mut buf = Vec::new();
        mon.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "k,t,E,dissipation,min_np,max_np,min_nm,max_nm,max_nperp,Mk,flags,current_left");
        assert!(lines[1].starts_with("0,") && lines[1].contains(",ok,"));
        assert!(mon.all_passed());
    }

    #[test]
    fn hypotheses_marker() {
        let mesh = build_rect_mesh(2, 1, Rect::unit(), &lr).unwrap();
        let mat = MaterialFields::uniform(&mesh, 1.0, 0.0, [0.0, 0.0, 1.0], 1.0);
        let params = ModelParams::new(&mesh, mat.clone(), 0.0, 1.0, 1.0, 0.1).unwrap();
        let consts = BoundConstants::new(&params, 1.0);
        let flat = BoundaryData::constant(&mesh, 1.0, 0.0).unwrap();
        assert!(DiagnosticsMonitor::new(params.clone(), flat.clone(), consts, vec![], 1.0, 0.0).within_hypotheses);
        // Same boundary density at different potentials.
        let biased = BoundaryData::new(&mesh, flat.density.clone(), MeshField::new(&mesh, vec![0.0; 2], vec![0.0, 1.0]).unwrap()).unwrap();
        let mut mon = DiagnosticsMonitor::new(params, biased.clone(), consts, vec![], 1.0, 0.0);
        assert!(!mon.within_hypotheses);
        let s = State::new(&mesh, &biased, vec![1.0; 2], vec![[0.0; 3]; 2], vec![0.0; 2]).unwrap();
        mon.on_state(&mesh, &s, 0.0).unwrap();
        assert!(mon.records[0].flag_string().starts_with("outside:"));
        let mut piecewise = mat;
        piecewise.magnetization[1] = [0.0; 3];
        let p2 = ModelParams::new(&mesh, piecewise, 0.0, 1.0, 1.0, 0.1).unwrap();
        assert!(!DiagnosticsMonitor::new(p2, flat, consts, vec![], 1.0, 0.0).within_hypotheses);
    }
}
