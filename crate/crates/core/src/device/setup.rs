use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{Bias, DeviceConfig, Scales};
use crate::diagnostics::Contact;
use crate::error::{Error, Result};
use crate::flux::{solve_poisson, State};
use crate::mesh::{build_rect_mesh, check_admissibility, BoundaryFace, BoundaryKind, Mesh, MeshField, Point, Rect};
use crate::model::{compute_m0, BoundConstants, BoundaryData, InitialData, MaterialFields, ModelParams};
use crate::vec3::Vec3;

/// Contact order used throughout the device layer.
pub const CONTACT_NAMES: [&str; 4] = ["source", "drain", "gate_top", "gate_bottom"];
pub const SOURCE: usize = 0;
pub const DRAIN: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasPoint {
    /// V
    pub drain: f64,
    /// V
    pub gate: f64,
    pub closed: bool,
}

impl BiasPoint {
    pub fn new(bias: &Bias, drain: f64, gate: f64) -> BiasPoint {
        BiasPoint { drain, gate, closed: gate >= bias.closed_gate }
    }

    pub fn from_config(bias: &Bias) -> BiasPoint {
        BiasPoint { drain: bias.drain, gate: bias.gate, closed: bias.closed.unwrap_or(bias.gate >= bias.closed_gate) }
    }
}

/// Scaled Dirichlet values `(n0, V)` of one contact.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContactValue {
    pub density: f64,
    pub potential: f64,
}

/// Scaled contact values for a bias point, in [`CONTACT_NAMES`] order.
pub fn contact_values(cfg: &DeviceConfig, scales: &Scales, bias: &BiasPoint) -> [ContactValue; 4] {
    let b = &cfg.bias;
    let ut = scales.potential;
    let ohmic = cfg.doping.high / scales.density;
    let gate = ContactValue {
        density: if bias.closed { b.n_gate_closed } else { b.n_gate_open } / scales.density,
        potential: (b.schottky + bias.gate) / ut,
    };
    [
        ContactValue { density: ohmic, potential: 0.0 },
        ContactValue { density: ohmic, potential: bias.drain / ut },
        gate,
        gate,
    ]
}

/// Everything needed to run the transistor at one bias point, in scaled units.
#[derive(Clone, Debug)]
pub struct MesfetSetup {
    pub config: DeviceConfig,
    pub scales: Scales,
    pub mesh: Mesh,
    pub params: ModelParams,
    pub contacts: Vec<Contact>,
    pub bias: BiasPoint,
    pub values: [ContactValue; 4],
    pub boundary: BoundaryData,
    pub initial: State,
    pub constants: BoundConstants,
}

fn on_grid(x: f64, n: usize) -> bool {
    let s = x * n as f64;
    (s - s.round()).abs() < 1e-9 * n as f64
}

/// Builds mesh, coefficients, boundary data and initial state for `bias`.
pub fn build_mesfet(cfg: &DeviceConfig, bias: &BiasPoint) -> Result<MesfetSetup> {
    cfg.validate()?;
    let scales = Scales::new(cfg);
    let g = &cfg.geometry;
    let l = g.length;
    let h = g.height / l;
    let (ga, gb) = g.gate_interval();
    let (ga, gb) = (ga / l, gb / l);
    let (nx, ny) = (cfg.mesh.nx, cfg.mesh.ny);
    for (x, what) in [(ga, "gate start"), (gb, "gate end")] {
        if !on_grid(x, nx) {
            return Err(Error::ContactResolution(format!("{what} x = {x} is not a cell boundary for nx = {nx}")));
        }
    }
    let classify = |face: BoundaryFace, p: Point| {
        Some(match face {
            BoundaryFace::Left | BoundaryFace::Right => BoundaryKind::Dirichlet,
            _ if p[0] > ga && p[0] < gb => BoundaryKind::Dirichlet,
            _ => BoundaryKind::Neumann,
        })
    };
    let mesh = build_rect_mesh(nx, ny, Rect::new(0.0, 0.0, 1.0, h), &classify)?;
    let report = check_admissibility(&mesh, 0.0, 1e-10);
    if !report.passed() {
        return Err(Error::InvalidMesh(format!("generated device mesh is not admissible: {report:?}")));
    }

    let mut contacts: Vec<Contact> = CONTACT_NAMES.iter().map(|n| Contact { name: n.to_string(), edges: vec![] }).collect();
    for &e in mesh.dirichlet_edges() {
        let [x, y] = mesh.edge(e).midpoint;
        let idx = if x < 1e-12 {
            0
        } else if x > 1.0 - 1e-12 {
            1
        } else if y > 0.5 * h {
            2
        } else {
            3
        };
        contacts[idx].edges.push(e);
    }
    if let Some(c) = contacts.iter().find(|c| c.edges.is_empty()) {
        return Err(Error::ContactResolution(format!("contact {} has no edges", c.name)));
    }

    let sd = g.source_drain_length / l;
    let n = mesh.num_cells();
    let phys = &cfg.physics;
    let mut material = MaterialFields::uniform(&mesh, 1.0, 0.0, [0.0; 3], 0.0);
    for c in mesh.cells() {
        let x = c.center[0];
        let doped = x < sd || x > 1.0 - sd;
        material.doping[c.id] = if doped { cfg.doping.high } else { cfg.doping.channel } / scales.density;
        if phys.ferromagnetic {
            material.polarization[c.id] = if doped { phys.polarization } else { 0.0 };
            material.magnetization[c.id] = if (1.0 / 3.0..2.0 / 3.0).contains(&x) { [0.0; 3] } else { [0.0, 0.0, 1.0] };
        }
    }
    let tau = phys.tau / scales.time;
    let gamma = phys.gamma_scaled.unwrap_or(1.0 / tau);
    let params = ModelParams::new(&mesh, material, gamma, tau, phys.lambda_d_sq.sqrt(), cfg.run.dt)?;

    let values = contact_values(cfg, &scales, bias);
    let boundary = boundary_from_values(&mesh, &contacts, &values, &params.material.doping)?;

    let mut spin = vec![[0.0; 3]; n];
    if let (Some(seed), amp) = (cfg.run.seed, cfg.run.perturbation) {
        if amp > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for (k, s) in spin.iter_mut().enumerate() {
                // Keep ½n0 ± n·m ≥ 0.
                let a = amp.min(0.5 * params.material.doping[k]) / 3f64.sqrt();
                *s = [rng.gen_range(-a..=a), rng.gen_range(-a..=a), rng.gen_range(-a..=a)];
            }
        }
    }
    let initial = initial_state(&mesh, &params, &boundary, spin)?;
    let constants = bound_constants(&params, &boundary, &initial)?;
    Ok(MesfetSetup { config: cfg.clone(), scales, mesh, params, contacts, bias: *bias, values, boundary, initial, constants })
}

/// Dirichlet traces from per-contact values; cell extension `n^D = C` and
/// `V^D` linear between source and drain.
pub fn boundary_from_values(mesh: &Mesh, contacts: &[Contact], values: &[ContactValue], doping: &[f64]) -> Result<BoundaryData> {
    let nd = mesh.num_dirichlet();
    let mut dens = vec![0.0; nd];
    let mut pot = vec![0.0; nd];
    for (c, v) in contacts.iter().zip(values) {
        for &e in &c.edges {
            let s = mesh.dirichlet_slot(e).ok_or(Error::NotDirichlet(e))?;
            dens[s] = v.density;
            pot[s] = v.potential;
        }
    }
    let (v0, v1) = (values[SOURCE].potential, values[DRAIN].potential);
    let vcells: Vec<f64> = mesh.cells().iter().map(|c| v0 + (v1 - v0) * c.center[0]).collect();
    BoundaryData::new(mesh, MeshField::new(mesh, doping.to_vec(), dens)?, MeshField::new(mesh, vcells, pot)?)
}

/// `n0 = C`, the given spin, and the potential of the linear Poisson problem.
pub fn initial_state(mesh: &Mesh, params: &ModelParams, boundary: &BoundaryData, spin: Vec<Vec3>) -> Result<State> {
    let doping = &params.material.doping;
    let v = solve_poisson(mesh, doping, doping, params.lambda_d, &boundary.potential.dirichlet)?;
    State::new(mesh, boundary, doping.clone(), spin, v.cells)
}

pub fn bound_constants(params: &ModelParams, boundary: &BoundaryData, initial: &State) -> Result<BoundConstants> {
    let mag = &params.material.magnetization;
    let init = InitialData::new(initial.n0.cells.clone(), initial.spin.cells.clone(), mag)?;
    let m0 = compute_m0(&init, boundary, &params.material.doping, mag)?;
    Ok(BoundConstants::new(params, m0))
}

impl MesfetSetup {
    /// Boundary data of another bias point on the same mesh.
    pub fn boundary_for(&self, bias: &BiasPoint) -> Result<BoundaryData> {
        let v = contact_values(&self.config, &self.scales, bias);
        boundary_from_values(&self.mesh, &self.contacts, &v, &self.params.material.doping)
    }

    pub fn contact(&self, name: &str) -> Option<&Contact> {
        self.contacts.iter().find(|c| c.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn setup(bias: BiasPoint) -> MesfetSetup {
        build_mesfet(&DeviceConfig::default(), &bias).unwrap()
    }

    #[test]
    fn scaled_boundary_values() {
        let cfg = DeviceConfig::default();
        let s = setup(BiasPoint::new(&cfg.bias, -2.0, 0.0));
        let ut = s.scales.potential;
        assert_relative_eq!(s.values[2].density, 3.9e11 / 3e23, max_relative = 1e-14);
        assert_relative_eq!(s.values[2].density, 1.3e-12, max_relative = 1e-12);
        assert_eq!(s.values[SOURCE].potential, 0.0);
        assert_relative_eq!(s.values[DRAIN].potential, -2.0 / ut, max_relative = 1e-14);
        assert_relative_eq!(s.values[2].potential, 0.8 / ut, max_relative = 1e-14);
        let closed = setup(BiasPoint::new(&cfg.bias, -2.0, 1.2));
        assert!(closed.bias.closed);
        assert_relative_eq!(closed.values[3].density, 3.2e9 / 3e23, max_relative = 1e-14);
        assert_relative_eq!(closed.values[3].potential, 2.0 / ut, max_relative = 1e-14);
    }

    #[test]
    fn regions_and_contacts() {
        let cfg = DeviceConfig::default();
        let s = setup(BiasPoint::from_config(&cfg.bias));
        let mat = &s.params.material;
        let mut doping: Vec<f64> = mat.doping.clone();
        doping.sort_by(f64::total_cmp);
        doping.dedup();
        assert_eq!(doping.len(), 2);
        assert_relative_eq!(doping[0], 1.0 / 3.0, max_relative = 1e-15);
        assert_eq!(doping[1], 1.0);
        for c in s.mesh.cells() {
            let x = c.center[0];
            let m = mat.magnetization[c.id];
            if (1.0 / 3.0..2.0 / 3.0).contains(&x) {
                assert_eq!(m, [0.0; 3]);
            } else {
                assert_eq!(m, [0.0, 0.0, 1.0]);
            }
            let doped = !(1.0 / 6.0..=5.0 / 6.0).contains(&x);
            assert_eq!(mat.polarization[c.id], if doped { 0.9 } else { 0.0 });
        }
        let len = |name: &str| s.contact(name).unwrap().edges.iter().map(|&e| s.mesh.edge(e).measure).sum::<f64>();
        assert_relative_eq!(len("source"), 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(len("drain"), 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(len("gate_top"), 1.0 / 3.0, max_relative = 1e-12);
        assert_relative_eq!(len("gate_bottom"), 1.0 / 3.0, max_relative = 1e-12);
        assert!(!s.params.within_hypotheses());
    }

    #[test]
    fn unresolvable_gate_is_rejected() {
        let mut cfg = DeviceConfig::default();
        cfg.mesh.nx = 25;
        assert!(matches!(build_mesfet(&cfg, &BiasPoint::from_config(&cfg.bias)), Err(Error::ContactResolution(_))));
    }

    #[test]
    fn nonmagnetic_variant() {
        let mut cfg = DeviceConfig::default();
        cfg.physics.ferromagnetic = false;
        let s = build_mesfet(&cfg, &BiasPoint::from_config(&cfg.bias)).unwrap();
        assert!(s.params.material.polarization.iter().all(|&p| p == 0.0));
        assert!(s.params.material.magnetization.iter().all(|&m| m == [0.0; 3]));
    }

    #[test]
    fn seeded_perturbation_is_reproducible() {
        let mut cfg = DeviceConfig::default();
        cfg.run.seed = Some(7);
        cfg.run.perturbation = 0.01;
        let a = build_mesfet(&cfg, &BiasPoint::from_config(&cfg.bias)).unwrap();
        let b = build_mesfet(&cfg, &BiasPoint::from_config(&cfg.bias)).unwrap();
        assert_eq!(a.initial, b.initial);
        assert!(a.initial.spin.cells.iter().any(|s| s[0] != 0.0));
    }
}
