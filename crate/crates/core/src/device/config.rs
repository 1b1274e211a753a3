use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Elementary charge, C.
pub const Q: f64 = 1.602_176_634e-19;
/// Boltzmann constant, J/K.
pub const K_B: f64 = 1.380_649e-23;
/// Vacuum permittivity, F/m.
pub const EPS_0: f64 = 8.854_187_812_8e-12;

/// Device dimensions in meters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Geometry {
    pub length: f64,
    pub height: f64,
    /// Extent of each highly doped region measured from its contact.
    pub source_drain_length: f64,
    pub gate_length: f64,
    /// Left end of both gates; centered when absent.
    pub gate_start: Option<f64>,
}

impl Default for Geometry {
    fn default() -> Self {
        Geometry { length: 0.6e-6, height: 0.2e-6, source_drain_length: 0.1e-6, gate_length: 0.2e-6, gate_start: None }
    }
}

impl Geometry {
    pub fn gate_interval(&self) -> (f64, f64) {
        let a = self.gate_start.unwrap_or(0.5 * (self.length - self.gate_length));
        (a, a + self.gate_length)
    }
}

/// Doping concentrations in m⁻³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Doping {
    pub high: f64,
    pub channel: f64,
}

impl Default for Doping {
    fn default() -> Self {
        Doping { high: 3e23, channel: 1e23 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Physics {
    /// m²/s
    pub diffusion: f64,
    /// Spin-flip relaxation time, s.
    pub tau: f64,
    /// K
    pub temperature: f64,
    pub eps_r: f64,
    /// Polarization of the ferromagnetic source and drain regions.
    pub polarization: f64,
    /// Coefficient `λ_D²` of the scaled Poisson equation.
    pub lambda_d_sq: f64,
    /// Scaled precession strength; defaults to `t_scale / τ`.
    pub gamma_scaled: Option<f64>,
    /// Set to false for the nonmagnetic reference device (`p = 0`, `m = 0`).
    pub ferromagnetic: bool,
}

impl Default for Physics {
    fn default() -> Self {
        Physics {
            diffusion: 1e-3,
            tau: 1e-12,
            temperature: 300.0,
            eps_r: 11.7,
            polarization: 0.9,
            lambda_d_sq: 1.6e-4,
            gamma_scaled: None,
            ferromagnetic: true,
        }
    }
}

/// Applied voltages in volts and gate boundary densities in m⁻³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Bias {
    pub drain: f64,
    pub gate: f64,
    pub schottky: f64,
    /// Gate voltage of the closed state.
    pub closed_gate: f64,
    pub n_gate_open: f64,
    pub n_gate_closed: f64,
    /// Overrides the gate state; otherwise closed iff `gate >= closed_gate`.
    pub closed: Option<bool>,
}

impl Default for Bias {
    fn default() -> Self {
        Bias { drain: -2.0, gate: 0.0, schottky: 0.8, closed_gate: 1.2, n_gate_open: 3.9e11, n_gate_closed: 3.2e9, closed: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeshCounts {
    pub nx: usize,
    pub ny: usize,
}

impl Default for MeshCounts {
    fn default() -> Self {
        MeshCounts { nx: 48, ny: 16 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    #[default]
    Steady,
    Transient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Run {
    pub mode: RunMode,
    /// Scaled time step of steady runs.
    pub dt: f64,
    /// Largest voltage change per continuation stage, V.
    pub ramp_step: f64,
    /// Physical time step of the switching experiment, ps.
    pub transient_dt_ps: f64,
    pub transient_duration_ps: f64,
    /// Write a field file every this many steps; 0 writes only the last state.
    pub dump_every: usize,
    /// Amplitude of a random initial spin perturbation (scaled), used with `--seed`.
    pub perturbation: f64,
    pub seed: Option<u64>,
}

impl Default for Run {
    fn default() -> Self {
        Run {
            mode: RunMode::Steady,
            dt: 0.05,
            ramp_step: 0.1,
            transient_dt_ps: 0.05,
            transient_duration_ps: 2.5,
            dump_every: 0,
            perturbation: 0.0,
            seed: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub drain: Vec<f64>,
    pub gate: Vec<f64>,
}

impl Default for Sweep {
    fn default() -> Self {
        Sweep { drain: vec![0.0, -0.1, -0.2, -0.3, -0.5, -1.0, -1.5, -2.0], gate: vec![-0.3, 0.0, 1.2] }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Energy {
    pub dt: f64,
    pub max_steps: usize,
    /// The run stops once `E^k ≤ floor · E^0`.
    pub floor: f64,
}

impl Default for Energy {
    fn default() -> Self {
        Energy { dt: 0.05, max_steps: 2000, floor: 1e-12 }
    }
}

/// Complete experiment description; every section is optional.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct DeviceConfig {
    pub geometry: Geometry,
    pub doping: Doping,
    pub physics: Physics,
    pub bias: Bias,
    pub mesh: MeshCounts,
    pub solver: SolverConfig,
    pub run: Run,
    pub sweep: Sweep,
    pub energy: Energy,
}

impl DeviceConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: DeviceConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        DeviceConfig::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        let pos = |v: f64, name: &str| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive")))
            }
        };
        pos(g.length, "geometry.length")?;
        pos(g.height, "geometry.height")?;
        pos(g.gate_length, "geometry.gate_length")?;
        pos(self.doping.high, "doping.high")?;
        pos(self.doping.channel, "doping.channel")?;
        pos(self.physics.diffusion, "physics.diffusion")?;
        pos(self.physics.tau, "physics.tau")?;
        pos(self.physics.temperature, "physics.temperature")?;
        pos(self.physics.eps_r, "physics.eps_r")?;
        pos(self.physics.lambda_d_sq, "physics.lambda_d_sq")?;
        pos(self.bias.n_gate_open, "bias.n_gate_open")?;
        pos(self.bias.n_gate_closed, "bias.n_gate_closed")?;
        pos(self.run.dt, "run.dt")?;
        pos(self.run.ramp_step, "run.ramp_step")?;
        pos(self.run.transient_dt_ps, "run.transient_dt_ps")?;
        pos(self.energy.dt, "energy.dt")?;
        if !(g.source_drain_length >= 0.0 && 2.0 * g.source_drain_length <= g.length) {
            return Err(Error::Config("source/drain regions overlap".into()));
        }
        let (a, b) = g.gate_interval();
        if a < 0.0 || b > g.length {
            return Err(Error::Config("gate extends beyond the device".into()));
        }
        if !(0.0..1.0).contains(&self.physics.polarization) {
            return Err(Error::Config("physics.polarization must lie in [0, 1)".into()));
        }
        if self.mesh.nx == 0 || self.mesh.ny == 0 {
            return Err(Error::Config("mesh counts must be positive".into()));
        }
        self.solver.validate()
    }
}

/// Conversion between physical and scaled quantities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Scales {
    /// m
    pub length: f64,
    /// m⁻³
    pub density: f64,
    /// Thermal voltage `k_B T / q`, V.
    pub potential: f64,
    /// `L² / D`, s.
    pub time: f64,
    /// `q D C₊`, A/m per unit of scaled flux.
    pub current: f64,
    /// `ε₀ ε_r U_T / (q C₊ L²)`, evaluated with the constants above.
    pub debye_sq_formula: f64,
}

impl Scales {
    pub fn new(cfg: &DeviceConfig) -> Scales {
        let l = cfg.geometry.length;
        let c = cfg.doping.high;
        let ut = K_B * cfg.physics.temperature / Q;
        Scales {
            length: l,
            density: c,
            potential: ut,
            time: l * l / cfg.physics.diffusion,
            current: Q * cfg.physics.diffusion * c,
            debye_sq_formula: EPS_0 * cfg.physics.eps_r * ut / (Q * c * l * l),
        }
    }

    pub fn time_ps(&self, scaled: f64) -> f64 {
        scaled * self.time * 1e12
    }

    pub fn scaled_time_from_ps(&self, ps: f64) -> f64 {
        ps * 1e-12 / self.time
    }
}
