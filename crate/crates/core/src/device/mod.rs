//! The ferromagnetic MESFET: scaling, problem setup, experiment drivers and
//! their CSV output.

mod config;
mod experiments;
mod output;
mod setup;

pub use config::{Bias, DeviceConfig, Doping, Energy, Geometry, MeshCounts, Physics, Run, RunMode, Scales, Sweep, EPS_0, K_B, Q};
pub use experiments::{
    currents, energy_decay_run, equilibrium_boundary, flat_values, iv_sweep, ramp, run_steady, run_steady_from, transient_switch,
    EnergyRun, IvRow, SteadyRun, TransientRun,
};
pub use output::{write_energy, write_fields, write_iv, write_transient};
pub use setup::{
    boundary_from_values, bound_constants, build_mesfet, contact_values, initial_state, BiasPoint, ContactValue, MesfetSetup,
    CONTACT_NAMES, DRAIN, SOURCE,
};
