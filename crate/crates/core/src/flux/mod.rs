//! Bernoulli kernels, Scharfetter-Gummel edge fluxes and their spin-coupled
//! combinations, plus residual/Jacobian assembly of the implicit scheme.

mod assembly;
mod poisson;
mod state;

pub use assembly::{assemble_jacobian, assemble_residual, density_block, Unknown};
pub use poisson::{solve_equilibrium_potential, solve_poisson};
pub use state::{State, NUM_FIELDS};

use crate::error::{Error, Result};
use crate::mesh::{EdgeKind, Mesh};
use crate::model::{EdgeCoefficients, ModelParams};
use crate::vec3::{self, Vec3};

const SERIES_BRANCH: f64 = 1e-4;

/// `B(x) = x / (e^x − 1)`, `B(0) = 1`.
///
/// Uses the Taylor series near the removable singularity and forms that never
/// overflow for large `|x|`.
#[inline]
pub fn bernoulli(x: f64) -> f64 {
    if x.abs() < SERIES_BRANCH {
        let x2 = x * x;
        1.0 - 0.5 * x + x2 / 12.0 * (1.0 - x2 / 60.0 * (1.0 - x2 / 42.0))
    } else if x > 0.0 {
        // x e^{-x} / (1 - e^{-x})
        x * (-x).exp() / -(-x).exp_m1()
    } else {
        x / x.exp_m1()
    }
}

/// `B'(x)`
#[inline]
pub fn bernoulli_deriv(x: f64) -> f64 {
    if x.abs() < 1e-2 {
        let x2 = x * x;
        -0.5 + x / 6.0 * (1.0 - x2 / 30.0 * (1.0 - x2 / 28.0))
    } else if x > 0.0 {
        let q = (-x).exp();
        let e = -(-x).exp_m1();
        q / e - x * q / (e * e)
    } else {
        let em1 = x.exp_m1();
        1.0 / em1 - x * (em1 + 1.0) / (em1 * em1)
    }
}

/// `B^s(x) = (x/2) coth(x/2) = (B(x) + B(−x))/2`.
#[inline]
pub fn bernoulli_sym(x: f64) -> f64 {
    if x.abs() < SERIES_BRANCH {
        let x2 = x * x;
        1.0 + x2 / 12.0 * (1.0 - x2 / 60.0)
    } else {
        let h = 0.5 * x;
        h / h.tanh()
    }
}

/// Scharfetter-Gummel flux `τ_σ (B(DV) n_K − B(−DV) n_{K,σ})`.
#[inline]
pub fn sg_edge_flux(n_k: f64, n_ks: f64, dv: f64, trans: f64) -> f64 {
    trans * (bernoulli(dv) * n_k - bernoulli(-dv) * n_ks)
}

/// Same flux with the drift evaluated on the cell value: `τ(−DV n_K − B(−DV) Dn)`.
#[inline]
pub fn sg_flux_drift_cell(n_k: f64, n_ks: f64, dv: f64, trans: f64) -> f64 {
    trans * (-dv * n_k - bernoulli(-dv) * (n_ks - n_k))
}

/// Drift evaluated on the neighbor value: `τ(−DV n_{K,σ} − B(DV) Dn)`.
#[inline]
pub fn sg_flux_drift_neighbor(n_k: f64, n_ks: f64, dv: f64, trans: f64) -> f64 {
    trans * (-dv * n_ks - bernoulli(dv) * (n_ks - n_k))
}

/// Central drift with symmetric diffusion: `τ(−½(n_K + n_{K,σ}) DV − B^s(DV) Dn)`.
#[inline]
pub fn sg_flux_central(n_k: f64, n_ks: f64, dv: f64, trans: f64) -> f64 {
    trans * (-0.5 * (n_k + n_ks) * dv - bernoulli_sym(dv) * (n_ks - n_k))
}

/// Combines raw charge/spin fluxes into the fluxes of the scheme:
/// `j0 = (D/η²)(J0 − 2p J·m)`, `j = (D/η²)(ηJ + (1−η)(J·m)m − (p/2)J0 m)`.
pub fn spin_combine(j0_raw: f64, j_raw: Vec3, coef: &EdgeCoefficients) -> Result<(f64, Vec3)> {
    if !(coef.polarization < 1.0) || !(coef.eta > 0.0) {
        return Err(Error::InvalidParameter(format!("edge polarization {} >= 1", coef.polarization)));
    }
    Ok(spin_combine_unchecked(j0_raw, j_raw, coef))
}

#[inline]
pub(crate) fn spin_combine_unchecked(j0_raw: f64, j_raw: Vec3, coef: &EdgeCoefficients) -> (f64, Vec3) {
    let (p, eta, m) = (coef.polarization, coef.eta, coef.magnetization);
    let c = coef.diffusion / (eta * eta);
    let jm = vec3::dot(j_raw, m);
    let j0 = c * (j0_raw - 2.0 * p * jm);
    let mut j = [0.0; 3];
    for i in 0..3 {
        j[i] = c * (eta * j_raw[i] + (1.0 - eta) * jm * m[i] - 0.5 * p * j0_raw * m[i]);
    }
    (j0, j)
}

/// The 4×4 matrix `A` with `(j0, j) = A (J0, J)`.
pub(crate) fn combination_matrix(coef: &EdgeCoefficients) -> [[f64; 4]; 4] {
    let (p, eta, m) = (coef.polarization, coef.eta, coef.magnetization);
    let c = coef.diffusion / (eta * eta);
    let mut a = [[0.0; 4]; 4];
    a[0][0] = c;
    for j in 0..3 {
        a[0][j + 1] = -2.0 * c * p * m[j];
    }
    for i in 0..3 {
        a[i + 1][0] = -0.5 * c * p * m[i];
        for j in 0..3 {
            let delta = if i == j { 1.0 } else { 0.0 };
            a[i + 1][j + 1] = c * (eta * delta + (1.0 - eta) * m[i] * m[j]);
        }
    }
    a
}

/// Per-edge fluxes oriented out of the owner cell `K_σ`; index 0 is the charge
/// component, 1..=3 the spin components. Values for the other cell of an
/// interior edge are the negatives.
#[derive(Clone, Debug)]
pub struct EdgeFluxSet {
    pub raw: Vec<[f64; 4]>,
    pub combined: Vec<[f64; 4]>,
}

impl EdgeFluxSet {
    pub fn compute(mesh: &Mesh, state: &State, params: &ModelParams) -> EdgeFluxSet {
        let mut raw = Vec::with_capacity(mesh.num_edges());
        let mut combined = Vec::with_capacity(mesh.num_edges());
        for e in mesh.edges() {
            if matches!(e.kind, EdgeKind::Neumann { .. }) {
                raw.push([0.0; 4]);
                combined.push([0.0; 4]);
                continue;
            }
            let k = e.owner();
            let dv = state.potential.diff(mesh, k, e.id);
            let t = e.transmissibility;
            let (bp, bm) = (bernoulli(dv), bernoulli(-dv));
            let nb = state.n0.edge_value(mesh, k, e.id);
            let sb = state.spin.edge_value(mesh, k, e.id);
            let sk = state.spin.cells[k];
            let j0 = t * (bp * state.n0.cells[k] - bm * nb);
            let jv = [
                t * (bp * sk[0] - bm * sb[0]),
                t * (bp * sk[1] - bm * sb[1]),
                t * (bp * sk[2] - bm * sb[2]),
            ];
            let (c0, cv) = spin_combine_unchecked(j0, jv, params.edge(e.id));
            raw.push([j0, jv[0], jv[1], jv[2]]);
            combined.push([c0, cv[0], cv[1], cv[2]]);
        }
        EdgeFluxSet { raw, combined }
    }

    /// Combined flux out of cell `k` through `edge`.
    pub fn outward(&self, mesh: &Mesh, k: usize, edge: usize) -> [f64; 4] {
        let f = self.combined[edge];
        if mesh.edge(edge).owner() == k {
            f
        } else {
            [-f[0], -f[1], -f[2], -f[3]]
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    /// Series of x/(e^x - 1) in exact rational Bernoulli numbers, summed far past
    /// double precision for |x| <= 1.
    fn bernoulli_series(x: f64) -> f64 {
        // B_n for n = 0..=20.
        let b = [
            1.0, -0.5, 1.0 / 6.0, 0.0, -1.0 / 30.0, 0.0, 1.0 / 42.0, 0.0, -1.0 / 30.0, 0.0, 5.0 / 66.0, 0.0,
            -691.0 / 2730.0, 0.0, 7.0 / 6.0, 0.0, -3617.0 / 510.0, 0.0, 43867.0 / 798.0, 0.0, -174611.0 / 330.0,
        ];
        let mut fact = 1.0;
        let mut pow = 1.0;
        let mut s = 0.0;
        for (n, bn) in b.iter().enumerate() {
            if n > 0 {
                fact *= n as f64;
                pow *= x;
            }
            s += bn * pow / fact;
        }
        s
    }

    #[test]
    fn bernoulli_examples() {
        assert_eq!(bernoulli(0.0), 1.0);
        assert_relative_eq!(bernoulli(2.0) - bernoulli(-2.0), -2.0, max_relative = 1e-15);
        assert_relative_eq!(bernoulli(1.0), 1.0 / (std::f64::consts::E - 1.0), max_relative = 1e-15);
        assert_relative_eq!(bernoulli(1.0), 0.5819767069, max_relative = 1e-10);
        assert_relative_eq!(bernoulli(1.0), bernoulli_series(1.0), max_relative = 1e-14);
    }

    #[test]
    fn bernoulli_matches_series_near_branch() {
        for &x in &[1e-8, -3e-6, 9.9e-5, 1.01e-4, -1.5e-4, 1e-3, -0.3, 0.7, -1.0] {
            assert_relative_eq!(bernoulli(x), bernoulli_series(x), max_relative = 1e-13);
        }
    }

    #[test]
    fn bernoulli_extremes() {
        assert!(bernoulli(800.0) >= 0.0 && bernoulli(800.0) < 1e-300);
        assert_relative_eq!(bernoulli(-800.0), 800.0, max_relative = 1e-15);
        assert_relative_eq!(bernoulli(700.0), 700.0 * (-700f64).exp(), max_relative = 1e-12);
        assert!(bernoulli_deriv(800.0).is_finite() && bernoulli_deriv(-800.0).is_finite());
    }

    #[test]
    fn bernoulli_sym_examples() {
        assert_eq!(bernoulli_sym(0.0), 1.0);
        assert_eq!(bernoulli_sym(3.7), bernoulli_sym(-3.7));
        assert_relative_eq!(bernoulli_sym(2.0), 1.0 / 1f64.tanh(), max_relative = 1e-15);
        assert_relative_eq!(bernoulli_sym(2.0), 1.3130352855, max_relative = 1e-10);
    }

    #[test]
    fn derivative_matches_central_difference() {
        for &x in &[-30.0, -4.0, -0.5, -0.011, -0.009, 0.0, 1e-5, 0.009, 0.011, 0.5, 4.0, 30.0] {
            let h = 1e-5;
            let fd = (bernoulli(x + h) - bernoulli(x - h)) / (2.0 * h);
            assert!((bernoulli_deriv(x) - fd).abs() < 1e-9, "x = {x}");
        }
    }

    #[test]
    fn sg_flux_examples() {
        assert_relative_eq!(sg_edge_flux(2.0, 0.5, 0.0, 3.0), 3.0 * 1.5);
        let (nk, dv) = (1.3_f64, 0.8_f64);
        assert!(sg_edge_flux(nk, nk * (-dv).exp(), dv, 2.0).abs() < 1e-15);
        assert_relative_eq!(sg_edge_flux(1.0, 0.0, 1.0, 1.0), bernoulli_series(1.0), max_relative = 1e-14);
    }

    #[test]
    fn spin_combine_examples() {
        let c0 = EdgeCoefficients { diffusion: 2.0, polarization: 0.0, eta: 1.0, magnetization: [0.0, 0.0, 1.0] };
        let (j0, j) = spin_combine(0.3, [1.0, 2.0, 3.0], &c0).unwrap();
        assert_eq!(j0, 0.6);
        assert_eq!(j, [2.0, 4.0, 6.0]);

        let p = 0.9;
        let eta = crate::model::eta(p);
        let c = EdgeCoefficients { diffusion: 1.5, polarization: p, eta, magnetization: [0.0, 0.0, 1.0] };
        let (j0, j) = spin_combine(0.0, [1.0, -2.0, 0.0], &c).unwrap();
        assert!(j0.abs() < 1e-15);
        assert_relative_eq!(j[0], 1.5 / eta, max_relative = 1e-14);
        assert_relative_eq!(j[1], -3.0 / eta, max_relative = 1e-14);

        let c1 = EdgeCoefficients { diffusion: 1.0, ..c };
        let (j0, _) = spin_combine(1.0, [0.0, 0.0, 1.0], &c1).unwrap();
        assert_relative_eq!(j0, (1.0 - 1.8) / 0.19, max_relative = 1e-13);
        assert_relative_eq!(j0, -4.210526, max_relative = 1e-6);

        let bad = EdgeCoefficients { polarization: 1.0, eta: 0.0, ..c };
        assert!(spin_combine(1.0, [0.0; 3], &bad).is_err());
    }

    proptest! {
        #[test]
        fn flux_formulations_agree(nk in 0.0f64..10.0, nl in 0.0f64..10.0, dv in -100.0f64..100.0, t in 0.01f64..10.0) {
            let a = sg_edge_flux(nk, nl, dv, t);
            let scale = t * (bernoulli(dv) * nk + bernoulli(-dv) * nl).max(f64::MIN_POSITIVE);
            for b in [sg_flux_drift_cell(nk, nl, dv, t), sg_flux_drift_neighbor(nk, nl, dv, t), sg_flux_central(nk, nl, dv, t)] {
                prop_assert!((a - b).abs() <= 1e-12 * scale);
            }
        }

        #[test]
        fn bernoulli_identities(x in -100.0f64..100.0) {
            prop_assert!((bernoulli(x) - bernoulli(-x) + x).abs() <= 1e-12 * (1.0 + x.abs()));
            prop_assert!(bernoulli_sym(x) >= 1.0);
            prop_assert!(bernoulli(x) > 0.0);
        }

        #[test]
        fn combination_matrix_matches(j0 in -5.0f64..5.0, j1 in -5.0f64..5.0, j3 in -5.0f64..5.0, p in 0.0f64..0.99) {
            let coef = EdgeCoefficients { diffusion: 1.3, polarization: p, eta: crate::model::eta(p), magnetization: [0.6, 0.0, 0.8] };
            let (c0, cv) = spin_combine(j0, [j1, 0.3, j3], &coef).unwrap();
            let a = combination_matrix(&coef);
            let raw = [j0, j1, 0.3, j3];
            let out: Vec<f64> = (0..4).map(|i| (0..4).map(|j| a[i][j] * raw[j]).sum()).collect();
            prop_assert!((out[0] - c0).abs() < 1e-12 * (1.0 + c0.abs()));
            for i in 0..3 {
                prop_assert!((out[i + 1] - cv[i]).abs() < 1e-12 * (1.0 + cv[i].abs()));
            }
        }
    }
}
