use crate::error::{Error, Result};
use crate::linalg::{solve_direct, SparseMatrix};
use crate::mesh::{EdgeKind, Mesh, MeshField, ScalarField};

/// Solves `−λ_D² Σ_σ τ_σ D V_{K,σ} = m(K)(n0_K − C_K)` with `V = V^D` on
/// Dirichlet edges and zero differences on Neumann edges.
pub fn solve_poisson(
    mesh: &Mesh,
    n0: &[f64],
    doping: &[f64],
    lambda_d: f64,
    v_dirichlet: &[f64],
) -> Result<ScalarField> {
    let n = mesh.num_cells();
    if n0.len() != n || doping.len() != n || v_dirichlet.len() != mesh.num_dirichlet() {
        return Err(Error::SizeMismatch("poisson inputs vs mesh".into()));
    }
    if !mesh.has_dirichlet() {
        return Err(Error::Singular("Poisson problem without Dirichlet boundary".into()));
    }
    let lam2 = lambda_d * lambda_d;
    let mut rhs: Vec<f64> = mesh.cells().iter().map(|c| c.measure * (n0[c.id] - doping[c.id])).collect();
    let mut t = Vec::with_capacity(n + 2 * mesh.num_edges());
    for e in mesh.edges() {
        let w = lam2 * e.transmissibility;
        match e.kind {
            EdgeKind::Interior { k, l } => {
                t.extend_from_slice(&[(k, k, w), (l, l, w), (k, l, -w), (l, k, -w)]);
            }
            EdgeKind::Dirichlet { k } => {
                t.push((k, k, w));
                rhs[k] += w * v_dirichlet[mesh.dirichlet_slot(e.id).unwrap()];
            }
            EdgeKind::Neumann { .. } => {}
        }
    }
    let a = SparseMatrix::from_triplets(n, t);
    let v = solve_direct(&a, &rhs)?;
    MeshField::new(mesh, v, v_dirichlet.to_vec())
}

/// Thermal-equilibrium potential: solves
/// `−λ_D² Σ_σ τ_σ D V_{K,σ} = m(K)(A e^{−V_K} − C_K)` by damped Newton, so that
/// `n0 = A e^{−V}` makes every Scharfetter-Gummel flux vanish.
pub fn solve_equilibrium_potential(
    mesh: &Mesh,
    doping: &[f64],
    lambda_d: f64,
    v_dirichlet: &[f64],
    a: f64,
    tol: f64,
) -> Result<ScalarField> {
    let n = mesh.num_cells();
    if doping.len() != n || v_dirichlet.len() != mesh.num_dirichlet() {
        return Err(Error::SizeMismatch("equilibrium inputs vs mesh".into()));
    }
    if !mesh.has_dirichlet() {
        return Err(Error::Singular("Poisson problem without Dirichlet boundary".into()));
    }
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("equilibrium prefactor {a} must be positive")));
    }
    let lam2 = lambda_d * lambda_d;
    let mean_vd = v_dirichlet.iter().sum::<f64>() / v_dirichlet.len() as f64;
    // Local charge neutrality as the initial guess.
    let mut v: Vec<f64> = doping.iter().map(|&c| if c > 0.0 { (a / c).ln() } else { mean_vd }).collect();
    let residual = |v: &[f64]| {
        let mut r: Vec<f64> = mesh.cells().iter().map(|c| -c.measure * (a * (-v[c.id]).exp() - doping[c.id])).collect();
        for e in mesh.edges() {
            let w = lam2 * e.transmissibility;
            match e.kind {
                EdgeKind::Interior { k, l } => {
                    r[k] += w * (v[k] - v[l]);
                    r[l] += w * (v[l] - v[k]);
                }
                EdgeKind::Dirichlet { k } => r[k] += w * (v[k] - v_dirichlet[mesh.dirichlet_slot(e.id).unwrap()]),
                EdgeKind::Neumann { .. } => {}
            }
        }
        r
    };
    let norm = |r: &[f64]| r.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    let mut r = residual(&v);
    let mut rn = norm(&r);
    for _ in 0..200 {
        if rn <= tol {
            return MeshField::new(mesh, v, v_dirichlet.to_vec());
        }
        let mut t: Vec<(usize, usize, f64)> = mesh.cells().iter().map(|c| (c.id, c.id, c.measure * a * (-v[c.id]).exp())).collect();
        for e in mesh.edges() {
            let w = lam2 * e.transmissibility;
            match e.kind {
                EdgeKind::Interior { k, l } => t.extend_from_slice(&[(k, k, w), (l, l, w), (k, l, -w), (l, k, -w)]),
                EdgeKind::Dirichlet { k } => t.push((k, k, w)),
                EdgeKind::Neumann { .. } => {}
            }
        }
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let dv = solve_direct(&SparseMatrix::from_triplets(n, t), &rhs)?;
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = v.iter().zip(&dv).map(|(x, d)| x + step * d).collect();
            let tr = residual(&trial);
            let tn = norm(&tr);
            if tn.is_finite() && (tn < rn || tn <= tol) {
                v = trial;
                r = tr;
                rn = tn;
                break;
            }
            step *= 0.5;
            if step < 1e-6 {
                return Err(Error::NewtonFailure { iterations: 0, residual: rn });
            }
        }
    }
    if rn <= tol {
        MeshField::new(mesh, v, v_dirichlet.to_vec())
    } else {
        Err(Error::NewtonFailure { iterations: 200, residual: rn })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_rect_mesh, BoundaryFace, BoundaryKind, Point, Rect};
    use approx::assert_relative_eq;

    fn lr(face: BoundaryFace, _: Point) -> Option<BoundaryKind> {
        Some(match face {
            BoundaryFace::Left | BoundaryFace::Right => BoundaryKind::Dirichlet,
            _ => BoundaryKind::Neumann,
        })
    }

    #[test]
    fn neutral_charge_gives_constant_boundary_value() {
        let m = build_rect_mesh(4, 3, Rect::unit(), &lr).unwrap();
        let c: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let v = solve_poisson(&m, &c, &c, 0.3, &vec![1.7; m.num_dirichlet()]).unwrap();
        for x in v.cells {
            assert_relative_eq!(x, 1.7, max_relative = 1e-13);
        }
    }

    #[test]
    fn linear_profile_on_two_cells() {
        // Hand solve: with τ = 2 inside and τ = 4 at the contacts,
        // 6V1 - 2V2 = 0 and -2V1 + 6V2 = 4 give V = (0.25, 0.75).
        let m = build_rect_mesh(2, 1, Rect::unit(), &lr).unwrap();
        let traces: Vec<f64> = m.dirichlet_edges().iter().map(|&e| m.edge(e).midpoint[0]).collect();
        let v = solve_poisson(&m, &[0.0, 0.0], &[0.0, 0.0], 1.0, &traces).unwrap();
        assert_relative_eq!(v.cells[0], 0.25, max_relative = 1e-14);
        assert_relative_eq!(v.cells[1], 0.75, max_relative = 1e-14);
    }

    #[test]
    fn single_cell_one_dirichlet_edge() {
        // λ² τ (V_K − v) = m(K)(n0 − C) with τ = 1/0.5 = 2, m(K) = 1.
        let m = build_rect_mesh(1, 1, Rect::unit(), &|f, _| {
            Some(if f == BoundaryFace::Left { BoundaryKind::Dirichlet } else { BoundaryKind::Neumann })
        })
        .unwrap();
        let (lam, v0, n0, c) = (0.5_f64, 0.3, 2.0, 1.2);
        let v = solve_poisson(&m, &[n0], &[c], lam, &[v0]).unwrap();
        assert_relative_eq!(v.cells[0], v0 + (n0 - c) / (lam * lam * 2.0), max_relative = 1e-14);
    }

    #[test]
    fn equilibrium_potential_balances_charge() {
        let m = build_rect_mesh(6, 3, Rect::unit(), &lr).unwrap();
        let c: Vec<f64> = m.cells().iter().map(|c| if c.center[0] < 0.5 { 1.0 } else { 0.2 }).collect();
        let traces: Vec<f64> = m.dirichlet_edges().iter().map(|&e| if m.edge(e).midpoint[0] < 0.5 { 0.0 } else { (5f64).ln() }).collect();
        let lam = 0.1;
        let v = solve_equilibrium_potential(&m, &c, lam, &traces, 1.0, 1e-13).unwrap();
        let n0: Vec<f64> = v.cells.iter().map(|x| (-x).exp()).collect();
        // The linear solve with the equilibrium density reproduces the same potential.
        let lin = solve_poisson(&m, &n0, &c, lam, &traces).unwrap();
        for (a, b) in v.cells.iter().zip(&lin.cells) {
            assert!((a - b).abs() < 1e-9);
        }
        // Deep inside each region the density approaches the doping.
        assert!((n0[0] / c[0] - 1.0).abs() < 0.2);
    }

    #[test]
    fn rejects_missing_dirichlet() {
        let m = build_rect_mesh(2, 2, Rect::unit(), &|_, _| Some(BoundaryKind::Neumann)).unwrap();
        assert!(matches!(solve_poisson(&m, &[0.0; 4], &[0.0; 4], 1.0, &[]), Err(Error::Singular(_))));
    }
}
