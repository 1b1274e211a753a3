use super::{bernoulli, bernoulli_deriv, combination_matrix, spin_combine_unchecked, State, NUM_FIELDS};
use crate::error::{Error, Result};
use crate::linalg::SparseMatrix;
use crate::mesh::{EdgeKind, Mesh};
use crate::model::ModelParams;

/// Position of a field inside a cell block of the unknown vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unknown {
    N0 = 0,
    N1 = 1,
    N2 = 2,
    N3 = 3,
    V = 4,
}

impl Unknown {
    #[inline]
    pub fn index(self, cell: usize) -> usize {
        NUM_FIELDS * cell + self as usize
    }
}

fn check(mesh: &Mesh, state: &State, prev: Option<&State>, params: &ModelParams) -> Result<()> {
    if !state.matches(mesh) || prev.is_some_and(|p| !p.matches(mesh)) || params.num_cells() != mesh.num_cells() {
        return Err(Error::SizeMismatch("state/params vs mesh".into()));
    }
    Ok(())
}

/// Residual of the implicit Euler step from `prev` to `state`, cell-major.
pub fn assemble_residual(mesh: &Mesh, state: &State, prev: &State, params: &ModelParams) -> Result<Vec<f64>> {
    check(mesh, state, Some(prev), params)?;
    let mat = &params.material;
    let lam2 = params.lambda_d * params.lambda_d;
    let mut r = vec![0.0; NUM_FIELDS * mesh.num_cells()];

    for c in mesh.cells() {
        let k = c.id;
        let b = NUM_FIELDS * k;
        let n = state.spin.cells[k];
        let np = prev.spin.cells[k];
        let m = mat.magnetization[k];
        let w = c.measure / params.dt;
        r[b] = w * (state.n0.cells[k] - prev.n0.cells[k]);
        let cross = crate::vec3::cross(n, m);
        for l in 0..3 {
            r[b + 1 + l] = w * (n[l] - np[l]) - 2.0 * params.gamma * c.measure * cross[l] + c.measure / params.tau * n[l];
        }
        r[b + 4] = -c.measure * (state.n0.cells[k] - mat.doping[k]);
    }

    for e in mesh.edges() {
        if matches!(e.kind, EdgeKind::Neumann { .. }) {
            continue;
        }
        let k = e.owner();
        let t = e.transmissibility;
        let dv = state.potential.diff(mesh, k, e.id);
        let (bp, bm) = (bernoulli(dv), bernoulli(-dv));
        let sk = state.spin.cells[k];
        let sb = state.spin.edge_value(mesh, k, e.id);
        let j0 = t * (bp * state.n0.cells[k] - bm * state.n0.edge_value(mesh, k, e.id));
        let jv = [
            t * (bp * sk[0] - bm * sb[0]),
            t * (bp * sk[1] - bm * sb[1]),
            t * (bp * sk[2] - bm * sb[2]),
        ];
        let (c0, cv) = spin_combine_unchecked(j0, jv, params.edge(e.id));
        let f = [c0, cv[0], cv[1], cv[2], -lam2 * t * dv];
        for (i, fi) in f.iter().enumerate() {
            r[NUM_FIELDS * k + i] += fi;
        }
        if let EdgeKind::Interior { l, .. } = e.kind {
            for (i, fi) in f.iter().enumerate() {
                r[NUM_FIELDS * l + i] -= fi;
            }
        }
    }
    Ok(r)
}

fn jacobian_triplets(mesh: &Mesh, state: &State, params: &ModelParams) -> Vec<(usize, usize, f64)> {
    let mat = &params.material;
    let lam2 = params.lambda_d * params.lambda_d;
    let ix = |k: usize, c: usize| NUM_FIELDS * k + c;
    let mut t = Vec::with_capacity(NUM_FIELDS * NUM_FIELDS * (mesh.num_cells() + 2 * mesh.num_edges()));

    for c in mesh.cells() {
        let k = c.id;
        let w = c.measure / params.dt;
        let m = mat.magnetization[k];
        t.push((ix(k, 0), ix(k, 0), w));
        for l in 1..4 {
            t.push((ix(k, l), ix(k, l), w + c.measure / params.tau));
        }
        if params.gamma != 0.0 {
            // d(n × m)/dn
            let g = -2.0 * params.gamma * c.measure;
            let dc = [[0.0, m[2], -m[1]], [-m[2], 0.0, m[0]], [m[1], -m[0], 0.0]];
            for i in 0..3 {
                for j in 0..3 {
                    if dc[i][j] != 0.0 {
                        t.push((ix(k, 1 + i), ix(k, 1 + j), g * dc[i][j]));
                    }
                }
            }
        }
        t.push((ix(k, 4), ix(k, 0), -c.measure));
    }

    for e in mesh.edges() {
        if matches!(e.kind, EdgeKind::Neumann { .. }) {
            continue;
        }
        let k = e.owner();
        let l = match e.kind {
            EdgeKind::Interior { l, .. } => Some(l),
            _ => None,
        };
        let tr = e.transmissibility;
        let dv = state.potential.diff(mesh, k, e.id);
        let (bp, bm) = (bernoulli(dv), bernoulli(-dv));
        let (dbp, dbm) = (bernoulli_deriv(dv), bernoulli_deriv(-dv));
        let a = combination_matrix(params.edge(e.id));

        // dJ_c/d(dv) for each raw component c.
        let mut djdx = [0.0; 4];
        for (c, d) in djdx.iter_mut().enumerate() {
            let (nk, nb) = if c == 0 {
                (state.n0.cells[k], state.n0.edge_value(mesh, k, e.id))
            } else {
                (state.spin.cells[k][c - 1], state.spin.edge_value(mesh, k, e.id)[c - 1])
            };
            *d = tr * (dbp * nk + dbm * nb);
        }

        // Rows of cell K receive +j, rows of cell L receive -j.
        let rows: &[(usize, f64)] = match l {
            Some(l) => &[(k, 1.0), (l, -1.0)],
            None => &[(k, 1.0)],
        };
        for &(row_cell, sign) in rows {
            for i in 0..4 {
                let mut djv = 0.0;
                for c in 0..4 {
                    let aic = a[i][c];
                    if aic == 0.0 {
                        continue;
                    }
                    t.push((ix(row_cell, i), ix(k, c), sign * aic * tr * bp));
                    if let Some(l) = l {
                        t.push((ix(row_cell, i), ix(l, c), -sign * aic * tr * bm));
                    }
                    djv += aic * djdx[c];
                }
                t.push((ix(row_cell, i), ix(k, 4), -sign * djv));
                if let Some(l) = l {
                    t.push((ix(row_cell, i), ix(l, 4), sign * djv));
                }
            }
            t.push((ix(row_cell, 4), ix(k, 4), sign * lam2 * tr));
            if let Some(l) = l {
                t.push((ix(row_cell, 4), ix(l, 4), -sign * lam2 * tr));
            }
        }
    }
    t
}

/// Jacobian of [`assemble_residual`] with respect to the cell-major unknowns.
pub fn assemble_jacobian(mesh: &Mesh, state: &State, params: &ModelParams) -> Result<SparseMatrix> {
    check(mesh, state, None, params)?;
    Ok(SparseMatrix::from_triplets(NUM_FIELDS * mesh.num_cells(), jacobian_triplets(mesh, state, params)))
}

/// Density-density block of the Jacobian at fixed potential, indexed `4K + c`.
pub fn density_block(mesh: &Mesh, state: &State, params: &ModelParams) -> Result<SparseMatrix> {
    check(mesh, state, None, params)?;
    let t = jacobian_triplets(mesh, state, params)
        .into_iter()
        .filter(|&(r, c, _)| r % NUM_FIELDS < 4 && c % NUM_FIELDS < 4)
        .map(|(r, c, v)| (4 * (r / NUM_FIELDS) + r % NUM_FIELDS, 4 * (c / NUM_FIELDS) + c % NUM_FIELDS, v))
        .collect();
    Ok(SparseMatrix::from_triplets(4 * mesh.num_cells(), t))
}
