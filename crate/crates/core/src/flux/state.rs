use crate::error::{Error, Result};
use crate::mesh::{Mesh, MeshField, ScalarField, VectorField};
use crate::model::BoundaryData;
use crate::vec3::Vec3;

/// Unknowns per cell: `n0, n1, n2, n3, V`.
pub const NUM_FIELDS: usize = 5;

/// `(n0, n, V)` at one time level; Dirichlet traces hold the boundary data.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub n0: ScalarField,
    pub spin: VectorField,
    pub potential: ScalarField,
    pub step: usize,
}

impl State {
    pub fn new(mesh: &Mesh, boundary: &BoundaryData, n0: Vec<f64>, spin: Vec<Vec3>, potential: Vec<f64>) -> Result<State> {
        let n = mesh.num_cells();
        if n0.len() != n || spin.len() != n || potential.len() != n {
            return Err(Error::SizeMismatch("state cell vectors vs mesh".into()));
        }
        if !boundary.density.matches(mesh) {
            return Err(Error::SizeMismatch("boundary data vs mesh".into()));
        }
        Ok(State {
            n0: MeshField::new(mesh, n0, boundary.density.dirichlet.clone())?,
            spin: MeshField::new(mesh, spin, vec![[0.0; 3]; mesh.num_dirichlet()])?,
            potential: MeshField::new(mesh, potential, boundary.potential.dirichlet.clone())?,
            step: 0,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.n0.cells.len()
    }

    pub fn matches(&self, mesh: &Mesh) -> bool {
        self.n0.matches(mesh) && self.spin.matches(mesh) && self.potential.matches(mesh)
    }

    /// Density component `l` (0 = charge, 1..=3 spin) of cell `k`.
    #[inline]
    pub fn density(&self, l: usize, k: usize) -> f64 {
        if l == 0 {
            self.n0.cells[k]
        } else {
            self.spin.cells[k][l - 1]
        }
    }

    /// Cell-major unknown vector `(n0, n1, n2, n3, V)` per cell.
    pub fn unknowns(&self) -> Vec<f64> {
        let mut u = Vec::with_capacity(NUM_FIELDS * self.num_cells());
        for k in 0..self.num_cells() {
            let s = self.spin.cells[k];
            u.extend_from_slice(&[self.n0.cells[k], s[0], s[1], s[2], self.potential.cells[k]]);
        }
        u
    }

    pub fn set_unknowns(&mut self, u: &[f64]) {
        assert_eq!(u.len(), NUM_FIELDS * self.num_cells());
        for (k, b) in u.chunks_exact(NUM_FIELDS).enumerate() {
            self.n0.cells[k] = b[0];
            self.spin.cells[k] = [b[1], b[2], b[3]];
            self.potential.cells[k] = b[4];
        }
    }

    /// Copy with the Dirichlet traces replaced by new boundary data.
    pub fn with_boundary(&self, boundary: &BoundaryData) -> State {
        let mut s = self.clone();
        s.n0.dirichlet = boundary.density.dirichlet.clone();
        s.potential.dirichlet = boundary.potential.dirichlet.clone();
        s
    }

    /// Mesh-weighted ℓ² distance over all five fields.
    pub fn distance_l2(&self, other: &State, mesh: &Mesh) -> f64 {
        let mut s = 0.0;
        for (k, c) in mesh.cells().iter().enumerate() {
            let (a, b) = (self.spin.cells[k], other.spin.cells[k]);
            let d = (self.n0.cells[k] - other.n0.cells[k]).powi(2)
                + (a[0] - b[0]).powi(2)
                + (a[1] - b[1]).powi(2)
                + (a[2] - b[2]).powi(2)
                + (self.potential.cells[k] - other.potential.cells[k]).powi(2);
            s += c.measure * d;
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.n0.cells.iter().all(|v| v.is_finite())
            && self.potential.cells.iter().all(|v| v.is_finite())
            && self.spin.cells.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}
