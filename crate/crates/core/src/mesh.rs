//! Admissible two-point-flux meshes, cell/trace fields and discrete norms.
//!
//! Edge orientation: every edge has an owner cell `K_σ` (the first cell of an
//! interior edge, the only cell of a boundary edge). The stored unit tangent
//! `t` is chosen so that `(t_y, -t_x)` is the normal pointing out of the owner.
//! Sums "over all edges" always use `K = K_σ`.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::vec3::Vec3;

pub type Point = [f64; 2];

#[derive(Clone, Debug)]
pub struct Cell {
    pub id: usize,
    /// The point `x_K` used by the two-point fluxes.
    pub center: Point,
    pub measure: f64,
    pub diameter: f64,
    /// Polygon vertices in counter-clockwise order, when the geometry is known.
    /// Imported meshes carry none; quadrature then falls back to `center`.
    pub vertices: Vec<Point>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryKind {
    Dirichlet,
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    Interior { k: usize, l: usize },
    Dirichlet { k: usize },
    Neumann { k: usize },
}

impl EdgeKind {
    pub fn owner(&self) -> usize {
        match *self {
            EdgeKind::Interior { k, .. } | EdgeKind::Dirichlet { k } | EdgeKind::Neumann { k } => k,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Edge {
    pub id: usize,
    pub kind: EdgeKind,
    pub measure: f64,
    /// Signed distance from the owner's center to the edge line (positive on the inside).
    pub dist_k: f64,
    /// Same for the second cell of an interior edge.
    pub dist_l: Option<f64>,
    pub dist: f64,
    pub transmissibility: f64,
    pub midpoint: Point,
    pub tangent: Point,
}

impl Edge {
    pub fn owner(&self) -> usize {
        self.kind.owner()
    }

    /// Outward unit normal of the owner cell.
    pub fn normal(&self) -> Point {
        [self.tangent[1], -self.tangent[0]]
    }

    /// The cell across an interior edge as seen from `k`.
    pub fn neighbor_of(&self, k: usize) -> Option<usize> {
        match self.kind {
            EdgeKind::Interior { k: a, l: b } if a == k => Some(b),
            EdgeKind::Interior { k: a, l: b } if b == k => Some(a),
            _ => None,
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        matches!(self.kind, EdgeKind::Dirichlet { .. })
    }

    pub fn is_exterior(&self) -> bool {
        !matches!(self.kind, EdgeKind::Interior { .. })
    }

    pub fn endpoints(&self) -> [Point; 2] {
        let h = 0.5 * self.measure;
        [
            [self.midpoint[0] - h * self.tangent[0], self.midpoint[1] - h * self.tangent[1]],
            [self.midpoint[0] + h * self.tangent[0], self.midpoint[1] + h * self.tangent[1]],
        ]
    }
}

/// Immutable cell/edge complex.
#[derive(Clone, Debug)]
pub struct Mesh {
    cells: Vec<Cell>,
    edges: Vec<Edge>,
    cell_edges: Vec<Vec<usize>>,
    dirichlet_edges: Vec<usize>,
    dirichlet_slot: Vec<Option<usize>>,
    xi: f64,
}

impl Mesh {
    /// Assembles a mesh from explicit cells and edges and validates the
    /// structural invariants. Individual signed distances may be negative
    /// (e.g. circumcenters of obtuse triangles); `check_admissibility` reports those.
    pub fn from_parts(cells: Vec<Cell>, mut edges: Vec<Edge>) -> Result<Mesh> {
        if cells.is_empty() {
            return Err(Error::InvalidMesh("no cells".into()));
        }
        for (i, c) in cells.iter().enumerate() {
            if c.id != i {
                return Err(Error::InvalidMesh(format!("cell {} listed at position {i}", c.id)));
            }
            if !(c.measure > 0.0) || !(c.diameter > 0.0) {
                return Err(Error::InvalidMesh(format!("cell {i} has non-positive measure or diameter")));
            }
        }
        let n = cells.len();
        let mut cell_edges = vec![Vec::new(); n];
        let mut dirichlet_edges = Vec::new();
        let mut dirichlet_slot = vec![None; edges.len()];
        for (i, e) in edges.iter_mut().enumerate() {
            if e.id != i {
                return Err(Error::InvalidMesh(format!("edge {} listed at position {i}", e.id)));
            }
            if !(e.measure > 0.0) {
                return Err(Error::InvalidMesh(format!("edge {i} has non-positive measure")));
            }
            let tn = (e.tangent[0].powi(2) + e.tangent[1].powi(2)).sqrt();
            if !(tn > 0.0) {
                return Err(Error::InvalidMesh(format!("edge {i} has zero tangent")));
            }
            e.tangent = [e.tangent[0] / tn, e.tangent[1] / tn];
            match e.kind {
                EdgeKind::Interior { k, l } => {
                    if k == l || k >= n || l >= n {
                        return Err(Error::InvalidMesh(format!("interior edge {i} references cells {k}, {l}")));
                    }
                    let dl = e
                        .dist_l
                        .ok_or_else(|| Error::InvalidMesh(format!("interior edge {i} lacks d_L")))?;
                    let sum = e.dist_k + dl;
                    if (sum - e.dist).abs() > 1e-12 * e.dist.abs().max(1.0) {
                        return Err(Error::InvalidMesh(format!("edge {i}: d_K + d_L != d_sigma")));
                    }
                    cell_edges[k].push(i);
                    cell_edges[l].push(i);
                }
                EdgeKind::Dirichlet { k } | EdgeKind::Neumann { k } => {
                    if k >= n {
                        return Err(Error::InvalidMesh(format!("edge {i} references cell {k}")));
                    }
                    if (e.dist - e.dist_k).abs() > 1e-12 * e.dist.abs().max(1.0) {
                        return Err(Error::InvalidMesh(format!("boundary edge {i}: d_sigma != d_K")));
                    }
                    cell_edges[k].push(i);
                    if e.is_dirichlet() {
                        dirichlet_slot[i] = Some(dirichlet_edges.len());
                        dirichlet_edges.push(i);
                    }
                }
            }
            if !(e.dist > 0.0) {
                return Err(Error::InvalidMesh(format!("edge {i} has non-positive d_sigma")));
            }
            e.transmissibility = e.measure / e.dist;
        }
        let mut xi = f64::INFINITY;
        for e in &edges {
            let k = e.owner();
            xi = xi.min(e.dist_k / cells[k].diameter);
            if let (EdgeKind::Interior { l, .. }, Some(dl)) = (e.kind, e.dist_l) {
                xi = xi.min(dl / cells[l].diameter);
            }
        }
        Ok(Mesh { cells, edges, cell_edges, dirichlet_edges, dirichlet_slot, xi })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn cell(&self, k: usize) -> &Cell {
        &self.cells[k]
    }

    pub fn edge(&self, e: usize) -> &Edge {
        &self.edges[e]
    }

    /// `E_K`
    pub fn cell_edges(&self, k: usize) -> &[usize] {
        &self.cell_edges[k]
    }

    pub fn dirichlet_edges(&self) -> &[usize] {
        &self.dirichlet_edges
    }

    pub fn num_dirichlet(&self) -> usize {
        self.dirichlet_edges.len()
    }

    /// Index of a Dirichlet edge inside trace vectors.
    pub fn dirichlet_slot(&self, e: usize) -> Option<usize> {
        self.dirichlet_slot[e]
    }

    pub fn has_dirichlet(&self) -> bool {
        !self.dirichlet_edges.is_empty()
    }

    pub fn dirichlet_measure(&self) -> f64 {
        self.dirichlet_edges.iter().map(|&e| self.edges[e].measure).sum()
    }

    /// Regularity constant `min d(x_K, σ) / diam(K)` from the stored distances.
    pub fn xi(&self) -> f64 {
        self.xi
    }

    pub fn total_measure(&self) -> f64 {
        self.cells.iter().map(|c| c.measure).sum()
    }

    /// Copy of the mesh with every exterior edge reclassified.
    pub fn reclassified(&self, classifier: impl Fn(&Edge) -> Option<BoundaryKind>) -> Result<Mesh> {
        let mut edges = self.edges.clone();
        for e in edges.iter_mut() {
            if e.is_exterior() {
                let k = e.owner();
                e.kind = match classifier(e) {
                    Some(BoundaryKind::Dirichlet) => EdgeKind::Dirichlet { k },
                    Some(BoundaryKind::Neumann) => EdgeKind::Neumann { k },
                    None => {
                        return Err(Error::UnassignedEdge { x: e.midpoint[0], y: e.midpoint[1] })
                    }
                };
            }
        }
        Mesh::from_parts(self.cells.clone(), edges)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect { x0, y0, x1, y1 }
    }

    pub fn unit() -> Rect {
        Rect::new(0.0, 0.0, 1.0, 1.0)
    }
}

/// Side of a rectangular domain an exterior edge lies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryFace {
    Left,
    Right,
    Bottom,
    Top,
}

/// Tensor-product mesh of `nx × ny` rectangles. Cells are numbered `i * ny + j`
/// (y fastest), which keeps the Jacobian bandwidth proportional to `ny`.
pub fn build_rect_mesh(
    nx: usize,
    ny: usize,
    domain: Rect,
    classifier: &dyn Fn(BoundaryFace, Point) -> Option<BoundaryKind>,
) -> Result<Mesh> {
    if nx == 0 || ny == 0 {
        return Err(Error::DegenerateDomain(format!("{nx} x {ny} cells")));
    }
    let (lx, ly) = (domain.x1 - domain.x0, domain.y1 - domain.y0);
    if !(lx > 0.0) || !(ly > 0.0) {
        return Err(Error::DegenerateDomain(format!("side lengths {lx} x {ly}")));
    }
    let (dx, dy) = (lx / nx as f64, ly / ny as f64);
    let idx = |i: usize, j: usize| i * ny + j;
    let mut cells = Vec::with_capacity(nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let (xa, ya) = (domain.x0 + i as f64 * dx, domain.y0 + j as f64 * dy);
            let (xb, yb) = (xa + dx, ya + dy);
            cells.push(Cell {
                id: idx(i, j),
                center: [xa + 0.5 * dx, ya + 0.5 * dy],
                measure: dx * dy,
                diameter: dx.hypot(dy),
                vertices: vec![[xa, ya], [xb, ya], [xb, yb], [xa, yb]],
            });
        }
    }
    let mut edges = Vec::new();
    let mut push = |kind: EdgeKind, measure: f64, dk: f64, dl: Option<f64>, mid: Point, t: Point| {
        let dist = dk + dl.unwrap_or(0.0);
        edges.push(Edge {
            id: edges.len(),
            kind,
            measure,
            dist_k: dk,
            dist_l: dl,
            dist,
            transmissibility: measure / dist,
            midpoint: mid,
            tangent: t,
        });
    };
    let classify = |face: BoundaryFace, mid: Point, k: usize| -> Result<EdgeKind> {
        match classifier(face, mid) {
            Some(BoundaryKind::Dirichlet) => Ok(EdgeKind::Dirichlet { k }),
            Some(BoundaryKind::Neumann) => Ok(EdgeKind::Neumann { k }),
            None => Err(Error::UnassignedEdge { x: mid[0], y: mid[1] }),
        }
    };
    // Faces normal to x.
    for i in 0..=nx {
        for j in 0..ny {
            let mid = [domain.x0 + i as f64 * dx, domain.y0 + (j as f64 + 0.5) * dy];
            if i == 0 {
                let kind = classify(BoundaryFace::Left, mid, idx(0, j))?;
                push(kind, dy, 0.5 * dx, None, mid, [0.0, -1.0]);
            } else if i == nx {
                let kind = classify(BoundaryFace::Right, mid, idx(nx - 1, j))?;
                push(kind, dy, 0.5 * dx, None, mid, [0.0, 1.0]);
            } else {
                let kind = EdgeKind::Interior { k: idx(i - 1, j), l: idx(i, j) };
                push(kind, dy, 0.5 * dx, Some(0.5 * dx), mid, [0.0, 1.0]);
            }
        }
    }
    // Faces normal to y.
    for i in 0..nx {
        for j in 0..=ny {
            let mid = [domain.x0 + (i as f64 + 0.5) * dx, domain.y0 + j as f64 * dy];
            if j == 0 {
                let kind = classify(BoundaryFace::Bottom, mid, idx(i, 0))?;
                push(kind, dx, 0.5 * dy, None, mid, [1.0, 0.0]);
            } else if j == ny {
                let kind = classify(BoundaryFace::Top, mid, idx(i, ny - 1))?;
                push(kind, dx, 0.5 * dy, None, mid, [-1.0, 0.0]);
            } else {
                let kind = EdgeKind::Interior { k: idx(i, j - 1), l: idx(i, j) };
                push(kind, dx, 0.5 * dy, Some(0.5 * dy), mid, [-1.0, 0.0]);
            }
        }
    }
    Mesh::from_parts(cells, edges)
}

fn circumcenter(a: Point, b: Point, c: Point) -> Option<Point> {
    let d = 2.0 * (a[0] * (b[1] - c[1]) + b[0] * (c[1] - a[1]) + c[0] * (a[1] - b[1]));
    if d.abs() < f64::MIN_POSITIVE {
        return None;
    }
    let (a2, b2, c2) = (
        a[0] * a[0] + a[1] * a[1],
        b[0] * b[0] + b[1] * b[1],
        c[0] * c[0] + c[1] * c[1],
    );
    Some([
        (a2 * (b[1] - c[1]) + b2 * (c[1] - a[1]) + c2 * (a[1] - b[1])) / d,
        (a2 * (c[0] - b[0]) + b2 * (a[0] - c[0]) + c2 * (b[0] - a[0])) / d,
    ])
}

/// Builds a finite-volume mesh from a triangulation, using circumcenters as
/// cell points. Triangles are reoriented counter-clockwise. Admissibility is
/// not assumed; obtuse triangles produce negative signed distances.
pub fn mesh_from_triangles(
    vertices: &[Point],
    triangles: &[[usize; 3]],
    classifier: &dyn Fn(Point) -> Option<BoundaryKind>,
) -> Result<Mesh> {
    use std::collections::HashMap;
    let mut cells = Vec::with_capacity(triangles.len());
    let mut tris = Vec::with_capacity(triangles.len());
    for (t, tri) in triangles.iter().enumerate() {
        let [mut a, b, mut c] = *tri;
        if a.max(b).max(c) >= vertices.len() {
            return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
        }
        let area2 = |a: usize, b: usize, c: usize| {
            let (p, q, r) = (vertices[a], vertices[b], vertices[c]);
            (q[0] - p[0]) * (r[1] - p[1]) - (r[0] - p[0]) * (q[1] - p[1])
        };
        if area2(a, b, c) < 0.0 {
            std::mem::swap(&mut a, &mut c);
        }
        let area = 0.5 * area2(a, b, c);
        let (p, q, r) = (vertices[a], vertices[b], vertices[c]);
        let center = circumcenter(p, q, r)
            .ok_or_else(|| Error::InvalidMesh(format!("triangle {t} is degenerate")))?;
        let len = |u: Point, v: Point| (u[0] - v[0]).hypot(u[1] - v[1]);
        cells.push(Cell {
            id: t,
            center,
            measure: area,
            diameter: len(p, q).max(len(q, r)).max(len(r, p)),
            vertices: vec![p, q, r],
        });
        tris.push([a, b, c]);
    }
    // Collect triangle sides; the owner is the first triangle listing the side.
    let mut sides: HashMap<(usize, usize), (usize, usize, usize)> = HashMap::new();
    let mut order = Vec::new();
    for (t, tri) in tris.iter().enumerate() {
        for s in 0..3 {
            let (u, v) = (tri[s], tri[(s + 1) % 3]);
            let key = (u.min(v), u.max(v));
            match sides.get_mut(&key) {
                Some(entry) if entry.2 == usize::MAX => entry.2 = t,
                Some(_) => return Err(Error::InvalidMesh(format!("side {key:?} shared by >2 triangles"))),
                None => {
                    sides.insert(key, (u, v, usize::MAX));
                    order.push((key, t));
                }
            }
        }
    }
    let mut edges = Vec::with_capacity(order.len());
    for (key, k) in order {
        let (u, v, l) = sides[&key];
        let (p, q) = (vertices[u], vertices[v]);
        let measure = (q[0] - p[0]).hypot(q[1] - p[1]);
        // (u -> v) runs counter-clockwise around the owner, so (t_y, -t_x) points outward.
        let tangent = [(q[0] - p[0]) / measure, (q[1] - p[1]) / measure];
        let normal = [tangent[1], -tangent[0]];
        let mid = [0.5 * (p[0] + q[0]), 0.5 * (p[1] + q[1])];
        let signed = |x: Point, n: Point| (mid[0] - x[0]) * n[0] + (mid[1] - x[1]) * n[1];
        let dk = signed(cells[k].center, normal);
        let (kind, dl) = if l == usize::MAX {
            let kind = match classifier(mid) {
                Some(BoundaryKind::Dirichlet) => EdgeKind::Dirichlet { k },
                Some(BoundaryKind::Neumann) => EdgeKind::Neumann { k },
                None => return Err(Error::UnassignedEdge { x: mid[0], y: mid[1] }),
            };
            (kind, None)
        } else {
            let dl = signed(cells[l].center, [-normal[0], -normal[1]]);
            (EdgeKind::Interior { k, l }, Some(dl))
        };
        let dist = dk + dl.unwrap_or(0.0);
        edges.push(Edge {
            id: edges.len(),
            kind,
            measure,
            dist_k: dk,
            dist_l: dl,
            dist,
            transmissibility: measure / dist,
            midpoint: mid,
            tangent,
        });
    }
    Mesh::from_parts(cells, edges)
}

#[derive(Clone, Debug)]
pub struct OrthogonalityDefect {
    pub edge: usize,
    /// Angle between `x_L - x_K` and the edge normal, in radians.
    pub angle: f64,
}

#[derive(Clone, Debug)]
pub struct AdmissibilityReport {
    pub orthogonality_violations: Vec<OrthogonalityDefect>,
    pub max_angle_defect: f64,
    /// Edges whose stored distances disagree with the geometry or are non-positive.
    pub distance_violations: Vec<usize>,
    /// `ξ` recomputed from cell points, edge midpoints and normals.
    pub xi: f64,
    /// `ξ` from the distances stored in the mesh.
    pub xi_stored: f64,
    pub xi_min: f64,
    pub xi_ok: bool,
    pub dirichlet_measure: f64,
}

impl AdmissibilityReport {
    pub fn passed(&self) -> bool {
        self.orthogonality_violations.is_empty() && self.distance_violations.is_empty() && self.xi_ok
    }
}

/// Checks orthogonality of `x_K x_L` to each interior edge and the regularity
/// constraint `d(x_K, σ) ≥ ξ_min diam(K)`.
pub fn check_admissibility(mesh: &Mesh, xi_min: f64, angle_tol: f64) -> AdmissibilityReport {
    let mut orthogonality_violations = Vec::new();
    let mut distance_violations = Vec::new();
    let mut max_angle_defect: f64 = 0.0;
    let mut xi = f64::INFINITY;
    for e in mesh.edges() {
        let n = e.normal();
        let k = e.owner();
        let xk = mesh.cell(k).center;
        let dk = (e.midpoint[0] - xk[0]) * n[0] + (e.midpoint[1] - xk[1]) * n[1];
        xi = xi.min(dk / mesh.cell(k).diameter);
        let scale = e.dist.abs().max(1e-300);
        let mut bad_distance = dk <= 0.0 || (dk - e.dist_k).abs() > 1e-8 * scale;
        if let EdgeKind::Interior { l, .. } = e.kind {
            let xl = mesh.cell(l).center;
            let dl = -((e.midpoint[0] - xl[0]) * n[0] + (e.midpoint[1] - xl[1]) * n[1]);
            xi = xi.min(dl / mesh.cell(l).diameter);
            let v = [xl[0] - xk[0], xl[1] - xk[1]];
            let cross = v[0] * n[1] - v[1] * n[0];
            let dot = v[0] * n[0] + v[1] * n[1];
            let angle = cross.abs().atan2(dot);
            max_angle_defect = max_angle_defect.max(angle);
            if angle > angle_tol {
                orthogonality_violations.push(OrthogonalityDefect { edge: e.id, angle });
            }
            let dl_stored = e.dist_l.unwrap_or(f64::NAN);
            bad_distance |= dl <= 0.0
                || (dl - dl_stored).abs() > 1e-8 * scale
                || (v[0].hypot(v[1]) - e.dist).abs() > 1e-8 * scale;
        }
        if bad_distance {
            distance_violations.push(e.id);
        }
    }
    AdmissibilityReport {
        orthogonality_violations,
        max_angle_defect,
        distance_violations,
        xi,
        xi_stored: mesh.xi(),
        xi_min,
        xi_ok: xi >= xi_min,
        dirichlet_measure: mesh.dirichlet_measure(),
    }
}

/// Values per cell plus one value per Dirichlet edge (`u_M = (u_T, u_{E^D})`).
#[derive(Clone, Debug, PartialEq)]
pub struct MeshField<T> {
    pub cells: Vec<T>,
    pub dirichlet: Vec<T>,
}

pub type ScalarField = MeshField<f64>;
pub type VectorField = MeshField<Vec3>;

impl<T: Copy> MeshField<T> {
    pub fn new(mesh: &Mesh, cells: Vec<T>, dirichlet: Vec<T>) -> Result<Self> {
        if cells.len() != mesh.num_cells() || dirichlet.len() != mesh.num_dirichlet() {
            return Err(Error::SizeMismatch(format!(
                "field has {} cells / {} traces, mesh has {} / {}",
                cells.len(),
                dirichlet.len(),
                mesh.num_cells(),
                mesh.num_dirichlet()
            )));
        }
        Ok(MeshField { cells, dirichlet })
    }

    pub fn uniform(mesh: &Mesh, value: T) -> Self {
        MeshField { cells: vec![value; mesh.num_cells()], dirichlet: vec![value; mesh.num_dirichlet()] }
    }

    /// Cell values with one common Dirichlet trace.
    pub fn from_cells(mesh: &Mesh, cells: Vec<T>, trace: T) -> Result<Self> {
        MeshField::new(mesh, cells, vec![trace; mesh.num_dirichlet()])
    }

    pub fn matches(&self, mesh: &Mesh) -> bool {
        self.cells.len() == mesh.num_cells() && self.dirichlet.len() == mesh.num_dirichlet()
    }

    /// `u_{K,σ}`: the neighbor value across an interior edge, the trace on a
    /// Dirichlet edge, and `u_K` itself on a Neumann edge.
    #[inline]
    pub fn edge_value(&self, mesh: &Mesh, k: usize, edge: usize) -> T {
        let e = mesh.edge(edge);
        match e.kind {
            EdgeKind::Interior { .. } => self.cells[e.neighbor_of(k).expect("edge not adjacent to cell")],
            EdgeKind::Dirichlet { .. } => self.dirichlet[mesh.dirichlet_slot(edge).expect("dirichlet slot")],
            EdgeKind::Neumann { .. } => self.cells[k],
        }
    }
}

impl ScalarField {
    /// `D u_{K,σ} = u_{K,σ} - u_K`.
    #[inline]
    pub fn diff(&self, mesh: &Mesh, k: usize, edge: usize) -> f64 {
        self.edge_value(mesh, k, edge) - self.cells[k]
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        MeshField {
            cells: self.cells.iter().zip(&other.cells).map(|(&a, &b)| f(a, b)).collect(),
            dirichlet: self.dirichlet.iter().zip(&other.dirichlet).map(|(&a, &b)| f(a, b)).collect(),
        }
    }
}

/// Discrete `H^1` seminorm `(Σ_σ τ_σ |D u_{K,σ}|²)^{1/2}`.
pub fn h1_seminorm(mesh: &Mesh, u: &ScalarField) -> f64 {
    mesh.edges()
        .iter()
        .map(|e| e.transmissibility * u.diff(mesh, e.owner(), e.id).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Mesh-weighted `L^p` norm of the cell values; `p = f64::INFINITY` gives the max norm.
pub fn lp_norm(mesh: &Mesh, u: &[f64], p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidExponent(p));
    }
    if u.len() != mesh.num_cells() {
        return Err(Error::SizeMismatch("lp_norm".into()));
    }
    if p.is_infinite() {
        return Ok(u.iter().fold(0.0_f64, |m, v| m.max(v.abs())));
    }
    let s: f64 = mesh.cells().iter().zip(u).map(|(c, v)| c.measure * v.abs().powf(p)).sum();
    Ok(s.powf(1.0 / p))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Quadrature {
    #[default]
    Midpoint,
    /// 2×2 Gauss on quadrilaterals, the degree-2 edge-midpoint rule on triangles,
    /// two-point Gauss on edges.
    Gauss2x2,
}

fn polygon_centroid(v: &[Point]) -> Point {
    let (mut a, mut cx, mut cy) = (0.0, 0.0, 0.0);
    for i in 0..v.len() {
        let (p, q) = (v[i], v[(i + 1) % v.len()]);
        let w = p[0] * q[1] - q[0] * p[1];
        a += w;
        cx += (p[0] + q[0]) * w;
        cy += (p[1] + q[1]) * w;
    }
    [cx / (3.0 * a), cy / (3.0 * a)]
}

fn cell_integral_mean(cell: &Cell, f: &dyn Fn(Point) -> f64, rule: Quadrature) -> f64 {
    let v = &cell.vertices;
    match (rule, v.len()) {
        (_, 0) => f(cell.center),
        (Quadrature::Midpoint, _) => f(polygon_centroid(v)),
        (Quadrature::Gauss2x2, 3) => {
            let mid = |a: Point, b: Point| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            (f(mid(v[0], v[1])) + f(mid(v[1], v[2])) + f(mid(v[2], v[0]))) / 3.0
        }
        (Quadrature::Gauss2x2, 4) => {
            // Bilinear map of the reference square; weights are Jacobian-scaled.
            let g = 0.5 / 3f64.sqrt();
            let (mut sum, mut wsum) = (0.0, 0.0);
            for s in [0.5 - g, 0.5 + g] {
                for t in [0.5 - g, 0.5 + g] {
                    let x = |c: usize| {
                        (1.0 - s) * (1.0 - t) * v[0][c] + s * (1.0 - t) * v[1][c] + s * t * v[2][c]
                            + (1.0 - s) * t * v[3][c]
                    };
                    let dxs = [
                        (1.0 - t) * (v[1][0] - v[0][0]) + t * (v[2][0] - v[3][0]),
                        (1.0 - t) * (v[1][1] - v[0][1]) + t * (v[2][1] - v[3][1]),
                    ];
                    let dxt = [
                        (1.0 - s) * (v[3][0] - v[0][0]) + s * (v[2][0] - v[1][0]),
                        (1.0 - s) * (v[3][1] - v[0][1]) + s * (v[2][1] - v[1][1]),
                    ];
                    let jac = (dxs[0] * dxt[1] - dxs[1] * dxt[0]).abs();
                    sum += jac * f([x(0), x(1)]);
                    wsum += jac;
                }
            }
            sum / wsum
        }
        (Quadrature::Gauss2x2, _) => f(polygon_centroid(v)),
    }
}

fn edge_integral_mean(edge: &Edge, f: &dyn Fn(Point) -> f64, rule: Quadrature) -> f64 {
    match rule {
        Quadrature::Midpoint => f(edge.midpoint),
        Quadrature::Gauss2x2 => {
            let h = 0.5 * edge.measure / 3f64.sqrt();
            let p = |s: f64| [edge.midpoint[0] + s * edge.tangent[0], edge.midpoint[1] + s * edge.tangent[1]];
            0.5 * (f(p(-h)) + f(p(h)))
        }
    }
}

/// Cell means of `f` and means over each Dirichlet edge.
pub fn cell_average(mesh: &Mesh, f: &dyn Fn(Point) -> f64, rule: Quadrature) -> Result<ScalarField> {
    let cells: Vec<f64> = mesh.cells().iter().map(|c| cell_integral_mean(c, f, rule)).collect();
    if let Some(k) = cells.iter().position(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("cell {k}")));
    }
    let dirichlet: Vec<f64> = mesh
        .dirichlet_edges()
        .iter()
        .map(|&e| edge_integral_mean(mesh.edge(e), f, rule))
        .collect();
    if let Some(s) = dirichlet.iter().position(|v| !v.is_finite()) {
        return Err(Error::Quadrature(format!("dirichlet edge {}", mesh.dirichlet_edges()[s])));
    }
    Ok(MeshField { cells, dirichlet })
}

/// Parses the plain-text mesh format:
///
/// ```text
/// cells N edges M
/// id cx cy area diam                          (N lines)
/// id kind cellK [cellL] mx my tx ty length dK [dL]   (M lines, kind ∈ {I, D, N})
/// ```
///
/// `(mx, my)` is the edge midpoint and `(tx, ty)` its tangent, oriented so that
/// `(ty, -tx)` is the outward normal of `cellK`. Lines starting with `#` are ignored.
pub fn read_mesh(reader: impl BufRead) -> Result<Mesh> {
    let mut lines = reader
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| l.as_ref().map(|s| !s.trim().is_empty() && !s.trim_start().starts_with('#')).unwrap_or(true));
    let err = |line: usize, message: &str| Error::MeshImport { line, message: message.to_string() };
    let (hl, header) = lines.next().ok_or_else(|| err(0, "empty file"))?;
    let header = header?;
    let h: Vec<&str> = header.split_whitespace().collect();
    if h.len() != 4 || h[0] != "cells" || h[2] != "edges" {
        return Err(err(hl, "expected `cells N edges M`"));
    }
    let nc: usize = h[1].parse().map_err(|_| err(hl, "bad cell count"))?;
    let ne: usize = h[3].parse().map_err(|_| err(hl, "bad edge count"))?;
    let num = |line: usize, s: &str| -> Result<f64> { s.parse().map_err(|_| err(line, &format!("bad number `{s}`"))) };
    let int = |line: usize, s: &str| -> Result<usize> { s.parse().map_err(|_| err(line, &format!("bad index `{s}`"))) };
    let mut cells = Vec::with_capacity(nc);
    for _ in 0..nc {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "unexpected end of file in cells"))?;
        let l = l?;
        let t: Vec<&str> = l.split_whitespace().collect();
        if t.len() != 5 {
            return Err(err(ln, "cell line needs `id cx cy area diam`"));
        }
        cells.push(Cell {
            id: int(ln, t[0])?,
            center: [num(ln, t[1])?, num(ln, t[2])?],
            measure: num(ln, t[3])?,
            diameter: num(ln, t[4])?,
            vertices: Vec::new(),
        });
    }
    let mut edges = Vec::with_capacity(ne);
    for _ in 0..ne {
        let (ln, l) = lines.next().ok_or_else(|| err(0, "unexpected end of file in edges"))?;
        let l = l?;
        let t: Vec<&str> = l.split_whitespace().collect();
        let interior = t.get(1) == Some(&"I");
        let expected = if interior { 11 } else { 9 };
        if t.len() != expected {
            return Err(err(ln, &format!("edge line needs {expected} fields")));
        }
        let id = int(ln, t[0])?;
        let k = int(ln, t[2])?;
        let (kind, rest) = match t[1] {
            "I" => (EdgeKind::Interior { k, l: int(ln, t[3])? }, &t[4..]),
            "D" => (EdgeKind::Dirichlet { k }, &t[3..]),
            "N" => (EdgeKind::Neumann { k }, &t[3..]),
            other => return Err(err(ln, &format!("unknown edge kind `{other}`"))),
        };
        let measure = num(ln, rest[4])?;
        let dk = num(ln, rest[5])?;
        let dl = if interior { Some(num(ln, rest[6])?) } else { None };
        let dist = dk + dl.unwrap_or(0.0);
        edges.push(Edge {
            id,
            kind,
            measure,
            dist_k: dk,
            dist_l: dl,
            dist,
            transmissibility: measure / dist,
            midpoint: [num(ln, rest[0])?, num(ln, rest[1])?],
            tangent: [num(ln, rest[2])?, num(ln, rest[3])?],
        });
    }
    Mesh::from_parts(cells, edges)
}

/// Writes a mesh in the format accepted by [`read_mesh`].
pub fn write_mesh(mesh: &Mesh, mut w: impl Write) -> Result<()> {
    writeln!(w, "cells {} edges {}", mesh.num_cells(), mesh.num_edges())?;
    for c in mesh.cells() {
        writeln!(w, "{} {:e} {:e} {:e} {:e}", c.id, c.center[0], c.center[1], c.measure, c.diameter)?;
    }
    for e in mesh.edges() {
        let geom = format!(
            "{:e} {:e} {:e} {:e} {:e}",
            e.midpoint[0], e.midpoint[1], e.tangent[0], e.tangent[1], e.measure
        );
        match e.kind {
            EdgeKind::Interior { k, l } => {
                writeln!(w, "{} I {k} {l} {geom} {:e} {:e}", e.id, e.dist_k, e.dist_l.unwrap_or(0.0))?
            }
            EdgeKind::Dirichlet { k } => writeln!(w, "{} D {k} {geom} {:e}", e.id, e.dist_k)?,
            EdgeKind::Neumann { k } => writeln!(w, "{} N {k} {geom} {:e}", e.id, e.dist_k)?,
        }
    }
    Ok(())
}

/// CSV dump `cell_id,x,y,<columns>...`.
pub fn write_field_csv(mesh: &Mesh, columns: &[(&str, &[f64])], mut w: impl Write) -> Result<()> {
    for (name, col) in columns {
        if col.len() != mesh.num_cells() {
            return Err(Error::SizeMismatch(format!("column {name}")));
        }
    }
    write!(w, "cell_id,x,y")?;
    for (name, _) in columns {
        write!(w, ",{name}")?;
    }
    writeln!(w)?;
    for c in mesh.cells() {
        write!(w, "{},{:.12e},{:.12e}", c.id, c.center[0], c.center[1])?;
        for (_, col) in columns {
            write!(w, ",{:.12e}", col[c.id])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lr_dirichlet(face: BoundaryFace, _: Point) -> Option<BoundaryKind> {
        match face {
            BoundaryFace::Left | BoundaryFace::Right => Some(BoundaryKind::Dirichlet),
            _ => Some(BoundaryKind::Neumann),
        }
    }

    fn all_neumann(_: BoundaryFace, _: Point) -> Option<BoundaryKind> {
        Some(BoundaryKind::Neumann)
    }

    #[test]
    fn single_cell_mesh() {
        let m = build_rect_mesh(1, 1, Rect::unit(), &all_neumann).unwrap();
        assert_eq!(m.num_cells(), 1);
        assert_eq!(m.num_edges(), 4);
        assert!(m.edges().iter().all(|e| e.is_exterior()));
        assert_eq!(m.cell(0).measure, 1.0);
    }

    #[test]
    fn two_by_one_interior_edge() {
        let m = build_rect_mesh(2, 1, Rect::unit(), &all_neumann).unwrap();
        let interior: Vec<_> = m.edges().iter().filter(|e| !e.is_exterior()).collect();
        assert_eq!(interior.len(), 1);
        let e = interior[0];
        assert_eq!(e.measure, 1.0);
        assert_eq!(e.dist, 0.5);
        assert_eq!(e.transmissibility, 2.0);
    }

    #[test]
    fn square_cells_regularity_constant() {
        let m = build_rect_mesh(4, 4, Rect::unit(), &all_neumann).unwrap();
        assert_relative_eq!(m.xi(), 1.0 / (2.0 * 2f64.sqrt()), max_relative = 1e-14);
        let r = check_admissibility(&m, 0.3, 1e-10);
        assert!(r.passed());
        assert_eq!(r.max_angle_defect, 0.0);
        assert_relative_eq!(r.xi, m.xi(), max_relative = 1e-14);
    }

    #[test]
    fn degenerate_and_unassigned() {
        assert!(matches!(
            build_rect_mesh(2, 2, Rect::new(0.0, 0.0, 0.0, 1.0), &all_neumann),
            Err(Error::DegenerateDomain(_))
        ));
        assert!(matches!(build_rect_mesh(0, 2, Rect::unit(), &all_neumann), Err(Error::DegenerateDomain(_))));
        let partial = |face: BoundaryFace, _: Point| (face != BoundaryFace::Top).then_some(BoundaryKind::Neumann);
        assert!(matches!(build_rect_mesh(2, 2, Rect::unit(), &partial), Err(Error::UnassignedEdge { .. })));
    }

    #[test]
    fn acute_triangles_are_admissible() {
        // Two equilateral-ish acute triangles sharing a side.
        let v = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.8], [0.5, -0.8]];
        let m = mesh_from_triangles(&v, &[[0, 1, 2], [1, 0, 3]], &|_| Some(BoundaryKind::Dirichlet)).unwrap();
        let r = check_admissibility(&m, 0.05, 1e-10);
        assert!(r.passed(), "{r:?}");
        assert!(r.max_angle_defect < 1e-12);
        assert!(r.xi > 0.0);
        assert_relative_eq!(r.xi, r.xi_stored, max_relative = 1e-10);
    }

    #[test]
    fn obtuse_triangle_is_rejected() {
        // Apex angle at vertex 2 is > π/2: the circumcenter lies below side (0,1),
        // outside the upper triangle.
        let v = [[0.0, 0.0], [1.0, 0.0], [0.5, 0.2], [0.5, -3.0]];
        let m = mesh_from_triangles(&v, &[[0, 1, 2], [1, 0, 3]], &|_| Some(BoundaryKind::Dirichlet)).unwrap();
        let c = m.cell(0).center;
        // Hand check: circumcenter of (0,0),(1,0),(0.5,0.2) is (0.5, (0.04-0.25)/0.4) = (0.5, -0.525).
        assert_relative_eq!(c[0], 0.5, epsilon = 1e-14);
        assert_relative_eq!(c[1], -0.525, epsilon = 1e-14);
        let r = check_admissibility(&m, 0.0, 1e-10);
        assert!(!r.passed());
        assert!(!r.xi_ok);
        assert!(r.xi < 0.0);
    }

    #[test]
    fn cell_average_examples() {
        let m = build_rect_mesh(2, 1, Rect::unit(), &lr_dirichlet).unwrap();
        let c = cell_average(&m, &|_| 3.5, Quadrature::Midpoint).unwrap();
        assert!(c.cells.iter().chain(&c.dirichlet).all(|&v| v == 3.5));
        let lin = cell_average(&m, &|p| p[0], Quadrature::Midpoint).unwrap();
        assert_eq!(lin.cells, vec![0.25, 0.75]);
        let one = build_rect_mesh(1, 1, Rect::unit(), &all_neumann).unwrap();
        let sq = cell_average(&one, &|p| p[0] * p[0], Quadrature::Gauss2x2).unwrap();
        assert_relative_eq!(sq.cells[0], 1.0 / 3.0, max_relative = 1e-14);
        let mid = cell_average(&one, &|p| p[0] * p[0], Quadrature::Midpoint).unwrap();
        assert_eq!(mid.cells[0], 0.25);
        assert!(matches!(cell_average(&one, &|_| f64::NAN, Quadrature::Midpoint), Err(Error::Quadrature(_))));
    }

    #[test]
    fn h1_examples() {
        let m = build_rect_mesh(2, 1, Rect::unit(), &all_neumann).unwrap();
        let c = ScalarField::uniform(&m, 2.0);
        assert_eq!(h1_seminorm(&m, &c), 0.0);
        let u = ScalarField::from_cells(&m, vec![0.0, 1.0], 0.0).unwrap();
        assert_relative_eq!(h1_seminorm(&m, &u), 2f64.sqrt(), max_relative = 1e-15);

        let md = build_rect_mesh(2, 1, Rect::unit(), &lr_dirichlet).unwrap();
        let left = md.dirichlet_edges().iter().position(|&e| md.edge(e).midpoint[0] == 0.0).unwrap();
        let mut tr = vec![0.0; 2];
        tr[1 - left] = 1.0;
        let u = ScalarField::new(&md, vec![0.0, 1.0], tr).unwrap();
        for &e in md.dirichlet_edges() {
            assert_eq!(md.edge(e).transmissibility, 4.0);
        }
        assert_relative_eq!(h1_seminorm(&md, &u), 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn lp_examples() {
        let m = build_rect_mesh(2, 1, Rect::unit(), &all_neumann).unwrap();
        assert_relative_eq!(lp_norm(&m, &[1.0, 1.0], 2.0).unwrap(), 1.0);
        assert_eq!(lp_norm(&m, &[3.0, -4.0], f64::INFINITY).unwrap(), 4.0);
        assert_relative_eq!(lp_norm(&m, &[1.0, 2.0], 2.0).unwrap(), 2.5f64.sqrt(), max_relative = 1e-15);
        assert!(matches!(lp_norm(&m, &[1.0, 2.0], 0.5), Err(Error::InvalidExponent(_))));
    }

    #[test]
    fn neumann_differences_vanish() {
        let m = build_rect_mesh(3, 2, Rect::unit(), &lr_dirichlet).unwrap();
        let u = ScalarField::new(&m, (0..6).map(|i| i as f64 * 1.7).collect(), vec![9.0; m.num_dirichlet()]).unwrap();
        for e in m.edges() {
            if let EdgeKind::Neumann { k } = e.kind {
                assert_eq!(u.diff(&m, k, e.id), 0.0);
            }
        }
    }

    #[test]
    fn import_round_trip() {
        let m = build_rect_mesh(3, 2, Rect::new(0.0, 0.0, 1.5, 0.5), &lr_dirichlet).unwrap();
        let mut buf = Vec::new();
        write_mesh(&m, &mut buf).unwrap();
        let back = read_mesh(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back.num_cells(), m.num_cells());
        assert_eq!(back.num_dirichlet(), m.num_dirichlet());
        for (a, b) in m.edges().iter().zip(back.edges()) {
            assert_eq!(a.kind, b.kind);
            assert_relative_eq!(a.transmissibility, b.transmissibility, max_relative = 1e-14);
        }
        assert!(check_admissibility(&back, 0.1, 1e-10).passed());
        assert!(read_mesh(std::io::Cursor::new("cells 1 edges 0\n0 0 0 1\n")).is_err());
    }

    proptest! {
        // Discrete integration by parts for conservative flux sets.
        #[test]
        fn integration_by_parts(nx in 1usize..5, ny in 1usize..4, seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let m = build_rect_mesh(nx, ny, Rect::unit(), &|f, _| Some(if f == BoundaryFace::Left || f == BoundaryFace::Top { BoundaryKind::Dirichlet } else { BoundaryKind::Neumann })).unwrap();
            let u = ScalarField::new(
                &m,
                (0..m.num_cells()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
                (0..m.num_dirichlet()).map(|_| rng.gen_range(-2.0..2.0)).collect(),
            ).unwrap();
            // Flux per edge, oriented out of the owner; zero on Neumann edges.
            let flux: Vec<f64> = m.edges().iter().map(|e| if matches!(e.kind, EdgeKind::Neumann { .. }) { 0.0 } else { rng.gen_range(-1.0..1.0) }).collect();
            let mut lhs = 0.0;
            for k in 0..m.num_cells() {
                for &e in m.cell_edges(k) {
                    let sign = if m.edge(e).owner() == k { 1.0 } else { -1.0 };
                    lhs += sign * flux[e] * u.cells[k];
                }
            }
            let mut rhs = 0.0;
            for e in m.edges() {
                rhs -= flux[e.id] * u.diff(&m, e.owner(), e.id);
                if e.is_dirichlet() {
                    rhs += flux[e.id] * u.edge_value(&m, e.owner(), e.id);
                }
            }
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()));
        }
    }
}
