//! Hierarchical three-line refinement of a coarse triangulation.
//!
//! Inside subdomain `k` with counterclockwise vertices `(Va, Vb, Vc)` and
//! `n = 2^level`, node `(i, j)` (1-based, `j = 1..=n+1`, `i = j..=n+1`) sits at
//! `Va + (i-1)/n (Vb - Va) + (j-1)/n (Vc - Vb)`. Edge families:
//!
//! * `e3(i,j)`: `(i,j) -> (i+1,j)`, parallel to `VaVb` (coarse side 3),
//! * `e2(i,j)`: `(i,j) -> (i+1,j+1)`, parallel to `VaVc` (coarse side 2),
//! * `e1(i,j)`: `(i,j) -> (i,j+1)`, parallel to `VbVc` (coarse side 1).
//!
//! Coarse side `m` is the side opposite vertex `m`. Elements `Up(i,j)` have
//! vertices `(i,j), (i+1,j), (i+1,j+1)`; `Down(i,j)` have
//! `(i+1,j+1), (i,j+1), (i,j)`. In both cases the edge opposite local vertex `r`
//! belongs to family `r`, so the reference edge index and the family coincide.

use serde::Serialize;

use super::coarse::{BoundaryKind, CoarseMesh};
use crate::error::MeshError;
use crate::reference::{AffineMap, Mat2, Orientation, Vec2};

/// Classification of a fine edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum EdgeClass {
    SubdomainInterior,
    Interface,
    DirichletBoundary,
    NeumannBoundary,
}

impl EdgeClass {
    /// Edges carrying a Lagrange multiplier.
    pub fn has_multiplier(self) -> bool {
        matches!(self, EdgeClass::Interface | EdgeClass::NeumannBoundary)
    }
}

/// Structured label of a fine edge inside one subdomain (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct EdgeLabel {
    pub i: usize,
    pub j: usize,
    pub m: usize,
}

/// Structured label of a fine element inside one subdomain (1-based).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ElementLabel {
    pub i: usize,
    pub j: usize,
    pub orientation: Orientation,
}

/// Per-subdomain geometry shared by all its fine elements.
#[derive(Debug, Clone)]
pub struct SubdomainGeometry {
    pub vertices: [Vec2; 3],
    /// Jacobian matrix of every `Up` element; `Down` elements use `-up_b`.
    pub up_b: Mat2,
    /// Element jacobian determinant `|det B|`.
    pub jac: f64,
    /// Fine edge lengths `l_1, l_2, l_3` by family.
    pub lengths: [f64; 3],
    /// Outward unit normal of coarse side `m`, used as DOF normal for family `m`.
    pub normals: [Vec2; 3],
    pub element_area: f64,
}

/// Degree-of-freedom counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct DofCounts {
    pub n_v: usize,
    pub n_vtilde: usize,
    pub n_w: usize,
    pub n_l: usize,
    pub n_e: usize,
    pub n_e_gamma: usize,
    pub n_e_d: usize,
    pub n_e_n: usize,
}

/// Refined mesh with global numbering.
///
/// Elements are numbered `k * n^2 + local` and velocity DOFs
/// `k * edges_per_subdomain + local`, so every subdomain owns a contiguous
/// range. Interface edges carry one velocity DOF per adjacent subdomain.
#[derive(Debug, Clone)]
pub struct HierMesh {
    pub coarse: CoarseMesh,
    pub level: u32,
    /// Subdivisions per coarse side, `2^level`.
    pub n: usize,
    pub geometry: Vec<SubdomainGeometry>,
    local_edges: Vec<EdgeLabel>,
    local_elements: Vec<ElementLabel>,
    /// Local edge indices of each local element, by family.
    element_edges: Vec<[usize; 3]>,
    /// `(Up owner, Down owner)` of each local edge.
    edge_owners: Vec<(usize, Option<usize>)>,
    /// Coarse side and position of local boundary edges.
    edge_side: Vec<Option<(usize, usize)>>,
    /// Local edges of coarse side `m`, ordered from its start vertex.
    side_edges: [Vec<usize>; 3],
    dof_edge: Vec<usize>,
    edge_dofs: Vec<(usize, Option<usize>)>,
    edge_class: Vec<EdgeClass>,
    multiplier_edges: Vec<usize>,
    edge_multiplier: Vec<Option<usize>>,
}

fn local_edge_table(n: usize) -> Vec<EdgeLabel> {
    let mut out = Vec::with_capacity(3 * n * (n + 1) / 2);
    for j in 1..=n {
        for i in j..=n + 1 {
            for m in 1..=3 {
                let exists = match m {
                    1 => i > j,
                    _ => i <= n,
                };
                if exists {
                    out.push(EdgeLabel { i, j, m });
                }
            }
        }
    }
    out
}

fn local_element_table(n: usize) -> Vec<ElementLabel> {
    let mut out = Vec::with_capacity(n * n);
    for j in 1..=n {
        for i in j..=n {
            out.push(ElementLabel {
                i,
                j,
                orientation: Orientation::Up,
            });
            if i > j {
                out.push(ElementLabel {
                    i,
                    j,
                    orientation: Orientation::Down,
                });
            }
        }
    }
    out
}

/// Start vertex (global id) of coarse side `m` of a counterclockwise triangle.
fn side_start(tri: [usize; 3], m: usize) -> usize {
    match m {
        0 => tri[1],
        _ => tri[0],
    }
}

impl HierMesh {
    /// Refine every coarse triangle `level` times and number the result.
    pub fn refine(coarse: CoarseMesh, level: u32) -> Result<Self, MeshError> {
        let n = 1usize << level;
        let local_edges = local_edge_table(n);
        let local_elements = local_element_table(n);
        let e_loc = local_edges.len();

        let mut mesh = HierMesh {
            coarse,
            level,
            n,
            geometry: Vec::new(),
            local_edges,
            local_elements,
            element_edges: Vec::new(),
            edge_owners: Vec::new(),
            edge_side: vec![None; e_loc],
            side_edges: [Vec::new(), Vec::new(), Vec::new()],
            dof_edge: Vec::new(),
            edge_dofs: Vec::new(),
            edge_class: Vec::new(),
            multiplier_edges: Vec::new(),
            edge_multiplier: Vec::new(),
        };
        mesh.build_geometry()?;
        mesh.build_local_topology();
        mesh.classify_edges()?;
        Ok(mesh)
    }

    fn build_geometry(&mut self) -> Result<(), MeshError> {
        let scale = 1.0 / self.n as f64;
        for k in 0..self.coarse.num_subdomains() {
            let v = self.coarse.triangle(k);
            let map = AffineMap::new(v).map_err(|_| MeshError::DegenerateTriangle {
                index: k,
                vertices: self.coarse.triangles[k],
            })?;
            let coarse_len = [(v[2] - v[1]).norm(), (v[2] - v[0]).norm(), (v[1] - v[0]).norm()];
            let mut normals = [Vec2::zeros(); 3];
            for (m, nm) in normals.iter_mut().enumerate() {
                let a = v[(m + 1) % 3];
                let b = v[(m + 2) % 3];
                let d = b - a;
                *nm = Vec2::new(d.y, -d.x) / d.norm();
            }
            let area = crate::reference::signed_area(v);
            self.geometry.push(SubdomainGeometry {
                vertices: v,
                up_b: map.b * scale,
                jac: map.jac * scale * scale,
                lengths: coarse_len.map(|l| l * scale),
                normals,
                element_area: area * scale * scale,
            });
        }
        Ok(())
    }

    fn build_local_topology(&mut self) {
        let n = self.n;
        let e_loc = self.local_edges.len();
        let mut owners: Vec<(Option<usize>, Option<usize>)> = vec![(None, None); e_loc];
        let mut element_edges = Vec::with_capacity(self.local_elements.len());
        for (loc, el) in self.local_elements.iter().enumerate() {
            let (i, j) = (el.i, el.j);
            let edges = match el.orientation {
                Orientation::Up => [
                    local_edge_index(n, i + 1, j, 1),
                    local_edge_index(n, i, j, 2),
                    local_edge_index(n, i, j, 3),
                ],
                Orientation::Down => [
                    local_edge_index(n, i, j, 1),
                    local_edge_index(n, i, j, 2),
                    local_edge_index(n, i, j + 1, 3),
                ],
            };
            for &e in &edges {
                match el.orientation {
                    Orientation::Up => owners[e].0 = Some(loc),
                    Orientation::Down => owners[e].1 = Some(loc),
                }
            }
            element_edges.push(edges);
        }
        self.edge_owners = owners
            .into_iter()
            .map(|(u, d)| (u.expect("every edge has an Up owner"), d))
            .collect();
        self.element_edges = element_edges;

        for t in 0..n {
            let s1 = local_edge_index(n, n + 1, t + 1, 1);
            let s2 = local_edge_index(n, t + 1, t + 1, 2);
            let s3 = local_edge_index(n, t + 1, 1, 3);
            self.side_edges[0].push(s1);
            self.side_edges[1].push(s2);
            self.side_edges[2].push(s3);
            self.edge_side[s1] = Some((0, t));
            self.edge_side[s2] = Some((1, t));
            self.edge_side[s3] = Some((2, t));
        }
    }

    /// Assign global edge ids, classes and multiplier numbering.
    fn classify_edges(&mut self) -> Result<(), MeshError> {
        let s = self.coarse.num_subdomains();
        let e_loc = self.local_edges.len();
        let n = self.n;
        let tol = 1e-12 * self.coarse.diameter();

        // coarse edge id of every (subdomain, side)
        let mut side_coarse = vec![[usize::MAX; 3]; s];
        for (c, ce) in self.coarse.edges.iter().enumerate() {
            for &(t, side) in &ce.sides {
                side_coarse[t][side] = c;
            }
        }

        self.dof_edge = vec![usize::MAX; s * e_loc];
        self.edge_dofs.clear();
        self.edge_class.clear();
        for k in 0..s {
            for le in 0..e_loc {
                let dof = k * e_loc + le;
                let mut class = EdgeClass::SubdomainInterior;
                let mut mate: Option<usize> = None;
                if let Some((m, t)) = self.edge_side[le] {
                    let ce = &self.coarse.edges[side_coarse[k][m]];
                    class = match (ce.sides.len(), ce.marker) {
                        (2, _) => EdgeClass::Interface,
                        (_, Some(BoundaryKind::Dirichlet)) => EdgeClass::DirichletBoundary,
                        (_, Some(BoundaryKind::Neumann)) => EdgeClass::NeumannBoundary,
                        _ => unreachable!("coarse mesh validated"),
                    };
                    if class == EdgeClass::Interface {
                        let &(k2, m2) = ce.sides.iter().find(|&&(t2, _)| t2 != k).expect("two sides");
                        if k2 < k {
                            let same = side_start(self.coarse.triangles[k], m)
                                == side_start(self.coarse.triangles[k2], m2);
                            let t2 = if same { t } else { n - 1 - t };
                            let dof2 = k2 * e_loc + self.side_edges[m2][t2];
                            let d = (self.dof_midpoint(dof) - self.dof_midpoint(dof2)).norm();
                            if !(d <= tol) {
                                return Err(MeshError::InterfaceMismatch(k2, k));
                            }
                            mate = Some(dof2);
                        }
                    }
                }
                match mate {
                    Some(dof2) => {
                        let g = self.dof_edge[dof2];
                        self.dof_edge[dof] = g;
                        self.edge_dofs[g].1 = Some(dof);
                    }
                    None => {
                        self.dof_edge[dof] = self.edge_dofs.len();
                        self.edge_dofs.push((dof, None));
                        self.edge_class.push(class);
                    }
                }
            }
        }
        for (g, &(_, second)) in self.edge_dofs.iter().enumerate() {
            if self.edge_class[g] == EdgeClass::Interface && second.is_none() {
                let k = self.edge_dofs[g].0 / e_loc;
                return Err(MeshError::InterfaceMismatch(k, k));
            }
        }
        self.multiplier_edges = (0..self.edge_class.len())
            .filter(|&g| self.edge_class[g].has_multiplier())
            .collect();
        self.edge_multiplier = vec![None; self.edge_class.len()];
        for (l, &g) in self.multiplier_edges.iter().enumerate() {
            self.edge_multiplier[g] = Some(l);
        }
        Ok(())
    }

    pub fn num_subdomains(&self) -> usize {
        self.coarse.num_subdomains()
    }

    pub fn elements_per_subdomain(&self) -> usize {
        self.n * self.n
    }

    pub fn edges_per_subdomain(&self) -> usize {
        self.local_edges.len()
    }

    pub fn num_elements(&self) -> usize {
        self.num_subdomains() * self.elements_per_subdomain()
    }

    pub fn num_dofs(&self) -> usize {
        self.dof_edge.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edge_class.len()
    }

    pub fn num_multipliers(&self) -> usize {
        self.multiplier_edges.len()
    }

    pub fn dof_counts(&self) -> DofCounts {
        let count = |c: EdgeClass| self.edge_class.iter().filter(|&&x| x == c).count();
        let n_e = self.num_edges();
        let n_e_d = count(EdgeClass::DirichletBoundary);
        let n_e_n = count(EdgeClass::NeumannBoundary);
        let n_e_gamma = count(EdgeClass::Interface) + n_e_n;
        DofCounts {
            n_v: n_e + n_e_gamma - n_e_n,
            n_vtilde: 2 * n_e - n_e_d - n_e_n,
            n_w: self.num_elements(),
            n_l: n_e_gamma,
            n_e,
            n_e_gamma,
            n_e_d,
            n_e_n,
        }
    }

    pub fn edge_class(&self, edge: usize) -> EdgeClass {
        self.edge_class[edge]
    }

    pub fn edge_classes(&self) -> &[EdgeClass] {
        &self.edge_class
    }

    /// Velocity DOFs of a global edge (two for interface edges).
    pub fn edge_dofs(&self, edge: usize) -> (usize, Option<usize>) {
        self.edge_dofs[edge]
    }

    pub fn dof_edge(&self, dof: usize) -> usize {
        self.dof_edge[dof]
    }

    /// Global edges carrying multipliers, in multiplier order.
    pub fn multiplier_edges(&self) -> &[usize] {
        &self.multiplier_edges
    }

    pub fn edge_multiplier(&self, edge: usize) -> Option<usize> {
        self.edge_multiplier[edge]
    }

    pub fn dof_multiplier(&self, dof: usize) -> Option<usize> {
        self.edge_multiplier[self.dof_edge[dof]]
    }

    pub fn dof_class(&self, dof: usize) -> EdgeClass {
        self.edge_class[self.dof_edge[dof]]
    }

    pub fn dof_subdomain(&self, dof: usize) -> usize {
        dof / self.edges_per_subdomain()
    }

    pub fn dof_label(&self, dof: usize) -> EdgeLabel {
        self.local_edges[dof % self.edges_per_subdomain()]
    }

    pub fn element_subdomain(&self, elem: usize) -> usize {
        elem / self.elements_per_subdomain()
    }

    pub fn element_label(&self, elem: usize) -> ElementLabel {
        self.local_elements[elem % self.elements_per_subdomain()]
    }

    pub fn local_edge_labels(&self) -> &[EdgeLabel] {
        &self.local_edges
    }

    pub fn local_element_labels(&self) -> &[ElementLabel] {
        &self.local_elements
    }

    /// Local edge indices of a local element, by family.
    pub fn local_element_edges(&self, local: usize) -> [usize; 3] {
        self.element_edges[local]
    }

    /// `(Up, Down)` local owners of a local edge.
    pub fn local_edge_owners(&self, local: usize) -> (usize, Option<usize>) {
        self.edge_owners[local]
    }

    /// Velocity DOFs of an element, by family.
    pub fn element_dofs(&self, elem: usize) -> [usize; 3] {
        let k = self.element_subdomain(elem);
        let base = k * self.edges_per_subdomain();
        self.element_edges[elem % self.elements_per_subdomain()].map(|e| base + e)
    }

    /// Elements (in the DOF's own subdomain) adjacent to a velocity DOF.
    pub fn dof_elements(&self, dof: usize) -> (usize, Option<usize>) {
        let k = self.dof_subdomain(dof);
        let base = k * self.elements_per_subdomain();
        let (u, d) = self.edge_owners[dof % self.edges_per_subdomain()];
        (base + u, d.map(|d| base + d))
    }

    /// The velocity DOF representing the same edge from the other side, if any.
    pub fn dof_mate(&self, dof: usize) -> Option<usize> {
        match self.edge_dofs[self.dof_edge[dof]] {
            (a, Some(b)) if a == dof => Some(b),
            (a, Some(_)) => Some(a),
            _ => None,
        }
    }

    /// Neighbor of `elem` across its edge of family `m` (0-based), crossing
    /// interfaces. `None` on the domain boundary.
    pub fn neighbor(&self, elem: usize, m: usize) -> Option<usize> {
        let dof = self.element_dofs(elem)[m];
        let (u, d) = self.dof_elements(dof);
        if let Some(d) = d {
            return Some(if d == elem { u } else { d });
        }
        self.dof_mate(dof).map(|other| self.dof_elements(other).0)
    }

    /// Local element index of `(i, j, orientation)`.
    pub fn local_element_index(&self, i: usize, j: usize, o: Orientation) -> Option<usize> {
        local_element_index(self.n, i, j, o)
    }

    /// Global id of the edge `e^m_{i,j}` of subdomain `k`.
    pub fn edge_global_id(&self, k: usize, i: usize, j: usize, m: usize) -> Result<usize, MeshError> {
        let n = self.n;
        let ok = k < self.num_subdomains()
            && (1..=n).contains(&j)
            && match m {
                1 => i > j && i <= n + 1,
                2 | 3 => i >= j && i <= n,
                _ => false,
            };
        if !ok {
            return Err(MeshError::IndexOutOfRange { subdomain: k, i, j, m });
        }
        Ok(self.dof_edge[k * self.edges_per_subdomain() + local_edge_index(n, i, j, m)])
    }

    /// Grid node `(i, j)` of subdomain `k`.
    pub fn node(&self, k: usize, i: usize, j: usize) -> Vec2 {
        let v = &self.geometry[k].vertices;
        let n = self.n as f64;
        v[0] + (v[1] - v[0]) * ((i - 1) as f64 / n) + (v[2] - v[1]) * ((j - 1) as f64 / n)
    }

    /// Element vertices in local reference order.
    pub fn element_vertices(&self, elem: usize) -> [Vec2; 3] {
        let k = self.element_subdomain(elem);
        let el = self.element_label(elem);
        let (i, j) = (el.i, el.j);
        match el.orientation {
            Orientation::Up => [self.node(k, i, j), self.node(k, i + 1, j), self.node(k, i + 1, j + 1)],
            Orientation::Down => [self.node(k, i + 1, j + 1), self.node(k, i, j + 1), self.node(k, i, j)],
        }
    }

    pub fn element_centroid(&self, elem: usize) -> Vec2 {
        let v = self.element_vertices(elem);
        (v[0] + v[1] + v[2]) / 3.0
    }

    pub fn element_area(&self, elem: usize) -> f64 {
        self.geometry[self.element_subdomain(elem)].element_area
    }

    pub fn element_orientation(&self, elem: usize) -> Orientation {
        self.element_label(elem).orientation
    }

    /// Jacobian matrix `B` of the element's affine map.
    pub fn element_b(&self, elem: usize) -> Mat2 {
        let g = &self.geometry[self.element_subdomain(elem)];
        g.up_b * self.element_orientation(elem).sign()
    }

    /// Endpoints of the edge of a velocity DOF.
    pub fn dof_endpoints(&self, dof: usize) -> [Vec2; 2] {
        let k = self.dof_subdomain(dof);
        let EdgeLabel { i, j, m } = self.dof_label(dof);
        let a = self.node(k, i, j);
        let b = match m {
            1 => self.node(k, i, j + 1),
            2 => self.node(k, i + 1, j + 1),
            _ => self.node(k, i + 1, j),
        };
        [a, b]
    }

    pub fn dof_midpoint(&self, dof: usize) -> Vec2 {
        let [a, b] = self.dof_endpoints(dof);
        (a + b) * 0.5
    }

    pub fn dof_length(&self, dof: usize) -> f64 {
        let m = self.dof_label(dof).m;
        self.geometry[self.dof_subdomain(dof)].lengths[m - 1]
    }

    /// Unit normal the DOF's coefficient refers to.
    pub fn dof_normal(&self, dof: usize) -> Vec2 {
        let m = self.dof_label(dof).m;
        self.geometry[self.dof_subdomain(dof)].normals[m - 1]
    }

    pub fn element_range(&self, k: usize) -> std::ops::Range<usize> {
        let e = self.elements_per_subdomain();
        k * e..(k + 1) * e
    }

    pub fn dof_range(&self, k: usize) -> std::ops::Range<usize> {
        let e = self.edges_per_subdomain();
        k * e..(k + 1) * e
    }

    /// `true` when all nine stencil neighbors of the element lie in its subdomain.
    pub fn is_interior(&self, elem: usize) -> bool {
        let el = self.element_label(elem);
        let (i, j) = (el.i as isize, el.j as isize);
        let same = [(0, 1), (1, 1), (-1, 0), (1, 0), (-1, -1), (0, -1)];
        let (other, cross): (Orientation, [(isize, isize); 3]) = match el.orientation {
            Orientation::Up => (Orientation::Down, [(0, 0), (1, 0), (0, -1)]),
            Orientation::Down => (Orientation::Up, [(0, 1), (-1, 0), (0, 0)]),
        };
        let exists = |di: isize, dj: isize, o: Orientation| {
            let (a, b) = (i + di, j + dj);
            a >= 1 && b >= 1 && local_element_index(self.n, a as usize, b as usize, o).is_some()
        };
        same.iter().all(|&(di, dj)| exists(di, dj, el.orientation))
            && cross.iter().all(|&(di, dj)| exists(di, dj, other))
    }
}

/// Local index of edge `e^m_{i,j}` in `(j, i, m)` lexicographic order.
pub fn local_edge_index(n: usize, i: usize, j: usize, m: usize) -> usize {
    let jm = j - 1;
    let row = 3 * (jm * (n + 1) - jm * j / 2);
    if i == j {
        row + m - 2
    } else {
        row + 2 + 3 * (i - j - 1) + m - 1
    }
}

/// Local index of an element in `(j, i, Up before Down)` order.
pub fn local_element_index(n: usize, i: usize, j: usize, o: Orientation) -> Option<usize> {
    let valid = match o {
        Orientation::Up => j >= 1 && j <= n && i >= j && i <= n,
        Orientation::Down => j >= 1 && j < n && i > j && i <= n,
    };
    if !valid {
        return None;
    }
    let row = (j - 1) * (2 * n + 1 - j);
    Some(match o {
        Orientation::Up if i == j => row,
        Orientation::Up => row + 1 + 2 * (i - j - 1),
        Orientation::Down => row + 2 + 2 * (i - j - 1),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::coarse::BoundaryMarker;
    use crate::reference::triangle_area;

    fn square(kind_top: BoundaryKind) -> CoarseMesh {
        let v = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(1.0, 0.0),
            Vec2::new(1.0, 1.0),
            Vec2::new(0.0, 1.0),
        ];
        let d = BoundaryKind::Dirichlet;
        let markers = vec![
            BoundaryMarker { v: [0, 1], kind: d },
            BoundaryMarker { v: [1, 2], kind: d },
            BoundaryMarker { v: [2, 3], kind: kind_top },
            BoundaryMarker { v: [3, 0], kind: d },
        ];
        CoarseMesh::new(v, vec![[0, 1, 2], [0, 2, 3]], markers).unwrap()
    }

    fn single() -> CoarseMesh {
        let v = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0), Vec2::new(0.3, 0.8)];
        let d = BoundaryKind::Dirichlet;
        let markers = vec![
            BoundaryMarker { v: [0, 1], kind: d },
            BoundaryMarker { v: [1, 2], kind: d },
            BoundaryMarker { v: [2, 0], kind: d },
        ];
        CoarseMesh::new(v, vec![[0, 1, 2]], markers).unwrap()
    }

    #[test]
    fn local_tables_agree_with_index_formulas() {
        for n in [1, 2, 4, 8] {
            let edges = local_edge_table(n);
            assert_eq!(edges.len(), 3 * n * (n + 1) / 2);
            for (idx, e) in edges.iter().enumerate() {
                assert_eq!(local_edge_index(n, e.i, e.j, e.m), idx);
            }
            let elems = local_element_table(n);
            assert_eq!(elems.len(), n * n);
            for (idx, e) in elems.iter().enumerate() {
                assert_eq!(local_element_index(n, e.i, e.j, e.orientation), Some(idx));
            }
        }
    }

    #[test]
    fn level_zero_is_the_coarse_mesh() {
        let c = square(BoundaryKind::Dirichlet);
        let m = HierMesh::refine(c.clone(), 0).unwrap();
        assert_eq!(m.num_elements(), 2);
        assert_eq!(m.num_edges(), 5);
        for k in 0..2 {
            let v = m.element_vertices(k);
            assert_eq!(v, c.triangle(k));
        }
    }

    #[test]
    fn single_triangle_level_two_grid() {
        let m = HierMesh::refine(single(), 2).unwrap();
        assert_eq!(m.num_elements(), 16);
        let nodes: usize = (1..=5).map(|j| 5 - j + 1).sum();
        assert_eq!(nodes, 15);
        assert!((m.node(0, 5, 5) - m.geometry[0].vertices[2]).norm() < 1e-15);
        let total: f64 = (0..16).map(|e| m.element_area(e)).sum();
        assert!((total - triangle_area(m.geometry[0].vertices)).abs() < 1e-15);
    }

    #[test]
    fn two_triangle_square_level_one() {
        let m = HierMesh::refine(square(BoundaryKind::Dirichlet), 1).unwrap();
        assert_eq!(m.num_elements(), 8);
        assert_eq!(m.num_edges(), 16);
        let count = |c| m.edge_classes().iter().filter(|&&x| x == c).count();
        assert_eq!(count(EdgeClass::Interface), 2);
        assert_eq!(count(EdgeClass::DirichletBoundary), 8);
        assert_eq!(count(EdgeClass::SubdomainInterior), 6);
        let d = m.dof_counts();
        assert_eq!((d.n_v, d.n_w, d.n_l, d.n_e_gamma, d.n_e_d), (18, 8, 2, 2, 8));
        assert_eq!(d.n_vtilde, 2 * 16 - 8);
    }

    #[test]
    fn single_triangle_counts() {
        let m = HierMesh::refine(single(), 1).unwrap();
        let d = m.dof_counts();
        assert_eq!(
            d,
            DofCounts {
                n_v: 9,
                n_vtilde: 12,
                n_w: 4,
                n_l: 0,
                n_e: 9,
                n_e_gamma: 0,
                n_e_d: 6,
                n_e_n: 0
            }
        );
        assert!(m.multiplier_edges().is_empty());
    }

    #[test]
    fn neumann_edges_carry_multipliers() {
        let m = HierMesh::refine(square(BoundaryKind::Neumann), 2).unwrap();
        let d = m.dof_counts();
        assert_eq!(d.n_e_n, 4);
        assert_eq!(d.n_l, 4 + 4);
        assert_eq!(d.n_v, d.n_e + d.n_e_gamma - d.n_e_n);
        for &g in m.multiplier_edges() {
            assert!(m.edge_class(g) != EdgeClass::DirichletBoundary);
        }
    }

    #[test]
    fn edges_are_parallel_to_their_coarse_side() {
        let m = HierMesh::refine(single(), 2).unwrap();
        let g = &m.geometry[0];
        for dof in 0..m.num_dofs() {
            let [a, b] = m.dof_endpoints(dof);
            let mm = m.dof_label(dof).m - 1;
            assert!(((b - a).norm() - g.lengths[mm]).abs() < 1e-14);
            assert!((b - a).dot(&g.normals[mm]).abs() < 1e-14);
        }
        // the three edges of node (3,2): families 1, 2, 3
        for mm in 1..=3 {
            let id = m.edge_global_id(0, 3, 2, mm).unwrap();
            assert_eq!(m.dof_label(id).m, mm);
            assert_eq!((m.dof_label(id).i, m.dof_label(id).j), (3, 2));
        }
    }

    #[test]
    fn up_element_sides() {
        let m = HierMesh::refine(single(), 2).unwrap();
        let up = m.local_element_index(3, 2, Orientation::Up).unwrap();
        let dofs = m.element_dofs(up);
        assert_eq!(dofs[0], m.edge_global_id(0, 4, 2, 1).unwrap());
        assert_eq!(dofs[1], m.edge_global_id(0, 3, 2, 2).unwrap());
        assert_eq!(dofs[2], m.edge_global_id(0, 3, 2, 3).unwrap());
        assert!(m.edge_global_id(0, 2, 2, 1).is_err());
        assert!(m.edge_global_id(0, 5, 1, 3).is_err());
    }

    #[test]
    fn level_zero_side_two_is_whole_coarse_edge() {
        let m = HierMesh::refine(single(), 0).unwrap();
        let id = m.edge_global_id(0, 1, 1, 2).unwrap();
        let [a, b] = m.dof_endpoints(id);
        let v = m.geometry[0].vertices;
        assert_eq!(a, v[0]);
        assert!((b - v[2]).norm() < 1e-15);
    }

    #[test]
    fn orientation_signs() {
        let m = HierMesh::refine(square(BoundaryKind::Dirichlet), 2).unwrap();
        for e in 0..m.num_elements() {
            let v = m.element_vertices(e);
            assert!(crate::reference::signed_area(v) > 0.0);
            let map = AffineMap::new(v).unwrap();
            let b = m.element_b(e);
            assert!((map.b - b).norm() < 1e-14);
            // element outward normal equals sign * DOF normal
            let c = m.element_centroid(e);
            for (r, &dof) in m.element_dofs(e).iter().enumerate() {
                let out = (m.dof_midpoint(dof) - c).dot(&m.dof_normal(dof));
                assert!(out * m.element_orientation(e).sign() > 0.0, "elem {e} edge {r}");
            }
        }
    }

    #[test]
    fn interior_edges_have_up_and_down_owner() {
        let m = HierMesh::refine(single(), 3).unwrap();
        for dof in 0..m.num_dofs() {
            let (u, d) = m.dof_elements(dof);
            assert_eq!(m.element_orientation(u), Orientation::Up);
            let interior = m.dof_class(dof) == EdgeClass::SubdomainInterior;
            assert_eq!(d.is_some(), interior);
            if let Some(d) = d {
                assert_eq!(m.element_orientation(d), Orientation::Down);
            }
        }
    }

    #[test]
    fn interface_midpoints_coincide_and_neighbors_cross() {
        let m = HierMesh::refine(square(BoundaryKind::Dirichlet), 3).unwrap();
        for g in 0..m.num_edges() {
            if let (a, Some(b)) = m.edge_dofs(g) {
                assert_eq!(m.edge_class(g), EdgeClass::Interface);
                assert!((m.dof_midpoint(a) - m.dof_midpoint(b)).norm() < 1e-14);
                assert_ne!(m.dof_subdomain(a), m.dof_subdomain(b));
                let ea = m.dof_elements(a).0;
                let eb = m.dof_elements(b).0;
                let r = m.element_dofs(ea).iter().position(|&d| d == a).unwrap();
                assert_eq!(m.neighbor(ea, r), Some(eb));
            }
        }
    }

    #[test]
    fn nested_nodes() {
        let c = square(BoundaryKind::Dirichlet);
        let a = HierMesh::refine(c.clone(), 2).unwrap();
        let b = HierMesh::refine(c, 3).unwrap();
        for k in 0..2 {
            for j in 1..=5 {
                for i in j..=5 {
                    assert_eq!(a.node(k, i, j), b.node(k, 2 * i - 1, 2 * j - 1));
                }
            }
        }
    }

    #[test]
    fn interior_element_detection() {
        let m = HierMesh::refine(single(), 0).unwrap();
        assert!(!m.is_interior(0));
        let m = HierMesh::refine(single(), 3).unwrap();
        let up = m.local_element_index(4, 3, Orientation::Up).unwrap();
        assert!(m.is_interior(up));
        let edge = m.local_element_index(1, 1, Orientation::Up).unwrap();
        assert!(!m.is_interior(edge));
        for e in 0..m.num_elements() {
            if m.is_interior(e) {
                for r in 0..3 {
                    assert!(m.neighbor(e, r).is_some());
                    assert_eq!(m.dof_class(m.element_dofs(e)[r]), EdgeClass::SubdomainInterior);
                }
            }
        }
    }
}
