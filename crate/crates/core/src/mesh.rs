//! Closed, oriented triangle meshes and their derived topology.
//!
//! A [`TriangleMesh`] is validated on construction: every edge must be shared by
//! exactly two cells with opposite traversal directions (closed orientable
//! 2-manifold, consistently oriented), cells must be non-degenerate, and the cell
//! graph must be connected. All downstream discretization code relies on these
//! invariants instead of re-checking them.
//!
//! Edge convention: an edge stores its vertices as `(v1, v2)` with `v1 < v2`; the
//! cell whose oriented boundary traverses `v1 -> v2` is the plus cell, the other
//! one the minus cell. Edges are numbered in lexicographic `(v1, v2)` order, so
//! edge indexing is a pure function of the cell list.

use crate::vec3::{self, Vec3};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("I/O error reading {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("OFF parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("cell {cell} references vertex {vertex} out of range ({n_vertices} vertices)")]
    VertexOutOfRange {
        cell: usize,
        vertex: usize,
        n_vertices: usize,
    },
    #[error("cell {cell} is degenerate (repeated vertex or zero area)")]
    DegenerateCell { cell: usize },
    #[error("edge ({v1},{v2}) is shared by {count} cells; a closed surface needs exactly 2")]
    NonManifoldEdge { v1: usize, v2: usize, count: usize },
    #[error("edge ({v1},{v2}) is traversed in the same direction by two cells; orientation is inconsistent")]
    InconsistentOrientation { v1: usize, v2: usize },
    #[error("mesh is not connected ({components} cell components)")]
    NotConnected { components: usize },
    #[error("mesh has no cells")]
    Empty,
}

/// Projection rule attached by the curved-surface generators; structured
/// refinement re-projects newly created vertices with it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Projection {
    None,
    Sphere { center: Vec3, radius: f64 },
    Torus { major: f64, minor: f64 },
}

impl Projection {
    fn apply(&self, p: Vec3) -> Vec3 {
        match *self {
            Projection::None => p,
            Projection::Sphere { center, radius } => {
                let d = vec3::sub(p, center);
                vec3::add(center, vec3::scale(d, radius / vec3::norm(d)))
            }
            Projection::Torus { major, minor } => {
                let phi = p[1].atan2(p[0]);
                let ring = [major * phi.cos(), major * phi.sin(), 0.0];
                let d = vec3::sub(p, ring);
                vec3::add(ring, vec3::scale(d, minor / vec3::norm(d)))
            }
        }
    }
}

/// Interior edge record. `cell_plus` traverses `verts[0] -> verts[1]`.
#[derive(Debug, Clone, Copy)]
pub struct Edge {
    pub verts: [usize; 2],
    pub cell_plus: usize,
    pub cell_minus: usize,
    /// Free vertex of `cell_plus` opposite this edge.
    pub opp_plus: usize,
    /// Free vertex of `cell_minus` opposite this edge.
    pub opp_minus: usize,
}

/// One of the three edges of a cell, with the sign of the cell in the RWG
/// convention: `+1` if the cell is the edge's plus cell.
#[derive(Debug, Clone, Copy)]
pub struct CellEdge {
    pub edge: usize,
    pub sign: f64,
    /// Free vertex of this cell opposite the edge.
    pub opp: usize,
}

/// Minimum / mean / maximum edge length of a mesh.
#[derive(Debug, Clone, Copy)]
pub struct EdgeStats {
    pub min: f64,
    pub avg: f64,
    pub max: f64,
}

#[derive(Debug, Clone)]
pub struct TriangleMesh {
    vertices: Vec<Vec3>,
    cells: Vec<[usize; 3]>,
    projection: Projection,
    edges: Vec<Edge>,
    cell_edges: Vec<[CellEdge; 3]>,
    vertex_cells: Vec<Vec<usize>>,
    areas: Vec<f64>,
    normals: Vec<Vec3>,
    centroids: Vec<Vec3>,
}

impl TriangleMesh {
    /// Builds a mesh from raw arrays, deriving edges and validating the closed
    /// oriented 2-manifold invariants.
    pub fn new(vertices: Vec<Vec3>, cells: Vec<[usize; 3]>) -> Result<Self, MeshError> {
        Self::with_projection(vertices, cells, Projection::None)
    }

    pub fn with_projection(
        vertices: Vec<Vec3>,
        cells: Vec<[usize; 3]>,
        projection: Projection,
    ) -> Result<Self, MeshError> {
        if cells.is_empty() {
            return Err(MeshError::Empty);
        }
        for (ci, c) in cells.iter().enumerate() {
            for &v in c {
                if v >= vertices.len() {
                    return Err(MeshError::VertexOutOfRange {
                        cell: ci,
                        vertex: v,
                        n_vertices: vertices.len(),
                    });
                }
            }
            if c[0] == c[1] || c[1] == c[2] || c[0] == c[2] {
                return Err(MeshError::DegenerateCell { cell: ci });
            }
        }

        // Geometry caches; zero-area cells are rejected relative to mesh scale.
        let mut areas = Vec::with_capacity(cells.len());
        let mut normals = Vec::with_capacity(cells.len());
        let mut centroids = Vec::with_capacity(cells.len());
        let mut max_edge = 0.0f64;
        for c in &cells {
            let (a, b, q) = (vertices[c[0]], vertices[c[1]], vertices[c[2]]);
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(q, a));
            let n2 = vec3::norm(n);
            areas.push(0.5 * n2);
            normals.push(if n2 > 0.0 { vec3::scale(n, 1.0 / n2) } else { [0.0; 3] });
            centroids.push(vec3::scale(vec3::add(vec3::add(a, b), q), 1.0 / 3.0));
            max_edge = max_edge.max(vec3::dist(a, b)).max(vec3::dist(b, q)).max(vec3::dist(q, a));
        }
        for (ci, &a) in areas.iter().enumerate() {
            if !(a > 1e-14 * max_edge * max_edge) {
                return Err(MeshError::DegenerateCell { cell: ci });
            }
        }

        // Directed-edge scan: each undirected edge must be seen once per direction.
        // map: (vmin,vmax) -> (plus_cell, minus_cell, opp_plus, opp_minus)
        type Slot = (Option<(usize, usize)>, Option<(usize, usize)>);
        let mut map: BTreeMap<(usize, usize), Slot> = BTreeMap::new();
        for (ci, c) in cells.iter().enumerate() {
            for k in 0..3 {
                let (a, b, opp) = (c[k], c[(k + 1) % 3], c[(k + 2) % 3]);
                let key = (a.min(b), a.max(b));
                let slot = map.entry(key).or_insert((None, None));
                let fwd = a < b; // cell traverses vmin -> vmax
                let tgt = if fwd { &mut slot.0 } else { &mut slot.1 };
                if tgt.is_some() {
                    return Err(MeshError::InconsistentOrientation { v1: key.0, v2: key.1 });
                }
                *tgt = Some((ci, opp));
            }
        }

        let mut edges = Vec::with_capacity(map.len());
        for (&(v1, v2), &(plus, minus)) in &map {
            match (plus, minus) {
                (Some((cp, op)), Some((cm, om))) => edges.push(Edge {
                    verts: [v1, v2],
                    cell_plus: cp,
                    cell_minus: cm,
                    opp_plus: op,
                    opp_minus: om,
                }),
                _ => {
                    return Err(MeshError::NonManifoldEdge { v1, v2, count: 1 });
                }
            }
        }
        // A vertex pair seen more than twice trips the orientation check above,
        // except when two cells traverse it in opposite directions twice each;
        // that still collides in the two slots, so count==1 is the only miss case.

        let mut cell_edges = vec![
            [CellEdge { edge: usize::MAX, sign: 0.0, opp: 0 }; 3];
            cells.len()
        ];
        for (ei, e) in edges.iter().enumerate() {
            for (cell, sign, opp) in [
                (e.cell_plus, 1.0, e.opp_plus),
                (e.cell_minus, -1.0, e.opp_minus),
            ] {
                let slot = cell_edges[cell]
                    .iter_mut()
                    .find(|s| s.edge == usize::MAX)
                    .expect("cell has more than 3 edges");
                *slot = CellEdge { edge: ei, sign, opp };
            }
        }

        let mut vertex_cells = vec![Vec::new(); vertices.len()];
        for (ci, c) in cells.iter().enumerate() {
            for &v in c {
                vertex_cells[v].push(ci);
            }
        }

        // Connectivity over the cell adjacency graph.
        let mut seen = vec![false; cells.len()];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut visited = 1usize;
        while let Some(c) = stack.pop() {
            for ce in &cell_edges[c] {
                let e = &edges[ce.edge];
                let other = if e.cell_plus == c { e.cell_minus } else { e.cell_plus };
                if !seen[other] {
                    seen[other] = true;
                    visited += 1;
                    stack.push(other);
                }
            }
        }
        if visited != cells.len() {
            return Err(MeshError::NotConnected { components: 2 });
        }

        Ok(Self {
            vertices,
            cells,
            projection,
            edges,
            cell_edges,
            vertex_cells,
            areas,
            normals,
            centroids,
        })
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }
    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }
    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }
    pub fn cells(&self) -> &[[usize; 3]] {
        &self.cells
    }
    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }
    pub fn cell_edges(&self, c: usize) -> &[CellEdge; 3] {
        &self.cell_edges[c]
    }
    /// Cells incident to vertex `v` (the valence is the length of this slice).
    pub fn vertex_cells(&self, v: usize) -> &[usize] {
        &self.vertex_cells[v]
    }
    pub fn area(&self, c: usize) -> f64 {
        self.areas[c]
    }
    pub fn normal(&self, c: usize) -> Vec3 {
        self.normals[c]
    }
    pub fn centroid(&self, c: usize) -> Vec3 {
        self.centroids[c]
    }
    pub fn cell_points(&self, c: usize) -> [Vec3; 3] {
        let [a, b, q] = self.cells[c];
        [self.vertices[a], self.vertices[b], self.vertices[q]]
    }
    pub fn total_area(&self) -> f64 {
        self.areas.iter().sum()
    }
    pub fn projection(&self) -> Projection {
        self.projection
    }

    /// Number of vertices shared by two cells (0..=3); 3 means the same cell.
    pub fn shared_vertices(&self, c1: usize, c2: usize) -> usize {
        let a = self.cells[c1];
        let b = self.cells[c2];
        a.iter().filter(|v| b.contains(v)).count()
    }

    /// Euler characteristic `V - E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.cells.len() as i64
    }

    /// Genus of the closed surface, from `chi = 2 - 2g`.
    pub fn genus(&self) -> u32 {
        let chi = self.euler_characteristic();
        debug_assert!(chi % 2 == 0, "odd Euler characteristic on a closed surface");
        ((2 - chi) / 2) as u32
    }

    pub fn edge_stats(&self) -> EdgeStats {
        let mut min = f64::INFINITY;
        let mut max = 0.0f64;
        let mut sum = 0.0;
        for e in &self.edges {
            let l = vec3::dist(self.vertices[e.verts[0]], self.vertices[e.verts[1]]);
            min = min.min(l);
            max = max.max(l);
            sum += l;
        }
        EdgeStats { min, avg: sum / self.edges.len() as f64, max }
    }

    /// Dyadic 1:4 refinement; midpoint vertices are re-projected when the mesh
    /// carries a curved-surface projection rule.
    pub fn refine_structured(&self) -> TriangleMesh {
        let mut vertices = self.vertices.clone();
        let mut midpoint: BTreeMap<(usize, usize), usize> = BTreeMap::new();
        let mut cells = Vec::with_capacity(4 * self.cells.len());
        let mut mid = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let p = vec3::scale(vec3::add(vertices[a], vertices[b]), 0.5);
                vertices.push(self.projection.apply(p));
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &self.cells {
            let mab = mid(a, b, &mut vertices);
            let mbc = mid(b, c, &mut vertices);
            let mca = mid(c, a, &mut vertices);
            cells.push([a, mab, mca]);
            cells.push([b, mbc, mab]);
            cells.push([c, mca, mbc]);
            cells.push([mab, mbc, mca]);
        }
        TriangleMesh::with_projection(vertices, cells, self.projection)
            .expect("refinement of a valid mesh is valid")
    }

    /// SHA-256 of the vertex coordinates and cell indices, hex-encoded; used to
    /// tie dumped operator blocks back to the mesh they were assembled on.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for v in &self.vertices {
            for x in v {
                h.update(x.to_le_bytes());
            }
        }
        for c in &self.cells {
            for &i in c {
                h.update((i as u64).to_le_bytes());
            }
        }
        let out = h.finalize();
        let mut s = String::with_capacity(64);
        for b in out {
            let _ = write!(s, "{b:02x}");
        }
        s
    }

    pub fn write_off(&self, path: &Path) -> Result<(), MeshError> {
        let mut s = String::new();
        let _ = writeln!(s, "OFF");
        let _ = writeln!(s, "{} {} 0", self.vertices.len(), self.cells.len());
        for v in &self.vertices {
            let _ = writeln!(s, "{:.17} {:.17} {:.17}", v[0], v[1], v[2]);
        }
        for c in &self.cells {
            let _ = writeln!(s, "3 {} {} {}", c[0], c[1], c[2]);
        }
        std::fs::write(path, s).map_err(|source| MeshError::Io {
            path: path.display().to_string(),
            source,
        })
    }
}

/// Parses an ASCII OFF file (triangles only).
pub fn load_off(path: &Path) -> Result<TriangleMesh, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_off(&text)
}

/// Parses OFF text. Blank lines and `#` comments are ignored.
pub fn parse_off(text: &str) -> Result<TriangleMesh, MeshError> {
    let mut tokens = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for t in line.split_whitespace() {
            tokens.push((ln + 1, t));
        }
    }
    let mut it = tokens.into_iter();
    let mut next = |what: &str| {
        it.next().ok_or_else(|| MeshError::Parse {
            line: 0,
            msg: format!("unexpected end of file, expected {what}"),
        })
    };
    let (ln, magic) = next("OFF header")?;
    if magic != "OFF" {
        return Err(MeshError::Parse { line: ln, msg: format!("expected OFF header, found {magic:?}") });
    }
    let mut read_usize = |what: &str| -> Result<(usize, usize), MeshError> {
        let (ln, t) = next(what)?;
        t.parse::<usize>()
            .map(|v| (ln, v))
            .map_err(|_| MeshError::Parse { line: ln, msg: format!("bad {what}: {t:?}") })
    };
    let (_, nv) = read_usize("vertex count")?;
    let (_, nf) = read_usize("face count")?;
    let (_, _ne) = read_usize("edge count")?;
    let mut read_f64 = |what: &str| -> Result<f64, MeshError> {
        let (ln, t) = next(what)?;
        t.parse::<f64>()
            .map_err(|_| MeshError::Parse { line: ln, msg: format!("bad {what}: {t:?}") })
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let x = read_f64("vertex coordinate")?;
        let y = read_f64("vertex coordinate")?;
        let z = read_f64("vertex coordinate")?;
        vertices.push([x, y, z]);
    }
    let mut cells = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, t) = next("face vertex count")?;
        let n: usize = t
            .parse()
            .map_err(|_| MeshError::Parse { line: ln, msg: format!("bad face vertex count: {t:?}") })?;
        if n != 3 {
            return Err(MeshError::Parse { line: ln, msg: format!("only triangles supported, face has {n} vertices") });
        }
        let mut c = [0usize; 3];
        for slot in &mut c {
            let (ln, t) = next("face vertex index")?;
            *slot = t
                .parse()
                .map_err(|_| MeshError::Parse { line: ln, msg: format!("bad vertex index: {t:?}") })?;
        }
        cells.push(c);
    }
    TriangleMesh::new(vertices, cells)
}

/// Icosahedron-based geodesic sphere: `level` dyadic subdivisions of the
/// icosahedron, all vertices projected to the sphere after each subdivision.
pub fn make_sphere(radius: f64, level: u32) -> TriangleMesh {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let raw: [Vec3; 12] = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ];
    let proj = Projection::Sphere { center: [0.0; 3], radius };
    let vertices: Vec<Vec3> = raw.iter().map(|&p| proj.apply(p)).collect();
    let cells: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    let mut mesh = TriangleMesh::with_projection(vertices, cells, proj)
        .expect("icosahedron is a valid closed mesh");
    for _ in 0..level {
        mesh = mesh.refine_structured();
    }
    mesh
}

/// Structured parametric torus with `n_major * n_minor` vertices. The surface is
/// swept by angle `u` around the z-axis at major radius `major` and angle `v`
/// around the tube of radius `minor`; each parameter quad is split into two
/// triangles oriented with outward normal.
pub fn make_torus(major: f64, minor: f64, n_major: usize, n_minor: usize) -> TriangleMesh {
    assert!(n_major >= 3 && n_minor >= 3, "torus needs at least 3 segments per direction");
    assert!(major > minor && minor > 0.0, "torus radii must satisfy major > minor > 0");
    let mut vertices = Vec::with_capacity(n_major * n_minor);
    for i in 0..n_major {
        let u = 2.0 * std::f64::consts::PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let v = 2.0 * std::f64::consts::PI * j as f64 / n_minor as f64;
            let ring = major + minor * v.cos();
            vertices.push([ring * u.cos(), ring * u.sin(), minor * v.sin()]);
        }
    }
    let idx = |i: usize, j: usize| (i % n_major) * n_minor + (j % n_minor);
    let mut cells = Vec::with_capacity(2 * n_major * n_minor);
    for i in 0..n_major {
        for j in 0..n_minor {
            let a = idx(i, j);
            let b = idx(i + 1, j);
            let c = idx(i + 1, j + 1);
            let d = idx(i, j + 1);
            cells.push([a, b, c]);
            cells.push([a, c, d]);
        }
    }
    TriangleMesh::with_projection(vertices, cells, Projection::Torus { major, minor })
        .expect("structured torus is a valid closed mesh")
}

/// Signed volume enclosed by the surface; positive when cell normals point
/// outward. Exact for closed polyhedra regardless of genus.
pub fn signed_volume(mesh: &TriangleMesh) -> f64 {
    let mut vol = 0.0;
    for c in 0..mesh.n_cells() {
        let [a, b, q] = mesh.cell_points(c);
        vol += vec3::dot(a, vec3::cross(b, q)) / 6.0;
    }
    vol
}

/// Boundary surface of a voxel solid: a 5x3x1 brick with two through-holes.
/// Used as the genus-2 fixture; the boundary of a well-formed voxel solid is
/// a closed oriented 2-manifold.
#[cfg(test)]
pub(crate) fn genus2_fixture() -> TriangleMesh {
    let solid = |x: i64, y: i64, z: i64| -> bool {
        (0..5).contains(&x) && (0..3).contains(&y) && z == 0 && !((x == 1 || x == 3) && y == 1)
    };
    let mut vmap: BTreeMap<(i64, i64, i64), usize> = BTreeMap::new();
    let mut vertices = Vec::new();
    let mut vid = |p: (i64, i64, i64), vertices: &mut Vec<Vec3>| -> usize {
        *vmap.entry(p).or_insert_with(|| {
            vertices.push([p.0 as f64, p.1 as f64, p.2 as f64]);
            vertices.len() - 1
        })
    };
    let mut cells = Vec::new();
    // For each empty neighbor, emit the shared face as two triangles wound
    // counterclockwise as seen from the empty side (outward normal).
    for x in -1..6i64 {
        for y in -1..4i64 {
            for z in -1..2i64 {
                if !solid(x, y, z) {
                    continue;
                }
                let dirs: [(i64, i64, i64); 6] =
                    [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
                for (dx, dy, dz) in dirs {
                    if solid(x + dx, y + dy, z + dz) {
                        continue;
                    }
                    // Face corners in CCW order seen from outside.
                    let quad: [(i64, i64, i64); 4] = match (dx, dy, dz) {
                        (1, 0, 0) => [(1, 0, 0), (1, 1, 0), (1, 1, 1), (1, 0, 1)],
                        (-1, 0, 0) => [(0, 0, 0), (0, 0, 1), (0, 1, 1), (0, 1, 0)],
                        (0, 1, 0) => [(0, 1, 0), (0, 1, 1), (1, 1, 1), (1, 1, 0)],
                        (0, -1, 0) => [(0, 0, 0), (1, 0, 0), (1, 0, 1), (0, 0, 1)],
                        (0, 0, 1) => [(0, 0, 1), (1, 0, 1), (1, 1, 1), (0, 1, 1)],
                        _ => [(0, 0, 0), (0, 1, 0), (1, 1, 0), (1, 0, 0)],
                    };
                    let ids: Vec<usize> = quad
                        .iter()
                        .map(|&(qx, qy, qz)| vid((x + qx, y + qy, z + qz), &mut vertices))
                        .collect();
                    cells.push([ids[0], ids[1], ids[2]]);
                    cells.push([ids[0], ids[2], ids[3]]);
                }
            }
        }
    }
    TriangleMesh::new(vertices, cells).expect("voxel boundary is a valid closed mesh")
}
