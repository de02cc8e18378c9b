//! Sleeve garments: procedural generation, OBJ ingestion with a JSON
//! annotation sidecar, spring topology, and opening-ring geometry.
//!
//! Annotation sidecar format:
//!
//! ```json
//! {"opening_ring": [0, 1, 2, 3, 4, 5], "grasp": [0, 1, 5], "name": "gown"}
//! ```
//!
//! `opening_ring` is the ordered vertex loop at the shoulder opening and
//! `grasp` the vertices held by the gripper. `name` is optional.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::arm_model::{point_segment_distance, Vec3};

/// Grasp vertices must lie within this distance of the opening ring in rest pose.
pub const GRASP_RING_TOLERANCE: f64 = 0.05;

#[derive(Debug, thiserror::Error)]
pub enum GarmentError {
    #[error("resolution {0} is below 6 ring vertices (hexagon undefinable)")]
    ResolutionTooLow(usize),
    #[error("invalid garment parameter: {0}")]
    InvalidParams(String),
    #[error("OBJ parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("annotation: {0}")]
    Annotation(String),
    #[error("vertex index {index} out of range ({count} vertices) in {context}")]
    IndexOutOfRange { index: usize, count: usize, context: &'static str },
    #[error("opening ring is not a closed loop: {0}")]
    RingNotLoop(String),
    #[error("non-manifold mesh: edge ({0}, {1}) is shared by {2} triangles")]
    NonManifold(usize, usize, usize),
    #[error("grasp vertex {0} is {1:.4} m from the opening ring (limit {GRASP_RING_TOLERANCE} m)")]
    GraspTooFar(usize, f64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentMeta {
    pub name: String,
    pub sleeve_length: f64,
    pub opening_circumference: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GarmentMesh {
    /// Rest-pose positions.
    pub vertices: Vec<Vec3>,
    /// Source polygons (triangles or quads) before fan triangulation.
    pub faces: Vec<Vec<usize>>,
    pub triangles: Vec<[usize; 3]>,
    pub stretch_edges: Vec<[usize; 2]>,
    pub shear_edges: Vec<[usize; 2]>,
    pub bend_pairs: Vec<[usize; 2]>,
    pub opening_ring: Vec<usize>,
    pub grasp_vertices: Vec<usize>,
    pub meta: GarmentMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SleeveParams {
    pub name: String,
    pub sleeve_length: f64,
    pub sleeve_radius: f64,
    pub body_panel: bool,
    /// Ring vertex count.
    pub resolution: usize,
    /// Height of the hanging body panel, if any.
    #[serde(default = "default_panel_height")]
    pub panel_height: f64,
}

fn default_panel_height() -> f64 {
    0.25
}

impl Default for SleeveParams {
    fn default() -> Self {
        Self {
            name: "sleeve".into(),
            sleeve_length: 0.3,
            sleeve_radius: 0.07,
            body_panel: false,
            resolution: 12,
            panel_height: default_panel_height(),
        }
    }
}

fn sorted_edge(a: usize, b: usize) -> [usize; 2] {
    if a < b { [a, b] } else { [b, a] }
}

fn fan(face: &[usize]) -> impl Iterator<Item = [usize; 3]> + '_ {
    (1..face.len().saturating_sub(1)).map(move |k| [face[0], face[k], face[k + 1]])
}

impl GarmentMesh {
    /// Builds a mesh from polygons and annotations, deriving spring topology
    /// and validating every invariant.
    pub fn from_faces(
        vertices: Vec<Vec3>,
        faces: Vec<Vec<usize>>,
        opening_ring: Vec<usize>,
        grasp_vertices: Vec<usize>,
        name: String,
        sleeve_length: f64,
    ) -> Result<Self, GarmentError> {
        let n = vertices.len();
        for f in &faces {
            if f.len() < 3 {
                return Err(GarmentError::InvalidParams(format!("face with {} vertices", f.len())));
            }
            if let Some(&bad) = f.iter().find(|&&i| i >= n) {
                return Err(GarmentError::IndexOutOfRange { index: bad, count: n, context: "face" });
            }
        }
        for (&i, context) in opening_ring.iter().map(|i| (i, "opening_ring")).chain(grasp_vertices.iter().map(|i| (i, "grasp"))) {
            if i >= n {
                return Err(GarmentError::IndexOutOfRange { index: i, count: n, context });
            }
        }
        let triangles: Vec<[usize; 3]> = faces.iter().flat_map(|f| fan(f)).collect();

        let mut edge_tris: BTreeMap<[usize; 2], Vec<usize>> = BTreeMap::new();
        for (t, tri) in triangles.iter().enumerate() {
            for k in 0..3 {
                edge_tris.entry(sorted_edge(tri[k], tri[(k + 1) % 3])).or_default().push(t);
            }
        }
        if let Some((e, ts)) = edge_tris.iter().find(|(_, ts)| ts.len() > 2) {
            return Err(GarmentError::NonManifold(e[0], e[1], ts.len()));
        }

        let mut stretch: BTreeSet<[usize; 2]> = edge_tris.keys().copied().collect();
        let ring_edges: Vec<[usize; 2]> =
            (0..opening_ring.len()).map(|k| sorted_edge(opening_ring[k], opening_ring[(k + 1) % opening_ring.len()])).collect();
        stretch.extend(ring_edges.iter().copied());

        let mut shear = BTreeSet::new();
        for f in faces.iter().filter(|f| f.len() == 4) {
            // the fan uses diagonal 0-2; the other diagonal is the shear spring
            shear.insert(sorted_edge(f[1], f[3]));
        }

        let mut bend = BTreeSet::new();
        for ts in edge_tris.values().filter(|ts| ts.len() == 2) {
            let (a, b) = (triangles[ts[0]], triangles[ts[1]]);
            let opp_a = a.iter().find(|v| !b.contains(v));
            let opp_b = b.iter().find(|v| !a.contains(v));
            if let (Some(&x), Some(&y)) = (opp_a, opp_b) {
                let e = sorted_edge(x, y);
                if !stretch.contains(&e) && !shear.contains(&e) {
                    bend.insert(e);
                }
            }
        }

        let ring_pts: Vec<Vec3> = opening_ring.iter().map(|&i| vertices[i]).collect();
        let circumference = (0..ring_pts.len()).map(|k| (ring_pts[(k + 1) % ring_pts.len()] - ring_pts[k]).norm()).sum();
        let mesh = Self {
            vertices,
            faces,
            triangles,
            stretch_edges: stretch.into_iter().collect(),
            shear_edges: shear.into_iter().collect(),
            bend_pairs: bend.into_iter().collect(),
            opening_ring,
            grasp_vertices,
            meta: GarmentMeta { name, sleeve_length, opening_circumference: circumference },
        };
        mesh.validate_annotations(&edge_tris)?;
        Ok(mesh)
    }

    fn validate_annotations(&self, edge_tris: &BTreeMap<[usize; 2], Vec<usize>>) -> Result<(), GarmentError> {
        let ring = &self.opening_ring;
        if ring.len() < 6 {
            return Err(GarmentError::RingNotLoop(format!("{} vertices, need at least 6", ring.len())));
        }
        let distinct: BTreeSet<_> = ring.iter().collect();
        if distinct.len() != ring.len() {
            return Err(GarmentError::RingNotLoop("repeated vertex in ring".into()));
        }
        // ring edges must be mesh edges whenever the mesh has faces touching the ring
        let touched = ring.iter().any(|&v| self.triangles.iter().any(|t| t.contains(&v)));
        if touched {
            for k in 0..ring.len() {
                let e = sorted_edge(ring[k], ring[(k + 1) % ring.len()]);
                if !edge_tris.contains_key(&e) {
                    return Err(GarmentError::RingNotLoop(format!("vertices {} and {} are not connected", e[0], e[1])));
                }
            }
        }
        if self.grasp_vertices.is_empty() {
            return Err(GarmentError::Annotation("grasp set is empty".into()));
        }
        let ring_pts: Vec<Vec3> = ring.iter().map(|&i| self.vertices[i]).collect();
        for &g in &self.grasp_vertices {
            let p = self.vertices[g];
            let d = (0..ring_pts.len())
                .map(|k| point_segment_distance(&p, &ring_pts[k], &ring_pts[(k + 1) % ring_pts.len()]))
                .fold(f64::INFINITY, f64::min);
            if d > GRASP_RING_TOLERANCE {
                return Err(GarmentError::GraspTooFar(g, d));
            }
        }
        Ok(())
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn ring_positions(&self, positions: &[Vec3]) -> Vec<Vec3> {
        self.opening_ring.iter().map(|&i| positions[i]).collect()
    }

    pub fn to_obj_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# {}", self.meta.name);
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {} {}", v.x, v.y, v.z);
        }
        for f in &self.faces {
            let idx: Vec<String> = f.iter().map(|i| (i + 1).to_string()).collect();
            let _ = writeln!(s, "f {}", idx.join(" "));
        }
        s
    }

    pub fn annotation(&self) -> Annotation {
        Annotation {
            opening_ring: self.opening_ring.clone(),
            grasp: self.grasp_vertices.clone(),
            name: Some(self.meta.name.clone()),
            sleeve_length: Some(self.meta.sleeve_length),
        }
    }

    pub fn save(&self, mesh_path: &Path, annotation_path: &Path) -> Result<(), GarmentError> {
        std::fs::write(mesh_path, self.to_obj_string())?;
        let json = serde_json::to_string_pretty(&self.annotation()).map_err(|e| GarmentError::Annotation(e.to_string()))?;
        std::fs::write(annotation_path, json)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Annotation {
    pub opening_ring: Vec<usize>,
    pub grasp: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sleeve_length: Option<f64>,
}

pub fn generate_sleeve_garment(params: &SleeveParams) -> Result<GarmentMesh, GarmentError> {
    let n = params.resolution;
    if n < 6 {
        return Err(GarmentError::ResolutionTooLow(n));
    }
    if !(params.sleeve_length >= 0.0) || !(params.sleeve_radius > 0.0) {
        return Err(GarmentError::InvalidParams("sleeve_length must be >= 0 and radius > 0".into()));
    }
    let r = params.sleeve_radius;
    let spacing = std::f64::consts::TAU * r / n as f64;
    let segments = if params.sleeve_length > 0.0 { (params.sleeve_length / spacing).ceil().max(1.0) as usize } else { 0 };

    // Ring k sits at angle pi/2 - 2*pi*k/n in the local y-z plane, so k = 0 is the top.
    let ring_dir = |k: usize| {
        let th = std::f64::consts::FRAC_PI_2 - std::f64::consts::TAU * k as f64 / n as f64;
        Vec3::new(0.0, th.cos(), th.sin())
    };
    let mut vertices = Vec::new();
    for row in 0..=segments {
        let x = if segments == 0 { 0.0 } else { params.sleeve_length * row as f64 / segments as f64 };
        for k in 0..n {
            vertices.push(Vec3::new(x, 0.0, 0.0) + ring_dir(k) * r);
        }
    }
    let id = |row: usize, k: usize| row * n + (k % n);
    let mut faces = Vec::new();
    for row in 0..segments {
        for k in 0..n {
            faces.push(vec![id(row, k), id(row, k + 1), id(row + 1, k + 1), id(row + 1, k)]);
        }
    }

    if params.body_panel {
        // A flat panel hanging below the opening in the ring plane, attached at
        // the ring vertex nearest the bottom.
        let bottom = (0..n)
            .min_by(|&a, &b| vertices[a].z.partial_cmp(&vertices[b].z).unwrap().then(a.cmp(&b)))
            .expect("ring nonempty");
        let cols = 2 * (n / 4).max(2) + 1;
        let width = 2.4 * r;
        let rows = ((params.panel_height / spacing).ceil() as usize).max(1);
        let top_z = vertices[bottom].z;
        let mut grid = vec![vec![0usize; cols]; rows + 1];
        for (i, grid_row) in grid.iter_mut().enumerate() {
            for (j, slot) in grid_row.iter_mut().enumerate() {
                if i == 0 && j == cols / 2 {
                    *slot = bottom;
                    continue;
                }
                let y = -width / 2.0 + width * j as f64 / (cols - 1) as f64;
                let z = top_z - params.panel_height * i as f64 / rows as f64;
                vertices.push(Vec3::new(0.0, y, z));
                *slot = vertices.len() - 1;
            }
        }
        for i in 0..rows {
            for j in 0..cols - 1 {
                faces.push(vec![grid[i][j], grid[i][j + 1], grid[i + 1][j + 1], grid[i + 1][j]]);
            }
        }
    }

    let opening_ring: Vec<usize> = (0..n).collect();
    let grasp = vec![n - 1, 0, 1];
    let mut mesh = GarmentMesh::from_faces(vertices, faces, opening_ring, grasp, params.name.clone(), params.sleeve_length)?;
    mesh.meta.opening_circumference = std::f64::consts::TAU * r;
    Ok(mesh)
}

fn parse_index(tok: &str, count: usize, line: usize) -> Result<usize, GarmentError> {
    let head = tok.split('/').next().unwrap_or("");
    let raw: i64 = head.parse().map_err(|_| GarmentError::Parse { line, msg: format!("bad face index '{tok}'") })?;
    let idx = if raw > 0 {
        raw - 1
    } else if raw < 0 {
        count as i64 + raw
    } else {
        return Err(GarmentError::Parse { line, msg: "face index 0 is invalid".into() });
    };
    if idx < 0 {
        return Err(GarmentError::Parse { line, msg: format!("relative index {raw} precedes first vertex") });
    }
    Ok(idx as usize)
}

/// Parses ASCII OBJ: `v` and `f` records; polygons are kept and fan-triangulated later.
pub fn parse_obj(text: &str) -> Result<(Vec<Vec3>, Vec<Vec<usize>>), GarmentError> {
    let mut verts = Vec::new();
    let mut faces = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = ln + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        let mut toks = content.split_whitespace();
        match toks.next() {
            Some("v") => {
                let xyz: Vec<f64> = toks
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<Result<_, _>>()
                    .map_err(|e| GarmentError::Parse { line, msg: e.to_string() })?;
                if xyz.len() != 3 || xyz.iter().any(|v| !v.is_finite()) {
                    return Err(GarmentError::Parse { line, msg: "vertex needs 3 finite coordinates".into() });
                }
                verts.push(Vec3::new(xyz[0], xyz[1], xyz[2]));
            }
            Some("f") => {
                let idx: Vec<usize> = toks.map(|t| parse_index(t, verts.len(), line)).collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(GarmentError::Parse { line, msg: "face needs at least 3 vertices".into() });
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    Ok((verts, faces))
}

pub fn load_obj_garment(mesh_path: &Path, annotation_path: &Path) -> Result<GarmentMesh, GarmentError> {
    let text = std::fs::read_to_string(mesh_path)?;
    let (verts, faces) = parse_obj(&text)?;
    let ann_text = std::fs::read_to_string(annotation_path)?;
    let ann: Annotation = serde_json::from_str(&ann_text).map_err(|e| GarmentError::Annotation(e.to_string()))?;
    let name = ann.name.clone().unwrap_or_else(|| {
        mesh_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "garment".into())
    });
    let sleeve_length = ann.sleeve_length.unwrap_or(0.0);
    GarmentMesh::from_faces(verts, faces, ann.opening_ring, ann.grasp, name, sleeve_length)
}

/// Planar hexagon approximation of the opening ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpeningGeometry {
    pub p_center: Vec3,
    pub hexagon: [Vec3; 6],
    pub plane_normal: Vec3,
    /// Set when the ring is collinear; only `p_center` is meaningful then.
    pub degenerate: bool,
}

impl OpeningGeometry {
    fn degenerate_at(p_center: Vec3) -> Self {
        Self { p_center, hexagon: [p_center; 6], plane_normal: Vec3::z(), degenerate: true }
    }
}

pub fn opening_geometry(mesh: &GarmentMesh, positions: &[Vec3]) -> OpeningGeometry {
    opening_geometry_from_ring(&mesh.ring_positions(positions))
}

fn cross2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// Centroid, least-squares plane, and six-station angular resampling of a
/// closed ring.
///
/// Stations start at the ring point that is greatest in (z, y, x)
/// lexicographic order, so the result does not depend on where the loop
/// starts. Station `s` is where the ray from the centroid at angle `s * 60deg`
/// first crosses the projected ring polyline, walking from that anchor.
pub fn opening_geometry_from_ring(ring: &[Vec3]) -> OpeningGeometry {
    let n = ring.len();
    let center = ring.iter().fold(Vec3::zeros(), |a, p| a + p) / n.max(1) as f64;
    if n < 3 {
        return OpeningGeometry::degenerate_at(center);
    }
    let mut cov = Matrix3::zeros();
    for p in ring {
        let d = p - center;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let (l_mid, l_max) = (eig.eigenvalues[order[1]], eig.eigenvalues[order[2]]);
    if !(l_max > 1e-24) || l_mid <= 1e-12 * l_max {
        return OpeningGeometry::degenerate_at(center);
    }
    let mut normal: Vec3 = eig.eigenvectors.column(order[0]).into_owned().normalize();
    let newell = (0..n).fold(Vec3::zeros(), |acc, k| acc + (ring[k] - center).cross(&(ring[(k + 1) % n] - center)));
    if newell.dot(&normal) < 0.0 {
        normal = -normal;
    }

    let anchor = (0..n)
        .max_by(|&a, &b| {
            let (p, q) = (ring[a], ring[b]);
            p.z.partial_cmp(&q.z)
                .unwrap()
                .then(p.y.partial_cmp(&q.y).unwrap())
                .then(p.x.partial_cmp(&q.x).unwrap())
                .then(b.cmp(&a))
        })
        .expect("nonempty ring");
    let project = |p: &Vec3| {
        let d = p - center;
        d - normal * d.dot(&normal)
    };
    let anchor_vec = project(&ring[anchor]);
    let u = match anchor_vec.try_normalize(1e-12) {
        Some(u) => u,
        None => {
            let far = (0..n).max_by(|&a, &b| project(&ring[a]).norm().partial_cmp(&project(&ring[b]).norm()).unwrap()).unwrap();
            project(&ring[far]).normalize()
        }
    };
    let v = normal.cross(&u);
    let pts2: Vec<[f64; 2]> = ring.iter().map(|p| {
        let d = project(p);
        [d.dot(&u), d.dot(&v)]
    }).collect();

    let mut hexagon = [center; 6];
    for (s, slot) in hexagon.iter_mut().enumerate() {
        let ang = std::f64::consts::FRAC_PI_3 * s as f64;
        let dir = [ang.cos(), ang.sin()];
        let mut hit = None;
        for j in 0..n {
            let a = pts2[(anchor + j) % n];
            let b = pts2[(anchor + j + 1) % n];
            let e = [b[0] - a[0], b[1] - a[1]];
            let denom = cross2(dir, e);
            if denom.abs() < 1e-300 {
                continue;
            }
            // origin + t*dir = a + w*e
            let t = cross2(a, e) / denom;
            let w = cross2(a, dir) / denom;
            if t >= -1e-12 && (-1e-12..=1.0 + 1e-12).contains(&w) {
                let w = w.clamp(0.0, 1.0);
                hit = Some([a[0] + w * e[0], a[1] + w * e[1]]);
                break;
            }
        }
        let q = hit.unwrap_or_else(|| {
            let best = (0..n)
                .min_by(|&i, &k| {
                    let da = angle_gap(pts2[i][1].atan2(pts2[i][0]), ang);
                    let db = angle_gap(pts2[k][1].atan2(pts2[k][0]), ang);
                    da.partial_cmp(&db).unwrap()
                })
                .unwrap();
            pts2[best]
        });
        *slot = center + u * q[0] + v * q[1];
    }
    OpeningGeometry { p_center: center, hexagon, plane_normal: normal, degenerate: false }
}

fn angle_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::TAU);
    d.min(std::f64::consts::TAU - d)
}
