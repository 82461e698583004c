//! Marching cubes over a masked voxel grid, vertex intensities and PLY output.
//!
//! The 256-case triangle table is built once from per-face rules: on every
//! cube face the crossing edges are paired so that negative corners are
//! separated (the ambiguous two-diagonal face cuts off each negative corner
//! on its own). Adjacent cubes see the same face, so the surface has no
//! cracks. Segments are oriented per face and chained into loops, which are
//! ear-clipped with faces pointing into the positive side.

use std::collections::HashMap;
use std::io::Write;
use std::sync::OnceLock;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, RadarField};
use crate::geometry::{Aabb, Vec3};
use crate::spatial::PointIndex;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Anything that can be evaluated as a signed distance field in batches.
pub trait SdfQuery: Sync {
    fn values(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError>;
    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>, FieldError>;
}

impl SdfQuery for RadarField {
    fn values(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        self.sdf_values(xs)
    }

    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>, FieldError> {
        Ok(self.sdf_with_gradients(xs)?.into_iter().map(|(_, g)| g).collect())
    }
}

/// Wraps a pointwise closure; gradients by central differences.
pub struct FnSdf<F>(pub F);

impl<F: Fn(&Vec3) -> f64 + Sync> SdfQuery for FnSdf<F> {
    fn values(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        Ok(xs.par_iter().map(|x| (self.0)(x)).collect())
    }

    fn gradients(&self, xs: &[Vec3]) -> Result<Vec<Vec3>, FieldError> {
        let h = 1e-6;
        Ok(xs
            .par_iter()
            .map(|x| {
                let mut g = Vec3::zeros();
                for a in 0..3 {
                    let mut e = Vec3::zeros();
                    e[a] = h;
                    g[a] = ((self.0)(&(x + e)) - (self.0)(&(x - e))) / (2.0 * h);
                }
                g
            })
            .collect())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VoxelGridSpec {
    pub aabb: Aabb,
    pub voxel_size: f64,
    pub mask_radius: f64,
}

impl VoxelGridSpec {
    pub fn dims(&self) -> [usize; 3] {
        let e = self.aabb.extent();
        [0, 1, 2].map(|a| ((e[a] / self.voxel_size).ceil() as usize).max(1))
    }

    fn validate(&self) -> Result<(), MeshError> {
        if !(self.voxel_size > 0.0) || !(self.mask_radius > 0.0) {
            return Err(MeshError::InvalidGrid("voxel_size and mask_radius must be positive".into()));
        }
        let d = self.dims();
        if (d[0] as u128 + 1) * (d[1] as u128 + 1) * (d[2] as u128 + 1) > (1u128 << 40) {
            return Err(MeshError::InvalidGrid(format!("grid {d:?} is too large")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriangleMesh {
    pub vertices: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
    pub intensities: Option<Vec<f64>>,
}

impl TriangleMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn triangle(&self, t: usize) -> [Vec3; 3] {
        self.triangles[t].map(|i| self.vertices[i as usize])
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle(t);
        0.5 * (b - a).cross(&(c - a)).norm()
    }

    /// Unnormalized geometric normal, `(b − a) × (c − a)`.
    pub fn face_normal(&self, t: usize) -> Vec3 {
        let [a, b, c] = self.triangle(t);
        (b - a).cross(&(c - a))
    }

    pub fn surface_area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    /// Undirected edge → number of incident triangles.
    pub fn edge_counts(&self) -> HashMap<(u32, u32), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_counts().values().filter(|&&c| c == 1).count()
    }

    /// `V − E + F`.
    pub fn euler_characteristic(&self) -> i64 {
        let used: std::collections::HashSet<u32> = self.triangles.iter().flatten().copied().collect();
        used.len() as i64 - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }
}

// Corner `i` sits at (i & 1, (i >> 1) & 1, (i >> 2) & 1).
fn corner_offset(i: usize) -> [usize; 3] {
    [i & 1, (i >> 1) & 1, (i >> 2) & 1]
}

const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

fn edge_of(a: usize, b: usize) -> usize {
    let (a, b) = (a.min(b), a.max(b));
    EDGES.iter().position(|&e| e == (a, b)).expect("corners share an edge")
}

/// Triangles per case as edge indices, wound so that `(b − a) × (c − a)`
/// points into the positive side.
fn case_table() -> &'static [Vec<[u8; 3]>] {
    static TABLE: OnceLock<Vec<Vec<[u8; 3]>>> = OnceLock::new();
    TABLE.get_or_init(|| (0..256).map(triangulate_case).collect())
}

/// Corners of each face, counter-clockwise seen from outside the cube.
fn faces() -> [[usize; 4]; 6] {
    [
        [0, 4, 6, 2], // x = 0
        [1, 3, 7, 5], // x = 1
        [0, 1, 5, 4], // y = 0
        [2, 6, 7, 3], // y = 1
        [0, 2, 3, 1], // z = 0
        [4, 5, 7, 6], // z = 1
    ]
}

fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let neg = |c: usize| case >> c & 1 == 1;
    // next[e] = edge following crossing edge e around its loop.
    let mut next = [usize::MAX; 12];
    for face in faces() {
        for k in 0..4 {
            let c = face[k];
            if !neg(c) {
                continue;
            }
            let prev = face[(k + 3) % 4];
            if neg(prev) {
                continue;
            }
            // Start of a run of negative corners; find where it ends.
            let mut j = k;
            while neg(face[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            let enter = edge_of(prev, c);
            let exit = edge_of(face[j], face[(j + 1) % 4]);
            next[exit] = enter;
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut lp = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            lp.push(e);
            e = next[e];
        }
        let mut out = Vec::new();
        if !triangulate_loop(&lp, &mut out) {
            unreachable!("case {case}: loop {lp:?} has no valid triangulation");
        }
        tris.extend(out);
    }
    tris
}

/// Whether two cube edges lie on a common face.
fn share_face(a: usize, b: usize) -> bool {
    let on = |e: usize, f: &[usize; 4]| f.contains(&EDGES[e].0) && f.contains(&EDGES[e].1);
    faces().iter().any(|f| on(a, f) && on(b, f))
}

/// Ear clipping without diagonals that lie on a cube face; those would be
/// shared with the neighbouring cube and make non-manifold edges. Triangles
/// come out reversed relative to the loop direction.
fn triangulate_loop(lp: &[usize], out: &mut Vec<[u8; 3]>) -> bool {
    if lp.len() == 3 {
        out.push([lp[0] as u8, lp[2] as u8, lp[1] as u8]);
        return true;
    }
    let n = lp.len();
    for i in 0..n {
        let (a, b, c) = (lp[(i + n - 1) % n], lp[i], lp[(i + 1) % n]);
        if share_face(a, c) {
            continue;
        }
        let rest: Vec<usize> = lp.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &e)| e).collect();
        let mark = out.len();
        out.push([a as u8, c as u8, b as u8]);
        if triangulate_loop(&rest, out) {
            return true;
        }
        out.truncate(mark);
    }
    false
}

/// Global id of the cube edge starting at corner `(i, j, k)` along `axis`.
fn edge_key(c: [usize; 3], axis: usize, dims: [usize; 3]) -> u64 {
    let n = [dims[0] as u64 + 1, dims[1] as u64 + 1, dims[2] as u64 + 1];
    ((c[2] as u64 * n[1] + c[1] as u64) * n[0] + c[0] as u64) * 3 + axis as u64
}

/// Marching cubes restricted to cubes whose centre lies within
/// `mask_radius` of some point in `mask`. With `mask = None` every cube of
/// the grid is processed. Vertex normals are the normalized SDF gradient.
pub fn extract_mesh<S: SdfQuery + ?Sized>(sdf: &S, spec: &VoxelGridSpec, mask: Option<&PointIndex>) -> Result<TriangleMesh, MeshError> {
    spec.validate()?;
    let dims = spec.dims();
    let h = spec.voxel_size;
    let origin = spec.aabb.min;
    let corner_pos = |c: [usize; 3]| origin + Vec3::new(c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h);
    let cube_id = |c: [usize; 3]| (c[2] * dims[1] + c[1]) * dims[0] + c[0];
    let cube_of_id = |id: usize| [id % dims[0], (id / dims[0]) % dims[1], id / (dims[0] * dims[1])];

    let active: Vec<usize> = match mask {
        None => (0..dims[0] * dims[1] * dims[2]).collect(),
        Some(index) => {
            let reach = (spec.mask_radius / h).ceil() as i64 + 1;
            let mut cand = std::collections::BTreeSet::new();
            let mut occupied = std::collections::HashSet::new();
            for p in index.points() {
                let c = [0, 1, 2].map(|a| ((p[a] - origin[a]) / h).floor() as i64);
                if !occupied.insert(c) {
                    continue;
                }
                for dz in -reach..=reach {
                    for dy in -reach..=reach {
                        for dx in -reach..=reach {
                            let q = [c[0] + dx, c[1] + dy, c[2] + dz];
                            if (0..3).all(|a| q[a] >= 0 && q[a] < dims[a] as i64) {
                                cand.insert(cube_id(q.map(|v| v as usize)));
                            }
                        }
                    }
                }
            }
            let cand: Vec<usize> = cand.into_iter().collect();
            cand.into_par_iter()
                .filter(|&id| {
                    let c = cube_of_id(id);
                    let center = corner_pos(c) + Vec3::repeat(0.5 * h);
                    index.nearest_within(&center, spec.mask_radius).is_some()
                })
                .collect()
        }
    };

    // Evaluate the SDF once per distinct corner.
    let mut corners: Vec<u64> = Vec::with_capacity(active.len() * 2);
    let n1 = [dims[0] as u64 + 1, dims[1] as u64 + 1];
    let corner_id = |c: [usize; 3]| (c[2] as u64 * n1[1] + c[1] as u64) * n1[0] + c[0] as u64;
    for &id in &active {
        let c = cube_of_id(id);
        for k in 0..8 {
            let o = corner_offset(k);
            corners.push(corner_id([c[0] + o[0], c[1] + o[1], c[2] + o[2]]));
        }
    }
    corners.par_sort_unstable();
    corners.dedup();
    let corner_xyz = |id: u64| {
        let x = (id % n1[0]) as usize;
        let y = ((id / n1[0]) % n1[1]) as usize;
        let z = (id / (n1[0] * n1[1])) as usize;
        [x, y, z]
    };
    let positions: Vec<Vec3> = corners.iter().map(|&id| corner_pos(corner_xyz(id))).collect();
    let values = sdf.values(&positions)?;
    let value_at = |c: [usize; 3]| values[corners.binary_search(&corner_id(c)).expect("corner evaluated")];

    let table = case_table();
    let mut vertices: Vec<Vec3> = Vec::new();
    let mut by_edge: HashMap<u64, u32> = HashMap::new();
    let mut by_pos: HashMap<[i64; 3], u32> = HashMap::new();
    let mut triangles = Vec::new();
    for &id in &active {
        let c = cube_of_id(id);
        let mut v = [0.0; 8];
        let mut case = 0;
        for (k, vk) in v.iter_mut().enumerate() {
            let o = corner_offset(k);
            *vk = value_at([c[0] + o[0], c[1] + o[1], c[2] + o[2]]);
            if *vk < 0.0 {
                case |= 1 << k;
            }
        }
        if case == 0 || case == 255 {
            continue;
        }
        for tri in &table[case] {
            let mut idx = [0u32; 3];
            for (slot, &e) in idx.iter_mut().zip(tri) {
                let (a, b) = EDGES[e as usize];
                let (oa, ob) = (corner_offset(a), corner_offset(b));
                let ca = [c[0] + oa[0], c[1] + oa[1], c[2] + oa[2]];
                let axis = (0..3).find(|&i| oa[i] != ob[i]).unwrap();
                let key = edge_key(ca, axis, dims);
                *slot = *by_edge.entry(key).or_insert_with(|| {
                    let (va, vb) = (v[a], v[b]);
                    let t = (va / (va - vb)).clamp(0.0, 1.0);
                    let cb = [c[0] + ob[0], c[1] + ob[1], c[2] + ob[2]];
                    let p = corner_pos(ca) + (corner_pos(cb) - corner_pos(ca)) * t;
                    // Crossings exactly at a corner land on several edges.
                    let q = [0, 1, 2].map(|i| (p[i] * 1e6).round() as i64);
                    *by_pos.entry(q).or_insert_with(|| {
                        vertices.push(p);
                        (vertices.len() - 1) as u32
                    })
                });
            }
            triangles.push(idx);
        }
    }
    let mut mesh = TriangleMesh {
        vertices,
        triangles,
        normals: None,
        intensities: None,
    };
    mesh.triangles.retain(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2]);
    let keep: Vec<bool> = (0..mesh.triangles.len()).map(|t| mesh.triangle_area(t) >= 1e-12).collect();
    let mut k = keep.iter();
    mesh.triangles.retain(|_| *k.next().unwrap());
    compact_vertices(&mut mesh);
    if mesh.is_empty() {
        warn!("mesh extraction produced no triangles");
        return Ok(mesh);
    }
    let grads = sdf.gradients(&mesh.vertices)?;
    mesh.normals = Some(
        grads
            .into_iter()
            .map(|g| {
                let n = g.norm();
                if n > 0.0 {
                    g / n
                } else {
                    Vec3::zeros()
                }
            })
            .collect(),
    );
    Ok(mesh)
}

/// Drops vertices no triangle uses, preserving order.
fn compact_vertices(mesh: &mut TriangleMesh) {
    let mut remap = vec![u32::MAX; mesh.vertices.len()];
    let mut used = vec![false; mesh.vertices.len()];
    for t in &mesh.triangles {
        for &i in t {
            used[i as usize] = true;
        }
    }
    let mut out = Vec::new();
    for (i, v) in mesh.vertices.iter().enumerate() {
        if used[i] {
            remap[i] = out.len() as u32;
            out.push(*v);
        }
    }
    mesh.vertices = out;
    for t in &mut mesh.triangles {
        for i in t.iter_mut() {
            *i = remap[*i as usize];
        }
    }
}

/// Viewing direction used when querying vertex intensities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewDirPolicy {
    /// The same unit direction for every vertex.
    Fixed(Vec3),
    /// Looking straight at the surface: `v = −n`.
    AgainstNormal,
    /// From a sensor position: `v = normalize(vertex − sensor)`.
    FromSensor(Vec3),
}

impl ViewDirPolicy {
    pub fn direction(&self, vertex: &Vec3, normal: Option<&Vec3>) -> Vec3 {
        let v = match self {
            ViewDirPolicy::Fixed(d) => *d,
            ViewDirPolicy::AgainstNormal => -normal.copied().unwrap_or_else(Vec3::z),
            ViewDirPolicy::FromSensor(s) => vertex - s,
        };
        let n = v.norm();
        if n > 0.0 {
            v / n
        } else {
            Vec3::x()
        }
    }
}

/// Sets per-vertex intensity from `query(points, view_dirs)`.
pub fn attach_intensity<Q>(mesh: &mut TriangleMesh, policy: ViewDirPolicy, query: Q) -> Result<(), FieldError>
where
    Q: FnOnce(&[Vec3], &[Vec3]) -> Result<Vec<f64>, FieldError>,
{
    let dirs: Vec<Vec3> = mesh
        .vertices
        .iter()
        .enumerate()
        .map(|(i, v)| policy.direction(v, mesh.normals.as_ref().map(|n| &n[i])))
        .collect();
    mesh.intensities = Some(query(&mesh.vertices, &dirs)?);
    Ok(())
}

/// Binary little-endian PLY: `x y z nx ny nz [intensity]` as float32, with
/// `red green blue` bytes from the normals when `color_by_normal` is set.
pub fn write_ply<W: Write>(mesh: &TriangleMesh, mut w: W, color_by_normal: bool) -> std::io::Result<()> {
    writeln!(w, "ply\nformat binary_little_endian 1.0")?;
    writeln!(w, "element vertex {}", mesh.vertices.len())?;
    for p in ["x", "y", "z", "nx", "ny", "nz"] {
        writeln!(w, "property float {p}")?;
    }
    if mesh.intensities.is_some() {
        writeln!(w, "property float intensity")?;
    }
    if color_by_normal {
        for p in ["red", "green", "blue"] {
            writeln!(w, "property uchar {p}")?;
        }
    }
    writeln!(w, "element face {}", mesh.triangles.len())?;
    writeln!(w, "property list uchar int vertex_indices\nend_header")?;
    let mut buf = Vec::with_capacity(mesh.vertices.len() * 31 + mesh.triangles.len() * 13);
    for (i, v) in mesh.vertices.iter().enumerate() {
        let n = mesh.normals.as_ref().map_or(Vec3::zeros(), |n| n[i]);
        for x in v.iter().chain(n.iter()) {
            buf.extend_from_slice(&(*x as f32).to_le_bytes());
        }
        if let Some(it) = &mesh.intensities {
            buf.extend_from_slice(&(it[i] as f32).to_le_bytes());
        }
        if color_by_normal {
            for a in 0..3 {
                buf.push(((n[a] * 0.5 + 0.5).clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    for t in &mesh.triangles {
        buf.push(3);
        for i in t {
            buf.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    w.write_all(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cube_spec(half: f64, voxel: f64) -> VoxelGridSpec {
        VoxelGridSpec {
            aabb: Aabb::new(Vec3::repeat(-half), Vec3::repeat(half)).unwrap(),
            voxel_size: voxel,
            mask_radius: 0.5,
        }
    }

    #[test]
    fn table_shape() {
        let t = case_table();
        assert!(t[0].is_empty() && t[255].is_empty());
        for c in 1..255 {
            assert!(!t[c].is_empty(), "case {c}");
            assert!(t[c].len() <= 5, "case {c} has {} triangles", t[c].len());
        }
        // One corner inside: a single triangle.
        assert_eq!(t[1].len(), 1);
        // Complementary single-corner cases wind oppositely.
        let a = t[1][0];
        let b = t[254][0];
        let mut sa = a;
        sa.sort();
        let mut sb = b;
        sb.sort();
        assert_eq!(sa, sb);
    }

    #[test]
    fn sphere_is_closed_and_accurate() {
        let sdf = FnSdf(|x: &Vec3| x.norm() - 1.0);
        let mesh = extract_mesh(&sdf, &cube_spec(1.3, 0.05), None).unwrap();
        assert!(!mesh.is_empty());
        assert_eq!(mesh.boundary_edge_count(), 0);
        assert_eq!(mesh.euler_characteristic(), 2);
        for v in &mesh.vertices {
            assert!((v.norm() - 1.0).abs() < 0.05);
        }
        // Faces and normals point outward (positive side).
        for t in 0..mesh.triangles.len() {
            let [a, b, c] = mesh.triangle(t);
            assert!(mesh.face_normal(t).dot(&((a + b + c) / 3.0)) > 0.0);
        }
        let n = mesh.normals.as_ref().unwrap();
        for (v, n) in mesh.vertices.iter().zip(n) {
            assert!((n - v.normalize()).norm() < 1e-3);
        }
    }

    #[test]
    fn plane_vertices_exact() {
        let sdf = FnSdf(|x: &Vec3| x.z - 0.0123);
        let spec = cube_spec(1.0, 0.1);
        let mesh = extract_mesh(&sdf, &spec, None).unwrap();
        for v in &mesh.vertices {
            assert!((v.z - 0.0123).abs() < 1e-6 * spec.voxel_size);
        }
        for t in 0..mesh.triangles.len() {
            assert!(mesh.face_normal(t).z > 0.0);
        }
        assert!((mesh.surface_area() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn constant_field_gives_empty_mesh() {
        let sdf = FnSdf(|_: &Vec3| 1.0);
        assert!(extract_mesh(&sdf, &cube_spec(1.0, 0.1), None).unwrap().is_empty());
    }

    #[test]
    fn random_fields_are_crack_free() {
        // Interior edges of random sign patterns must be shared by exactly two
        // triangles; only cut edges on the grid boundary may be open.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let vals: Vec<f64> = (0..11 * 11 * 11).map(|_| rng.random_range(-1.0..1.0)).collect();
        let sdf = FnSdf(move |x: &Vec3| {
            let i = [0, 1, 2].map(|a| ((x[a] + 1.0) / 0.2).round() as usize);
            vals[(i[2] * 11 + i[1]) * 11 + i[0]]
        });
        let mesh = extract_mesh(&sdf, &cube_spec(1.0, 0.2), None).unwrap();
        let on_boundary = |v: &Vec3| (0..3).any(|a| (v[a].abs() - 1.0).abs() < 1e-9);
        for ((a, b), count) in mesh.edge_counts() {
            let (pa, pb) = (mesh.vertices[a as usize], mesh.vertices[b as usize]);
            if !(on_boundary(&pa) && on_boundary(&pb)) {
                assert_eq!(count, 2, "edge {pa:?} {pb:?}");
            }
        }
    }

    #[test]
    fn mask_limits_extraction() {
        let sdf = FnSdf(|x: &Vec3| x.z);
        let pts = PointIndex::new(vec![Vec3::new(0.3, 0.3, 0.0)], 0.5);
        let spec = cube_spec(2.0, 0.1);
        let mesh = extract_mesh(&sdf, &spec, Some(&pts)).unwrap();
        assert!(!mesh.is_empty());
        for v in &mesh.vertices {
            assert!((v - Vec3::new(0.3, 0.3, 0.0)).norm() <= spec.mask_radius + spec.voxel_size * 3f64.sqrt());
        }
    }

    #[test]
    fn intensity_policies() {
        let mut mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
            normals: Some(vec![Vec3::z(); 3]),
            intensities: None,
        };
        attach_intensity(&mut mesh, ViewDirPolicy::Fixed(Vec3::x()), |p, _| Ok(vec![0.25; p.len()])).unwrap();
        assert_eq!(mesh.intensities.as_deref(), Some(&[0.25; 3][..]));
        let s = Vec3::new(0.0, 0.0, 5.0);
        assert_eq!(ViewDirPolicy::FromSensor(s).direction(&Vec3::x(), None), (Vec3::x() - s).normalize());
        assert_eq!(ViewDirPolicy::AgainstNormal.direction(&Vec3::x(), Some(&Vec3::z())), -Vec3::z());
    }

    #[test]
    fn ply_layout() {
        let mesh = TriangleMesh {
            vertices: vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            triangles: vec![[0, 1, 2]],
            normals: Some(vec![Vec3::z(); 3]),
            intensities: Some(vec![0.5; 3]),
        };
        let mut out = Vec::new();
        write_ply(&mesh, &mut out, true).unwrap();
        let header_end = out.windows(11).position(|w| w == b"end_header\n").unwrap() + 11;
        assert_eq!(out.len() - header_end, 3 * (7 * 4 + 3) + (1 + 12));
    }
}
