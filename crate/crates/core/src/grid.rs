//! Tri-quadtree feature encoding.
//!
//! A point is projected onto the XY, YZ and XZ planes. Each plane holds a
//! quadtree whose `levels` deepest levels carry learnable feature vectors at
//! their cell vertices. The feature of a point is the bilinear interpolation
//! of the four surrounding vertex vectors at every level, summed over levels
//! and then summed (or concatenated) over the three planes.
//!
//! Vertices only exist once a training query has touched them, so memory
//! follows the observed surface rather than the scene volume. Each
//! (plane, level) pair owns an exact open-addressing hash table from the
//! integer vertex coordinate to a slot in a dense feature buffer.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::geometry::{Aabb, Vec3};
use crate::optim::{Adam, AdamMoments};

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid config: {0}")]
    InvalidConfig(String),
    #[error("vertex {key:?} of table {table} is not allocated")]
    MissingVertex { table: usize, key: VertexKey },
    #[error("upstream gradient has length {found}, expected {expected}")]
    GradientShape { found: usize, expected: usize },
    #[error(transparent)]
    Decode(#[from] DecodeError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Plane {
    Xy,
    Yz,
    Xz,
}

impl Plane {
    pub const ALL: [Plane; 3] = [Plane::Xy, Plane::Yz, Plane::Xz];

    /// World axes spanning the plane.
    pub fn axes(self) -> (usize, usize) {
        match self {
            Plane::Xy => (0, 1),
            Plane::Yz => (1, 2),
            Plane::Xz => (0, 2),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlaneCombine {
    Sum,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    /// Cell size of the finest feature level, metres.
    pub leaf_resolution: f64,
    /// Number of feature-bearing quadtree levels.
    pub levels: usize,
    pub feature_dim: usize,
    pub combine: PlaneCombine,
    /// Half-width of the uniform initialization interval.
    pub init_scale: f64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            leaf_resolution: 0.2,
            levels: 3,
            feature_dim: 8,
            combine: PlaneCombine::Sum,
            init_scale: 1e-4,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), GridError> {
        if !(self.leaf_resolution > 0.0) {
            return Err(GridError::InvalidConfig("leaf_resolution must be positive".into()));
        }
        if self.levels == 0 || self.levels > 16 {
            return Err(GridError::InvalidConfig("levels must be in 1..=16".into()));
        }
        if self.feature_dim == 0 {
            return Err(GridError::InvalidConfig("feature_dim must be >= 1".into()));
        }
        if !(self.init_scale >= 0.0) {
            return Err(GridError::InvalidConfig("init_scale must be >= 0".into()));
        }
        Ok(())
    }

    /// Width of the combined feature vector.
    pub fn output_dim(&self) -> usize {
        match self.combine {
            PlaneCombine::Sum => self.feature_dim,
            PlaneCombine::Concat => 3 * self.feature_dim,
        }
    }

    /// Cell size at `level`; level 0 is the coarsest feature level.
    pub fn cell_size(&self, level: usize) -> f64 {
        self.leaf_resolution * (1u64 << (self.levels - 1 - level)) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VertexKey(pub i32, pub i32);

const EMPTY: u32 = u32::MAX;

/// Exact open-addressing map from vertex key to dense slot index. Slots are
/// handed out in insertion order.
#[derive(Clone, Debug, PartialEq)]
struct VertexIndex {
    slots: Vec<u32>,
    keys: Vec<VertexKey>,
    salt: u64,
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl VertexIndex {
    fn new(salt: u64) -> Self {
        Self {
            slots: vec![EMPTY; 16],
            keys: Vec::new(),
            salt,
        }
    }

    fn hash(&self, k: VertexKey) -> u64 {
        let h = (k.0 as u32 as u64).wrapping_mul(73_856_093) ^ (k.1 as u32 as u64).wrapping_mul(19_349_663) << 32;
        mix64(h ^ self.salt)
    }

    fn find(&self, k: VertexKey) -> Result<u32, usize> {
        let mask = self.slots.len() - 1;
        let mut i = self.hash(k) as usize & mask;
        loop {
            match self.slots[i] {
                EMPTY => return Err(i),
                e if self.keys[e as usize] == k => return Ok(e),
                _ => i = (i + 1) & mask,
            }
        }
    }

    fn get(&self, k: VertexKey) -> Option<u32> {
        self.find(k).ok()
    }

    /// Returns `(entry, newly_inserted)`.
    fn insert(&mut self, k: VertexKey) -> (u32, bool) {
        if let Ok(e) = self.find(k) {
            return (e, false);
        }
        if 4 * (self.keys.len() + 1) > 3 * self.slots.len() {
            self.grow();
        }
        let slot = self.find(k).unwrap_err();
        let e = self.keys.len() as u32;
        self.slots[slot] = e;
        self.keys.push(k);
        (e, true)
    }

    fn grow(&mut self) {
        let cap = self.slots.len() * 2;
        self.slots = vec![EMPTY; cap];
        for (e, &k) in self.keys.iter().enumerate() {
            let slot = self.find(k).unwrap_err();
            self.slots[slot] = e as u32;
        }
    }

    fn len(&self) -> usize {
        self.keys.len()
    }
}

/// Vertex features of one (plane, level) pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    index: VertexIndex,
    pub features: Vec<f64>,
    pub grads: Vec<f64>,
    pub moments: AdamMoments,
}

impl FeatureTable {
    fn new(salt: u64) -> Self {
        Self {
            index: VertexIndex::new(salt),
            features: Vec::new(),
            grads: Vec::new(),
            moments: AdamMoments::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self) -> &[VertexKey] {
        &self.index.keys
    }

    pub fn get(&self, k: VertexKey) -> Option<usize> {
        self.index.get(k).map(|e| e as usize)
    }
}

/// One interpolation term of a query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Contribution {
    pub plane: Plane,
    pub level: usize,
    pub key: VertexKey,
    /// Dense slot of the vertex, `None` when it was never allocated.
    pub entry: Option<u32>,
    pub weight: f64,
    /// Derivative of `weight` along the plane's two world axes.
    pub dweight: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureQueryResult {
    pub feature: Vec<f64>,
    pub contributions: Vec<Contribution>,
    /// The query point lay outside the scene box and was clamped onto it.
    pub clamped: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TriQuadtreeGrid {
    pub config: GridConfig,
    pub aabb: Aabb,
    pub seed: u64,
    tables: Vec<FeatureTable>,
}

const MAP_MAGIC: [u8; 4] = *b"RQTG";
const MAP_VERSION: u32 = 1;

impl TriQuadtreeGrid {
    pub fn new(config: GridConfig, aabb: Aabb, seed: u64) -> Result<Self, GridError> {
        config.validate()?;
        let tables = (0..3 * config.levels)
            .map(|t| FeatureTable::new(mix64(seed ^ (t as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15))))
            .collect();
        Ok(Self {
            config,
            aabb,
            seed,
            tables,
        })
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    fn table_index(&self, plane: Plane, level: usize) -> usize {
        let p = match plane {
            Plane::Xy => 0,
            Plane::Yz => 1,
            Plane::Xz => 2,
        };
        p * self.config.levels + level
    }

    pub fn table(&self, plane: Plane, level: usize) -> &FeatureTable {
        &self.tables[self.table_index(plane, level)]
    }

    pub fn tables(&self) -> &[FeatureTable] {
        &self.tables
    }

    pub fn tables_mut(&mut self) -> &mut [FeatureTable] {
        &mut self.tables
    }

    /// Number of allocated vertices over all planes and levels.
    pub fn num_vertices(&self) -> usize {
        self.tables.iter().map(FeatureTable::len).sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.num_vertices() * self.config.feature_dim
    }

    /// Overwrites the stored feature of an allocated vertex, or allocates it.
    pub fn set_feature(&mut self, plane: Plane, level: usize, key: VertexKey, value: &[f64]) {
        let f = self.config.feature_dim;
        assert_eq!(value.len(), f);
        let t = self.table_index(plane, level);
        let e = self.allocate(t, key);
        self.tables[t].features[e * f..(e + 1) * f].copy_from_slice(value);
    }

    pub fn feature(&self, plane: Plane, level: usize, key: VertexKey) -> Option<&[f64]> {
        let f = self.config.feature_dim;
        let t = &self.tables[self.table_index(plane, level)];
        t.get(key).map(|e| &t.features[e * f..(e + 1) * f])
    }

    fn allocate(&mut self, t: usize, key: VertexKey) -> usize {
        let f = self.config.feature_dim;
        let (e, fresh) = self.tables[t].index.insert(key);
        if fresh {
            let mut rng = ChaCha8Rng::seed_from_u64(mix64(
                self.seed ^ mix64(((t as u64) << 48) ^ ((key.0 as u32 as u64) << 24) ^ key.1 as u32 as u64),
            ));
            let s = self.config.init_scale;
            let table = &mut self.tables[t];
            for _ in 0..f {
                let v = if s > 0.0 { rng.random_range(-s..=s) } else { 0.0 };
                table.features.push(v);
            }
            table.grads.resize(table.features.len(), 0.0);
        }
        e as usize
    }

    /// The 4 lattice vertices around `x` on one (plane, level), with their
    /// bilinear weights and weight derivatives.
    fn cell(&self, x: &Vec3, plane: Plane, level: usize) -> [(VertexKey, f64, [f64; 2]); 4] {
        let (a, b) = plane.axes();
        let h = self.config.cell_size(level);
        let u = (x[a] - self.aabb.min[a]) / h;
        let v = (x[b] - self.aabb.min[b]) / h;
        let (iu, iv) = (u.floor(), v.floor());
        let (fu, fv) = (u - iu, v - iv);
        let (iu, iv) = (iu as i32, iv as i32);
        let inv = 1.0 / h;
        let mut out = [(VertexKey(0, 0), 0.0, [0.0; 2]); 4];
        for (n, (du, dv)) in [(0, 0), (1, 0), (0, 1), (1, 1)].into_iter().enumerate() {
            let (wu, gu) = if du == 0 { (1.0 - fu, -inv) } else { (fu, inv) };
            let (wv, gv) = if dv == 0 { (1.0 - fv, -inv) } else { (fv, inv) };
            out[n] = (VertexKey(iu + du, iv + dv), wu * wv, [gu * wv, wu * gv]);
        }
        out
    }

    fn clamp_point(&self, x: &Vec3) -> (Vec3, bool) {
        let c = self.aabb.clamp(x);
        (c, c != *x)
    }

    /// Materializes every vertex a query at `x` would read.
    pub fn allocate_for(&mut self, x: &Vec3) {
        let (x, _) = self.clamp_point(x);
        for plane in Plane::ALL {
            for level in 0..self.config.levels {
                let t = self.table_index(plane, level);
                for (key, _, _) in self.cell(&x, plane, level) {
                    self.allocate(t, key);
                }
            }
        }
    }

    /// Allocates the touched vertices, then queries.
    pub fn query_train(&mut self, x: &Vec3) -> FeatureQueryResult {
        self.allocate_for(x);
        self.query(x)
    }

    /// Read-only query; missing vertices contribute zero.
    pub fn query(&self, x: &Vec3) -> FeatureQueryResult {
        let mut feature = vec![0.0; self.output_dim()];
        let contributions = self.query_into(x, &mut feature, None);
        let clamped = self.clamp_point(x).1;
        FeatureQueryResult {
            feature,
            contributions,
            clamped,
        }
    }

    /// Query writing the feature into `out` and, when `jac` is given, the
    /// derivative of the feature along each world axis into `jac[a]`. Axes on
    /// which the point was clamped have zero derivative.
    pub fn query_into(&self, x: &Vec3, out: &mut [f64], mut jac: Option<[&mut [f64]; 3]>) -> Vec<Contribution> {
        let f = self.config.feature_dim;
        out.fill(0.0);
        if let Some(j) = jac.as_mut() {
            for d in j.iter_mut() {
                d.fill(0.0);
            }
        }
        let (xc, _) = self.clamp_point(x);
        let inside: [bool; 3] = std::array::from_fn(|a| xc[a] == x[a]);
        let mut contributions = Vec::with_capacity(12 * self.config.levels);
        for (p, plane) in Plane::ALL.into_iter().enumerate() {
            let (a, b) = plane.axes();
            let slot = match self.config.combine {
                PlaneCombine::Sum => 0,
                PlaneCombine::Concat => p * f,
            };
            for level in 0..self.config.levels {
                let table = &self.tables[self.table_index(plane, level)];
                for (key, w, mut dw) in self.cell(&xc, plane, level) {
                    if !inside[a] {
                        dw[0] = 0.0;
                    }
                    if !inside[b] {
                        dw[1] = 0.0;
                    }
                    let entry = table.index.get(key);
                    if let Some(e) = entry {
                        let feat = &table.features[e as usize * f..(e as usize + 1) * f];
                        for (o, v) in out[slot..slot + f].iter_mut().zip(feat) {
                            *o += w * v;
                        }
                        if let Some(j) = jac.as_mut() {
                            for k in 0..f {
                                j[a][slot + k] += dw[0] * feat[k];
                                j[b][slot + k] += dw[1] * feat[k];
                            }
                        }
                    }
                    contributions.push(Contribution {
                        plane,
                        level,
                        key,
                        entry,
                        weight: w,
                        dweight: dw,
                    });
                }
            }
        }
        contributions
    }

    /// Accumulates `weight · upstream` into the gradient buffer of every
    /// contributing vertex.
    pub fn scatter_gradient(&mut self, result: &FeatureQueryResult, upstream: &[f64]) -> Result<(), GridError> {
        self.accumulate_gradient(&result.contributions, upstream, None)
    }

    /// Like [`scatter_gradient`](Self::scatter_gradient), additionally
    /// routing adjoints of the feature's spatial derivative (`tangent_upstream[a]`
    /// pairs with `∂feature/∂x_a`) through the weight derivatives.
    pub fn accumulate_gradient(
        &mut self,
        contributions: &[Contribution],
        upstream: &[f64],
        tangent_upstream: Option<[&[f64]; 3]>,
    ) -> Result<(), GridError> {
        let dim = self.output_dim();
        if upstream.len() != dim {
            return Err(GridError::GradientShape {
                found: upstream.len(),
                expected: dim,
            });
        }
        let f = self.config.feature_dim;
        for c in contributions {
            let t = self.table_index(c.plane, c.level);
            let e = match c.entry {
                Some(e) if (e as usize) < self.tables[t].len() && self.tables[t].keys()[e as usize] == c.key => e as usize,
                _ => return Err(GridError::MissingVertex { table: t, key: c.key }),
            };
            let slot = match self.config.combine {
                PlaneCombine::Sum => 0,
                PlaneCombine::Concat => (t / self.config.levels) * f,
            };
            let (a, b) = c.plane.axes();
            let g = &mut self.tables[t].grads[e * f..(e + 1) * f];
            for k in 0..f {
                let mut acc = c.weight * upstream[slot + k];
                if let Some(tu) = tangent_upstream {
                    acc += c.dweight[0] * tu[a][slot + k] + c.dweight[1] * tu[b][slot + k];
                }
                g[k] += acc;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for t in &mut self.tables {
            t.grads.fill(0.0);
        }
    }

    pub fn adam_step(&mut self, adam: &Adam, t: u64) {
        for table in &mut self.tables {
            adam.step(t, &mut table.features, &mut table.grads, &mut table.moments);
        }
    }

    /// Rounds every stored feature to `f32`, the precision of the map file.
    pub fn round_to_storage_precision(&mut self) {
        for t in &mut self.tables {
            for v in &mut t.features {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Map file: magic, version, config block, then per (plane, level) the
    /// entry count followed by `(key.0: i32, key.1: i32, F × f32)` records.
    pub fn serialize(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&MAP_MAGIC);
        w.u32(MAP_VERSION);
        w.f64(self.config.leaf_resolution);
        w.u32(self.config.levels as u32);
        w.u32(self.config.feature_dim as u32);
        w.u8(match self.config.combine {
            PlaneCombine::Sum => 0,
            PlaneCombine::Concat => 1,
        });
        w.f64(self.config.init_scale);
        for a in 0..3 {
            w.f64(self.aabb.min[a]);
        }
        for a in 0..3 {
            w.f64(self.aabb.max[a]);
        }
        w.u64(self.seed);
        w.u32(self.tables.len() as u32);
        let f = self.config.feature_dim;
        for t in &self.tables {
            w.u32(t.len() as u32);
            for (e, k) in t.keys().iter().enumerate() {
                w.i32(k.0);
                w.i32(k.1);
                for v in &t.features[e * f..(e + 1) * f] {
                    w.f32(*v as f32);
                }
            }
        }
        w.buf
    }

    pub fn deserialize(bytes: &[u8]) -> Result<Self, GridError> {
        let mut r = Reader::new(bytes);
        r.magic(MAP_MAGIC)?;
        r.version(MAP_VERSION)?;
        let leaf_resolution = r.f64()?;
        let levels = r.u32()? as usize;
        let feature_dim = r.u32()? as usize;
        let combine = match r.u8()? {
            0 => PlaneCombine::Sum,
            1 => PlaneCombine::Concat,
            c => return Err(DecodeError::Malformed(format!("unknown combine mode {c}")).into()),
        };
        let init_scale = r.f64()?;
        let mut min = Vec3::zeros();
        let mut max = Vec3::zeros();
        for a in 0..3 {
            min[a] = r.f64()?;
        }
        for a in 0..3 {
            max[a] = r.f64()?;
        }
        let seed = r.u64()?;
        let config = GridConfig {
            leaf_resolution,
            levels,
            feature_dim,
            combine,
            init_scale,
        };
        let aabb = Aabb::new(min, max).map_err(|e| DecodeError::Malformed(e.to_string()))?;
        let mut grid = Self::new(config, aabb, seed)?;
        let ntables = r.u32()? as usize;
        if ntables != grid.tables.len() {
            return Err(DecodeError::Malformed(format!("expected {} tables, found {ntables}", grid.tables.len())).into());
        }
        for t in 0..ntables {
            let n = r.u32()? as usize;
            for _ in 0..n {
                let key = VertexKey(r.i32()?, r.i32()?);
                let table = &mut grid.tables[t];
                let (_, fresh) = table.index.insert(key);
                if !fresh {
                    return Err(DecodeError::Malformed(format!("duplicate vertex {key:?} in table {t}")).into());
                }
                for _ in 0..feature_dim {
                    table.features.push(r.f32()? as f64);
                }
                table.grads.resize(table.features.len(), 0.0);
            }
        }
        r.finish()?;
        Ok(grid)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn unit_box() -> Aabb {
        Aabb::new(Vec3::new(-2.0, -2.0, -2.0), Vec3::new(2.0, 2.0, 2.0)).unwrap()
    }

    fn grid(levels: usize, f: usize) -> TriQuadtreeGrid {
        let cfg = GridConfig {
            levels,
            feature_dim: f,
            ..GridConfig::default()
        };
        TriQuadtreeGrid::new(cfg, unit_box(), 7).unwrap()
    }

    #[test]
    fn cell_sizes_run_coarse_to_leaf() {
        let cfg = GridConfig::default();
        assert!((cfg.cell_size(0) - 0.8).abs() < 1e-15);
        assert!((cfg.cell_size(1) - 0.4).abs() < 1e-15);
        assert!((cfg.cell_size(2) - 0.2).abs() < 1e-15);
    }

    #[test]
    fn query_at_vertex_returns_stored_sum() {
        let mut g = grid(2, 3);
        // A point on the lattice of every level: offset from min by a multiple of 0.4.
        let x = Vec3::new(-2.0 + 0.8, -2.0 + 1.6, -2.0 + 0.4);
        g.allocate_for(&x);
        let mut expect = vec![0.0; 3];
        for plane in Plane::ALL {
            let (a, b) = plane.axes();
            for level in 0..2 {
                let h = g.config.cell_size(level);
                let key = VertexKey(
                    ((x[a] - g.aabb.min[a]) / h).round() as i32,
                    ((x[b] - g.aabb.min[b]) / h).round() as i32,
                );
                let v = [level as f64 + 1.0, plane.axes().0 as f64, 0.5];
                g.set_feature(plane, level, key, &v);
                for k in 0..3 {
                    expect[k] += v[k];
                }
            }
        }
        let r = g.query(&x);
        for k in 0..3 {
            assert!((r.feature[k] - expect[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_features_give_zero() {
        let mut g = TriQuadtreeGrid::new(
            GridConfig {
                init_scale: 0.0,
                ..GridConfig::default()
            },
            unit_box(),
            1,
        )
        .unwrap();
        let r = g.query_train(&Vec3::new(0.13, 0.7, -1.1));
        assert_eq!(r.feature, vec![0.0; 8]);
    }

    #[test]
    fn cell_center_averages_corners() {
        let mut g = TriQuadtreeGrid::new(
            GridConfig {
                levels: 1,
                feature_dim: 4,
                init_scale: 0.0,
                ..GridConfig::default()
            },
            unit_box(),
            0,
        )
        .unwrap();
        // Center of cell (10, 10) on XY; z sits on a YZ/XZ vertex column but
        // those tables stay zero.
        let x = Vec3::new(-2.0 + 2.1, -2.0 + 2.1, 0.0);
        let e: [[f64; 4]; 4] = [[1.0, 0.0, 0.0, 0.0], [0.0, 2.0, 0.0, 0.0], [0.0, 0.0, 3.0, 0.0], [0.0, 0.0, 0.0, 4.0]];
        let keys = [VertexKey(10, 10), VertexKey(11, 10), VertexKey(10, 11), VertexKey(11, 11)];
        for (k, v) in keys.iter().zip(&e) {
            g.set_feature(Plane::Xy, 0, *k, v);
        }
        let r = g.query(&x);
        // Brute-force bilinear: each corner weighted (1-|du|)(1-|dv|) with du,dv = 0.5.
        let mut expect = [0.0; 4];
        for (k, v) in keys.iter().zip(&e) {
            let du = (x.x - (-2.0 + k.0 as f64 * 0.2)).abs() / 0.2;
            let dv = (x.y - (-2.0 + k.1 as f64 * 0.2)).abs() / 0.2;
            for i in 0..4 {
                expect[i] += (1.0 - du) * (1.0 - dv) * v[i];
            }
        }
        for i in 0..4 {
            assert!((r.feature[i] - expect[i]).abs() < 1e-12);
            assert!((r.feature[i] - 0.25 * (i as f64 + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn weights_partition_unity() {
        let mut g = grid(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let x = Vec3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let r = g.query_train(&x);
            for group in r.contributions.chunks(4) {
                let s: f64 = group.iter().map(|c| c.weight).sum();
                assert!((s - 1.0).abs() < 1e-9);
                assert!(group.iter().all(|c| c.weight >= 0.0));
            }
        }
    }

    #[test]
    fn read_only_query_of_untouched_space_is_zero() {
        let g = grid(3, 4);
        let r = g.query(&Vec3::new(0.3, 0.3, 0.3));
        assert_eq!(r.feature, vec![0.0; 4]);
        assert!(r.contributions.iter().all(|c| c.entry.is_none()));
        assert_eq!(g.num_vertices(), 0);
    }

    #[test]
    fn outside_points_are_clamped_and_flagged() {
        let mut g = grid(2, 2);
        let inside = g.query_train(&Vec3::new(2.0, 0.5, -0.5));
        let outside = g.query(&Vec3::new(3.5, 0.5, -0.5));
        assert!(outside.clamped && !inside.clamped);
        assert_eq!(inside.feature, outside.feature);
    }

    #[test]
    fn scatter_linearity() {
        let mut g = grid(1, 2);
        let x1 = Vec3::new(0.0, 0.0, 0.0);
        let r1 = g.query_train(&x1);
        g.scatter_gradient(&r1, &[1.0, 2.0]).unwrap();
        let t = g.table_index(Plane::Xy, 0);
        let e = g.tables[t].get(VertexKey(10, 10)).unwrap();
        assert_eq!(&g.tables[t].grads[2 * e..2 * e + 2], &[1.0, 2.0]);

        // Two samples sharing that vertex with weights w1, w2.
        g.zero_grad();
        let x2 = Vec3::new(0.05, 0.1, 0.0);
        let r2 = g.query_train(&x2);
        g.scatter_gradient(&r1, &[1.0, 0.0]).unwrap();
        g.scatter_gradient(&r2, &[0.0, 3.0]).unwrap();
        let w2 = r2
            .contributions
            .iter()
            .find(|c| c.plane == Plane::Xy && c.key == VertexKey(10, 10))
            .unwrap()
            .weight;
        assert!((g.tables[t].grads[2 * e] - 1.0).abs() < 1e-15);
        assert!((g.tables[t].grads[2 * e + 1] - 3.0 * w2).abs() < 1e-15);
    }

    #[test]
    fn scatter_to_missing_vertex_fails() {
        let mut g = grid(1, 2);
        let r = g.query(&Vec3::zeros());
        assert!(matches!(g.scatter_gradient(&r, &[1.0, 1.0]), Err(GridError::MissingVertex { .. })));
        let r = g.query_train(&Vec3::zeros());
        assert!(matches!(g.scatter_gradient(&r, &[1.0]), Err(GridError::GradientShape { .. })));
    }

    #[test]
    fn scatter_weights_match_finite_differences() {
        let mut g = grid(3, 4);
        let x = Vec3::new(0.317, -0.581, 1.093);
        let r = g.query_train(&x);
        let upstream = [0.3, -1.2, 0.7, 2.0];
        g.scatter_gradient(&r, &upstream).unwrap();
        let h = 1e-6;
        for c in &r.contributions {
            let t = g.table_index(c.plane, c.level);
            let e = c.entry.unwrap() as usize;
            for k in 0..4 {
                let orig = g.tables[t].features[e * 4 + k];
                g.tables[t].features[e * 4 + k] = orig + h;
                let fp: f64 = g.query(&x).feature.iter().zip(&upstream).map(|(a, b)| a * b).sum();
                g.tables[t].features[e * 4 + k] = orig - h;
                let fm: f64 = g.query(&x).feature.iter().zip(&upstream).map(|(a, b)| a * b).sum();
                g.tables[t].features[e * 4 + k] = orig;
                let fd = (fp - fm) / (2.0 * h);
                let analytic = g.tables[t].grads[e * 4 + k];
                assert!((fd - analytic).abs() <= 1e-6 * analytic.abs().max(1e-6) + 1e-9, "{fd} vs {analytic}");
            }
        }
    }

    #[test]
    fn spatial_jacobian_matches_finite_differences() {
        let mut g = grid(3, 3);
        g.config.init_scale = 0.5;
        let x = Vec3::new(0.317, -0.581, 1.093);
        for dx in [-0.01, 0.0, 0.01] {
            g.allocate_for(&(x + Vec3::new(dx, dx, dx)));
        }
        let mut out = vec![0.0; 3];
        let (mut jx, mut jy, mut jz) = (vec![0.0; 3], vec![0.0; 3], vec![0.0; 3]);
        g.query_into(&x, &mut out, Some([&mut jx, &mut jy, &mut jz]));
        let h = 1e-7;
        for (a, j) in [&jx, &jy, &jz].into_iter().enumerate() {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fp = g.query(&(x + e)).feature;
            let fm = g.query(&(x - e)).feature;
            for k in 0..3 {
                let fd = (fp[k] - fm[k]) / (2.0 * h);
                assert!((fd - j[k]).abs() < 1e-6 * (1.0 + j[k].abs()));
            }
        }
    }

    #[test]
    fn query_is_lipschitz_at_small_scales() {
        let mut g = grid(3, 4);
        g.config.init_scale = 1.0;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut pts = Vec::new();
        for _ in 0..300 {
            let x = Vec3::new(rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5));
            let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)).normalize();
            let eps = rng.random_range(1e-6..0.02);
            g.allocate_for(&x);
            g.allocate_for(&(x + d * eps));
            pts.push((x, d * eps));
        }
        let max_feat = g.tables.iter().flat_map(|t| t.features.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
        // Each level-plane interpolant has gradient norm <= 2·max/h per axis pair.
        let c: f64 = 3.0 * (0..3).map(|l| 2.0 * 2f64.sqrt() * max_feat / g.config.cell_size(l)).sum::<f64>();
        for (x, d) in pts {
            let a = g.query(&x).feature;
            let b = g.query(&(x + d)).feature;
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(diff <= c * d.norm() + 1e-12);
        }
    }

    #[test]
    fn hash_table_grows_and_stays_exact() {
        let mut idx = VertexIndex::new(42);
        for i in -200..200 {
            for j in -5..5 {
                idx.insert(VertexKey(i, j));
            }
        }
        assert_eq!(idx.len(), 4000);
        assert!(4 * idx.len() <= 3 * idx.slots.len());
        for i in -200..200 {
            for j in -5..5 {
                let e = idx.get(VertexKey(i, j)).unwrap();
                assert_eq!(idx.keys[e as usize], VertexKey(i, j));
            }
        }
        assert!(idx.get(VertexKey(1000, 0)).is_none());
    }

    #[test]
    fn deterministic_initialization_is_order_independent() {
        let mut a = grid(2, 4);
        let mut b = grid(2, 4);
        let p = Vec3::new(0.1, 0.2, 0.3);
        let q = Vec3::new(-1.0, 0.9, 0.0);
        a.allocate_for(&p);
        a.allocate_for(&q);
        b.allocate_for(&q);
        b.allocate_for(&p);
        assert_eq!(a.query(&p).feature, b.query(&p).feature);
        assert_eq!(a.query(&q).feature, b.query(&q).feature);
    }

    #[test]
    fn empty_grid_round_trip() {
        let g = grid(3, 8);
        let bytes = g.serialize();
        let back = TriQuadtreeGrid::deserialize(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.num_vertices(), 0);
    }

    #[test]
    fn populated_round_trip_is_bit_exact() {
        let mut g = grid(3, 8);
        g.set_feature(Plane::Yz, 1, VertexKey(3, -4), &[0.5; 8]);
        g.query_train(&Vec3::new(0.4, 0.4, 0.4));
        g.round_to_storage_precision();
        let bytes = g.serialize();
        let back = TriQuadtreeGrid::deserialize(&bytes).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.serialize(), bytes);
    }

    #[test]
    fn decode_errors() {
        let g = grid(1, 2);
        let mut bytes = g.serialize();
        assert!(matches!(
            TriQuadtreeGrid::deserialize(&bytes[..bytes.len() - 1]),
            Err(GridError::Decode(DecodeError::Truncated { .. }))
        ));
        bytes[4] = 9;
        assert!(matches!(
            TriQuadtreeGrid::deserialize(&bytes),
            Err(GridError::Decode(DecodeError::VersionMismatch { found: 9, .. }))
        ));
        assert!(matches!(
            TriQuadtreeGrid::deserialize(b"nope"),
            Err(GridError::Decode(DecodeError::BadMagic { .. }))
        ));
    }

    #[test]
    fn concat_mode_widens_output() {
        let mut g = TriQuadtreeGrid::new(
            GridConfig {
                combine: PlaneCombine::Concat,
                feature_dim: 2,
                levels: 1,
                init_scale: 0.0,
                ..GridConfig::default()
            },
            unit_box(),
            0,
        )
        .unwrap();
        let x = Vec3::new(0.0, 0.0, 0.0);
        g.set_feature(Plane::Yz, 0, VertexKey(10, 10), &[1.0, 2.0]);
        let r = g.query(&x);
        assert_eq!(r.feature, vec![0.0, 0.0, 1.0, 2.0, 0.0, 0.0]);
    }
}
