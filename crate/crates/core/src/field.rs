//! The SDF network and the intensity network, wired together.
//!
//! ```text
//!  x ──► tri-quadtree feature ─┐
//!  x ──► Fourier features ─────┴─► SDF net ──► d, g (geometry feature), n = ∇ₓd
//!  x ──► Fourier features ─┐
//!  v ──► spherical harm. ──┼─► intensity net ──► i ∈ [0, 1]
//!  d, g, n ────────────────┘
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{DecodeError, Reader, Writer};
use crate::encoding::{EncodingError, FourierEncodingConfig, SphericalHarmonicsConfig};
use crate::geometry::{Aabb, Vec3};
use crate::grid::{Contribution, GridConfig, GridError, TriQuadtreeGrid};
use crate::nets::{Activation, Mlp, MlpGradients, MlpTape, NetError};

#[derive(Debug, Error)]
pub enum FieldError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncodingConfig {
    pub fourier: FourierEncodingConfig,
    pub sh: SphericalHarmonicsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub sdf_hidden: Vec<usize>,
    pub intensity_hidden: Vec<usize>,
    pub geo_feature_dim: usize,
    /// Feed the geometry feature `g` to the intensity network.
    pub use_geo_feature: bool,
    /// Feed the SDF normal `n` to the intensity network.
    pub use_normals: bool,
    /// Feed any SDF output to the intensity network at all.
    pub use_sdf: bool,
    /// Let the intensity loss update the SDF network and the grid.
    pub intensity_grad_to_sdf: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            sdf_hidden: vec![64, 64],
            intensity_hidden: vec![64, 64],
            geo_feature_dim: 15,
            use_geo_feature: true,
            use_normals: true,
            use_sdf: true,
            intensity_grad_to_sdf: true,
        }
    }
}

/// Intensity-network input configurations compared in the ablation study.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    #[default]
    Full,
    NoSdf,
    NoNormals,
    NoGeofeature,
}

impl Ablation {
    pub fn apply(self, cfg: &mut NetworkConfig) {
        match self {
            Ablation::Full => {}
            Ablation::NoSdf => cfg.use_sdf = false,
            Ablation::NoNormals => cfg.use_normals = false,
            Ablation::NoGeofeature => cfg.use_geo_feature = false,
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Ablation::Full),
            "no-sdf" => Ok(Ablation::NoSdf),
            "no-normals" => Ok(Ablation::NoNormals),
            "no-geofeature" => Ok(Ablation::NoGeofeature),
            _ => Err(format!("unknown ablation '{s}' (full|no-sdf|no-normals|no-geofeature)")),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub encoding: EncodingConfig,
    pub grid: GridConfig,
    pub network: NetworkConfig,
}

impl FieldConfig {
    pub fn validate(&self) -> Result<(), FieldError> {
        self.encoding.fourier.validate()?;
        self.encoding.sh.validate()?;
        self.grid.validate()?;
        let n = &self.network;
        if n.sdf_hidden.contains(&0) || n.intensity_hidden.contains(&0) {
            return Err(FieldError::InvalidConfig("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    pub fn sdf_in_dim(&self) -> usize {
        self.grid.output_dim() + self.encoding.fourier.dim()
    }

    /// `1 + geo_feature_dim` when the geometry feature is produced.
    pub fn sdf_out_dim(&self) -> usize {
        1 + if self.emits_geo_feature() { self.network.geo_feature_dim } else { 0 }
    }

    fn emits_geo_feature(&self) -> bool {
        self.network.use_sdf && self.network.use_geo_feature
    }

    fn uses_normals(&self) -> bool {
        self.network.use_sdf && self.network.use_normals
    }

    /// Width of the `[d, g, n]` block handed to the intensity network.
    pub fn geometry_width(&self) -> usize {
        if !self.network.use_sdf {
            return 0;
        }
        1 + if self.emits_geo_feature() { self.network.geo_feature_dim } else { 0 } + if self.uses_normals() { 3 } else { 0 }
    }

    pub fn intensity_in_dim(&self) -> usize {
        self.encoding.fourier.dim() + self.encoding.sh.dim() + self.geometry_width()
    }
}

/// Maps world coordinates into the `[-1, 1]³` cube seen by the Fourier
/// encoding.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneScale {
    pub center: Vec3,
    pub inv_half_extent: f64,
}

impl SceneScale {
    pub fn from_aabb(aabb: &Aabb) -> Self {
        let half = 0.5 * aabb.extent().max();
        Self {
            center: aabb.center(),
            inv_half_extent: if half > 0.0 { 1.0 / half } else { 1.0 },
        }
    }

    pub fn normalize(&self, x: &Vec3) -> Vec3 {
        (x - self.center) * self.inv_half_extent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdfOutput {
    pub d: f64,
    pub g: Option<Vec<f64>>,
    pub n: Option<Vec3>,
}

/// Recorded SDF pass over a batch.
pub struct SdfBatch {
    pub len: usize,
    pub out_dim: usize,
    pub with_normals: bool,
    pub tape: MlpTape,
    pub contributions: Vec<Vec<Contribution>>,
}

impl SdfBatch {
    pub fn d(&self, i: usize) -> f64 {
        self.tape.output()[i * self.out_dim]
    }

    pub fn g(&self, i: usize) -> &[f64] {
        &self.tape.output()[i * self.out_dim + 1..(i + 1) * self.out_dim]
    }

    pub fn n(&self, i: usize) -> Option<Vec3> {
        if !self.with_normals {
            return None;
        }
        let t = self.tape.tangent_output();
        let stride = self.len * self.out_dim;
        Some(Vec3::new(
            t[i * self.out_dim],
            t[stride + i * self.out_dim],
            t[2 * stride + i * self.out_dim],
        ))
    }
}

/// Adjoints routed into the grid after an SDF backward pass.
pub struct GridUpstream {
    pub contributions: Vec<Vec<Contribution>>,
    pub feature_dim: usize,
    pub upstream: Vec<f64>,
    pub tangent: Option<Vec<f64>>,
}

impl GridUpstream {
    pub fn apply(&self, grid: &mut TriQuadtreeGrid) -> Result<(), GridError> {
        let g = self.feature_dim;
        let n = self.contributions.len();
        for (i, c) in self.contributions.iter().enumerate() {
            let up = &self.upstream[i * g..(i + 1) * g];
            match &self.tangent {
                Some(t) => {
                    let s = n * g;
                    let tu = [
                        &t[i * g..(i + 1) * g],
                        &t[s + i * g..s + (i + 1) * g],
                        &t[2 * s + i * g..2 * s + (i + 1) * g],
                    ];
                    grid.accumulate_gradient(c, up, Some(tu))?;
                }
                None => grid.accumulate_gradient(c, up, None)?,
            }
        }
        Ok(())
    }
}

const CKPT_MAGIC: [u8; 4] = *b"RQNN";
const CKPT_VERSION: u32 = 1;
const QUERY_CHUNK: usize = 512;

#[derive(Clone, Debug, PartialEq)]
pub struct RadarField {
    pub config: FieldConfig,
    pub scale: SceneScale,
    pub grid: TriQuadtreeGrid,
    pub sdf_net: Mlp,
    pub intensity_net: Mlp,
}

impl RadarField {
    pub fn new(config: FieldConfig, aabb: Aabb, seed: u64) -> Result<Self, FieldError> {
        config.validate()?;
        let grid = TriQuadtreeGrid::new(config.grid, aabb, seed)?;
        let mut sdf_sizes = vec![config.sdf_in_dim()];
        sdf_sizes.extend(&config.network.sdf_hidden);
        sdf_sizes.push(config.sdf_out_dim());
        let mut int_sizes = vec![config.intensity_in_dim()];
        int_sizes.extend(&config.network.intensity_hidden);
        int_sizes.push(1);
        Ok(Self {
            scale: SceneScale::from_aabb(&aabb),
            grid,
            sdf_net: Mlp::new(&sdf_sizes, Activation::Relu, Activation::Identity, seed.wrapping_add(1)),
            intensity_net: Mlp::new(&int_sizes, Activation::Relu, Activation::Sigmoid, seed.wrapping_add(2)),
            config,
        })
    }

    pub fn aabb(&self) -> Aabb {
        self.grid.aabb
    }

    /// Whether SDF passes feeding the intensity net need normals.
    pub fn needs_normals(&self) -> bool {
        self.config.uses_normals()
    }

    /// Assembles `[grid feature | Fourier(x)]` rows and, optionally, their
    /// derivatives along each world axis.
    fn sdf_inputs(&self, xs: &[Vec3], jacobian: bool) -> (Vec<f64>, Vec<f64>, Vec<Vec<Contribution>>) {
        let n = xs.len();
        let gd = self.grid.output_dim();
        let fd = self.config.encoding.fourier.dim();
        let w = gd + fd;
        let mut input = vec![0.0; n * w];
        let mut tangents = vec![0.0; if jacobian { 3 * n * w } else { 0 }];
        let mut contributions = Vec::with_capacity(n);
        let fourier = &self.config.encoding.fourier;
        let s = self.scale.inv_half_extent;
        let mut fj = [vec![0.0; fd], vec![0.0; fd], vec![0.0; fd]];
        for (i, x) in xs.iter().enumerate() {
            let row = &mut input[i * w..(i + 1) * w];
            let (gpart, fpart) = row.split_at_mut(gd);
            let xn = self.scale.normalize(x);
            fourier.encode_into(&xn, fpart);
            if jacobian {
                let (t0, rest) = tangents.split_at_mut(n * w);
                let (t1, t2) = rest.split_at_mut(n * w);
                let (g0, f0) = t0[i * w..(i + 1) * w].split_at_mut(gd);
                let (g1, f1) = t1[i * w..(i + 1) * w].split_at_mut(gd);
                let (g2, f2) = t2[i * w..(i + 1) * w].split_at_mut(gd);
                contributions.push(self.grid.query_into(x, gpart, Some([g0, g1, g2])));
                let [j0, j1, j2] = &mut fj;
                fourier.jacobian_into(&xn, [j0, j1, j2]);
                for (dst, src) in [(f0, &fj[0]), (f1, &fj[1]), (f2, &fj[2])] {
                    for (d, v) in dst.iter_mut().zip(src) {
                        *d = v * s;
                    }
                }
            } else {
                contributions.push(self.grid.query_into(x, gpart, None));
            }
        }
        (input, tangents, contributions)
    }

    pub fn sdf_forward_batch(&self, xs: &[Vec3], with_normals: bool) -> Result<SdfBatch, FieldError> {
        let (input, tangents, contributions) = self.sdf_inputs(xs, with_normals);
        let nt = if with_normals { 3 } else { 0 };
        let tape = self.sdf_net.forward(&input, xs.len(), &tangents, nt);
        if let Some(row) = first_non_finite(tape.output(), self.sdf_net.out_dim()) {
            return Err(NetError::NonFinite { stage: "sdf forward", row }.into());
        }
        Ok(SdfBatch {
            len: xs.len(),
            out_dim: self.config.sdf_out_dim(),
            with_normals,
            tape,
            contributions,
        })
    }

    /// `[d, g?, n?]` rows for the intensity network.
    pub fn geometry_inputs(&self, sdf: &SdfBatch) -> Vec<f64> {
        let w = self.config.geometry_width();
        let mut out = Vec::with_capacity(sdf.len * w);
        if w == 0 {
            return out;
        }
        for i in 0..sdf.len {
            out.push(sdf.d(i));
            if self.config.emits_geo_feature() {
                out.extend_from_slice(sdf.g(i));
            }
            if self.config.uses_normals() {
                let n = sdf.n(i).expect("normals recorded for intensity input");
                out.extend_from_slice(n.as_slice());
            }
        }
        out
    }

    pub fn intensity_inputs(&self, xs: &[Vec3], dirs: &[Vec3], geometry: &[f64]) -> Result<Vec<f64>, FieldError> {
        let fd = self.config.encoding.fourier.dim();
        let sd = self.config.encoding.sh.dim();
        let gw = self.config.geometry_width();
        let w = fd + sd + gw;
        assert_eq!(geometry.len(), xs.len() * gw);
        let mut input = vec![0.0; xs.len() * w];
        for (i, (x, v)) in xs.iter().zip(dirs).enumerate() {
            let row = &mut input[i * w..(i + 1) * w];
            self.config.encoding.fourier.encode_into(&self.scale.normalize(x), &mut row[..fd]);
            self.config.encoding.sh.encode_into(v, &mut row[fd..fd + sd])?;
            row[fd + sd..].copy_from_slice(&geometry[i * gw..(i + 1) * gw]);
        }
        Ok(input)
    }

    pub fn intensity_forward_batch(&self, xs: &[Vec3], dirs: &[Vec3], geometry: &[f64]) -> Result<MlpTape, FieldError> {
        let input = self.intensity_inputs(xs, dirs, geometry)?;
        let tape = self.intensity_net.forward(&input, xs.len(), &[], 0);
        if let Some(row) = first_non_finite(tape.output(), 1) {
            return Err(NetError::NonFinite { stage: "intensity forward", row }.into());
        }
        Ok(tape)
    }

    /// Splits an intensity-input adjoint into the `(d, g, n)` adjoints that
    /// flow back into the SDF network.
    pub fn split_geometry_adjoint(&self, input_adj: &[f64], len: usize) -> (Vec<f64>, Option<Vec<f64>>, Option<Vec<f64>>) {
        let w = self.config.intensity_in_dim();
        let off = self.config.encoding.fourier.dim() + self.config.encoding.sh.dim();
        let gd = self.config.network.geo_feature_dim;
        let mut d = vec![0.0; len];
        let mut g = self.config.emits_geo_feature().then(|| vec![0.0; len * gd]);
        // Normal adjoints laid out as 3 stacked `len` blocks (tangent order).
        let mut n = self.config.uses_normals().then(|| vec![0.0; 3 * len]);
        if self.config.geometry_width() == 0 {
            return (d, None, None);
        }
        for i in 0..len {
            let row = &input_adj[i * w + off..(i + 1) * w];
            d[i] = row[0];
            let mut k = 1;
            if let Some(g) = g.as_mut() {
                g[i * gd..(i + 1) * gd].copy_from_slice(&row[k..k + gd]);
                k += gd;
            }
            if let Some(n) = n.as_mut() {
                for a in 0..3 {
                    n[a * len + i] = row[k + a];
                }
            }
        }
        (d, g, n)
    }

    /// Reverse pass through the SDF network. `d_adj` has one entry per row,
    /// `g_adj` is `len × geo_feature_dim`, `n_adj` holds three stacked
    /// `len` blocks. Returns the grid adjoints to be applied.
    pub fn sdf_backward(
        &self,
        batch: &mut SdfBatch,
        d_adj: &[f64],
        g_adj: Option<&[f64]>,
        n_adj: Option<&[f64]>,
        grads: &mut MlpGradients,
    ) -> Result<GridUpstream, FieldError> {
        let (len, od) = (batch.len, batch.out_dim);
        let mut out_adj = vec![0.0; len * od];
        for i in 0..len {
            out_adj[i * od] = d_adj[i];
            if let Some(g) = g_adj {
                out_adj[i * od + 1..(i + 1) * od].copy_from_slice(&g[i * (od - 1)..(i + 1) * (od - 1)]);
            }
        }
        let tangent_adj = match (n_adj, batch.with_normals) {
            (Some(n), true) => {
                let mut t = vec![0.0; 3 * len * od];
                for a in 0..3 {
                    for i in 0..len {
                        t[a * len * od + i * od] = n[a * len + i];
                    }
                }
                Some(t)
            }
            _ => None,
        };
        let (in_adj, tan_adj) = self.sdf_net.backward(&mut batch.tape, &out_adj, tangent_adj.as_deref(), grads)?;
        let gd = self.grid.output_dim();
        let w = self.config.sdf_in_dim();
        let mut upstream = vec![0.0; len * gd];
        for i in 0..len {
            upstream[i * gd..(i + 1) * gd].copy_from_slice(&in_adj[i * w..i * w + gd]);
        }
        let tangent = tangent_adj.map(|_| {
            let mut t = vec![0.0; 3 * len * gd];
            for a in 0..3 {
                for i in 0..len {
                    let src = a * len * w + i * w;
                    t[a * len * gd + i * gd..a * len * gd + (i + 1) * gd].copy_from_slice(&tan_adj[src..src + gd]);
                }
            }
            t
        });
        Ok(GridUpstream {
            contributions: std::mem::take(&mut batch.contributions),
            feature_dim: gd,
            upstream,
            tangent,
        })
    }

    pub fn sdf_forward(&self, x: &Vec3) -> Result<SdfOutput, FieldError> {
        let normals = self.needs_normals();
        let b = self.sdf_forward_batch(std::slice::from_ref(x), normals)?;
        Ok(SdfOutput {
            d: b.d(0),
            g: self.config.emits_geo_feature().then(|| b.g(0).to_vec()),
            n: b.n(0),
        })
    }

    pub fn intensity_forward(&self, x: &Vec3, v: &Vec3, sdf: &SdfOutput) -> Result<f64, FieldError> {
        let mut geo = Vec::new();
        if self.config.network.use_sdf {
            geo.push(sdf.d);
            if self.config.emits_geo_feature() {
                let g = sdf
                    .g
                    .as_ref()
                    .ok_or_else(|| FieldError::InvalidConfig("geometry feature missing from SDF output".into()))?;
                geo.extend_from_slice(g);
            }
            if self.config.uses_normals() {
                let n = sdf.n.ok_or_else(|| FieldError::InvalidConfig("normal missing from SDF output".into()))?;
                geo.extend_from_slice(n.as_slice());
            }
        }
        let tape = self.intensity_forward_batch(std::slice::from_ref(x), std::slice::from_ref(v), &geo)?;
        Ok(tape.output()[0])
    }

    /// SDF values at many points, evaluated in parallel chunks.
    pub fn sdf_values(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        let chunks: Vec<Vec<f64>> = xs
            .par_chunks(QUERY_CHUNK)
            .map(|c| {
                let b = self.sdf_forward_batch(c, false)?;
                Ok((0..c.len()).map(|i| b.d(i)).collect())
            })
            .collect::<Result<_, FieldError>>()?;
        Ok(chunks.concat())
    }

    /// SDF values and spatial gradients.
    pub fn sdf_with_gradients(&self, xs: &[Vec3]) -> Result<Vec<(f64, Vec3)>, FieldError> {
        let chunks: Vec<Vec<(f64, Vec3)>> = xs
            .par_chunks(QUERY_CHUNK)
            .map(|c| {
                let b = self.sdf_forward_batch(c, true)?;
                Ok((0..c.len()).map(|i| (b.d(i), b.n(i).unwrap())).collect())
            })
            .collect::<Result<_, FieldError>>()?;
        Ok(chunks.concat())
    }

    /// `[d, g, n]` geometry rows for many points.
    pub fn geometry_rows(&self, xs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        if self.config.geometry_width() == 0 {
            return Ok(Vec::new());
        }
        let normals = self.needs_normals();
        let chunks: Vec<Vec<f64>> = xs
            .par_chunks(QUERY_CHUNK)
            .map(|c| {
                let b = self.sdf_forward_batch(c, normals)?;
                Ok(self.geometry_inputs(&b))
            })
            .collect::<Result<_, FieldError>>()?;
        Ok(chunks.concat())
    }

    /// Normalized intensity predictions at `xs` seen along `dirs`.
    pub fn predict_intensities(&self, xs: &[Vec3], dirs: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        assert_eq!(xs.len(), dirs.len());
        let normals = self.needs_normals();
        let chunks: Vec<Vec<f64>> = xs
            .par_chunks(QUERY_CHUNK)
            .zip(dirs.par_chunks(QUERY_CHUNK))
            .map(|(c, v)| {
                let geo = if self.config.geometry_width() > 0 {
                    let b = self.sdf_forward_batch(c, normals)?;
                    self.geometry_inputs(&b)
                } else {
                    Vec::new()
                };
                Ok(self.intensity_forward_batch(c, v, &geo)?.output().to_vec())
            })
            .collect::<Result<_, FieldError>>()?;
        Ok(chunks.concat())
    }

    pub fn round_to_storage_precision(&mut self) {
        self.grid.round_to_storage_precision();
        self.sdf_net.round_to_storage_precision();
        self.intensity_net.round_to_storage_precision();
    }

    /// Network checkpoint: magic, version, config (JSON), scene scale, then
    /// both networks with `f32` parameters.
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut w = Writer::default();
        w.bytes(&CKPT_MAGIC);
        w.u32(CKPT_VERSION);
        w.str(&serde_json::to_string(&self.config).expect("config serializes"));
        for a in 0..3 {
            w.f64(self.scale.center[a]);
        }
        w.f64(self.scale.inv_half_extent);
        self.sdf_net.write(&mut w);
        self.intensity_net.write(&mut w);
        w.buf
    }

    pub fn from_bytes(checkpoint: &[u8], map: &[u8]) -> Result<Self, FieldError> {
        let mut r = Reader::new(checkpoint);
        r.magic(CKPT_MAGIC)?;
        r.version(CKPT_VERSION)?;
        let config: FieldConfig =
            serde_json::from_str(&r.str()?).map_err(|e| DecodeError::Malformed(format!("config: {e}")))?;
        config.validate()?;
        let mut center = Vec3::zeros();
        for a in 0..3 {
            center[a] = r.f64()?;
        }
        let scale = SceneScale {
            center,
            inv_half_extent: r.f64()?,
        };
        let sdf_net = Mlp::read(&mut r)?;
        let intensity_net = Mlp::read(&mut r)?;
        r.finish()?;
        if sdf_net.in_dim() != config.sdf_in_dim()
            || sdf_net.out_dim() != config.sdf_out_dim()
            || intensity_net.in_dim() != config.intensity_in_dim()
        {
            return Err(DecodeError::Malformed("network shapes disagree with config".into()).into());
        }
        let grid = TriQuadtreeGrid::deserialize(map)?;
        if grid.config != config.grid {
            return Err(DecodeError::Malformed("map grid config disagrees with checkpoint".into()).into());
        }
        Ok(Self {
            config,
            scale,
            grid,
            sdf_net,
            intensity_net,
        })
    }

    /// Bytes of the stored parameters: network checkpoint plus feature map.
    pub fn map_size_bytes(&self) -> usize {
        self.checkpoint_bytes().len() + self.grid.serialize().len()
    }
}

fn first_non_finite(values: &[f64], width: usize) -> Option<usize> {
    values.iter().position(|v| !v.is_finite()).map(|i| i / width.max(1))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn aabb() -> Aabb {
        Aabb::new(Vec3::new(-3.0, -3.0, -3.0), Vec3::new(3.0, 3.0, 3.0)).unwrap()
    }

    #[test]
    fn default_intensity_width_is_74() {
        let cfg = FieldConfig::default();
        assert_eq!(cfg.intensity_in_dim(), 39 + 16 + 1 + 15 + 3);
        assert_eq!(cfg.intensity_in_dim(), 74);
        assert_eq!(cfg.sdf_out_dim(), 16);
        assert_eq!(cfg.sdf_in_dim(), 8 + 39);
    }

    #[test]
    fn ablation_widths() {
        let full = FieldConfig::default();
        let mut no_g = full.clone();
        Ablation::NoGeofeature.apply(&mut no_g.network);
        assert_eq!(full.intensity_in_dim() - no_g.intensity_in_dim(), 15);
        let mut no_n = full.clone();
        Ablation::NoNormals.apply(&mut no_n.network);
        assert_eq!(full.intensity_in_dim() - no_n.intensity_in_dim(), 3);
        let mut no_sdf = full.clone();
        Ablation::NoSdf.apply(&mut no_sdf.network);
        assert_eq!(no_sdf.intensity_in_dim(), 39 + 16);
        assert_eq!("no-sdf".parse::<Ablation>().unwrap(), Ablation::NoSdf);
        assert!("bogus".parse::<Ablation>().is_err());
    }

    #[test]
    fn constant_network_returns_output_bias() {
        let mut f = RadarField::new(FieldConfig::default(), aabb(), 3).unwrap();
        for p in f.sdf_net.parameters_mut() {
            *p = 0.0;
        }
        f.sdf_net.layers.last_mut().unwrap().bias[0] = 0.37;
        for x in [Vec3::zeros(), Vec3::new(1.0, -2.0, 0.5)] {
            let out = f.sdf_forward(&x).unwrap();
            assert_eq!(out.d, 0.37);
            assert_eq!(out.g.as_ref().unwrap().len(), 15);
            assert_eq!(out.n.unwrap(), Vec3::zeros());
        }
    }

    #[test]
    fn zero_intensity_net_predicts_half() {
        let mut f = RadarField::new(FieldConfig::default(), aabb(), 3).unwrap();
        for p in f.intensity_net.parameters_mut() {
            *p = 0.0;
        }
        let x = Vec3::new(0.2, 0.1, -0.4);
        let sdf = f.sdf_forward(&x).unwrap();
        assert_eq!(f.intensity_forward(&x, &Vec3::x(), &sdf).unwrap(), 0.5);
    }

    #[test]
    fn normal_matches_finite_differences() {
        let mut cfg = FieldConfig::default();
        cfg.grid.init_scale = 0.3;
        let mut f = RadarField::new(cfg, aabb(), 8).unwrap();
        let x = Vec3::new(0.4312, -1.1171, 0.7713);
        let h = 1e-6;
        for dx in [-2.0 * h, 0.0, 2.0 * h] {
            f.grid.allocate_for(&(x + Vec3::new(dx, dx, dx)));
            for a in 0..3 {
                let mut e = Vec3::zeros();
                e[a] = dx;
                f.grid.allocate_for(&(x + e));
            }
        }
        let n = f.sdf_forward(&x).unwrap().n.unwrap();
        for a in 0..3 {
            let mut e = Vec3::zeros();
            e[a] = h;
            let fd = (f.sdf_forward(&(x + e)).unwrap().d - f.sdf_forward(&(x - e)).unwrap().d) / (2.0 * h);
            assert!((fd - n[a]).abs() <= 1e-4 * n[a].abs().max(1e-6) + 1e-6, "axis {a}: fd {fd} vs {}", n[a]);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut f = RadarField::new(FieldConfig::default(), aabb(), 1).unwrap();
        f.grid.allocate_for(&Vec3::new(0.5, 0.5, 0.5));
        f.round_to_storage_precision();
        let back = RadarField::from_bytes(&f.checkpoint_bytes(), &f.grid.serialize()).unwrap();
        assert_eq!(back.sdf_net.layers, f.sdf_net.layers);
        assert_eq!(back.intensity_net.layers, f.intensity_net.layers);
        assert_eq!(back.grid, f.grid);
        assert_eq!(back.config, f.config);
        assert_eq!(back.checkpoint_bytes(), f.checkpoint_bytes());
        assert!(RadarField::from_bytes(&f.checkpoint_bytes()[..20], &f.grid.serialize()).is_err());
    }

    #[test]
    fn batch_queries_agree_with_single_queries() {
        let f = RadarField::new(FieldConfig::default(), aabb(), 4).unwrap();
        let xs: Vec<Vec3> = (0..1100).map(|i| Vec3::new((i as f64 * 0.01).sin() * 2.0, (i as f64 * 0.02).cos(), 0.3)).collect();
        let vals = f.sdf_values(&xs).unwrap();
        for i in [0, 511, 512, 1099] {
            assert!((vals[i] - f.sdf_forward(&xs[i]).unwrap().d).abs() < 1e-12);
        }
    }
}
