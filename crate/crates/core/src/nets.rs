//! Fully-connected networks with exact reverse-mode gradients.
//!
//! A batch forward pass can carry extra *tangent* streams: directional
//! derivatives of the input, pushed through the network alongside the
//! primal values. The SDF normal is such a tangent (the derivative of the
//! SDF along each world axis), and because the backward pass also handles
//! tangent adjoints, losses that depend on the normal can be differentiated
//! with respect to every weight.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{Adam, AdamMoments};

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("non-finite value in {stage} (row {row}); parameters have diverged")]
    NonFinite { stage: &'static str, row: usize },
    #[error("backward called without a fresh forward pass")]
    StaleForward,
    #[error("shape mismatch: {0}")]
    Shape(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Identity => z,
            Activation::Relu => z.max(0.0),
            Activation::Sigmoid => sigmoid(z),
        }
    }

    /// First derivative, expressed through the pre-activation `z` and the
    /// output `h = apply(z)`.
    #[inline]
    fn d1(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => h * (1.0 - h),
        }
    }

    #[inline]
    fn d2(self, h: f64) -> f64 {
        match self {
            Activation::Identity | Activation::Relu => 0.0,
            Activation::Sigmoid => h * (1.0 - h) * (1.0 - 2.0 * h),
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Sigmoid => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Relu),
            2 => Some(Activation::Sigmoid),
            _ => None,
        }
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `C = alpha · A·B + beta · C` on strided row/column-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in c.iter_mut() {
            *v *= beta;
        }
        return;
    }
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the asserts above bound every element the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LayerGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGradients {
    pub layers: Vec<LayerGrads>,
}

impl MlpGradients {
    pub fn add_assign(&mut self, other: &MlpGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            for (x, y) in a.weight.iter_mut().zip(&b.weight) {
                *x += y;
            }
            for (x, y) in a.bias.iter_mut().zip(&b.bias) {
                *x += y;
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| *v == 0.0))
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(&l.bias).all(|v| v.is_finite()))
    }
}

/// Weights, biases, gradient buffers and Adam moments of one network.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub grads: MlpGradients,
    moments: Vec<(AdamMoments, AdamMoments)>,
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Clone, Debug)]
pub struct MlpTape {
    pub batch: usize,
    pub tangents: usize,
    /// Input of each layer followed by the network output: `inputs[l]` is
    /// `batch × in_dim(l)`; the last entry is the output.
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Tangent streams stacked as `tangents × batch × width`, same indexing.
    tangent_inputs: Vec<Vec<f64>>,
    tangent_pre: Vec<Vec<f64>>,
    used: bool,
}

impl MlpTape {
    pub fn output(&self) -> &[f64] {
        self.inputs.last().expect("tape has an output")
    }

    /// Tangent streams of the output, `tangents × batch × out_dim`.
    pub fn tangent_output(&self) -> &[f64] {
        self.tangent_inputs.last().expect("tape has an output")
    }
}

impl Mlp {
    /// Kaiming-uniform weights (bound `sqrt(6 / fan_in)`), zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs an input and an output width");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = sizes.len() - 1;
        let layers: Vec<Layer> = (0..n)
            .map(|l| {
                let (i, o) = (sizes[l], sizes[l + 1]);
                let bound = (6.0 / i.max(1) as f64).sqrt();
                Layer {
                    in_dim: i,
                    out_dim: o,
                    weight: (0..i * o).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![0.0; o],
                    activation: if l + 1 == n { output } else { hidden },
                }
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn from_layers(layers: Vec<Layer>) -> Self {
        let grads = MlpGradients {
            layers: layers
                .iter()
                .map(|l| LayerGrads {
                    weight: vec![0.0; l.weight.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        };
        let moments = layers.iter().map(|_| Default::default()).collect();
        Self { layers, grads, moments }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.in_dim()).chain(self.layers.iter().map(|l| l.out_dim)).collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn zero_gradients(&self) -> MlpGradients {
        let mut g = self.grads.clone();
        for l in &mut g.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
        g
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.grads.layers {
            l.weight.fill(0.0);
            l.bias.fill(0.0);
        }
    }

    /// Flat view of every parameter, in layer order (weights then bias).
    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn gradient_values(&self) -> impl Iterator<Item = &f64> {
        self.grads.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn adam_step(&mut self, adam: &Adam, t: u64) {
        for ((layer, g), (mw, mb)) in self.layers.iter_mut().zip(&mut self.grads.layers).zip(&mut self.moments) {
            adam.step(t, &mut layer.weight, &mut g.weight, mw);
            adam.step(t, &mut layer.bias, &mut g.bias, mb);
        }
    }

    pub fn round_to_storage_precision(&mut self) {
        for p in self.parameters_mut() {
            *p = *p as f32 as f64;
        }
    }

    /// Batched forward. `input` is `batch × in_dim`; `tangents` holds
    /// `n_tangents` stacked `batch × in_dim` blocks of input derivatives.
    pub fn forward(&self, input: &[f64], batch: usize, tangents: &[f64], n_tangents: usize) -> MlpTape {
        assert_eq!(input.len(), batch * self.in_dim());
        assert_eq!(tangents.len(), n_tangents * batch * self.in_dim());
        let mut inputs = vec![input.to_vec()];
        let mut tangent_inputs = vec![tangents.to_vec()];
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut tangent_pre = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (i, o) = (layer.in_dim, layer.out_dim);
            let a = inputs.last().unwrap();
            let mut z = Vec::with_capacity(batch * o);
            for _ in 0..batch {
                z.extend_from_slice(&layer.bias);
            }
            gemm(batch, i, o, 1.0, a, (i, 1), &layer.weight, (1, i), 1.0, &mut z, (o, 1));
            let h: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
            let mut zt = vec![0.0; n_tangents * batch * o];
            let mut ht = vec![0.0; n_tangents * batch * o];
            if n_tangents > 0 {
                let t = tangent_inputs.last().unwrap();
                gemm(n_tangents * batch, i, o, 1.0, t, (i, 1), &layer.weight, (1, i), 0.0, &mut zt, (o, 1));
                for k in 0..n_tangents {
                    let base = k * batch * o;
                    for r in 0..batch * o {
                        ht[base + r] = layer.activation.d1(z[r], h[r]) * zt[base + r];
                    }
                }
            }
            pre.push(z);
            inputs.push(h);
            tangent_pre.push(zt);
            tangent_inputs.push(ht);
        }
        MlpTape {
            batch,
            tangents: n_tangents,
            inputs,
            pre,
            tangent_inputs,
            tangent_pre,
            used: false,
        }
    }

    /// Reverse pass. `out_adj` is `batch × out_dim`; `tangent_out_adj`, when
    /// given, matches the tangent output layout. Parameter gradients are
    /// added into `grads`; returns the adjoints of the input and of each input
    /// tangent stream.
    pub fn backward(
        &self,
        tape: &mut MlpTape,
        out_adj: &[f64],
        tangent_out_adj: Option<&[f64]>,
        grads: &mut MlpGradients,
    ) -> Result<(Vec<f64>, Vec<f64>), NetError> {
        if tape.used {
            return Err(NetError::StaleForward);
        }
        tape.used = true;
        let (b, nt) = (tape.batch, tape.tangents);
        if out_adj.len() != b * self.out_dim() {
            return Err(NetError::Shape(format!(
                "output adjoint has {} values, expected {}",
                out_adj.len(),
                b * self.out_dim()
            )));
        }
        let mut h_adj = out_adj.to_vec();
        let mut t_adj = match tangent_out_adj {
            Some(t) => {
                if t.len() != nt * b * self.out_dim() {
                    return Err(NetError::Shape("tangent adjoint does not match tangent output".into()));
                }
                t.to_vec()
            }
            None => vec![0.0; nt * b * self.out_dim()],
        };
        let has_tangent_adj = tangent_out_adj.is_some() && nt > 0;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (i, o) = (layer.in_dim, layer.out_dim);
            let z = &tape.pre[l];
            let h = &tape.inputs[l + 1];
            let a = &tape.inputs[l];
            let act = layer.activation;
            let mut z_adj = vec![0.0; b * o];
            for r in 0..b * o {
                z_adj[r] = act.d1(z[r], h[r]) * h_adj[r];
            }
            let mut zt_adj = vec![0.0; nt * b * o];
            if has_tangent_adj {
                let zt = &tape.tangent_pre[l];
                for k in 0..nt {
                    let base = k * b * o;
                    for r in 0..b * o {
                        let ta = t_adj[base + r];
                        zt_adj[base + r] = act.d1(z[r], h[r]) * ta;
                        z_adj[r] += act.d2(h[r]) * zt[base + r] * ta;
                    }
                }
            }
            let g = &mut grads.layers[l];
            gemm(o, b, i, 1.0, &z_adj, (1, o), a, (i, 1), 1.0, &mut g.weight, (i, 1));
            if has_tangent_adj {
                let at = &tape.tangent_inputs[l];
                gemm(o, nt * b, i, 1.0, &zt_adj, (1, o), at, (i, 1), 1.0, &mut g.weight, (i, 1));
            }
            for r in 0..b {
                for (gb, za) in g.bias.iter_mut().zip(&z_adj[r * o..(r + 1) * o]) {
                    *gb += za;
                }
            }
            let mut a_adj = vec![0.0; b * i];
            gemm(b, o, i, 1.0, &z_adj, (o, 1), &layer.weight, (i, 1), 0.0, &mut a_adj, (i, 1));
            let mut at_adj = vec![0.0; nt * b * i];
            if has_tangent_adj {
                gemm(nt * b, o, i, 1.0, &zt_adj, (o, 1), &layer.weight, (i, 1), 0.0, &mut at_adj, (i, 1));
            }
            h_adj = a_adj;
            t_adj = at_adj;
        }
        Ok((h_adj, t_adj))
    }

    pub(crate) fn write(&self, w: &mut crate::codec::Writer) {
        w.u32(self.layers.len() as u32);
        for l in &self.layers {
            w.u32(l.in_dim as u32);
            w.u32(l.out_dim as u32);
            w.u8(l.activation.code());
            for v in l.weight.iter().chain(&l.bias) {
                w.f32(*v as f32);
            }
        }
    }

    pub(crate) fn read(r: &mut crate::codec::Reader) -> Result<Self, crate::codec::DecodeError> {
        use crate::codec::DecodeError;
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(DecodeError::Malformed("network without layers".into()));
        }
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let in_dim = r.u32()? as usize;
            let out_dim = r.u32()? as usize;
            let activation = Activation::from_code(r.u8()?)
                .ok_or_else(|| DecodeError::Malformed("unknown activation".into()))?;
            if let Some(prev) = layers.last() {
                let prev: &Layer = prev;
                if prev.out_dim != in_dim {
                    return Err(DecodeError::Malformed("layer shapes do not chain".into()));
                }
            }
            let mut weight = Vec::with_capacity(in_dim * out_dim);
            for _ in 0..in_dim * out_dim {
                weight.push(r.f32()? as f64);
            }
            let mut bias = Vec::with_capacity(out_dim);
            for _ in 0..out_dim {
                bias.push(r.f32()? as f64);
            }
            layers.push(Layer {
                in_dim,
                out_dim,
                weight,
                bias,
                activation,
            });
        }
        Ok(Self::from_layers(layers))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_vec(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn single_linear_layer_l2_gradient() {
        let mlp = Mlp::from_layers(vec![Layer {
            in_dim: 3,
            out_dim: 1,
            weight: vec![0.5, -1.0, 2.0],
            bias: vec![0.1],
            activation: Activation::Identity,
        }]);
        let x = [1.0, 2.0, 3.0];
        let label = 2.0;
        let mut tape = mlp.forward(&x, 1, &[], 0);
        let pred = tape.output()[0];
        assert!((pred - (0.5 - 2.0 + 6.0 + 0.1)).abs() < 1e-12);
        let mut g = mlp.zero_gradients();
        mlp.backward(&mut tape, &[2.0 * (pred - label)], None, &mut g).unwrap();
        for k in 0..3 {
            assert!((g.layers[0].weight[k] - 2.0 * (pred - label) * x[k]).abs() < 1e-12);
        }
        assert!((g.layers[0].bias[0] - 2.0 * (pred - label)).abs() < 1e-12);
    }

    #[test]
    fn backward_twice_is_rejected() {
        let mlp = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Identity, 1);
        let mut tape = mlp.forward(&[0.1, 0.2], 1, &[], 0);
        let mut g = mlp.zero_gradients();
        mlp.backward(&mut tape, &[1.0], None, &mut g).unwrap();
        assert_eq!(mlp.backward(&mut tape, &[1.0], None, &mut g), Err(NetError::StaleForward));
    }

    #[test]
    fn zero_network_sigmoid_head_is_half() {
        let mut mlp = Mlp::new(&[5, 8, 8, 1], Activation::Relu, Activation::Sigmoid, 3);
        for p in mlp.parameters_mut() {
            *p = 0.0;
        }
        let tape = mlp.forward(&rand_vec(10, 1), 2, &[], 0);
        assert_eq!(tape.output(), &[0.5, 0.5]);
    }

    /// Scalar objective mixing primal outputs and tangent outputs, checked
    /// against central differences for every parameter.
    fn objective(mlp: &Mlp, x: &[f64], t: &[f64], b: usize, nt: usize, wo: &[f64], wt: &[f64]) -> f64 {
        let tape = mlp.forward(x, b, t, nt);
        let p: f64 = tape.output().iter().zip(wo).map(|(a, c)| a * c).sum();
        let q: f64 = tape.tangent_output().iter().zip(wt).map(|(a, c)| a * c).sum();
        p + q
    }

    fn check_gradients(hidden: Activation, output: Activation) {
        let b = 5;
        let nt = 3;
        let mut mlp = Mlp::new(&[4, 7, 6, 2], hidden, output, 17);
        for (k, l) in mlp.layers.iter_mut().enumerate() {
            for (j, v) in l.bias.iter_mut().enumerate() {
                *v = 0.05 * ((k * 7 + j) as f64).sin();
            }
        }
        let x = rand_vec(b * 4, 2);
        let t = rand_vec(nt * b * 4, 3);
        let wo = rand_vec(b * 2, 4);
        let wt = rand_vec(nt * b * 2, 5);
        let mut tape = mlp.forward(&x, b, &t, nt);
        let mut g = mlp.zero_gradients();
        let (xa, ta) = mlp.backward(&mut tape, &wo, Some(&wt), &mut g).unwrap();
        let analytic: Vec<f64> = g.layers.iter().flat_map(|l| l.weight.iter().chain(&l.bias).copied()).collect();
        let h = 1e-6;
        let n = mlp.num_parameters();
        for idx in 0..n {
            let orig = *mlp.parameters_mut().nth(idx).unwrap();
            *mlp.parameters_mut().nth(idx).unwrap() = orig + h;
            let fp = objective(&mlp, &x, &t, b, nt, &wo, &wt);
            *mlp.parameters_mut().nth(idx).unwrap() = orig - h;
            let fm = objective(&mlp, &x, &t, b, nt, &wo, &wt);
            *mlp.parameters_mut().nth(idx).unwrap() = orig;
            let fd = (fp - fm) / (2.0 * h);
            let a = analytic[idx];
            assert!((fd - a).abs() <= 1e-4 * a.abs().max(fd.abs()) + 1e-6, "param {idx}: fd {fd} analytic {a}");
        }
        // Input and input-tangent adjoints.
        for idx in 0..x.len() {
            let mut xp = x.clone();
            xp[idx] += h;
            let mut xm = x.clone();
            xm[idx] -= h;
            let fd = (objective(&mlp, &xp, &t, b, nt, &wo, &wt) - objective(&mlp, &xm, &t, b, nt, &wo, &wt)) / (2.0 * h);
            assert!((fd - xa[idx]).abs() <= 1e-4 * fd.abs() + 1e-6);
        }
        for idx in 0..t.len() {
            let mut tp = t.clone();
            tp[idx] += h;
            let mut tm = t.clone();
            tm[idx] -= h;
            let fd = (objective(&mlp, &x, &tp, b, nt, &wo, &wt) - objective(&mlp, &x, &tm, b, nt, &wo, &wt)) / (2.0 * h);
            assert!((fd - ta[idx]).abs() <= 1e-4 * fd.abs() + 1e-6);
        }
    }

    #[test]
    fn gradients_relu_identity() {
        check_gradients(Activation::Relu, Activation::Identity);
    }

    #[test]
    fn gradients_sigmoid_everywhere() {
        check_gradients(Activation::Sigmoid, Activation::Sigmoid);
    }

    #[test]
    fn tangent_output_is_input_derivative() {
        let mlp = Mlp::new(&[3, 8, 8, 1], Activation::Sigmoid, Activation::Identity, 5);
        let x = [0.3, -0.2, 0.9];
        let t = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
        let tape = mlp.forward(&x, 1, &t, 3);
        let h = 1e-6;
        for a in 0..3 {
            let mut xp = x;
            xp[a] += h;
            let mut xm = x;
            xm[a] -= h;
            let fd = (mlp.forward(&xp, 1, &[], 0).output()[0] - mlp.forward(&xm, 1, &[], 0).output()[0]) / (2.0 * h);
            assert!((fd - tape.tangent_output()[a]).abs() < 1e-8);
        }
    }

    #[test]
    fn batch_rows_are_independent() {
        let mlp = Mlp::new(&[3, 16, 16, 2], Activation::Relu, Activation::Identity, 9);
        let x = rand_vec(3 * 40, 8);
        let full = mlp.forward(&x, 40, &[], 0);
        for r in [0, 17, 39] {
            let one = mlp.forward(&x[3 * r..3 * r + 3], 1, &[], 0);
            for c in 0..2 {
                assert!((one.output()[c] - full.output()[2 * r + c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut mlp = Mlp::new(&[3, 5, 1], Activation::Relu, Activation::Sigmoid, 2);
        mlp.round_to_storage_precision();
        let mut w = crate::codec::Writer::default();
        mlp.write(&mut w);
        let mut r = crate::codec::Reader::new(&w.buf);
        let back = Mlp::read(&mut r).unwrap();
        r.finish().unwrap();
        assert_eq!(back.layers, mlp.layers);
    }
}
