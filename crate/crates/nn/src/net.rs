//! Dense feed-forward stacks: spec, parameters, initialization, and a
//! forward pass that records what the backward pass needs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::matrix::{matmul, matmul_nt, matmul_tn_acc, Matrix};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Linear,
    /// `(tanh(a) + 1) / 2`, so outputs lie in `(0, 1)`.
    TanhUnit,
    /// `-ln(1 + e^a)`, so outputs are negative.
    NegSoftplus,
}

fn softplus(a: f64) -> f64 {
    a.max(0.0) + (-a.abs()).exp().ln_1p()
}

fn sigmoid(a: f64) -> f64 {
    if a >= 0.0 {
        1.0 / (1.0 + (-a).exp())
    } else {
        let e = a.exp();
        e / (1.0 + e)
    }
}

/// An extra input concatenated to the input of dense layer `layer`
/// (how the critic receives the action).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SideInput {
    pub layer: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetSpec {
    /// Input width, hidden widths, output width.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    /// One flag per hidden layer.
    pub layer_norm: Vec<bool>,
    pub output_activation: OutputActivation,
    pub side_input: Option<SideInput>,
}

impl NetSpec {
    /// ReLU hidden layers, layer norm everywhere, no side input.
    pub fn mlp(input: usize, hidden: &[usize], output: usize, output_activation: OutputActivation) -> Self {
        let mut layer_widths = vec![input];
        layer_widths.extend_from_slice(hidden);
        layer_widths.push(output);
        NetSpec {
            layer_widths,
            activation: Activation::Relu,
            layer_norm: vec![true; hidden.len()],
            output_activation,
            side_input: None,
        }
    }

    pub fn with_side_input(mut self, layer: usize, width: usize) -> Self {
        self.side_input = Some(SideInput { layer, width });
        self
    }

    pub fn without_layer_norm(mut self) -> Self {
        self.layer_norm.iter_mut().for_each(|f| *f = false);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(NnError::InvalidSpec("need at least one hidden layer".into()));
        }
        if w.contains(&0) {
            return Err(NnError::InvalidSpec("layer widths must be positive".into()));
        }
        if self.layer_norm.len() != w.len() - 2 {
            return Err(NnError::InvalidSpec(format!(
                "{} layer-norm flags for {} hidden layers",
                self.layer_norm.len(),
                w.len() - 2
            )));
        }
        if let Some(side) = self.side_input {
            if side.layer >= self.n_dense() || side.width == 0 {
                return Err(NnError::InvalidSpec(format!("side input at layer {} is out of range", side.layer)));
            }
        }
        Ok(())
    }

    pub fn n_dense(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn input_width(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    fn side_width(&self, layer: usize) -> usize {
        match self.side_input {
            Some(s) if s.layer == layer => s.width,
            _ => 0,
        }
    }

    /// (fan_in, fan_out) of dense layer `i`.
    pub fn dense_shape(&self, i: usize) -> (usize, usize) {
        (self.layer_widths[i] + self.side_width(i), self.layer_widths[i + 1])
    }

    fn has_norm(&self, i: usize) -> bool {
        i + 1 < self.n_dense() && self.layer_norm[i]
    }
}

/// Which kind of tensor a parameter slice is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    Weight,
    Bias,
    NormGain,
    NormBias,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// fan_in x fan_out, row-major; `y = x W + b`.
    pub(crate) w: Vec<f64>,
    pub(crate) b: Vec<f64>,
    pub(crate) ln_gain: Vec<f64>,
    pub(crate) ln_bias: Vec<f64>,
}

impl LayerParams {
    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn biases(&self) -> &[f64] {
        &self.b
    }

    pub fn norm_gain(&self) -> &[f64] {
        &self.ln_gain
    }

    pub fn norm_bias(&self) -> &[f64] {
        &self.ln_bias
    }
}

/// Weights and biases of every layer. Any mutation bumps `version`, which
/// invalidates tapes recorded earlier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    layers: Vec<LayerParams>,
    #[serde(skip)]
    version: u64,
}

impl ParamSet {
    /// All-zero parameters shaped for `spec` (layer-norm gains included).
    pub fn zeros(spec: &NetSpec) -> Self {
        let layers = (0..spec.n_dense())
            .map(|i| {
                let (fi, fo) = spec.dense_shape(i);
                let ln = if spec.has_norm(i) { fo } else { 0 };
                LayerParams { w: vec![0.0; fi * fo], b: vec![0.0; fo], ln_gain: vec![0.0; ln], ln_bias: vec![0.0; ln] }
            })
            .collect();
        ParamSet { layers, version: 0 }
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.tensors().map(|(_, t)| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tensors(&self) -> impl Iterator<Item = (TensorKind, &[f64])> {
        self.layers.iter().flat_map(|l| {
            [
                (TensorKind::Weight, l.w.as_slice()),
                (TensorKind::Bias, l.b.as_slice()),
                (TensorKind::NormGain, l.ln_gain.as_slice()),
                (TensorKind::NormBias, l.ln_bias.as_slice()),
            ]
        })
    }

    pub fn for_each_tensor_mut(&mut self, mut f: impl FnMut(TensorKind, &mut [f64])) {
        self.version += 1;
        for l in &mut self.layers {
            f(TensorKind::Weight, &mut l.w);
            f(TensorKind::Bias, &mut l.b);
            f(TensorKind::NormGain, &mut l.ln_gain);
            f(TensorKind::NormBias, &mut l.ln_bias);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.tensors().flat_map(|(_, t)| t.iter().copied()).collect()
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.len() {
            return Err(NnError::DimensionMismatch { expected: self.len(), got: flat.len() });
        }
        let mut off = 0;
        self.for_each_tensor_mut(|_, t| {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        });
        Ok(())
    }

    pub fn same_shape(&self, other: &ParamSet) -> bool {
        self.layers.len() == other.layers.len()
            && self.tensors().zip(other.tensors()).all(|((_, a), (_, b))| a.len() == b.len())
    }

    pub(crate) fn check_shape(&self, other: &ParamSet) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(NnError::ShapeMismatch("parameter sets come from different specs".into()))
        }
    }

    /// Euclidean distance between two parameter sets of the same shape.
    pub fn distance(&self, other: &ParamSet) -> Result<f64> {
        self.check_shape(other)?;
        Ok(self.to_flat().iter().zip(other.to_flat()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// Adds `coef * w` to the weight entries of `self` (an L2 penalty
    /// gradient). Biases and norm parameters are left alone, and so is the
    /// final layer unless `include_final`.
    pub fn add_weight_decay(&mut self, params: &ParamSet, coef: f64, include_final: bool) -> Result<()> {
        self.check_shape(params)?;
        let n = self.layers.len() - usize::from(!include_final);
        for (g, p) in self.layers.iter_mut().zip(&params.layers).take(n) {
            for (gw, pw) in g.w.iter_mut().zip(&p.w) {
                *gw += coef * pw;
            }
        }
        self.version += 1;
        Ok(())
    }

    /// Sum of squared weight entries.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers.iter().flat_map(|l| &l.w).map(|w| w * w).sum()
    }
}

/// Glorot-uniform hidden layers, an orthogonal final layer, zero biases and
/// unit layer-norm gains; deterministic per seed.
pub fn init_params(spec: &NetSpec, seed: u64) -> Result<ParamSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParamSet::zeros(spec);
    let last = spec.n_dense() - 1;
    for (i, layer) in params.layers.iter_mut().enumerate() {
        let (fi, fo) = spec.dense_shape(i);
        if i == last {
            layer.w = orthogonal(&mut rng, fi, fo);
        } else {
            let limit = (6.0 / (fi + fo) as f64).sqrt();
            layer.w = (0..fi * fo).map(|_| rng.random_range(-limit..=limit)).collect();
        }
        layer.ln_gain.iter_mut().for_each(|g| *g = 1.0);
    }
    Ok(params)
}

/// `rows x cols` matrix with orthonormal columns (tall) or rows (wide).
fn orthogonal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Vec<f64> {
    let (count, len) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut vecs: Vec<Vec<f64>> = Vec::with_capacity(count);
    while vecs.len() < count {
        let mut v: Vec<f64> = (0..len).map(|_| rng.sample(StandardNormal)).collect();
        for u in &vecs {
            let d: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= d * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            vecs.push(v);
        }
    }
    let mut w = vec![0.0; rows * cols];
    for (j, v) in vecs.iter().enumerate() {
        for (i, &x) in v.iter().enumerate() {
            if rows >= cols {
                w[i * cols + j] = x;
            } else {
                w[j * cols + i] = x;
            }
        }
    }
    w
}

#[derive(Debug, Clone)]
struct LayerTape {
    input: Matrix,
    xhat: Option<Matrix>,
    inv_std: Vec<f64>,
    out: Matrix,
    /// Value fed to the activation (after layer norm).
    act_in: Matrix,
}

/// Activations recorded by [`forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    layers: Vec<LayerTape>,
}

/// Gradients returned by [`backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamSet,
    pub input: Matrix,
    pub side: Option<Matrix>,
}

/// Runs a batch (one row per sample) through the network.
pub fn forward(params: &ParamSet, spec: &NetSpec, input: &Matrix, side: Option<&Matrix>) -> Result<(Matrix, Tape)> {
    if input.cols() != spec.input_width() {
        return Err(NnError::DimensionMismatch { expected: spec.input_width(), got: input.cols() });
    }
    if params.layers.len() != spec.n_dense() {
        return Err(NnError::ShapeMismatch("parameters do not match spec".into()));
    }
    let mut h = input.clone();
    let mut layers = Vec::with_capacity(spec.n_dense());
    let last = spec.n_dense() - 1;
    for (i, p) in params.layers.iter().enumerate() {
        if spec.side_width(i) > 0 {
            let s = side.ok_or_else(|| NnError::InvalidSpec("network needs a side input".into()))?;
            if s.cols() != spec.side_width(i) {
                return Err(NnError::DimensionMismatch { expected: spec.side_width(i), got: s.cols() });
            }
            h = h.hcat(s)?;
        }
        let (fi, fo) = spec.dense_shape(i);
        if p.w.len() != fi * fo {
            return Err(NnError::ShapeMismatch(format!("layer {i} weights")));
        }
        let mut pre = matmul(&h, &p.w, fo);
        for r in 0..pre.rows() {
            pre.row_mut(r).iter_mut().zip(&p.b).for_each(|(v, b)| *v += b);
        }
        let (xhat, inv_std, act_in) = if spec.has_norm(i) {
            let (xhat, inv_std) = normalize_rows(&pre);
            let mut z = xhat.clone();
            for r in 0..z.rows() {
                for (c, v) in z.row_mut(r).iter_mut().enumerate() {
                    *v = *v * p.ln_gain[c] + p.ln_bias[c];
                }
            }
            (Some(xhat), inv_std, z)
        } else {
            (None, Vec::new(), pre)
        };
        let mut out = act_in.clone();
        if i == last {
            match spec.output_activation {
                OutputActivation::Linear => {}
                OutputActivation::TanhUnit => out.as_mut_slice().iter_mut().for_each(|v| *v = 0.5 * (v.tanh() + 1.0)),
                OutputActivation::NegSoftplus => out.as_mut_slice().iter_mut().for_each(|v| *v = -softplus(*v)),
            }
        } else {
            match spec.activation {
                Activation::Relu => out.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::Tanh => out.as_mut_slice().iter_mut().for_each(|v| *v = v.tanh()),
            }
        }
        layers.push(LayerTape { input: h, xhat, inv_std, out: out.clone(), act_in });
        h = out;
    }
    Ok((h, Tape { version: params.version, layers }))
}

fn normalize_rows(m: &Matrix) -> (Matrix, Vec<f64>) {
    let mut xhat = m.clone();
    let mut inv_std = Vec::with_capacity(m.rows());
    let n = m.cols() as f64;
    for r in 0..m.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let is = 1.0 / (var + LN_EPS).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * is);
        inv_std.push(is);
    }
    (xhat, inv_std)
}

/// Reverse pass: gradients of `sum(upstream . output)` with respect to the
/// parameters, the input and the side input.
pub fn backward(params: &ParamSet, spec: &NetSpec, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
    if tape.version != params.version {
        return Err(NnError::StaleTape { tape: tape.version, current: params.version });
    }
    let last = spec.n_dense() - 1;
    let out = &tape.layers[last].out;
    if upstream.rows() != out.rows() || upstream.cols() != out.cols() {
        return Err(NnError::DimensionMismatch { expected: out.cols(), got: upstream.cols() });
    }
    let mut grads = ParamSet::zeros(spec);
    let mut g = upstream.clone();
    let mut side = None;
    for i in (0..spec.n_dense()).rev() {
        let lt = &tape.layers[i];
        let p = &params.layers[i];
        // through the activation
        if i == last {
            match spec.output_activation {
                OutputActivation::Linear => {}
                OutputActivation::TanhUnit => {
                    for (gv, o) in g.as_mut_slice().iter_mut().zip(lt.out.as_slice()) {
                        *gv *= 2.0 * o * (1.0 - o);
                    }
                }
                OutputActivation::NegSoftplus => {
                    for (gv, a) in g.as_mut_slice().iter_mut().zip(lt.act_in.as_slice()) {
                        *gv *= -sigmoid(*a);
                    }
                }
            }
        } else {
            match spec.activation {
                Activation::Relu => {
                    for (gv, a) in g.as_mut_slice().iter_mut().zip(lt.act_in.as_slice()) {
                        if *a <= 0.0 {
                            *gv = 0.0;
                        }
                    }
                }
                Activation::Tanh => {
                    for (gv, o) in g.as_mut_slice().iter_mut().zip(lt.out.as_slice()) {
                        *gv *= 1.0 - o * o;
                    }
                }
            }
        }
        // through layer norm
        if let Some(xhat) = &lt.xhat {
            let gl = &mut grads.layers[i];
            let n = g.cols() as f64;
            for r in 0..g.rows() {
                let xr = xhat.row(r);
                let gr = g.row_mut(r);
                for c in 0..gr.len() {
                    gl.ln_gain[c] += gr[c] * xr[c];
                    gl.ln_bias[c] += gr[c];
                    gr[c] *= p.ln_gain[c];
                }
                let mean_g = gr.iter().sum::<f64>() / n;
                let mean_gx = gr.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / n;
                let is = lt.inv_std[r];
                for c in 0..gr.len() {
                    gr[c] = is * (gr[c] - mean_g - xr[c] * mean_gx);
                }
            }
        }
        // through the dense layer
        let gl = &mut grads.layers[i];
        matmul_tn_acc(&lt.input, &g, &mut gl.w);
        for r in 0..g.rows() {
            gl.b.iter_mut().zip(g.row(r)).for_each(|(b, v)| *b += v);
        }
        let (fi, _) = spec.dense_shape(i);
        let gin = matmul_nt(&g, &p.w, fi);
        let sw = spec.side_width(i);
        if sw > 0 {
            let main = fi - sw;
            side = Some(gin.columns(main, fi));
            g = gin.columns(0, main);
        } else {
            g = gin;
        }
    }
    Ok(Gradients { params: grads, input: g, side })
}

/// A spec with its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub spec: NetSpec,
    pub params: ParamSet,
}

impl Mlp {
    pub fn new(spec: NetSpec, seed: u64) -> Result<Self> {
        let params = init_params(&spec, seed)?;
        Ok(Mlp { spec, params })
    }

    pub fn forward(&self, input: &Matrix, side: Option<&Matrix>) -> Result<(Matrix, Tape)> {
        forward(&self.params, &self.spec, input, side)
    }

    /// Forward pass without keeping the tape.
    pub fn predict(&self, input: &Matrix, side: Option<&Matrix>) -> Result<Matrix> {
        Ok(self.forward(input, side)?.0)
    }

    pub fn backward(&self, tape: &Tape, upstream: &Matrix) -> Result<Gradients> {
        backward(&self.params, &self.spec, tape, upstream)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weight_decay_can_skip_the_final_layer() {
        let spec = NetSpec::mlp(2, &[3], 1, OutputActivation::Linear);
        let p = init_params(&spec, 0).unwrap();
        let mut g = ParamSet::zeros(&spec);
        g.add_weight_decay(&p, 0.5, false).unwrap();
        assert_eq!(g.layers[0].w, p.layers[0].w.iter().map(|w| 0.5 * w).collect::<Vec<_>>());
        assert!(g.layers[1].w.iter().all(|&w| w == 0.0));
        assert!(g.layers[0].b.iter().all(|&b| b == 0.0));
        let mut g = ParamSet::zeros(&spec);
        g.add_weight_decay(&p, 1.0, true).unwrap();
        assert_eq!(g.layers[1].w, p.layers[1].w);
    }

    fn fd_check(spec: &NetSpec, seed: u64, batch: usize) {
        let mut params = init_params(spec, seed).unwrap();
        // non-trivial norm parameters and biases
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 1);
        params.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3)));
        let input = Matrix::from_vec(
            batch,
            spec.input_width(),
            (0..batch * spec.input_width()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let side = spec.side_input.map(|s| {
            Matrix::from_vec(batch, s.width, (0..batch * s.width).map(|_| rng.random_range(-1.0..1.0)).collect())
                .unwrap()
        });
        let up = Matrix::from_vec(
            batch,
            spec.output_width(),
            (0..batch * spec.output_width()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let loss = |p: &ParamSet, x: &Matrix, s: Option<&Matrix>| -> f64 {
            let (y, _) = forward(p, spec, x, s).unwrap();
            y.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        let (_, tape) = forward(&params, spec, &input, side.as_ref()).unwrap();
        let g = backward(&params, spec, &tape, &up).unwrap();
        let h = 1e-6;
        let flat = params.to_flat();
        let gflat = g.params.to_flat();
        let mut p2 = params.clone();
        for j in 0..flat.len() {
            let mut f = flat.clone();
            f[j] += h;
            p2.set_flat(&f).unwrap();
            let plus = loss(&p2, &input, side.as_ref());
            f[j] -= 2.0 * h;
            p2.set_flat(&f).unwrap();
            let minus = loss(&p2, &input, side.as_ref());
            let fd = (plus - minus) / (2.0 * h);
            assert!((fd - gflat[j]).abs() <= 1e-4 * fd.abs().max(1.0), "param {j}: {fd} vs {}", gflat[j]);
        }
        for j in 0..input.as_slice().len() {
            let mut x = input.clone();
            x.as_mut_slice()[j] += h;
            let plus = loss(&params, &x, side.as_ref());
            x.as_mut_slice()[j] -= 2.0 * h;
            let minus = loss(&params, &x, side.as_ref());
            let fd = (plus - minus) / (2.0 * h);
            let an = g.input.as_slice()[j];
            assert!((fd - an).abs() <= 1e-4 * fd.abs().max(1.0), "input {j}: {fd} vs {an}");
        }
        if let (Some(s), Some(gs)) = (&side, &g.side) {
            for j in 0..s.as_slice().len() {
                let mut sp = s.clone();
                sp.as_mut_slice()[j] += h;
                let plus = loss(&params, &input, Some(&sp));
                sp.as_mut_slice()[j] -= 2.0 * h;
                let minus = loss(&params, &input, Some(&sp));
                let fd = (plus - minus) / (2.0 * h);
                assert!((fd - gs.as_slice()[j]).abs() <= 1e-4 * fd.abs().max(1.0));
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(&NetSpec::mlp(3, &[5, 4], 2, OutputActivation::Linear), 1, 3);
        fd_check(&NetSpec::mlp(4, &[6], 3, OutputActivation::TanhUnit), 2, 2);
        fd_check(&NetSpec::mlp(4, &[6], 3, OutputActivation::NegSoftplus), 5, 2);
        let mut tanh = NetSpec::mlp(3, &[4, 4], 2, OutputActivation::Linear).without_layer_norm();
        tanh.activation = Activation::Tanh;
        fd_check(&tanh, 3, 4);
        fd_check(&NetSpec::mlp(4, &[8, 6], 1, OutputActivation::Linear).with_side_input(1, 3), 4, 3);
    }

    #[test]
    fn glorot_and_orthogonal_init() {
        let spec = NetSpec::mlp(4, &[4], 3, OutputActivation::Linear);
        let p = init_params(&spec, 9).unwrap();
        let lim = (6.0f64 / 8.0).sqrt();
        assert!(p.layers()[0].weights().iter().all(|w| w.abs() <= lim));
        // final layer is 4 x 3: columns orthonormal
        let w = p.layers()[1].weights();
        for a in 0..3 {
            for b in 0..3 {
                let d: f64 = (0..4).map(|i| w[i * 3 + a] * w[i * 3 + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((d - want).abs() < 1e-6);
            }
        }
        assert!(p.layers()[0].biases().iter().all(|b| *b == 0.0));
        assert_eq!(p, init_params(&spec, 9).unwrap());
        assert_ne!(p, init_params(&spec, 10).unwrap());
    }

    #[test]
    fn zero_weights_give_bias_output() {
        let spec = NetSpec::mlp(2, &[3], 2, OutputActivation::TanhUnit);
        let mut p = ParamSet::zeros(&spec);
        p.for_each_tensor_mut(|k, t| {
            if k == TensorKind::Bias {
                t.iter_mut().for_each(|v| *v = 0.5);
            }
        });
        let (y, _) = forward(&p, &spec, &Matrix::row_vector(&[1.0, -2.0]), None).unwrap();
        let want = 0.5 * (0.5f64.tanh() + 1.0);
        assert!(y.as_slice().iter().all(|v| (v - want).abs() < 1e-15));
    }

    #[test]
    fn linear_gradient_is_the_input() {
        // relu hidden with large positive bias acts linearly
        let spec = NetSpec::mlp(2, &[1], 1, OutputActivation::Linear).without_layer_norm();
        let mut p = ParamSet::zeros(&spec);
        p.set_flat(&[1.0, 1.0, 10.0, 1.0, 0.0]).unwrap();
        let x = Matrix::row_vector(&[0.3, 0.4]);
        let (_, tape) = forward(&p, &spec, &x, None).unwrap();
        let g = backward(&p, &spec, &tape, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(&g.params.layers()[0].weights(), &[0.3, 0.4]);
        assert_eq!(g.params.layers()[1].weights(), &[10.7]);
    }

    #[test]
    fn layer_norm_ignores_constant_shifts() {
        // Adding the same constant to every pre-activation of a normed layer
        // leaves its output unchanged, so the bias gradients sum to zero.
        let spec = NetSpec::mlp(3, &[4], 2, OutputActivation::Linear);
        let p = init_params(&spec, 5).unwrap();
        let x = Matrix::row_vector(&[0.2, -0.7, 1.1]);
        let (_, tape) = forward(&p, &spec, &x, None).unwrap();
        let g = backward(&p, &spec, &tape, &Matrix::row_vector(&[1.0, -0.5])).unwrap();
        let s: f64 = g.params.layers()[0].biases().iter().sum();
        assert!(s.abs() < 1e-12, "{s}");
    }

    #[test]
    fn stale_tape_is_rejected() {
        let spec = NetSpec::mlp(2, &[3], 1, OutputActivation::Linear);
        let mut p = init_params(&spec, 1).unwrap();
        let (_, tape) = forward(&p, &spec, &Matrix::row_vector(&[1.0, 2.0]), None).unwrap();
        p.for_each_tensor_mut(|_, t| t.iter_mut().for_each(|v| *v *= 2.0));
        assert!(matches!(backward(&p, &spec, &tape, &Matrix::row_vector(&[1.0])), Err(NnError::StaleTape { .. })));
    }

    #[test]
    fn invalid_specs() {
        let mut s = NetSpec::mlp(2, &[3], 1, OutputActivation::Linear);
        s.layer_widths = vec![2, 1];
        s.layer_norm.clear();
        assert!(s.validate().is_err());
        let s = NetSpec::mlp(2, &[0], 1, OutputActivation::Linear);
        assert!(s.validate().is_err());
    }
}
