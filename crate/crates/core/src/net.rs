//! Multi-surface SDF decoder with Lipschitz-bounded affine layers.
//!
//! The decoder maps a spatial point `x` (mm) and a latent code `z` to one
//! signed distance per surface. Coordinates enter the network as
//! `coord_scale * x / length_unit`; the pair `(scaled x, z)` is called the
//! *joint input* below, and it is re-concatenated to the hidden state at
//! `concat_layer`.
//!
//! With `lipschitz_enabled`, every affine layer uses the rescaled matrix
//! `W * min(1, softplus(c) / |W|_inf)` where `|W|_inf` is the max absolute
//! row sum, so `softplus(c)` bounds the layer's Lipschitz constant in the
//! infinity norm.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    pub latent_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub n_surfaces: usize,
    /// 1-based index of the hidden layer whose input is widened by the joint input.
    /// A value of 1 means no re-concatenation.
    pub concat_layer: usize,
    pub coord_scale: f64,
    /// Millimetres per model length unit; coordinates are divided by this before scaling.
    pub length_unit: f64,
    pub activation: Activation,
    pub lipschitz_enabled: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            latent_dim: 64,
            hidden_layers: 5,
            hidden_width: 256,
            n_surfaces: 4,
            concat_layer: 3,
            coord_scale: 100.0,
            length_unit: 1000.0,
            activation: Activation::Tanh,
            lipschitz_enabled: true,
        }
    }
}

impl NetworkConfig {
    /// The unregularized ablation: plain affine layers with ReLU.
    pub fn unregularized(mut self) -> Self {
        self.activation = Activation::Relu;
        self.lipschitz_enabled = false;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1");
        }
        if self.hidden_layers == 0 || self.hidden_width == 0 {
            return bad("hidden_layers and hidden_width must be >= 1");
        }
        if self.n_surfaces == 0 {
            return bad("n_surfaces must be >= 1");
        }
        if self.concat_layer == 0 || self.concat_layer > self.hidden_layers {
            return bad("concat_layer must lie in 1..=hidden_layers");
        }
        if !(self.coord_scale > 0.0 && self.coord_scale.is_finite()) {
            return bad("coord_scale must be positive");
        }
        if !(self.length_unit > 0.0 && self.length_unit.is_finite()) {
            return bad("length_unit must be positive");
        }
        Ok(())
    }

    /// Factor mapping millimetres to the network's scaled coordinates.
    pub fn input_scale(&self) -> f64 {
        self.coord_scale / self.length_unit
    }

    pub fn joint_dim(&self) -> usize {
        3 + self.latent_dim
    }

    pub fn n_layers(&self) -> usize {
        self.hidden_layers + 1
    }

    fn concats_at(&self, layer: usize) -> bool {
        layer > 0 && layer + 1 == self.concat_layer
    }

    /// `(rows, cols)` of every affine layer, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.n_layers());
        for l in 0..self.hidden_layers {
            let cols = if l == 0 {
                self.joint_dim()
            } else if self.concats_at(l) {
                self.hidden_width + self.joint_dim()
            } else {
                self.hidden_width
            };
            shapes.push((self.hidden_width, cols));
        }
        shapes.push((self.n_surfaces, self.hidden_width));
        shapes
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

/// `tanh` through one `exp`, about twice as fast as the libm routine and within
/// one ulp of 1 in absolute error.
#[inline]
fn tanh(x: f64) -> f64 {
    if x.abs() > 20.0 {
        return x.signum();
    }
    let e = (-2.0 * x.abs()).exp();
    x.signum() * (1.0 - e) / (1.0 + e)
}

/// Max absolute row sum and the first row attaining it.
pub fn inf_norm(w: &Array2<f64>) -> (f64, usize) {
    let mut best = (0.0, 0);
    for (r, row) in w.rows().into_iter().enumerate() {
        let sum: f64 = row.iter().map(|v| v.abs()).sum();
        if sum > best.0 {
            best = (sum, r);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    /// Lipschitz parameter; `None` for plain affine layers.
    pub c: Option<f64>,
}

/// How a layer's weight matrix is rescaled in the forward pass.
#[derive(Clone, Copy, Debug)]
struct Normalization {
    scale: f64,
    clamped: bool,
    norm: f64,
    argmax_row: usize,
}

impl Layer {
    fn normalization(&self) -> Normalization {
        let (norm, argmax_row) = inf_norm(&self.w);
        match self.c {
            Some(c) => {
                let bound = softplus(c);
                // Equality takes the identity branch.
                if norm > bound {
                    Normalization {
                        scale: bound / norm,
                        clamped: true,
                        norm,
                        argmax_row,
                    }
                } else {
                    Normalization {
                        scale: 1.0,
                        clamped: false,
                        norm,
                        argmax_row,
                    }
                }
            }
            None => Normalization {
                scale: 1.0,
                clamped: false,
                norm,
                argmax_row,
            },
        }
    }

    /// The matrix actually applied in the forward pass.
    pub fn effective_weight(&self) -> Array2<f64> {
        let n = self.normalization();
        if n.clamped {
            &self.w * n.scale
        } else {
            self.w.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    pub config: NetworkConfig,
    pub layers: Vec<Layer>,
}

/// Per-surface signed distances in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct SdfOutput(pub Vec<f64>);

/// Intermediate values recorded by [`NetworkParams::forward_tape`].
pub struct Tape {
    /// Input matrix of every layer, `B x cols`.
    inputs: Vec<Array2<f64>>,
    weights: Vec<Array2<f64>>,
    norms: Vec<Normalization>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGrad {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub c: Option<f64>,
}

/// Gradient with respect to every network parameter, laid out like [`NetworkParams::layers`].
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGrads {
    pub layers: Vec<LayerGrad>,
}

impl NetworkGrads {
    pub fn zeros_like(params: &NetworkParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGrad {
                    w: Array2::zeros(l.w.raw_dim()),
                    b: Array1::zeros(l.b.len()),
                    c: l.c.map(|_| 0.0),
                })
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &NetworkGrads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.w += &b.w;
            a.b += &b.b;
            if let (Some(x), Some(y)) = (a.c.as_mut(), b.c) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.w *= k;
            l.b *= k;
            if let Some(c) = l.c.as_mut() {
                *c *= k;
            }
        }
    }

    /// Flattened in the same order as [`NetworkParams::to_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
            out.extend(l.c);
        }
        out
    }
}

/// Exact gradients of `<cotangent, forward(x, z)>` for a single query.
#[derive(Clone, Debug)]
pub struct PointGradients {
    pub params: NetworkGrads,
    pub z: Vec<f64>,
    pub x: [f64; 3],
}

impl NetworkParams {
    /// Glorot-uniform weights, zero biases, and `c = softplus_inv(|W|_inf)` so each
    /// bound starts tight.
    pub fn init<R: Rng + ?Sized>(config: NetworkConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_shapes()
            .into_iter()
            .map(|(rows, cols)| {
                let limit = (6.0 / (rows + cols) as f64).sqrt();
                let w = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
                let c = config
                    .lipschitz_enabled
                    .then(|| softplus_inv(inf_norm(&w).0.max(1e-12)));
                Layer {
                    w,
                    b: Array1::zeros(rows),
                    c,
                }
            })
            .collect();
        Ok(Self { config, layers })
    }

    /// Checks layer shapes against the config and that all entries are finite.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let shapes = self.config.layer_shapes();
        if shapes.len() != self.layers.len() {
            return Err(Error::dims("layer count", shapes.len(), self.layers.len()));
        }
        for (i, ((rows, cols), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if layer.w.nrows() != *rows {
                return Err(Error::dims(
                    format!("layer {i} rows"),
                    *rows,
                    layer.w.nrows(),
                ));
            }
            if layer.w.ncols() != *cols {
                return Err(Error::dims(
                    format!("layer {i} cols"),
                    *cols,
                    layer.w.ncols(),
                ));
            }
            if layer.b.len() != *rows {
                return Err(Error::dims(format!("layer {i} bias"), *rows, layer.b.len()));
            }
            if layer.c.is_some() != self.config.lipschitz_enabled {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: Lipschitz parameter presence disagrees with config"
                )));
            }
            let finite = layer.w.iter().chain(layer.b.iter()).chain(layer.c.iter());
            if !finite.into_iter().all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.w.len() + l.b.len() + usize::from(l.c.is_some()))
            .sum()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
            out.extend(l.c);
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::dims(
                "flat parameter vector",
                self.n_params(),
                flat.len(),
            ));
        }
        let mut it = flat.iter().copied();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|v| *v = it.next().unwrap());
            l.b.iter_mut().for_each(|v| *v = it.next().unwrap());
            if let Some(c) = l.c.as_mut() {
                *c = it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Product of `softplus(c_i)` over all normalized layers.
    pub fn lipschitz_bound(&self) -> f64 {
        self.layers
            .iter()
            .filter_map(|l| l.c)
            .map(softplus)
            .product()
    }

    /// Lipschitz bound in the infinity norm on the joint input that also holds when
    /// the layers before the concatenation contract (product below 1).
    pub fn certified_lipschitz_bound(&self) -> f64 {
        let per_layer: Vec<f64> = self
            .layers
            .iter()
            .map(|l| match l.c {
                Some(c) => softplus(c),
                None => inf_norm(&l.w).0,
            })
            .collect();
        let mut bound = 1.0;
        for (l, k) in per_layer.iter().enumerate() {
            if self.config.concats_at(l) {
                bound = f64::max(bound, 1.0);
            }
            bound *= k;
        }
        bound
    }

    /// Builds the joint input row `(input_scale * x, z)`.
    pub fn joint_input(&self, x: &[f64; 3], z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.config.latent_dim {
            return Err(Error::dims("latent code", self.config.latent_dim, z.len()));
        }
        let k = self.config.input_scale();
        let mut u = Vec::with_capacity(self.config.joint_dim());
        u.extend(x.iter().map(|v| v * k));
        u.extend_from_slice(z);
        Ok(u)
    }

    pub fn forward(&self, x: &[f64; 3], z: &[f64]) -> Result<SdfOutput> {
        let u = self.joint_input(x, z)?;
        self.forward_joint(&u).map(SdfOutput)
    }

    pub fn forward_joint(&self, u: &[f64]) -> Result<Vec<f64>> {
        let m = ArrayView2::from_shape((1, u.len()), u)
            .map_err(|_| Error::dims("joint input", self.config.joint_dim(), u.len()))?;
        Ok(self.forward_batch(m)?.row(0).to_vec())
    }

    /// Evaluates a batch of joint-input rows, `B x (3 + d)` -> `B x n_surfaces`.
    pub fn forward_batch(&self, joint: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_tape(joint)?.0)
    }

    pub fn forward_tape(&self, joint: ArrayView2<f64>) -> Result<(Array2<f64>, Tape)> {
        let cfg = &self.config;
        if joint.ncols() != cfg.joint_dim() {
            return Err(Error::dims("joint input", cfg.joint_dim(), joint.ncols()));
        }
        if self.layers.len() != cfg.n_layers() {
            return Err(Error::dims(
                "layer count",
                cfg.n_layers(),
                self.layers.len(),
            ));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        let mut norms = Vec::with_capacity(n);
        let mut a = joint.to_owned();
        for (l, layer) in self.layers.iter().enumerate() {
            if cfg.concats_at(l) {
                a = ndarray::concatenate(Axis(1), &[a.view(), joint]).expect("row counts agree");
            }
            if a.ncols() != layer.w.ncols() {
                return Err(Error::dims(
                    format!("layer {l} input"),
                    layer.w.ncols(),
                    a.ncols(),
                ));
            }
            let norm = layer.normalization();
            let w = layer.effective_weight();
            let mut pre = a.dot(&w.t());
            pre += &layer.b;
            if l + 1 < n {
                match cfg.activation {
                    Activation::Tanh => pre.mapv_inplace(tanh),
                    Activation::Relu => pre.mapv_inplace(|v| v.max(0.0)),
                }
            }
            inputs.push(a);
            weights.push(w);
            norms.push(norm);
            a = pre;
        }
        Ok((
            a,
            Tape {
                inputs,
                weights,
                norms,
            },
        ))
    }

    /// Reverse pass for a batch. Returns the parameter gradients (when requested)
    /// and the gradient with respect to every joint-input row.
    pub fn backward_tape(
        &self,
        tape: &Tape,
        cotangent: ArrayView2<f64>,
        want_params: bool,
    ) -> Result<(Option<NetworkGrads>, Array2<f64>)> {
        let cfg = &self.config;
        let n = self.layers.len();
        let batch = tape.inputs[0].nrows();
        if cotangent.dim() != (batch, cfg.n_surfaces) {
            return Err(Error::dims(
                "cotangent columns",
                cfg.n_surfaces,
                cotangent.ncols(),
            ));
        }
        let jd = cfg.joint_dim();
        let mut joint_grad = Array2::<f64>::zeros((batch, jd));
        let mut grads = want_params.then(|| NetworkGrads::zeros_like(self));
        let mut delta = cotangent.to_owned();
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let a = &tape.inputs[l];
            if want_params {
                let g_hat = delta.t().dot(a);
                let g_b = delta.sum_axis(Axis(0));
                let norm = tape.norms[l];
                let lg = &mut grads.as_mut().unwrap().layers[l];
                lg.b = g_b;
                if norm.clamped {
                    // W_hat = W * softplus(c) / |W|_inf on the active branch.
                    let c = layer.c.expect("clamped layers carry c");
                    let inner: f64 = (&g_hat * &layer.w).sum();
                    let mut gw = &g_hat * norm.scale;
                    let k = softplus(c) / (norm.norm * norm.norm) * inner;
                    let r = norm.argmax_row;
                    for (j, wv) in layer.w.row(r).iter().enumerate() {
                        gw[[r, j]] -= k * sign(*wv);
                    }
                    lg.w = gw;
                    lg.c = Some(inner * sigmoid(c) / norm.norm);
                } else {
                    lg.w = g_hat;
                    if lg.c.is_some() {
                        lg.c = Some(0.0);
                    }
                }
            }
            let da = delta.dot(&tape.weights[l]);
            // Split off the re-concatenated joint input.
            let dh = if cfg.concats_at(l) {
                let w = cfg.hidden_width;
                joint_grad += &da.slice(s![.., w..]);
                da.slice(s![.., ..w]).to_owned()
            } else {
                da
            };
            if l == 0 {
                joint_grad += &dh;
                break;
            }
            // Activation derivative from the previous layer's output.
            let h = tape.inputs[l].slice(s![.., ..cfg.hidden_width]);
            delta = match cfg.activation {
                Activation::Tanh => {
                    let mut d = dh;
                    ndarray::Zip::from(&mut d)
                        .and(&h)
                        .for_each(|d, &h| *d *= 1.0 - h * h);
                    d
                }
                Activation::Relu => {
                    let mut d = dh;
                    ndarray::Zip::from(&mut d).and(&h).for_each(|d, &h| {
                        if h <= 0.0 {
                            *d = 0.0
                        }
                    });
                    d
                }
            };
        }
        Ok((grads, joint_grad))
    }

    /// Gradients of `<cotangent, forward(x, z)>` with respect to parameters, `z` and `x`.
    pub fn backward(&self, x: &[f64; 3], z: &[f64], cotangent: &[f64]) -> Result<PointGradients> {
        if cotangent.len() != self.config.n_surfaces {
            return Err(Error::dims(
                "cotangent",
                self.config.n_surfaces,
                cotangent.len(),
            ));
        }
        let u = self.joint_input(x, z)?;
        let u = Array2::from_shape_vec((1, u.len()), u).expect("row vector");
        let (_, tape) = self.forward_tape(u.view())?;
        let ct = ArrayView2::from_shape((1, cotangent.len()), cotangent).expect("row vector");
        let (grads, ju) = self.backward_tape(&tape, ct, true)?;
        let k = self.config.input_scale();
        Ok(PointGradients {
            params: grads.expect("requested"),
            z: ju.slice(s![0, 3..]).to_vec(),
            x: [ju[[0, 0]] * k, ju[[0, 1]] * k, ju[[0, 2]] * k],
        })
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
