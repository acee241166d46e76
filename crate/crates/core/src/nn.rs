//! Parameter storage and the small layer zoo used by the importance
//! estimator and the toy classifier.
//!
//! [`ParamStore`] owns named parameter and buffer arrays (insertion-ordered,
//! so optimizer state and serialization are deterministic). [`Ctx`] pairs a
//! fresh [`Tape`] with a store for one forward/backward pass: the first
//! `param(name)` call binds the stored array as a tape leaf, later calls
//! reuse the same leaf.
//!
//! Layers are lightweight descriptors (name prefix + hyperparameters); the
//! arrays live in the store. Every layer offers the tape `forward` and a
//! plain-array `infer` path (eval-mode, no gradients) used by feature
//! extraction and benchmarks; a test pins the two paths together.

use crate::container::ContainerError;
use crate::tape::{Gradients, Tape, TapeError, Var};
use indexmap::IndexMap;
use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::Rng;
use std::path::Path;

type Result<T> = std::result::Result<T, TapeError>;

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;
pub const LEAKY_SLOPE: f64 = 0.01;

/// Named trainable parameters plus non-trained buffers (running statistics).
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: IndexMap<String, ArrayD<f64>>,
    buffers: IndexMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert_param(&mut self, name: &str, value: ArrayD<f64>) {
        self.params.insert(name.to_string(), value);
    }

    pub fn insert_buffer(&mut self, name: &str, value: ArrayD<f64>) {
        self.buffers.insert(name.to_string(), value);
    }

    pub fn param(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.params.get(name)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.params.get_mut(name)
    }

    pub fn buffer(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.buffers.get(name)
    }

    pub fn buffer_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.buffers.get_mut(name)
    }

    pub fn param_names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.params.iter_mut()
    }

    /// Total number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.params.values().map(|v| v.len()).sum()
    }

    /// Serializes parameters and buffers into one tensor container.
    pub fn save(&self, path: &Path) -> std::result::Result<(), ContainerError> {
        let mut entries = Vec::with_capacity(self.params.len() + self.buffers.len());
        for (k, v) in &self.params {
            entries.push((format!("p/{k}"), v.clone()));
        }
        for (k, v) in &self.buffers {
            entries.push((format!("b/{k}"), v.clone()));
        }
        crate::container::write_named(path, &entries)
    }

    pub fn load(path: &Path) -> std::result::Result<Self, ContainerError> {
        let mut store = Self::new();
        for (name, value) in crate::container::read_any(path)? {
            if let Some(k) = name.strip_prefix("p/") {
                store.params.insert(k.to_string(), value);
            } else if let Some(k) = name.strip_prefix("b/") {
                store.buffers.insert(k.to_string(), value);
            } else {
                return Err(ContainerError::Malformed(format!(
                    "unknown entry kind in parameter file: {name:?}"
                )));
            }
        }
        Ok(store)
    }
}

/// One forward/backward pass: a tape plus the store it binds parameters from.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a mut ParamStore,
    bound: IndexMap<String, Var>,
    pub training: bool,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a mut ParamStore, training: bool) -> Self {
        Self { tape: Tape::new(), store, bound: IndexMap::new(), training }
    }

    /// Binds a stored parameter as a gradient-carrying leaf (once per name).
    pub fn param(&mut self, name: &str) -> Result<Var> {
        if let Some(v) = self.bound.get(name) {
            return Ok(*v);
        }
        let value = self
            .store
            .param(name)
            .ok_or_else(|| TapeError::Invalid(format!("unknown parameter {name:?}")))?
            .clone();
        let v = self.tape.leaf(value, true)?;
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&mut self, value: ArrayD<f64>) -> Result<Var> {
        self.tape.constant(value)
    }

    /// Gradients of every parameter bound during this pass, by name.
    pub fn collect_grads(&self, grads: &Gradients) -> IndexMap<String, ArrayD<f64>> {
        let mut out = IndexMap::new();
        for (name, var) in &self.bound {
            let shape = self.tape.value(*var).shape().to_vec();
            out.insert(name.clone(), grads.wrt(*var, &shape));
        }
        out
    }
}

fn uniform_init(rng: &mut impl Rng, shape: &[usize], bound: f64) -> ArrayD<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ArrayD::from_shape_vec(IxDyn(shape), data).expect("shape matches length")
}

/// Same-length 1-d convolution layer, odd kernel, stride 1.
#[derive(Debug, Clone)]
pub struct Conv1d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
}

impl Conv1d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        Self { name: name.into(), in_ch, out_ch, kernel }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    /// Uniform init over +-1/sqrt(in_ch * kernel) for weight and bias.
    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let bound = 1.0 / ((self.in_ch * self.kernel) as f64).sqrt();
        store.insert_param(
            &self.weight_name(),
            uniform_init(rng, &[self.out_ch, self.in_ch, self.kernel], bound),
        );
        store.insert_param(&self.bias_name(), uniform_init(rng, &[self.out_ch], bound));
    }

    pub fn param_count(&self) -> usize {
        self.out_ch * self.in_ch * self.kernel + self.out_ch
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = ctx.param(&self.bias_name())?;
        ctx.tape.conv1d_same(x, w, b)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let w = store.param(&self.weight_name()).expect("initialized");
        let b = store.param(&self.bias_name()).expect("initialized");
        let (bsz, cin, t) = x.dim();
        assert_eq!(cin, self.in_ch, "channel mismatch in {}", self.name);
        let k = self.kernel;
        let half = k / 2;
        let w3 = w
            .view()
            .into_dimensionality::<ndarray::Ix3>()
            .expect("conv weight is (out, in, k)");
        // One accumulated gemm per kernel tap on shifted column windows; no
        // im2col buffer, no transpose pass. Agrees with the tape forward to
        // rounding error.
        let mut y = Array3::zeros((bsz, self.out_ch, t));
        for o in 0..self.out_ch {
            y.slice_mut(ndarray::s![.., o, ..]).fill(b[[o]]);
        }
        for bi in 0..bsz {
            let xb = x.index_axis(Axis(0), bi);
            let mut yb = y.index_axis_mut(Axis(0), bi);
            for d in 0..k {
                let off = d as isize - half as isize;
                let span = t.saturating_sub(off.unsigned_abs());
                if span == 0 {
                    continue;
                }
                let ylo = (-off).max(0) as usize;
                let xlo = off.max(0) as usize;
                let wd = w3.slice(ndarray::s![.., .., d]);
                ndarray::linalg::general_mat_mul(
                    1.0,
                    &wd,
                    &xb.slice(ndarray::s![.., xlo..xlo + span]),
                    1.0,
                    &mut yb.slice_mut(ndarray::s![.., ylo..ylo + span]),
                );
            }
        }
        y
    }
}

/// Per-channel batch normalization over the (batch, time) axes.
#[derive(Debug, Clone)]
pub struct BatchNorm1d {
    pub name: String,
    pub channels: usize,
}

impl BatchNorm1d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self { name: name.into(), channels }
    }

    fn names(&self) -> (String, String, String, String) {
        (
            format!("{}.weight", self.name),
            format!("{}.bias", self.name),
            format!("{}.running_mean", self.name),
            format!("{}.running_var", self.name),
        )
    }

    pub fn init(&self, store: &mut ParamStore, _rng: &mut impl Rng) {
        let (w, b, rm, rv) = self.names();
        store.insert_param(&w, ArrayD::ones(IxDyn(&[self.channels])));
        store.insert_param(&b, ArrayD::zeros(IxDyn(&[self.channels])));
        store.insert_buffer(&rm, ArrayD::zeros(IxDyn(&[self.channels])));
        store.insert_buffer(&rv, ArrayD::ones(IxDyn(&[self.channels])));
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }

    /// Training mode uses batch statistics and updates the running buffers
    /// (unbiased variance, momentum 0.1); eval mode normalizes with the
    /// stored running statistics.
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let (wn, bn, rmn, rvn) = self.names();
        let gamma = ctx.param(&wn)?;
        let beta = ctx.param(&bn)?;
        if ctx.training {
            let n = {
                let s = ctx.tape.value(x).shape();
                (s[0] * s[2]) as f64
            };
            let (y, stats) = ctx.tape.batchnorm1d(x, gamma, beta, BN_EPS, None)?;
            let (mean, var) = stats.expect("batch mode returns statistics");
            let unbiased = if n > 1.0 { var.mapv(|v| v * n / (n - 1.0)) } else { var.clone() };
            let rm = ctx.store.buffer_mut(&rmn).expect("initialized");
            rm.zip_mut_with(&mean.into_dyn(), |r, &m| {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * m;
            });
            let rv = ctx.store.buffer_mut(&rvn).expect("initialized");
            rv.zip_mut_with(&unbiased.into_dyn(), |r, &v| {
                *r = (1.0 - BN_MOMENTUM) * *r + BN_MOMENTUM * v;
            });
            Ok(y)
        } else {
            let mean = ctx
                .store
                .buffer(&rmn)
                .expect("initialized")
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("1-d buffer")
                .to_owned();
            let var = ctx
                .store
                .buffer(&rvn)
                .expect("initialized")
                .view()
                .into_dimensionality::<ndarray::Ix1>()
                .expect("1-d buffer")
                .to_owned();
            let (y, _) = ctx.tape.batchnorm1d(x, gamma, beta, BN_EPS, Some((&mean, &var)))?;
            Ok(y)
        }
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let mut y = x.clone();
        self.infer_inplace(store, &mut y);
        y
    }

    /// Eval-mode normalization applied in place, for callers that own the
    /// activations and want to skip the extra buffer.
    pub fn infer_inplace(&self, store: &ParamStore, x: &mut Array3<f64>) {
        let (wn, bn, rmn, rvn) = self.names();
        let gamma = store.param(&wn).expect("initialized");
        let beta = store.param(&bn).expect("initialized");
        let mean = store.buffer(&rmn).expect("initialized");
        let var = store.buffer(&rvn).expect("initialized");
        let c = x.dim().1;
        for ch in 0..c {
            let inv = 1.0 / (var[[ch]] + BN_EPS).sqrt();
            let (g, m, be) = (gamma[[ch]], mean[[ch]], beta[[ch]]);
            x.slice_mut(ndarray::s![.., ch, ..])
                .mapv_inplace(|v| g * (v - m) * inv + be);
        }
    }
}

fn leaky_infer(x: &mut Array3<f64>) {
    x.mapv_inplace(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v });
}

/// Conv -> BN -> LeakyReLU -> Conv -> BN, with a residual connection from
/// the first activation into the second block, then LeakyReLU:
/// `h = lrelu(bn1(conv1(x))); y = lrelu(bn2(conv2(h)) + h)`.
#[derive(Debug, Clone)]
pub struct ResConv1DBlock {
    pub conv1: Conv1d,
    pub bn1: BatchNorm1d,
    pub conv2: Conv1d,
    pub bn2: BatchNorm1d,
}

impl ResConv1DBlock {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, kernel: usize) -> Self {
        let name = name.into();
        Self {
            conv1: Conv1d::new(format!("{name}.conv1"), in_ch, out_ch, kernel),
            bn1: BatchNorm1d::new(format!("{name}.bn1"), out_ch),
            conv2: Conv1d::new(format!("{name}.conv2"), out_ch, out_ch, kernel),
            bn2: BatchNorm1d::new(format!("{name}.bn2"), out_ch),
        }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        self.conv1.init(store, rng);
        self.bn1.init(store, rng);
        self.conv2.init(store, rng);
        self.bn2.init(store, rng);
    }

    pub fn param_count(&self) -> usize {
        self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(ctx, x)?;
        let h = self.bn1.forward(ctx, h)?;
        let h = ctx.tape.leaky_relu(h, LEAKY_SLOPE)?;
        let y = self.conv2.forward(ctx, h)?;
        let y = self.bn2.forward(ctx, y)?;
        let y = ctx.tape.add(y, h)?;
        ctx.tape.leaky_relu(y, LEAKY_SLOPE)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let mut h = self.conv1.infer(store, x);
        self.bn1.infer_inplace(store, &mut h);
        leaky_infer(&mut h);
        let mut y = self.conv2.infer(store, &h);
        self.bn2.infer_inplace(store, &mut y);
        y += &h;
        leaky_infer(&mut y);
        y
    }
}

/// Stack of residual conv blocks mapping (B, F, T) spectrograms to one
/// unbounded score per frame, shape (B, 1, T). The sigmoid that turns
/// scores into (0, 1) importance values is applied by the caller.
#[derive(Debug, Clone)]
pub struct FrameImportanceNet {
    pub blocks: Vec<ResConv1DBlock>,
}

impl FrameImportanceNet {
    /// The standard stack for `n_mels` input bands: channel pairs
    /// (n_mels, 64), (64, 32), (32, 16), (16, 8), (8, 1), kernel 5.
    pub fn new(name: &str, n_mels: usize) -> Self {
        Self::with_channels(
            name,
            &[(n_mels, 64), (64, 32), (32, 16), (16, 8), (8, 1)],
        )
    }

    /// Custom channel pairs; the last pair must end in one channel.
    pub fn with_channels(name: &str, pairs: &[(usize, usize)]) -> Self {
        assert!(!pairs.is_empty(), "need at least one block");
        assert_eq!(pairs.last().unwrap().1, 1, "final block must emit one channel");
        let blocks = pairs
            .iter()
            .enumerate()
            .map(|(i, &(ic, oc))| ResConv1DBlock::new(format!("{name}.block{i}"), ic, oc, 5))
            .collect();
        Self { blocks }
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        for b in &self.blocks {
            b.init(store, rng);
        }
    }

    pub fn param_count(&self) -> usize {
        self.blocks.iter().map(|b| b.param_count()).sum()
    }

    /// Zeroes the final block's conv weights and biases. The stack then
    /// emits a score that is constant across time for any input, so the
    /// sigmoid importance is uniform (exactly 0.5 on freshly initialized
    /// normalization buffers).
    pub fn zero_final_block(&self, store: &mut ParamStore) {
        let b = self.blocks.last().expect("at least one block");
        for conv in [&b.conv1, &b.conv2] {
            for suffix in ["weight", "bias"] {
                let name = format!("{}.{suffix}", conv.name);
                if let Some(p) = store.param_mut(&name) {
                    p.fill(0.0);
                }
            }
        }
    }

    /// (B, F, T) -> per-frame scores (B, 1, T).
    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = x;
        for b in &self.blocks {
            h = b.forward(ctx, h)?;
        }
        Ok(h)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array3<f64>) -> Array3<f64> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.infer(store, &h);
        }
        h
    }
}

/// Dense layer: y = x W^T + b for x (B, in).
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_features: usize, out_features: usize) -> Self {
        Self { name: name.into(), in_features, out_features }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, rng: &mut impl Rng) {
        let bound = 1.0 / (self.in_features as f64).sqrt();
        store.insert_param(
            &self.weight_name(),
            uniform_init(rng, &[self.out_features, self.in_features], bound),
        );
        store.insert_param(&self.bias_name(), uniform_init(rng, &[self.out_features], bound));
    }

    pub fn param_count(&self) -> usize {
        self.out_features * self.in_features + self.out_features
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let w = ctx.param(&self.weight_name())?;
        let b = ctx.param(&self.bias_name())?;
        let wt = ctx.tape.transpose2(w)?;
        let y = ctx.tape.matmul(x, wt)?;
        let b2 = ctx.tape.reshape(b, &[1, self.out_features])?;
        ctx.tape.add(y, b2)
    }

    pub fn infer(&self, store: &ParamStore, x: &Array2<f64>) -> Array2<f64> {
        let w = store.param(&self.weight_name()).expect("initialized");
        let b = store.param(&self.bias_name()).expect("initialized");
        let w2 = w.view().into_dimensionality::<ndarray::Ix2>().expect("2-d weight");
        let b1 = b.view().into_dimensionality::<ndarray::Ix1>().expect("1-d bias");
        let mut y = x.dot(&w2.t());
        y += &b1.view().insert_axis(Axis(0));
        y
    }
}

/// One-hot vector of length `n` with a 1 at `idx` (classification targets).
pub fn one_hot(n: usize, idx: usize) -> Array1<f64> {
    let mut v = Array1::zeros(n);
    v[idx] = 1.0;
    v
}
