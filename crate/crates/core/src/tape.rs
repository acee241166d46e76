//! Minimal dense-array reverse-mode differentiation.
//!
//! A [`Tape`] records operations in execution order; [`Tape::backward`]
//! visits them once in reverse, accumulating vector-Jacobian products.
//! Values are `ArrayD<f64>`; every op validates shapes and rejects
//! non-finite outputs. Binary elementwise ops broadcast like NumPy
//! (trailing-axis alignment, size-1 expansion).
//!
//! Gradient conventions that tests rely on:
//! - max reductions route the gradient to the first (lowest-index) argmax;
//! - `max_scalar(x, c)` passes gradient only where `x > c` strictly;
//! - `leaky_relu` uses the negative slope at exactly zero;
//! - fan-out accumulates additively (`x + x` has gradient 2).

use ndarray::{concatenate, Array1, Array2, ArrayD, ArrayView2, Axis, Ix1, Ix2, IxDyn, Slice};

#[derive(Debug, thiserror::Error)]
pub enum TapeError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("non-finite output produced by {0}")]
    NonFinite(&'static str),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward called twice on the same tape without reset")]
    BackwardTwice,
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, TapeError>;

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

#[derive(Debug, Clone)]
pub(crate) struct FillEvent {
    pub row: usize,
    pub col: usize,
    /// Columns of `row` whose (possibly already-adjusted) values were summed
    /// before the fill fired.
    pub sources: Vec<usize>,
}

#[derive(Debug, Clone)]
enum BnSaved {
    /// Batch statistics computed in the forward pass.
    Batch { mean: Array1<f64>, invstd: Array1<f64> },
    /// Running statistics treated as constants.
    Eval { mean: Array1<f64>, invstd: Array1<f64> },
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddScalar(usize),
    MulScalar(usize, f64),
    PowScalar(usize, f64),
    Sigmoid(usize),
    LeakyRelu(usize, f64),
    Ln(usize),
    Exp(usize),
    Matmul(usize, usize),
    Conv1dSame { x: usize, w: usize, b: usize },
    BatchNorm1d { x: usize, gamma: usize, beta: usize, saved: BnSaved },
    Sum(usize),
    Mean(usize),
    Max(usize),
    SumAxis(usize, usize),
    MeanAxis(usize, usize),
    MaxAxis(usize, usize),
    Cumsum(usize, usize),
    Concat(Vec<usize>, usize),
    Slice { x: usize, axis: usize, start: usize, end: usize },
    Transpose2(usize),
    MaxScalar(usize, f64),
    Reshape(usize),
    RowFillNormalize { x: usize, events: Vec<FillEvent> },
}

impl Op {
    fn inputs(&self) -> Vec<usize> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) | Op::Matmul(a, b) => {
                vec![*a, *b]
            }
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::PowScalar(a, _)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::Ln(a)
            | Op::Exp(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Max(a)
            | Op::SumAxis(a, _)
            | Op::MeanAxis(a, _)
            | Op::MaxAxis(a, _)
            | Op::Cumsum(a, _)
            | Op::Transpose2(a)
            | Op::MaxScalar(a, _)
            | Op::Reshape(a) => vec![*a],
            Op::Conv1dSame { x, w, b } => vec![*x, *w, *b],
            Op::BatchNorm1d { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Concat(xs, _) => xs.clone(),
            Op::Slice { x, .. } => vec![*x],
            Op::RowFillNormalize { x, .. } => vec![*x],
        }
    }
}

struct Node {
    op: Op,
    value: ArrayD<f64>,
    requires_grad: bool,
}

/// Recorded computation with a parameter registry by node id.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`, if any path reached it.
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of the loss with respect to `v`, zeros when disconnected.
    pub fn wrt(&self, v: Var, shape: &[usize]) -> ArrayD<f64> {
        self.get(v).cloned().unwrap_or_else(|| ArrayD::zeros(IxDyn(shape)))
    }
}

fn check_finite(v: &ArrayD<f64>, op: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(TapeError::NonFinite(op))
    }
}

/// NumPy-style broadcast shape of two operands.
fn broadcast_shape(a: &[usize], b: &[usize], op: &'static str) -> Result<Vec<usize>> {
    let n = a.len().max(b.len());
    let mut out = vec![0usize; n];
    for i in 0..n {
        let da = if i < n - a.len() { 1 } else { a[i - (n - a.len())] };
        let db = if i < n - b.len() { 1 } else { b[i - (n - b.len())] };
        out[i] = if da == db || db == 1 {
            da
        } else if da == 1 {
            db
        } else {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: format!("cannot broadcast {a:?} with {b:?}"),
            });
        };
    }
    Ok(out)
}

/// Sums a gradient over broadcast axes back down to `target` shape.
fn unbroadcast(g: &ArrayD<f64>, target: &[usize]) -> ArrayD<f64> {
    let mut out = g.to_owned();
    while out.ndim() > target.len() {
        out = out.sum_axis(Axis(0));
    }
    for ax in 0..target.len() {
        if target[ax] == 1 && out.shape()[ax] != 1 {
            out = out.sum_axis(Axis(ax)).insert_axis(Axis(ax));
        }
    }
    out
}

fn to_standard(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().to_owned()
    }
}

fn as2<'a>(v: &'a ArrayD<f64>, op: &'static str) -> Result<ArrayView2<'a, f64>> {
    v.view().into_dimensionality::<Ix2>().map_err(|_| TapeError::ShapeMismatch {
        op,
        detail: format!("expected a 2-d array, got shape {:?}", v.shape()),
    })
}

fn as1<'a>(v: &'a ArrayD<f64>, op: &'static str) -> Result<ndarray::ArrayView1<'a, f64>> {
    v.view().into_dimensionality::<Ix1>().map_err(|_| TapeError::ShapeMismatch {
        op,
        detail: format!("expected a 1-d array, got shape {:?}", v.shape()),
    })
}

/// The scalar-walk row normalization: walks each row's support left to
/// right; at the first empty slot it writes the row's deficit `1 - sum` and
/// subtracts the same amount from the slot one row below, then moves on.
/// Records the fill events so a tape op can replay the exact affine adjoint.
pub(crate) fn row_fill_walk(
    w0: ArrayView2<'_, f64>,
    tol: f64,
) -> std::result::Result<(Array2<f64>, Vec<FillEvent>), String> {
    let (t, tt) = w0.dim();
    let mut w = w0.to_owned();
    let mut events: Vec<FillEvent> = Vec::new();
    let mut sources: Vec<usize> = Vec::new();
    let (mut i, mut j) = (0usize, 0usize);
    let mut acc = 0.0f64;
    // Row boundaries are decided by the seed's support, not the mutated
    // matrix: a fill can drive the next row's first entry to exactly zero,
    // and that slot must still count as support when the walk reaches it.
    while i + 1 < t && j < tt {
        if w0[[i, j]] > 0.0 {
            acc += w[[i, j]];
            sources.push(j);
            j += 1;
        } else {
            let fill = 1.0 - acc;
            if fill < -tol {
                return Err(format!(
                    "negative fill {fill:.3e} at row {i}, column {j} (row mass exceeds 1)"
                ));
            }
            w[[i, j]] = fill;
            w[[i + 1, j]] -= fill;
            if w[[i + 1, j]] < -tol {
                return Err(format!(
                    "negative weight {:.3e} at row {}, column {j} after fill",
                    w[[i + 1, j]],
                    i + 1
                ));
            }
            events.push(FillEvent { row: i, col: j, sources: std::mem::take(&mut sources) });
            i += 1;
            acc = 0.0;
        }
    }
    Ok((w, events))
}

fn row_fill_backward(g_out: &ArrayD<f64>, events: &[FillEvent]) -> ArrayD<f64> {
    let mut g = g_out.to_owned();
    for ev in events.iter().rev() {
        let gb = g[[ev.row + 1, ev.col]];
        g[[ev.row, ev.col]] -= gb;
        let ga = g[[ev.row, ev.col]];
        for &c in &ev.sources {
            g[[ev.row, c]] -= ga;
        }
        // The filled slot overwrote a structural zero; its old value is dead.
        g[[ev.row, ev.col]] = 0.0;
    }
    g
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// The recorded forward value of `v`.
    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: ArrayD<f64>, name: &'static str) -> Result<Var> {
        check_finite(&value, name)?;
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node { op, value: to_standard(value), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Records an input value; `requires_grad` marks it as a parameter leaf.
    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Result<Var> {
        check_finite(&value, "leaf")?;
        self.nodes.push(Node { op: Op::Leaf, value: to_standard(value), requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Result<Var> {
        self.constant(ArrayD::from_elem(IxDyn(&[]), value))
    }

    fn bin(
        &mut self,
        op: fn(usize, usize) -> Op,
        name: &'static str,
        a: Var,
        b: Var,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var> {
        let shape = broadcast_shape(
            self.nodes[a.0].value.shape(),
            self.nodes[b.0].value.shape(),
            name,
        )?;
        let av = self.nodes[a.0].value.broadcast(IxDyn(&shape)).ok_or_else(|| {
            TapeError::ShapeMismatch { op: name, detail: "broadcast failed".into() }
        })?;
        let bv = self.nodes[b.0].value.broadcast(IxDyn(&shape)).ok_or_else(|| {
            TapeError::ShapeMismatch { op: name, detail: "broadcast failed".into() }
        })?;
        let value = ndarray::Zip::from(&av).and(&bv).map_collect(|&x, &y| f(x, y));
        self.push(op(a.0, b.0), value, name)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(Op::Add, "add", a, b, |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(Op::Sub, "sub", a, b, |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(Op::Mul, "mul", a, b, |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.bin(Op::Div, "div", a, b, |x, y| x / y)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| x + c);
        self.push(Op::AddScalar(a.0), value, "add_scalar")
    }

    pub fn mul_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| x * c);
        self.push(Op::MulScalar(a.0, c), value, "mul_scalar")
    }

    pub fn pow_scalar(&mut self, a: Var, p: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| x.powf(p));
        self.push(Op::PowScalar(a.0, p), value, "pow_scalar")
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a.0), value, "sigmoid")
    }

    pub fn leaky_relu(&mut self, a: Var, alpha: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| if x > 0.0 { x } else { alpha * x });
        self.push(Op::LeakyRelu(a.0, alpha), value, "leaky_relu")
    }

    pub fn ln(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(f64::ln);
        self.push(Op::Ln(a.0), value, "ln")
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(f64::exp);
        self.push(Op::Exp(a.0), value, "exp")
    }

    /// 2-d matrix product.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let av = as2(&self.nodes[a.0].value, "matmul")?;
        let bv = as2(&self.nodes[b.0].value, "matmul")?;
        if av.ncols() != bv.nrows() {
            return Err(TapeError::ShapeMismatch {
                op: "matmul",
                detail: format!("{:?} x {:?}", av.shape(), bv.shape()),
            });
        }
        let value = av.dot(&bv).into_dyn();
        self.push(Op::Matmul(a.0, b.0), value, "matmul")
    }

    /// Same-length 1-d convolution with bias: x (B, Cin, T), w (Cout, Cin, K)
    /// with odd K, b (Cout) -> (B, Cout, T). Stride 1, zero padding.
    pub fn conv1d_same(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        let ws = self.nodes[w.0].value.shape().to_vec();
        let bs = self.nodes[b.0].value.shape().to_vec();
        if xs.len() != 3 || ws.len() != 3 || bs.len() != 1 {
            return Err(TapeError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("x {xs:?}, w {ws:?}, b {bs:?}"),
            });
        }
        let (bsz, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, wcin, k) = (ws[0], ws[1], ws[2]);
        if cin != wcin || bs[0] != cout || k % 2 == 0 {
            return Err(TapeError::ShapeMismatch {
                op: "conv1d_same",
                detail: format!("x {xs:?}, w {ws:?}, b {bs:?} (kernel must be odd)"),
            });
        }
        let col = im2col(&self.nodes[x.0].value, k);
        let wmat = self.nodes[w.0]
            .value
            .view()
            .into_shape_with_order((cout, cin * k))
            .expect("conv weight is standard layout");
        let out2 = col.dot(&wmat.t());
        let bias = as1(&self.nodes[b.0].value, "conv1d_same")?;
        let mut value = Array1::zeros(bsz * cout * t);
        {
            let o2 = out2.as_slice().expect("gemm output is contiguous");
            let v = value.as_slice_mut().unwrap();
            for bi in 0..bsz {
                for tau in 0..t {
                    let row = (bi * t + tau) * cout;
                    let dst = (bi * cout) * t + tau;
                    for o in 0..cout {
                        v[dst + o * t] = o2[row + o] + bias[o];
                    }
                }
            }
        }
        let value = value.into_shape_with_order(IxDyn(&[bsz, cout, t])).unwrap();
        self.push(Op::Conv1dSame { x: x.0, w: w.0, b: b.0 }, value, "conv1d_same")
    }

    /// Batch normalization over (batch, time) per channel for x (B, C, T).
    ///
    /// Train mode normalizes with batch statistics (biased variance) and
    /// returns them so the caller can maintain running buffers. Eval mode
    /// normalizes with the provided running statistics as constants.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        eps: f64,
        running: Option<(&Array1<f64>, &Array1<f64>)>,
    ) -> Result<(Var, Option<(Array1<f64>, Array1<f64>)>)> {
        let xs = self.nodes[x.0].value.shape().to_vec();
        if xs.len() != 3 {
            return Err(TapeError::ShapeMismatch {
                op: "batchnorm1d",
                detail: format!("expected (B, C, T), got {xs:?}"),
            });
        }
        let (bsz, c, t) = (xs[0], xs[1], xs[2]);
        let gv = as1(&self.nodes[gamma.0].value, "batchnorm1d")?.to_owned();
        let bv = as1(&self.nodes[beta.0].value, "batchnorm1d")?.to_owned();
        if gv.len() != c || bv.len() != c {
            return Err(TapeError::ShapeMismatch {
                op: "batchnorm1d",
                detail: format!("scale/shift length {} vs {} channels", gv.len(), c),
            });
        }
        let n = (bsz * t) as f64;
        let (mean, var, batch_stats) = match running {
            None => {
                let mut mean = Array1::zeros(c);
                let mut var = Array1::zeros(c);
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..bsz {
                        for tau in 0..t {
                            s += self.nodes[x.0].value[[bi, ch, tau]];
                        }
                    }
                    let m = s / n;
                    let mut sq = 0.0;
                    for bi in 0..bsz {
                        for tau in 0..t {
                            let d = self.nodes[x.0].value[[bi, ch, tau]] - m;
                            sq += d * d;
                        }
                    }
                    mean[ch] = m;
                    var[ch] = sq / n;
                }
                let stats = Some((mean.clone(), var.clone()));
                (mean, var, stats)
            }
            Some((m, v)) => {
                if m.len() != c || v.len() != c {
                    return Err(TapeError::ShapeMismatch {
                        op: "batchnorm1d",
                        detail: "running statistics length mismatch".into(),
                    });
                }
                (m.clone(), v.clone(), None)
            }
        };
        let invstd = var.mapv(|v| 1.0 / (v + eps).sqrt());
        let mut value = ArrayD::zeros(IxDyn(&[bsz, c, t]));
        for bi in 0..bsz {
            for ch in 0..c {
                for tau in 0..t {
                    let xhat = (self.nodes[x.0].value[[bi, ch, tau]] - mean[ch]) * invstd[ch];
                    value[[bi, ch, tau]] = gv[ch] * xhat + bv[ch];
                }
            }
        }
        let saved = if batch_stats.is_some() {
            BnSaved::Batch { mean, invstd }
        } else {
            BnSaved::Eval { mean, invstd }
        };
        let out = self.push(
            Op::BatchNorm1d { x: x.0, gamma: gamma.0, beta: beta.0, saved },
            value,
            "batchnorm1d",
        )?;
        Ok((out, batch_stats))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let value = ArrayD::from_elem(IxDyn(&[]), self.nodes[a.0].value.sum());
        self.push(Op::Sum(a.0), value, "sum")
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.nodes[a.0].value.len();
        if n == 0 {
            return Err(TapeError::Invalid("mean of an empty tensor".into()));
        }
        let value = ArrayD::from_elem(IxDyn(&[]), self.nodes[a.0].value.sum() / n as f64);
        self.push(Op::Mean(a.0), value, "mean")
    }

    /// Full max reduction; gradient goes to the first argmax element.
    pub fn max(&mut self, a: Var) -> Result<Var> {
        let m = self.nodes[a.0]
            .value
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        if self.nodes[a.0].value.is_empty() {
            return Err(TapeError::Invalid("max of an empty tensor".into()));
        }
        self.push(Op::Max(a.0), ArrayD::from_elem(IxDyn(&[]), m), "max")
    }

    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "sum_axis")?;
        let value = self.nodes[a.0].value.sum_axis(Axis(axis));
        self.push(Op::SumAxis(a.0, axis), value, "sum_axis")
    }

    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "mean_axis")?;
        let n = self.nodes[a.0].value.shape()[axis];
        if n == 0 {
            return Err(TapeError::Invalid("mean over an empty axis".into()));
        }
        let value = self.nodes[a.0].value.sum_axis(Axis(axis)) / n as f64;
        self.push(Op::MeanAxis(a.0, axis), value, "mean_axis")
    }

    /// Per-lane max along `axis`; ties route gradient to the lowest index.
    pub fn max_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "max_axis")?;
        if self.nodes[a.0].value.shape()[axis] == 0 {
            return Err(TapeError::Invalid("max over an empty axis".into()));
        }
        let value = self.nodes[a.0].value.map_axis(Axis(axis), |lane| {
            lane.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        });
        self.push(Op::MaxAxis(a.0, axis), value, "max_axis")
    }

    pub fn cumsum(&mut self, a: Var, axis: usize) -> Result<Var> {
        self.check_axis(a, axis, "cumsum")?;
        let mut value = self.nodes[a.0].value.clone();
        value.accumulate_axis_inplace(Axis(axis), |&prev, cur| *cur += prev);
        self.push(Op::Cumsum(a.0, axis), value, "cumsum")
    }

    pub fn concat(&mut self, xs: &[Var], axis: usize) -> Result<Var> {
        if xs.is_empty() {
            return Err(TapeError::Invalid("concat of zero inputs".into()));
        }
        self.check_axis(xs[0], axis, "concat")?;
        let views: Vec<_> = xs.iter().map(|v| self.nodes[v.0].value.view()).collect();
        let value = concatenate(Axis(axis), &views).map_err(|e| TapeError::ShapeMismatch {
            op: "concat",
            detail: e.to_string(),
        })?;
        self.push(Op::Concat(xs.iter().map(|v| v.0).collect(), axis), value, "concat")
    }

    /// Contiguous range along one axis.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        self.check_axis(a, axis, "slice")?;
        let extent = self.nodes[a.0].value.shape()[axis];
        if start >= end || end > extent {
            return Err(TapeError::ShapeMismatch {
                op: "slice",
                detail: format!("range {start}..{end} out of 0..{extent}"),
            });
        }
        let value = self.nodes[a.0]
            .value
            .slice_axis(Axis(axis), Slice::from(start..end))
            .to_owned();
        self.push(Op::Slice { x: a.0, axis, start, end }, value, "slice")
    }

    pub fn transpose2(&mut self, a: Var) -> Result<Var> {
        let v = as2(&self.nodes[a.0].value, "transpose2")?;
        let value = v.t().as_standard_layout().to_owned().into_dyn();
        self.push(Op::Transpose2(a.0), value, "transpose2")
    }

    /// Elementwise max with a constant (clamp from below); gradient passes
    /// only where the input strictly exceeds the constant.
    pub fn max_scalar(&mut self, a: Var, c: f64) -> Result<Var> {
        let value = self.nodes[a.0].value.mapv(|x| x.max(c));
        self.push(Op::MaxScalar(a.0, c), value, "max_scalar")
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let len: usize = shape.iter().product();
        if len != self.nodes[a.0].value.len() {
            return Err(TapeError::ShapeMismatch {
                op: "reshape",
                detail: format!("{:?} -> {:?}", self.nodes[a.0].value.shape(), shape),
            });
        }
        let value = self.nodes[a.0]
            .value
            .as_standard_layout()
            .to_owned()
            .into_shape_with_order(IxDyn(shape))
            .expect("length checked");
        self.push(Op::Reshape(a.0), value, "reshape")
    }

    /// The scalar-walk row normalization as a differentiable op; see
    /// [`row_fill_walk`]. Routing (which slots get filled) is fixed by the
    /// forward values; gradients flow through the affine adjustments.
    pub fn row_fill_normalize(&mut self, a: Var) -> Result<Var> {
        let v = as2(&self.nodes[a.0].value, "row_fill_normalize")?;
        let (w, events) =
            row_fill_walk(v, 1e-9).map_err(TapeError::Invalid)?;
        self.push(
            Op::RowFillNormalize { x: a.0, events },
            w.into_dyn(),
            "row_fill_normalize",
        )
    }

    fn check_axis(&self, a: Var, axis: usize, op: &'static str) -> Result<()> {
        let nd = self.nodes[a.0].value.ndim();
        if axis >= nd {
            return Err(TapeError::ShapeMismatch {
                op,
                detail: format!("axis {axis} out of range for {nd}-d value"),
            });
        }
        Ok(())
    }

    /// Reverse pass from a scalar loss. Gradients accumulate additively
    /// across fan-out; each node is visited exactly once in reverse
    /// execution order.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(TapeError::BackwardTwice);
        }
        let lshape = self.nodes[loss.0].value.shape().to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TapeError::NotScalar(lshape));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<ArrayD<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(ArrayD::ones(self.nodes[loss.0].value.raw_dim()));
        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(
        &self,
        id: usize,
        g: &ArrayD<f64>,
        grads: &mut Vec<Option<ArrayD<f64>>>,
    ) -> Result<()> {
        fn acc(slot: &mut Option<ArrayD<f64>>, add: ArrayD<f64>) {
            match slot {
                Some(a) => *a += &add,
                None => *slot = Some(add),
            }
        }
        let val = |i: usize| &self.nodes[i].value;
        let needs = |i: usize| self.nodes[i].requires_grad;
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if needs(*a) {
                    acc(&mut grads[*a], unbroadcast(g, val(*a).shape()));
                }
                if needs(*b) {
                    acc(&mut grads[*b], unbroadcast(g, val(*b).shape()));
                }
            }
            Op::Sub(a, b) => {
                if needs(*a) {
                    acc(&mut grads[*a], unbroadcast(g, val(*a).shape()));
                }
                if needs(*b) {
                    acc(&mut grads[*b], unbroadcast(&g.mapv(|x| -x), val(*b).shape()));
                }
            }
            Op::Mul(a, b) => {
                let shape = g.shape();
                if needs(*a) {
                    let bb = val(*b).broadcast(shape).unwrap();
                    let prod = ndarray::Zip::from(g).and(&bb).map_collect(|&x, &y| x * y);
                    acc(&mut grads[*a], unbroadcast(&prod, val(*a).shape()));
                }
                if needs(*b) {
                    let aa = val(*a).broadcast(shape).unwrap();
                    let prod = ndarray::Zip::from(g).and(&aa).map_collect(|&x, &y| x * y);
                    acc(&mut grads[*b], unbroadcast(&prod, val(*b).shape()));
                }
            }
            Op::Div(a, b) => {
                let shape = g.shape();
                let bb = val(*b).broadcast(shape).unwrap();
                if needs(*a) {
                    let da = ndarray::Zip::from(g).and(&bb).map_collect(|&x, &y| x / y);
                    acc(&mut grads[*a], unbroadcast(&da, val(*a).shape()));
                }
                if needs(*b) {
                    let aa = val(*a).broadcast(shape).unwrap();
                    let db = ndarray::Zip::from(g)
                        .and(&aa)
                        .and(&bb)
                        .map_collect(|&x, &y, &z| -x * y / (z * z));
                    acc(&mut grads[*b], unbroadcast(&db, val(*b).shape()));
                }
            }
            Op::AddScalar(a) => {
                if needs(*a) {
                    acc(&mut grads[*a], g.clone());
                }
            }
            Op::MulScalar(a, c) => {
                if needs(*a) {
                    acc(&mut grads[*a], g.mapv(|x| x * c));
                }
            }
            Op::PowScalar(a, p) => {
                if needs(*a) {
                    let da = ndarray::Zip::from(g)
                        .and(val(*a))
                        .map_collect(|&gi, &x| gi * p * x.powf(p - 1.0));
                    acc(&mut grads[*a], da);
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    let y = &self.nodes[id].value;
                    let da = ndarray::Zip::from(g).and(y).map_collect(|&gi, &yi| gi * yi * (1.0 - yi));
                    acc(&mut grads[*a], da);
                }
            }
            Op::LeakyRelu(a, alpha) => {
                if needs(*a) {
                    let da = ndarray::Zip::from(g)
                        .and(val(*a))
                        .map_collect(|&gi, &x| if x > 0.0 { gi } else { gi * alpha });
                    acc(&mut grads[*a], da);
                }
            }
            Op::Ln(a) => {
                if needs(*a) {
                    let da = ndarray::Zip::from(g).and(val(*a)).map_collect(|&gi, &x| gi / x);
                    acc(&mut grads[*a], da);
                }
            }
            Op::Exp(a) => {
                if needs(*a) {
                    let y = &self.nodes[id].value;
                    let da = ndarray::Zip::from(g).and(y).map_collect(|&gi, &yi| gi * yi);
                    acc(&mut grads[*a], da);
                }
            }
            Op::Matmul(a, b) => {
                let gv = as2(g, "matmul")?;
                let av = as2(val(*a), "matmul")?;
                let bv = as2(val(*b), "matmul")?;
                if needs(*a) {
                    acc(&mut grads[*a], gv.dot(&bv.t()).into_dyn());
                }
                if needs(*b) {
                    acc(&mut grads[*b], av.t().dot(&gv).into_dyn());
                }
            }
            Op::Conv1dSame { x, w, b } => {
                self.conv_backward(*x, *w, *b, g, grads)?;
            }
            Op::BatchNorm1d { x, gamma, beta, saved } => {
                self.bn_backward(*x, *gamma, *beta, saved, g, grads)?;
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let gi = g.iter().next().copied().unwrap_or(0.0);
                    acc(&mut grads[*a], ArrayD::from_elem(val(*a).raw_dim(), gi));
                }
            }
            Op::Mean(a) => {
                if needs(*a) {
                    let n = val(*a).len() as f64;
                    let gi = g.iter().next().copied().unwrap_or(0.0) / n;
                    acc(&mut grads[*a], ArrayD::from_elem(val(*a).raw_dim(), gi));
                }
            }
            Op::Max(a) => {
                if needs(*a) {
                    let x = val(*a);
                    let mut best = 0usize;
                    let mut bv = f64::NEG_INFINITY;
                    for (i, &v) in x.iter().enumerate() {
                        if v > bv {
                            bv = v;
                            best = i;
                        }
                    }
                    let mut da = ArrayD::zeros(x.raw_dim());
                    let gi = g.iter().next().copied().unwrap_or(0.0);
                    da.as_slice_mut().unwrap()[best] = gi;
                    acc(&mut grads[*a], da);
                }
            }
            Op::SumAxis(a, axis) => {
                if needs(*a) {
                    let expanded = g
                        .clone()
                        .insert_axis(Axis(*axis))
                        .broadcast(val(*a).raw_dim())
                        .unwrap()
                        .to_owned();
                    acc(&mut grads[*a], expanded);
                }
            }
            Op::MeanAxis(a, axis) => {
                if needs(*a) {
                    let n = val(*a).shape()[*axis] as f64;
                    let expanded = g
                        .mapv(|x| x / n)
                        .insert_axis(Axis(*axis))
                        .broadcast(val(*a).raw_dim())
                        .unwrap()
                        .to_owned();
                    acc(&mut grads[*a], expanded);
                }
            }
            Op::MaxAxis(a, axis) => {
                if needs(*a) {
                    let x = val(*a);
                    let mut da = ArrayD::zeros(x.raw_dim());
                    ndarray::Zip::from(da.lanes_mut(Axis(*axis)))
                        .and(x.lanes(Axis(*axis)))
                        .and(g)
                        .for_each(|mut dl, xl, &gi| {
                            let mut best = 0usize;
                            let mut bv = f64::NEG_INFINITY;
                            for (i, &v) in xl.iter().enumerate() {
                                if v > bv {
                                    bv = v;
                                    best = i;
                                }
                            }
                            dl[best] = gi;
                        });
                    acc(&mut grads[*a], da);
                }
            }
            Op::Cumsum(a, axis) => {
                if needs(*a) {
                    let mut da = g.clone();
                    da.invert_axis(Axis(*axis));
                    da.accumulate_axis_inplace(Axis(*axis), |&prev, cur| *cur += prev);
                    da.invert_axis(Axis(*axis));
                    acc(&mut grads[*a], to_standard(da));
                }
            }
            Op::Concat(xs, axis) => {
                let mut offset = 0usize;
                for &xi in xs {
                    let extent = val(xi).shape()[*axis];
                    if needs(xi) {
                        let part = g
                            .slice_axis(Axis(*axis), Slice::from(offset..offset + extent))
                            .to_owned();
                        acc(&mut grads[xi], part);
                    }
                    offset += extent;
                }
            }
            Op::Slice { x, axis, start, end } => {
                if needs(*x) {
                    let mut da = ArrayD::zeros(val(*x).raw_dim());
                    da.slice_axis_mut(Axis(*axis), Slice::from(*start..*end))
                        .assign(g);
                    acc(&mut grads[*x], da);
                }
            }
            Op::Transpose2(a) => {
                if needs(*a) {
                    let gv = as2(g, "transpose2")?;
                    acc(&mut grads[*a], gv.t().as_standard_layout().to_owned().into_dyn());
                }
            }
            Op::MaxScalar(a, c) => {
                if needs(*a) {
                    let da = ndarray::Zip::from(g)
                        .and(val(*a))
                        .map_collect(|&gi, &x| if x > *c { gi } else { 0.0 });
                    acc(&mut grads[*a], da);
                }
            }
            Op::Reshape(a) => {
                if needs(*a) {
                    let da = g
                        .as_standard_layout()
                        .to_owned()
                        .into_shape_with_order(val(*a).raw_dim())
                        .expect("reshape grad length matches");
                    acc(&mut grads[*a], da);
                }
            }
            Op::RowFillNormalize { x, events } => {
                if needs(*x) {
                    acc(&mut grads[*x], row_fill_backward(g, events));
                }
            }
        }
        Ok(())
    }

    fn conv_backward(
        &self,
        x: usize,
        w: usize,
        b: usize,
        g: &ArrayD<f64>,
        grads: &mut Vec<Option<ArrayD<f64>>>,
    ) -> Result<()> {
        let xs = self.nodes[x].value.shape();
        let ws = self.nodes[w].value.shape();
        let (bsz, cin, t) = (xs[0], xs[1], xs[2]);
        let (cout, _, k) = (ws[0], ws[1], ws[2]);
        let pad = (k - 1) / 2;
        // g2: (B*T, Cout) from g (B, Cout, T)
        let gstd = g.as_standard_layout();
        let gsl = gstd.as_slice().unwrap();
        let mut g2 = Array2::zeros((bsz * t, cout));
        {
            let gm = g2.as_slice_mut().unwrap();
            for bi in 0..bsz {
                for o in 0..cout {
                    let src = (bi * cout + o) * t;
                    for tau in 0..t {
                        gm[(bi * t + tau) * cout + o] = gsl[src + tau];
                    }
                }
            }
        }
        if self.nodes[b].requires_grad {
            let db = g2.sum_axis(Axis(0)).into_dyn();
            match &mut grads[b] {
                Some(a) => *a += &db,
                slot => *slot = Some(db),
            }
        }
        let wmat = self.nodes[w]
            .value
            .view()
            .into_shape_with_order((cout, cin * k))
            .expect("conv weight is standard layout");
        if self.nodes[w].requires_grad {
            let col = im2col(&self.nodes[x].value, k);
            let dw = g2
                .t()
                .dot(&col)
                .into_shape_with_order(IxDyn(&[cout, cin, k]))
                .unwrap();
            match &mut grads[w] {
                Some(a) => *a += &dw,
                slot => *slot = Some(dw),
            }
        }
        if self.nodes[x].requires_grad {
            let dcol = g2.dot(&wmat);
            let dsl = dcol.as_slice().unwrap();
            let mut dx = Array1::zeros(bsz * cin * t);
            {
                let dv = dx.as_slice_mut().unwrap();
                for bi in 0..bsz {
                    for tau in 0..t {
                        let row = (bi * t + tau) * cin * k;
                        for c in 0..cin {
                            for dk in 0..k {
                                let src = tau as isize + dk as isize - pad as isize;
                                if src >= 0 && (src as usize) < t {
                                    dv[(bi * cin + c) * t + src as usize] +=
                                        dsl[row + c * k + dk];
                                }
                            }
                        }
                    }
                }
            }
            let dx = dx.into_shape_with_order(IxDyn(&[bsz, cin, t])).unwrap();
            match &mut grads[x] {
                Some(a) => *a += &dx,
                slot => *slot = Some(dx),
            }
        }
        Ok(())
    }

    fn bn_backward(
        &self,
        x: usize,
        gamma: usize,
        beta: usize,
        saved: &BnSaved,
        g: &ArrayD<f64>,
        grads: &mut Vec<Option<ArrayD<f64>>>,
    ) -> Result<()> {
        let xs = self.nodes[x].value.shape();
        let (bsz, c, t) = (xs[0], xs[1], xs[2]);
        let n = (bsz * t) as f64;
        let gv = as1(&self.nodes[gamma].value, "batchnorm1d")?;
        let (mean, invstd, batch_mode) = match saved {
            BnSaved::Batch { mean, invstd } => (mean, invstd, true),
            BnSaved::Eval { mean, invstd } => (mean, invstd, false),
        };
        let xval = &self.nodes[x].value;
        let mut dgamma = Array1::<f64>::zeros(c);
        let mut dbeta = Array1::<f64>::zeros(c);
        let mut sum_dxhat = Array1::<f64>::zeros(c);
        let mut sum_dxhat_xhat = Array1::<f64>::zeros(c);
        for bi in 0..bsz {
            for ch in 0..c {
                for tau in 0..t {
                    let gi = g[[bi, ch, tau]];
                    let xhat = (xval[[bi, ch, tau]] - mean[ch]) * invstd[ch];
                    dgamma[ch] += gi * xhat;
                    dbeta[ch] += gi;
                    let dxhat = gi * gv[ch];
                    sum_dxhat[ch] += dxhat;
                    sum_dxhat_xhat[ch] += dxhat * xhat;
                }
            }
        }
        if self.nodes[gamma].requires_grad {
            let dg = dgamma.into_dyn();
            match &mut grads[gamma] {
                Some(a) => *a += &dg,
                slot => *slot = Some(dg),
            }
        }
        if self.nodes[beta].requires_grad {
            let db = dbeta.into_dyn();
            match &mut grads[beta] {
                Some(a) => *a += &db,
                slot => *slot = Some(db),
            }
        }
        if self.nodes[x].requires_grad {
            let mut dx = ArrayD::zeros(xval.raw_dim());
            for bi in 0..bsz {
                for ch in 0..c {
                    for tau in 0..t {
                        let gi = g[[bi, ch, tau]];
                        let dxhat = gi * gv[ch];
                        dx[[bi, ch, tau]] = if batch_mode {
                            let xhat = (xval[[bi, ch, tau]] - mean[ch]) * invstd[ch];
                            invstd[ch] / n
                                * (n * dxhat - sum_dxhat[ch] - xhat * sum_dxhat_xhat[ch])
                        } else {
                            dxhat * invstd[ch]
                        };
                    }
                }
            }
            match &mut grads[x] {
                Some(a) => *a += &dx,
                slot => *slot = Some(dx),
            }
        }
        Ok(())
    }
}

/// Unfolds x (B, Cin, T) into (B*T, Cin*K) with zero padding, so that the
/// convolution becomes a single matrix product.
pub(crate) fn im2col(x: &ArrayD<f64>, k: usize) -> Array2<f64> {
    let s = x.shape();
    let (bsz, cin, t) = (s[0], s[1], s[2]);
    let pad = (k - 1) / 2;
    let xstd = x.as_standard_layout();
    let xsl = xstd.as_slice().unwrap();
    let mut col = Array2::zeros((bsz * t, cin * k));
    let cm = col.as_slice_mut().unwrap();
    for bi in 0..bsz {
        for c in 0..cin {
            let base = (bi * cin + c) * t;
            for tau in 0..t {
                let row = (bi * t + tau) * cin * k + c * k;
                let lo = tau as isize - pad as isize;
                for dk in 0..k {
                    let src = lo + dk as isize;
                    if src >= 0 && (src as usize) < t {
                        cm[row + dk] = xsl[base + src as usize];
                    }
                }
            }
        }
    }
    col
}

/// Maximum relative error between analytic gradients of `f` at `x0` and
/// central finite differences with step `h`, using
/// `|analytic - fd| / max(1, |analytic|)` per coordinate.
pub fn grad_check<F>(f: F, x0: &ArrayD<f64>, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.leaf(x0.clone(), true)?;
    let loss = f(&mut tape, x)?;
    if tape.value(loss).len() != 1 {
        return Err(TapeError::NotScalar(tape.value(loss).shape().to_vec()));
    }
    let grads = tape.backward(loss)?;
    let analytic = grads.wrt(x, x0.shape());

    let eval = |arr: &ArrayD<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(arr.clone(), false)?;
        let l = f(&mut t, v)?;
        Ok(t.value(l).iter().next().copied().unwrap())
    };

    let mut worst = 0.0f64;
    let mut probe = x0.clone();
    let n = x0.len();
    for i in 0..n {
        let orig = probe.as_slice().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + h;
        let fp = eval(&probe)?;
        probe.as_slice_mut().unwrap()[i] = orig - h;
        let fm = eval(&probe)?;
        probe.as_slice_mut().unwrap()[i] = orig;
        let fd = (fp - fm) / (2.0 * h);
        let an = analytic.as_slice().unwrap()[i];
        let err = (an - fd).abs() / an.abs().max(1.0);
        if err > worst {
            worst = err;
        }
    }
    Ok(worst)
}
