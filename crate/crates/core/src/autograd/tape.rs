use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Gradient-reversal coefficient.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrlConfig {
    lambda: f64,
}

impl GrlConfig {
    pub fn new(lambda: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "gradient reversal coefficient must be finite and >= 0, got {lambda}"
            )));
        }
        Ok(GrlConfig { lambda })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }
}

/// Primitive operations with hand-written vector-Jacobian products.
#[derive(Clone, Debug, PartialEq)]
pub enum Primitive {
    MatMul,
    Add,
    Sub,
    Mul,
    Scale(f64),
    /// `[b × n] + [n]`, the bias broadcast over rows.
    AddRowBroadcast,
    Relu,
    Exp,
    Log,
    /// `max(x, floor)`; gradient is passed only where `x > floor`.
    ClampMin(f64),
    RowSoftmax,
    /// `[b × n] -> [b]`
    RowSum,
    /// Sum of every entry, `-> [1]`.
    Sum,
    /// Mean of every entry, `-> [1]`.
    Mean,
    /// Column-wise mean, `[b × n] -> [1 × n]`.
    MeanRows,
    ConcatRows,
    SliceRows {
        start: usize,
        end: usize,
    },
    /// Copies the listed rows (repeats allowed), scattering gradients back.
    GatherRows(Vec<usize>),
    SquaredNorm,
    Abs,
    Transpose,
    /// Identity forward, `-lambda * g` backward.
    Grl(f64),
    /// Training-mode batch normalisation over rows: inputs `x`, `gamma`, `beta`.
    BatchNorm {
        eps: f64,
    },
    /// Rescales every row to Euclidean norm `radius`.
    RowNormalize {
        radius: f64,
    },
}

impl Primitive {
    pub fn name(&self) -> &'static str {
        match self {
            Primitive::MatMul => "matmul",
            Primitive::Add => "add",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::Scale(_) => "scale",
            Primitive::AddRowBroadcast => "add_row_broadcast",
            Primitive::Relu => "relu",
            Primitive::Exp => "exp",
            Primitive::Log => "log",
            Primitive::ClampMin(_) => "clamp_min",
            Primitive::RowSoftmax => "row_softmax",
            Primitive::RowSum => "row_sum",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
            Primitive::MeanRows => "mean_rows",
            Primitive::ConcatRows => "concat_rows",
            Primitive::SliceRows { .. } => "slice_rows",
            Primitive::GatherRows(_) => "gather_rows",
            Primitive::SquaredNorm => "squared_norm",
            Primitive::Abs => "abs",
            Primitive::Transpose => "transpose",
            Primitive::Grl(_) => "grl",
            Primitive::BatchNorm { .. } => "batch_norm",
            Primitive::RowNormalize { .. } => "row_normalize",
        }
    }
}

struct Node {
    op: Option<(Primitive, Vec<Var>)>,
    value: Tensor,
    saved: Vec<Tensor>,
    requires_grad: bool,
}

/// Define-by-run reverse-mode tape. Build one per forward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient of `var`, or zeros of `shape` when `var` was not reached.
    pub fn get_or_zeros(&self, var: Var, shape: &[usize]) -> Tensor {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
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

    /// Records a differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node { op: None, value, saved: Vec::new(), requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Evaluates `kind` on `inputs` and records the node.
    pub fn eval(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let (value, saved) = self.forward(&kind, inputs)?;
        if !value.all_finite() {
            return Err(Error::NonFinite(format!("{} produced a non-finite value", kind.name())));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { op: Some((kind, inputs.to_vec())), value, saved, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn arity(kind: &Primitive, inputs: &[Var]) -> Result<()> {
        let expected = match kind {
            Primitive::MatMul | Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::AddRowBroadcast => {
                Some(2)
            }
            Primitive::BatchNorm { .. } => Some(3),
            Primitive::ConcatRows => None,
            _ => Some(1),
        };
        match expected {
            Some(n) if n != inputs.len() => {
                Err(Error::InvalidInput(format!("{} expects {n} inputs, got {}", kind.name(), inputs.len())))
            }
            None if inputs.is_empty() => {
                Err(Error::InvalidInput(format!("{} expects at least one input", kind.name())))
            }
            _ => Ok(()),
        }
    }

    fn forward(&self, kind: &Primitive, inputs: &[Var]) -> Result<(Tensor, Vec<Tensor>)> {
        Self::arity(kind, inputs)?;
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let name = kind.name();
        let out = match kind {
            Primitive::MatMul => {
                let (a, b) = (v(0), v(1));
                if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                    return Err(Error::shape(name, a.shape(), b.shape()));
                }
                Tensor::matmul_raw(a, b)
            }
            Primitive::Add | Primitive::Sub | Primitive::Mul => {
                let (a, b) = (v(0), v(1));
                if a.shape() != b.shape() {
                    return Err(Error::shape(name, a.shape(), b.shape()));
                }
                match kind {
                    Primitive::Add => a.zip_map(b, |x, y| x + y),
                    Primitive::Sub => a.zip_map(b, |x, y| x - y),
                    _ => a.zip_map(b, |x, y| x * y),
                }
            }
            Primitive::Scale(c) => v(0).map(|x| c * x),
            Primitive::AddRowBroadcast => {
                let (x, bias) = (v(0), v(1));
                check_matrix(name, x)?;
                if bias.numel() != x.cols() {
                    return Err(Error::shape(name, x.shape(), bias.shape()));
                }
                let n = x.cols();
                let mut out = x.clone();
                for (i, o) in out.data_mut().iter_mut().enumerate() {
                    *o += bias.data()[i % n];
                }
                out
            }
            Primitive::Relu => v(0).map(|x| x.max(0.0)),
            Primitive::Exp => v(0).map(f64::exp),
            Primitive::Log => {
                let x = v(0);
                if let Some(bad) = x.data().iter().find(|&&x| !(x > 0.0)) {
                    return Err(Error::Domain { op: name, detail: format!("logarithm of nonpositive value {bad}") });
                }
                x.map(f64::ln)
            }
            Primitive::ClampMin(floor) => v(0).map(|x| x.max(*floor)),
            Primitive::RowSoftmax => {
                let x = v(0);
                check_matrix(name, x)?;
                let n = x.cols();
                let mut out = x.clone();
                for row in out.data_mut().chunks_mut(n) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e - max).exp();
                        total += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= total;
                    }
                }
                out
            }
            Primitive::RowSum => {
                let x = v(0);
                check_matrix(name, x)?;
                let n = x.cols();
                Tensor::vector(x.data().chunks(n).map(|r| r.iter().sum()).collect())
            }
            Primitive::Sum => Tensor::scalar(v(0).data().iter().sum()),
            Primitive::Mean => {
                let x = v(0);
                Tensor::scalar(x.data().iter().sum::<f64>() / x.numel() as f64)
            }
            Primitive::MeanRows => {
                let x = v(0);
                check_matrix(name, x)?;
                let (b, n) = (x.rows(), x.cols());
                let mut out = vec![0.0; n];
                for row in x.data().chunks(n) {
                    for (o, e) in out.iter_mut().zip(row) {
                        *o += e;
                    }
                }
                for o in out.iter_mut() {
                    *o /= b as f64;
                }
                Tensor::matrix(1, n, out)?
            }
            Primitive::ConcatRows => {
                let first = v(0);
                check_matrix(name, first)?;
                let n = first.cols();
                let mut rows = 0;
                let mut data = Vec::new();
                for i in 0..inputs.len() {
                    let t = v(i);
                    if t.shape().len() != 2 || t.cols() != n {
                        return Err(Error::shape(name, first.shape(), t.shape()));
                    }
                    rows += t.rows();
                    data.extend_from_slice(t.data());
                }
                Tensor::matrix(rows, n, data)?
            }
            Primitive::SliceRows { start, end } => {
                let x = v(0);
                check_matrix(name, x)?;
                if start >= end || *end > x.rows() {
                    return Err(Error::shape(name, x.shape(), &[*start, *end]));
                }
                let n = x.cols();
                Tensor::matrix(end - start, n, x.data()[start * n..end * n].to_vec())?
            }
            Primitive::GatherRows(indices) => {
                let x = v(0);
                check_matrix(name, x)?;
                if indices.is_empty() || indices.iter().any(|&i| i >= x.rows()) {
                    return Err(Error::shape(name, x.shape(), &[indices.len()]));
                }
                x.select_rows(indices)
            }
            Primitive::SquaredNorm => Tensor::scalar(v(0).data().iter().map(|x| x * x).sum()),
            Primitive::Abs => v(0).map(f64::abs),
            Primitive::Transpose => {
                let x = v(0);
                check_matrix(name, x)?;
                x.transpose_raw()
            }
            Primitive::Grl(_) => v(0).clone(),
            Primitive::BatchNorm { eps } => {
                let (x, gamma, beta) = (v(0), v(1), v(2));
                check_matrix(name, x)?;
                let (b, n) = (x.rows(), x.cols());
                if gamma.numel() != n {
                    return Err(Error::shape(name, x.shape(), gamma.shape()));
                }
                if beta.numel() != n {
                    return Err(Error::shape(name, x.shape(), beta.shape()));
                }
                if b < 2 {
                    return Err(Error::Domain {
                        op: name,
                        detail: "training-mode batch norm needs at least 2 rows".into(),
                    });
                }
                let (mean, var) = column_moments(x);
                let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let mut xhat = x.clone();
                for row in xhat.data_mut().chunks_mut(n) {
                    for j in 0..n {
                        row[j] = (row[j] - mean[j]) * inv_std[j];
                    }
                }
                let mut out = xhat.clone();
                for row in out.data_mut().chunks_mut(n) {
                    for j in 0..n {
                        row[j] = gamma.data()[j] * row[j] + beta.data()[j];
                    }
                }
                return Ok((out, vec![xhat, Tensor::vector(inv_std)]));
            }
            Primitive::RowNormalize { radius } => {
                let x = v(0);
                check_matrix(name, x)?;
                if !(*radius > 0.0) {
                    return Err(Error::Domain { op: name, detail: format!("radius must be positive, got {radius}") });
                }
                let n = x.cols();
                let mut norms = Vec::with_capacity(x.rows());
                let mut out = x.clone();
                for (i, row) in out.data_mut().chunks_mut(n).enumerate() {
                    let norm = row.iter().map(|e| e * e).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(Error::ZeroNormRow { row: i });
                    }
                    for e in row.iter_mut() {
                        *e *= radius / norm;
                    }
                    norms.push(norm);
                }
                return Ok((out, vec![Tensor::vector(norms)]));
            }
        };
        Ok((out, Vec::new()))
    }

    /// Reverse sweep from a scalar `loss`, consuming the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients> {
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::filled(loss_value.shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some((kind, inputs)) = &node.op else {
                continue;
            };
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let contributions = self.vjp(kind, inputs, node, &g);
            grads[idx] = Some(g);
            for (input, contribution) in inputs.iter().zip(contributions) {
                let Some(c) = contribution else { continue };
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&c),
                    slot @ None => *slot = Some(c),
                }
            }
        }
        Ok(Gradients { grads })
    }

    fn vjp(&self, kind: &Primitive, inputs: &[Var], node: &Node, g: &Tensor) -> Vec<Option<Tensor>> {
        let v = |i: usize| &self.nodes[inputs[i].0].value;
        let y = &node.value;
        match kind {
            Primitive::MatMul => {
                let (a, b) = (v(0), v(1));
                vec![Some(Tensor::matmul_raw(g, &b.transpose_raw())), Some(Tensor::matmul_raw(&a.transpose_raw(), g))]
            }
            Primitive::Add => vec![Some(g.clone()), Some(g.clone())],
            Primitive::Sub => vec![Some(g.clone()), Some(g.map(|x| -x))],
            Primitive::Mul => vec![Some(g.zip_map(v(1), |g, b| g * b)), Some(g.zip_map(v(0), |g, a| g * a))],
            Primitive::Scale(c) => vec![Some(g.map(|x| c * x))],
            Primitive::AddRowBroadcast => {
                let bias = v(1);
                let n = bias.numel();
                let mut db = vec![0.0; n];
                for row in g.data().chunks(n) {
                    for (d, e) in db.iter_mut().zip(row) {
                        *d += e;
                    }
                }
                vec![Some(g.clone()), Some(Tensor::new(bias.shape().to_vec(), db).expect("bias shape"))]
            }
            Primitive::Relu => vec![Some(g.zip_map(v(0), |g, x| if x > 0.0 { g } else { 0.0 }))],
            Primitive::Exp => vec![Some(g.zip_map(y, |g, y| g * y))],
            Primitive::Log => vec![Some(g.zip_map(v(0), |g, x| g / x))],
            Primitive::ClampMin(floor) => {
                vec![Some(g.zip_map(v(0), |g, x| if x > *floor { g } else { 0.0 }))]
            }
            Primitive::RowSoftmax => {
                let n = y.cols();
                let mut dx = g.clone();
                for (drow, yrow) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)) {
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d = yv * (*d - dot);
                    }
                }
                vec![Some(dx)]
            }
            Primitive::RowSum => {
                let x = v(0);
                let n = x.cols();
                let mut dx = Tensor::zeros(x.shape());
                for (i, row) in dx.data_mut().chunks_mut(n).enumerate() {
                    row.fill(g.data()[i]);
                }
                vec![Some(dx)]
            }
            Primitive::Sum => vec![Some(Tensor::filled(v(0).shape(), g.item()))],
            Primitive::Mean => {
                let x = v(0);
                vec![Some(Tensor::filled(x.shape(), g.item() / x.numel() as f64))]
            }
            Primitive::MeanRows => {
                let x = v(0);
                let (b, n) = (x.rows(), x.cols());
                let mut dx = Tensor::zeros(x.shape());
                for row in dx.data_mut().chunks_mut(n) {
                    for (d, e) in row.iter_mut().zip(g.data()) {
                        *d = e / b as f64;
                    }
                }
                vec![Some(dx)]
            }
            Primitive::ConcatRows => {
                let n = g.cols();
                let mut offset = 0;
                (0..inputs.len())
                    .map(|i| {
                        let rows = v(i).rows();
                        let part = g.data()[offset * n..(offset + rows) * n].to_vec();
                        offset += rows;
                        Some(Tensor::matrix(rows, n, part).expect("concat slice"))
                    })
                    .collect()
            }
            Primitive::SliceRows { start, .. } => {
                let x = v(0);
                let n = x.cols();
                let mut dx = Tensor::zeros(x.shape());
                dx.data_mut()[start * n..start * n + g.numel()].copy_from_slice(g.data());
                vec![Some(dx)]
            }
            Primitive::GatherRows(indices) => {
                let x = v(0);
                let n = x.cols();
                let mut dx = Tensor::zeros(x.shape());
                for (k, &i) in indices.iter().enumerate() {
                    let src = &g.data()[k * n..(k + 1) * n];
                    for (d, s) in dx.data_mut()[i * n..(i + 1) * n].iter_mut().zip(src) {
                        *d += s;
                    }
                }
                vec![Some(dx)]
            }
            Primitive::SquaredNorm => {
                let s = g.item();
                vec![Some(v(0).map(|x| 2.0 * x * s))]
            }
            Primitive::Abs => vec![Some(g.zip_map(v(0), |g, x| {
                if x > 0.0 {
                    g
                } else if x < 0.0 {
                    -g
                } else {
                    0.0
                }
            }))],
            Primitive::Transpose => vec![Some(g.transpose_raw())],
            Primitive::Grl(lambda) => vec![Some(g.map(|x| -lambda * x))],
            Primitive::BatchNorm { .. } => {
                let gamma = v(1);
                let (xhat, inv_std) = (&node.saved[0], &node.saved[1]);
                let (b, n) = (xhat.rows(), xhat.cols());
                let mut dgamma = vec![0.0; n];
                let mut dbeta = vec![0.0; n];
                for (grow, xrow) in g.data().chunks(n).zip(xhat.data().chunks(n)) {
                    for j in 0..n {
                        dgamma[j] += grow[j] * xrow[j];
                        dbeta[j] += grow[j];
                    }
                }
                // dx = inv_std / b * (b * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let mut dx = Tensor::zeros(xhat.shape());
                let bf = b as f64;
                for ((drow, grow), xrow) in
                    dx.data_mut().chunks_mut(n).zip(g.data().chunks(n)).zip(xhat.data().chunks(n))
                {
                    for j in 0..n {
                        let gj = gamma.data()[j];
                        let dxhat = grow[j] * gj;
                        drow[j] = inv_std.data()[j] / bf * (bf * dxhat - dbeta[j] * gj - xrow[j] * dgamma[j] * gj);
                    }
                }
                vec![
                    Some(dx),
                    Some(Tensor::new(gamma.shape().to_vec(), dgamma).expect("gamma shape")),
                    Some(Tensor::new(v(2).shape().to_vec(), dbeta).expect("beta shape")),
                ]
            }
            Primitive::RowNormalize { radius } => {
                let norms = &node.saved[0];
                let n = y.cols();
                let mut dx = g.clone();
                for (i, (drow, yrow)) in dx.data_mut().chunks_mut(n).zip(y.data().chunks(n)).enumerate() {
                    // y = r * u with u = x / |x|; dx = r / |x| * (g - u (u . g))
                    let dot: f64 = drow.iter().zip(yrow).map(|(g, y)| g * y).sum::<f64>() / radius;
                    let scale = radius / norms.data()[i];
                    for (d, &yv) in drow.iter_mut().zip(yrow) {
                        *d = scale * (*d - yv / radius * dot);
                    }
                }
                vec![Some(dx)]
            }
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::Add, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.eval(Primitive::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.eval(Primitive::Scale(c), &[a])
    }

    pub fn add_row_broadcast(&mut self, x: Var, bias: Var) -> Result<Var> {
        self.eval(Primitive::AddRowBroadcast, &[x, bias])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Relu, &[x])
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Exp, &[x])
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Log, &[x])
    }

    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var> {
        self.eval(Primitive::ClampMin(floor), &[x])
    }

    pub fn row_softmax(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::RowSoftmax, &[x])
    }

    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::RowSum, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Sum, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Mean, &[x])
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::MeanRows, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.eval(Primitive::ConcatRows, parts)
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        self.eval(Primitive::SliceRows { start, end }, &[x])
    }

    pub fn gather_rows(&mut self, x: Var, indices: Vec<usize>) -> Result<Var> {
        self.eval(Primitive::GatherRows(indices), &[x])
    }

    pub fn squared_norm(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::SquaredNorm, &[x])
    }

    pub fn abs(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Abs, &[x])
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        self.eval(Primitive::Transpose, &[x])
    }

    pub fn grl(&mut self, x: Var, cfg: GrlConfig) -> Result<Var> {
        self.eval(Primitive::Grl(cfg.lambda()), &[x])
    }

    pub fn batch_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        self.eval(Primitive::BatchNorm { eps }, &[x, gamma, beta])
    }

    pub fn row_normalize(&mut self, x: Var, radius: f64) -> Result<Var> {
        self.eval(Primitive::RowNormalize { radius }, &[x])
    }
}

fn check_matrix(op: &'static str, x: &Tensor) -> Result<()> {
    if x.shape().len() != 2 {
        return Err(Error::shape(op, x.shape(), &[0, 0]));
    }
    Ok(())
}

/// Column means and biased variances of a matrix.
pub(crate) fn column_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let (b, n) = (x.rows(), x.cols());
    let mut mean = vec![0.0; n];
    for row in x.data().chunks(n) {
        for (m, e) in mean.iter_mut().zip(row) {
            *m += e;
        }
    }
    mean.iter_mut().for_each(|m| *m /= b as f64);
    let mut var = vec![0.0; n];
    for row in x.data().chunks(n) {
        for j in 0..n {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= b as f64);
    (mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn identity_matmul_returns_input() {
        let mut tape = Tape::new();
        let a = t(&[vec![1., 2.], vec![3., 4.], vec![5., 6.]]);
        let i = tape.constant(Tensor::identity(3));
        let av = tape.constant(a.clone());
        let out = tape.matmul(i, av).unwrap();
        assert_eq!(tape.value(out), &a);
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![-1., 0., 2.]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0., 0., 2.]);
    }

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![0., 0., 0.]]));
        let y = tape.row_softmax(x).unwrap();
        for &p in tape.value(y).data() {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn grl_is_identity_forward_and_reverses_backward() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let y = tape.grl(x, GrlConfig::new(1.0).unwrap()).unwrap();
        assert_eq!(tape.value(y).data(), &[1.0, -2.0]);
        // upstream g = [3, -1] through sum(g * y)
        let g = tape.constant(Tensor::vector(vec![3.0, -1.0]));
        let prod = tape.mul(y, g).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-3.0, 1.0]);
    }

    #[test]
    fn grl_with_zero_lambda_blocks_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -2.0]));
        let y = tape.grl(x, GrlConfig::new(0.0).unwrap()).unwrap();
        let g = tape.constant(Tensor::vector(vec![3.0, -1.0]));
        let prod = tape.mul(y, g).unwrap();
        let loss = tape.sum(prod).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn negative_lambda_rejected() {
        assert!(GrlConfig::new(-0.5).is_err());
        assert!(GrlConfig::new(f64::NAN).is_err());
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.3, -1.0, 2.0, 5.0]));
        let loss = tape.sum(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn squared_norm_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        let loss = tape.squared_norm(x).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn sum_of_grl_with_lambda_two() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![0.5, 1.5, -3.0]));
        let y = tape.grl(x, GrlConfig::new(2.0).unwrap()).unwrap();
        let loss = tape.sum(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[-2.0; 3]);
    }

    #[test]
    fn fan_out_accumulates() {
        // loss = sum(x * x) through two separate uses of x
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, -3.0]));
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[2.0, -6.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(tape.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn log_of_nonpositive_is_domain_error() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::vector(vec![1.0, 0.0]));
        assert!(matches!(tape.log(x), Err(Error::Domain { op: "log", .. })));
    }

    #[test]
    fn shape_mismatch_names_kind_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(Tensor::zeros(&[2, 3]));
        let b = tape.leaf(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = tape.leaf(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Tensor::vector(vec![1.0, 2.0]));
        let x = tape.leaf(Tensor::vector(vec![3.0, 4.0]));
        let p = tape.mul(c, x).unwrap();
        let loss = tape.sum(p).unwrap();
        let grads = tape.backward(loss).unwrap();
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_norm_row_is_reported() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[vec![1.0, 1.0], vec![0.0, 0.0]]));
        assert!(matches!(tape.row_normalize(x, 1.0), Err(Error::ZeroNormRow { row: 1 })));
    }
}
