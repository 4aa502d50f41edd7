use super::{TapeError, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

/// Recorded operation. Parents are stored by id; local gradient rules live in
/// `Tape::backward_op`.
#[derive(Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    /// x[.., n] + bias[n], bias broadcast over leading dims.
    AddBias(usize, usize),
    Scale(usize, f64),
    /// Elementwise product with a constant tensor of identical shape.
    MulConst(usize, Vec<f64>),
    /// x[.., n] * w[n]; the weight vector is a constant and receives no gradient.
    ScaleFeatures(usize, Vec<f64>),
    /// x[r, n] * w[r] row-wise; constant weights.
    ScaleRows(usize, Vec<f64>),
    Relu(usize),
    Sigmoid(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    /// a[.., m, k] @ b, where b is either [k, n] (shared across the batch) or
    /// [.., k, n] with the same leading dims as a.
    MatMul { a: usize, b: usize, batch: usize, m: usize, k: usize, n: usize, b_shared: bool },
    /// Swap the last two dims.
    TransposeLast(usize),
    /// [a, b, c, d] -> [a, c, b, d].
    SwapAxes12(usize),
    Reshape(usize),
    /// Row gather: out[i] = table[indices[i]].
    Lookup { table: usize, indices: Vec<usize> },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    /// Softmax over the last dim restricted to `mask`; fully masked rows
    /// produce all-zero rows.
    MaskedSoftmax { x: usize, mask: Vec<bool> },
    /// log(sum exp) over the unmasked entries of each row of the last dim.
    MaskedLogSumExp { x: usize, mask: Vec<bool> },
    SumAll(usize),
    MeanAll(usize),
    SumLast(usize),
    /// Mean over the entries selected by `mask` (scalar output).
    MaskedMean { x: usize, mask: Vec<bool>, count: usize },
    /// x[b, t, d], idx[b] -> out[b, d] = x[b, idx[b], :].
    SelectPositions { x: usize, idx: Vec<usize> },
    /// x[r, c], idx[r] -> out[r] = x[r, idx[r]].
    SelectLast { x: usize, idx: Vec<usize> },
    /// Stack along dim 0; shapes agree beyond dim 0.
    ConcatRows(usize, usize),
}

struct Node {
    data: Vec<f64>,
    shape: Vec<usize>,
    needs_grad: bool,
    op: Op,
}

/// Define-by-run reverse-mode tape. Rebuilt for every training step; node
/// order is the topological order, so backward is a single reverse sweep
/// visiting each node exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Vec<f64>>,
    ran_backward: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ln(1 + e^x) computed without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Copy a tensor onto the tape as a leaf node.
    pub fn leaf(&mut self, t: &Tensor) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), t.requires_grad, Op::Leaf)
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TapeError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TapeError::ShapeMismatch { op: "constant", lhs: shape, rhs: vec![data.len()] });
        }
        Ok(self.push(data, shape, false, Op::Leaf))
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.push(vec![value], vec![], false, Op::Leaf)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.id].data
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.id].shape
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.id].data[0]
    }

    /// Gradient buffer of `v`, available after `backward`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        if !self.ran_backward || !self.nodes[v.id].needs_grad {
            return None;
        }
        Some(&self.grads[v.id])
    }

    /// Store the gradient of `v` into the tensor it was created from.
    pub fn write_grad(&self, v: Var, t: &mut Tensor) {
        if let Some(g) = self.grad(v) {
            t.grad = Some(g.to_vec());
        }
    }

    fn push(&mut self, data: Vec<f64>, shape: Vec<usize>, needs_grad: bool, op: Op) -> Var {
        debug_assert!(data.iter().all(|v| v.is_finite()), "non-finite value stored on tape");
        let id = self.nodes.len();
        self.nodes.push(Node { data, shape, needs_grad, op });
        Var { id }
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes[id].needs_grad
    }

    fn check_same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TapeError> {
        if self.shape(a) != self.shape(b) {
            return Err(TapeError::ShapeMismatch {
                op,
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    // ── elementwise ────────────────────────────────────────────────────

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.check_same_shape("add", a, b)?;
        let data: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(data, shape, needs, Op::Add(a.id, b.id)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.check_same_shape("sub", a, b)?;
        let data: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x - y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(data, shape, needs, Op::Sub(a.id, b.id)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        self.check_same_shape("mul", a, b)?;
        let data: Vec<f64> =
            self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(data, shape, needs, Op::Mul(a.id, b.id)))
    }

    /// Broadcast a bias over the last dim: out[.., j] = x[.., j] + bias[j].
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "add_bias needs at least one dimension".into(),
        })?;
        if self.shape(bias) != [n] {
            return Err(TapeError::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let bias_data = self.value(bias).to_vec();
        let data: Vec<f64> =
            self.value(x).iter().enumerate().map(|(i, v)| v + bias_data[i % n]).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id) || self.needs(bias.id);
        Ok(self.push(data, shape, needs, Op::AddBias(x.id, bias.id)))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        self.push(data, shape, needs, Op::Scale(x.id, c))
    }

    /// Elementwise product with a constant buffer of identical shape.
    pub fn mul_const(&mut self, x: Var, weights: &[f64]) -> Result<Var, TapeError> {
        if weights.len() != self.value(x).len() {
            return Err(TapeError::ShapeMismatch {
                op: "mul_const",
                lhs: self.shape(x).to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let data: Vec<f64> = self.value(x).iter().zip(weights).map(|(v, w)| v * w).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(data, shape, needs, Op::MulConst(x.id, weights.to_vec())))
    }

    /// Multiply the last dim by a constant per-feature weight vector. The
    /// weights take no gradient; features scaled by zero receive zero gradient.
    pub fn scale_features(&mut self, x: Var, weights: &[f64]) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "scale_features needs at least one dimension".into(),
        })?;
        if weights.len() != n {
            return Err(TapeError::ShapeMismatch {
                op: "scale_features",
                lhs: self.shape(x).to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let data: Vec<f64> =
            self.value(x).iter().enumerate().map(|(i, v)| v * weights[i % n]).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(data, shape, needs, Op::ScaleFeatures(x.id, weights.to_vec())))
    }

    /// Multiply each row (all dims except the last) by a constant weight.
    pub fn scale_rows(&mut self, x: Var, weights: &[f64]) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "scale_rows needs at least one dimension".into(),
        })?;
        let rows = self.value(x).len() / n;
        if weights.len() != rows {
            return Err(TapeError::ShapeMismatch {
                op: "scale_rows",
                lhs: self.shape(x).to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let data: Vec<f64> =
            self.value(x).iter().enumerate().map(|(i, v)| v * weights[i / n]).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(data, shape, needs, Op::ScaleRows(x.id, weights.to_vec())))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v.max(0.0)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        self.push(data, shape, needs, Op::Relu(x.id))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        self.push(data, shape, needs, Op::Sigmoid(x.id))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|v| v.exp()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        self.push(data, shape, needs, Op::Exp(x.id))
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TapeError> {
        if let Some(bad) = self.value(x).iter().find(|v| **v <= 0.0) {
            return Err(TapeError::Domain { op: "log", msg: format!("log of non-positive value {bad}") });
        }
        let data: Vec<f64> = self.value(x).iter().map(|v| v.ln()).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(data, shape, needs, Op::Log(x.id)))
    }

    /// ln(1 + e^x), elementwise, overflow-safe.
    pub fn softplus(&mut self, x: Var) -> Var {
        let data: Vec<f64> = self.value(x).iter().map(|&v| softplus(v)).collect();
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        self.push(data, shape, needs, Op::Softplus(x.id))
    }

    // ── linear algebra ─────────────────────────────────────────────────

    /// Batched matrix product. `a` is [.., m, k]; `b` is either [k, n]
    /// (shared across the batch) or has the same leading dims as `a`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() < 2 || sb.len() < 2 {
            return Err(TapeError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (kb, n) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        let batch: usize = sa[..sa.len() - 2].iter().product();
        let b_shared = sb.len() == 2 && sa.len() > 2;
        let batch_ok = if sb.len() == 2 {
            sa.len() == 2 || b_shared
        } else {
            sb[..sb.len() - 2] == sa[..sa.len() - 2]
        };
        if k != kb || !batch_ok {
            return Err(TapeError::ShapeMismatch { op: "matmul", lhs: sa, rhs: sb });
        }

        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; batch * m * n];
        for p in 0..batch {
            let ab = &av[p * m * k..(p + 1) * m * k];
            let bb = if b_shared || sb.len() == 2 { bv } else { &bv[p * k * n..(p + 1) * k * n] };
            let ob = &mut out[p * m * n..(p + 1) * m * n];
            matmul_block(ab, bb, ob, m, k, n);
        }
        let mut shape = sa[..sa.len() - 2].to_vec();
        shape.push(m);
        shape.push(n);
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(out, shape, needs, Op::MatMul { a: a.id, b: b.id, batch, m, k, n, b_shared: b_shared || sb.len() == 2 }))
    }

    pub fn transpose_last(&mut self, x: Var) -> Result<Var, TapeError> {
        let s = self.shape(x).to_vec();
        if s.len() < 2 {
            return Err(TapeError::Contract { msg: "transpose_last needs rank >= 2".into() });
        }
        let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
        let batch: usize = s[..s.len() - 2].iter().product();
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for p in 0..batch {
            for i in 0..r {
                for j in 0..c {
                    out[p * r * c + j * r + i] = v[p * r * c + i * c + j];
                }
            }
        }
        let mut shape = s[..s.len() - 2].to_vec();
        shape.push(c);
        shape.push(r);
        let needs = self.needs(x.id);
        Ok(self.push(out, shape, needs, Op::TransposeLast(x.id)))
    }

    /// Permute a rank-4 tensor [a, b, c, d] -> [a, c, b, d].
    pub fn swap_axes_1_2(&mut self, x: Var) -> Result<Var, TapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 4 {
            return Err(TapeError::Contract { msg: format!("swap_axes_1_2 needs rank 4, got {s:?}") });
        }
        let (a, b, c, d) = (s[0], s[1], s[2], s[3]);
        let v = self.value(x);
        let mut out = vec![0.0; v.len()];
        for ia in 0..a {
            for ib in 0..b {
                for ic in 0..c {
                    let src = ((ia * b + ib) * c + ic) * d;
                    let dst = ((ia * c + ic) * b + ib) * d;
                    out[dst..dst + d].copy_from_slice(&v[src..src + d]);
                }
            }
        }
        let needs = self.needs(x.id);
        Ok(self.push(out, vec![a, c, b, d], needs, Op::SwapAxes12(x.id)))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var, TapeError> {
        let numel: usize = shape.iter().product();
        if numel != self.value(x).len() {
            return Err(TapeError::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape,
            });
        }
        let data = self.value(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(data, shape, needs, Op::Reshape(x.id)))
    }

    /// Gather rows of a [v, d] table; backward scatter-adds into the table.
    /// `out_prefix` is the index layout, so the output is [..out_prefix, d].
    pub fn lookup(&mut self, table: Var, indices: &[usize], out_prefix: &[usize]) -> Result<Var, TapeError> {
        let s = self.shape(table).to_vec();
        if s.len() != 2 {
            return Err(TapeError::Contract { msg: format!("lookup table must be rank 2, got {s:?}") });
        }
        let (v, d) = (s[0], s[1]);
        let count: usize = out_prefix.iter().product();
        if count != indices.len() {
            return Err(TapeError::ShapeMismatch {
                op: "lookup",
                lhs: out_prefix.to_vec(),
                rhs: vec![indices.len()],
            });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= v) {
            return Err(TapeError::IndexOutOfRange { index: bad, bound: v });
        }
        let tv = self.value(table);
        let mut out = vec![0.0; indices.len() * d];
        for (r, &ix) in indices.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&tv[ix * d..(ix + 1) * d]);
        }
        let mut shape = out_prefix.to_vec();
        shape.push(d);
        let needs = self.needs(table.id);
        Ok(self.push(out, shape, needs, Op::Lookup { table: table.id, indices: indices.to_vec() }))
    }

    /// Normalize the last dim to zero mean and unit variance, then apply the
    /// per-feature affine transform `gain * xhat + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "layer_norm needs at least one dimension".into(),
        })?;
        if self.shape(gain) != [n] || self.shape(bias) != [n] {
            return Err(TapeError::ShapeMismatch {
                op: "layer_norm",
                lhs: self.shape(x).to_vec(),
                rhs: self.shape(gain).to_vec(),
            });
        }
        if eps <= 0.0 {
            return Err(TapeError::Domain { op: "layer_norm", msg: format!("eps must be positive, got {eps}") });
        }
        let rows = self.value(x).len() / n;
        let xv = self.value(x);
        let gv = self.value(gain);
        let bv = self.value(bias);
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = &xv[r * n..(r + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            for j in 0..n {
                out[r * n + j] = gv[j] * ((row[j] - mean) * inv) + bv[j];
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id) || self.needs(gain.id) || self.needs(bias.id);
        Ok(self.push(out, shape, needs, Op::LayerNorm { x: x.id, gain: gain.id, bias: bias.id, eps }))
    }

    /// Softmax over the last dim with max-subtraction for stability.
    pub fn softmax_lastdim(&mut self, x: Var) -> Result<Var, TapeError> {
        let mask = vec![true; self.value(x).len()];
        self.masked_softmax_lastdim(x, &mask)
    }

    /// Softmax over the unmasked entries of each last-dim row. Masked entries
    /// are zero in the output and receive zero gradient; rows with no
    /// unmasked entry come out all-zero.
    pub fn masked_softmax_lastdim(&mut self, x: Var, mask: &[bool]) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "softmax needs at least one dimension".into(),
        })?;
        if mask.len() != self.value(x).len() {
            return Err(TapeError::ShapeMismatch {
                op: "masked_softmax",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let rows = self.value(x).len() / n;
        let xv = self.value(x);
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let lo = r * n;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if mask[lo + j] && xv[lo + j] > max {
                    max = xv[lo + j];
                }
            }
            if max == f64::NEG_INFINITY {
                continue; // fully masked row stays zero
            }
            let mut sum = 0.0;
            for j in 0..n {
                if mask[lo + j] {
                    let e = (xv[lo + j] - max).exp();
                    out[lo + j] = e;
                    sum += e;
                }
            }
            for j in 0..n {
                out[lo + j] /= sum;
            }
        }
        let shape = self.shape(x).to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(out, shape, needs, Op::MaskedSoftmax { x: x.id, mask: mask.to_vec() }))
    }

    /// Per-row log(sum(exp)) over unmasked entries of the last dim. Every row
    /// must keep at least one unmasked entry.
    pub fn masked_logsumexp_lastdim(&mut self, x: Var, mask: &[bool]) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "logsumexp needs at least one dimension".into(),
        })?;
        if mask.len() != self.value(x).len() {
            return Err(TapeError::ShapeMismatch {
                op: "masked_logsumexp",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let rows = self.value(x).len() / n;
        let xv = self.value(x);
        let mut out = vec![0.0; rows];
        for r in 0..rows {
            let lo = r * n;
            let mut max = f64::NEG_INFINITY;
            for j in 0..n {
                if mask[lo + j] && xv[lo + j] > max {
                    max = xv[lo + j];
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(TapeError::Contract { msg: format!("logsumexp row {r} is fully masked") });
            }
            let sum: f64 =
                (0..n).filter(|&j| mask[lo + j]).map(|j| (xv[lo + j] - max).exp()).sum();
            out[r] = max + sum.ln();
        }
        let shape = self.shape(x)[..self.shape(x).len() - 1].to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(out, shape, needs, Op::MaskedLogSumExp { x: x.id, mask: mask.to_vec() }))
    }

    // ── reductions & selection ─────────────────────────────────────────

    pub fn sum_all(&mut self, x: Var) -> Var {
        let s: f64 = self.value(x).iter().sum();
        let needs = self.needs(x.id);
        self.push(vec![s], vec![], needs, Op::SumAll(x.id))
    }

    pub fn mean_all(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s: f64 = v.iter().sum::<f64>() / v.len() as f64;
        let needs = self.needs(x.id);
        self.push(vec![s], vec![], needs, Op::MeanAll(x.id))
    }

    pub fn sum_lastdim(&mut self, x: Var) -> Result<Var, TapeError> {
        let n = *self.shape(x).last().ok_or(TapeError::Contract {
            msg: "sum_lastdim needs at least one dimension".into(),
        })?;
        let rows = self.value(x).len() / n;
        let xv = self.value(x);
        let out: Vec<f64> = (0..rows).map(|r| xv[r * n..(r + 1) * n].iter().sum()).collect();
        let shape = self.shape(x)[..self.shape(x).len() - 1].to_vec();
        let needs = self.needs(x.id);
        Ok(self.push(out, shape, needs, Op::SumLast(x.id)))
    }

    /// Mean over the entries where `mask` is true; errors when none are.
    pub fn masked_mean(&mut self, x: Var, mask: &[bool]) -> Result<Var, TapeError> {
        if mask.len() != self.value(x).len() {
            return Err(TapeError::ShapeMismatch {
                op: "masked_mean",
                lhs: self.shape(x).to_vec(),
                rhs: vec![mask.len()],
            });
        }
        let count = mask.iter().filter(|&&m| m).count();
        if count == 0 {
            return Err(TapeError::Contract { msg: "masked_mean over an empty selection".into() });
        }
        let s: f64 = self
            .value(x)
            .iter()
            .zip(mask)
            .filter_map(|(v, &m)| if m { Some(*v) } else { None })
            .sum();
        let needs = self.needs(x.id);
        Ok(self.push(vec![s / count as f64], vec![], needs, Op::MaskedMean { x: x.id, mask: mask.to_vec(), count }))
    }

    /// out[b, :] = x[b, idx[b], :] for x of shape [b, t, d].
    pub fn select_positions(&mut self, x: Var, idx: &[usize]) -> Result<Var, TapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 3 {
            return Err(TapeError::Contract { msg: format!("select_positions needs rank 3, got {s:?}") });
        }
        let (b, t, d) = (s[0], s[1], s[2]);
        if idx.len() != b {
            return Err(TapeError::ShapeMismatch { op: "select_positions", lhs: s, rhs: vec![idx.len()] });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t) {
            return Err(TapeError::IndexOutOfRange { index: bad, bound: t });
        }
        let xv = self.value(x);
        let mut out = vec![0.0; b * d];
        for (r, &i) in idx.iter().enumerate() {
            out[r * d..(r + 1) * d].copy_from_slice(&xv[(r * t + i) * d..(r * t + i + 1) * d]);
        }
        let needs = self.needs(x.id);
        Ok(self.push(out, vec![b, d], needs, Op::SelectPositions { x: x.id, idx: idx.to_vec() }))
    }

    /// out[r] = x[r, idx[r]] for x of shape [r, c].
    pub fn select_lastdim(&mut self, x: Var, idx: &[usize]) -> Result<Var, TapeError> {
        let s = self.shape(x).to_vec();
        if s.len() != 2 {
            return Err(TapeError::Contract { msg: format!("select_lastdim needs rank 2, got {s:?}") });
        }
        let (r, c) = (s[0], s[1]);
        if idx.len() != r {
            return Err(TapeError::ShapeMismatch { op: "select_lastdim", lhs: s, rhs: vec![idx.len()] });
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= c) {
            return Err(TapeError::IndexOutOfRange { index: bad, bound: c });
        }
        let xv = self.value(x);
        let out: Vec<f64> = idx.iter().enumerate().map(|(row, &i)| xv[row * c + i]).collect();
        let needs = self.needs(x.id);
        Ok(self.push(out, vec![r], needs, Op::SelectLast { x: x.id, idx: idx.to_vec() }))
    }

    /// Stack two tensors along dim 0.
    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var, TapeError> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(TapeError::ShapeMismatch { op: "concat_rows", lhs: sa, rhs: sb });
        }
        let mut data = self.value(a).to_vec();
        data.extend_from_slice(self.value(b));
        let mut shape = sa.clone();
        shape[0] += sb[0];
        let needs = self.needs(a.id) || self.needs(b.id);
        Ok(self.push(data, shape, needs, Op::ConcatRows(a.id, b.id)))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Populates gradients for every node
    /// on a path to a `requires_grad` leaf; the tape is finished afterwards
    /// (drop it and build a fresh one for the next step).
    pub fn backward(&mut self, loss: Var) -> Result<(), TapeError> {
        if self.nodes[loss.id].data.len() != 1 {
            return Err(TapeError::Contract {
                msg: format!("backward needs a scalar loss, got shape {:?}", self.nodes[loss.id].shape),
            });
        }
        if self.ran_backward {
            return Err(TapeError::Contract { msg: "backward already ran on this tape".into() });
        }
        self.grads = self.nodes.iter().map(|n| if n.needs_grad { vec![0.0; n.data.len()] } else { Vec::new() }).collect();
        if self.nodes[loss.id].needs_grad {
            self.grads[loss.id][0] = 1.0;
        }
        for id in (0..=loss.id).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            self.backward_op(id);
        }
        self.ran_backward = true;
        Ok(())
    }

    fn backward_op(&mut self, id: usize) {
        // Take the node's gradient buffer out to satisfy the borrow checker;
        // a node never parents itself.
        let g = std::mem::take(&mut self.grads[id]);
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |_, gi| gi, &g);
                self.accumulate(b, |_, gi| gi, &g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, |_, gi| gi, &g);
                self.accumulate(b, |_, gi| -gi, &g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let bv = &self.nodes[b].data;
                    for (i, gi) in g.iter().enumerate() {
                        self.grads[a][i] += gi * bv[i];
                    }
                }
                if self.needs(b) {
                    let av = &self.nodes[a].data;
                    for (i, gi) in g.iter().enumerate() {
                        self.grads[b][i] += gi * av[i];
                    }
                }
            }
            Op::AddBias(x, bias) => {
                let (x, bias) = (*x, *bias);
                let n = self.nodes[bias].data.len();
                self.accumulate(x, |_, gi| gi, &g);
                if self.needs(bias) {
                    for (i, gi) in g.iter().enumerate() {
                        self.grads[bias][i % n] += gi;
                    }
                }
            }
            Op::Scale(x, c) => {
                let (x, c) = (*x, *c);
                self.accumulate(x, |_, gi| gi * c, &g);
            }
            Op::MulConst(x, w) => {
                let x = *x;
                let w = w.clone();
                self.accumulate(x, |i, gi| gi * w[i], &g);
            }
            Op::ScaleFeatures(x, w) => {
                let x = *x;
                let w = w.clone();
                let n = w.len();
                self.accumulate(x, |i, gi| gi * w[i % n], &g);
            }
            Op::ScaleRows(x, w) => {
                let x = *x;
                let w = w.clone();
                let n = self.nodes[id].data.len() / w.len();
                self.accumulate(x, |i, gi| gi * w[i / n], &g);
            }
            Op::Relu(x) => {
                let x = *x;
                if self.needs(x) {
                    for (i, gi) in g.iter().enumerate() {
                        if self.nodes[x].data[i] > 0.0 {
                            self.grads[x][i] += gi;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let x = *x;
                let y = self.nodes[id].data.clone();
                self.accumulate(x, |i, gi| gi * y[i] * (1.0 - y[i]), &g);
            }
            Op::Exp(x) => {
                let x = *x;
                let y = self.nodes[id].data.clone();
                self.accumulate(x, |i, gi| gi * y[i], &g);
            }
            Op::Log(x) => {
                let x = *x;
                if self.needs(x) {
                    for (i, gi) in g.iter().enumerate() {
                        self.grads[x][i] += gi / self.nodes[x].data[i];
                    }
                }
            }
            Op::Softplus(x) => {
                let x = *x;
                if self.needs(x) {
                    for (i, gi) in g.iter().enumerate() {
                        self.grads[x][i] += gi * sigmoid(self.nodes[x].data[i]);
                    }
                }
            }
            Op::MatMul { a, b, batch, m, k, n, b_shared } => {
                let (a, b, batch, m, k, n, b_shared) = (*a, *b, *batch, *m, *k, *n, *b_shared);
                for p in 0..batch {
                    let gb = &g[p * m * n..(p + 1) * m * n];
                    if self.needs(a) {
                        let bv = if b_shared {
                            &self.nodes[b].data[..]
                        } else {
                            &self.nodes[b].data[p * k * n..(p + 1) * k * n]
                        };
                        // grad_a = g @ b^T
                        let ga = &mut self.grads[a][p * m * k..(p + 1) * m * k];
                        for i in 0..m {
                            let grow = &gb[i * n..(i + 1) * n];
                            let garow = &mut ga[i * k..(i + 1) * k];
                            for (j, &gij) in grow.iter().enumerate() {
                                if gij == 0.0 {
                                    continue;
                                }
                                for (q, gaq) in garow.iter_mut().enumerate() {
                                    *gaq += gij * bv[q * n + j];
                                }
                            }
                        }
                    }
                    if self.needs(b) {
                        let av = &self.nodes[a].data[p * m * k..(p + 1) * m * k];
                        let off = if b_shared { 0 } else { p * k * n };
                        // grad_b += a^T @ g
                        let gbuf = &mut self.grads[b][off..off + k * n];
                        for i in 0..m {
                            let arow = &av[i * k..(i + 1) * k];
                            let grow = &gb[i * n..(i + 1) * n];
                            for (q, &aiq) in arow.iter().enumerate() {
                                if aiq == 0.0 {
                                    continue;
                                }
                                let gr = &mut gbuf[q * n..(q + 1) * n];
                                for (o, &gij) in gr.iter_mut().zip(grow) {
                                    *o += aiq * gij;
                                }
                            }
                        }
                    }
                }
            }
            Op::TransposeLast(x) => {
                let x = *x;
                if self.needs(x) {
                    let s = &self.nodes[id].shape;
                    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                    let batch: usize = s[..s.len() - 2].iter().product();
                    for p in 0..batch {
                        for i in 0..r {
                            for j in 0..c {
                                self.grads[x][p * r * c + j * r + i] += g[p * r * c + i * c + j];
                            }
                        }
                    }
                }
            }
            Op::SwapAxes12(x) => {
                let x = *x;
                if self.needs(x) {
                    let s = &self.nodes[id].shape; // [a, c, b, d]
                    let (a_d, c_d, b_d, d_d) = (s[0], s[1], s[2], s[3]);
                    for ia in 0..a_d {
                        for ic in 0..c_d {
                            for ib in 0..b_d {
                                let src = ((ia * c_d + ic) * b_d + ib) * d_d;
                                let dst = ((ia * b_d + ib) * c_d + ic) * d_d;
                                for j in 0..d_d {
                                    self.grads[x][dst + j] += g[src + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::Reshape(x) => {
                let x = *x;
                self.accumulate(x, |_, gi| gi, &g);
            }
            Op::Lookup { table, indices } => {
                let table = *table;
                let indices = indices.clone();
                if self.needs(table) {
                    let d = self.nodes[table].shape[1];
                    for (r, &ix) in indices.iter().enumerate() {
                        for j in 0..d {
                            self.grads[table][ix * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let (x, gain, bias, eps) = (*x, *gain, *bias, *eps);
                let n = self.nodes[gain].data.len();
                let rows = self.nodes[x].data.len() / n;
                let xv = self.nodes[x].data.clone();
                let gv = self.nodes[gain].data.clone();
                for r in 0..rows {
                    let lo = r * n;
                    let row = &xv[lo..lo + n];
                    let mean = row.iter().sum::<f64>() / n as f64;
                    let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                    let inv = 1.0 / (var + eps).sqrt();
                    // xhat_j = (x_j - mean) * inv
                    if self.needs(gain) {
                        for j in 0..n {
                            self.grads[gain][j] += g[lo + j] * (row[j] - mean) * inv;
                        }
                    }
                    if self.needs(bias) {
                        for j in 0..n {
                            self.grads[bias][j] += g[lo + j];
                        }
                    }
                    if self.needs(x) {
                        let mut sum_gh = 0.0;
                        let mut sum_gh_xhat = 0.0;
                        for j in 0..n {
                            let gh = g[lo + j] * gv[j];
                            let xhat = (row[j] - mean) * inv;
                            sum_gh += gh;
                            sum_gh_xhat += gh * xhat;
                        }
                        for j in 0..n {
                            let gh = g[lo + j] * gv[j];
                            let xhat = (row[j] - mean) * inv;
                            self.grads[x][lo + j] +=
                                inv * (gh - (sum_gh + xhat * sum_gh_xhat) / n as f64);
                        }
                    }
                }
            }
            Op::MaskedSoftmax { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                if self.needs(x) {
                    let n = *self.nodes[id].shape.last().unwrap();
                    let rows = self.nodes[id].data.len() / n;
                    let y = self.nodes[id].data.clone();
                    for r in 0..rows {
                        let lo = r * n;
                        let dot: f64 = (0..n).map(|j| g[lo + j] * y[lo + j]).sum();
                        for j in 0..n {
                            if mask[lo + j] {
                                self.grads[x][lo + j] += y[lo + j] * (g[lo + j] - dot);
                            }
                        }
                    }
                }
            }
            Op::MaskedLogSumExp { x, mask } => {
                let x = *x;
                let mask = mask.clone();
                if self.needs(x) {
                    let n = *self.nodes[x].shape.last().unwrap();
                    let rows = self.nodes[x].data.len() / n;
                    let xv = self.nodes[x].data.clone();
                    let lse = self.nodes[id].data.clone();
                    for r in 0..rows {
                        let lo = r * n;
                        for j in 0..n {
                            if mask[lo + j] {
                                self.grads[x][lo + j] += g[r] * (xv[lo + j] - lse[r]).exp();
                            }
                        }
                    }
                }
            }
            Op::SumAll(x) => {
                let x = *x;
                if self.needs(x) {
                    let gi = g[0];
                    for v in self.grads[x].iter_mut() {
                        *v += gi;
                    }
                }
            }
            Op::MeanAll(x) => {
                let x = *x;
                if self.needs(x) {
                    let gi = g[0] / self.nodes[x].data.len() as f64;
                    for v in self.grads[x].iter_mut() {
                        *v += gi;
                    }
                }
            }
            Op::SumLast(x) => {
                let x = *x;
                if self.needs(x) {
                    let n = self.nodes[x].data.len() / g.len();
                    for (r, gr) in g.iter().enumerate() {
                        for j in 0..n {
                            self.grads[x][r * n + j] += gr;
                        }
                    }
                }
            }
            Op::MaskedMean { x, mask, count } => {
                let (x, count) = (*x, *count);
                let mask = mask.clone();
                if self.needs(x) {
                    let c = g[0] / count as f64;
                    for (i, &m) in mask.iter().enumerate() {
                        if m {
                            self.grads[x][i] += c;
                        }
                    }
                }
            }
            Op::SelectPositions { x, idx } => {
                let x = *x;
                let idx = idx.clone();
                if self.needs(x) {
                    let t = self.nodes[x].shape[1];
                    let d = self.nodes[x].shape[2];
                    for (r, &i) in idx.iter().enumerate() {
                        for j in 0..d {
                            self.grads[x][(r * t + i) * d + j] += g[r * d + j];
                        }
                    }
                }
            }
            Op::SelectLast { x, idx } => {
                let x = *x;
                let idx = idx.clone();
                if self.needs(x) {
                    let c = self.nodes[x].shape[1];
                    for (r, &i) in idx.iter().enumerate() {
                        self.grads[x][r * c + i] += g[r];
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a].data.len();
                if self.needs(a) {
                    for i in 0..na {
                        self.grads[a][i] += g[i];
                    }
                }
                if self.needs(b) {
                    for i in 0..self.nodes[b].data.len() {
                        self.grads[b][i] += g[na + i];
                    }
                }
            }
        }
        self.grads[id] = g;
    }

    /// Add `f(i, g[i])` into the parent's gradient buffer elementwise. For ops
    /// whose upstream gradient is ignored (broadcast fills), `g` carries the
    /// fill values directly.
    fn accumulate<F: Fn(usize, f64) -> f64>(&mut self, parent: usize, f: F, g: &[f64]) {
        if !self.needs(parent) {
            return;
        }
        for (i, gi) in g.iter().enumerate() {
            self.grads[parent][i] += f(i, *gi);
        }
    }
}

fn matmul_block(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (q, &aiq) in arow.iter().enumerate() {
            if aiq == 0.0 {
                continue;
            }
            let brow = &b[q * n..(q + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aiq * bv;
            }
        }
    }
}
