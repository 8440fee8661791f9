use crate::numcore::{NumError, Tensor};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    Constant,
    MatMul(Var, Var),
    Conv2d { input: Var, kernel: Var, stride: usize, padding: usize },
    AddBias { x: Var, bias: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddScalar(Var),
    Relu(Var),
    GlobalAvgPool(Var),
    L2NormalizeRows { x: Var, eps: T },
    SoftmaxRows(Var),
    Transpose(Var),
    Reshape(Var),
    Sum(Var),
    Mean(Var),
    Log(Var),
    ClampMin { x: Var, min: T },
    Gather { x: Var, indices: Vec<usize> },
    Stack(Vec<Var>),
    ChannelCosine { a: Var, b: Var, eps: T },
    MaskMul { x: Var, mask: Vec<T> },
}

impl<T> Op<T> {
    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Constant => vec![],
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![*a, *b],
            Op::Conv2d { input, kernel, .. } => vec![*input, *kernel],
            Op::AddBias { x, bias } => vec![*x, *bias],
            Op::ChannelCosine { a, b, .. } => vec![*a, *b],
            Op::Scale(x, _)
            | Op::AddScalar(x)
            | Op::Relu(x)
            | Op::GlobalAvgPool(x)
            | Op::SoftmaxRows(x)
            | Op::Transpose(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Log(x) => vec![*x],
            Op::L2NormalizeRows { x, .. }
            | Op::ClampMin { x, .. }
            | Op::Gather { x, .. }
            | Op::MaskMul { x, .. } => vec![*x],
            Op::Stack(vs) => vs.clone(),
        }
    }
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run record of executed operations.
///
/// Nodes are appended in execution order, so every node's inputs precede it.
/// A tape is built fresh for each forward pass and is not shared across threads.
#[derive(Clone, Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient accumulated for `var`, or `None` when the node does not
    /// influence the loss.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    /// Gradient for `var`; zero-filled when the node is unreachable from the loss.
    pub fn wrt(&self, var: Var) -> Tensor<T> {
        self.get(var).cloned().unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [r, n] => (*r, *n),
        _ => {
            let n = *shape.last().unwrap();
            (shape.iter().product::<usize>() / n, n)
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Leaf => true,
            Op::Constant => false,
            other => other.inputs().iter().any(|i| self.nodes[i.0].requires_grad),
        };
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    /// Records a differentiable input (parameter or probe point).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a value that receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumError> {
        if self.shape(a) != self.shape(b) {
            return Err(NumError::ShapeMismatch {
                op,
                left: self.shape(a).to_vec(),
                right: self.shape(b).to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(NumError::ShapeMismatch { op: "matmul", left: sa.to_vec(), right: sb.to_vec() });
        }
        let (m, k, n) = (sa[0], sa[1], sb[1]);
        let out = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let value = Tensor::new(vec![m, n], out)?;
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    /// Cross-correlation of an `[h, w, c_in]` input with `[k, k, c_in, c_out]`
    /// kernels under zero padding.
    pub fn conv2d(&mut self, input: Var, kernel: Var, stride: usize, padding: usize) -> Result<Var, NumError> {
        let geom = ConvGeom::new(self.shape(input), self.shape(kernel), stride, padding)?;
        let out = geom.forward(self.value(input).data(), self.value(kernel).data());
        let value = Tensor::new(vec![geom.oh, geom.ow, geom.cout], out)?;
        Ok(self.push(value, Op::Conv2d { input, kernel, stride, padding }))
    }

    /// Adds `bias` (length = last dimension of `x`) to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, NumError> {
        let sx = self.shape(x);
        let sb = self.shape(bias);
        if sb.len() != 1 || sx.last() != Some(&sb[0]) {
            return Err(NumError::ShapeMismatch { op: "add_bias", left: sx.to_vec(), right: sb.to_vec() });
        }
        let n = sb[0];
        let b = self.value(bias).data();
        let data = self.value(x).data().iter().enumerate().map(|(i, &v)| v + b[i % n]).collect();
        let value = Tensor::new(sx.to_vec(), data)?;
        Ok(self.push(value, Op::AddBias { x, bias }))
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var, NumError> {
        self.same_shape(op_name, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor::new(self.shape(a).to_vec(), data)?;
        Ok(self.push(value, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let value = self.value(x).map(|v| v * factor);
        self.push(value, Op::Scale(x, factor))
    }

    pub fn add_scalar(&mut self, x: Var, offset: T) -> Var {
        let value = self.value(x).map(|v| v + offset);
        self.push(value, Op::AddScalar(x))
    }

    /// Elementwise `max(x, 0)`; the subgradient at 0 is 0.
    pub fn relu(&mut self, x: Var) -> Var {
        // NaN passes through so that faults surface in the loss.
        let value = self.value(x).map(|v| if v < T::zero() { T::zero() } else { v });
        self.push(value, Op::Relu(x))
    }

    /// Per-channel spatial mean of an `[h, w, c]` tensor.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var, NumError> {
        let s = self.shape(x);
        if s.len() != 3 {
            return Err(NumError::Rank { op: "global_avg_pool", expected: 3, shape: s.to_vec() });
        }
        let c = s[2];
        let hw = s[0] * s[1];
        let mut out = vec![T::zero(); c];
        for (i, &v) in self.value(x).data().iter().enumerate() {
            out[i % c] = out[i % c] + v;
        }
        let denom = T::from_usize_lossy(hw);
        out.iter_mut().for_each(|v| *v = *v / denom);
        let value = Tensor::new(vec![c], out)?;
        Ok(self.push(value, Op::GlobalAvgPool(x)))
    }

    /// Divides each row (the whole vector for rank 1) by `max(norm, eps)`.
    pub fn l2_normalize(&mut self, x: Var, eps: T) -> Var {
        let t = self.value(x);
        let (rows, cols) = rows_cols(t.shape());
        let mut data = t.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt().max(eps);
            row.iter_mut().for_each(|v| *v = *v / n);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::L2NormalizeRows { x, eps })
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let (rows, cols) = rows_cols(t.shape());
        let mut data = t.data().to_vec();
        for r in 0..rows {
            softmax_in_place(&mut data[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(t.shape().to_vec(), data).expect("shape preserved");
        self.push(value, Op::SoftmaxRows(x))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, NumError> {
        let s = self.shape(x);
        if s.len() != 2 {
            return Err(NumError::Rank { op: "transpose", expected: 2, shape: s.to_vec() });
        }
        let (r, c) = (s[0], s[1]);
        let value = Tensor::new(vec![c, r], transpose_raw(self.value(x).data(), r, c))?;
        Ok(self.push(value, Op::Transpose(x)))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, NumError> {
        let value = self.value(x).reshaped(shape)?;
        Ok(self.push(value, Op::Reshape(x)))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / T::from_usize_lossy(t.len()));
        self.push(value, Op::Mean(x))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.ln());
        self.push(value, Op::Log(x))
    }

    /// Elementwise `max(x, min)`; no gradient flows where the floor is active.
    pub fn clamp_min(&mut self, x: Var, min: T) -> Var {
        let value = self.value(x).map(|v| v.max(min));
        self.push(value, Op::ClampMin { x, min })
    }

    /// Picks elements by flat index into a vector of length `indices.len()`.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var, NumError> {
        let t = self.value(x);
        if indices.is_empty() {
            return Err(NumError::InvalidShape { shape: vec![0] });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= t.len()) {
            return Err(NumError::IndexOutOfRange { index: bad, len: t.len() });
        }
        let data = indices.iter().map(|&i| t.data()[i]).collect();
        let value = Tensor::new(vec![indices.len()], data)?;
        Ok(self.push(value, Op::Gather { x, indices: indices.to_vec() }))
    }

    /// Stacks equally shaped tensors along a new leading axis. Vector inputs
    /// of length `d` give a `[n, d]` matrix.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = parts.first().ok_or(NumError::InvalidShape { shape: vec![0] })?;
        let inner = self.shape(*first).to_vec();
        let mut data = Vec::with_capacity(parts.len() * self.value(*first).len());
        for &p in parts {
            if self.shape(p) != inner.as_slice() {
                return Err(NumError::ShapeMismatch { op: "stack", left: inner, right: self.shape(p).to_vec() });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let value = Tensor::new(shape, data)?;
        Ok(self.push(value, Op::Stack(parts.to_vec())))
    }

    /// Cosine similarity of each channel slice of two `[h, w, c]` tensors,
    /// giving a length-`c` vector. Norms are floored at `eps`.
    pub fn channel_cosine(&mut self, a: Var, b: Var, eps: T) -> Result<Var, NumError> {
        self.same_shape("channel_cosine", a, b)?;
        let s = self.shape(a);
        if s.len() != 3 {
            return Err(NumError::Rank { op: "channel_cosine", expected: 3, shape: s.to_vec() });
        }
        let c = s[2];
        let stats = channel_stats(self.value(a).data(), self.value(b).data(), c, eps);
        let data = stats.iter().map(|st| st.cos).collect();
        let value = Tensor::new(vec![c], data)?;
        Ok(self.push(value, Op::ChannelCosine { a, b, eps }))
    }

    /// Multiplies elementwise by a constant mask (used for dropout).
    pub fn mask_mul(&mut self, x: Var, mask: Vec<T>) -> Result<Var, NumError> {
        let t = self.value(x);
        if mask.len() != t.len() {
            return Err(NumError::ShapeMismatch { op: "mask_mul", left: t.shape().to_vec(), right: vec![mask.len()] });
        }
        let data = t.data().iter().zip(&mask).map(|(&v, &m)| v * m).collect();
        let value = Tensor::new(t.shape().to_vec(), data)?;
        Ok(self.push(value, Op::MaskMul { x, mask }))
    }

    /// Reverse-mode accumulation from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumError::NonScalarLoss { shape: lv.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), T::one()));
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect() })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) {
        if !self.wants(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, id: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let gd = g.data();
        let like = |v: Var, data: Vec<T>| Tensor::new(self.shape(v).to_vec(), data).expect("gradient shape");
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let bt = transpose_raw(self.value(*b).data(), k, n);
                    self.accumulate(grads, *a, like(*a, matmul_raw(gd, &bt, m, n, k)));
                }
                if self.wants(*b) {
                    let at = transpose_raw(self.value(*a).data(), m, k);
                    self.accumulate(grads, *b, like(*b, matmul_raw(&at, gd, k, m, n)));
                }
            }
            Op::Conv2d { input, kernel, stride, padding } => {
                let geom = ConvGeom::new(self.shape(*input), self.shape(*kernel), *stride, *padding)
                    .expect("validated in forward");
                let x = self.value(*input).data();
                let w = self.value(*kernel).data();
                if self.wants(*input) {
                    self.accumulate(grads, *input, like(*input, geom.grad_input(gd, w)));
                }
                if self.wants(*kernel) {
                    self.accumulate(grads, *kernel, like(*kernel, geom.grad_kernel(gd, x)));
                }
            }
            Op::AddBias { x, bias } => {
                self.accumulate(grads, *x, g.clone());
                if self.wants(*bias) {
                    let n = self.shape(*bias)[0];
                    let mut gb = vec![T::zero(); n];
                    for (i, &v) in gd.iter().enumerate() {
                        gb[i % n] = gb[i % n] + v;
                    }
                    self.accumulate(grads, *bias, like(*bias, gb));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                if self.wants(*a) {
                    self.accumulate(grads, *a, like(*a, gd.iter().zip(vb).map(|(&g, &y)| g * y).collect()));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, like(*b, gd.iter().zip(va).map(|(&g, &x)| g * x).collect()));
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * *f)),
            Op::AddScalar(x) => self.accumulate(grads, *x, g.clone()),
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                let data = gd.iter().zip(xv).map(|(&g, &v)| if v > T::zero() || v.is_nan() { g * v.signum() } else { T::zero() }).collect();
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::GlobalAvgPool(x) => {
                let s = self.shape(*x);
                let c = s[2];
                let denom = T::from_usize_lossy(s[0] * s[1]);
                let data = (0..s[0] * s[1] * c).map(|i| gd[i % c] / denom).collect();
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::L2NormalizeRows { x, eps } => {
                let xv = self.value(*x).data();
                let (rows, cols) = rows_cols(self.shape(*x));
                let mut data = vec![T::zero(); xv.len()];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let xr = &xv[span.clone()];
                    let yr = &out.data()[span.clone()];
                    let gr = &gd[span.clone()];
                    let norm = xr.iter().map(|&v| v * v).sum::<T>().sqrt();
                    let dst = &mut data[span];
                    if norm > *eps {
                        let yg: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                        for i in 0..cols {
                            dst[i] = (gr[i] - yr[i] * yg) / norm;
                        }
                    } else {
                        for i in 0..cols {
                            dst[i] = gr[i] / *eps;
                        }
                    }
                }
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::SoftmaxRows(x) => {
                let (rows, cols) = rows_cols(self.shape(*x));
                let mut data = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let span = r * cols..(r + 1) * cols;
                    let yr = &out.data()[span.clone()];
                    let gr = &gd[span.clone()];
                    let yg: T = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                    for (d, (&y, &g)) in data[span].iter_mut().zip(yr.iter().zip(gr)) {
                        *d = y * (g - yg);
                    }
                }
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::Transpose(x) => {
                let s = self.shape(*x);
                // g has shape [c, r]
                self.accumulate(grads, *x, like(*x, transpose_raw(gd, s[1], s[0])));
            }
            Op::Reshape(x) => self.accumulate(grads, *x, like(*x, gd.to_vec())),
            Op::Sum(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, like(*x, vec![gd[0]; n]));
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                self.accumulate(grads, *x, like(*x, vec![gd[0] / T::from_usize_lossy(n); n]));
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.accumulate(grads, *x, like(*x, gd.iter().zip(xv).map(|(&g, &v)| g / v).collect()));
            }
            Op::ClampMin { x, min } => {
                let xv = self.value(*x).data();
                let data = gd.iter().zip(xv).map(|(&g, &v)| if v > *min { g } else { T::zero() }).collect();
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::Gather { x, indices } => {
                let mut data = vec![T::zero(); self.value(*x).len()];
                for (&i, &g) in indices.iter().zip(gd) {
                    data[i] = data[i] + g;
                }
                self.accumulate(grads, *x, like(*x, data));
            }
            Op::Stack(parts) => {
                let chunk = gd.len() / parts.len();
                for (i, &p) in parts.iter().enumerate() {
                    self.accumulate(grads, p, like(p, gd[i * chunk..(i + 1) * chunk].to_vec()));
                }
            }
            Op::ChannelCosine { a, b, eps } => {
                let (va, vb) = (self.value(*a).data(), self.value(*b).data());
                let c = self.shape(*a)[2];
                let stats = channel_stats(va, vb, c, *eps);
                let mut ga = vec![T::zero(); va.len()];
                let mut gb = vec![T::zero(); vb.len()];
                for (i, (&x, &y)) in va.iter().zip(vb).enumerate() {
                    let st = &stats[i % c];
                    let gc = gd[i % c];
                    let inv = T::one() / (st.na * st.nb);
                    let mut da = y * inv;
                    let mut db = x * inv;
                    if st.raw_na > *eps {
                        da = da - st.cos * x / (st.raw_na * st.raw_na);
                    }
                    if st.raw_nb > *eps {
                        db = db - st.cos * y / (st.raw_nb * st.raw_nb);
                    }
                    ga[i] = gc * da;
                    gb[i] = gc * db;
                }
                if self.wants(*a) {
                    self.accumulate(grads, *a, like(*a, ga));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, like(*b, gb));
                }
            }
            Op::MaskMul { x, mask } => {
                self.accumulate(grads, *x, like(*x, gd.iter().zip(mask).map(|(&g, &m)| g * m).collect()));
            }
        }
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total = total + *v;
    }
    row.iter_mut().for_each(|v| *v = *v / total);
}

fn matmul_raw<T: Scalar>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

fn transpose_raw<T: Scalar>(x: &[T], rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

struct ChannelStat<T> {
    raw_na: T,
    raw_nb: T,
    na: T,
    nb: T,
    cos: T,
}

fn channel_stats<T: Scalar>(a: &[T], b: &[T], c: usize, eps: T) -> Vec<ChannelStat<T>> {
    let mut dot = vec![T::zero(); c];
    let mut aa = vec![T::zero(); c];
    let mut bb = vec![T::zero(); c];
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let p = i % c;
        dot[p] = dot[p] + x * y;
        aa[p] = aa[p] + x * x;
        bb[p] = bb[p] + y * y;
    }
    (0..c)
        .map(|p| {
            let (raw_na, raw_nb) = (aa[p].sqrt(), bb[p].sqrt());
            let (na, nb) = (raw_na.max(eps), raw_nb.max(eps));
            ChannelStat { raw_na, raw_nb, na, nb, cos: dot[p] / (na * nb) }
        })
        .collect()
}

/// Output geometry of a padded, strided convolution.
struct ConvGeom {
    h: usize,
    w: usize,
    cin: usize,
    k: usize,
    cout: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self, NumError> {
        if input.len() != 3 {
            return Err(NumError::Rank { op: "conv2d", expected: 3, shape: input.to_vec() });
        }
        if kernel.len() != 4 || kernel[0] != kernel[1] || kernel[2] != input[2] {
            return Err(NumError::ShapeMismatch { op: "conv2d", left: input.to_vec(), right: kernel.to_vec() });
        }
        if stride == 0 {
            return Err(NumError::InvalidStride);
        }
        let (h, w, cin) = (input[0], input[1], input[2]);
        let (k, cout) = (kernel[0], kernel[3]);
        if k > h + 2 * pad || k > w + 2 * pad {
            return Err(NumError::KernelTooLarge { kernel: k, height: h, width: w, padding: pad });
        }
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (w + 2 * pad - k) / stride + 1;
        Ok(Self { h, w, cin, k, cout, stride, pad, oh, ow })
    }

    /// Input coordinate for output position `o` and kernel tap `t`, if inside the image.
    #[inline]
    fn src(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + t).checked_sub(self.pad)?;
        (pos < limit).then_some(pos)
    }

    fn forward<T: Scalar>(&self, x: &[T], w: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.oh * self.ow * self.cout];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let obase = (oy * self.ow + ox) * self.cout;
                for ky in 0..self.k {
                    let Some(iy) = self.src(oy, ky, self.h) else { continue };
                    for kx in 0..self.k {
                        let Some(ix) = self.src(ox, kx, self.w) else { continue };
                        let ibase = (iy * self.w + ix) * self.cin;
                        let kbase = (ky * self.k + kx) * self.cin * self.cout;
                        for ci in 0..self.cin {
                            let xv = x[ibase + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let wrow = &w[kbase + ci * self.cout..kbase + (ci + 1) * self.cout];
                            for (o, &wv) in out[obase..obase + self.cout].iter_mut().zip(wrow) {
                                *o = *o + xv * wv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    fn grad_input<T: Scalar>(&self, g: &[T], w: &[T]) -> Vec<T> {
        let mut gx = vec![T::zero(); self.h * self.w * self.cin];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let grow = &g[(oy * self.ow + ox) * self.cout..(oy * self.ow + ox + 1) * self.cout];
                for ky in 0..self.k {
                    let Some(iy) = self.src(oy, ky, self.h) else { continue };
                    for kx in 0..self.k {
                        let Some(ix) = self.src(ox, kx, self.w) else { continue };
                        let ibase = (iy * self.w + ix) * self.cin;
                        let kbase = (ky * self.k + kx) * self.cin * self.cout;
                        for ci in 0..self.cin {
                            let wrow = &w[kbase + ci * self.cout..kbase + (ci + 1) * self.cout];
                            let s: T = grow.iter().zip(wrow).map(|(&a, &b)| a * b).sum();
                            gx[ibase + ci] = gx[ibase + ci] + s;
                        }
                    }
                }
            }
        }
        gx
    }

    fn grad_kernel<T: Scalar>(&self, g: &[T], x: &[T]) -> Vec<T> {
        let mut gw = vec![T::zero(); self.k * self.k * self.cin * self.cout];
        for oy in 0..self.oh {
            for ox in 0..self.ow {
                let grow = &g[(oy * self.ow + ox) * self.cout..(oy * self.ow + ox + 1) * self.cout];
                for ky in 0..self.k {
                    let Some(iy) = self.src(oy, ky, self.h) else { continue };
                    for kx in 0..self.k {
                        let Some(ix) = self.src(ox, kx, self.w) else { continue };
                        let ibase = (iy * self.w + ix) * self.cin;
                        let kbase = (ky * self.k + kx) * self.cin * self.cout;
                        for ci in 0..self.cin {
                            let xv = x[ibase + ci];
                            if xv == T::zero() {
                                continue;
                            }
                            let dst = &mut gw[kbase + ci * self.cout..kbase + (ci + 1) * self.cout];
                            for (d, &gv) in dst.iter_mut().zip(grow) {
                                *d = *d + xv * gv;
                            }
                        }
                    }
                }
            }
        }
        gw
    }
}
