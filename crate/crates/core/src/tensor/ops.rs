use super::gemm::{gemm, View};
use super::{split_axis, Result, Tensor, TensorError};

pub(crate) enum Op {
    MatMul,
    Linear,
    Softmax { axis: usize },
    InstanceNorm { inv_std: Vec<f64> },
    Relu,
    Tanh,
    Exp,
    Sqrt,
    Recip,
    Add,
    Sub,
    Mul,
    Scale,
    MulScalar(f64),
    AddScalar,
    Sum,
    SumAxis { axis: usize },
    MaxLast { argmax: Vec<usize> },
    Tile { n: usize },
    Gather { indices: Vec<usize> },
    Transpose,
    Reshape,
}

fn shape_err(op: &'static str, a: &Tensor, b: &Tensor) -> TensorError {
    TensorError::Shape { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(shape_err(op, a, b));
    }
    Ok(())
}

fn rank3(op: &'static str, t: &Tensor) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [b, c, n] => Ok((b, c, n)),
        _ => Err(TensorError::Invalid { op, reason: format!("expected a rank-3 tensor, got shape {:?}", t.shape()) }),
    }
}

impl Tensor {
    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Tensor {
        let data = self.values().iter().map(|&v| f(v)).collect();
        Tensor::from_op(data, self.shape().to_vec(), vec![self.clone()], op)
    }

    fn zip(&self, other: &Tensor, op_name: &'static str, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        same_shape(op_name, self, other)?;
        let data = self.values().iter().zip(other.values()).map(|(&a, &b)| f(a, b)).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), other.clone()], op))
    }

    /// Batched product `[B,P,Q] x [B,Q,R] -> [B,P,R]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (b, p, q) = rank3("matmul", self)?;
        let (b2, q2, r) = rank3("matmul", other)?;
        if b != b2 || q != q2 {
            return Err(shape_err("matmul", self, other));
        }
        let mut out = vec![0.0; b * p * r];
        for i in 0..b {
            let a = View::row_major(&self.values()[i * p * q..(i + 1) * p * q], p, q);
            let bm = View::row_major(&other.values()[i * q * r..(i + 1) * q * r], q, r);
            gemm(a, bm, 0.0, &mut out[i * p * r..(i + 1) * p * r]);
        }
        Ok(Tensor::from_op(out, vec![b, p, r], vec![self.clone(), other.clone()], Op::MatMul))
    }

    /// Kernel-1 convolution: `out[b,o,n] = sum_i w[o,i] x[b,i,n] + bias[o]`.
    pub fn pointwise_linear(&self, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
        let (b, cin, n) = rank3("pointwise_linear", self)?;
        let [cout, wcin] = *weight.shape() else {
            return Err(shape_err("pointwise_linear", self, weight));
        };
        if wcin != cin {
            return Err(shape_err("pointwise_linear", self, weight));
        }
        if bias.shape() != [cout] {
            return Err(shape_err("pointwise_linear", weight, bias));
        }
        let mut out = vec![0.0; b * cout * n];
        let w = View::row_major(weight.values(), cout, cin);
        for i in 0..b {
            let block = &mut out[i * cout * n..(i + 1) * cout * n];
            for (o, row) in block.chunks_exact_mut(n.max(1)).enumerate().take(cout) {
                row.fill(bias.values()[o]);
            }
            let x = View::row_major(&self.values()[i * cin * n..(i + 1) * cin * n], cin, n);
            gemm(w, x, 1.0, block);
        }
        Ok(Tensor::from_op(out, vec![b, cout, n], vec![self.clone(), weight.clone(), bias.clone()], Op::Linear))
    }

    /// Max-stabilised softmax along `axis`.
    pub fn softmax(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::Axis { axis, rank: self.rank() });
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.values();
        let mut out = vec![0.0; x.len()];
        for o in 0..outer {
            for j in 0..inner {
                let base = o * len * inner + j;
                let idx = |k: usize| base + k * inner;
                let max = (0..len).map(|k| x[idx(k)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for k in 0..len {
                    let e = (x[idx(k)] - max).exp();
                    out[idx(k)] = e;
                    total += e;
                }
                for k in 0..len {
                    out[idx(k)] /= total;
                }
            }
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], Op::Softmax { axis }))
    }

    /// Per-(batch, channel) normalisation over the vertex axis, no affine.
    pub fn instance_norm(&self, eps: f64) -> Result<Tensor> {
        let (b, c, n) = rank3("instance_norm", self)?;
        if n < 2 {
            return Err(TensorError::Degenerate {
                op: "instance_norm",
                reason: format!("need at least 2 vertices per slice, got {n}"),
            });
        }
        let x = self.values();
        let mut out = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(b * c);
        for (s, (xs, ys)) in x.chunks_exact(n).zip(out.chunks_exact_mut(n)).enumerate() {
            let mean = xs.iter().sum::<f64>() / n as f64;
            let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            if var + eps <= 0.0 {
                return Err(TensorError::Degenerate {
                    op: "instance_norm",
                    reason: format!("slice {s} has zero variance and eps is 0"),
                });
            }
            let inv = 1.0 / (var + eps).sqrt();
            for (y, v) in ys.iter_mut().zip(xs) {
                *y = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        Ok(Tensor::from_op(out, self.shape().to_vec(), vec![self.clone()], Op::InstanceNorm { inv_std }))
    }

    pub fn relu(&self) -> Tensor {
        self.map(Op::Relu, |v| v.max(0.0))
    }

    pub fn tanh(&self) -> Tensor {
        self.map(Op::Tanh, f64::tanh)
    }

    pub fn exp(&self) -> Tensor {
        self.map(Op::Exp, f64::exp)
    }

    pub fn sqrt(&self) -> Tensor {
        self.map(Op::Sqrt, f64::sqrt)
    }

    pub fn recip(&self) -> Tensor {
        self.map(Op::Recip, |v| 1.0 / v)
    }

    pub fn mul_scalar(&self, c: f64) -> Tensor {
        self.map(Op::MulScalar(c), |v| v * c)
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.map(Op::AddScalar, |v| v + c)
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "add", Op::Add, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "sub", Op::Sub, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip(other, "mul", Op::Mul, |a, b| a * b)
    }

    /// Multiplication by a learnable single-element tensor.
    pub fn scale(&self, gamma: &Tensor) -> Result<Tensor> {
        if gamma.numel() != 1 {
            return Err(shape_err("scale", self, gamma));
        }
        let g = gamma.values()[0];
        let data = self.values().iter().map(|v| v * g).collect();
        Ok(Tensor::from_op(data, self.shape().to_vec(), vec![self.clone(), gamma.clone()], Op::Scale))
    }

    pub fn sum(&self) -> Tensor {
        let total = self.values().iter().sum();
        Tensor::from_op(vec![total], Vec::new(), vec![self.clone()], Op::Sum)
    }

    /// Sum along `axis`, keeping it with extent 1.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(TensorError::Axis { axis, rank: self.rank() });
        }
        let (outer, len, inner) = split_axis(self.shape(), axis);
        let x = self.values();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..len {
                let src = &x[(o * len + k) * inner..(o * len + k + 1) * inner];
                for (d, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = 1;
        Ok(Tensor::from_op(out, shape, vec![self.clone()], Op::SumAxis { axis }))
    }

    /// `[B,C,N] -> [B,C,1]`; ties resolve to the first maximum.
    pub fn max_over_axis(&self) -> Result<Tensor> {
        let (b, c, n) = rank3("max_over_axis", self)?;
        if n == 0 {
            return Err(TensorError::Degenerate { op: "max_over_axis", reason: "empty vertex axis".into() });
        }
        let mut out = Vec::with_capacity(b * c);
        let mut argmax = Vec::with_capacity(b * c);
        for xs in self.values().chunks_exact(n) {
            let mut best = 0;
            for (i, &v) in xs.iter().enumerate().skip(1) {
                if v > xs[best] {
                    best = i;
                }
            }
            out.push(xs[best]);
            argmax.push(best);
        }
        Ok(Tensor::from_op(out, vec![b, c, 1], vec![self.clone()], Op::MaxLast { argmax }))
    }

    /// `[B,C,1] -> [B,C,n]` by repetition.
    pub fn tile(&self, n: usize) -> Result<Tensor> {
        let (b, c, one) = rank3("tile", self)?;
        if one != 1 {
            return Err(TensorError::Invalid { op: "tile", reason: format!("last extent must be 1, got {one}") });
        }
        if n < 1 {
            return Err(TensorError::Invalid { op: "tile", reason: "repeat count must be at least 1".into() });
        }
        let mut out = Vec::with_capacity(b * c * n);
        for &v in self.values() {
            out.extend(std::iter::repeat_n(v, n));
        }
        Ok(Tensor::from_op(out, vec![b, c, n], vec![self.clone()], Op::Tile { n }))
    }

    /// Selects positions along the last axis: `[B,C,N] -> [B,C,len(indices)]`.
    pub fn gather(&self, indices: &[usize]) -> Result<Tensor> {
        let (b, c, n) = rank3("gather", self)?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(TensorError::Invalid { op: "gather", reason: format!("index {bad} out of range for {n}") });
        }
        let m = indices.len();
        let mut out = Vec::with_capacity(b * c * m);
        for xs in self.values().chunks_exact(n.max(1)).take(b * c) {
            out.extend(indices.iter().map(|&i| xs[i]));
        }
        Ok(Tensor::from_op(out, vec![b, c, m], vec![self.clone()], Op::Gather { indices: indices.to_vec() }))
    }

    /// Swaps the last two axes of a rank-3 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        let (b, p, q) = rank3("transpose", self)?;
        let out = transpose_blocks(self.values(), b, p, q);
        Ok(Tensor::from_op(out, vec![b, q, p], vec![self.clone()], Op::Transpose))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(TensorError::Shape { op: "reshape", lhs: self.shape().to_vec(), rhs: shape.to_vec() });
        }
        Ok(Tensor::from_op(self.values().to_vec(), shape.to_vec(), vec![self.clone()], Op::Reshape))
    }
}

fn transpose_blocks(x: &[f64], b: usize, p: usize, q: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 0..b {
        let src = &x[i * p * q..(i + 1) * p * q];
        let dst = &mut out[i * p * q..(i + 1) * p * q];
        for r in 0..p {
            for c in 0..q {
                dst[c * p + r] = src[r * q + c];
            }
        }
    }
    out
}

impl Op {
    /// Gradients for each input given the upstream gradient `g` of `out`.
    /// Entries are `None` for inputs that do not require gradients.
    pub(crate) fn backward(&self, inputs: &[Tensor], out: &Tensor, g: &[f64]) -> Vec<Option<Vec<f64>>> {
        let wants = |i: usize| inputs[i].requires_grad();
        let y = out.values();
        match self {
            Op::MatMul => {
                let (a, b) = (&inputs[0], &inputs[1]);
                let [bt, p, q] = *a.shape() else { unreachable!() };
                let r = b.shape()[2];
                let da = wants(0).then(|| {
                    let mut da = vec![0.0; bt * p * q];
                    for i in 0..bt {
                        let gv = View::row_major(&g[i * p * r..(i + 1) * p * r], p, r);
                        let bv = View::row_major(&b.values()[i * q * r..(i + 1) * q * r], q, r);
                        gemm(gv, bv.t(), 0.0, &mut da[i * p * q..(i + 1) * p * q]);
                    }
                    da
                });
                let db = wants(1).then(|| {
                    let mut db = vec![0.0; bt * q * r];
                    for i in 0..bt {
                        let av = View::row_major(&a.values()[i * p * q..(i + 1) * p * q], p, q);
                        let gv = View::row_major(&g[i * p * r..(i + 1) * p * r], p, r);
                        gemm(av.t(), gv, 0.0, &mut db[i * q * r..(i + 1) * q * r]);
                    }
                    db
                });
                vec![da, db]
            }
            Op::Linear => {
                let (x, w) = (&inputs[0], &inputs[1]);
                let [b, cin, n] = *x.shape() else { unreachable!() };
                let cout = w.shape()[0];
                let wv = View::row_major(w.values(), cout, cin);
                let dx = wants(0).then(|| {
                    let mut dx = vec![0.0; b * cin * n];
                    for i in 0..b {
                        let gv = View::row_major(&g[i * cout * n..(i + 1) * cout * n], cout, n);
                        gemm(wv.t(), gv, 0.0, &mut dx[i * cin * n..(i + 1) * cin * n]);
                    }
                    dx
                });
                let dw = wants(1).then(|| {
                    let mut dw = vec![0.0; cout * cin];
                    for i in 0..b {
                        let gv = View::row_major(&g[i * cout * n..(i + 1) * cout * n], cout, n);
                        let xv = View::row_major(&x.values()[i * cin * n..(i + 1) * cin * n], cin, n);
                        gemm(gv, xv.t(), 1.0, &mut dw);
                    }
                    dw
                });
                let dbias = wants(2).then(|| {
                    let mut db = vec![0.0; cout];
                    for i in 0..b {
                        for (o, row) in g[i * cout * n..(i + 1) * cout * n].chunks_exact(n.max(1)).enumerate() {
                            db[o] += row.iter().sum::<f64>();
                        }
                    }
                    db
                });
                vec![dx, dw, dbias]
            }
            Op::Softmax { axis } => {
                let (outer, len, inner) = split_axis(out.shape(), *axis);
                let mut dx = vec![0.0; g.len()];
                for o in 0..outer {
                    for j in 0..inner {
                        let base = o * len * inner + j;
                        let dot: f64 = (0..len).map(|k| g[base + k * inner] * y[base + k * inner]).sum();
                        for k in 0..len {
                            let i = base + k * inner;
                            dx[i] = y[i] * (g[i] - dot);
                        }
                    }
                }
                vec![Some(dx)]
            }
            Op::InstanceNorm { inv_std } => {
                let n = *out.shape().last().unwrap();
                let mut dx = vec![0.0; g.len()];
                for (s, ((gs, ys), ds)) in
                    g.chunks_exact(n).zip(y.chunks_exact(n)).zip(dx.chunks_exact_mut(n)).enumerate()
                {
                    let mean_g = gs.iter().sum::<f64>() / n as f64;
                    let mean_gy = gs.iter().zip(ys).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for ((d, &gv), &yv) in ds.iter_mut().zip(gs).zip(ys) {
                        *d = inv_std[s] * (gv - mean_g - yv * mean_gy);
                    }
                }
                vec![Some(dx)]
            }
            Op::Relu => {
                let x = inputs[0].values();
                vec![Some(g.iter().zip(x).map(|(g, &x)| if x > 0.0 { *g } else { 0.0 }).collect())]
            }
            Op::Tanh => vec![Some(g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect())],
            Op::Exp => vec![Some(g.iter().zip(y).map(|(g, y)| g * y).collect())],
            Op::Sqrt => vec![Some(g.iter().zip(y).map(|(g, &y)| if y > 0.0 { g / (2.0 * y) } else { 0.0 }).collect())],
            Op::Recip => vec![Some(g.iter().zip(y).map(|(g, y)| -g * y * y).collect())],
            Op::Add => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.to_vec())],
            Op::Sub => vec![wants(0).then(|| g.to_vec()), wants(1).then(|| g.iter().map(|v| -v).collect())],
            Op::Mul => {
                let (a, b) = (inputs[0].values(), inputs[1].values());
                vec![
                    wants(0).then(|| g.iter().zip(b).map(|(g, b)| g * b).collect()),
                    wants(1).then(|| g.iter().zip(a).map(|(g, a)| g * a).collect()),
                ]
            }
            Op::Scale => {
                let x = inputs[0].values();
                let gamma = inputs[1].values()[0];
                vec![
                    wants(0).then(|| g.iter().map(|g| g * gamma).collect()),
                    wants(1).then(|| vec![g.iter().zip(x).map(|(g, x)| g * x).sum()]),
                ]
            }
            Op::MulScalar(c) => vec![Some(g.iter().map(|g| g * c).collect())],
            Op::AddScalar | Op::Reshape => vec![Some(g.to_vec())],
            Op::Sum => vec![Some(vec![g[0]; inputs[0].numel()])],
            Op::SumAxis { axis } => {
                let (outer, len, inner) = split_axis(inputs[0].shape(), *axis);
                let mut dx = vec![0.0; inputs[0].numel()];
                for o in 0..outer {
                    for k in 0..len {
                        dx[(o * len + k) * inner..(o * len + k + 1) * inner]
                            .copy_from_slice(&g[o * inner..(o + 1) * inner]);
                    }
                }
                vec![Some(dx)]
            }
            Op::MaxLast { argmax } => {
                let n = *inputs[0].shape().last().unwrap();
                let mut dx = vec![0.0; inputs[0].numel()];
                for (s, (&a, &gv)) in argmax.iter().zip(g).enumerate() {
                    dx[s * n + a] = gv;
                }
                vec![Some(dx)]
            }
            Op::Tile { n } => vec![Some(g.chunks_exact(*n).map(|c| c.iter().sum()).collect())],
            Op::Gather { indices } => {
                let n = *inputs[0].shape().last().unwrap();
                let m = indices.len();
                let mut dx = vec![0.0; inputs[0].numel()];
                for (dst, src) in dx.chunks_exact_mut(n.max(1)).zip(g.chunks_exact(m.max(1))) {
                    for (&i, &v) in indices.iter().zip(src) {
                        dst[i] += v;
                    }
                }
                vec![Some(dx)]
            }
            Op::Transpose => {
                let [b, p, q] = *inputs[0].shape() else { unreachable!() };
                // g has shape [b, q, p]
                vec![Some(transpose_blocks(g, b, q, p))]
            }
        }
    }
}
