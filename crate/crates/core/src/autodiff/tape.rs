use super::{linalg, Tensor};
use crate::error::{CoreError, Result};

/// Handle to a node on a [`Tape`]. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Const,
    MatMul { a: Var, b: Var },
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Relu { x: Var },
    Sigmoid { x: Var },
    Concat { parts: Vec<Var> },
    Slice { x: Var, start: usize, len: usize },
    GatherCols { x: Var, indices: Vec<usize> },
    Reshape { x: Var },
    MeanSquare { x: Var },
    Scale { x: Var, c: f32 },
}

struct Node {
    op: Op,
    value: Tensor,
}

/// Record of a forward computation; nodes are appended in evaluation order,
/// so one reverse sweep visits them in reverse topological order exactly once.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn rows_cols(t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        other => Err(CoreError::ShapeMismatch(format!(
            "expected a rank-2 tensor, got shape {other:?}"
        ))),
    }
}

fn wants_grad(nodes: &[Node], v: Var) -> bool {
    !matches!(nodes[v.0].op, Op::Const)
}

fn add_into(slot: &mut Option<Tensor>, contribution: Tensor) {
    match slot {
        Some(t) => {
            debug_assert_eq!(t.shape(), contribution.shape());
            for (a, b) in t.data_mut().iter_mut().zip(contribution.data()) {
                *a += b;
            }
        }
        None => *slot = Some(contribution),
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Smallest |x| over the inputs of all recorded relu nodes, if any.
    /// Finite-difference probes with steps near this scale cross the kink,
    /// so gradient checks use it to reject ill-posed probe points.
    pub fn min_relu_input_abs(&self) -> Option<f32> {
        let mut min: Option<f32> = None;
        for node in &self.nodes {
            if let Op::Relu { x } = &node.op {
                for v in self.value(*x).data() {
                    let a = v.abs();
                    min = Some(min.map_or(a, |m| m.min(a)));
                }
            }
        }
        min
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(CoreError::OutOfRange(format!(
                "variable {} not on this tape",
                v.0
            )));
        }
        Ok(())
    }

    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(Op::Input, t)
    }

    /// Like [`Tape::input`], but the node never receives a gradient; the
    /// backward sweep skips the work of producing one. Use for batch data
    /// and targets.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Const, t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (m, k) = rows_cols(self.value(a))?;
        let (k2, n) = rows_cols(self.value(b))?;
        if k != k2 {
            return Err(CoreError::ShapeMismatch(format!(
                "matmul inner dims {k} vs {k2}"
            )));
        }
        let mut out = Tensor::zeros(vec![m, n]);
        linalg::matmul_into(
            out.data_mut(),
            self.value(a).data(),
            self.value(b).data(),
            m,
            k,
            n,
        );
        Ok(self.push(Op::MatMul { a, b }, out))
    }

    /// Elementwise add; a rank-1 right operand is broadcast across the rows
    /// of a rank-2 left operand.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa == sb {
            let data = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            let t = Tensor::new(sa.to_vec(), data)?;
            return Ok(self.push(
                Op::Add {
                    a,
                    b,
                    broadcast: false,
                },
                t,
            ));
        }
        if let ([m, n], [nb]) = (sa, sb) {
            if n == nb {
                let (m, n) = (*m, *n);
                let mut out = self.value(a).clone();
                let bias = self.value(b).data();
                for row in 0..m {
                    for (o, &bv) in out.data_mut()[row * n..(row + 1) * n].iter_mut().zip(bias) {
                        *o += bv;
                    }
                }
                return Ok(self.push(
                    Op::Add {
                        a,
                        b,
                        broadcast: true,
                    },
                    out,
                ));
            }
        }
        Err(CoreError::ShapeMismatch(format!(
            "add shapes {sa:?} vs {sb:?}"
        )))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::ShapeMismatch(format!(
                "sub shapes {sa:?} vs {sb:?}"
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x - y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(Op::Sub { a, b }, t))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(CoreError::ShapeMismatch(format!(
                "mul shapes {sa:?} vs {sb:?}"
            )));
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(sa.to_vec(), data)?;
        Ok(self.push(Op::Mul { a, b }, t))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|&v| v.max(0.0)).collect(),
        )?;
        Ok(self.push(Op::Relu { x }, t))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let t = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x)
                .data()
                .iter()
                .map(|&v| 1.0 / (1.0 + (-v).exp()))
                .collect(),
        )?;
        Ok(self.push(Op::Sigmoid { x }, t))
    }

    /// Column-wise concatenation of rank-2 tensors with equal row counts.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(CoreError::EmptyInput("concat of no tensors".into()));
        }
        for &p in parts {
            self.check(p)?;
        }
        let (m, _) = rows_cols(self.value(parts[0]))?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (mp, np) = rows_cols(self.value(p))?;
            if mp != m {
                return Err(CoreError::ShapeMismatch(format!(
                    "concat row counts {m} vs {mp}"
                )));
            }
            widths.push(np);
        }
        let total: usize = widths.iter().sum();
        let mut out = Tensor::zeros(vec![m, total]);
        for row in 0..m {
            let mut offset = 0;
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.value(p).data()[row * w..(row + 1) * w];
                out.data_mut()[row * total + offset..row * total + offset + w]
                    .copy_from_slice(src);
                offset += w;
            }
        }
        Ok(self.push(
            Op::Concat {
                parts: parts.to_vec(),
            },
            out,
        ))
    }

    /// Column slice [start, start+len) of a rank-2 tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        self.check(x)?;
        let (m, n) = rows_cols(self.value(x))?;
        if start + len > n {
            return Err(CoreError::OutOfRange(format!(
                "slice [{start}, {}) of {n} columns",
                start + len
            )));
        }
        let mut out = Tensor::zeros(vec![m, len]);
        for row in 0..m {
            out.data_mut()[row * len..(row + 1) * len]
                .copy_from_slice(&self.value(x).data()[row * n + start..row * n + start + len]);
        }
        Ok(self.push(Op::Slice { x, start, len }, out))
    }

    /// Column gather: out[:, j] = x[:, indices[j]]. Indices may repeat;
    /// the backward pass scatter-adds.
    pub fn gather_cols(&mut self, x: Var, indices: &[usize]) -> Result<Var> {
        self.check(x)?;
        let (m, n) = rows_cols(self.value(x))?;
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(CoreError::OutOfRange(format!(
                "gather index {bad} out of {n} columns"
            )));
        }
        let w = indices.len();
        let mut out = Tensor::zeros(vec![m, w]);
        for row in 0..m {
            let src = &self.value(x).data()[row * n..(row + 1) * n];
            let dst = &mut out.data_mut()[row * w..(row + 1) * w];
            for (o, &idx) in dst.iter_mut().zip(indices) {
                *o = src[idx];
            }
        }
        Ok(self.push(
            Op::GatherCols {
                x,
                indices: indices.to_vec(),
            },
            out,
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Result<Var> {
        self.check(x)?;
        let t = self.value(x).reshaped(shape)?;
        Ok(self.push(Op::Reshape { x }, t))
    }

    /// Mean of squared entries, reduced to a scalar.
    pub fn mean_square(&mut self, x: Var) -> Result<Var> {
        self.check(x)?;
        let v = self.value(x);
        if v.is_empty() {
            return Err(CoreError::EmptyInput("mean_square of empty tensor".into()));
        }
        let mean =
            v.data().iter().map(|&x| x as f64 * x as f64).sum::<f64>() / v.len() as f64;
        Ok(self.push(Op::MeanSquare { x }, Tensor::scalar(mean as f32)))
    }

    pub fn scale(&mut self, x: Var, c: f32) -> Result<Var> {
        self.check(x)?;
        let t = Tensor::new(
            self.value(x).shape().to_vec(),
            self.value(x).data().iter().map(|&v| v * c).collect(),
        )?;
        Ok(self.push(Op::Scale { x, c }, t))
    }

    /// Reverse-mode sweep from a scalar loss. Disconnected nodes get no
    /// gradient entry; inputs that do not influence the loss read back as
    /// `None` (treat as zero).
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        self.check(loss)?;
        if self.value(loss).len() != 1 {
            return Err(CoreError::ShapeMismatch(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            match &node.op {
                Op::Input | Op::Const => {}
                Op::MatMul { a, b } => {
                    let (m, k) = rows_cols(self.value(*a)).unwrap();
                    let n = self.value(*b).shape()[1];
                    if wants_grad(&self.nodes, *a) {
                        let mut ga = Tensor::zeros(vec![m, k]);
                        linalg::matmul_nt_into(
                            ga.data_mut(),
                            g.data(),
                            self.value(*b).data(),
                            m,
                            k,
                            n,
                        );
                        add_into(&mut grads[a.0], ga);
                    }
                    if wants_grad(&self.nodes, *b) {
                        let mut gb = Tensor::zeros(vec![k, n]);
                        linalg::matmul_tn_into(
                            gb.data_mut(),
                            self.value(*a).data(),
                            g.data(),
                            m,
                            k,
                            n,
                        );
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Add { a, b, broadcast } => {
                    if wants_grad(&self.nodes, *a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants_grad(&self.nodes, *b) {
                        if *broadcast {
                            let (m, n) = rows_cols(&g).unwrap();
                            let mut gb = Tensor::zeros(vec![n]);
                            for row in 0..m {
                                for (o, &gv) in
                                    gb.data_mut().iter_mut().zip(&g.data()[row * n..(row + 1) * n])
                                {
                                    *o += gv;
                                }
                            }
                            add_into(&mut grads[b.0], gb);
                        } else {
                            add_into(&mut grads[b.0], g.clone());
                        }
                    }
                }
                Op::Sub { a, b } => {
                    if wants_grad(&self.nodes, *a) {
                        add_into(&mut grads[a.0], g.clone());
                    }
                    if wants_grad(&self.nodes, *b) {
                        let neg = Tensor::new(
                            g.shape().to_vec(),
                            g.data().iter().map(|&v| -v).collect(),
                        )
                        .unwrap();
                        add_into(&mut grads[b.0], neg);
                    }
                }
                Op::Mul { a, b } => {
                    if wants_grad(&self.nodes, *a) {
                        let ga = Tensor::new(
                            g.shape().to_vec(),
                            g.data()
                                .iter()
                                .zip(self.value(*b).data())
                                .map(|(&gv, &bv)| gv * bv)
                                .collect(),
                        )
                        .unwrap();
                        add_into(&mut grads[a.0], ga);
                    }
                    if wants_grad(&self.nodes, *b) {
                        let gb = Tensor::new(
                            g.shape().to_vec(),
                            g.data()
                                .iter()
                                .zip(self.value(*a).data())
                                .map(|(&gv, &av)| gv * av)
                                .collect(),
                        )
                        .unwrap();
                        add_into(&mut grads[b.0], gb);
                    }
                }
                Op::Relu { x } if wants_grad(&self.nodes, *x) => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(self.value(*x).data())
                            .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                            .collect(),
                    )
                    .unwrap();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Sigmoid { x } if wants_grad(&self.nodes, *x) => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data()
                            .iter()
                            .zip(node.value.data())
                            .map(|(&gv, &y)| gv * y * (1.0 - y))
                            .collect(),
                    )
                    .unwrap();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Concat { parts } => {
                    let (m, total) = rows_cols(&g).unwrap();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).shape()[1];
                        let mut gp = Tensor::zeros(vec![m, w]);
                        for row in 0..m {
                            gp.data_mut()[row * w..(row + 1) * w].copy_from_slice(
                                &g.data()[row * total + offset..row * total + offset + w],
                            );
                        }
                        if wants_grad(&self.nodes, p) {
                            add_into(&mut grads[p.0], gp);
                        }
                        offset += w;
                    }
                }
                Op::Slice { x, start, len } if wants_grad(&self.nodes, *x) => {
                    let (m, n) = rows_cols(self.value(*x)).unwrap();
                    let mut gx = Tensor::zeros(vec![m, n]);
                    for row in 0..m {
                        gx.data_mut()[row * n + start..row * n + start + len]
                            .copy_from_slice(&g.data()[row * len..(row + 1) * len]);
                    }
                    add_into(&mut grads[x.0], gx);
                }
                Op::GatherCols { x, indices } if wants_grad(&self.nodes, *x) => {
                    let (m, n) = rows_cols(self.value(*x)).unwrap();
                    let w = indices.len();
                    let mut gx = Tensor::zeros(vec![m, n]);
                    for row in 0..m {
                        let grow = &g.data()[row * w..(row + 1) * w];
                        let xrow = &mut gx.data_mut()[row * n..(row + 1) * n];
                        for (&gv, &idx) in grow.iter().zip(indices) {
                            xrow[idx] += gv;
                        }
                    }
                    add_into(&mut grads[x.0], gx);
                }
                Op::Reshape { x } if wants_grad(&self.nodes, *x) => {
                    let gx = Tensor::new(
                        self.value(*x).shape().to_vec(),
                        g.data().to_vec(),
                    )
                    .unwrap();
                    add_into(&mut grads[x.0], gx);
                }
                Op::MeanSquare { x } if wants_grad(&self.nodes, *x) => {
                    let xv = self.value(*x);
                    let coef = 2.0 * g.data()[0] / xv.len() as f32;
                    let gx = Tensor::new(
                        xv.shape().to_vec(),
                        xv.data().iter().map(|&v| coef * v).collect(),
                    )
                    .unwrap();
                    add_into(&mut grads[x.0], gx);
                }
                Op::Scale { x, c } if wants_grad(&self.nodes, *x) => {
                    let gx = Tensor::new(
                        g.shape().to_vec(),
                        g.data().iter().map(|&v| v * c).collect(),
                    )
                    .unwrap();
                    add_into(&mut grads[x.0], gx);
                }
                // Unary ops whose parent is a constant: nothing to do.
                Op::Relu { .. }
                | Op::Sigmoid { .. }
                | Op::Slice { .. }
                | Op::GatherCols { .. }
                | Op::Reshape { .. }
                | Op::MeanSquare { .. }
                | Op::Scale { .. } => {}
            }
            grads[id] = Some(g);
        }
        Ok(Gradients { grads })
    }
}
