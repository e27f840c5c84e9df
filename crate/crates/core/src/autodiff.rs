//! Reverse-mode automatic differentiation over a define-by-run tape.
//!
//! A [`Tape`] records primitive applications in topological order as the
//! forward pass runs; [`Tape::backward`] replays them in reverse, computing
//! vector-Jacobian products. Tapes are rebuilt per training example, which
//! keeps variable-length sentences simple. Leaves are marked as parameters
//! (model weights) or inputs (the normalized embeddings a sentence feeds in),
//! and the backward pass yields gradients for both.

use thiserror::Error;

use crate::tensor::Tensor;

/// Index of a node on a [`Tape`].
pub type NodeId = usize;

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: invalid operand shape {shape:?}: {reason}")]
    InvalidShape { op: &'static str, shape: Vec<usize>, reason: String },
    #[error("{op}: index {index} out of range for extent {extent}")]
    IndexOutOfRange { op: &'static str, index: usize, extent: usize },
    #[error("backward requires a scalar root, got shape {shape:?}")]
    NonScalarRoot { shape: Vec<usize> },
    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },
}

/// Whether a leaf holds trainable parameters or per-example inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Parameter,
    Input,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf(LeafKind),
    Constant,
    MatMul { a: NodeId, b: NodeId },
    /// Elementwise when shapes match; `[n,k] + [k]` adds the vector to every row.
    Add { a: NodeId, b: NodeId, row_broadcast: bool },
    Sub { a: NodeId, b: NodeId },
    Mul { a: NodeId, b: NodeId },
    Scale { a: NodeId, c: f64 },
    Sum { a: NodeId },
    Concat { parts: Vec<NodeId> },
    Slice { a: NodeId, start: usize, len: usize },
    Reshape { a: NodeId },
    Transpose { a: NodeId },
    Sigmoid { a: NodeId },
    Tanh { a: NodeId },
    Softplus { a: NodeId },
    LogSumExp { a: NodeId, axis: usize },
    MaxOverAxis { a: NodeId, axis: usize },
    /// Elementwise product with a fixed mask (inverted-dropout scaling baked in).
    Dropout { a: NodeId, mask: Tensor },
    GatherRow { a: NodeId, row: usize },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients produced by one backward sweep.
///
/// Every parameter and input leaf has an entry (zeros when the leaf did not
/// reach the root); intermediate nodes have entries only if gradient flowed
/// through them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Gradient of a leaf; backward guarantees it is present.
    pub fn leaf(&self, id: NodeId) -> &Tensor {
        self.grads[id]
            .as_ref()
            .expect("leaf gradient missing; was this node a leaf on the swept tape?")
    }
}

/// Define-by-run tape of primitive applications.
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn leaf_kind(&self, id: NodeId) -> Option<LeafKind> {
        match self.nodes[id].op {
            Op::Leaf(kind) => Some(kind),
            _ => None,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Registers a per-example input leaf.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf(LeafKind::Input))
    }

    /// Registers a parameter leaf (weights, biases, CRF tables).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf(LeafKind::Parameter))
    }

    /// Registers a constant; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Constant)
    }

    // ---- primitives ----

    /// `a @ b`: matrix-matrix `[m,k]@[k,n] -> [m,n]` or matrix-vector
    /// `[m,k]@[k] -> [m]`.
    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if !av.is_matrix() {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let (m, k) = av.dims2();
        let value = if bv.is_vector() {
            if bv.shape()[0] != k {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: av.shape().to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m];
            let ad = av.data();
            let bd = bv.data();
            for i in 0..m {
                let row = &ad[i * k..(i + 1) * k];
                out[i] = row.iter().zip(bd).map(|(x, y)| x * y).sum();
            }
            Tensor::vector(out)
        } else if bv.is_matrix() {
            let (bk, n) = bv.dims2();
            if bk != k {
                return Err(AutodiffError::ShapeMismatch {
                    op: "matmul",
                    lhs: av.shape().to_vec(),
                    rhs: bv.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            let ad = av.data();
            let bd = bv.data();
            for i in 0..m {
                for p in 0..k {
                    let aip = ad[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &bd[p * n..(p + 1) * n];
                    let orow = &mut out[i * n..(i + 1) * n];
                    for j in 0..n {
                        orow[j] += aip * brow[j];
                    }
                }
            }
            Tensor::matrix(m, n, out)
        } else {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        };
        Ok(self.push(value, Op::MatMul { a, b }))
    }

    /// Elementwise sum, or `[n,k] + [k]` row broadcast.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() == bv.shape() {
            let data = av.data().iter().zip(bv.data()).map(|(x, y)| x + y).collect();
            let value = Tensor::new(av.shape().to_vec(), data);
            return Ok(self.push(value, Op::Add { a, b, row_broadcast: false }));
        }
        if av.is_matrix() && bv.is_vector() && av.dims2().1 == bv.shape()[0] {
            let (rows, cols) = av.dims2();
            let mut data = av.data().to_vec();
            let bd = bv.data();
            for r in 0..rows {
                for c in 0..cols {
                    data[r * cols + c] += bd[c];
                }
            }
            let value = Tensor::matrix(rows, cols, data);
            return Ok(self.push(value, Op::Add { a, b, row_broadcast: true }));
        }
        Err(AutodiffError::ShapeMismatch {
            op: "add",
            lhs: av.shape().to_vec(),
            rhs: bv.shape().to_vec(),
        })
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "sub",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x - y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        Ok(self.push(value, Op::Sub { a, b }))
    }

    /// Elementwise product; shapes must match exactly.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, AutodiffError> {
        let (av, bv) = (&self.nodes[a].value, &self.nodes[b].value);
        if av.shape() != bv.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mul",
                lhs: av.shape().to_vec(),
                rhs: bv.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(bv.data()).map(|(x, y)| x * y).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        Ok(self.push(value, Op::Mul { a, b }))
    }

    /// Multiplication by a compile-time constant; `c` receives no gradient.
    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let av = &self.nodes[a].value;
        let data = av.data().iter().map(|x| x * c).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        self.push(value, Op::Scale { a, c })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let total = self.nodes[a].value.data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { a })
    }

    /// Concatenation of vectors into one vector.
    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId, AutodiffError> {
        if parts.is_empty() {
            return Err(AutodiffError::InvalidShape {
                op: "concat",
                shape: vec![],
                reason: "no operands".to_string(),
            });
        }
        let mut data = Vec::new();
        for &p in parts {
            let v = &self.nodes[p].value;
            if !v.is_vector() {
                return Err(AutodiffError::InvalidShape {
                    op: "concat",
                    shape: v.shape().to_vec(),
                    reason: "operands must be vectors".to_string(),
                });
            }
            data.extend_from_slice(v.data());
        }
        Ok(self.push(Tensor::vector(data), Op::Concat { parts: parts.to_vec() }))
    }

    /// Contiguous range of the flattened (row-major) data, as a vector.
    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        if start + len > av.numel() {
            return Err(AutodiffError::IndexOutOfRange {
                op: "slice",
                index: start + len,
                extent: av.numel(),
            });
        }
        let data = av.data()[start..start + len].to_vec();
        Ok(self.push(Tensor::vector(data), Op::Slice { a, start, len }))
    }

    /// Shape reinterpretation; element count must be preserved.
    pub fn reshape(&mut self, a: NodeId, shape: Vec<usize>) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        let numel: usize = shape.iter().product();
        if numel != av.numel() {
            return Err(AutodiffError::InvalidShape {
                op: "reshape",
                shape,
                reason: format!("operand has {} elements", av.numel()),
            });
        }
        let value = Tensor::new(shape, av.data().to_vec());
        Ok(self.push(value, Op::Reshape { a }))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        if !av.is_matrix() {
            return Err(AutodiffError::InvalidShape {
                op: "transpose",
                shape: av.shape().to_vec(),
                reason: "operand must be a matrix".to_string(),
            });
        }
        let (rows, cols) = av.dims2();
        let value = Tensor::matrix(cols, rows, transpose_data(av.data(), rows, cols));
        Ok(self.push(value, Op::Transpose { a }))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a].value.data().iter().map(|&x| sigmoid(x)).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data);
        self.push(value, Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a].value.data().iter().map(|x| x.tanh()).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data);
        self.push(value, Op::Tanh { a })
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let data = self.nodes[a].value.data().iter().map(|&x| softplus(x)).collect();
        let value = Tensor::new(self.nodes[a].value.shape().to_vec(), data);
        self.push(value, Op::Softplus { a })
    }

    /// Log-sum-exp reduction. Vectors reduce over axis 0 to a scalar; matrices
    /// reduce over the given axis (0: down columns, 1: along rows).
    pub fn logsumexp(&mut self, a: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        let value = match (av.shape().len(), axis) {
            (1, 0) => Tensor::scalar(logsumexp_slice(av.data())),
            (2, 0) => {
                let (rows, cols) = av.dims2();
                let mut out = vec![0.0; cols];
                for (j, o) in out.iter_mut().enumerate() {
                    let col: Vec<f64> = (0..rows).map(|i| av.at(i, j)).collect();
                    *o = logsumexp_slice(&col);
                }
                Tensor::vector(out)
            }
            (2, 1) => {
                let (rows, _) = av.dims2();
                let out = (0..rows).map(|i| logsumexp_slice(av.row(i))).collect();
                Tensor::vector(out)
            }
            _ => {
                return Err(AutodiffError::InvalidShape {
                    op: "logsumexp",
                    shape: av.shape().to_vec(),
                    reason: format!("unsupported axis {}", axis),
                })
            }
        };
        Ok(self.push(value, Op::LogSumExp { a, axis }))
    }

    /// Max reduction with the same axis conventions as [`Tape::logsumexp`].
    /// The subgradient routes to the first (lowest-index) maximizer.
    pub fn max_over_axis(&mut self, a: NodeId, axis: usize) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        let value = match (av.shape().len(), axis) {
            (1, 0) => Tensor::scalar(max_slice(av.data()).1),
            (2, 0) => {
                let (rows, cols) = av.dims2();
                let mut out = vec![0.0; cols];
                for (j, o) in out.iter_mut().enumerate() {
                    let col: Vec<f64> = (0..rows).map(|i| av.at(i, j)).collect();
                    *o = max_slice(&col).1;
                }
                Tensor::vector(out)
            }
            (2, 1) => {
                let (rows, _) = av.dims2();
                let out = (0..rows).map(|i| max_slice(av.row(i)).1).collect();
                Tensor::vector(out)
            }
            _ => {
                return Err(AutodiffError::InvalidShape {
                    op: "max_over_axis",
                    shape: av.shape().to_vec(),
                    reason: format!("unsupported axis {}", axis),
                })
            }
        };
        Ok(self.push(value, Op::MaxOverAxis { a, axis }))
    }

    /// Applies an externally supplied dropout mask (elementwise product).
    /// Masks carry the inverted-dropout scale, so all-ones means "disabled".
    pub fn dropout(&mut self, a: NodeId, mask: &Tensor) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        if av.shape() != mask.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                lhs: av.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let data = av.data().iter().zip(mask.data()).map(|(x, m)| x * m).collect();
        let value = Tensor::new(av.shape().to_vec(), data);
        Ok(self.push(value, Op::Dropout { a, mask: mask.clone() }))
    }

    /// Row `row` of a matrix as a vector; the backward pass scatter-adds into
    /// the source row, which is what embedding lookups need.
    pub fn gather_row(&mut self, a: NodeId, row: usize) -> Result<NodeId, AutodiffError> {
        let av = &self.nodes[a].value;
        if !av.is_matrix() {
            return Err(AutodiffError::InvalidShape {
                op: "gather_row",
                shape: av.shape().to_vec(),
                reason: "operand must be a matrix".to_string(),
            });
        }
        let (rows, _) = av.dims2();
        if row >= rows {
            return Err(AutodiffError::IndexOutOfRange { op: "gather_row", index: row, extent: rows });
        }
        let value = Tensor::vector(av.row(row).to_vec());
        Ok(self.push(value, Op::GatherRow { a, row }))
    }

    // ---- backward ----

    /// Backward pass from a scalar root with seed 1.
    pub fn backward(&self, root: NodeId) -> Result<Gradients, AutodiffError> {
        self.backward_seeded(root, 1.0)
    }

    /// Backward pass from a scalar root with an explicit seed.
    ///
    /// Non-destructive: the tape can keep growing afterwards and be swept
    /// again, which the adversarial loss relies on.
    pub fn backward_seeded(&self, root: NodeId, seed: f64) -> Result<Gradients, AutodiffError> {
        let root_val = &self.nodes[root].value;
        if !root_val.is_scalar() {
            return Err(AutodiffError::NonScalarRoot { shape: root_val.shape().to_vec() });
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::new(root_val.shape().to_vec(), vec![seed]));

        for id in (0..=root).rev() {
            let out_grad = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            self.apply_vjp(id, &out_grad, &mut grads);
            grads[id] = Some(out_grad);
        }

        // Every leaf gets an entry; unused leaves get zeros of matching shape.
        for (id, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf(_)) && grads[id].is_none() {
                grads[id] = Some(Tensor::zeros(node.value.shape().to_vec()));
            }
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor) {
        match &mut grads[id] {
            Some(existing) => existing.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn apply_vjp(&self, id: NodeId, out_grad: &Tensor, grads: &mut [Option<Tensor>]) {
        match &self.nodes[id].op {
            Op::Leaf(_) | Op::Constant => {}
            Op::MatMul { a, b } => {
                let av = &self.nodes[*a].value;
                let bv = &self.nodes[*b].value;
                let (m, k) = av.dims2();
                if bv.is_vector() {
                    // out[m] = A @ x: dA = g ⊗ x, dx = Aᵀ g
                    let g = out_grad.data();
                    let x = bv.data();
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            da[i * k + p] = g[i] * x[p];
                        }
                    }
                    let mut dx = vec![0.0; k];
                    let ad = av.data();
                    for i in 0..m {
                        let gi = g[i];
                        if gi == 0.0 {
                            continue;
                        }
                        for p in 0..k {
                            dx[p] += ad[i * k + p] * gi;
                        }
                    }
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da));
                    self.accumulate(grads, *b, Tensor::vector(dx));
                } else {
                    let (_, n) = bv.dims2();
                    let g = out_grad.data();
                    let ad = av.data();
                    let bd = bv.data();
                    // dA = g @ Bᵀ
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        for p in 0..k {
                            let mut acc = 0.0;
                            for j in 0..n {
                                acc += g[i * n + j] * bd[p * n + j];
                            }
                            da[i * k + p] = acc;
                        }
                    }
                    // dB = Aᵀ @ g
                    let mut db = vec![0.0; k * n];
                    for p in 0..k {
                        for i in 0..m {
                            let aip = ad[i * k + p];
                            if aip == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                db[p * n + j] += aip * g[i * n + j];
                            }
                        }
                    }
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da));
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db));
                }
            }
            Op::Add { a, b, row_broadcast } => {
                self.accumulate(grads, *a, out_grad.clone());
                if *row_broadcast {
                    let (rows, cols) = self.nodes[*a].value.dims2();
                    let g = out_grad.data();
                    let mut db = vec![0.0; cols];
                    for r in 0..rows {
                        for c in 0..cols {
                            db[c] += g[r * cols + c];
                        }
                    }
                    self.accumulate(grads, *b, Tensor::vector(db));
                } else {
                    self.accumulate(grads, *b, out_grad.clone());
                }
            }
            Op::Sub { a, b } => {
                self.accumulate(grads, *a, out_grad.clone());
                let mut neg = out_grad.clone();
                neg.scale_assign(-1.0);
                self.accumulate(grads, *b, neg);
            }
            Op::Mul { a, b } => {
                let av = self.nodes[*a].value.clone();
                let bv = self.nodes[*b].value.clone();
                let da = Tensor::new(
                    av.shape().to_vec(),
                    out_grad.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect(),
                );
                let db = Tensor::new(
                    bv.shape().to_vec(),
                    out_grad.data().iter().zip(av.data()).map(|(g, x)| g * x).collect(),
                );
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::Scale { a, c } => {
                let mut da = out_grad.clone();
                da.scale_assign(*c);
                self.accumulate(grads, *a, da);
            }
            Op::Sum { a } => {
                let g = out_grad.item();
                let shape = self.nodes[*a].value.shape().to_vec();
                let numel = self.nodes[*a].value.numel();
                self.accumulate(grads, *a, Tensor::new(shape, vec![g; numel]));
            }
            Op::Concat { parts } => {
                let g = out_grad.data();
                let mut offset = 0;
                for &p in parts {
                    let len = self.nodes[p].value.numel();
                    let dp = Tensor::vector(g[offset..offset + len].to_vec());
                    self.accumulate(grads, p, dp);
                    offset += len;
                }
            }
            Op::Slice { a, start, len } => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let mut da = Tensor::zeros(shape);
                da.data_mut()[*start..*start + *len].copy_from_slice(out_grad.data());
                self.accumulate(grads, *a, da);
            }
            Op::Reshape { a } => {
                let shape = self.nodes[*a].value.shape().to_vec();
                self.accumulate(grads, *a, Tensor::new(shape, out_grad.data().to_vec()));
            }
            Op::Transpose { a } => {
                let (rows, cols) = self.nodes[*a].value.dims2();
                // out is [cols, rows]; transpose the gradient back
                let da = transpose_data(out_grad.data(), cols, rows);
                self.accumulate(grads, *a, Tensor::matrix(rows, cols, da));
            }
            Op::Sigmoid { a } => {
                let out = &self.nodes[id].value;
                let da = Tensor::new(
                    out.shape().to_vec(),
                    out_grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, s)| g * s * (1.0 - s))
                        .collect(),
                );
                self.accumulate(grads, *a, da);
            }
            Op::Tanh { a } => {
                let out = &self.nodes[id].value;
                let da = Tensor::new(
                    out.shape().to_vec(),
                    out_grad
                        .data()
                        .iter()
                        .zip(out.data())
                        .map(|(g, t)| g * (1.0 - t * t))
                        .collect(),
                );
                self.accumulate(grads, *a, da);
            }
            Op::Softplus { a } => {
                let xin = &self.nodes[*a].value;
                let da = Tensor::new(
                    xin.shape().to_vec(),
                    out_grad
                        .data()
                        .iter()
                        .zip(xin.data())
                        .map(|(g, &x)| g * sigmoid(x))
                        .collect(),
                );
                self.accumulate(grads, *a, da);
            }
            Op::LogSumExp { a, axis } => {
                let xin = &self.nodes[*a].value;
                let out = &self.nodes[id].value;
                let mut da = Tensor::zeros(xin.shape().to_vec());
                match (xin.shape().len(), *axis) {
                    (1, 0) => {
                        let g = out_grad.item();
                        let lse = out.item();
                        for (d, &x) in da.data_mut().iter_mut().zip(xin.data()) {
                            *d = g * (x - lse).exp();
                        }
                    }
                    (2, 0) => {
                        let (rows, cols) = xin.dims2();
                        for i in 0..rows {
                            for j in 0..cols {
                                da.data_mut()[i * cols + j] =
                                    out_grad.data()[j] * (xin.at(i, j) - out.data()[j]).exp();
                            }
                        }
                    }
                    (2, 1) => {
                        let (rows, cols) = xin.dims2();
                        for i in 0..rows {
                            for j in 0..cols {
                                da.data_mut()[i * cols + j] =
                                    out_grad.data()[i] * (xin.at(i, j) - out.data()[i]).exp();
                            }
                        }
                    }
                    _ => unreachable!("validated at record time"),
                }
                self.accumulate(grads, *a, da);
            }
            Op::MaxOverAxis { a, axis } => {
                let xin = &self.nodes[*a].value;
                let mut da = Tensor::zeros(xin.shape().to_vec());
                match (xin.shape().len(), *axis) {
                    (1, 0) => {
                        let (idx, _) = max_slice(xin.data());
                        da.data_mut()[idx] = out_grad.item();
                    }
                    (2, 0) => {
                        let (rows, cols) = xin.dims2();
                        for j in 0..cols {
                            let col: Vec<f64> = (0..rows).map(|i| xin.at(i, j)).collect();
                            let (idx, _) = max_slice(&col);
                            da.data_mut()[idx * cols + j] = out_grad.data()[j];
                        }
                    }
                    (2, 1) => {
                        let (rows, cols) = xin.dims2();
                        for i in 0..rows {
                            let (idx, _) = max_slice(xin.row(i));
                            da.data_mut()[i * cols + idx] = out_grad.data()[i];
                        }
                    }
                    _ => unreachable!("validated at record time"),
                }
                self.accumulate(grads, *a, da);
            }
            Op::Dropout { a, mask } => {
                let da = Tensor::new(
                    mask.shape().to_vec(),
                    out_grad.data().iter().zip(mask.data()).map(|(g, m)| g * m).collect(),
                );
                self.accumulate(grads, *a, da);
            }
            Op::GatherRow { a, row } => {
                let (rows, cols) = self.nodes[*a].value.dims2();
                let mut da = Tensor::zeros(vec![rows, cols]);
                da.data_mut()[row * cols..(row + 1) * cols].copy_from_slice(out_grad.data());
                self.accumulate(grads, *a, da);
            }
        }
    }
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

fn transpose_data(data: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = data[r * cols + c];
        }
    }
    out
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Shift-invariant log-sum-exp of a slice.
pub fn logsumexp_slice(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// (first argmax, max) of a non-empty slice; ties go to the lowest index.
pub fn max_slice(xs: &[f64]) -> (usize, f64) {
    let mut best = (0, xs[0]);
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > best.1 {
            best = (i, x);
        }
    }
    best
}

/// Compares an analytic gradient against central finite differences.
///
/// `f` maps a point to `(value, analytic gradient)`; the gradient is read
/// once at `point` and the value is probed at `point ± step` per coordinate.
/// Returns the max over coordinates of
/// `|analytic - (f(x+h) - f(x-h)) / 2h| / max(1, |analytic|)`.
pub fn grad_check<F>(mut f: F, point: &[f64], step: f64) -> Result<f64, AutodiffError>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>), AutodiffError>,
{
    assert!(step > 0.0, "grad_check step must be positive");
    let (_, analytic) = f(point)?;
    assert_eq!(analytic.len(), point.len(), "gradient length must match point length");
    let mut max_err: f64 = 0.0;
    let mut probe = point.to_vec();
    for i in 0..point.len() {
        probe[i] = point[i] + step;
        let (plus, _) = f(&probe)?;
        probe[i] = point[i] - step;
        let (minus, _) = f(&probe)?;
        probe[i] = point[i];
        let fd = (plus - minus) / (2.0 * step);
        if !fd.is_finite() || !analytic[i].is_finite() {
            return Err(AutodiffError::NonFinite { context: format!("grad_check coordinate {}", i) });
        }
        let err = (analytic[i] - fd).abs() / analytic[i].abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(max_err)
}
