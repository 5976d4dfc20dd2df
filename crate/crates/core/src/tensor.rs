//! Minimal reverse-mode autodiff over 2-D `f64` arrays.
//!
//! A [`Tape`] records the forward computation for one batch; parameters are
//! read straight from a [`ParamStore`] and their gradients come back from
//! [`Tape::backward`] as a [`Grads`] aligned with the store.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

pub type NodeId = usize;

/// Named parameter tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        &mut self.values[idx]
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Array2<f64>] {
        &self.values
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Total number of scalars.
    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Gradients aligned with a [`ParamStore`]; untouched parameters stay `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Option<Array2<f64>>>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(vec![None; store.len()])
    }

    pub fn get(&self, idx: usize) -> Option<&Array2<f64>> {
        self.0[idx].as_ref()
    }

    /// Gradient entry, zero if the parameter was never used.
    pub fn at(&self, idx: usize, row: usize, col: usize) -> f64 {
        self.0[idx].as_ref().map_or(0.0, |g| g[(row, col)])
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (mine, theirs) in self.0.iter_mut().zip(&other.0) {
            if let Some(t) = theirs {
                match mine {
                    Some(m) => *m += t,
                    None => *mine = Some(t.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for g in self.0.iter_mut().flatten() {
            g.mapv_inplace(|v| v * factor);
        }
    }
}

enum Value {
    Owned(Array2<f64>),
    Param(usize),
}

enum Op {
    Leaf,
    Param(usize),
    Gather {
        param: usize,
        rows: Vec<usize>,
    },
    MatMul(NodeId, NodeId),
    /// `a · bᵀ`
    MatMulT(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    LayerNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        xhat: Array2<f64>,
        inv_std: Vec<f64>,
    },
    SliceCols(NodeId, usize),
    ConcatCols(Vec<NodeId>),
    MaskedSoftmax(NodeId),
    Dropout(NodeId, Array2<f64>),
    CrossEntropy {
        logits: NodeId,
        targets: Vec<usize>,
        probs: Array2<f64>,
        denom: f64,
    },
}

struct Node {
    value: Value,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<NodeId>>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        self.nodes.len() - 1
    }

    pub fn value(&self, id: NodeId) -> ArrayView2<'_, f64> {
        match &self.nodes[id].value {
            Value::Owned(v) => v.view(),
            Value::Param(p) => self.params.get(*p).view(),
        }
    }

    /// Scalar value of a `1 × 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.value(id)[(0, 0)]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> NodeId {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, idx: usize) -> NodeId {
        if let Some(id) = self.param_nodes[idx] {
            return id;
        }
        self.nodes.push(Node {
            value: Value::Param(idx),
            op: Op::Param(idx),
        });
        let id = self.nodes.len() - 1;
        self.param_nodes[idx] = Some(id);
        id
    }

    /// Rows of a parameter table, e.g. an embedding lookup.
    pub fn gather(&mut self, param: usize, rows: &[usize]) -> NodeId {
        let table = self.params.get(param);
        let value = table.select(Axis(0), rows);
        self.push(
            value,
            Op::Gather {
                param,
                rows: rows.to_vec(),
            },
        )
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> NodeId {
        let v = self.value(a).mapv(|x| x * factor);
        self.push(v, Op::Scale(a, factor))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    /// Row-wise normalization with `1 × d` scale and bias.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> NodeId {
        let xv = self.value(x);
        let cols = xv.ncols() as f64;
        let mut xhat = xv.to_owned();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / cols;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
            inv_std.push(inv);
        }
        let out = &xhat * &self.value(gamma) + &self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols needs equal row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Row-wise softmax over entries where `keep` is true; others get exactly 0.
    /// A row with nothing kept is all zeros.
    pub fn masked_softmax(&mut self, a: NodeId, keep: &Array2<bool>) -> NodeId {
        let mut out = self.value(a).to_owned();
        for (mut row, mask) in out.rows_mut().into_iter().zip(keep.rows()) {
            let max = row
                .iter()
                .zip(mask.iter())
                .filter(|(_, &k)| k)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for (v, &k) in row.iter_mut().zip(mask.iter()) {
                *v = if k { (*v - max).exp() } else { 0.0 };
                total += *v;
            }
            if total > 0.0 {
                row.mapv_inplace(|v| v / total);
            }
        }
        self.push(out, Op::MaskedSoftmax(a))
    }

    /// Inverted dropout; `p = 0` returns `a` unchanged.
    pub fn dropout<R: Rng>(&mut self, a: NodeId, p: f64, rng: &mut R) -> NodeId {
        if p <= 0.0 {
            return a;
        }
        let keep = 1.0 / (1.0 - p);
        let shape = self.value(a).dim();
        let mask = Array2::from_shape_fn(shape, |_| if rng.random::<f64>() < p { 0.0 } else { keep });
        let v = &self.value(a) * &mask;
        self.push(v, Op::Dropout(a, mask))
    }

    /// `Σ_rows −log softmax(logits)[target] / denom` as a `1 × 1` node.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], denom: f64) -> NodeId {
        let lv = self.value(logits);
        assert_eq!(lv.nrows(), targets.len(), "one target per logit row");
        let mut probs = lv.to_owned();
        let mut loss = 0.0;
        for (mut row, &t) in probs.rows_mut().into_iter().zip(targets) {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += lse - row[t];
            row.mapv_inplace(|v| (v - lse).exp());
        }
        self.push(
            Array2::from_elem((1, 1), loss / denom),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                denom,
            },
        )
    }

    /// Sum of `1 × 1` nodes.
    pub fn sum(&mut self, parts: &[NodeId]) -> NodeId {
        let mut iter = parts.iter();
        let first = *iter.next().expect("sum of at least one node");
        iter.fold(first, |acc, &p| self.add(acc, p))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Grads {
        let mut grads: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut out: Vec<Option<Array2<f64>>> = vec![None; self.params.len()];
        grads[loss] = Some(Array2::ones((1, 1)));

        fn acc(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
            match slot {
                Some(s) => *s += &g,
                None => *slot = Some(g),
            }
        }

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            match &self.nodes[id].op {
                Op::Leaf => {}
                Op::Param(p) => acc(&mut out[*p], g),
                Op::Gather { param, rows } => {
                    let slot = out[*param].get_or_insert_with(|| Array2::zeros(self.params.get(*param).dim()));
                    for (r, &row) in rows.iter().enumerate() {
                        let mut dst = slot.row_mut(row);
                        dst += &g.row(r);
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    acc(&mut grads[*a], ga);
                    acc(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads[*b], g.clone());
                    acc(&mut grads[*a], g);
                }
                Op::Scale(a, f) => acc(&mut grads[*a], g.mapv(|v| v * f)),
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&self.value(*a)).for_each(|d, &x| {
                        if x <= 0.0 {
                            *d = 0.0;
                        }
                    });
                    acc(&mut grads[*a], ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gv = self.value(*gamma);
                    acc(&mut grads[*beta], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    acc(&mut grads[*gamma], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * &gv;
                    let cols = dxhat.ncols() as f64;
                    let mut gx = Array2::zeros(dxhat.dim());
                    for r in 0..dxhat.nrows() {
                        let d = dxhat.row(r);
                        let xh = xhat.row(r);
                        let sum_d = d.sum();
                        let sum_dx = d.iter().zip(xh.iter()).map(|(a, b)| a * b).sum::<f64>();
                        let k = inv_std[r] / cols;
                        for c in 0..dxhat.ncols() {
                            gx[(r, c)] = k * (cols * d[c] - sum_d - xh[c] * sum_dx);
                        }
                    }
                    acc(&mut grads[*x], gx);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads[*a], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = self.value(p).ncols();
                        acc(&mut grads[p], g.slice(s![.., start..start + width]).to_owned());
                        start += width;
                    }
                }
                Op::MaskedSoftmax(a) => {
                    let y = match &self.nodes[id].value {
                        Value::Owned(v) => v,
                        Value::Param(_) => unreachable!(),
                    };
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|v, &yv| *v -= yv * dot);
                    }
                    acc(&mut grads[*a], ga);
                }
                Op::Dropout(a, mask) => acc(&mut grads[*a], &g * mask),
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    denom,
                } => {
                    let scale = g[(0, 0)] / denom;
                    let mut gl = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        gl[(r, t)] -= 1.0;
                    }
                    gl.mapv_inplace(|v| v * scale);
                    acc(&mut grads[*logits], gl);
                }
            }
        }
        Grads(out)
    }
}
