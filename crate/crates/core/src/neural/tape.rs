use std::sync::atomic::{AtomicU64, Ordering};

use super::tensor::gemm;
use super::{mismatch, GradRecord, NeuralError, Params, Tensor};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(0);

/// Handle to a value recorded on a particular [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    index: usize,
}

/// Neighbor lists by row index, used by sum aggregation.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Adjacency {
    pub neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub fn new(neighbors: Vec<Vec<usize>>) -> Self {
        Self { neighbors }
    }

    pub fn edgeless(n: usize) -> Self {
        Self { neighbors: vec![Vec::new(); n] }
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }
}

enum Op {
    Input,
    Param(String),
    Linear { x: usize, w: usize, b: Option<usize> },
    Add(usize, usize),
    Mul(usize, usize),
    Sigmoid(usize),
    Tanh(usize),
    OneMinus(usize),
    Aggregate { x: usize, adj: Adjacency },
    Gather { x: usize, index: Vec<usize> },
    Mse(usize, usize),
    Sum(usize),
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    // Param nodes read their value from the borrowed `Params`.
    value: Option<Tensor>,
}

/// Records a forward computation over borrowed parameters and replays it in
/// reverse to produce a [`GradRecord`].
pub struct Tape<'p> {
    id: u64,
    params: &'p Params,
    nodes: Vec<Node>,
}

fn as_matrix(t: Tensor) -> Result<Tensor, NeuralError> {
    let (r, c) = t.dims()?;
    t.reshaped(vec![r, c])
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p Params) -> Self {
        Self { id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed), params, nodes: Vec::new() }
    }

    pub fn params(&self) -> &'p Params {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: Var) -> Result<usize, NeuralError> {
        if v.tape != self.id || v.index >= self.nodes.len() {
            return Err(NeuralError::NoForwardRecorded);
        }
        Ok(v.index)
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        let (rows, cols) = (value.shape()[0], value.shape()[1]);
        self.nodes.push(Node { op, rows, cols, value: Some(value) });
        Var { tape: self.id, index: self.nodes.len() - 1 }
    }

    fn val(&self, i: usize) -> &Tensor {
        match (&self.nodes[i].value, &self.nodes[i].op) {
            (Some(t), _) => t,
            (None, Op::Param(name)) => self.params.get(name).expect("param checked on insert"),
            (None, _) => unreachable!("non-param node without value"),
        }
    }

    fn dims(&self, i: usize) -> (usize, usize) {
        (self.nodes[i].rows, self.nodes[i].cols)
    }

    pub fn value(&self, v: Var) -> Result<&Tensor, NeuralError> {
        let i = self.idx(v)?;
        Ok(self.val(i))
    }

    /// Constant input; 1-D tensors become a single row.
    pub fn input(&mut self, t: Tensor) -> Result<Var, NeuralError> {
        Ok(self.push(Op::Input, as_matrix(t)?))
    }

    pub fn param(&mut self, name: &str) -> Result<Var, NeuralError> {
        let (rows, cols) = self.params.get(name)?.dims()?;
        self.nodes.push(Node { op: Op::Param(name.to_string()), rows, cols, value: None });
        Ok(Var { tape: self.id, index: self.nodes.len() - 1 })
    }

    /// `X W^T + b` with `W` shaped `out x in` and `b` of length `out`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, NeuralError> {
        let (xi, wi) = (self.idx(x)?, self.idx(w)?);
        let bi = b.map(|b| self.idx(b)).transpose()?;
        let (batch, inp) = self.dims(xi);
        let (out, w_in) = self.dims(wi);
        if w_in != inp {
            return Err(mismatch("linear", &[out, inp], &[out, w_in]));
        }
        let mut y = vec![0.0; batch * out];
        if let Some(bi) = bi {
            let bias = self.val(bi);
            if bias.len() != out {
                return Err(mismatch("linear bias", &[out], bias.shape()));
            }
            for row in y.chunks_mut(out) {
                row.copy_from_slice(bias.data());
            }
        }
        gemm(batch, inp, out, self.val(xi).data(), (inp, 1), self.val(wi).data(), (1, inp), 1.0, &mut y);
        let y = Tensor::matrix(batch, out, y)?;
        Ok(self.push(Op::Linear { x: xi, w: wi, b: bi }, y))
    }

    fn binary(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: fn(usize, usize) -> Op,
    ) -> Result<Var, NeuralError> {
        let (ai, bi) = (self.idx(a)?, self.idx(b)?);
        if self.dims(ai) != self.dims(bi) {
            let (ar, ac) = self.dims(ai);
            let (br, bc) = self.dims(bi);
            return Err(mismatch(name, &[ar, ac], &[br, bc]));
        }
        let (r, c) = self.dims(ai);
        let data = self.val(ai).data().iter().zip(self.val(bi).data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(self.push(op(ai, bi), Tensor::matrix(r, c, data)?))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary(a, b, "add", |x, y| x + y, Op::Add)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        self.binary(a, b, "mul", |x, y| x * y, Op::Mul)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: fn(usize) -> Op) -> Result<Var, NeuralError> {
        let ai = self.idx(a)?;
        let (r, c) = self.dims(ai);
        let data = self.val(ai).data().iter().map(|x| f(*x)).collect();
        Ok(self.push(op(ai), Tensor::matrix(r, c, data)?))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NeuralError> {
        self.unary(a, sigmoid, Op::Sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NeuralError> {
        self.unary(a, f64::tanh, Op::Tanh)
    }

    pub fn one_minus(&mut self, a: Var) -> Result<Var, NeuralError> {
        self.unary(a, |x| 1.0 - x, Op::OneMinus)
    }

    /// Row `v` of the output is the sum of rows `adj[v]` of the input.
    pub fn aggregate(&mut self, x: Var, adj: &Adjacency) -> Result<Var, NeuralError> {
        let xi = self.idx(x)?;
        let (r, c) = self.dims(xi);
        if adj.len() != r {
            return Err(mismatch("aggregate", &[r], &[adj.len()]));
        }
        let src = self.val(xi).data();
        let mut out = vec![0.0; r * c];
        for (v, nbrs) in adj.neighbors.iter().enumerate() {
            for &u in nbrs {
                if u >= r {
                    return Err(mismatch("aggregate index", &[r], &[u]));
                }
                for k in 0..c {
                    out[v * c + k] += src[u * c + k];
                }
            }
        }
        let t = Tensor::matrix(r, c, out)?;
        Ok(self.push(Op::Aggregate { x: xi, adj: adj.clone() }, t))
    }

    /// Picks column `index[i]` from row `i`, giving an `n x 1` column.
    pub fn gather(&mut self, x: Var, index: &[usize]) -> Result<Var, NeuralError> {
        let xi = self.idx(x)?;
        let (r, c) = self.dims(xi);
        if index.len() != r {
            return Err(mismatch("gather", &[r], &[index.len()]));
        }
        let src = self.val(xi).data();
        let mut out = Vec::with_capacity(r);
        for (i, &j) in index.iter().enumerate() {
            if j >= c {
                return Err(mismatch("gather index", &[c], &[j]));
            }
            out.push(src[i * c + j]);
        }
        let t = Tensor::matrix(r, 1, out)?;
        Ok(self.push(Op::Gather { x: xi, index: index.to_vec() }, t))
    }

    /// Mean of squared differences, as a `1 x 1` value.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, NeuralError> {
        let (pi, ti) = (self.idx(pred)?, self.idx(target)?);
        if self.dims(pi) != self.dims(ti) {
            let (a, b) = self.dims(pi);
            let (c, d) = self.dims(ti);
            return Err(mismatch("mse", &[a, b], &[c, d]));
        }
        let p = self.val(pi).data();
        let n = p.len().max(1) as f64;
        let loss = p.iter().zip(self.val(ti).data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        Ok(self.push(Op::Mse(pi, ti), Tensor::matrix(1, 1, vec![loss])?))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NeuralError> {
        let xi = self.idx(x)?;
        let s = self.val(xi).data().iter().sum();
        Ok(self.push(Op::Sum(xi), Tensor::matrix(1, 1, vec![s])?))
    }

    /// Gradient of the `1 x 1` value `loss` with respect to every parameter.
    /// Parameters the loss does not touch get zero gradients.
    pub fn backward(&self, loss: Var) -> Result<GradRecord, NeuralError> {
        let li = self.idx(loss)?;
        if self.dims(li) != (1, 1) {
            let (r, c) = self.dims(li);
            return Err(mismatch("backward", &[1, 1], &[r, c]));
        }
        let mut record = GradRecord::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![1.0]);

        fn acc(grads: &mut [Option<Vec<f64>>], i: usize, delta: Vec<f64>) {
            match &mut grads[i] {
                Some(g) => g.iter_mut().zip(&delta).for_each(|(a, d)| *a += d),
                slot @ None => *slot = Some(delta),
            }
        }

        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            match &self.nodes[i].op {
                Op::Input => {}
                Op::Param(name) => record.accumulate(name, &g)?,
                Op::Linear { x, w, b } => {
                    let (batch, inp) = self.dims(*x);
                    let out = self.nodes[i].cols;
                    let mut dx = vec![0.0; batch * inp];
                    gemm(batch, out, inp, &g, (out, 1), self.val(*w).data(), (inp, 1), 0.0, &mut dx);
                    let mut dw = vec![0.0; out * inp];
                    gemm(out, batch, inp, &g, (1, out), self.val(*x).data(), (inp, 1), 0.0, &mut dw);
                    if let Some(b) = b {
                        let mut db = vec![0.0; out];
                        for row in g.chunks(out) {
                            db.iter_mut().zip(row).for_each(|(a, v)| *a += v);
                        }
                        acc(&mut grads, *b, db);
                    }
                    acc(&mut grads, *x, dx);
                    acc(&mut grads, *w, dw);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let (va, vb) = (self.val(*a).data(), self.val(*b).data());
                    let da = g.iter().zip(vb).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(va).map(|(g, x)| g * x).collect();
                    acc(&mut grads, *a, da);
                    acc(&mut grads, *b, db);
                }
                Op::Sigmoid(a) => {
                    let y = self.val(i).data();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect());
                }
                Op::Tanh(a) => {
                    let y = self.val(i).data();
                    acc(&mut grads, *a, g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect());
                }
                Op::OneMinus(a) => acc(&mut grads, *a, g.iter().map(|g| -g).collect()),
                Op::Aggregate { x, adj } => {
                    let (r, c) = self.dims(*x);
                    let mut dx = vec![0.0; r * c];
                    for (v, nbrs) in adj.neighbors.iter().enumerate() {
                        for &u in nbrs {
                            for k in 0..c {
                                dx[u * c + k] += g[v * c + k];
                            }
                        }
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Gather { x, index } => {
                    let (r, c) = self.dims(*x);
                    let mut dx = vec![0.0; r * c];
                    for (row, &j) in index.iter().enumerate() {
                        dx[row * c + j] = g[row];
                    }
                    acc(&mut grads, *x, dx);
                }
                Op::Mse(p, t) => {
                    let (vp, vt) = (self.val(*p).data(), self.val(*t).data());
                    let scale = 2.0 * g[0] / vp.len().max(1) as f64;
                    let dp: Vec<f64> = vp.iter().zip(vt).map(|(a, b)| scale * (a - b)).collect();
                    let dt = dp.iter().map(|v| -v).collect();
                    acc(&mut grads, *p, dp);
                    acc(&mut grads, *t, dt);
                }
                Op::Sum(x) => {
                    let n = self.val(*x).len();
                    acc(&mut grads, *x, vec![g[0]; n]);
                }
            }
        }
        Ok(record)
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
