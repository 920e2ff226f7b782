//! Reverse-mode differentiation over matrix operations.
//!
//! A [`Graph`] records every operation of one forward pass together with its
//! value. [`Graph::backward`] walks the record in reverse, seeded with the
//! adjoints of any number of output nodes, and adds parameter gradients into
//! a [`Gradients`] buffer.

use super::params::{Gradients, ParamId, ParameterStore};
use super::Matrix;
use crate::error::{Error, Result};

/// Node handle inside one graph.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Param(ParamId),
    Input,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Softplus(Var),
    SoftmaxRows(Var),
    Transpose(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    Im2Col {
        input: Var,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    SumAll(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
}

/// Adjoints of every node after a backward pass.
pub struct Adjoints(Vec<Option<Matrix>>);

impl Adjoints {
    pub fn of(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }
}

pub struct Graph<'p> {
    store: &'p ParameterStore,
    nodes: Vec<Node>,
}

fn add_into(slot: &mut Option<Matrix>, delta: Matrix) {
    match slot {
        Some(m) => m.data.iter_mut().zip(&delta.data).for_each(|(a, b)| *a += b),
        None => *slot = Some(delta),
    }
}

pub fn im2col(x: &Matrix, kernel: usize, stride: usize, pad: usize) -> Matrix {
    let len = x.rows;
    let out_rows = (len + 2 * pad - kernel) / stride + 1;
    let c = x.cols;
    let mut out = Matrix::zeros(out_rows, kernel * c);
    for r in 0..out_rows {
        for j in 0..kernel {
            let src = (r * stride + j) as isize - pad as isize;
            if src < 0 || src as usize >= len {
                continue;
            }
            let src_row = x.row(src as usize);
            out.data[r * kernel * c + j * c..r * kernel * c + (j + 1) * c].copy_from_slice(src_row);
        }
    }
    out
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Graph {
            store,
            nodes: Vec::new(),
        }
    }

    pub fn store(&self) -> &'p ParameterStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        let value = self.store.matrix(id);
        self.push(value, Op::Param(id))
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Input)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(Error::Shape(format!("matmul {ar}x{ac} by {br}x{bc}")));
        }
        let value = self.value(a).matmul(self.value(b));
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut value = self.value(a).clone();
        value.data.iter_mut().zip(&self.value(b).data).for_each(|(x, y)| *x += y);
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Adds a 1×c row to every row of a.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (_, ac) = self.shape(a);
        if self.shape(row) != (1, ac) {
            return Err(Error::Shape(format!(
                "add_row: row {:?} for {ac} columns",
                self.shape(row)
            )));
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data.clone();
        for chunk in value.data.chunks_mut(ac) {
            chunk.iter_mut().zip(&r).for_each(|(x, y)| *x += y);
        }
        Ok(self.push(value, Op::AddRow(a, row)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let mut value = self.value(a).clone();
        value.data.iter_mut().zip(&self.value(b).data).for_each(|(x, y)| *x *= y);
        Ok(self.push(value, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        self.push(value, Op::Scale(a, factor))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x + c);
        self.push(value, Op::AddScalar(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).map(f64::tanh);
        self.push(value, Op::Tanh(a))
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        self.push(value, Op::Softplus(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let c = value.cols;
        for row in value.data.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - max).exp());
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|x| *x /= sum);
        }
        self.push(value, Op::SoftmaxRows(a))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::Shape(format!(
                "slice_cols {start}..{} of {c}",
                start + len
            )));
        }
        let src = self.value(a);
        let mut value = Matrix::zeros(r, len);
        for i in 0..r {
            value.data[i * len..(i + 1) * len].copy_from_slice(&src.row(i)[start..start + len]);
        }
        Ok(self.push(value, Op::SliceCols(a, start)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Shape("concat of nothing".into()));
        };
        let rows = self.shape(*first).0;
        if parts.iter().any(|p| self.shape(*p).0 != rows) {
            return Err(Error::Shape("concat_cols row mismatch".into()));
        }
        let cols: usize = parts.iter().map(|p| self.shape(*p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut at = 0;
            for p in parts {
                let row = self.value(*p).row(i);
                value.data[i * cols + at..i * cols + at + row.len()].copy_from_slice(row);
                at += row.len();
            }
        }
        Ok(self.push(value, Op::ConcatCols(parts.to_vec())))
    }

    /// Unfolds a (length × channels) sequence into convolution patches.
    pub fn im2col(&mut self, a: Var, kernel: usize, stride: usize, pad: usize) -> Result<Var> {
        let (len, _) = self.shape(a);
        if kernel == 0 || stride == 0 || len + 2 * pad < kernel {
            return Err(Error::Shape(format!(
                "im2col kernel {kernel} stride {stride} pad {pad} on length {len}"
            )));
        }
        let value = im2col(self.value(a), kernel, stride, pad);
        Ok(self.push(
            value,
            Op::Im2Col {
                input: a,
                kernel,
                stride,
                pad,
            },
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::from_vec(1, 1, vec![s]), Op::SumAll(a))
    }

    /// Propagates the given output adjoints back through the record and adds
    /// parameter gradients into `grads`.
    pub fn backward(&self, seeds: &[(Var, Matrix)], grads: &mut Gradients) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("no forward pass recorded".into()));
        }
        if grads.0.len() != self.store.len() {
            return Err(Error::Backward("gradient buffer does not match store".into()));
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        for (v, g) in seeds {
            if g.shape() != self.shape(*v) {
                return Err(Error::Backward(format!(
                    "seed shape {:?} for node of shape {:?}",
                    g.shape(),
                    self.shape(*v)
                )));
            }
            add_into(&mut adj[v.0], g.clone());
        }
        for i in (0..self.nodes.len()).rev() {
            let Some(g) = adj[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => grads.accumulate(self.store.slice(*id), &g),
                Op::Input => {}
                Op::MatMul(a, b) => {
                    let da = g.matmul(&self.value(*b).transpose());
                    let db = self.value(*a).transpose().matmul(&g);
                    add_into(&mut adj[a.0], da);
                    add_into(&mut adj[b.0], db);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj[a.0], g.clone());
                    add_into(&mut adj[b.0], g.clone());
                }
                Op::AddRow(a, row) => {
                    let mut dr = Matrix::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        dr.data.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                    add_into(&mut adj[a.0], g.clone());
                    add_into(&mut adj[row.0], dr);
                }
                Op::Mul(a, b) => {
                    let mut da = g.clone();
                    da.data.iter_mut().zip(&self.value(*b).data).for_each(|(x, y)| *x *= y);
                    let mut db = g.clone();
                    db.data.iter_mut().zip(&self.value(*a).data).for_each(|(x, y)| *x *= y);
                    add_into(&mut adj[a.0], da);
                    add_into(&mut adj[b.0], db);
                }
                Op::Scale(a, f) => add_into(&mut adj[a.0], g.map(|x| x * f)),
                Op::AddScalar(a) => add_into(&mut adj[a.0], g.clone()),
                Op::Tanh(a) => {
                    let mut d = g.clone();
                    d.data.iter_mut().zip(&node.value.data).for_each(|(x, y)| *x *= 1.0 - y * y);
                    add_into(&mut adj[a.0], d);
                }
                Op::Softplus(a) => {
                    let mut d = g.clone();
                    d.data
                        .iter_mut()
                        .zip(&self.value(*a).data)
                        .for_each(|(x, y)| *x *= sigmoid(*y));
                    add_into(&mut adj[a.0], d);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut d = g.clone();
                    for (drow, yrow) in d.data.chunks_mut(y.cols).zip(y.data.chunks(y.cols)) {
                        let dot: f64 = drow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                        drow.iter_mut().zip(yrow).for_each(|(x, yv)| *x = yv * (*x - dot));
                    }
                    add_into(&mut adj[a.0], d);
                }
                Op::Transpose(a) => add_into(&mut adj[a.0], g.transpose()),
                Op::SliceCols(a, start) => {
                    let (r, c) = self.shape(*a);
                    let mut d = Matrix::zeros(r, c);
                    for row in 0..r {
                        d.data[row * c + start..row * c + start + g.cols].copy_from_slice(g.row(row));
                    }
                    add_into(&mut adj[a.0], d);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let (r, c) = self.shape(*p);
                        let mut d = Matrix::zeros(r, c);
                        for row in 0..r {
                            d.data[row * c..(row + 1) * c].copy_from_slice(&g.row(row)[at..at + c]);
                        }
                        at += c;
                        add_into(&mut adj[p.0], d);
                    }
                }
                Op::Im2Col {
                    input,
                    kernel,
                    stride,
                    pad,
                } => {
                    let (len, c) = self.shape(*input);
                    let mut d = Matrix::zeros(len, c);
                    for r in 0..g.rows {
                        for j in 0..*kernel {
                            let src = (r * stride + j) as isize - *pad as isize;
                            if src < 0 || src as usize >= len {
                                continue;
                            }
                            let src = src as usize;
                            let from = &g.data[r * kernel * c + j * c..r * kernel * c + (j + 1) * c];
                            d.data[src * c..(src + 1) * c]
                                .iter_mut()
                                .zip(from)
                                .for_each(|(x, y)| *x += y);
                        }
                    }
                    add_into(&mut adj[input.0], d);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    add_into(&mut adj[a.0], Matrix::from_vec(r, c, vec![g.data[0]; r * c]));
                }
            }
            adj[i] = Some(g);
        }
        Ok(Adjoints(adj))
    }

    /// Backward from a 1×1 loss node.
    pub fn backward_scalar(&self, loss: Var, grads: &mut Gradients) -> Result<Adjoints> {
        if self.nodes.is_empty() {
            return Err(Error::Backward("no forward pass recorded".into()));
        }
        if self.shape(loss) != (1, 1) {
            return Err(Error::Backward("loss must be 1x1".into()));
        }
        self.backward(&[(loss, Matrix::from_vec(1, 1, vec![1.0]))], grads)
    }
}

/// Worst relative error between the analytic gradient of Σ f(params) and
/// central differences (h = 1e-5) over every parameter, using
/// |a − n| / max(|a|, |n|, 1e-6).
pub fn param_grad_error(
    store: &ParameterStore,
    f: impl Fn(&mut Graph) -> Var,
) -> f64 {
    let mut grads = store.zero_grads();
    {
        let mut g = Graph::new(store);
        let out = f(&mut g);
        let loss = g.sum_all(out);
        g.backward_scalar(loss, &mut grads).unwrap();
    }
    let eval = |s: &ParameterStore| {
        let mut g = Graph::new(s);
        let out = f(&mut g);
        g.value(out).data.iter().sum::<f64>()
    };
    let h = 1e-5;
    let mut worst = 0.0f64;
    let mut s = store.clone();
    for i in 0..store.len() {
        let orig = s.data()[i];
        s.data_mut()[i] = orig + h;
        let up = eval(&s);
        s.data_mut()[i] = orig - h;
        let dn = eval(&s);
        s.data_mut()[i] = orig;
        let num = (up - dn) / (2.0 * h);
        let ana = grads.0[i];
        let err = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::nets::params::fan_in_init;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(shapes: &[(&str, usize, usize)], seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        for (n, r, c) in shapes {
            s.add(n, fan_in_init(*r, *c, 1.0, &mut rng)).unwrap();
        }
        s
    }

    #[test]
    fn every_op_matches_finite_differences() {
        let s = store_with(&[("x", 6, 4), ("w", 4, 3), ("b", 1, 3), ("k", 12, 4)], 3);
        let ids: Vec<ParamId> = ["x", "w", "b", "k"].iter().map(|n| s.find(n).unwrap()).collect();
        let err = param_grad_error(&s, |g| {
            let x = g.param(ids[0]);
            let w = g.param(ids[1]);
            let b = g.param(ids[2]);
            let k = g.param(ids[3]);
            let patches = g.im2col(x, 3, 2, 1).unwrap();
            let conv = g.matmul(patches, k).unwrap();
            let t = g.tanh(conv);
            let y = g.matmul(t, w).unwrap();
            let y = g.add_row(y, b).unwrap();
            let sm = g.softmax_rows(y);
            let sp = g.softplus(y);
            let m = g.mul(sm, sp).unwrap();
            let a = g.slice_cols(m, 1, 2).unwrap();
            let tr = g.transpose(a);
            let tt = g.transpose(tr);
            let c = g.concat_cols(&[tt, a]).unwrap();
            let sc = g.scale(c, 1.7);
            let sh = g.add_scalar(sc, 0.3);
            let sq = g.mul(sh, sh).unwrap();
            g.add(sq, c).unwrap()
        });
        assert!(err < 1e-4, "worst relative error {err}");
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let s = store_with(&[("w", 2, 2)], 1);
        let mut g = Graph::new(&s);
        let w = g.param(s.find("w").unwrap());
        let zero = g.scale(w, 0.0);
        let loss = g.sum_all(zero);
        let mut grads = s.zero_grads();
        g.backward_scalar(loss, &mut grads).unwrap();
        assert!(grads.0.iter().all(|x| *x == 0.0));
    }

    #[test]
    fn accumulation_is_linear() {
        let s = store_with(&[("w", 3, 2)], 2);
        let mut g = Graph::new(&s);
        let w = g.param(s.find("w").unwrap());
        let t = g.tanh(w);
        let loss = g.sum_all(t);
        let mut once = s.zero_grads();
        g.backward_scalar(loss, &mut once).unwrap();
        let mut twice = s.zero_grads();
        g.backward_scalar(loss, &mut twice).unwrap();
        g.backward_scalar(loss, &mut twice).unwrap();
        for (a, b) in once.0.iter().zip(&twice.0) {
            assert_eq!(2.0 * a, *b);
        }
    }

    #[test]
    fn backward_without_forward_fails() {
        let s = store_with(&[("w", 1, 1)], 0);
        let g = Graph::new(&s);
        let mut grads = s.zero_grads();
        assert!(matches!(
            g.backward(&[], &mut grads),
            Err(Error::Backward(_))
        ));
    }

    #[test]
    fn shape_errors() {
        let s = store_with(&[("a", 2, 3), ("b", 2, 3)], 0);
        let mut g = Graph::new(&s);
        let a = g.param(s.find("a").unwrap());
        let b = g.param(s.find("b").unwrap());
        assert!(g.matmul(a, b).is_err());
        assert!(g.add_row(a, b).is_err());
        assert!(g.slice_cols(a, 2, 2).is_err());
    }

    #[test]
    fn im2col_layout() {
        let x = Matrix::from_vec(4, 1, vec![1.0, 2.0, 3.0, 4.0]);
        let p = im2col(&x, 3, 2, 1);
        assert_eq!(p.shape(), (2, 3));
        assert_eq!(p.data, vec![0.0, 1.0, 2.0, 2.0, 3.0, 4.0]);
    }
}
