//! Reverse-mode differentiation over batched matrices.
//!
//! A [`Tape`] records every intermediate value together with the primitive
//! that produced it. Values are `rows x cols` matrices where rows usually index
//! batch elements. [`Tape::backward`] walks the record in reverse and returns
//! the gradient of a scalar (`1 x 1`) node with respect to every parameter
//! slot registered through [`Tape::param`].

use super::matrix::{argmax, gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Constant,
    Param(usize),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    LeakyRelu(Var, f64),
    Exp(Var),
    Log(Var),
    ClampMin(Var, f64),
    LogSoftmax(Var),
    Softmax(Var),
    LogSumExp(Var),
    SumCols(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Broadcast(Var),
    Concat(Var, Var),
    Gather(Var, Vec<usize>),
    ArgmaxOneHot,
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar with respect to parameter slots.
#[derive(Debug, Clone)]
pub struct Gradients {
    slots: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient for `slot`, or `None` when the slot was not registered or
    /// the loss does not depend on it.
    pub fn slot(&self, slot: usize) -> Option<&Matrix> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn into_slots(self) -> Vec<Option<Matrix>> {
        self.slots
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn same_shape(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Learnable leaf; its gradient is reported under `slot`.
    pub fn param(&mut self, slot: usize, value: &Matrix) -> Var {
        self.push(value.clone(), Op::Param(slot), true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols != vb.rows {
            return Err(Error::Shape(format!(
                "matmul: {:?} x {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = Matrix::zeros(va.rows, vb.cols);
        gemm(va, false, vb, false, &mut out, 0.0);
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), ng))
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (va, vr) = (self.value(a), self.value(row));
        if vr.rows != 1 || vr.cols != va.cols {
            return Err(Error::Shape(format!(
                "add_row: {:?} + {:?}",
                va.shape(),
                vr.shape()
            )));
        }
        let mut out = va.clone();
        for r in 0..out.rows {
            for (o, b) in out.row_mut(r).iter_mut().zip(&vr.data) {
                *o += b;
            }
        }
        let ng = self.needs(a) || self.needs(row);
        Ok(self.push(out, Op::AddRow(a, row), ng))
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "elementwise")?;
        let data = va.data.iter().zip(&vb.data).map(|(&x, &y)| f(x, y)).collect();
        let out = Matrix {
            rows: va.rows,
            cols: va.cols,
            data,
        };
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::AddScalar(a), |x| x + c)
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.unary(a, Op::LeakyRelu(a, slope), |x| if x > 0.0 { x } else { slope * x })
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, Op::Exp(a), f64::exp)
    }

    pub fn log(&mut self, a: Var) -> Var {
        self.unary(a, Op::Log(a), f64::ln)
    }

    /// `max(a, floor)`; entries at the floor receive no gradient.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, Op::ClampMin(a, floor), |x| x.max(floor))
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let lse = super::functions::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v -= lse);
        }
        let ng = self.needs(a);
        self.push(out, Op::LogSoftmax(a), ng)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for r in 0..out.rows {
            let row = out.row_mut(r);
            let lse = super::functions::log_sum_exp(row);
            row.iter_mut().for_each(|v| *v = (*v - lse).exp());
        }
        let ng = self.needs(a);
        self.push(out, Op::Softmax(a), ng)
    }

    /// Row-wise log-sum-exp, `B x n -> B x 1`.
    pub fn log_sum_exp(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = (0..va.rows)
            .map(|r| super::functions::log_sum_exp(va.row(r)))
            .collect();
        let out = Matrix {
            rows: va.rows,
            cols: 1,
            data,
        };
        let ng = self.needs(a);
        self.push(out, Op::LogSumExp(a), ng)
    }

    /// Row-wise sum, `B x n -> B x 1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = (0..va.rows).map(|r| va.row(r).iter().sum()).collect();
        let out = Matrix {
            rows: va.rows,
            cols: 1,
            data,
        };
        let ng = self.needs(a);
        self.push(out, Op::SumCols(a), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let ng = self.needs(a);
        self.push(Matrix::from_vec(1, 1, vec![s]).unwrap(), Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::Shape("mean of an empty matrix".into()));
        }
        let s = va.data.iter().sum::<f64>() / va.len() as f64;
        let ng = self.needs(a);
        Ok(self.push(Matrix::from_vec(1, 1, vec![s]).unwrap(), Op::Mean(a), ng))
    }

    /// Inner product of two equally shaped nodes.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "dot")?;
        let s = va.data.iter().zip(&vb.data).map(|(x, y)| x * y).sum();
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Matrix::from_vec(1, 1, vec![s]).unwrap(), Op::Dot(a, b), ng))
    }

    /// Repeats a `1 x n` row `rows` times.
    pub fn broadcast_rows(&mut self, a: Var, rows: usize) -> Result<Var> {
        let va = self.value(a);
        if va.rows != 1 {
            return Err(Error::Shape(format!("broadcast_rows of {:?}", va.shape())));
        }
        let mut data = Vec::with_capacity(rows * va.cols);
        for _ in 0..rows {
            data.extend_from_slice(&va.data);
        }
        let out = Matrix {
            rows,
            cols: va.cols,
            data,
        };
        let ng = self.needs(a);
        Ok(self.push(out, Op::Broadcast(a), ng))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).hcat(self.value(b))?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat(a, b), ng))
    }

    /// Picks entry `index[r]` of every row, `B x n -> B x 1`.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let va = self.value(a);
        if index.len() != va.rows || index.iter().any(|&i| i >= va.cols) {
            return Err(Error::Shape(format!(
                "gather of {} indices from {:?}",
                index.len(),
                va.shape()
            )));
        }
        let data = index.iter().enumerate().map(|(r, &c)| va.get(r, c)).collect();
        let out = Matrix {
            rows: va.rows,
            cols: 1,
            data,
        };
        let ng = self.needs(a);
        Ok(self.push(out, Op::Gather(a, index.to_vec()), ng))
    }

    /// Hard one-hot of each row's argmax. Has no derivative; `backward`
    /// fails if a gradient must flow through it.
    pub fn argmax_one_hot(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let mut out = Matrix::zeros(va.rows, va.cols);
        for r in 0..va.rows {
            let k = argmax(va.row(r));
            out.data[r * va.cols + k] = 1.0;
        }
        let ng = self.needs(a);
        self.push(out, Op::ArgmaxOneHot, ng)
    }

    /// Gradient of the scalar node `loss` with respect to every parameter slot.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.shape() != (1, 1) {
            return Err(Error::Shape(format!(
                "backward needs a scalar loss, got {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Matrix::from_vec(1, 1, vec![1.0]).unwrap());
        let mut slots: Vec<Option<Matrix>> = Vec::new();

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            match &node.op {
                Op::Constant => {}
                Op::Param(slot) => {
                    if slots.len() <= *slot {
                        slots.resize(*slot + 1, None);
                    }
                    match &mut slots[*slot] {
                        Some(acc) => acc.add_assign(&g),
                        empty => *empty = Some(g),
                    }
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let mut ga = Matrix::zeros(va.rows, va.cols);
                        gemm(&g, false, vb, true, &mut ga, 0.0);
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(vb.rows, vb.cols);
                        gemm(va, true, &g, false, &mut gb, 0.0);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        accumulate(&mut grads, *row, g.col_sums());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, g.map(|v| -v));
                    }
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, hadamard(&g, self.value(*b)));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, hadamard(&g, self.value(*a)));
                    }
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, g.map(|v| c * v)),
                Op::AddScalar(a) => accumulate(&mut grads, *a, g),
                Op::LeakyRelu(a, slope) => {
                    let mut ga = g;
                    for (gv, &x) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        if x <= 0.0 {
                            *gv *= slope;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Exp(a) => accumulate(&mut grads, *a, hadamard(&g, &node.value)),
                Op::Log(a) => {
                    let mut ga = g;
                    for (gv, &x) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        *gv /= x;
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ClampMin(a, floor) => {
                    let mut ga = g;
                    for (gv, &x) in ga.data.iter_mut().zip(&self.value(*a).data) {
                        if x < *floor {
                            *gv = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmax(a) => {
                    // dx = g - softmax(x) * rowsum(g)
                    let mut ga = g;
                    for r in 0..ga.rows {
                        let s: f64 = ga.row(r).iter().sum();
                        let y = node.value.row(r);
                        for (gv, &yv) in ga.row_mut(r).iter_mut().zip(y) {
                            *gv -= yv.exp() * s;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    // dx = s * (g - <g, s>)
                    let mut ga = g;
                    for r in 0..ga.rows {
                        let s = node.value.row(r);
                        let inner: f64 = ga.row(r).iter().zip(s).map(|(x, y)| x * y).sum();
                        for (gv, &sv) in ga.row_mut(r).iter_mut().zip(s) {
                            *gv = sv * (*gv - inner);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSumExp(a) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        let lse = node.value.data[r];
                        let gr = g.data[r];
                        for (o, &x) in ga.row_mut(r).iter_mut().zip(va.row(r)) {
                            *o = gr * (x - lse).exp();
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumCols(a) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    for r in 0..va.rows {
                        ga.row_mut(r).iter_mut().for_each(|o| *o = g.data[r]);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let va = self.value(*a);
                    let mut scale = g.data[0];
                    if matches!(node.op, Op::Mean(_)) {
                        scale /= va.len() as f64;
                    }
                    let ga = Matrix {
                        rows: va.rows,
                        cols: va.cols,
                        data: vec![scale; va.len()],
                    };
                    accumulate(&mut grads, *a, ga);
                }
                Op::Dot(a, b) => {
                    let s = g.data[0];
                    if self.needs(*a) {
                        accumulate(&mut grads, *a, self.value(*b).map(|v| s * v));
                    }
                    if self.needs(*b) {
                        accumulate(&mut grads, *b, self.value(*a).map(|v| s * v));
                    }
                }
                Op::Broadcast(a) => accumulate(&mut grads, *a, g.col_sums()),
                Op::Concat(a, b) => {
                    let ca = self.value(*a).cols;
                    let cb = self.value(*b).cols;
                    if self.needs(*a) {
                        let mut ga = Matrix::zeros(g.rows, ca);
                        for r in 0..g.rows {
                            ga.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                        }
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let mut gb = Matrix::zeros(g.rows, cb);
                        for r in 0..g.rows {
                            gb.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                        }
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Gather(a, index) => {
                    let va = self.value(*a);
                    let mut ga = Matrix::zeros(va.rows, va.cols);
                    for (r, &c) in index.iter().enumerate() {
                        ga.data[r * va.cols + c] = g.data[r];
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ArgmaxOneHot => {
                    if g.data.iter().any(|&v| v != 0.0) {
                        return Err(Error::Capability(
                            "argmax one-hot has no derivative; use a relaxed sample on the gradient path"
                                .into(),
                        ));
                    }
                }
            }
        }
        Ok(Gradients { slots })
    }
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix {
        rows: a.rows,
        cols: a.cols,
        data: a.data.iter().zip(&b.data).map(|(x, y)| x * y).collect(),
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(acc) => acc.add_assign(&g),
        empty => *empty = Some(g),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central differences of `f` around `x` for every entry.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x.rows, x.cols);
        for i in 0..x.len() {
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp.data[i] += h;
            xm.data[i] -= h;
            out.data[i] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        for (x, y) in a.data.iter().zip(&b.data) {
            let scale = x.abs().max(y.abs()).max(1e-3);
            assert!((x - y).abs() / scale < tol, "{x} vs {y}");
        }
    }

    fn sample_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng::stream(seed, 0);
        let mut data = vec![0.0; rows * cols];
        crate::rng::fill_normal(&mut rng, &mut data);
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    #[test]
    fn dot_gradient_is_other_operand() {
        let w = Matrix::row_vector(&[0.5, -1.0, 2.0]);
        let x = Matrix::row_vector(&[3.0, 4.0, -5.0]);
        let mut t = Tape::new();
        let wv = t.param(0, &w);
        let xv = t.constant(x.clone());
        let loss = t.dot(wv, xv).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.slot(0).unwrap(), &x);
    }

    #[test]
    fn unused_parameter_has_no_gradient() {
        let mut t = Tape::new();
        let a = t.param(0, &Matrix::row_vector(&[1.0, 2.0]));
        let _b = t.param(1, &Matrix::row_vector(&[3.0]));
        let loss = t.sum(a);
        let g = t.backward(loss).unwrap();
        assert!(g.slot(1).is_none());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let a = t.param(0, &Matrix::row_vector(&[1.0, 2.0]));
        assert!(matches!(t.backward(a), Err(Error::Shape(_))));
    }

    #[test]
    fn argmax_on_gradient_path_is_capability_error() {
        let mut t = Tape::new();
        let a = t.param(0, &Matrix::row_vector(&[1.0, 2.0]));
        let h = t.argmax_one_hot(a);
        let w = t.constant(Matrix::row_vector(&[1.0, -1.0]));
        let loss = t.dot(h, w).unwrap();
        assert!(matches!(t.backward(loss), Err(Error::Capability(_))));
    }

    #[test]
    fn argmax_off_gradient_path_is_fine() {
        let mut t = Tape::new();
        let a = t.param(0, &Matrix::row_vector(&[1.0, 2.0]));
        let c = t.constant(Matrix::row_vector(&[0.3, 0.1]));
        let h = t.argmax_one_hot(c);
        let loss = t.dot(a, h).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.slot(0).unwrap().data, vec![1.0, 0.0]);
    }

    /// Composite graph touching every differentiable primitive.
    fn composite(t: &mut Tape, x: Var, w: Var, b: Var, idx: &[usize]) -> Var {
        let h = t.matmul(x, w).unwrap();
        let h = t.add_row(h, b).unwrap();
        let h = t.leaky_relu(h, 0.01);
        let ls = t.log_softmax(h);
        let sm = t.softmax(h);
        let e = t.exp(ls);
        let m = t.mul(e, sm).unwrap();
        let m = t.add_scalar(m, 1.0);
        let l = t.log(m);
        let l = t.clamp_min(l, -50.0);
        let lse = t.log_sum_exp(h);
        let sc = t.sum_cols(l);
        let d = t.sub(lse, sc).unwrap();
        let d = t.scale(d, 0.7);
        let g = t.gather(ls, idx).unwrap();
        let c = t.concat_cols(d, g).unwrap();
        let row = t.sum(b);
        let rowm = t.mean(row).unwrap();
        let cs = t.sum(c);
        t.add(cs, rowm).unwrap()
    }

    #[test]
    fn composite_matches_finite_differences() {
        let x = sample_matrix(5, 3, 1);
        let w = sample_matrix(3, 4, 2);
        let b = sample_matrix(1, 4, 3);
        let idx = [0, 3, 1, 2, 2];
        let eval = |w: &Matrix, b: &Matrix| {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let wv = t.param(0, w);
            let bv = t.param(1, b);
            let loss = composite(&mut t, xv, wv, bv, &idx);
            (t.scalar(loss), t.backward(loss).unwrap())
        };
        let (_, grads) = eval(&w, &b);
        let gw = numeric_grad(&w, |w2| eval(w2, &b).0);
        let gb = numeric_grad(&b, |b2| eval(&w, b2).0);
        assert_close(grads.slot(0).unwrap(), &gw, 1e-5);
        assert_close(grads.slot(1).unwrap(), &gb, 1e-5);
    }

    #[test]
    fn broadcast_gradient_sums_rows() {
        let mut t = Tape::new();
        let a = t.param(0, &Matrix::row_vector(&[1.0, 2.0]));
        let bcast = t.broadcast_rows(a, 3).unwrap();
        let loss = t.sum(bcast);
        let g = t.backward(loss).unwrap();
        assert_eq!(g.slot(0).unwrap().data, vec![3.0, 3.0]);
    }
}
