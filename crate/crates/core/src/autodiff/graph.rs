use super::{AutodiffError, Result, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Min(Var, Var),
    /// `argmax[k]` is the flat index into the input that produced output element `k`.
    MaxOverSet { x: Var, argmax: Vec<usize> },
    GatherRows { x: Var, idx: Vec<usize> },
    ScatterAddRows { x: Var, idx: Vec<usize> },
    ScaleRows { x: Var, w: Vec<f64> },
    Sum(Var),
    Mean(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode tape.
///
/// Nodes are appended in evaluation order, so creation order is a valid
/// topological order and `backward` walks the tape from the end. Leaf
/// gradients persist across `backward` calls until [`Graph::zero_grad`].
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    leaf_grads: Vec<Option<Tensor>>,
}

fn shape_err(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::Shape { op, detail }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.leaf_grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Constant leaf; no gradient is tracked through it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.leaf_grads[v.0].as_ref()
    }

    pub fn zero_grad(&mut self) {
        self.leaf_grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = self.shape(a);
        let (k2, m) = self.shape(b);
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}x{k} times {k2}x{m}")));
        }
        let mut out = Tensor::zeros(n, m);
        gemm(
            n,
            k,
            m,
            self.value(a).data(),
            (k as isize, 1),
            self.value(b).data(),
            (m as isize, 1),
            out.data_mut(),
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        Ok(())
    }

    fn binary(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.rows(), va.cols(), data).expect("shape checked")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let out = self.binary(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let out = self.binary(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let out = self.binary(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    /// Elementwise minimum; ties route the gradient to `a`.
    pub fn min(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("min", a, b)?;
        let out = self.binary(a, b, |x, y| if y < x { y } else { x });
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Min(a, b), rg))
    }

    /// Adds a `1 x c` row to every row of an `n x c` tensor (bias add).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (n, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(shape_err("add_row", format!("{n}x{c} plus {:?}", self.shape(row))));
        }
        let r = self.value(row).data().to_vec();
        let mut out = self.value(a).clone();
        for chunk in out.data_mut().chunks_mut(c.max(1)) {
            for (x, b) in chunk.iter_mut().zip(&r) {
                *x += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).map(|x| x + s);
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        let out = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(out, Op::Softplus(a), rg)
    }

    /// Hard clamp; the gradient is zero where the input lies outside `[lo, hi]`.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(out, Op::Clamp(a, lo, hi), rg)
    }

    /// Segmented max pooling: output row `s` is the column-wise max of the
    /// input rows listed in `sets[s]`. The gradient goes to the first row
    /// attaining the max.
    pub fn max_over_set(&mut self, x: Var, sets: &[Vec<usize>]) -> Result<Var> {
        let (n, c) = self.shape(x);
        let xv = self.value(x);
        let mut out = Tensor::zeros(sets.len(), c);
        let mut argmax = vec![0usize; sets.len() * c];
        for (s, set) in sets.iter().enumerate() {
            let Some(&first) = set.first() else {
                return Err(shape_err("max_over_set", format!("set {s} is empty")));
            };
            if let Some(&bad) = set.iter().find(|&&i| i >= n) {
                return Err(shape_err("max_over_set", format!("row {bad} out of range for {n} rows")));
            }
            for col in 0..c {
                let mut best = first;
                let mut best_v = xv.get(first, col);
                for &i in &set[1..] {
                    let v = xv.get(i, col);
                    if v > best_v {
                        best_v = v;
                        best = i;
                    }
                }
                out.set(s, col, best_v);
                argmax[s * c + col] = best * c + col;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::MaxOverSet { x, argmax }, rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (n, c) = self.shape(x);
        if let Some(&bad) = idx.iter().find(|&&i| i >= n) {
            return Err(shape_err("gather_rows", format!("row {bad} out of range for {n} rows")));
        }
        let xv = self.value(x);
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(xv.row(i));
        }
        let out = Tensor::new(idx.len(), c, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::GatherRows { x, idx: idx.to_vec() }, rg))
    }

    /// Sums row `k` of `x` into output row `idx[k]` of an `n_out`-row tensor.
    pub fn scatter_add_rows(&mut self, x: Var, idx: &[usize], n_out: usize) -> Result<Var> {
        let (n, c) = self.shape(x);
        if idx.len() != n {
            return Err(shape_err("scatter_add_rows", format!("{} indices for {n} rows", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
            return Err(shape_err("scatter_add_rows", format!("target row {bad} >= {n_out}")));
        }
        let xv = self.value(x);
        let mut out = Tensor::zeros(n_out, c);
        for (k, &i) in idx.iter().enumerate() {
            let src = xv.row(k);
            let dst = &mut out.data_mut()[i * c..(i + 1) * c];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += s;
            }
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScatterAddRows { x, idx: idx.to_vec() }, rg))
    }

    /// Multiplies row `k` by the constant `w[k]`.
    pub fn scale_rows(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let (n, c) = self.shape(x);
        if w.len() != n {
            return Err(shape_err("scale_rows", format!("{} weights for {n} rows", w.len())));
        }
        let mut out = self.value(x).clone();
        for (r, &wr) in w.iter().enumerate() {
            out.data_mut()[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= wr);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::ScaleRows { x, w: w.to_vec() }, rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.data().iter().sum::<f64>() / v.len().max(1) as f64;
        let rg = self.rg(x);
        self.push(Tensor::scalar(s), Op::Mean(x), rg)
    }

    /// Row sums: `n x c` to `n x 1`.
    pub fn sum_cols(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let c = v.cols();
        let data = (0..v.rows()).map(|r| v.row(r).iter().sum()).collect();
        let out = Tensor::new(v.rows(), 1, data).expect("row sums");
        let _ = c;
        let rg = self.rg(x);
        self.push(out, Op::SumCols(x), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(shape_err("concat_cols", "no inputs".into()));
        };
        let n = self.shape(first).0;
        if let Some(p) = parts.iter().find(|&&p| self.shape(p).0 != n) {
            return Err(shape_err("concat_cols", format!("row count {} vs {n}", self.shape(*p).0)));
        }
        let total: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut data = Vec::with_capacity(n * total);
        for r in 0..n {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(r));
            }
        }
        let out = Tensor::new(n, total, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let (n, c) = self.shape(x);
        if start > end || end > c {
            return Err(shape_err("slice_cols", format!("columns {start}..{end} of {c}")));
        }
        let v = self.value(x);
        let mut data = Vec::with_capacity(n * (end - start));
        for r in 0..n {
            data.extend_from_slice(&v.row(r)[start..end]);
        }
        let out = Tensor::new(n, end - start, data)?;
        let rg = self.rg(x);
        Ok(self.push(out, Op::SliceCols { x, start }, rg))
    }

    /// Reverse pass from a scalar loss. Leaf gradients accumulate (`+=`).
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.shape(loss) != (1, 1) {
            return Err(AutodiffError::NonScalarLoss(self.shape(loss)));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::new();
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(Tensor::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                match &mut self.leaf_grads[i] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
        }
        Ok(())
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, contrib: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&contrib),
            slot @ None => *slot = Some(contrib),
        }
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = self.shape(*a);
                let m = self.shape(*b).1;
                if self.rg(*a) {
                    // dA = dC * B^T
                    let mut da = Tensor::zeros(n, k);
                    gemm(n, m, k, g.data(), (m as isize, 1), self.value(*b).data(), (1, m as isize), da.data_mut());
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    // dB = A^T * dC
                    let mut db = Tensor::zeros(k, m);
                    gemm(k, n, m, self.value(*a).data(), (1, k as isize), g.data(), (m as isize, 1), db.data_mut());
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, zip_map(g, self.value(*b), |gg, y| gg * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, zip_map(g, self.value(*a), |gg, x| gg * x));
                }
            }
            Op::Min(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let pick_a: Vec<bool> = va.data().iter().zip(vb.data()).map(|(x, y)| !(y < x)).collect();
                let ga: Vec<f64> = g.data().iter().zip(&pick_a).map(|(&gg, &p)| if p { gg } else { 0.0 }).collect();
                let gb: Vec<f64> = g.data().iter().zip(&pick_a).map(|(&gg, &p)| if p { 0.0 } else { gg }).collect();
                self.accumulate(grads, *a, Tensor::new(g.rows(), g.cols(), ga).expect("shape"));
                self.accumulate(grads, *b, Tensor::new(g.rows(), g.cols(), gb).expect("shape"));
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    let c = g.cols();
                    let mut acc = Tensor::zeros(1, c);
                    for r in 0..g.rows() {
                        for (d, s) in acc.data_mut().iter_mut().zip(g.row(r)) {
                            *d += s;
                        }
                    }
                    self.accumulate(grads, *row, acc);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.map(|x| x * s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Relu(a) => {
                let d = zip_map(g, self.value(*a), |gg, x| if x > 0.0 { gg } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Tanh(a) => self.accumulate(grads, *a, zip_map(g, out, |gg, y| gg * (1.0 - y * y))),
            Op::Exp(a) => self.accumulate(grads, *a, zip_map(g, out, |gg, y| gg * y)),
            Op::Log(a) => self.accumulate(grads, *a, zip_map(g, self.value(*a), |gg, x| gg / x)),
            Op::Softplus(a) => {
                self.accumulate(grads, *a, zip_map(g, self.value(*a), |gg, x| gg * sigmoid(x)));
            }
            Op::Clamp(a, lo, hi) => {
                let d = zip_map(g, self.value(*a), |gg, x| if x < *lo || x > *hi { 0.0 } else { gg });
                self.accumulate(grads, *a, d);
            }
            Op::MaxOverSet { x, argmax } => {
                let (n, c) = self.shape(*x);
                let mut d = Tensor::zeros(n, c);
                for (k, &flat) in argmax.iter().enumerate() {
                    d.data_mut()[flat] += g.data()[k];
                }
                self.accumulate(grads, *x, d);
            }
            Op::GatherRows { x, idx } => {
                let (n, c) = self.shape(*x);
                let mut d = Tensor::zeros(n, c);
                for (k, &r) in idx.iter().enumerate() {
                    let dst = &mut d.data_mut()[r * c..(r + 1) * c];
                    for (dd, s) in dst.iter_mut().zip(g.row(k)) {
                        *dd += s;
                    }
                }
                self.accumulate(grads, *x, d);
            }
            Op::ScatterAddRows { x, idx } => {
                let c = g.cols();
                let mut data = Vec::with_capacity(idx.len() * c);
                for &r in idx {
                    data.extend_from_slice(g.row(r));
                }
                self.accumulate(grads, *x, Tensor::new(idx.len(), c, data).expect("shape"));
            }
            Op::ScaleRows { x, w } => {
                let c = g.cols();
                let mut d = g.clone();
                for (r, &wr) in w.iter().enumerate() {
                    d.data_mut()[r * c..(r + 1) * c].iter_mut().for_each(|v| *v *= wr);
                }
                self.accumulate(grads, *x, d);
            }
            Op::Sum(x) => {
                let (n, c) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::filled(n, c, g.item()));
            }
            Op::Mean(x) => {
                let (n, c) = self.shape(*x);
                let denom = (n * c).max(1) as f64;
                self.accumulate(grads, *x, Tensor::filled(n, c, g.item() / denom));
            }
            Op::SumCols(x) => {
                let (n, c) = self.shape(*x);
                self.accumulate(grads, *x, Tensor::from_fn(n, c, |r, _| g.get(r, 0)));
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (n, c) = self.shape(p);
                    if self.rg(p) {
                        let d = Tensor::from_fn(n, c, |r, col| g.get(r, offset + col));
                        self.accumulate(grads, p, d);
                    }
                    offset += c;
                }
            }
            Op::SliceCols { x, start } => {
                let (n, c) = self.shape(*x);
                let w = g.cols();
                let d = Tensor::from_fn(n, c, |r, col| {
                    if col >= *start && col < start + w {
                        g.get(r, col - start)
                    } else {
                        0.0
                    }
                });
                self.accumulate(grads, *x, d);
            }
        }
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("matching shapes")
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
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

/// `c = a * b` for an `n x k` and `k x m` operand given by (row, col) strides.
#[allow(clippy::too_many_arguments)]
fn gemm(n: usize, k: usize, m: usize, a: &[f64], sa: (isize, isize), b: &[f64], sb: (isize, isize), c: &mut [f64]) {
    if n == 0 || m == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    // SAFETY: strides describe in-bounds views of `a` (n x k), `b` (k x m) and
    // the contiguous output `c` (n x m); lengths are checked by the callers.
    unsafe {
        matrixmultiply::dgemm(
            n,
            k,
            m,
            1.0,
            a.as_ptr(),
            sa.0,
            sa.1,
            b.as_ptr(),
            sb.0,
            sb.1,
            0.0,
            c.as_mut_ptr(),
            m as isize,
            1,
        );
    }
}
