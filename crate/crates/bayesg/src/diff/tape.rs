//! Tape-based reverse-mode automatic differentiation over dense f64
//! tensors. Operations append nodes in topological order; `backward`
//! sweeps the tape once in reverse.
//!
//! Shape mismatches are programming errors and panic with the primitive
//! name and the offending shapes. Non-finite forward values trip a debug
//! assertion.

use super::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddBroadcastRow(Var, Var),
    Mul(Var, Var),
    Matmul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Log(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    SliceRows(Var, usize, usize),
    SumAll(Var),
    MeanAll(Var),
    SumRows(Var),
    Scale(Var, f64),
    AddScalar(Var),
    Index(Var, usize),
    Reshape(Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradient map produced by `backward`: one entry per tape node, zeros for
/// nodes the root does not depend on.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var, tape: &Tape) -> Tensor {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros_like(tape.value(v)),
        }
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        debug_assert!(
            value.all_finite(),
            "non-finite forward value from {:?}",
            op
        );
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Differentiable input: receives a gradient entry in `backward`.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Non-differentiable input; structurally identical to a leaf but the
    /// distinction documents intent at call sites.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (ra, ca) = self.value(a).rows_cols();
        let (rb, cb) = self.value(b).rows_cols();
        if (ra, ca) == (rb, cb) {
            let data: Vec<f64> = self
                .value(a)
                .data()
                .iter()
                .zip(self.value(b).data())
                .map(|(x, y)| x + y)
                .collect();
            let t = Tensor::new(self.value(a).shape().to_vec(), data);
            self.push(t, Op::Add(a, b))
        } else if rb == 1 && cb == ca {
            // row-broadcast bias add
            let bdat = self.value(b).data().to_vec();
            let data: Vec<f64> = self
                .value(a)
                .data()
                .iter()
                .enumerate()
                .map(|(i, x)| x + bdat[i % ca])
                .collect();
            let t = Tensor::new(self.value(a).shape().to_vec(), data);
            self.push(t, Op::AddBroadcastRow(a, b))
        } else {
            panic!("add: incompatible shapes {:?} vs {:?}", self.value(a).shape(), self.value(b).shape());
        }
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let nb = self.scale(b, -1.0);
        self.add(a, nb)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(
            self.value(a).shape(),
            self.value(b).shape(),
            "mul: shape mismatch {:?} vs {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
        let data: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let t = Tensor::new(self.value(a).shape().to_vec(), data);
        self.push(t, Op::Mul(a, b))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.value(a).rows_cols();
        let (k2, n) = self.value(b).rows_cols();
        assert_eq!(
            k, k2,
            "matmul: inner dims differ: {:?} x {:?}",
            self.value(a).shape(),
            self.value(b).shape()
        );
        let av = self.value(a).data();
        let bv = self.value(b).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += x * brow[j];
                }
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::Matmul(a, b))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = map(self.value(a), sigmoid_scalar);
        self.push(t, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = map(self.value(a), |x| if x > 0.0 { x } else { 0.0 });
        self.push(t, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::exp);
        self.push(t, Op::Exp(a))
    }

    /// Requires strictly positive inputs.
    pub fn log(&mut self, a: Var) -> Var {
        let t = map(self.value(a), f64::ln);
        self.push(t, Op::Log(a))
    }

    /// Row-wise softmax (max-shifted for stability).
    pub fn softmax(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).rows_cols();
        let src = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &src[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                sum += e;
            }
            for j in 0..n {
                out[i * n + j] /= sum;
            }
        }
        let t = Tensor::new(self.value(a).shape().to_vec(), out);
        self.push(t, Op::SoftmaxRows(a))
    }

    /// Concatenate along columns; all inputs must have equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "concat: empty input list");
        let rows = self.value(parts[0]).rows_cols().0;
        let mut total_cols = 0;
        for &p in parts {
            let (r, c) = self.value(p).rows_cols();
            assert_eq!(r, rows, "concat: row mismatch {:?}", self.value(p).shape());
            total_cols += c;
        }
        let mut out = vec![0.0; rows * total_cols];
        let mut col_off = 0;
        for &p in parts {
            let (_, c) = self.value(p).rows_cols();
            let src = self.value(p).data();
            for i in 0..rows {
                out[i * total_cols + col_off..i * total_cols + col_off + c]
                    .copy_from_slice(&src[i * c..(i + 1) * c]);
            }
            col_off += c;
        }
        self.push(Tensor::matrix(rows, total_cols, out), Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, c0: usize, c1: usize) -> Var {
        let (m, n) = self.value(a).rows_cols();
        assert!(c0 < c1 && c1 <= n, "slice_cols: bad range {c0}..{c1} of {n}");
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(m * (c1 - c0));
        for i in 0..m {
            out.extend_from_slice(&src[i * n + c0..i * n + c1]);
        }
        self.push(Tensor::matrix(m, c1 - c0, out), Op::SliceCols(a, c0, c1))
    }

    pub fn slice_rows(&mut self, a: Var, r0: usize, r1: usize) -> Var {
        let (m, n) = self.value(a).rows_cols();
        assert!(r0 < r1 && r1 <= m, "slice_rows: bad range {r0}..{r1} of {m}");
        let src = self.value(a).data();
        let out = src[r0 * n..r1 * n].to_vec();
        self.push(Tensor::matrix(r1 - r0, n, out), Op::SliceRows(a, r0, r1))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::SumAll(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s / n), Op::MeanAll(a))
    }

    /// Sum along axis 1: [m, n] -> [m, 1].
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.value(a).rows_cols();
        let src = self.value(a).data();
        let out: Vec<f64> = (0..m).map(|i| src[i * n..(i + 1) * n].iter().sum()).collect();
        self.push(Tensor::matrix(m, 1, out), Op::SumRows(a))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| c * x);
        self.push(t, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let t = map(self.value(a), |x| x + c);
        self.push(t, Op::AddScalar(a))
    }

    /// Pick a single element (flat index) as a scalar.
    pub fn index(&mut self, a: Var, idx: usize) -> Var {
        assert!(idx < self.value(a).len(), "index: {idx} out of {}", self.value(a).len());
        let v = self.value(a).data()[idx];
        self.push(Tensor::scalar(v), Op::Index(a, idx))
    }

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Var {
        let t = self.value(a).reshaped(shape);
        self.push(t, Op::Reshape(a))
    }

    /// x @ w + b with b row-broadcast.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let xw = self.matmul(x, w);
        self.add(xw, b)
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients {
        assert!(
            self.value(root).is_scalar(),
            "backward: root must be scalar, got {:?}",
            self.value(root).shape()
        );
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(self.value(root).shape().to_vec(), vec![1.0]));

        for i in (0..self.nodes.len()).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[i].op {
                Op::Leaf => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, a.0, &g);
                    accumulate(&mut grads, b.0, &g);
                }
                Op::AddBroadcastRow(a, b) => {
                    accumulate(&mut grads, a.0, &g);
                    let (m, n) = self.value(*a).rows_cols();
                    let mut gb = vec![0.0; n];
                    for r in 0..m {
                        for c in 0..n {
                            gb[c] += g.data()[r * n + c];
                        }
                    }
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), gb);
                    accumulate(&mut grads, b.0, &gb);
                }
                Op::Mul(a, b) => {
                    let ga = elementwise(&g, self.value(*b), |x, y| x * y, self.value(*a));
                    let gb = elementwise(&g, self.value(*a), |x, y| x * y, self.value(*b));
                    accumulate(&mut grads, a.0, &ga);
                    accumulate(&mut grads, b.0, &gb);
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.value(*a).rows_cols();
                    let (_, n) = self.value(*b).rows_cols();
                    let gd = g.data();
                    let av = self.value(*a).data();
                    let bv = self.value(*b).data();
                    // dA = G B^T
                    let mut ga = vec![0.0; m * k];
                    for i2 in 0..m {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..n {
                                s += gd[i2 * n + j] * bv[p * n + j];
                            }
                            ga[i2 * k + p] = s;
                        }
                    }
                    // dB = A^T G
                    let mut gb = vec![0.0; k * n];
                    for p in 0..k {
                        for i2 in 0..m {
                            let x = av[i2 * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                gb[p * n + j] += x * gd[i2 * n + j];
                            }
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    let gb = Tensor::new(self.value(*b).shape().to_vec(), gb);
                    accumulate(&mut grads, a.0, &ga);
                    accumulate(&mut grads, b.0, &gb);
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].value;
                    let ga = elementwise(&g, y, |gi, yi| gi * yi * (1.0 - yi), self.value(*a));
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].value;
                    let ga = elementwise(&g, y, |gi, yi| gi * (1.0 - yi * yi), self.value(*a));
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    let ga = elementwise(&g, x, |gi, xi| if xi > 0.0 { gi } else { 0.0 }, x);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Exp(a) => {
                    let y = &self.nodes[i].value;
                    let ga = elementwise(&g, y, |gi, yi| gi * yi, self.value(*a));
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    let ga = elementwise(&g, x, |gi, xi| gi / xi, x);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &self.nodes[i].value;
                    let (m, n) = y.rows_cols();
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        let yr = &y.data()[r * n..(r + 1) * n];
                        let gr = &g.data()[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(yi, gi)| yi * gi).sum();
                        for c in 0..n {
                            ga[r * n + c] = yr[c] * (gr[c] - dot);
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::ConcatCols(parts) => {
                    let (rows, total_cols) = self.nodes[i].value.rows_cols();
                    let mut col_off = 0;
                    for &p in parts {
                        let (_, c) = self.value(p).rows_cols();
                        let mut gp = vec![0.0; rows * c];
                        for r in 0..rows {
                            gp[r * c..(r + 1) * c].copy_from_slice(
                                &g.data()[r * total_cols + col_off..r * total_cols + col_off + c],
                            );
                        }
                        let gp = Tensor::new(self.value(p).shape().to_vec(), gp);
                        accumulate(&mut grads, p.0, &gp);
                        col_off += c;
                    }
                }
                Op::SliceCols(a, c0, _c1) => {
                    let (m, n) = self.value(*a).rows_cols();
                    let (_, c) = self.nodes[i].value.rows_cols();
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        for j in 0..c {
                            ga[r * n + c0 + j] = g.data()[r * c + j];
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::SliceRows(a, r0, _r1) => {
                    let (_, n) = self.value(*a).rows_cols();
                    let mut ga = vec![0.0; self.value(*a).len()];
                    ga[r0 * n..r0 * n + g.len()].copy_from_slice(g.data());
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::SumAll(a) => {
                    let gv = g.item();
                    let ga = map(self.value(*a), |_| gv);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::MeanAll(a) => {
                    let gv = g.item() / self.value(*a).len() as f64;
                    let ga = map(self.value(*a), |_| gv);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::SumRows(a) => {
                    let (m, n) = self.value(*a).rows_cols();
                    let mut ga = vec![0.0; m * n];
                    for r in 0..m {
                        let gr = g.data()[r];
                        for c in 0..n {
                            ga[r * n + c] = gr;
                        }
                    }
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Scale(a, c) => {
                    let ga = map(&g, |x| c * x);
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga.data().to_vec());
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::AddScalar(a) => {
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), g.data().to_vec());
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Index(a, idx) => {
                    let mut ga = vec![0.0; self.value(*a).len()];
                    ga[*idx] = g.item();
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), ga);
                    accumulate(&mut grads, a.0, &ga);
                }
                Op::Reshape(a) => {
                    let ga = Tensor::new(self.value(*a).shape().to_vec(), g.data().to_vec());
                    accumulate(&mut grads, a.0, &ga);
                }
            }
        }
        Gradients { grads }
    }
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn map(t: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
}

fn elementwise(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64, shape_of: &Tensor) -> Tensor {
    let data: Vec<f64> = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(shape_of.shape().to_vec(), data)
}

fn accumulate(grads: &mut [Option<Tensor>], idx: usize, g: &Tensor) {
    match &mut grads[idx] {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => grads[idx] = Some(g.clone()),
    }
}
