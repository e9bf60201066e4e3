//! Minimal reverse-mode autodiff over `f64` matrices.
//!
//! A [`Tape`] records a fresh graph per forward pass; [`Tape::backward`]
//! walks it once and accumulates gradients for every node. The op set is
//! exactly what the decoder, heads and losses need — nothing dynamic beyond
//! that.
//!
//! All kernels are written with explicit per-row loops in index order. That
//! keeps every output row a function of its own inputs only, so appending
//! extra (fully masked) rows to a batch cannot perturb existing rows even at
//! the bit level. The denoising-isolation guarantee rests on this.

use std::cell::RefCell;

use ndarray::Array2;

pub type Matrix = Array2<f64>;

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    /// a: n×d plus row vector b: 1×d broadcast over rows.
    AddRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var, Matrix),
    Transpose(Var),
    Sigmoid(Var),
    Relu(Var),
    Abs(Var),
    Sqrt(Var),
    /// ln(x / (1 - x)) with inputs clamped to [eps, 1-eps]; gradient is zero
    /// where the clamp was active.
    Logit(Var),
    /// Row-wise softmax of x plus an optional additive mask (0 or -inf).
    SoftmaxRows(Var, Option<Matrix>),
    /// Row-wise layer norm with learnable gain/bias (both 1×d).
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
    },
    SumAll(Var),
    MeanAll(Var),
    GatherRows(Var, Vec<usize>),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
        len: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
        len: usize,
    },
    MinEl(Var, Var),
    MaxEl(Var, Var),
    /// 2D sinusoidal positional encoding of points (n×2 in the unit square)
    /// into n×(4*feats).
    PosEnc2d {
        x: Var,
        feats: usize,
    },
    /// Element-wise binary cross entropy with logits against constant
    /// targets, numerically stable form.
    BceWithLogits {
        logits: Var,
        targets: Matrix,
    },
}

struct Node {
    value: Matrix,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Gradients of one scalar root w.r.t. every node on the tape.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

const LOGIT_EPS: f64 = 1e-6;

/// Row-stable matmul: every output row accumulates over the inner dimension
/// in ascending index order, independently of the other rows.
pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let (n, k) = a.dim();
    let (kb, m) = b.dim();
    assert_eq!(k, kb, "matmul shape mismatch: {n}x{k} @ {kb}x{m}");
    let a_s = a.as_slice().expect("standard layout");
    let b_s = b.as_slice().expect("standard layout");
    let mut c = vec![0.0; n * m];
    for i in 0..n {
        let c_row = &mut c[i * m..(i + 1) * m];
        for kk in 0..k {
            let aik = a_s[i * k + kk];
            let b_row = &b_s[kk * m..(kk + 1) * m];
            for j in 0..m {
                c_row[j] += aik * b_row[j];
            }
        }
    }
    Matrix::from_shape_vec((n, m), c).expect("shape")
}

fn transpose(a: &Matrix) -> Matrix {
    let (n, m) = a.dim();
    let mut out = Matrix::zeros((m, n));
    for i in 0..n {
        for j in 0..m {
            out[[j, i]] = a[[i, j]];
        }
    }
    out
}

/// Angular frequencies for the sinusoidal encoding: geometric ramp from one
/// full period across the unit interval up to `POSENC_MAX_CYCLES` periods.
const POSENC_MAX_CYCLES: f64 = 32.0;

fn posenc_freq(f: usize, feats: usize) -> f64 {
    let exponent = if feats > 1 {
        f as f64 / (feats as f64 - 1.0)
    } else {
        0.0
    };
    2.0 * std::f64::consts::PI * POSENC_MAX_CYCLES.powf(exponent)
}

/// Plain (non-tape) positional encoding for constant points.
pub fn posenc2d(points: &Matrix, feats: usize) -> Matrix {
    let n = points.nrows();
    assert_eq!(points.ncols(), 2, "posenc2d expects n×2 points");
    let mut out = Matrix::zeros((n, 4 * feats));
    for i in 0..n {
        for (coord, base) in [(points[[i, 0]], 0), (points[[i, 1]], 2 * feats)] {
            for f in 0..feats {
                let arg = coord * posenc_freq(f, feats);
                out[[i, base + 2 * f]] = arg.sin();
                out[[i, base + 2 * f + 1]] = arg.cos();
            }
        }
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Matrix, op: Op) -> Var {
        debug_assert!(value.is_standard_layout());
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var(nodes.len() - 1)
    }

    /// Register an input (parameter or constant). Gradients are computed for
    /// every leaf; callers read out only the ones they care about.
    pub fn leaf(&self, value: Matrix) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, var: Var) -> Matrix {
        self.nodes.borrow()[var.0].value.clone()
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes.borrow()[var.0].value.dim()
    }

    pub fn scalar_value(&self, var: Var) -> f64 {
        let nodes = self.nodes.borrow();
        let v = &nodes[var.0].value;
        assert_eq!(v.dim(), (1, 1), "scalar_value on non-scalar node");
        v[[0, 0]]
    }

    fn with<R>(&self, var: Var, f: impl FnOnce(&Matrix) -> R) -> R {
        f(&self.nodes.borrow()[var.0].value)
    }

    fn with2<R>(&self, a: Var, b: Var, f: impl FnOnce(&Matrix, &Matrix) -> R) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a.0].value, &nodes[b.0].value)
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| matmul(x, y));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| x + y);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| x - y);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| x * y);
        self.push(value, Op::Mul(a, b))
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| x / y);
        self.push(value, Op::Div(a, b))
    }

    pub fn add_row(&self, a: Var, row: Var) -> Var {
        let value = self.with2(a, row, |x, r| {
            assert_eq!(r.nrows(), 1, "add_row expects a 1×d row vector");
            assert_eq!(x.ncols(), r.ncols());
            let mut out = x.clone();
            for mut out_row in out.rows_mut() {
                for (o, v) in out_row.iter_mut().zip(r.row(0)) {
                    *o += v;
                }
            }
            out
        });
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let value = self.with(a, |x| x * c);
        self.push(value, Op::Scale(a, c))
    }

    pub fn add_const(&self, a: Var, c: Matrix) -> Var {
        let value = self.with(a, |x| x + &c);
        self.push(value, Op::AddConst(a, c))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let value = self.with(a, transpose);
        self.push(value, Op::Transpose(a))
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let value = self.with(a, |x| x.mapv(|v| 1.0 / (1.0 + (-v).exp())));
        self.push(value, Op::Sigmoid(a))
    }

    pub fn relu(&self, a: Var) -> Var {
        let value = self.with(a, |x| x.mapv(|v| if v > 0.0 { v } else { 0.0 }));
        self.push(value, Op::Relu(a))
    }

    pub fn abs(&self, a: Var) -> Var {
        let value = self.with(a, |x| x.mapv(f64::abs));
        self.push(value, Op::Abs(a))
    }

    pub fn sqrt(&self, a: Var) -> Var {
        let value = self.with(a, |x| x.mapv(f64::sqrt));
        self.push(value, Op::Sqrt(a))
    }

    pub fn logit(&self, a: Var) -> Var {
        let value = self.with(a, |x| {
            x.mapv(|v| {
                let c = v.clamp(LOGIT_EPS, 1.0 - LOGIT_EPS);
                (c / (1.0 - c)).ln()
            })
        });
        self.push(value, Op::Logit(a))
    }

    /// Row-wise softmax; `mask` is an optional additive matrix of the same
    /// shape holding 0 for allowed and -inf for forbidden positions. Every
    /// row must keep at least one allowed position.
    pub fn softmax_rows(&self, a: Var, mask: Option<Matrix>) -> Var {
        let value = self.with(a, |x| {
            if let Some(m) = &mask {
                assert_eq!(m.dim(), x.dim(), "softmax mask shape mismatch");
            }
            let (n, d) = x.dim();
            let mut out = Matrix::zeros((n, d));
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..d {
                    let z = x[[i, j]] + mask.as_ref().map_or(0.0, |m| m[[i, j]]);
                    if z > max {
                        max = z;
                    }
                }
                debug_assert!(max.is_finite(), "softmax row fully masked");
                let mut sum = 0.0;
                for j in 0..d {
                    let z = x[[i, j]] + mask.as_ref().map_or(0.0, |m| m[[i, j]]);
                    let e = (z - max).exp();
                    out[[i, j]] = e;
                    sum += e;
                }
                for j in 0..d {
                    out[[i, j]] /= sum;
                }
            }
            out
        });
        self.push(value, Op::SoftmaxRows(a, mask))
    }

    pub fn layer_norm(&self, x: Var, gamma: Var, beta: Var) -> Var {
        let value = {
            let nodes = self.nodes.borrow();
            let xv = &nodes[x.0].value;
            let g = &nodes[gamma.0].value;
            let b = &nodes[beta.0].value;
            layer_norm_forward(xv, g, b).0
        };
        self.push(value, Op::LayerNorm { x, gamma, beta })
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let value = self.with(a, |x| Matrix::from_elem((1, 1), x.iter().sum::<f64>()));
        self.push(value, Op::SumAll(a))
    }

    pub fn mean_all(&self, a: Var) -> Var {
        let value = self.with(a, |x| {
            Matrix::from_elem((1, 1), x.iter().sum::<f64>() / x.len() as f64)
        });
        self.push(value, Op::MeanAll(a))
    }

    pub fn gather_rows(&self, a: Var, indices: Vec<usize>) -> Var {
        let value = self.with(a, |x| {
            let mut out = Matrix::zeros((indices.len(), x.ncols()));
            for (r, &i) in indices.iter().enumerate() {
                out.row_mut(r).assign(&x.row(i));
            }
            out
        });
        self.push(value, Op::GatherRows(a, indices))
    }

    pub fn concat_rows(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[parts[0].0].value.ncols();
            let rows: usize = parts.iter().map(|p| nodes[p.0].value.nrows()).sum();
            let mut out = Matrix::zeros((rows, cols));
            let mut at = 0;
            for p in parts {
                let v = &nodes[p.0].value;
                assert_eq!(v.ncols(), cols);
                for r in 0..v.nrows() {
                    out.row_mut(at).assign(&v.row(r));
                    at += 1;
                }
            }
            out
        };
        self.push(value, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let value = {
            let nodes = self.nodes.borrow();
            let rows = nodes[parts[0].0].value.nrows();
            let cols: usize = parts.iter().map(|p| nodes[p.0].value.ncols()).sum();
            let mut out = Matrix::zeros((rows, cols));
            let mut at = 0;
            for p in parts {
                let v = &nodes[p.0].value;
                assert_eq!(v.nrows(), rows);
                for c in 0..v.ncols() {
                    out.column_mut(at).assign(&v.column(c));
                    at += 1;
                }
            }
            out
        };
        self.push(value, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.with(a, |x| {
            let mut out = Matrix::zeros((len, x.ncols()));
            for r in 0..len {
                out.row_mut(r).assign(&x.row(start + r));
            }
            out
        });
        self.push(value, Op::SliceRows { x: a, start, len })
    }

    pub fn slice_cols(&self, a: Var, start: usize, len: usize) -> Var {
        let value = self.with(a, |x| {
            let mut out = Matrix::zeros((x.nrows(), len));
            for r in 0..x.nrows() {
                for c in 0..len {
                    out[[r, c]] = x[[r, start + c]];
                }
            }
            out
        });
        self.push(value, Op::SliceCols { x: a, start, len })
    }

    pub fn min_el(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            let mut out = x.clone();
            out.zip_mut_with(y, |o, &v| {
                if v < *o {
                    *o = v;
                }
            });
            out
        });
        self.push(value, Op::MinEl(a, b))
    }

    pub fn max_el(&self, a: Var, b: Var) -> Var {
        let value = self.with2(a, b, |x, y| {
            let mut out = x.clone();
            out.zip_mut_with(y, |o, &v| {
                if v > *o {
                    *o = v;
                }
            });
            out
        });
        self.push(value, Op::MaxEl(a, b))
    }

    pub fn posenc2d(&self, points: Var, feats: usize) -> Var {
        let value = self.with(points, |p| posenc2d(p, feats));
        self.push(value, Op::PosEnc2d { x: points, feats })
    }

    pub fn bce_with_logits(&self, logits: Var, targets: Matrix) -> Var {
        let value = self.with(logits, |z| {
            assert_eq!(z.dim(), targets.dim());
            let mut out = Matrix::zeros(z.dim());
            for (o, (&zv, &t)) in out.iter_mut().zip(z.iter().zip(targets.iter())) {
                // max(z,0) - z*t + ln(1 + e^{-|z|})
                *o = zv.max(0.0) - zv * t + (1.0 + (-zv.abs()).exp()).ln();
            }
            out
        });
        self.push(value, Op::BceWithLogits { logits, targets })
    }

    /// Reverse pass from a 1×1 root. Returns per-node gradients.
    pub fn backward(&self, root: Var) -> Gradients {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Matrix>> = vec![None; nodes.len()];
        assert_eq!(
            nodes[root.0].value.dim(),
            (1, 1),
            "backward root must be scalar"
        );
        grads[root.0] = Some(Matrix::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let node = &nodes[i];
            match &node.op {
                Op::Leaf => {
                    grads[i] = Some(grad);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    accumulate(&mut grads, *a, matmul(&grad, &transpose(bv)));
                    accumulate(&mut grads, *b, matmul(&transpose(av), &grad));
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, grad);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *a, grad.clone());
                    accumulate(&mut grads, *b, -&grad);
                }
                Op::Mul(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    accumulate(&mut grads, *a, &grad * bv);
                    accumulate(&mut grads, *b, &grad * av);
                }
                Op::Div(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    accumulate(&mut grads, *a, &grad / bv);
                    accumulate(&mut grads, *b, -(&grad * av / (bv * bv)));
                }
                Op::AddRow(a, row) => {
                    let mut row_grad = Matrix::zeros((1, grad.ncols()));
                    for r in grad.rows() {
                        for (g, v) in row_grad.row_mut(0).iter_mut().zip(r) {
                            *g += v;
                        }
                    }
                    accumulate(&mut grads, *a, grad);
                    accumulate(&mut grads, *row, row_grad);
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, *a, &grad * *c);
                }
                Op::AddConst(a, _) => {
                    accumulate(&mut grads, *a, grad);
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, transpose(&grad));
                }
                Op::Sigmoid(a) => {
                    let s = &node.value;
                    accumulate(&mut grads, *a, &grad * &(s * &(1.0 - s)));
                }
                Op::Relu(a) => {
                    let av = &nodes[a.0].value;
                    let mut g = grad;
                    g.zip_mut_with(av, |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0;
                        }
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Abs(a) => {
                    let av = &nodes[a.0].value;
                    let mut g = grad;
                    g.zip_mut_with(av, |gv, &x| {
                        *gv *= if x > 0.0 {
                            1.0
                        } else if x < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Sqrt(a) => {
                    let s = &node.value;
                    let mut g = grad;
                    g.zip_mut_with(s, |gv, &r| {
                        *gv *= 0.5 / r.max(1e-300);
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::Logit(a) => {
                    let av = &nodes[a.0].value;
                    let mut g = grad;
                    g.zip_mut_with(av, |gv, &x| {
                        if x <= LOGIT_EPS || x >= 1.0 - LOGIT_EPS {
                            *gv = 0.0;
                        } else {
                            *gv /= x * (1.0 - x);
                        }
                    });
                    accumulate(&mut grads, *a, g);
                }
                Op::SoftmaxRows(a, _mask) => {
                    let y = &node.value;
                    let (n, d) = y.dim();
                    let mut g = Matrix::zeros((n, d));
                    for r in 0..n {
                        let mut dot = 0.0;
                        for c in 0..d {
                            dot += grad[[r, c]] * y[[r, c]];
                        }
                        for c in 0..d {
                            g[[r, c]] = y[[r, c]] * (grad[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::LayerNorm { x, gamma, beta } => {
                    let xv = &nodes[x.0].value;
                    let g = &nodes[gamma.0].value;
                    let b = &nodes[beta.0].value;
                    let (dx, dgamma, dbeta) = layer_norm_backward(xv, g, b, &grad);
                    accumulate(&mut grads, *x, dx);
                    accumulate(&mut grads, *gamma, dgamma);
                    accumulate(&mut grads, *beta, dbeta);
                }
                Op::SumAll(a) => {
                    let shape = nodes[a.0].value.dim();
                    accumulate(&mut grads, *a, Matrix::from_elem(shape, grad[[0, 0]]));
                }
                Op::MeanAll(a) => {
                    let shape = nodes[a.0].value.dim();
                    let scale = grad[[0, 0]] / (shape.0 * shape.1) as f64;
                    accumulate(&mut grads, *a, Matrix::from_elem(shape, scale));
                }
                Op::GatherRows(a, indices) => {
                    let shape = nodes[a.0].value.dim();
                    let mut g = Matrix::zeros(shape);
                    for (r, &i) in indices.iter().enumerate() {
                        for c in 0..shape.1 {
                            g[[i, c]] += grad[[r, c]];
                        }
                    }
                    accumulate(&mut grads, *a, g);
                }
                Op::ConcatRows(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let rows = nodes[p.0].value.nrows();
                        let mut g = Matrix::zeros((rows, grad.ncols()));
                        for r in 0..rows {
                            g.row_mut(r).assign(&grad.row(at + r));
                        }
                        at += rows;
                        accumulate(&mut grads, *p, g);
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for p in parts {
                        let cols = nodes[p.0].value.ncols();
                        let rows = grad.nrows();
                        let mut g = Matrix::zeros((rows, cols));
                        for r in 0..rows {
                            for c in 0..cols {
                                g[[r, c]] = grad[[r, at + c]];
                            }
                        }
                        at += cols;
                        accumulate(&mut grads, *p, g);
                    }
                }
                Op::SliceRows { x, start, len } => {
                    let shape = nodes[x.0].value.dim();
                    let mut g = Matrix::zeros(shape);
                    for r in 0..*len {
                        g.row_mut(start + r).assign(&grad.row(r));
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::SliceCols { x, start, len } => {
                    let shape = nodes[x.0].value.dim();
                    let mut g = Matrix::zeros(shape);
                    for r in 0..shape.0 {
                        for c in 0..*len {
                            g[[r, start + c]] = grad[[r, c]];
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::MinEl(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let mut ga = grad.clone();
                    let mut gb = grad;
                    for ((ga, gb), (&x, &y)) in ga
                        .iter_mut()
                        .zip(gb.iter_mut())
                        .zip(av.iter().zip(bv.iter()))
                    {
                        if x <= y {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MaxEl(a, b) => {
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    let mut ga = grad.clone();
                    let mut gb = grad;
                    for ((ga, gb), (&x, &y)) in ga
                        .iter_mut()
                        .zip(gb.iter_mut())
                        .zip(av.iter().zip(bv.iter()))
                    {
                        if x >= y {
                            *gb = 0.0;
                        } else {
                            *ga = 0.0;
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::PosEnc2d { x, feats } => {
                    let p = &nodes[x.0].value;
                    let n = p.nrows();
                    let feats = *feats;
                    let mut g = Matrix::zeros((n, 2));
                    for i in 0..n {
                        for (coord_idx, base) in [(0usize, 0usize), (1, 2 * feats)] {
                            let coord = p[[i, coord_idx]];
                            let mut acc = 0.0;
                            for f in 0..feats {
                                let w = posenc_freq(f, feats);
                                let arg = coord * w;
                                acc += grad[[i, base + 2 * f]] * w * arg.cos();
                                acc -= grad[[i, base + 2 * f + 1]] * w * arg.sin();
                            }
                            g[[i, coord_idx]] = acc;
                        }
                    }
                    accumulate(&mut grads, *x, g);
                }
                Op::BceWithLogits { logits, targets } => {
                    let z = &nodes[logits.0].value;
                    let mut g = grad;
                    for (gv, (&zv, &t)) in g.iter_mut().zip(z.iter().zip(targets.iter())) {
                        let s = 1.0 / (1.0 + (-zv).exp());
                        *gv *= s - t;
                    }
                    accumulate(&mut grads, *logits, g);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Matrix>], var: Var, grad: Matrix) {
    match &mut grads[var.0] {
        Some(existing) => *existing += &grad,
        slot => *slot = Some(grad),
    }
}

const LN_EPS: f64 = 1e-5;

fn layer_norm_forward(x: &Matrix, gamma: &Matrix, beta: &Matrix) -> (Matrix, Vec<(f64, f64)>) {
    let (n, d) = x.dim();
    assert_eq!(gamma.dim(), (1, d));
    assert_eq!(beta.dim(), (1, d));
    let mut out = Matrix::zeros((n, d));
    let mut stats = Vec::with_capacity(n);
    for i in 0..n {
        let mut mean = 0.0;
        for j in 0..d {
            mean += x[[i, j]];
        }
        mean /= d as f64;
        let mut var = 0.0;
        for j in 0..d {
            let c = x[[i, j]] - mean;
            var += c * c;
        }
        var /= d as f64;
        let rstd = 1.0 / (var + LN_EPS).sqrt();
        for j in 0..d {
            out[[i, j]] = (x[[i, j]] - mean) * rstd * gamma[[0, j]] + beta[[0, j]];
        }
        stats.push((mean, rstd));
    }
    (out, stats)
}

fn layer_norm_backward(
    x: &Matrix,
    gamma: &Matrix,
    beta: &Matrix,
    grad: &Matrix,
) -> (Matrix, Matrix, Matrix) {
    let (n, d) = x.dim();
    let (_, stats) = layer_norm_forward(x, gamma, beta);
    let mut dx = Matrix::zeros((n, d));
    let mut dgamma = Matrix::zeros((1, d));
    let mut dbeta = Matrix::zeros((1, d));
    for i in 0..n {
        let (mean, rstd) = stats[i];
        // dxhat, plus the two row means needed by the layer-norm backward.
        let mut sum_dxhat = 0.0;
        let mut sum_dxhat_xhat = 0.0;
        let mut xhat_row = vec![0.0; d];
        let mut dxhat_row = vec![0.0; d];
        for j in 0..d {
            let xhat = (x[[i, j]] - mean) * rstd;
            let dxhat = grad[[i, j]] * gamma[[0, j]];
            xhat_row[j] = xhat;
            dxhat_row[j] = dxhat;
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
            dgamma[[0, j]] += grad[[i, j]] * xhat;
            dbeta[[0, j]] += grad[[i, j]];
        }
        let inv_d = 1.0 / d as f64;
        for j in 0..d {
            dx[[i, j]] = rstd
                * (dxhat_row[j] - sum_dxhat * inv_d - xhat_row[j] * sum_dxhat_xhat * inv_d);
        }
    }
    (dx, dgamma, dbeta)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite difference of `f` w.r.t. every entry of the leaf
    /// matrix at `index` in `inputs`.
    fn finite_diff(
        inputs: &[Matrix],
        index: usize,
        f: &dyn Fn(&Tape, &[Var]) -> Var,
    ) -> Matrix {
        let eps = 1e-6;
        let mut fd = Matrix::zeros(inputs[index].dim());
        for r in 0..fd.nrows() {
            for c in 0..fd.ncols() {
                let mut eval = |delta: f64| {
                    let mut shifted: Vec<Matrix> = inputs.to_vec();
                    shifted[index][[r, c]] += delta;
                    let tape = Tape::new();
                    let vars: Vec<Var> = shifted.into_iter().map(|m| tape.leaf(m)).collect();
                    let out = f(&tape, &vars);
                    tape.scalar_value(out)
                };
                fd[[r, c]] = (eval(eps) - eval(-eps)) / (2.0 * eps);
            }
        }
        fd
    }

    fn check_gradients(inputs: Vec<Matrix>, f: impl Fn(&Tape, &[Var]) -> Var + 'static) {
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().cloned().map(|m| tape.leaf(m)).collect();
        let out = f(&tape, &vars);
        let grads = tape.backward(out);
        for (i, var) in vars.iter().enumerate() {
            let fd = finite_diff(&inputs, i, &f);
            let analytic = grads
                .get(*var)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(inputs[i].dim()));
            for r in 0..fd.nrows() {
                for c in 0..fd.ncols() {
                    let a = analytic[[r, c]];
                    let n = fd[[r, c]];
                    let denom = a.abs().max(n.abs()).max(1e-4);
                    assert!(
                        ((a - n) / denom).abs() < 1e-5,
                        "input {i} entry ({r},{c}): analytic {a} vs fd {n}"
                    );
                }
            }
        }
    }

    fn mat(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = crate::rng::rng_from(seed);
        Matrix::from_shape_fn((rows, cols), |_| crate::rng::standard_normal(&mut rng) * 0.7)
    }

    #[test]
    fn matmul_matches_reference() {
        let a = mat(3, 4, 1);
        let b = mat(4, 2, 2);
        let ours = matmul(&a, &b);
        let reference = a.dot(&b);
        for (x, y) in ours.iter().zip(reference.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_matmul_chain() {
        check_gradients(vec![mat(3, 4, 1), mat(4, 2, 2)], |t, v| {
            let c = t.matmul(v[0], v[1]);
            t.sum_all(c)
        });
    }

    #[test]
    fn grad_elementwise_ops() {
        check_gradients(vec![mat(2, 3, 3), mat(2, 3, 4)], |t, v| {
            let s = t.mul(v[0], v[1]);
            let d = t.sub(s, v[1]);
            let a = t.add(d, v[0]);
            t.mean_all(a)
        });
    }

    #[test]
    fn grad_div() {
        let mut b = mat(2, 2, 5);
        b.mapv_inplace(|x| x.abs() + 0.5);
        check_gradients(vec![mat(2, 2, 6), b], |t, v| {
            let q = t.div(v[0], v[1]);
            t.sum_all(q)
        });
    }

    #[test]
    fn grad_add_row_broadcast() {
        check_gradients(vec![mat(4, 3, 7), mat(1, 3, 8)], |t, v| {
            let c = t.add_row(v[0], v[1]);
            t.sum_all(t.mul(c, c))
        });
    }

    #[test]
    fn grad_activations() {
        check_gradients(vec![mat(3, 3, 9)], |t, v| {
            let s = t.sigmoid(v[0]);
            let r = t.relu(s);
            t.sum_all(r)
        });
    }

    #[test]
    fn grad_abs_and_sqrt() {
        let mut x = mat(2, 3, 10);
        x.mapv_inplace(|v| v.abs() + 0.3);
        check_gradients(vec![x], |t, v| {
            let s = t.sqrt(v[0]);
            let a = t.abs(s);
            t.sum_all(a)
        });
    }

    #[test]
    fn grad_logit_sigmoid_inverse() {
        let x = mat(2, 2, 11);
        let tape = Tape::new();
        let v = tape.leaf(x.clone());
        let s = tape.sigmoid(v);
        let back = tape.logit(s);
        let recon = tape.value(back);
        for (a, b) in recon.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        check_gradients(vec![x], |t, v| {
            let s = t.sigmoid(v[0]);
            let l = t.logit(s);
            t.sum_all(t.mul(l, l))
        });
    }

    #[test]
    fn grad_softmax_rows() {
        check_gradients(vec![mat(3, 5, 12), mat(3, 5, 13)], |t, v| {
            let s = t.softmax_rows(v[0], None);
            t.sum_all(t.mul(s, v[1]))
        });
    }

    #[test]
    fn grad_softmax_rows_masked() {
        let mut mask = Matrix::zeros((3, 5));
        mask[[0, 4]] = f64::NEG_INFINITY;
        mask[[1, 0]] = f64::NEG_INFINITY;
        mask[[1, 1]] = f64::NEG_INFINITY;
        check_gradients(vec![mat(3, 5, 14), mat(3, 5, 15)], move |t, v| {
            let s = t.softmax_rows(v[0], Some(mask.clone()));
            t.sum_all(t.mul(s, v[1]))
        });
    }

    #[test]
    fn masked_softmax_zeroes_forbidden_positions() {
        let tape = Tape::new();
        let x = tape.leaf(mat(2, 4, 16));
        let mut mask = Matrix::zeros((2, 4));
        mask[[0, 1]] = f64::NEG_INFINITY;
        mask[[1, 3]] = f64::NEG_INFINITY;
        let s = tape.softmax_rows(x, Some(mask));
        let v = tape.value(s);
        assert_eq!(v[[0, 1]], 0.0);
        assert_eq!(v[[1, 3]], 0.0);
        for r in 0..2 {
            let sum: f64 = (0..4).map(|c| v[[r, c]]).sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn grad_layer_norm() {
        check_gradients(
            vec![mat(3, 6, 17), mat(1, 6, 18), mat(1, 6, 19), mat(3, 6, 20)],
            |t, v| {
                let ln = t.layer_norm(v[0], v[1], v[2]);
                t.sum_all(t.mul(ln, v[3]))
            },
        );
    }

    #[test]
    fn grad_gather_concat_slice() {
        check_gradients(vec![mat(5, 3, 21), mat(2, 3, 22)], |t, v| {
            let g = t.gather_rows(v[0], vec![4, 0, 2, 0]);
            let c = t.concat_rows(&[g, v[1]]);
            let s = t.slice_rows(c, 1, 3);
            let cc = t.concat_cols(&[s, s]);
            let sc = t.slice_cols(cc, 2, 3);
            t.sum_all(t.mul(sc, sc))
        });
    }

    #[test]
    fn grad_min_max_el() {
        check_gradients(vec![mat(3, 3, 23), mat(3, 3, 24)], |t, v| {
            let lo = t.min_el(v[0], v[1]);
            let hi = t.max_el(v[0], v[1]);
            t.sum_all(t.mul(lo, hi))
        });
    }

    #[test]
    fn grad_posenc2d() {
        let mut pts = mat(4, 2, 25);
        pts.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp()));
        check_gradients(vec![pts, mat(4, 16, 26)], |t, v| {
            let e = t.posenc2d(v[0], 4);
            t.sum_all(t.mul(e, v[1]))
        });
    }

    #[test]
    fn grad_bce_with_logits() {
        let targets = Matrix::from_shape_vec((3, 1), vec![1.0, 0.0, 1.0]).unwrap();
        check_gradients(vec![mat(3, 1, 27)], move |t, v| {
            let l = t.bce_with_logits(v[0], targets.clone());
            t.mean_all(l)
        });
    }

    #[test]
    fn bce_closed_form_at_zero_logit() {
        let tape = Tape::new();
        let z = tape.leaf(Matrix::zeros((1, 1)));
        let l = tape.bce_with_logits(z, Matrix::from_elem((1, 1), 0.0));
        assert!((tape.scalar_value(tape.mean_all(l)) - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn grad_transpose() {
        check_gradients(vec![mat(3, 2, 28), mat(3, 2, 29)], |t, v| {
            let tr = t.transpose(v[0]);
            let back = t.transpose(tr);
            t.sum_all(t.mul(back, v[1]))
        });
    }

    #[test]
    fn grad_scale_add_const() {
        let c = mat(2, 2, 30);
        check_gradients(vec![mat(2, 2, 31)], move |t, v| {
            let s = t.scale(v[0], -1.7);
            let a = t.add_const(s, c.clone());
            t.sum_all(t.mul(a, a))
        });
    }

    #[test]
    fn appending_masked_rows_is_bit_exact_for_existing_rows() {
        // Two queries, then the same two queries plus a masked third one:
        // the first two output rows must be bitwise identical.
        let q2 = mat(2, 4, 32);
        let mut q3 = Matrix::zeros((3, 4));
        for r in 0..2 {
            q3.row_mut(r).assign(&q2.row(r));
        }
        q3.row_mut(2).assign(&mat(1, 4, 33).row(0));
        let w = mat(4, 4, 34);

        let run = |q: &Matrix, n: usize| -> Matrix {
            let tape = Tape::new();
            let qv = tape.leaf(q.clone());
            let wv = tape.leaf(w.clone());
            let proj = tape.matmul(qv, wv);
            let scores = tape.matmul(proj, tape.transpose(qv));
            let mut mask = Matrix::zeros((n, n));
            for r in 0..n {
                for c in 0..n {
                    if (r < 2) != (c < 2) {
                        mask[[r, c]] = f64::NEG_INFINITY;
                    }
                }
            }
            let attn = tape.softmax_rows(scores, Some(mask));
            let out = tape.matmul(attn, qv);
            tape.value(out)
        };

        let small = run(&q2, 2);
        let big = run(&q3, 3);
        for r in 0..2 {
            for c in 0..4 {
                assert_eq!(small[[r, c]].to_bits(), big[[r, c]].to_bits());
            }
        }
    }
}
