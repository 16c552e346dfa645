use std::sync::atomic::{AtomicU64, Ordering};

use super::cholesky::Cholesky;
use super::{AutodiffError, Matrix};

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

/// Elementwise nonlinearities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    Sigmoid,
    /// Natural log; inputs must be strictly positive.
    Log,
    Exp,
    /// `x^p`.
    Power(f64),
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
            Activation::Log => x.ln(),
            Activation::Exp => x.exp(),
            Activation::Power(p) => pow(x, p),
        }
    }

    /// Derivative given the input `x` and the forward output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Log => 1.0 / x,
            Activation::Exp => y,
            Activation::Power(p) => p * pow(x, p - 1.0),
        }
    }
}

fn pow(x: f64, p: f64) -> f64 {
    if p.fract() == 0.0 && p.abs() < i32::MAX as f64 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    Shift(usize),
    ScaleBy(usize, usize),
    Activation(usize, Activation),
    Sum(usize),
    Reshape(usize),
    Transpose(usize),
    Gather(usize, Vec<usize>),
    Concat(Vec<usize>),
    Solve { k: usize, f: usize, factor: Cholesky },
    PNorm(usize, u32),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    requires_grad: bool,
}

/// Handle to a value recorded on a [`Tape`].
///
/// Handles are cheap to copy; the value itself lives on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    tape: u64,
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.rows == 1 && self.cols == 1
    }

    /// Position of the node on its tape.
    pub fn index(&self) -> usize {
        self.id
    }
}

/// Define-by-run reverse-mode tape.
///
/// Every operation appends a node whose inputs already exist, so the node
/// list is always in topological order. Linear indices into matrices are
/// column-major, which is unambiguous for row and column vectors.
#[derive(Debug)]
pub struct Tape {
    id: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Adjoints produced by [`Tape::backward`].
#[derive(Debug, Clone)]
pub struct Gradients {
    tape: u64,
    adjoints: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros when `v` was not reached.
    pub fn wrt(&self, v: Var) -> Matrix {
        assert_eq!(v.tape, self.tape, "variable belongs to a different tape");
        match &self.adjoints[v.id] {
            Some(g) => g.clone(),
            None => Matrix::zeros(v.rows, v.cols),
        }
    }

    pub fn wrt_scalar(&self, v: Var) -> f64 {
        self.wrt(v)[(0, 0)]
    }

    /// Whether any gradient reached `v`.
    pub fn reached(&self, v: Var) -> bool {
        v.tape == self.tape && self.adjoints[v.id].is_some()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Matrix, requires_grad: bool) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, value, requires_grad });
        Var {
            tape: self.id,
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    fn check(&self, v: Var) -> Result<&Node, AutodiffError> {
        if v.tape != self.id || v.id >= self.nodes.len() {
            return Err(AutodiffError::ForeignVariable);
        }
        Ok(&self.nodes[v.id])
    }

    fn grad_of(&self, v: Var) -> bool {
        self.nodes[v.id].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(Op::Constant, value, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.leaf(Matrix::from_element(1, 1, value))
    }

    pub fn scalar_constant(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_element(1, 1, value))
    }

    /// Column vector leaf.
    pub fn vector(&mut self, values: &[f64]) -> Var {
        self.leaf(Matrix::from_column_slice(values.len(), 1, values))
    }

    pub fn vector_constant(&mut self, values: &[f64]) -> Var {
        self.constant(Matrix::from_column_slice(values.len(), 1, values))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        assert_eq!(v.tape, self.id, "variable belongs to a different tape");
        &self.nodes[v.id].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.value(v)[(0, 0)]
    }

    /// Values of a vector (or any matrix, column-major).
    pub fn values(&self, v: Var) -> Vec<f64> {
        self.value(v).as_slice().to_vec()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (av, bv) = (&self.check(a)?.value, &self.check(b)?.value);
        if av.ncols() != bv.nrows() {
            return Err(AutodiffError::Shape {
                op: "matmul",
                left: a.shape(),
                right: b.shape(),
            });
        }
        let value = av * bv;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Op::MatMul(a.id, b.id), value, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), AutodiffError> {
        self.check(a)?;
        self.check(b)?;
        if a.shape() != b.shape() {
            return Err(AutodiffError::Shape {
                op,
                left: a.shape(),
                right: b.shape(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("add", a, b)?;
        let value = &self.nodes[a.id].value + &self.nodes[b.id].value;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Op::Add(a.id, b.id), value, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("sub", a, b)?;
        let value = &self.nodes[a.id].value - &self.nodes[b.id].value;
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Op::Sub(a.id, b.id), value, rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("mul", a, b)?;
        let value = self.nodes[a.id].value.component_mul(&self.nodes[b.id].value);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Op::Mul(a.id, b.id), value, rg))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.same_shape("div", a, b)?;
        let value = self.nodes[a.id].value.component_div(&self.nodes[b.id].value);
        let rg = self.grad_of(a) || self.grad_of(b);
        Ok(self.push(Op::Div(a.id, b.id), value, rg))
    }

    /// Adds the 1×n `row` to every row of the m×n `a` (bias broadcast).
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(row)?;
        if row.rows != 1 || row.cols != a.cols {
            return Err(AutodiffError::Shape {
                op: "add_row",
                left: a.shape(),
                right: row.shape(),
            });
        }
        let mut value = self.nodes[a.id].value.clone();
        let r = &self.nodes[row.id].value;
        for mut v in value.row_iter_mut() {
            v += r;
        }
        let rg = self.grad_of(a) || self.grad_of(row);
        Ok(self.push(Op::AddRow(a.id, row.id), value, rg))
    }

    /// Multiplies by a fixed real.
    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let value = &self.check(a)?.value * c;
        let rg = self.grad_of(a);
        Ok(self.push(Op::Scale(a.id, c), value, rg))
    }

    /// Adds a fixed real to every entry.
    pub fn shift(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let value = self.check(a)?.value.add_scalar(c);
        let rg = self.grad_of(a);
        Ok(self.push(Op::Shift(a.id), value, rg))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.scale(a, -1.0)
    }

    /// Multiplies every entry of `a` by the scalar variable `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var, AutodiffError> {
        self.check(a)?;
        self.check(s)?;
        if !s.is_scalar() {
            return Err(AutodiffError::Shape {
                op: "scale_by",
                left: a.shape(),
                right: s.shape(),
            });
        }
        let value = &self.nodes[a.id].value * self.nodes[s.id].value[(0, 0)];
        let rg = self.grad_of(a) || self.grad_of(s);
        Ok(self.push(Op::ScaleBy(a.id, s.id), value, rg))
    }

    pub fn activation(&mut self, x: Var, kind: Activation) -> Result<Var, AutodiffError> {
        let xv = &self.check(x)?.value;
        if kind == Activation::Log {
            if let Some((index, &value)) = xv.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
                return Err(AutodiffError::Domain { op: "log", index, value });
            }
        }
        let value = xv.map(|v| kind.apply(v));
        let rg = self.grad_of(x);
        Ok(self.push(Op::Activation(x.id, kind), value, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.activation(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.activation(x, Activation::Sigmoid)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.activation(x, Activation::Exp)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, AutodiffError> {
        self.activation(x, Activation::Log)
    }

    pub fn powf(&mut self, x: Var, p: f64) -> Result<Var, AutodiffError> {
        self.activation(x, Activation::Power(p))
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = Matrix::from_element(1, 1, self.check(x)?.value.sum());
        let rg = self.grad_of(x);
        Ok(self.push(Op::Sum(x.id), value, rg))
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let n = x.len().max(1) as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Inner product of two equally shaped operands.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let p = self.mul(a, b)?;
        self.sum(p)
    }

    /// Reinterprets the column-major entries under a new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, AutodiffError> {
        let xv = &self.check(x)?.value;
        if rows * cols != xv.len() {
            return Err(AutodiffError::Shape {
                op: "reshape",
                left: x.shape(),
                right: (rows, cols),
            });
        }
        let value = Matrix::from_column_slice(rows, cols, xv.as_slice());
        let rg = self.grad_of(x);
        Ok(self.push(Op::Reshape(x.id), value, rg))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, AutodiffError> {
        let value = self.check(x)?.value.transpose();
        let rg = self.grad_of(x);
        Ok(self.push(Op::Transpose(x.id), value, rg))
    }

    /// Column vector of the entries at the given column-major indices.
    pub fn gather(&mut self, x: Var, indices: &[usize]) -> Result<Var, AutodiffError> {
        let xv = &self.check(x)?.value;
        let mut out = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= xv.len() {
                return Err(AutodiffError::Shape {
                    op: "gather",
                    left: x.shape(),
                    right: (i, 1),
                });
            }
            out.push(xv.as_slice()[i]);
        }
        let value = Matrix::from_column_slice(out.len(), 1, &out);
        let rg = self.grad_of(x);
        Ok(self.push(Op::Gather(x.id, indices.to_vec()), value, rg))
    }

    /// Single entry as a scalar.
    pub fn elem(&mut self, x: Var, index: usize) -> Result<Var, AutodiffError> {
        self.gather(x, &[index])
    }

    /// Stacks the entries of every part into one column vector.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let mut out = Vec::new();
        let mut rg = false;
        for &p in parts {
            out.extend_from_slice(self.check(p)?.value.as_slice());
            rg |= self.grad_of(p);
        }
        let value = Matrix::from_column_slice(out.len(), 1, &out);
        Ok(self.push(Op::Concat(parts.iter().map(|p| p.id).collect()), value, rg))
    }

    /// `u = K⁻¹ f` for symmetric positive definite `K`.
    ///
    /// The backward pass reuses the factorization: with `λ = K⁻¹ ū`, the
    /// adjoints are `f̄ = λ` and `K̄ = −sym(λ uᵀ)`.
    pub fn linear_solve(&mut self, k: Var, f: Var) -> Result<Var, AutodiffError> {
        self.check(k)?;
        self.check(f)?;
        if k.rows != k.cols || f.rows != k.rows || f.cols != 1 {
            return Err(AutodiffError::Shape {
                op: "linear_solve",
                left: k.shape(),
                right: f.shape(),
            });
        }
        let factor = Cholesky::factor(&self.nodes[k.id].value)?;
        let value = factor.solve(&self.nodes[f.id].value);
        let rg = self.grad_of(k) || self.grad_of(f);
        Ok(self.push(Op::Solve { k: k.id, f: f.id, factor }, value, rg))
    }

    /// `(Σ max(0, xᵢ)^p)^(1/p)`, an upper bound on the largest positive entry.
    ///
    /// The gradient at the all-inactive point is zero.
    pub fn pnorm(&mut self, x: Var, p: u32) -> Result<Var, AutodiffError> {
        let xv = &self.check(x)?.value;
        if xv.is_empty() || p == 0 {
            return Err(AutodiffError::Shape {
                op: "pnorm",
                left: x.shape(),
                right: (p as usize, 0),
            });
        }
        let value = Matrix::from_element(1, 1, positive_pnorm(xv.as_slice(), p));
        let rg = self.grad_of(x);
        Ok(self.push(Op::PNorm(x.id, p), value, rg))
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var) -> Result<Gradients, AutodiffError> {
        self.check(root)?;
        if !root.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                rows: root.rows,
                cols: root.cols,
            });
        }
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[root.id] = Some(Matrix::from_element(1, 1, 1.0));

        for id in (0..=root.id).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            if node.requires_grad {
                self.propagate(node, &g, &mut adj);
            }
            adj[id] = Some(g);
        }
        Ok(Gradients { tape: self.id, adjoints: adj })
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let val = |i: usize| &self.nodes[i].value;
        let mut send = |i: usize, grad: Matrix| {
            if self.nodes[i].requires_grad {
                accumulate(adj, i, grad);
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                send(*a, g * val(*b).transpose());
                send(*b, val(*a).transpose() * g);
            }
            Op::Add(a, b) => {
                send(*a, g.clone());
                send(*b, g.clone());
            }
            Op::Sub(a, b) => {
                send(*a, g.clone());
                send(*b, -g);
            }
            Op::Mul(a, b) => {
                send(*a, g.component_mul(val(*b)));
                send(*b, g.component_mul(val(*a)));
            }
            Op::Div(a, b) => {
                let bv = val(*b);
                send(*a, g.component_div(bv));
                let gb = -g.component_mul(val(*a)).component_div(&bv.component_mul(bv));
                send(*b, gb);
            }
            Op::AddRow(a, row) => {
                send(*a, g.clone());
                send(*row, Matrix::from_row_slice(1, g.ncols(), g.row_sum().as_slice()));
            }
            Op::Scale(a, c) => send(*a, g * *c),
            Op::Shift(a) => send(*a, g.clone()),
            Op::ScaleBy(a, s) => {
                let sv = val(*s)[(0, 0)];
                send(*a, g * sv);
                send(*s, Matrix::from_element(1, 1, g.dot(val(*a))));
            }
            Op::Activation(x, kind) => {
                let xv = val(*x);
                let mut d = g.clone();
                for ((d, &xi), &yi) in d.iter_mut().zip(xv.iter()).zip(node.value.iter()) {
                    *d *= kind.derivative(xi, yi);
                }
                send(*x, d);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                send(*x, Matrix::from_element(xv.nrows(), xv.ncols(), g[(0, 0)]));
            }
            Op::Reshape(x) => {
                let xv = val(*x);
                send(*x, Matrix::from_column_slice(xv.nrows(), xv.ncols(), g.as_slice()));
            }
            Op::Transpose(x) => send(*x, g.transpose()),
            Op::Gather(x, indices) => {
                let xv = val(*x);
                let mut d = Matrix::zeros(xv.nrows(), xv.ncols());
                for (k, &i) in indices.iter().enumerate() {
                    d.as_mut_slice()[i] += g.as_slice()[k];
                }
                send(*x, d);
            }
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let n = pv.len();
                    let d = Matrix::from_column_slice(pv.nrows(), pv.ncols(), &g.as_slice()[offset..offset + n]);
                    offset += n;
                    send(p, d);
                }
            }
            Op::Solve { k, f, factor } => {
                let lambda = factor.solve(g);
                let u = &node.value;
                let outer = &lambda * u.transpose();
                let gk = (&outer + outer.transpose()) * -0.5;
                send(*k, gk);
                send(*f, lambda);
            }
            Op::PNorm(x, p) => {
                let xv = val(*x);
                let norm = node.value[(0, 0)];
                let mut d = Matrix::zeros(xv.nrows(), xv.ncols());
                if norm > 0.0 {
                    let s = g[(0, 0)];
                    for (di, &xi) in d.iter_mut().zip(xv.iter()) {
                        if xi > 0.0 {
                            *di = s * (xi / norm).powi(*p as i32 - 1);
                        }
                    }
                }
                send(*x, d);
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Matrix>], i: usize, grad: Matrix) {
    match &mut adj[i] {
        Some(existing) => *existing += grad,
        slot @ None => *slot = Some(grad),
    }
}

/// Plain-float evaluation of the positive-part p-norm, scaled against overflow.
pub fn positive_pnorm(values: &[f64], p: u32) -> f64 {
    let peak = values.iter().fold(0.0_f64, |m, &v| m.max(v));
    if peak <= 0.0 {
        return 0.0;
    }
    let s: f64 = values
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| (v / peak).powi(p as i32))
        .sum();
    peak * s.powf(1.0 / p as f64)
}
