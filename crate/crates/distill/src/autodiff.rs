//! Reverse-mode automatic differentiation with gradients-of-gradients.
//!
//! Computations are recorded on a [`Tape`] of matrix-valued nodes. The
//! backward pass does not compute raw numbers: it emits new tape nodes, so a
//! gradient is an ordinary tape expression that can itself be differentiated.
//! That is exactly what the meta-learning objective needs, where the outer
//! gradient flows through an inner gradient step.
//!
//! Everything is a dense row-major `[rows, cols]` matrix of `f64`; scalars
//! are `1 x 1`. The op set is the minimum for an MLP with skip connections,
//! dropout, sigmoid output and binary cross-entropy.

use std::cell::RefCell;

use ndarray::Array2;

use crate::error::{Error, Result};

/// A handle to one node on a tape. Cheap to copy; only meaningful together
/// with the tape that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var {
    id: usize,
}

#[derive(Debug, Clone)]
enum Op {
    /// Input or constant; no inputs to differentiate through.
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    /// Elementwise product.
    Mul(usize, usize),
    MatMul(usize, usize),
    Transpose(usize),
    /// Elementwise reciprocal.
    Recip(usize),
    Ln(usize),
    Sigmoid(usize),
    Relu(usize),
    /// Elementwise clamp into `[lo, hi]`; gradient is the a.e. derivative
    /// (1 strictly inside the interval, 0 outside).
    Clamp(usize, f64, f64),
    /// Multiplication by a compile-time constant scalar.
    Scale(usize, f64),
    /// `[m, n]` plus a `[1, n]` row bias broadcast over rows.
    AddRowBias(usize, usize),
    /// Column sums: `[m, n]` -> `[1, n]`.
    SumRows(usize),
    /// Total sum: `[m, n]` -> `[1, 1]`.
    SumAll(usize),
    /// `[1, n]` -> `[m, n]` by repeating the row.
    BroadcastRows(usize),
    /// `[1, 1]` -> `[m, n]`.
    BroadcastScalar(usize),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Array2<f64>,
}

/// A recording of a computation. Nodes are append-only; [`Tape::grad`]
/// appends the backward graph to the same tape.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    /// Current value of a node (cloned).
    pub fn value(&self, v: Var) -> Array2<f64> {
        self.nodes.borrow()[v.id].value.clone()
    }

    /// Value of a `1 x 1` node as a plain scalar.
    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        let nodes = self.nodes.borrow();
        let val = &nodes[v.id].value;
        if val.dim() != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "expected a scalar node, got shape {:?}",
                val.dim()
            )));
        }
        Ok(val[(0, 0)])
    }

    fn push(&self, op: Op, value: Array2<f64>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { op, value });
        Var { id: nodes.len() - 1 }
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes.borrow()[v.id].value.dim()
    }

    /// Record an input/constant node.
    pub fn leaf(&self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A `1 x 1` constant.
    pub fn scalar(&self, value: f64) -> Var {
        self.leaf(Array2::from_elem((1, 1), value))
    }

    fn binary_same_shape(&self, name: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::InvalidArgument(format!(
                "{name}: shape mismatch {sa:?} vs {sb:?}"
            )));
        }
        Ok(sa)
    }

    pub fn add(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("add", a, b)?;
        let v = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value + &nodes[b.id].value
        };
        Ok(self.push(Op::Add(a.id, b.id), v))
    }

    pub fn sub(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("sub", a, b)?;
        let v = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value - &nodes[b.id].value
        };
        Ok(self.push(Op::Sub(a.id, b.id), v))
    }

    pub fn mul(&self, a: Var, b: Var) -> Result<Var> {
        self.binary_same_shape("mul", a, b)?;
        let v = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value * &nodes[b.id].value
        };
        Ok(self.push(Op::Mul(a.id, b.id), v))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.1 != sb.0 {
            return Err(Error::InvalidArgument(format!(
                "matmul: inner dimensions {sa:?} x {sb:?}"
            )));
        }
        let v = {
            let nodes = self.nodes.borrow();
            nodes[a.id].value.dot(&nodes[b.id].value)
        };
        Ok(self.push(Op::MatMul(a.id, b.id), v))
    }

    pub fn transpose(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.t().to_owned();
        self.push(Op::Transpose(a.id), v)
    }

    pub fn recip(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.mapv(f64::recip);
        self.push(Op::Recip(a.id), v)
    }

    pub fn ln(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.mapv(f64::ln);
        self.push(Op::Ln(a.id), v)
    }

    pub fn sigmoid(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id]
            .value
            .mapv(|x| 1.0 / (1.0 + (-x).exp()));
        self.push(Op::Sigmoid(a.id), v)
    }

    pub fn relu(&self, a: Var) -> Var {
        let v = self.nodes.borrow()[a.id].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu(a.id), v)
    }

    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Result<Var> {
        if !(lo < hi) {
            return Err(Error::InvalidArgument(format!("clamp: empty interval [{lo}, {hi}]")));
        }
        let v = self.nodes.borrow()[a.id].value.mapv(|x| x.clamp(lo, hi));
        Ok(self.push(Op::Clamp(a.id, lo, hi), v))
    }

    pub fn scale(&self, a: Var, c: f64) -> Var {
        let v = self.nodes.borrow()[a.id].value.mapv(|x| c * x);
        self.push(Op::Scale(a.id, c), v)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    /// `a / b` elementwise, as `a * recip(b)`.
    pub fn div(&self, a: Var, b: Var) -> Result<Var> {
        let r = self.recip(b);
        self.mul(a, r)
    }

    pub fn add_row_bias(&self, a: Var, bias: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(bias));
        if sb.0 != 1 || sa.1 != sb.1 {
            return Err(Error::InvalidArgument(format!(
                "add_row_bias: {sa:?} with bias {sb:?}"
            )));
        }
        let v = {
            let nodes = self.nodes.borrow();
            &nodes[a.id].value + &nodes[bias.id].value
        };
        Ok(self.push(Op::AddRowBias(a.id, bias.id), v))
    }

    pub fn sum_rows(&self, a: Var) -> Var {
        let v = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.id].value;
            let mut out = Array2::zeros((1, src.dim().1));
            for row in src.rows() {
                for (j, &x) in row.iter().enumerate() {
                    out[(0, j)] += x;
                }
            }
            out
        };
        self.push(Op::SumRows(a.id), v)
    }

    pub fn sum_all(&self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.nodes.borrow()[a.id].value.sum());
        self.push(Op::SumAll(a.id), v)
    }

    /// Mean of all entries, as a `1 x 1` node.
    pub fn mean_all(&self, a: Var) -> Var {
        let (m, n) = self.shape(a);
        let s = self.sum_all(a);
        self.scale(s, 1.0 / (m * n) as f64)
    }

    pub fn broadcast_rows(&self, a: Var, rows: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.0 != 1 {
            return Err(Error::InvalidArgument(format!(
                "broadcast_rows: expected a single row, got {sa:?}"
            )));
        }
        let v = {
            let nodes = self.nodes.borrow();
            let src = &nodes[a.id].value;
            let mut out = Array2::zeros((rows, sa.1));
            for mut row in out.rows_mut() {
                row.assign(&src.row(0));
            }
            out
        };
        Ok(self.push(Op::BroadcastRows(a.id), v))
    }

    pub fn broadcast_scalar(&self, a: Var, shape: (usize, usize)) -> Result<Var> {
        if self.shape(a) != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "broadcast_scalar: expected 1x1, got {:?}",
                self.shape(a)
            )));
        }
        let v = Array2::from_elem(shape, self.nodes.borrow()[a.id].value[(0, 0)]);
        Ok(self.push(Op::BroadcastScalar(a.id), v))
    }

    /// Gradients of the scalar `output` with respect to each of `wrt`.
    ///
    /// The returned variables are new nodes on this tape, so any of them (or
    /// an expression built from them) can be differentiated again. Inputs
    /// that do not influence the output get a zero node of their shape.
    pub fn grad(&self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        if self.shape(output) != (1, 1) {
            return Err(Error::InvalidArgument(format!(
                "grad target must be a 1x1 scalar, got shape {:?}",
                self.shape(output)
            )));
        }
        let mut grads: Vec<Option<Var>> = vec![None; output.id + 1];
        grads[output.id] = Some(self.scalar(1.0));
        let accumulate = |grads: &mut Vec<Option<Var>>, id: usize, c: Var| -> Result<()> {
            grads[id] = Some(match grads[id] {
                None => c,
                Some(e) => self.add(e, c)?,
            });
            Ok(())
        };
        for id in (0..=output.id).rev() {
            let Some(g) = grads[id] else { continue };
            let op = self.nodes.borrow()[id].op.clone();
            match op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    accumulate(&mut grads, a, g)?;
                    accumulate(&mut grads, b, g)?;
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, a, g)?;
                    accumulate(&mut grads, b, self.neg(g))?;
                }
                Op::Mul(a, b) => {
                    let ga = self.mul(g, Var { id: b })?;
                    let gb = self.mul(g, Var { id: a })?;
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::MatMul(a, b) => {
                    let bt = self.transpose(Var { id: b });
                    let at = self.transpose(Var { id: a });
                    let ga = self.matmul(g, bt)?;
                    let gb = self.matmul(at, g)?;
                    accumulate(&mut grads, a, ga)?;
                    accumulate(&mut grads, b, gb)?;
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, a, self.transpose(g))?;
                }
                Op::Recip(a) => {
                    // d(1/x) = -1/x^2 = -(recip value)^2
                    let r = Var { id };
                    let rr = self.mul(r, r)?;
                    let c = self.neg(self.mul(g, rr)?);
                    accumulate(&mut grads, a, c)?;
                }
                Op::Ln(a) => {
                    let r = self.recip(Var { id: a });
                    accumulate(&mut grads, a, self.mul(g, r)?)?;
                }
                Op::Sigmoid(a) => {
                    // s' = s(1 - s) = s - s^2, built from the output node
                    let s = Var { id };
                    let ss = self.mul(s, s)?;
                    let deriv = self.sub(s, ss)?;
                    accumulate(&mut grads, a, self.mul(g, deriv)?)?;
                }
                Op::Relu(a) => {
                    let mask = self.nodes.borrow()[a].value.mapv(|x| (x > 0.0) as u8 as f64);
                    let m = self.leaf(mask);
                    accumulate(&mut grads, a, self.mul(g, m)?)?;
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = self.nodes.borrow()[a]
                        .value
                        .mapv(|x| (x > lo && x < hi) as u8 as f64);
                    let m = self.leaf(mask);
                    accumulate(&mut grads, a, self.mul(g, m)?)?;
                }
                Op::Scale(a, c) => {
                    accumulate(&mut grads, a, self.scale(g, c))?;
                }
                Op::AddRowBias(a, b) => {
                    accumulate(&mut grads, a, g)?;
                    accumulate(&mut grads, b, self.sum_rows(g))?;
                }
                Op::SumRows(a) => {
                    let rows = self.shape(Var { id: a }).0;
                    accumulate(&mut grads, a, self.broadcast_rows(g, rows)?)?;
                }
                Op::SumAll(a) => {
                    let shape = self.shape(Var { id: a });
                    accumulate(&mut grads, a, self.broadcast_scalar(g, shape)?)?;
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads, a, self.sum_rows(g))?;
                }
                Op::BroadcastScalar(a) => {
                    accumulate(&mut grads, a, self.sum_all(g))?;
                }
            }
        }
        wrt.iter()
            .map(|&v| match grads.get(v.id).copied().flatten() {
                Some(g) => Ok(g),
                None => Ok(self.leaf(Array2::zeros(self.shape(v)))),
            })
            .collect()
    }
}
