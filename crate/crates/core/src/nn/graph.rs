//! Tape-based reverse-mode automatic differentiation over `f64` matrices.
//!
//! Values are `Array2<f64>` with rows = batch and columns = features; a
//! scalar is a 1×1 matrix. Nodes are appended to an arena and compute their
//! value immediately (define-by-run), so a forward-only pass is just "build
//! the graph and read the value". `backward` walks the arena in reverse,
//! accumulating gradients for every named parameter leaf into a map — a
//! parameter used at many timesteps gets its contributions summed.
//!
//! Broadcasting is deliberately minimal: the right operand of `add`/`sub`/
//! `mul` may be a (1, n) row (tiled over the batch) or a 1×1 scalar;
//! anything else must match shapes exactly. This keeps the backward pass
//! obviously correct at the cost of a few explicit reshapes in callers.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};

use crate::error::{Error, Result};
use crate::nn::conv::{conv2d_bwd_input, conv2d_bwd_weight, conv2d_fwd, ConvCfg};
use crate::nn::params::ParamStore;

/// Handle to a node in the graph arena.
pub type Id = usize;

/// Per-parameter gradient map, keyed by parameter name.
pub type Gradients = BTreeMap<String, Array2<f64>>;

#[derive(Debug, Clone)]
enum Op {
    /// Constant leaf (data, targets, detached values).
    Value,
    /// Named parameter leaf; gradients are collected under this name.
    Param(String),
    MatMul(Id, Id),
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    /// Elementwise minimum; gradient follows the smaller operand (ties → left).
    Min(Id, Id),
    Scale(Id, f64),
    AddConst(Id),
    Relu(Id),
    Tanh(Id),
    Exp(Id),
    Ln(Id),
    Softplus(Id),
    Clamp(Id, f64, f64),
    /// Full reduction to 1×1.
    Sum(Id),
    /// Full mean to 1×1.
    Mean(Id),
    /// Row-wise sum: (B, n) → (B, 1).
    SumRows(Id),
    ConcatCols(Vec<Id>),
    /// (input, start, len) column slice.
    SliceCols(Id, usize, usize),
    /// Identity value, zero gradient: the stop-gradient barrier.
    Detach,
    /// x: (B, H·W·C_in) → (B, H_out·W_out·C_out), weight (k·k·C_in, C_out).
    Conv2d { x: Id, w: Id, cfg: ConvCfg },
    /// Transposed convolution mapping the OUTPUT space of `cfg` back to its
    /// input space; weight has the same (k·k·C_in, C_out) layout as the
    /// forward conv it transposes.
    ConvT2d { x: Id, w: Id, cfg: ConvCfg },
    /// a: (B, n·c) plus b: (1, c) tiled n times across the columns —
    /// per-channel bias for image-shaped tensors.
    TileAdd(Id, Id),
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Autodiff arena. Create one per loss evaluation or rollout step; cheap to
/// drop.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    /// Value of a node (borrowed).
    pub fn value(&self, id: Id) -> &Array2<f64> {
        &self.nodes[id].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, id: Id) -> f64 {
        debug_assert_eq!(self.nodes[id].value.dim(), (1, 1));
        self.nodes[id].value[(0, 0)]
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Id {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// Constant leaf.
    pub fn constant(&mut self, v: Array2<f64>) -> Id {
        self.push(Op::Value, v)
    }

    /// Scalar constant leaf.
    pub fn scalar_const(&mut self, v: f64) -> Id {
        self.constant(Array2::from_elem((1, 1), v))
    }

    /// Named parameter leaf; the current value is read from `store`.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Id {
        let v = store.get(name).clone();
        self.push(Op::Param(name.to_string()), v)
    }

    /// Parameter value with gradient tracking disabled (e.g. critic weights
    /// inside the actor loss).
    pub fn param_frozen(&mut self, store: &ParamStore, name: &str) -> Id {
        let v = store.get(name).clone();
        self.push(Op::Value, v)
    }

    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        self.push(Op::MatMul(a, b), v)
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        let v = broadcast_binop(&self.nodes[a].value, &self.nodes[b].value, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        let v = broadcast_binop(&self.nodes[a].value, &self.nodes[b].value, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        let v = broadcast_binop(&self.nodes[a].value, &self.nodes[b].value, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn min(&mut self, a: Id, b: Id) -> Id {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        debug_assert_eq!(av.dim(), bv.dim());
        let mut v = av.clone();
        v.zip_mut_with(bv, |x, &y| *x = x.min(y));
        self.push(Op::Min(a, b), v)
    }

    pub fn scale(&mut self, a: Id, c: f64) -> Id {
        let v = &self.nodes[a].value * c;
        self.push(Op::Scale(a, c), v)
    }

    pub fn add_const(&mut self, a: Id, c: f64) -> Id {
        let v = &self.nodes[a].value + c;
        self.push(Op::AddConst(a), v)
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), v)
    }

    pub fn tanh(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.mapv(f64::tanh);
        self.push(Op::Tanh(a), v)
    }

    pub fn exp(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.mapv(f64::exp);
        self.push(Op::Exp(a), v)
    }

    pub fn ln(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.mapv(f64::ln);
        self.push(Op::Ln(a), v)
    }

    /// Numerically stable softplus: max(x,0) + ln(1 + e^{−|x|}).
    pub fn softplus(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.mapv(|x| x.max(0.0) + (-x.abs()).exp().ln_1p());
        self.push(Op::Softplus(a), v)
    }

    pub fn clamp(&mut self, a: Id, lo: f64, hi: f64) -> Id {
        let v = self.nodes[a].value.mapv(|x| x.clamp(lo, hi));
        self.push(Op::Clamp(a, lo, hi), v)
    }

    pub fn sum(&mut self, a: Id) -> Id {
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum());
        self.push(Op::Sum(a), v)
    }

    pub fn mean(&mut self, a: Id) -> Id {
        let n = self.nodes[a].value.len() as f64;
        let v = Array2::from_elem((1, 1), self.nodes[a].value.sum() / n);
        self.push(Op::Mean(a), v)
    }

    pub fn sum_rows(&mut self, a: Id) -> Id {
        let col = self.nodes[a].value.sum_axis(Axis(1));
        let b = col.len();
        let v = col.into_shape((b, 1)).expect("sum_rows reshape");
        self.push(Op::SumRows(a), v)
    }

    pub fn concat_cols(&mut self, parts: &[Id]) -> Id {
        let rows = self.nodes[parts[0]].value.nrows();
        let total: usize = parts.iter().map(|&p| self.nodes[p].value.ncols()).sum();
        let mut v = Array2::zeros((rows, total));
        let mut at = 0;
        for &p in parts {
            let pv = &self.nodes[p].value;
            debug_assert_eq!(pv.nrows(), rows, "concat_cols: row mismatch");
            v.slice_mut(s![.., at..at + pv.ncols()]).assign(pv);
            at += pv.ncols();
        }
        self.push(Op::ConcatCols(parts.to_vec()), v)
    }

    pub fn slice_cols(&mut self, a: Id, start: usize, len: usize) -> Id {
        let v = self.nodes[a].value.slice(s![.., start..start + len]).to_owned();
        self.push(Op::SliceCols(a, start, len), v)
    }

    pub fn detach(&mut self, a: Id) -> Id {
        let v = self.nodes[a].value.clone();
        self.push(Op::Detach, v)
    }

    pub fn conv2d(&mut self, x: Id, w: Id, cfg: ConvCfg) -> Id {
        let v = conv2d_fwd(&self.nodes[x].value, &self.nodes[w].value, &cfg);
        self.push(Op::Conv2d { x, w, cfg }, v)
    }

    pub fn conv_t2d(&mut self, x: Id, w: Id, cfg: ConvCfg) -> Id {
        let v = conv2d_bwd_input(&self.nodes[x].value, &self.nodes[w].value, &cfg);
        self.push(Op::ConvT2d { x, w, cfg }, v)
    }

    pub fn tile_add(&mut self, a: Id, b: Id) -> Id {
        let av = &self.nodes[a].value;
        let bv = &self.nodes[b].value;
        let c = bv.ncols();
        debug_assert_eq!(bv.nrows(), 1, "tile_add: bias must be a row");
        debug_assert_eq!(av.ncols() % c, 0, "tile_add: columns not a multiple of channels");
        let mut v = av.clone();
        for mut row in v.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x += bv[(0, j % c)];
            }
        }
        self.push(Op::TileAdd(a, b), v)
    }

    // ---- composite helpers ----

    /// x² as x·x.
    pub fn square(&mut self, a: Id) -> Id {
        self.mul(a, a)
    }

    /// Mean squared error between two same-shape nodes → 1×1.
    pub fn mse(&mut self, a: Id, b: Id) -> Id {
        let d = self.sub(a, b);
        let d2 = self.square(d);
        self.mean(d2)
    }

    /// Fail with a numeric fault if the node's value is not finite.
    pub fn check_finite(&self, id: Id, site: &str) -> Result<()> {
        let v = &self.nodes[id].value;
        if v.iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            let bad = v.iter().find(|x| !x.is_finite()).copied().unwrap_or(f64::NAN);
            Err(Error::numeric(site, format!("non-finite value {bad}")))
        }
    }

    /// Reverse pass from a scalar node. Returns the gradient of `loss` with
    /// respect to every named parameter leaf in the graph.
    pub fn backward(&self, loss: Id) -> Gradients {
        assert_eq!(
            self.nodes[loss].value.dim(),
            (1, 1),
            "backward requires a scalar loss node"
        );
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(Array2::from_elem((1, 1), 1.0));

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[id].op {
                Op::Value | Op::Param(_) => {
                    grads[id] = Some(g); // keep for collection below
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.nodes[*b].value.t());
                    let gb = self.nodes[*a].value.t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    let gb = reduce_to_shape(&g, self.nodes[*b].value.dim());
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Sub(a, b) => {
                    let gb = reduce_to_shape(&g, self.nodes[*b].value.dim());
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, -gb);
                }
                Op::Mul(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let ga = &g * &broadcast_like(bv, av.dim());
                    let gb = reduce_to_shape(&(&g * av), bv.dim());
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Min(a, b) => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let mut ga = g.clone();
                    let mut gb = g.clone();
                    ndarray::Zip::from(&mut ga).and(&mut gb).and(av).and(bv).for_each(
                        |ga, gb, &x, &y| {
                            if x <= y {
                                *gb = 0.0;
                            } else {
                                *ga = 0.0;
                            }
                        },
                    );
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, c) => accumulate(&mut grads, *a, &g * *c),
                Op::AddConst(a) => accumulate(&mut grads, *a, g),
                Op::Relu(a) => {
                    let mask = self.nodes[*a].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].value;
                    accumulate(&mut grads, *a, &g * &y.mapv(|t| 1.0 - t * t));
                }
                Op::Exp(a) => {
                    accumulate(&mut grads, *a, &g * &self.nodes[id].value);
                }
                Op::Ln(a) => {
                    accumulate(&mut grads, *a, &g / &self.nodes[*a].value);
                }
                Op::Softplus(a) => {
                    // d softplus/dx = sigmoid(x), computed stably.
                    let sig = self.nodes[*a].value.mapv(stable_sigmoid);
                    accumulate(&mut grads, *a, &g * &sig);
                }
                Op::Clamp(a, lo, hi) => {
                    let mask = self.nodes[*a]
                        .value
                        .mapv(|x| if x >= *lo && x <= *hi { 1.0 } else { 0.0 });
                    accumulate(&mut grads, *a, &g * &mask);
                }
                Op::Sum(a) => {
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), g[(0, 0)]);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].value.len() as f64;
                    let ga = Array2::from_elem(self.nodes[*a].value.dim(), g[(0, 0)] / n);
                    accumulate(&mut grads, *a, ga);
                }
                Op::SumRows(a) => {
                    let (rows, cols) = self.nodes[*a].value.dim();
                    let mut ga = Array2::zeros((rows, cols));
                    for r in 0..rows {
                        let gr = g[(r, 0)];
                        ga.row_mut(r).fill(gr);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut at = 0;
                    for &p in parts {
                        let w = self.nodes[p].value.ncols();
                        let gp = g.slice(s![.., at..at + w]).to_owned();
                        accumulate(&mut grads, p, gp);
                        at += w;
                    }
                }
                Op::SliceCols(a, start, len) => {
                    let mut ga = Array2::zeros(self.nodes[*a].value.dim());
                    ga.slice_mut(s![.., *start..*start + *len]).assign(&g);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Detach => {}
                Op::Conv2d { x, w, cfg } => {
                    let gx = conv2d_bwd_input(&g, &self.nodes[*w].value, cfg);
                    let gw = conv2d_bwd_weight(&self.nodes[*x].value, &g, cfg);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::ConvT2d { x, w, cfg } => {
                    // Forward was conv2d_bwd_input; its adjoints mirror the
                    // forward conv with x and g swapping roles.
                    let gx = conv2d_fwd(&g, &self.nodes[*w].value, cfg);
                    let gw = conv2d_bwd_weight(&g, &self.nodes[*x].value, cfg);
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *w, gw);
                }
                Op::TileAdd(a, b) => {
                    let c = self.nodes[*b].value.ncols();
                    let mut gb = Array2::zeros((1, c));
                    for row in g.rows() {
                        for (j, &v) in row.iter().enumerate() {
                            gb[(0, j % c)] += v;
                        }
                    }
                    accumulate(&mut grads, *a, g);
                    accumulate(&mut grads, *b, gb);
                }
            }
        }

        let mut out = Gradients::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Param(name) = &node.op {
                if let Some(g) = grads[id].take() {
                    out.entry(name.clone())
                        .and_modify(|acc| *acc += &g)
                        .or_insert(g);
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], id: Id, g: Array2<f64>) {
    match &mut grads[id] {
        Some(acc) => *acc += &g,
        slot @ None => *slot = Some(g),
    }
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Apply an elementwise binop with the limited broadcast rules documented
/// on [`Graph`]: rhs may be (1, n) or 1×1.
fn broadcast_binop(a: &Array2<f64>, b: &Array2<f64>, f: impl Fn(f64, f64) -> f64) -> Array2<f64> {
    if a.dim() == b.dim() {
        let mut out = a.clone();
        out.zip_mut_with(b, |x, &y| *x = f(*x, y));
        out
    } else if b.dim() == (1, 1) {
        a.mapv(|x| f(x, b[(0, 0)]))
    } else if b.nrows() == 1 && b.ncols() == a.ncols() {
        let mut out = a.clone();
        for mut row in out.rows_mut() {
            for (j, x) in row.iter_mut().enumerate() {
                *x = f(*x, b[(0, j)]);
            }
        }
        out
    } else {
        panic!("incompatible shapes {:?} vs {:?}", a.dim(), b.dim());
    }
}

/// Materialize `b` at shape `dim` under the same broadcast rules.
fn broadcast_like(b: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    if b.dim() == dim {
        b.clone()
    } else if b.dim() == (1, 1) {
        Array2::from_elem(dim, b[(0, 0)])
    } else {
        let mut out = Array2::zeros(dim);
        for mut row in out.rows_mut() {
            row.assign(&b.row(0));
        }
        out
    }
}

/// Sum `g` down to `dim` (inverse of broadcasting) for the broadcast
/// operand's gradient.
fn reduce_to_shape(g: &Array2<f64>, dim: (usize, usize)) -> Array2<f64> {
    if g.dim() == dim {
        g.clone()
    } else if dim == (1, 1) {
        Array2::from_elem((1, 1), g.sum())
    } else {
        let summed = g.sum_axis(Axis(0));
        summed.into_shape((1, dim.1)).expect("reduce reshape")
    }
}
