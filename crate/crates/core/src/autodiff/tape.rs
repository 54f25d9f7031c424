//! Reverse-mode differentiation over a fixed set of batched primitives.
//!
//! Every node holds a `batch × width` matrix. The forward pass records nodes
//! in evaluation order; [`Tape::backward`] walks them in reverse and
//! accumulates parameter gradients into a buffer laid out like the
//! [`ParamStore`] flat view.

use super::matrix::{axpy, dot, Matrix};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a recorded node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Input,
    /// `x · W + b` with `W` stored as `[in, out]`.
    Linear {
        x: Var,
        w: ParamId,
        b: ParamId,
    },
    Tanh {
        x: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        x: Var,
        c: f64,
    },
    Columns {
        x: Var,
        start: usize,
    },
    /// `L(e) · v` with `L` skew-symmetric, built from its strict lower
    /// triangle `e` (row-major over `i > j`).
    SkewMatVec {
        entries: Var,
        v: Var,
    },
    /// `D(e) · D(e)ᵀ · v` with `D` lower-triangular, built from `e`
    /// (row-major over `i >= j`).
    GramMatVec {
        entries: Var,
        v: Var,
    },
    /// Per-row `Σ_j w_j x_j²`.
    WeightedSqNorm {
        x: Var,
        w: Vec<f64>,
    },
    /// Mean of all elements, as a 1×1 matrix.
    Mean {
        x: Var,
    },
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Matrix,
    needs_grad: bool,
}

/// Parameter gradients aligned with [`ParamStore::flat`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<f64>);

impl Gradients {
    pub fn zeros(len: usize) -> Self {
        Gradients(vec![0.0; len])
    }

    pub fn param<'a>(&'a self, store: &ParamStore, id: ParamId) -> &'a [f64] {
        &self.0[store.range(id)]
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            *a += b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.0.iter_mut().for_each(|v| *v *= c);
    }
}

/// Recorded forward computation. Single use: a second `backward` call is an
/// error because accumulated state is not reset.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    consumed: bool,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
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

    /// Handle of the most recently recorded node.
    pub fn last(&self) -> Option<Var> {
        self.nodes.len().checked_sub(1).map(Var)
    }

    fn push(&mut self, op: Op, value: Matrix, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn input(&mut self, value: Matrix) -> Var {
        self.push(Op::Input, value, false)
    }

    pub fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Result<Var> {
        let wshape = self.params.shape(w);
        let bshape = self.params.shape(b);
        let xv = &self.nodes[x.0].value;
        if wshape.len() != 2 || wshape[0] != xv.cols() || bshape != [wshape[1]] {
            return Err(Error::InvalidInput(format!(
                "linear: input width {} incompatible with weight {:?} / bias {:?}",
                xv.cols(),
                wshape,
                bshape
            )));
        }
        let (n_in, n_out) = (wshape[0], wshape[1]);
        let wv = self.params.get(w);
        let bv = self.params.get(b);
        let mut out = Matrix::zeros(xv.rows(), n_out);
        for r in 0..xv.rows() {
            let xr = xv.row(r);
            let yr = out.row_mut(r);
            yr.copy_from_slice(bv);
            for (i, &xi) in xr.iter().enumerate().take(n_in) {
                axpy(xi, &wv[i * n_out..(i + 1) * n_out], yr);
            }
        }
        Ok(self.push(Op::Linear { x, w, b }, out, true))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let ng = self.needs(x);
        self.push(Op::Tanh { x }, out, ng)
    }

    fn check_same(&self, a: Var, b: Var, what: &str) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::InvalidInput(format!("{what}: shape {sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add { a, b }, out, ng))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_same(a, b, "sub")?;
        let mut out = self.value(a).clone();
        for (o, v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o -= v;
        }
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub { a, b }, out, ng))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let mut out = self.value(x).clone();
        out.data_mut().iter_mut().for_each(|v| *v *= c);
        let ng = self.needs(x);
        self.push(Op::Scale { x, c }, out, ng)
    }

    /// Columns `start..start + len` of `x`.
    pub fn columns(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xv = self.value(x);
        if start + len > xv.cols() {
            return Err(Error::InvalidInput(format!(
                "columns {start}..{} out of range for width {}",
                start + len,
                xv.cols()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), len);
        for r in 0..xv.rows() {
            out.row_mut(r).copy_from_slice(&xv.row(r)[start..start + len]);
        }
        let ng = self.needs(x);
        Ok(self.push(Op::Columns { x, start }, out, ng))
    }

    pub fn skew_matvec(&mut self, entries: Var, v: Var) -> Result<Var> {
        let (ev, vv) = (self.value(entries), self.value(v));
        let n = vv.cols();
        if ev.rows() != vv.rows() || ev.cols() != n * (n - 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "skew_matvec: entries {:?} do not match vector {:?}",
                ev.shape(),
                vv.shape()
            )));
        }
        let mut out = Matrix::zeros(vv.rows(), n);
        for r in 0..vv.rows() {
            let (e, x, y) = (ev.row(r), vv.row(r), out.row_mut(r));
            let mut k = 0;
            for i in 1..n {
                for j in 0..i {
                    y[i] += e[k] * x[j];
                    y[j] -= e[k] * x[i];
                    k += 1;
                }
            }
        }
        let ng = self.needs(entries) || self.needs(v);
        Ok(self.push(Op::SkewMatVec { entries, v }, out, ng))
    }

    pub fn gram_matvec(&mut self, entries: Var, v: Var) -> Result<Var> {
        let (ev, vv) = (self.value(entries), self.value(v));
        let n = vv.cols();
        if ev.rows() != vv.rows() || ev.cols() != n * (n + 1) / 2 {
            return Err(Error::InvalidInput(format!(
                "gram_matvec: entries {:?} do not match vector {:?}",
                ev.shape(),
                vv.shape()
            )));
        }
        let mut out = Matrix::zeros(vv.rows(), n);
        let mut u = vec![0.0; n];
        for r in 0..vv.rows() {
            let (e, x) = (ev.row(r), vv.row(r));
            gram_apply(e, x, &mut u, out.row_mut(r));
        }
        let ng = self.needs(entries) || self.needs(v);
        Ok(self.push(Op::GramMatVec { entries, v }, out, ng))
    }

    pub fn weighted_sq_norm(&mut self, x: Var, w: &[f64]) -> Result<Var> {
        let xv = self.value(x);
        if w.len() != xv.cols() {
            return Err(Error::InvalidInput(format!(
                "weighted_sq_norm: {} weights for width {}",
                w.len(),
                xv.cols()
            )));
        }
        let mut out = Matrix::zeros(xv.rows(), 1);
        for r in 0..xv.rows() {
            out.data_mut()[r] = xv.row(r).iter().zip(w).map(|(v, wj)| wj * v * v).sum();
        }
        let ng = self.needs(x);
        Ok(self.push(Op::WeightedSqNorm { x, w: w.to_vec() }, out, ng))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.data().len().max(1) as f64;
        let m = xv.data().iter().sum::<f64>() / n;
        let ng = self.needs(x);
        self.push(Op::Mean { x }, Matrix::from_vec(1, 1, vec![m]).unwrap(), ng)
    }

    /// Gradient of `⟨seed, value(output)⟩` with respect to every parameter.
    pub fn backward_from(&mut self, output: Var, seed: &Matrix) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::InvalidState(
                "tape already consumed by a previous backward pass".into(),
            ));
        }
        if output.0 >= self.nodes.len() {
            return Err(Error::InvalidState("output node not recorded on this tape".into()));
        }
        if seed.shape() != self.value(output).shape() {
            return Err(Error::InvalidInput(format!(
                "seed shape {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        self.consumed = true;

        let mut grads = Gradients::zeros(self.params.len());
        let mut adj: Vec<Option<Matrix>> = vec![None; output.0 + 1];
        adj[output.0] = Some(seed.clone());

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Input => {}
                Op::Linear { x, w, b } => {
                    let xv = &self.nodes[x.0].value;
                    let (n_in, n_out) = (xv.cols(), g.cols());
                    let wr = self.params.range(*w);
                    let br = self.params.range(*b);
                    {
                        let dw = &mut grads.0[wr.clone()];
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            for (i, &xi) in xv.row(r).iter().enumerate() {
                                if xi != 0.0 {
                                    axpy(xi, gr, &mut dw[i * n_out..(i + 1) * n_out]);
                                }
                            }
                        }
                    }
                    {
                        let db = &mut grads.0[br];
                        for r in 0..g.rows() {
                            axpy(1.0, g.row(r), db);
                        }
                    }
                    if self.nodes[x.0].needs_grad {
                        let wv = self.params.get(*w);
                        let mut dx = Matrix::zeros(g.rows(), n_in);
                        for r in 0..g.rows() {
                            let gr = g.row(r);
                            let dxr = dx.row_mut(r);
                            for (i, d) in dxr.iter_mut().enumerate() {
                                *d = dot(&wv[i * n_out..(i + 1) * n_out], gr);
                            }
                        }
                        accumulate(&mut adj, *x, dx);
                    }
                }
                Op::Tanh { x } => {
                    let mut dx = g;
                    for (d, y) in dx.data_mut().iter_mut().zip(node.value.data()) {
                        *d *= 1.0 - y * y;
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].needs_grad {
                        accumulate(&mut adj, b, g.clone());
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    if self.nodes[b.0].needs_grad {
                        let mut neg = g.clone();
                        neg.data_mut().iter_mut().for_each(|v| *v = -*v);
                        accumulate(&mut adj, b, neg);
                    }
                    accumulate(&mut adj, a, g);
                }
                Op::Scale { x, c } => {
                    let mut dx = g;
                    dx.data_mut().iter_mut().for_each(|v| *v *= c);
                    accumulate(&mut adj, *x, dx);
                }
                Op::Columns { x, start } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..g.rows() {
                        dx.row_mut(r)[*start..*start + g.cols()].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::SkewMatVec { entries, v } => {
                    let (ev, vv) = (&self.nodes[entries.0].value, &self.nodes[v.0].value);
                    let n = vv.cols();
                    let mut de = Matrix::zeros(ev.rows(), ev.cols());
                    let mut dv = Matrix::zeros(vv.rows(), n);
                    for r in 0..g.rows() {
                        let (e, x, gy) = (ev.row(r), vv.row(r), g.row(r));
                        let der = de.row_mut(r);
                        let mut k = 0;
                        for i in 1..n {
                            for j in 0..i {
                                der[k] = gy[i] * x[j] - gy[j] * x[i];
                                k += 1;
                            }
                        }
                        let dvr = dv.row_mut(r);
                        let mut k = 0;
                        for i in 1..n {
                            for j in 0..i {
                                dvr[j] += e[k] * gy[i];
                                dvr[i] -= e[k] * gy[j];
                                k += 1;
                            }
                        }
                    }
                    let (entries, v) = (*entries, *v);
                    if self.nodes[v.0].needs_grad {
                        accumulate(&mut adj, v, dv);
                    }
                    accumulate(&mut adj, entries, de);
                }
                Op::GramMatVec { entries, v } => {
                    let (ev, vv) = (&self.nodes[entries.0].value, &self.nodes[v.0].value);
                    let n = vv.cols();
                    let mut de = Matrix::zeros(ev.rows(), ev.cols());
                    let mut dv = Matrix::zeros(vv.rows(), n);
                    let mut u = vec![0.0; n];
                    let mut du = vec![0.0; n];
                    for r in 0..g.rows() {
                        let (e, x, gy) = (ev.row(r), vv.row(r), g.row(r));
                        // u = Dᵀx, du = Dᵀgy
                        u.iter_mut().for_each(|v| *v = 0.0);
                        du.iter_mut().for_each(|v| *v = 0.0);
                        let mut k = 0;
                        for i in 0..n {
                            for c in 0..=i {
                                u[c] += e[k] * x[i];
                                du[c] += e[k] * gy[i];
                                k += 1;
                            }
                        }
                        let der = de.row_mut(r);
                        let mut k = 0;
                        for i in 0..n {
                            for c in 0..=i {
                                der[k] = gy[i] * u[c] + x[i] * du[c];
                                k += 1;
                            }
                        }
                        let dvr = dv.row_mut(r);
                        let mut k = 0;
                        for (i, d) in dvr.iter_mut().enumerate() {
                            for dc in du.iter().take(i + 1) {
                                *d += e[k] * dc;
                                k += 1;
                            }
                        }
                    }
                    let (entries, v) = (*entries, *v);
                    if self.nodes[v.0].needs_grad {
                        accumulate(&mut adj, v, dv);
                    }
                    accumulate(&mut adj, entries, de);
                }
                Op::WeightedSqNorm { x, w } => {
                    let xv = &self.nodes[x.0].value;
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for r in 0..xv.rows() {
                        let gr = g.data()[r];
                        for ((d, v), wj) in dx.row_mut(r).iter_mut().zip(xv.row(r)).zip(w) {
                            *d = 2.0 * wj * v * gr;
                        }
                    }
                    accumulate(&mut adj, *x, dx);
                }
                Op::Mean { x } => {
                    let xv = &self.nodes[x.0].value;
                    let c = g.data()[0] / xv.data().len().max(1) as f64;
                    let dx = Matrix::from_vec(xv.rows(), xv.cols(), vec![c; xv.data().len()])?;
                    accumulate(&mut adj, *x, dx);
                }
            }
        }
        Ok(grads)
    }

    /// Gradient of `⟨loss_grad, output⟩` where the output is the last
    /// recorded node.
    pub fn backward(&mut self, loss_grad: &Matrix) -> Result<Gradients> {
        let out = self
            .last()
            .ok_or_else(|| Error::InvalidState("backward on an empty tape".into()))?;
        self.backward_from(out, loss_grad)
    }

    /// Recomputes every node from its recorded inputs and compares with the
    /// stored values.
    pub fn replay_matches(&self) -> Result<bool> {
        let mut fresh = Tape::new(self.params);
        for node in &self.nodes {
            let v = match &node.op {
                Op::Input => fresh.input(node.value.clone()),
                Op::Linear { x, w, b } => fresh.linear(*x, *w, *b)?,
                Op::Tanh { x } => fresh.tanh(*x),
                Op::Add { a, b } => fresh.add(*a, *b)?,
                Op::Sub { a, b } => fresh.sub(*a, *b)?,
                Op::Scale { x, c } => fresh.scale(*x, *c),
                Op::Columns { x, start } => fresh.columns(*x, *start, node.value.cols())?,
                Op::SkewMatVec { entries, v } => fresh.skew_matvec(*entries, *v)?,
                Op::GramMatVec { entries, v } => fresh.gram_matvec(*entries, *v)?,
                Op::WeightedSqNorm { x, w } => fresh.weighted_sq_norm(*x, w)?,
                Op::Mean { x } => fresh.mean(*x),
            };
            if fresh.value(v) != &node.value {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

fn accumulate(adj: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

/// `y = D Dᵀ x` for a lower-triangular `D` given row-major by `e`;
/// `u` is scratch of length `n`.
pub(crate) fn gram_apply(e: &[f64], x: &[f64], u: &mut [f64], y: &mut [f64]) {
    let n = x.len();
    u.iter_mut().for_each(|v| *v = 0.0);
    let mut k = 0;
    for i in 0..n {
        for uc in u.iter_mut().take(i + 1) {
            *uc += e[k] * x[i];
            k += 1;
        }
    }
    let mut k = 0;
    for yi in y.iter_mut().take(n) {
        *yi = 0.0;
    }
    for (i, yi) in y.iter_mut().enumerate().take(n) {
        for uc in u.iter().take(i + 1) {
            *yi += e[k] * uc;
            k += 1;
        }
    }
}
