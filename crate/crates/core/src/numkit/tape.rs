//! Define-by-run gradient tape.
//!
//! Nodes are appended in evaluation order, so every node's inputs have a
//! smaller index than the node itself and a reverse index sweep is a valid
//! reverse topological order. Cycles cannot be expressed.

use std::collections::HashMap;

use super::params::{GradStore, ParamId, ParamStore};
use super::tensor::{dot, sigmoid, softmax_unchecked, Tensor};

/// Floor applied inside `-log p` so an exact zero cannot produce infinity.
pub const LOG_FLOOR: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MaskMul(Var, Vec<f64>),
    ScalarMul(Var, Var),
    OneMinus(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softmax(Var),
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Row(Var, usize),
    Stack(Vec<Var>),
    Concat(Vec<Var>),
    Slice(Var, usize),
    ScatterAdd(Var, Vec<usize>),
    Pad(Var),
    NegLogAt { p: Var, idx: usize, clamped: bool },
    Sum(Vec<Var>),
    Gru(Box<GruRecord>),
}

#[derive(Debug)]
struct GruRecord {
    x: Var,
    h: Var,
    w: GruVars,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

/// Weights of one GRU cell as tape variables.
///
/// Gate rows are stacked as `[update; reset; candidate]` in `w_input` and
/// `bias`, and `[update; reset]` in `w_hidden_gates`.
///
/// ```text
/// z  = σ(W_z x + U_z h + b_z)
/// r  = σ(W_r x + U_r h + b_r)
/// h~ = tanh(W_n x + U_n (r ⊙ h) + b_n)
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruVars {
    pub w_input: Var,
    pub w_hidden_gates: Var,
    pub w_hidden_cand: Var,
    pub bias: Var,
}

/// A recorded value plus the rule that produced it.
#[derive(Debug)]
pub struct Node {
    value: Tensor,
    op: Op,
}

impl Node {
    pub fn value(&self) -> &Tensor {
        &self.value
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
    param_lookup: HashMap<ParamId, Var>,
    clamped_logs: usize,
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

    /// Number of `-log p` evaluations that hit [`LOG_FLOOR`].
    pub fn clamped_logs(&self) -> usize {
        self.clamped_logs
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let d = self.data(v);
        assert_eq!(d.len(), 1, "not a scalar node");
        d[0]
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn vec_node(&mut self, data: Vec<f64>, op: Op) -> Var {
        self.push(Tensor::vector(data), op)
    }

    pub fn leaf(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf)
    }

    /// Registers a parameter as a leaf. Repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.param_lookup.get(&id) {
            return v;
        }
        let v = self.leaf(store.get(id).clone());
        self.params.push((id, v));
        self.param_lookup.insert(id, v);
        v
    }

    fn same_len(&self, a: Var, b: Var) {
        assert_eq!(
            self.data(a).len(),
            self.data(b).len(),
            "elementwise op on mismatched lengths"
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x - y).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_len(a, b);
        let out = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.data(a).iter().map(|x| x * s).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Scale(a, s))
    }

    /// Elementwise product with a constant mask (used for dropout).
    pub fn mask_mul(&mut self, a: Var, mask: Vec<f64>) -> Var {
        assert_eq!(self.data(a).len(), mask.len());
        let out = self.data(a).iter().zip(&mask).map(|(x, m)| x * m).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::MaskMul(a, mask))
    }

    /// `s * v` where `s` is a one-element node.
    pub fn scalar_mul(&mut self, s: Var, v: Var) -> Var {
        let sv = self.scalar(s);
        let out = self.data(v).iter().map(|x| x * sv).collect();
        let shape = self.value(v).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::ScalarMul(s, v))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|x| 1.0 - x).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::OneMinus(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|&x| sigmoid(x)).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.data(a).iter().map(|x| x.tanh()).collect();
        let shape = self.value(a).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Tanh(a))
    }

    /// Softmax over a vector. Non-finite input propagates NaN; callers check
    /// the loss for finiteness.
    pub fn softmax(&mut self, a: Var) -> Var {
        assert!(!self.data(a).is_empty(), "softmax of empty vector");
        let out = softmax_unchecked(self.data(a));
        self.vec_node(out, Op::Softmax(a))
    }

    /// `w · x` for a matrix `w` (m x n) and vector `x` (n).
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let (m, n) = self.value(w).dims2();
        assert_eq!(self.data(x).len(), n, "matvec: {m}x{n} times {}", self.data(x).len());
        let wd = self.data(w);
        let xd = self.data(x);
        let out = (0..m).map(|i| dot(&wd[i * n..(i + 1) * n], xd)).collect();
        self.vec_node(out, Op::MatVec(w, x))
    }

    /// `wᵀ · x` for a matrix `w` (m x n) and vector `x` (m).
    pub fn mat_t_vec(&mut self, w: Var, x: Var) -> Var {
        let (m, n) = self.value(w).dims2();
        assert_eq!(self.data(x).len(), m, "mat_t_vec: ({m}x{n})ᵀ times {}", self.data(x).len());
        let wd = self.data(w);
        let xd = self.data(x);
        let mut out = vec![0.0; n];
        for (i, &xi) in xd.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (o, wij) in out.iter_mut().zip(&wd[i * n..(i + 1) * n]) {
                *o += wij * xi;
            }
        }
        self.vec_node(out, Op::MatTVec(w, x))
    }

    /// Row `i` of a matrix, as a vector.
    pub fn row(&mut self, m: Var, i: usize) -> Var {
        let (rows, _) = self.value(m).dims2();
        assert!(i < rows, "row {i} out of range for {rows} rows");
        let out = self.value(m).row(i).to_vec();
        self.vec_node(out, Op::Row(m, i))
    }

    /// Stacks equal-length vectors into a matrix, one per row.
    pub fn stack(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack of nothing");
        let n = self.data(rows[0]).len();
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert_eq!(self.data(r).len(), n, "stack: ragged rows");
            out.extend_from_slice(self.data(r));
        }
        let t = Tensor::matrix(rows.len(), n, out).expect("shape");
        self.push(t, Op::Stack(rows.to_vec()))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut out = Vec::new();
        for &p in parts {
            out.extend_from_slice(self.data(p));
        }
        self.vec_node(out, Op::Concat(parts.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Var {
        let out = self.data(a)[start..start + len].to_vec();
        self.vec_node(out, Op::Slice(a, start))
    }

    /// `out[ids[i]] += a[i]` into a zero vector of length `size`.
    pub fn scatter_add(&mut self, a: Var, ids: &[usize], size: usize) -> Var {
        assert_eq!(self.data(a).len(), ids.len(), "scatter: one id per element");
        let mut out = vec![0.0; size];
        for (&v, &i) in self.data(a).iter().zip(ids) {
            out[i] += v;
        }
        self.vec_node(out, Op::ScatterAdd(a, ids.to_vec()))
    }

    /// Extends a vector with trailing zeros up to `size`.
    pub fn pad(&mut self, a: Var, size: usize) -> Var {
        let mut out = self.data(a).to_vec();
        assert!(size >= out.len());
        out.resize(size, 0.0);
        self.vec_node(out, Op::Pad(a))
    }

    /// `-ln(max(p[idx], LOG_FLOOR))`.
    pub fn neg_log_at(&mut self, p: Var, idx: usize) -> Var {
        let v = self.data(p)[idx];
        let clamped = !(v > LOG_FLOOR);
        if clamped {
            self.clamped_logs += 1;
        }
        let out = -(if clamped { LOG_FLOOR } else { v }).ln();
        self.push(Tensor::scalar(out), Op::NegLogAt { p, idx, clamped })
    }

    /// Elementwise sum of equal-length nodes.
    pub fn sum(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty(), "sum of nothing");
        let mut out = self.data(parts[0]).to_vec();
        for &p in &parts[1..] {
            assert_eq!(self.data(p).len(), out.len(), "sum: mismatched lengths");
            for (o, v) in out.iter_mut().zip(self.data(p)) {
                *o += v;
            }
        }
        let shape = self.value(parts[0]).shape().to_vec();
        self.push(Tensor::new(shape, out).expect("shape"), Op::Sum(parts.to_vec()))
    }

    /// One GRU step. See [`GruVars`] for the gate convention.
    pub fn gru_cell(&mut self, x: Var, h: Var, w: GruVars) -> Var {
        let hd = self.data(h).len();
        let xd = self.data(x).len();
        assert_eq!(self.value(w.w_input).dims2(), (3 * hd, xd), "gru input weights");
        assert_eq!(self.value(w.w_hidden_gates).dims2(), (2 * hd, hd), "gru hidden gate weights");
        assert_eq!(self.value(w.w_hidden_cand).dims2(), (hd, hd), "gru candidate weights");
        assert_eq!(self.data(w.bias).len(), 3 * hd, "gru bias");

        let hv = self.data(h);
        let a: Vec<f64> = super::tensor::matvec(self.data(w.w_input), 3 * hd, xd, self.data(x))
            .into_iter()
            .zip(self.data(w.bias))
            .map(|(v, b)| v + b)
            .collect();
        let u = super::tensor::matvec(self.data(w.w_hidden_gates), 2 * hd, hd, hv);
        let z: Vec<f64> = (0..hd).map(|i| sigmoid(a[i] + u[i])).collect();
        let r: Vec<f64> = (0..hd).map(|i| sigmoid(a[hd + i] + u[hd + i])).collect();
        let rh: Vec<f64> = r.iter().zip(hv).map(|(r, h)| r * h).collect();
        let m = super::tensor::matvec(self.data(w.w_hidden_cand), hd, hd, &rh);
        let n: Vec<f64> = (0..hd).map(|i| (a[2 * hd + i] + m[i]).tanh()).collect();
        let out = (0..hd).map(|i| (1.0 - z[i]) * hv[i] + z[i] * n[i]).collect();
        self.vec_node(out, Op::Gru(Box::new(GruRecord { x, h, w, z, r, n, rh })))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.data(loss).len(), 1, "backward needs a scalar loss");
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let (lo, hi) = grads.split_at_mut(i);
            let Some(g) = hi[0].as_ref() else { continue };
            self.backprop_node(i, g, lo);
        }
        Gradients { grads }
    }

    fn acc<'g>(&self, lo: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut Vec<f64> {
        let n = self.nodes[v.0].value.len();
        lo[v.0].get_or_insert_with(|| vec![0.0; n])
    }

    fn backprop_node(&self, i: usize, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let y = self.nodes[i].value.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                axpy(self.acc(lo, *a), 1.0, g);
                axpy(self.acc(lo, *b), 1.0, g);
            }
            Op::Sub(a, b) => {
                axpy(self.acc(lo, *a), 1.0, g);
                axpy(self.acc(lo, *b), -1.0, g);
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.data(*a), self.data(*b));
                let ga = self.acc(lo, *a);
                for ((o, gi), bi) in ga.iter_mut().zip(g).zip(bd) {
                    *o += gi * bi;
                }
                let gb = self.acc(lo, *b);
                for ((o, gi), ai) in gb.iter_mut().zip(g).zip(ad) {
                    *o += gi * ai;
                }
            }
            Op::Scale(a, s) => axpy(self.acc(lo, *a), *s, g),
            Op::MaskMul(a, mask) => {
                let ga = self.acc(lo, *a);
                for ((o, gi), m) in ga.iter_mut().zip(g).zip(mask) {
                    *o += gi * m;
                }
            }
            Op::ScalarMul(s, v) => {
                let sv = self.scalar(*s);
                let vd = self.data(*v);
                let gs = dot(g, vd);
                self.acc(lo, *s)[0] += gs;
                axpy(self.acc(lo, *v), sv, g);
            }
            Op::OneMinus(a) => axpy(self.acc(lo, *a), -1.0, g),
            Op::Sigmoid(a) => {
                let ga = self.acc(lo, *a);
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * yi * (1.0 - yi);
                }
            }
            Op::Tanh(a) => {
                let ga = self.acc(lo, *a);
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += gi * (1.0 - yi * yi);
                }
            }
            Op::Softmax(a) => {
                let s = dot(g, y);
                let ga = self.acc(lo, *a);
                for ((o, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *o += yi * (gi - s);
                }
            }
            Op::MatVec(w, x) => {
                let (m, n) = self.value(*w).dims2();
                let (wd, xd) = (self.data(*w), self.data(*x));
                let gw = self.acc(lo, *w);
                for r in 0..m {
                    if g[r] == 0.0 {
                        continue;
                    }
                    axpy(&mut gw[r * n..(r + 1) * n], g[r], xd);
                }
                let gx = self.acc(lo, *x);
                for r in 0..m {
                    if g[r] == 0.0 {
                        continue;
                    }
                    axpy(gx, g[r], &wd[r * n..(r + 1) * n]);
                }
            }
            Op::MatTVec(w, x) => {
                let (m, n) = self.value(*w).dims2();
                let (wd, xd) = (self.data(*w), self.data(*x));
                let gw = self.acc(lo, *w);
                for r in 0..m {
                    axpy(&mut gw[r * n..(r + 1) * n], xd[r], g);
                }
                let gx = self.acc(lo, *x);
                for (r, o) in gx.iter_mut().enumerate() {
                    *o += dot(&wd[r * n..(r + 1) * n], g);
                }
            }
            Op::Row(m, r) => {
                let (_, n) = self.value(*m).dims2();
                let gm = self.acc(lo, *m);
                axpy(&mut gm[r * n..(r + 1) * n], 1.0, g);
            }
            Op::Stack(rows) => {
                let n = g.len() / rows.len();
                for (k, &r) in rows.iter().enumerate() {
                    axpy(self.acc(lo, r), 1.0, &g[k * n..(k + 1) * n]);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.data(p).len();
                    axpy(self.acc(lo, p), 1.0, &g[off..off + len]);
                    off += len;
                }
            }
            Op::Slice(a, start) => {
                let ga = self.acc(lo, *a);
                axpy(&mut ga[*start..*start + g.len()], 1.0, g);
            }
            Op::ScatterAdd(a, ids) => {
                let ga = self.acc(lo, *a);
                for (o, &id) in ga.iter_mut().zip(ids) {
                    *o += g[id];
                }
            }
            Op::Pad(a) => {
                let ga = self.acc(lo, *a);
                let n = ga.len();
                axpy(ga, 1.0, &g[..n]);
            }
            Op::NegLogAt { p, idx, clamped } => {
                if !clamped {
                    let pv = self.data(*p)[*idx];
                    self.acc(lo, *p)[*idx] -= g[0] / pv;
                }
            }
            Op::Sum(parts) => {
                for &p in parts {
                    axpy(self.acc(lo, p), 1.0, g);
                }
            }
            Op::Gru(rec) => self.backprop_gru(rec, g, lo),
        }
    }

    fn backprop_gru(&self, rec: &GruRecord, g: &[f64], lo: &mut [Option<Vec<f64>>]) {
        let GruRecord { x, h, w, z, r, n, rh } = rec;
        let hd = z.len();
        let xv = self.data(*x);
        let hv = self.data(*h);
        let xd = xv.len();

        let mut dh = vec![0.0; hd];
        // pre-activation grads for [update; reset; candidate]
        let mut da = vec![0.0; 3 * hd];
        for i in 0..hd {
            dh[i] = g[i] * (1.0 - z[i]);
            let dz = g[i] * (n[i] - hv[i]);
            da[i] = dz * z[i] * (1.0 - z[i]);
            let dn = g[i] * z[i];
            da[2 * hd + i] = dn * (1.0 - n[i] * n[i]);
        }

        let un = self.data(w.w_hidden_cand);
        let dn_pre = &da[2 * hd..];
        let mut drh = vec![0.0; hd];
        for (k, &d) in dn_pre.iter().enumerate() {
            if d != 0.0 {
                axpy(&mut drh, d, &un[k * hd..(k + 1) * hd]);
            }
        }
        {
            let gun = self.acc(lo, w.w_hidden_cand);
            for (k, &d) in dn_pre.iter().enumerate() {
                axpy(&mut gun[k * hd..(k + 1) * hd], d, rh);
            }
        }
        for i in 0..hd {
            dh[i] += drh[i] * r[i];
            let dr = drh[i] * hv[i];
            da[hd + i] = dr * r[i] * (1.0 - r[i]);
        }

        let uzr = self.data(w.w_hidden_gates);
        for k in 0..2 * hd {
            if da[k] != 0.0 {
                axpy(&mut dh, da[k], &uzr[k * hd..(k + 1) * hd]);
            }
        }
        {
            let guzr = self.acc(lo, w.w_hidden_gates);
            for k in 0..2 * hd {
                axpy(&mut guzr[k * hd..(k + 1) * hd], da[k], hv);
            }
        }

        let wx = self.data(w.w_input);
        let mut dx = vec![0.0; xd];
        for k in 0..3 * hd {
            if da[k] != 0.0 {
                axpy(&mut dx, da[k], &wx[k * xd..(k + 1) * xd]);
            }
        }
        {
            let gwx = self.acc(lo, w.w_input);
            for k in 0..3 * hd {
                axpy(&mut gwx[k * xd..(k + 1) * xd], da[k], xv);
            }
        }
        axpy(self.acc(lo, w.bias), 1.0, &da);
        axpy(self.acc(lo, *h), 1.0, &dh);
        axpy(self.acc(lo, *x), 1.0, &dx);
    }

    /// Parameters registered on this tape, in registration order.
    pub fn param_vars(&self) -> &[(ParamId, Var)] {
        &self.params
    }
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros if `v` does not reach the loss.
    pub fn wrt(&self, tape: &Tape, v: Var) -> Vec<f64> {
        match self.grads.get(v.0).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => vec![0.0; tape.data(v).len()],
        }
    }

    /// Adds every parameter gradient into `store`.
    pub fn accumulate(&self, tape: &Tape, store: &mut GradStore) {
        for &(id, v) in tape.param_vars() {
            if let Some(Some(g)) = self.grads.get(v.0) {
                for (o, gi) in store.get_mut(id).data_mut().iter_mut().zip(g) {
                    *o += gi;
                }
            }
        }
    }
}
