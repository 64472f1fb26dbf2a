//! A small reverse-mode automatic differentiation tape over `f64` vectors.
//!
//! Values are flat vectors; parameters are row-major matrices read directly
//! from a borrowed [`ParamStore`]. Ops that dominate the recurrent forward pass
//! (affine maps, LSTM gating, softmax cross-entropy, diagonal-Gaussian KL,
//! reparameterized sampling) are fused into single nodes.

use crate::params::{Grads, ParamId, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(ParamId),
    Affine { w: Var, b: Option<Var>, x: Var },
    Row { table: Var, row: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Relu(Var),
    Clamp { x: Var, lo: f64, hi: f64 },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    LstmGates { gates: Var, c_prev: Var },
    Softmax(Var),
    WeightedSum { weights: Var, items: Vec<Var> },
    Dot(Var, Var),
    Sum(Var),
    AddN(Vec<Var>),
    NllSoftmax { logits: Var, target: usize },
    KlDiag { mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var },
    Reparam { mu: Var, lv: Var, eps: Vec<f64> },
    L2Normalize(Var),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Computation graph for one forward/backward pass.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softmax_in_place(v: &mut [f64]) {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - m).exp();
        s += *x;
    }
    for x in v.iter_mut() {
        *x /= s;
    }
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
    v.iter().map(|x| x - lse).collect()
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::with_capacity(1024),
            param_vars: vec![None; params.len()],
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

    fn push(&mut self, op: Op, value: Vec<f64>) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => &self.params.get(id).data,
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let x = self.value(v);
        debug_assert_eq!(x.len(), 1);
        x[0]
    }

    pub fn dim(&self, v: Var) -> usize {
        self.value(v).len()
    }

    pub fn constant(&mut self, value: Vec<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.push(Op::Leaf, vec![0.0; n])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(Op::Param(id), Vec::new());
        self.param_vars[id.0] = Some(v);
        v
    }

    fn param_shape(&self, v: Var) -> (usize, usize) {
        match self.nodes[v.0].op {
            Op::Param(id) => {
                let t = self.params.get(id);
                (t.rows, t.cols)
            }
            _ => panic!("expected a parameter node"),
        }
    }

    /// `W x + b` with `W` a `rows x cols` parameter.
    pub fn affine(&mut self, w: ParamId, b: Option<ParamId>, x: Var) -> Var {
        let wv = self.param(w);
        let bv = b.map(|b| self.param(b));
        let (rows, cols) = self.param_shape(wv);
        let xs = self.value(x);
        assert_eq!(xs.len(), cols, "affine input dim for {}", self.params.name(w));
        let wd = &self.params.get(w).data;
        let mut out = match b {
            Some(b) => self.params.get(b).data.clone(),
            None => vec![0.0; rows],
        };
        for (r, o) in out.iter_mut().enumerate() {
            let row = &wd[r * cols..(r + 1) * cols];
            let mut acc = 0.0;
            for (a, c) in row.iter().zip(xs) {
                acc += a * c;
            }
            *o += acc;
        }
        self.push(Op::Affine { w: wv, b: bv, x }, out)
    }

    /// Row `row` of an embedding table.
    pub fn row(&mut self, table: ParamId, row: usize) -> Var {
        let tv = self.param(table);
        let t = self.params.get(table);
        assert!(row < t.rows, "row {row} out of range for {}", self.params.name(table));
        let value = t.data[row * t.cols..(row + 1) * t.cols].to_vec();
        self.push(Op::Row { table: tv, row }, value)
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!(x.len(), y.len(), "elementwise length mismatch");
        x.iter().zip(y).map(|(p, q)| f(*p, *q)).collect()
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p + q);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p - q);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.zip_with(a, b, |p, q| p * q);
        self.push(Op::Mul(a, b), v)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).iter().map(|x| x * c).collect();
        self.push(Op::Scale(a, c), v)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| sigmoid(*x)).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.exp()).collect();
        self.push(Op::Exp(a), v)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).iter().map(|x| x.max(0.0)).collect();
        self.push(Op::Relu(a), v)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(x).iter().map(|a| a.clamp(lo, hi)).collect();
        self.push(Op::Clamp { x, lo, hi }, v)
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let mut v = Vec::with_capacity(parts.iter().map(|p| self.dim(*p)).sum());
        for p in parts {
            v.extend_from_slice(self.value(*p));
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let v = self.value(x)[start..start + len].to_vec();
        self.push(Op::Slice { x, start }, v)
    }

    /// LSTM gating. `gates` holds pre-activations in (input, forget, cell,
    /// output) order; the result is `[h, c]`.
    pub fn lstm_gates(&mut self, gates: Var, c_prev: Var) -> Var {
        let g = self.value(gates);
        let c0 = self.value(c_prev);
        let h = c0.len();
        assert_eq!(g.len(), 4 * h, "lstm gate width");
        let mut out = vec![0.0; 2 * h];
        for j in 0..h {
            let i = sigmoid(g[j]);
            let f = sigmoid(g[h + j]);
            let gg = g[2 * h + j].tanh();
            let o = sigmoid(g[3 * h + j]);
            let c = f * c0[j] + i * gg;
            out[h + j] = c;
            out[j] = o * c.tanh();
        }
        self.push(Op::LstmGates { gates, c_prev }, out)
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let mut v = self.value(x).to_vec();
        softmax_in_place(&mut v);
        self.push(Op::Softmax(x), v)
    }

    /// `sum_i weights[i] * items[i]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Var {
        let w = self.value(weights);
        assert_eq!(w.len(), items.len());
        let d = self.dim(items[0]);
        let mut v = vec![0.0; d];
        for (wi, it) in w.iter().zip(items) {
            for (o, x) in v.iter_mut().zip(self.value(*it)) {
                *o += wi * x;
            }
        }
        self.push(
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
            v,
        )
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        let s = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Op::Dot(a, b), vec![s])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty());
        let mut v = vec![0.0; self.dim(xs[0])];
        for x in xs {
            for (o, y) in v.iter_mut().zip(self.value(*x)) {
                *o += y;
            }
        }
        self.push(Op::AddN(xs.to_vec()), v)
    }

    /// `-log softmax(logits)[target]`.
    pub fn nll_softmax(&mut self, logits: Var, target: usize) -> Var {
        let ls = log_softmax(self.value(logits));
        self.push(Op::NllSoftmax { logits, target }, vec![-ls[target]])
    }

    /// KL between diagonal Gaussians given means and log-variances.
    pub fn kl_diag(&mut self, mu_q: Var, lv_q: Var, mu_p: Var, lv_p: Var) -> Var {
        let (mq, lq, mp, lp) = (
            self.value(mu_q),
            self.value(lv_q),
            self.value(mu_p),
            self.value(lv_p),
        );
        assert!(mq.len() == lq.len() && mq.len() == mp.len() && mq.len() == lp.len());
        let mut kl = 0.0;
        for j in 0..mq.len() {
            let d = mq[j] - mp[j];
            kl += 0.5 * (lp[j] - lq[j] + ((lq[j]).exp() + d * d) / lp[j].exp() - 1.0);
        }
        self.push(
            Op::KlDiag {
                mu_q,
                lv_q,
                mu_p,
                lv_p,
            },
            vec![kl],
        )
    }

    /// `mu + exp(lv / 2) * eps`.
    pub fn reparam(&mut self, mu: Var, lv: Var, eps: Vec<f64>) -> Var {
        let (m, l) = (self.value(mu), self.value(lv));
        assert_eq!(m.len(), eps.len(), "noise dimension");
        let v = (0..m.len()).map(|j| m[j] + (0.5 * l[j]).exp() * eps[j]).collect();
        self.push(Op::Reparam { mu, lv, eps }, v)
    }

    pub fn l2_normalize(&mut self, x: Var) -> Var {
        let xs = self.value(x);
        let n = xs.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
        let v = xs.iter().map(|a| a / n).collect();
        self.push(Op::L2Normalize(x), v)
    }

    /// Back-propagates from the scalar `loss`, adding `scale * dloss/dparam`
    /// into `grads`.
    pub fn backward(&self, loss: Var, scale: f64, grads: &mut Grads) {
        assert_eq!(self.dim(loss), 1, "backward needs a scalar");
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); self.nodes.len()];
        g[loss.0] = vec![scale];

        fn acc(g: &mut [Vec<f64>], v: Var, n: usize) -> &mut Vec<f64> {
            let slot = &mut g[v.0];
            if slot.is_empty() {
                *slot = vec![0.0; n];
            }
            slot
        }

        for idx in (0..=loss.0).rev() {
            if g[idx].is_empty() {
                continue;
            }
            let gy = std::mem::take(&mut g[idx]);
            let node = &self.nodes[idx];
            let y = &node.value;
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    for (a, b) in grads.data[id.0].iter_mut().zip(&gy) {
                        *a += b;
                    }
                }
                Op::Affine { w, b, x } => {
                    let (rows, cols) = self.param_shape(*w);
                    let wd = self.value(*w);
                    let xs = self.value(*x);
                    {
                        let gx = acc(&mut g, *x, cols);
                        for r in 0..rows {
                            let gr = gy[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &wd[r * cols..(r + 1) * cols];
                            for (o, a) in gx.iter_mut().zip(row) {
                                *o += gr * a;
                            }
                        }
                    }
                    {
                        let gw = acc(&mut g, *w, rows * cols);
                        for r in 0..rows {
                            let gr = gy[r];
                            if gr == 0.0 {
                                continue;
                            }
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            for (o, a) in row.iter_mut().zip(xs) {
                                *o += gr * a;
                            }
                        }
                    }
                    if let Some(b) = b {
                        let gb = acc(&mut g, *b, rows);
                        for (o, a) in gb.iter_mut().zip(&gy) {
                            *o += a;
                        }
                    }
                }
                Op::Row { table, row } => {
                    let (rows, cols) = self.param_shape(*table);
                    let gt = acc(&mut g, *table, rows * cols);
                    for (o, a) in gt[row * cols..(row + 1) * cols].iter_mut().zip(&gy) {
                        *o += a;
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        let ga = acc(&mut g, v, gy.len());
                        ga.iter_mut().zip(&gy).for_each(|(o, d)| *o += d);
                    }
                }
                Op::Sub(a, b) => {
                    let ga = acc(&mut g, *a, gy.len());
                    ga.iter_mut().zip(&gy).for_each(|(o, d)| *o += d);
                    let gb = acc(&mut g, *b, gy.len());
                    gb.iter_mut().zip(&gy).for_each(|(o, d)| *o -= d);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                    let ga = acc(&mut g, *a, gy.len());
                    for j in 0..gy.len() {
                        ga[j] += gy[j] * bv[j];
                    }
                    let gb = acc(&mut g, *b, gy.len());
                    for j in 0..gy.len() {
                        gb[j] += gy[j] * av[j];
                    }
                }
                Op::Scale(a, c) => {
                    let ga = acc(&mut g, *a, gy.len());
                    ga.iter_mut().zip(&gy).for_each(|(o, d)| *o += c * d);
                }
                Op::Tanh(a) => {
                    let ga = acc(&mut g, *a, gy.len());
                    for j in 0..gy.len() {
                        ga[j] += gy[j] * (1.0 - y[j] * y[j]);
                    }
                }
                Op::Sigmoid(a) => {
                    let ga = acc(&mut g, *a, gy.len());
                    for j in 0..gy.len() {
                        ga[j] += gy[j] * y[j] * (1.0 - y[j]);
                    }
                }
                Op::Exp(a) => {
                    let ga = acc(&mut g, *a, gy.len());
                    for j in 0..gy.len() {
                        ga[j] += gy[j] * y[j];
                    }
                }
                Op::Relu(a) => {
                    let ga = acc(&mut g, *a, gy.len());
                    for j in 0..gy.len() {
                        if y[j] > 0.0 {
                            ga[j] += gy[j];
                        }
                    }
                }
                Op::Clamp { x, lo, hi } => {
                    let xv = self.value(*x).to_vec();
                    let gx = acc(&mut g, *x, gy.len());
                    for j in 0..gy.len() {
                        if xv[j] >= *lo && xv[j] <= *hi {
                            gx[j] += gy[j];
                        }
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.dim(*p);
                        let gp = acc(&mut g, *p, n);
                        for j in 0..n {
                            gp[j] += gy[off + j];
                        }
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.dim(*x);
                    let gx = acc(&mut g, *x, n);
                    for j in 0..gy.len() {
                        gx[start + j] += gy[j];
                    }
                }
                Op::LstmGates { gates, c_prev } => {
                    let gv = self.value(*gates);
                    let c0 = self.value(*c_prev);
                    let h = c0.len();
                    let mut dg = vec![0.0; 4 * h];
                    let mut dc0 = vec![0.0; h];
                    for j in 0..h {
                        let i = sigmoid(gv[j]);
                        let f = sigmoid(gv[h + j]);
                        let gg = gv[2 * h + j].tanh();
                        let o = sigmoid(gv[3 * h + j]);
                        let c = y[h + j];
                        let tc = c.tanh();
                        let dh = gy[j];
                        let dc = gy[h + j] + dh * o * (1.0 - tc * tc);
                        let d_o = dh * tc;
                        dg[j] = dc * gg * i * (1.0 - i);
                        dg[h + j] = dc * c0[j] * f * (1.0 - f);
                        dg[2 * h + j] = dc * i * (1.0 - gg * gg);
                        dg[3 * h + j] = d_o * o * (1.0 - o);
                        dc0[j] = dc * f;
                    }
                    let ga = acc(&mut g, *gates, 4 * h);
                    ga.iter_mut().zip(&dg).for_each(|(o, d)| *o += d);
                    let gc = acc(&mut g, *c_prev, h);
                    gc.iter_mut().zip(&dc0).for_each(|(o, d)| *o += d);
                }
                Op::Softmax(x) => {
                    let s: f64 = gy.iter().zip(y).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut g, *x, gy.len());
                    for j in 0..gy.len() {
                        gx[j] += y[j] * (gy[j] - s);
                    }
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.value(*weights).to_vec();
                    let mut gw = vec![0.0; w.len()];
                    for (k, it) in items.iter().enumerate() {
                        gw[k] = self.value(*it).iter().zip(&gy).map(|(a, b)| a * b).sum();
                        let gi = acc(&mut g, *it, gy.len());
                        for j in 0..gy.len() {
                            gi[j] += w[k] * gy[j];
                        }
                    }
                    let gws = acc(&mut g, *weights, w.len());
                    gws.iter_mut().zip(&gw).for_each(|(o, d)| *o += d);
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.value(*a).to_vec(), self.value(*b).to_vec());
                    let d = gy[0];
                    let ga = acc(&mut g, *a, av.len());
                    ga.iter_mut().zip(&bv).for_each(|(o, x)| *o += d * x);
                    let gb = acc(&mut g, *b, bv.len());
                    gb.iter_mut().zip(&av).for_each(|(o, x)| *o += d * x);
                }
                Op::Sum(a) => {
                    let n = self.dim(*a);
                    let ga = acc(&mut g, *a, n);
                    ga.iter_mut().for_each(|o| *o += gy[0]);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        let gx = acc(&mut g, *x, gy.len());
                        gx.iter_mut().zip(&gy).for_each(|(o, d)| *o += d);
                    }
                }
                Op::NllSoftmax { logits, target } => {
                    let mut p = self.value(*logits).to_vec();
                    softmax_in_place(&mut p);
                    p[*target] -= 1.0;
                    let gl = acc(&mut g, *logits, p.len());
                    gl.iter_mut().zip(&p).for_each(|(o, d)| *o += gy[0] * d);
                }
                Op::KlDiag {
                    mu_q,
                    lv_q,
                    mu_p,
                    lv_p,
                } => {
                    let (mq, lq, mp, lp) = (
                        self.value(*mu_q).to_vec(),
                        self.value(*lv_q).to_vec(),
                        self.value(*mu_p).to_vec(),
                        self.value(*lv_p).to_vec(),
                    );
                    let n = mq.len();
                    let d = gy[0];
                    let mut gmq = vec![0.0; n];
                    let mut glq = vec![0.0; n];
                    let mut glp = vec![0.0; n];
                    for j in 0..n {
                        let vp = lp[j].exp();
                        let diff = mq[j] - mp[j];
                        gmq[j] = d * diff / vp;
                        glq[j] = d * 0.5 * (lq[j].exp() / vp - 1.0);
                        glp[j] = d * 0.5 * (1.0 - (lq[j].exp() + diff * diff) / vp);
                    }
                    acc(&mut g, *mu_q, n).iter_mut().zip(&gmq).for_each(|(o, x)| *o += x);
                    acc(&mut g, *mu_p, n).iter_mut().zip(&gmq).for_each(|(o, x)| *o -= x);
                    acc(&mut g, *lv_q, n).iter_mut().zip(&glq).for_each(|(o, x)| *o += x);
                    acc(&mut g, *lv_p, n).iter_mut().zip(&glp).for_each(|(o, x)| *o += x);
                }
                Op::Reparam { mu, lv, eps } => {
                    let l = self.value(*lv).to_vec();
                    acc(&mut g, *mu, gy.len()).iter_mut().zip(&gy).for_each(|(o, d)| *o += d);
                    let gl = acc(&mut g, *lv, gy.len());
                    for j in 0..gy.len() {
                        gl[j] += gy[j] * eps[j] * 0.5 * (0.5 * l[j]).exp();
                    }
                }
                Op::L2Normalize(x) => {
                    let xv = self.value(*x);
                    let n = xv.iter().map(|a| a * a).sum::<f64>().sqrt().max(1e-12);
                    let yg: f64 = y.iter().zip(&gy).map(|(a, b)| a * b).sum();
                    let gx = acc(&mut g, *x, gy.len());
                    for j in 0..gy.len() {
                        gx[j] += (gy[j] - y[j] * yg) / n;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Init;
    use crate::rng::{normal_vec, rng_for};

    /// Central finite-difference check of `f` over every parameter scalar.
    fn check(store: &mut ParamStore, f: &dyn Fn(&mut Graph) -> Var) {
        let mut grads = Grads::zeros_like(store);
        {
            let mut g = Graph::new(store);
            let l = f(&mut g);
            g.backward(l, 1.0, &mut grads);
        }
        let h = 1e-6;
        for id in store.ids().collect::<Vec<_>>() {
            for k in 0..store.get(id).len() {
                let orig = store.get(id).data[k];
                store.get_mut(id).data[k] = orig + h;
                let up = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                store.get_mut(id).data[k] = orig - h;
                let dn = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.scalar(l)
                };
                store.get_mut(id).data[k] = orig;
                let num = (up - dn) / (2.0 * h);
                let ana = grads.get(id)[k];
                let err = (num - ana).abs() / num.abs().max(ana.abs()).max(1e-4);
                assert!(err < 1e-5, "{}[{k}]: numeric {num} analytic {ana}", store.name(id));
            }
        }
    }

    #[test]
    fn fused_ops_match_finite_differences() {
        let mut rng = rng_for(11, &["grad"]);
        let mut s = ParamStore::new();
        let w = s.add("w", 8, 3, Init::UniformScaled(0.8), &mut rng);
        let b = s.add("b", 1, 8, Init::UniformScaled(0.5), &mut rng);
        let x = s.add("x", 1, 3, Init::UniformScaled(1.0), &mut rng);
        let c = s.add("c", 1, 2, Init::UniformScaled(1.0), &mut rng);
        let emb = s.add("emb", 4, 2, Init::UniformScaled(1.0), &mut rng);
        let eps = normal_vec(&mut rng, 2);
        check(&mut s, &|g: &mut Graph| {
            let xv = g.param(x);
            let gates = g.affine(w, Some(b), xv);
            let cv = g.param(c);
            let hc = g.lstm_gates(gates, cv);
            let hh = g.slice(hc, 0, 2);
            let cc = g.slice(hc, 2, 2);
            let e = g.row(emb, 2);
            let mu = g.add(hh, e);
            let lv = g.clamp(cc, -10.0, 10.0);
            let z = g.reparam(mu, lv, eps.clone());
            let e3 = g.row(emb, 3);
            let kl = g.kl_diag(mu, lv, e3, cv);
            let sm = g.softmax(z);
            let ws = g.weighted_sum(sm, &[e, e3]);
            let t = g.tanh(ws);
            let sg = g.sigmoid(t);
            let cat = g.concat(&[sg, z, hh]);
            let n = g.l2_normalize(cat);
            let nll = g.nll_softmax(n, 1);
            let d = g.dot(z, e);
            let r = g.relu(d);
            let m = g.mul(z, e3);
            let ex = g.exp(m);
            let sm2 = g.sum(ex);
            let sc = g.scale(sm2, 0.3);
            let diff = g.sub(nll, r);
            g.add_n(&[kl, diff, sc])
        });
    }
}
