//! Reverse-mode automatic differentiation over vector-valued nodes.
//!
//! A [`Tape`] is an append-only list of nodes; each records the operation
//! that produced it and its value vector. Building an expression runs the
//! forward pass eagerly; [`Tape::backward`] then walks the list once in
//! reverse, accumulating adjoints. Loss *targets* enter graphs as
//! constants baked into ops ([`Tape::sub_const`] and friends), never as
//! nodes, so by construction gradients exist only for registered
//! parameters.
//!
//! The op set is exactly what the model forwards and losses need: affine
//! maps, dilated convolution, pointwise nonlinearities, slicing and
//! concatenation, reductions, FIR filtering, and a real-input FFT with
//! bin magnitudes for spectral losses.

use rustfft::num_complex::Complex64;
use std::sync::Arc;

use crate::spectrum;
use crate::{Error, Result};

pub type NodeId = usize;

#[derive(Debug, Clone)]
enum Op {
    Const,
    Param,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// x + c, elementwise with a constant vector.
    AddConst(NodeId),
    /// x - c: the usual way a target enters a loss.
    SubConst(NodeId),
    /// x * c, elementwise with a constant vector (windows, bin weights).
    MulConst(NodeId),
    MulScalar(NodeId, f64),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Square(NodeId),
    Slice { a: NodeId, start: usize },
    Concat(Vec<NodeId>),
    Sum(NodeId),
    Mean(NodeId),
    /// W x + b with W row-major (rows x cols), b length rows.
    Affine { w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize },
    /// Causal dilated convolution; x and the output are channel-major
    /// (ch * t_len), tap kappa multiplies x[t - kappa*dilation], zero
    /// history left of t=0. Weights are out_ch x in_ch x kernel.
    Conv1d { w: NodeId, x: NodeId, in_ch: usize, out_ch: usize, kernel: usize, dilation: usize },
    /// Add a per-channel bias to a channel-major matrix.
    BiasRows { a: NodeId, b: NodeId, ch: usize },
    /// Group-delay-compensated FIR with constant taps.
    FirSame { a: NodeId, delay: usize },
    /// Real-input FFT, bins 0..n/2 inclusive, interleaved re/im.
    RealFftHalf { a: NodeId, nfft: usize },
    /// Bin magnitudes of an interleaved complex vector; the gradient at
    /// an exact zero is zero.
    Magnitude(NodeId),
}

struct Node {
    op: Op,
    val: Vec<f64>,
    /// Constant payload for AddConst/SubConst/MulConst/FirSame.
    aux: Option<Arc<Vec<f64>>>,
}

/// Gradients returned by [`Tape::backward`]: one vector per registered
/// parameter, in registration order. Targets and other constants have no
/// slot here, so nothing can leak gradient into them.
pub struct Grads {
    pub by_param: Vec<Vec<f64>>,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    param_nodes: Vec<NodeId>,
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

    pub fn param_count(&self) -> usize {
        self.param_nodes.len()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id].val
    }

    fn push(&mut self, op: Op, val: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, val, aux: None });
        self.nodes.len() - 1
    }

    fn push_aux(&mut self, op: Op, val: Vec<f64>, aux: Arc<Vec<f64>>) -> NodeId {
        self.nodes.push(Node { op, val, aux: Some(aux) });
        self.nodes.len() - 1
    }

    /// A leaf that never receives gradient.
    pub fn constant(&mut self, v: Vec<f64>) -> NodeId {
        self.push(Op::Const, v)
    }

    /// A trainable leaf; its gradient comes back in registration order.
    pub fn param(&mut self, v: Vec<f64>) -> NodeId {
        let id = self.push(Op::Param, v);
        self.param_nodes.push(id);
        id
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &self.nodes[b].val, |x, y| x + y);
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &self.nodes[b].val, |x, y| x - y);
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &self.nodes[b].val, |x, y| x * y);
        self.push(Op::Mul(a, b), v)
    }

    pub fn add_const(&mut self, a: NodeId, c: Arc<Vec<f64>>) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &c, |x, y| x + y);
        self.push_aux(Op::AddConst(a), v, c)
    }

    /// x - c. Use this to subtract a loss target: the target is a
    /// constant payload, not a node.
    pub fn sub_const(&mut self, a: NodeId, c: Arc<Vec<f64>>) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &c, |x, y| x - y);
        self.push_aux(Op::SubConst(a), v, c)
    }

    pub fn mul_const(&mut self, a: NodeId, c: Arc<Vec<f64>>) -> NodeId {
        let v = zip_with(&self.nodes[a].val, &c, |x, y| x * y);
        self.push_aux(Op::MulConst(a), v, c)
    }

    pub fn mul_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.nodes[a].val.iter().map(|x| x * s).collect();
        self.push(Op::MulScalar(a, s), v)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].val.iter().map(|x| x.tanh()).collect();
        self.push(Op::Tanh(a), v)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].val.iter().map(|x| 1.0 / (1.0 + (-x).exp())).collect();
        self.push(Op::Sigmoid(a), v)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].val.iter().map(|x| x * x).collect();
        self.push(Op::Square(a), v)
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.nodes[a].val[start..start + len].to_vec();
        self.push(Op::Slice { a, start }, v)
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> NodeId {
        let mut v = Vec::with_capacity(parts.iter().map(|&p| self.nodes[p].val.len()).sum());
        for &p in parts {
            v.extend_from_slice(&self.nodes[p].val);
        }
        self.push(Op::Concat(parts.to_vec()), v)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s: f64 = self.nodes[a].val.iter().sum();
        self.push(Op::Sum(a), vec![s])
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].val.len().max(1) as f64;
        let s: f64 = self.nodes[a].val.iter().sum::<f64>() / n;
        self.push(Op::Mean(a), vec![s])
    }

    /// W x + b, W row-major rows x cols.
    pub fn affine(&mut self, w: NodeId, x: NodeId, b: NodeId, rows: usize, cols: usize) -> NodeId {
        debug_assert_eq!(self.nodes[w].val.len(), rows * cols);
        debug_assert_eq!(self.nodes[x].val.len(), cols);
        debug_assert_eq!(self.nodes[b].val.len(), rows);
        let mut v = Vec::with_capacity(rows);
        {
            let wv = &self.nodes[w].val;
            let xv = &self.nodes[x].val;
            let bv = &self.nodes[b].val;
            for r in 0..rows {
                let row = &wv[r * cols..(r + 1) * cols];
                let mut acc = bv[r];
                for (c, &wc) in row.iter().enumerate() {
                    acc += wc * xv[c];
                }
                v.push(acc);
            }
        }
        self.push(Op::Affine { w, x, b, rows, cols }, v)
    }

    pub fn conv1d(
        &mut self,
        w: NodeId,
        x: NodeId,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
    ) -> NodeId {
        let t_len = self.nodes[x].val.len() / in_ch;
        debug_assert_eq!(self.nodes[x].val.len(), in_ch * t_len);
        debug_assert_eq!(self.nodes[w].val.len(), out_ch * in_ch * kernel);
        let mut v = vec![0.0; out_ch * t_len];
        {
            let wv = &self.nodes[w].val;
            let xv = &self.nodes[x].val;
            for o in 0..out_ch {
                let dst = &mut v[o * t_len..(o + 1) * t_len];
                for i in 0..in_ch {
                    let src = &xv[i * t_len..(i + 1) * t_len];
                    for kk in 0..kernel {
                        let wk = wv[(o * in_ch + i) * kernel + kk];
                        if wk == 0.0 {
                            continue;
                        }
                        let back = kk * dilation;
                        for t in back..t_len {
                            dst[t] += wk * src[t - back];
                        }
                    }
                }
            }
        }
        self.push(Op::Conv1d { w, x, in_ch, out_ch, kernel, dilation }, v)
    }

    pub fn bias_rows(&mut self, a: NodeId, b: NodeId, ch: usize) -> NodeId {
        let t_len = self.nodes[a].val.len() / ch;
        debug_assert_eq!(self.nodes[b].val.len(), ch);
        let mut v = self.nodes[a].val.clone();
        for c in 0..ch {
            let bc = self.nodes[b].val[c];
            for t in 0..t_len {
                v[c * t_len + t] += bc;
            }
        }
        self.push(Op::BiasRows { a, b, ch }, v)
    }

    /// Apply constant FIR taps with group-delay compensation
    /// (y[n] = sum_t taps[t] * x[n + delay - t], zero outside).
    pub fn fir_same(&mut self, a: NodeId, taps: Arc<Vec<f64>>, delay: usize) -> NodeId {
        let v = fir_same_apply(&self.nodes[a].val, &taps, delay);
        self.push_aux(Op::FirSame { a, delay }, v, taps)
    }

    /// FFT of a real vector (length must equal `nfft`, even); output is
    /// interleaved [re0, im0, re1, im1, ...] for bins 0..=nfft/2.
    pub fn real_fft_half(&mut self, a: NodeId, nfft: usize) -> NodeId {
        debug_assert_eq!(self.nodes[a].val.len(), nfft);
        debug_assert_eq!(nfft % 2, 0);
        let bins = spectrum::fft_real_half(&self.nodes[a].val);
        let mut v = Vec::with_capacity(2 * bins.len());
        for b in bins {
            v.push(b.re);
            v.push(b.im);
        }
        self.push(Op::RealFftHalf { a, nfft }, v)
    }

    /// sqrt(re^2 + im^2) per bin of an interleaved complex vector.
    pub fn magnitude(&mut self, a: NodeId) -> NodeId {
        let av = &self.nodes[a].val;
        debug_assert_eq!(av.len() % 2, 0);
        let v = av.chunks_exact(2).map(|c| (c[0] * c[0] + c[1] * c[1]).sqrt()).collect();
        self.push(Op::Magnitude(a), v)
    }

    /// Reverse pass from a scalar root. Returns one gradient vector per
    /// registered parameter, in registration order; constants (targets
    /// included) have no slot anywhere in the result.
    pub fn backward(&self, root: NodeId) -> Grads {
        assert_eq!(
            self.nodes[root].val.len(),
            1,
            "backward requires a scalar root node"
        );
        let mut adj: Vec<Vec<f64>> = self.nodes.iter().map(|n| vec![0.0; n.val.len()]).collect();
        adj[root][0] = 1.0;
        for id in (0..=root).rev() {
            if adj[id].iter().all(|&g| g == 0.0) {
                continue;
            }
            let g = std::mem::take(&mut adj[id]);
            match &self.nodes[id].op {
                Op::Const | Op::Param => {
                    adj[id] = g; // leaves keep their accumulated adjoint
                }
                Op::Add(a, b) => {
                    axpy(&mut adj[*a], &g, 1.0);
                    axpy(&mut adj[*b], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut adj[*a], &g, 1.0);
                    axpy(&mut adj[*b], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    for i in 0..g.len() {
                        adj[a][i] += g[i] * self.nodes[b].val[i];
                    }
                    for i in 0..g.len() {
                        adj[b][i] += g[i] * self.nodes[a].val[i];
                    }
                }
                Op::AddConst(a) | Op::SubConst(a) => {
                    // The constant payload is not a node: its gradient is
                    // simply discarded.
                    axpy(&mut adj[*a], &g, 1.0);
                }
                Op::MulConst(a) => {
                    let c = self.nodes[id].aux.as_ref().unwrap();
                    let dst = &mut adj[*a];
                    for i in 0..g.len() {
                        dst[i] += g[i] * c[i];
                    }
                }
                Op::MulScalar(a, s) => {
                    axpy(&mut adj[*a], &g, *s);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[id].val;
                    let dst = &mut adj[*a];
                    for i in 0..g.len() {
                        dst[i] += g[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[id].val;
                    let dst = &mut adj[*a];
                    for i in 0..g.len() {
                        dst[i] += g[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Square(a) => {
                    let a = *a;
                    for i in 0..g.len() {
                        adj[a][i] += g[i] * 2.0 * self.nodes[a].val[i];
                    }
                }
                Op::Slice { a, start } => {
                    let dst = &mut adj[*a];
                    for (i, gi) in g.iter().enumerate() {
                        dst[start + i] += gi;
                    }
                }
                Op::Concat(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let n = self.nodes[p].val.len();
                        axpy(&mut adj[p], &g[off..off + n], 1.0);
                        off += n;
                    }
                }
                Op::Sum(a) => {
                    let dst = &mut adj[*a];
                    for v in dst.iter_mut() {
                        *v += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = self.nodes[*a].val.len().max(1) as f64;
                    let dst = &mut adj[*a];
                    for v in dst.iter_mut() {
                        *v += g[0] / n;
                    }
                }
                Op::Affine { w, x, b, rows, cols } => {
                    let (w, x, b, rows, cols) = (*w, *x, *b, *rows, *cols);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr == 0.0 {
                            continue;
                        }
                        for c in 0..cols {
                            adj[w][r * cols + c] += gr * self.nodes[x].val[c];
                        }
                    }
                    for c in 0..cols {
                        let mut acc = 0.0;
                        for r in 0..rows {
                            acc += self.nodes[w].val[r * cols + c] * g[r];
                        }
                        adj[x][c] += acc;
                    }
                    axpy(&mut adj[b], &g, 1.0);
                }
                Op::Conv1d { w, x, in_ch, out_ch, kernel, dilation } => {
                    let (w, x) = (*w, *x);
                    let (in_ch, out_ch, kernel, d) = (*in_ch, *out_ch, *kernel, *dilation);
                    let t_len = self.nodes[x].val.len() / in_ch;
                    for o in 0..out_ch {
                        let go = &g[o * t_len..(o + 1) * t_len];
                        for i in 0..in_ch {
                            let xi = &self.nodes[x].val[i * t_len..(i + 1) * t_len];
                            for kk in 0..kernel {
                                let back = kk * d;
                                let mut acc = 0.0;
                                for t in back..t_len {
                                    acc += go[t] * xi[t - back];
                                }
                                adj[w][(o * in_ch + i) * kernel + kk] += acc;
                            }
                        }
                    }
                    for i in 0..in_ch {
                        for o in 0..out_ch {
                            let go = &g[o * t_len..(o + 1) * t_len];
                            for kk in 0..kernel {
                                let wk = self.nodes[w].val[(o * in_ch + i) * kernel + kk];
                                if wk == 0.0 {
                                    continue;
                                }
                                let back = kk * d;
                                let dst = &mut adj[x];
                                for t in back..t_len {
                                    dst[i * t_len + t - back] += wk * go[t];
                                }
                            }
                        }
                    }
                }
                Op::BiasRows { a, b, ch } => {
                    let t_len = g.len() / ch;
                    axpy(&mut adj[*a], &g, 1.0);
                    for c in 0..*ch {
                        adj[*b][c] += g[c * t_len..(c + 1) * t_len].iter().sum::<f64>();
                    }
                }
                Op::FirSame { a, delay } => {
                    // y[n] = sum_t h[t] x[n + delay - t]  =>
                    // dx[j] = sum_n g[n] h[n + delay - j].
                    let taps = self.nodes[id].aux.as_ref().unwrap();
                    let n_len = g.len();
                    let dst = &mut adj[*a];
                    for (j, d) in dst.iter_mut().enumerate() {
                        let mut acc = 0.0;
                        // t = n + delay - j in [0, taps.len())
                        let n_lo = (j).saturating_sub(*delay);
                        let n_hi = (j + taps.len() - *delay).min(n_len);
                        for n in n_lo..n_hi {
                            let t = n + delay - j;
                            if t < taps.len() {
                                acc += g[n] * taps[t];
                            }
                        }
                        *d += acc;
                    }
                }
                Op::RealFftHalf { a, nfft } => {
                    // Each half-spectrum bin is an independent real pair
                    // (re, im); the adjoint of x is the real part of the
                    // unnormalized +j-sign transform of the adjoint bins
                    // (no mirroring: bins above n/2 were never outputs).
                    let nfft = *nfft;
                    let bins = nfft / 2 + 1;
                    let mut c = vec![Complex64::new(0.0, 0.0); nfft];
                    for (k, cb) in c.iter_mut().enumerate().take(bins) {
                        *cb = Complex64::new(g[2 * k], g[2 * k + 1]);
                    }
                    let back = spectrum::idft_unnormalized(&c);
                    let dst = &mut adj[*a];
                    for (d, b) in dst.iter_mut().zip(&back) {
                        *d += b.re;
                    }
                }
                Op::Magnitude(a) => {
                    let av = &self.nodes[*a].val;
                    let dst = &mut adj[*a];
                    for (k, gk) in g.iter().enumerate() {
                        let m = self.nodes[id].val[k];
                        if m > 0.0 {
                            dst[2 * k] += gk * av[2 * k] / m;
                            dst[2 * k + 1] += gk * av[2 * k + 1] / m;
                        }
                        // m == 0: the subgradient is defined as zero.
                    }
                }
            }
        }
        Grads {
            by_param: self
                .param_nodes
                .iter()
                .map(|&id| std::mem::take(&mut adj[id]))
                .collect(),
        }
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len(), "vector length mismatch");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn axpy(dst: &mut [f64], src: &[f64], s: f64) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, &v) in dst.iter_mut().zip(src) {
        *d += s * v;
    }
}

/// Shared forward implementation for [`Tape::fir_same`]; also usable
/// outside a tape.
pub fn fir_same_apply(x: &[f64], taps: &[f64], delay: usize) -> Vec<f64> {
    let mut y = vec![0.0; x.len()];
    for (n, out) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (t, &h) in taps.iter().enumerate() {
            let idx = n + delay;
            if idx >= t && idx - t < x.len() {
                acc += h * x[idx - t];
            }
        }
        *out = acc;
    }
    y
}

/// Adam optimizer over a set of flat parameter groups.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    /// Standard coefficients: beta1 0.9, beta2 0.999, eps 1e-8.
    pub fn new(lr: f64, group_sizes: &[usize]) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            steps: 0,
            m: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: group_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update. If any gradient entry is not finite the step is
    /// aborted with a diagnostic and neither parameters nor moments
    /// change.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[Vec<f64>]) -> Result<()> {
        assert_eq!(params.len(), self.m.len(), "parameter group count mismatch");
        assert_eq!(grads.len(), self.m.len(), "gradient group count mismatch");
        for (gi, g) in grads.iter().enumerate() {
            if let Some(bi) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient in group {gi} at index {bi}; step {} aborted",
                    self.steps + 1
                )));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            debug_assert_eq!(p.len(), g.len());
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p[i] -= self.lr * mh / (vh.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
