//! Differentiable building blocks with hand-written backward passes.
//!
//! Every layer follows the same shape: `forward` returns its output plus a
//! cache, `backward` consumes the cache and an upstream gradient, adds
//! parameter gradients into a same-shaped gradient struct and returns the
//! gradient with respect to its input.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewD, ArrayViewMutD, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

/// Named read-only and mutable access to every learnable tensor.
pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>);
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn uniform_array2<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

fn uniform_array1<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Array1<f64> {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Array1::from_shape_simple_fn(len, || dist.sample(rng))
}

/// Affine map `y = W x + b`, `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Linear {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Linear {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        Linear {
            weight: uniform_array2(out_dim, in_dim, bound, rng),
            bias: uniform_array1(out_dim, bound, rng),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn forward(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    pub fn backward(&self, x: ArrayView1<f64>, dy: ArrayView1<f64>, grad: &mut Linear) -> Array1<f64> {
        for (mut row, &d) in grad.weight.rows_mut().into_iter().zip(dy.iter()) {
            row.scaled_add(d, &x);
        }
        grad.bias += &dy;
        self.weight.t().dot(&dy)
    }
}

impl ParamSet for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((format!("{prefix}.weight"), self.weight.view().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((format!("{prefix}.weight"), self.weight.view_mut().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

/// One direction of one LSTM layer. Gate blocks are stacked `[input, forget,
/// candidate, output]` along the first axis of the weights.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Activations saved by [`LstmCell::run`], indexed by original time step.
#[derive(Debug, Clone)]
pub struct LstmCache {
    /// `T × 4H` post-activation gates.
    gates: Array2<f64>,
    cells: Array2<f64>,
    cell_tanh: Array2<f64>,
    pub hidden: Array2<f64>,
    reverse: bool,
}

impl LstmCell {
    pub fn zeros(in_dim: usize, hidden: usize) -> Self {
        LstmCell {
            w_ih: Array2::zeros((4 * hidden, in_dim)),
            w_hh: Array2::zeros((4 * hidden, hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        LstmCell {
            w_ih: uniform_array2(4 * hidden, in_dim, bound, rng),
            w_hh: uniform_array2(4 * hidden, hidden, bound, rng),
            bias: uniform_array1(4 * hidden, bound, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hh.ncols()
    }

    fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
        if reverse {
            Box::new((0..len).rev())
        } else {
            Box::new(0..len)
        }
    }

    /// Runs the recurrence over `x` (`T × in`), left to right or right to
    /// left, starting from zero hidden and cell state.
    pub fn run(&self, x: ArrayView2<f64>, reverse: bool) -> LstmCache {
        let t_len = x.nrows();
        let h = self.hidden();
        let mut pre = x.dot(&self.w_ih.t());
        pre += &self.bias;
        let mut gates = Array2::zeros((t_len, 4 * h));
        let mut cells = Array2::zeros((t_len, h));
        let mut cell_tanh = Array2::zeros((t_len, h));
        let mut hidden = Array2::zeros((t_len, h));
        let mut h_prev = Array1::<f64>::zeros(h);
        let mut c_prev = Array1::<f64>::zeros(h);
        for t in Self::order(t_len, reverse) {
            let mut a = self.w_hh.dot(&h_prev);
            a += &pre.row(t);
            let mut g_row = gates.row_mut(t);
            for k in 0..h {
                let i = sigmoid(a[k]);
                let f = sigmoid(a[h + k]);
                let g = a[2 * h + k].tanh();
                let o = sigmoid(a[3 * h + k]);
                let c = f * c_prev[k] + i * g;
                let tc = c.tanh();
                g_row[k] = i;
                g_row[h + k] = f;
                g_row[2 * h + k] = g;
                g_row[3 * h + k] = o;
                cells[[t, k]] = c;
                cell_tanh[[t, k]] = tc;
                hidden[[t, k]] = o * tc;
            }
            h_prev.assign(&hidden.row(t));
            c_prev.assign(&cells.row(t));
        }
        LstmCache {
            gates,
            cells,
            cell_tanh,
            hidden,
            reverse,
        }
    }

    /// Backpropagation through time. `dh` is the loss gradient with respect
    /// to every emitted hidden state. Returns `dL/dx` when `input_grad`.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        cache: &LstmCache,
        dh: ArrayView2<f64>,
        grad: &mut LstmCell,
        input_grad: bool,
    ) -> Option<Array2<f64>> {
        let t_len = x.nrows();
        let h = self.hidden();
        let steps: Vec<usize> = Self::order(t_len, cache.reverse).collect();
        let mut dpre = Array2::zeros((t_len, 4 * h));
        // row t holds the hidden state fed into step t
        let mut h_in = Array2::zeros((t_len, h));
        for w in steps.windows(2) {
            h_in.row_mut(w[1]).assign(&cache.hidden.row(w[0]));
        }
        let mut dh_next = Array1::<f64>::zeros(h);
        let mut dc_next = Array1::<f64>::zeros(h);
        for (pos, &t) in steps.iter().enumerate().rev() {
            let prev = if pos > 0 { Some(steps[pos - 1]) } else { None };
            let g_row = cache.gates.row(t);
            let mut da = dpre.row_mut(t);
            for k in 0..h {
                let (i, f, g, o) = (g_row[k], g_row[h + k], g_row[2 * h + k], g_row[3 * h + k]);
                let tc = cache.cell_tanh[[t, k]];
                let c_prev = prev.map_or(0.0, |p| cache.cells[[p, k]]);
                let dhk = dh[[t, k]] + dh_next[k];
                let dc = dc_next[k] + dhk * o * (1.0 - tc * tc);
                da[k] = dc * g * i * (1.0 - i);
                da[h + k] = dc * c_prev * f * (1.0 - f);
                da[2 * h + k] = dc * i * (1.0 - g * g);
                da[3 * h + k] = dhk * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            dh_next = self.w_hh.t().dot(&da);
        }
        general_mat_mul(1.0, &dpre.t(), &x, 1.0, &mut grad.w_ih);
        general_mat_mul(1.0, &dpre.t(), &h_in, 1.0, &mut grad.w_hh);
        grad.bias += &dpre.sum_axis(Axis(0));
        input_grad.then(|| dpre.dot(&self.w_ih))
    }
}

impl ParamSet for LstmCell {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.view().into_dyn()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.view().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view().into_dyn()));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((format!("{prefix}.w_ih"), self.w_ih.view_mut().into_dyn()));
        out.push((format!("{prefix}.w_hh"), self.w_hh.view_mut().into_dyn()));
        out.push((format!("{prefix}.bias"), self.bias.view_mut().into_dyn()));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BiLstmLayer {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

/// Stacked bidirectional LSTM. Each layer's output is the forward and
/// backward hidden states concatenated per time step; the next layer reads
/// that concatenation.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub layers: Vec<BiLstmLayer>,
}

pub struct BiLstmCache {
    inputs: Vec<Array2<f64>>,
    caches: Vec<(LstmCache, LstmCache)>,
    pub output: Array2<f64>,
}

impl BiLstm {
    pub fn zeros(in_dim: usize, hidden: usize, layers: usize) -> Self {
        BiLstm {
            layers: (0..layers)
                .map(|l| {
                    let d = if l == 0 { in_dim } else { 2 * hidden };
                    BiLstmLayer {
                        forward: LstmCell::zeros(d, hidden),
                        backward: LstmCell::zeros(d, hidden),
                    }
                })
                .collect(),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, hidden: usize, layers: usize, rng: &mut R) -> Self {
        BiLstm {
            layers: (0..layers)
                .map(|l| {
                    let d = if l == 0 { in_dim } else { 2 * hidden };
                    BiLstmLayer {
                        forward: LstmCell::init(d, hidden, rng),
                        backward: LstmCell::init(d, hidden, rng),
                    }
                })
                .collect(),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].forward.w_ih.ncols()
    }

    pub fn out_dim(&self) -> usize {
        2 * self.layers[0].forward.hidden()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> BiLstmCache {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut current = x.to_owned();
        for layer in &self.layers {
            let f = layer.forward.run(current.view(), false);
            let b = layer.backward.run(current.view(), true);
            let h = layer.forward.hidden();
            let mut out = Array2::zeros((current.nrows(), 2 * h));
            out.slice_mut(s![.., ..h]).assign(&f.hidden);
            out.slice_mut(s![.., h..]).assign(&b.hidden);
            inputs.push(std::mem::replace(&mut current, out));
            caches.push((f, b));
        }
        BiLstmCache {
            inputs,
            caches,
            output: current,
        }
    }

    pub fn backward(&self, cache: &BiLstmCache, dout: ArrayView2<f64>, grad: &mut BiLstm) {
        let mut d = dout.to_owned();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let h = layer.forward.hidden();
            let x = cache.inputs[l].view();
            let (fc, bc) = &cache.caches[l];
            let need = l > 0;
            let g = &mut grad.layers[l];
            let dx_f = layer
                .forward
                .backward(x, fc, d.slice(s![.., ..h]), &mut g.forward, need);
            let dx_b = layer
                .backward
                .backward(x, bc, d.slice(s![.., h..]), &mut g.backward, need);
            if let (Some(a), Some(b)) = (dx_f, dx_b) {
                d = a + b;
            }
        }
    }
}

impl ParamSet for BiLstm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        for (l, layer) in self.layers.iter().enumerate() {
            layer.forward.collect(&format!("{prefix}.{l}.fwd"), out);
            layer.backward.collect(&format!("{prefix}.{l}.bwd"), out);
        }
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            layer.forward.collect_mut(&format!("{prefix}.{l}.fwd"), out);
            layer.backward.collect_mut(&format!("{prefix}.{l}.bwd"), out);
        }
    }
}

/// Additive single-query attention pooling: `e_t = v · tanh(W h_t)`,
/// `α = softmax(e)`, output `Σ α_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub w: Array2<f64>,
    pub v: Array1<f64>,
}

pub struct AttentionCache {
    u: Array2<f64>,
    pub weights: Array1<f64>,
}

impl Attention {
    pub fn zeros(in_dim: usize, attn_dim: usize) -> Self {
        Attention {
            w: Array2::zeros((attn_dim, in_dim)),
            v: Array1::zeros(attn_dim),
        }
    }

    pub fn init<R: Rng + ?Sized>(in_dim: usize, attn_dim: usize, rng: &mut R) -> Self {
        Attention {
            w: uniform_array2(attn_dim, in_dim, 1.0 / (in_dim as f64).sqrt(), rng),
            v: uniform_array1(attn_dim, 1.0 / (attn_dim as f64).sqrt(), rng),
        }
    }

    pub fn forward(&self, h: ArrayView2<f64>) -> (Array1<f64>, AttentionCache) {
        let u = h.dot(&self.w.t()).mapv_into(f64::tanh);
        let scores = u.dot(&self.v);
        let weights = softmax(scores.view());
        let pooled = h.t().dot(&weights);
        (pooled, AttentionCache { u, weights })
    }

    pub fn backward(
        &self,
        h: ArrayView2<f64>,
        cache: &AttentionCache,
        dpooled: ArrayView1<f64>,
        grad: &mut Attention,
    ) -> Array2<f64> {
        let alpha = &cache.weights;
        let dalpha = h.dot(&dpooled);
        let mean = alpha.dot(&dalpha);
        let de = alpha * &(dalpha - mean);
        grad.v += &cache.u.t().dot(&de);
        // dZ = (de ⊗ v) ⊙ (1 - u²)
        let mut dz = cache.u.mapv(|u| 1.0 - u * u);
        for (mut row, &d) in dz.rows_mut().into_iter().zip(de.iter()) {
            row *= &(&self.v * d);
        }
        general_mat_mul(1.0, &dz.t(), &h, 1.0, &mut grad.w);
        let mut dh = dz.dot(&self.w);
        for (mut row, &a) in dh.rows_mut().into_iter().zip(alpha.iter()) {
            row.scaled_add(a, &dpooled);
        }
        dh
    }
}

impl ParamSet for Attention {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {
        out.push((format!("{prefix}.w"), self.w.view().into_dyn()));
        out.push((format!("{prefix}.v"), self.v.view().into_dyn()));
    }

    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>) {
        out.push((format!("{prefix}.w"), self.w.view_mut().into_dyn()));
        out.push((format!("{prefix}.v"), self.v.view_mut().into_dyn()));
    }
}

pub fn softmax(x: ArrayView1<f64>) -> Array1<f64> {
    let max = x.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let e = x.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}
