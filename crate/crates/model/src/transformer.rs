//! Pre-norm decoder-only transformer over a flat `f64` parameter vector,
//! with rotary position embeddings and hand-written backpropagation.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use thiserror::Error;

use crate::config::{ConfigError, ModelConfig};

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4;
const GELU_K: f64 = 0.044_715;
/// Sequences per gradient work unit; fixed so sums do not depend on threads.
const GRAD_CHUNK: usize = 4;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    TooLong { len: usize, max: usize },
    #[error("empty sequence")]
    Empty,
    #[error("token id {id} outside vocabulary of {vocab}")]
    BadToken { id: u32, vocab: usize },
    #[error("mask length {mask} does not match {len} tokens")]
    MaskLength { mask: usize, len: usize },
    #[error("batch has no loss positions")]
    NoTargets,
    #[error("parameter vector has {got} entries, layout needs {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("k must be at least 1")]
    BadK,
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct LayerOffsets {
    ln1_g: usize,
    ln1_b: usize,
    wq: usize,
    wk: usize,
    wv: usize,
    wo: usize,
    ln2_g: usize,
    ln2_b: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Where each named tensor lives in the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamLayout {
    tok_emb: usize,
    layers: Vec<LayerOffsets>,
    lnf_g: usize,
    lnf_b: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
    blocks: Vec<(String, usize, usize)>,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (h, f, v) = (cfg.hidden, cfg.ffn(), cfg.vocab);
        let mut blocks: Vec<(String, usize, usize)> = Vec::new();
        let mut take = |name: String, n: usize| {
            let off = blocks.last().map_or(0, |b| b.1 + b.2);
            blocks.push((name, off, n));
            off
        };
        let tok_emb = take("tok_emb".into(), v * h);
        let layers = (0..cfg.layers)
            .map(|l| LayerOffsets {
                ln1_g: take(format!("layer{l}.ln1.g"), h),
                ln1_b: take(format!("layer{l}.ln1.b"), h),
                wq: take(format!("layer{l}.wq"), h * h),
                wk: take(format!("layer{l}.wk"), h * h),
                wv: take(format!("layer{l}.wv"), h * h),
                wo: take(format!("layer{l}.wo"), h * h),
                ln2_g: take(format!("layer{l}.ln2.g"), h),
                ln2_b: take(format!("layer{l}.ln2.b"), h),
                w1: take(format!("layer{l}.w1"), h * f),
                b1: take(format!("layer{l}.b1"), f),
                w2: take(format!("layer{l}.w2"), f * h),
                b2: take(format!("layer{l}.b2"), h),
            })
            .collect();
        let lnf_g = take("lnf.g".into(), h);
        let lnf_b = take("lnf.b".into(), h);
        let w_out = take("w_out".into(), h * v);
        let b_out = take("b_out".into(), v);
        let total = blocks.last().map_or(0, |b| b.1 + b.2);
        Self { tok_emb, layers, lnf_g, lnf_b, w_out, b_out, total, blocks }
    }

    pub fn total(&self) -> usize {
        self.total
    }

    /// `(name, offset, len)` for every tensor, in storage order.
    pub fn blocks(&self) -> &[(String, usize, usize)] {
        &self.blocks
    }

    /// `(offset, len)` of the named tensor.
    pub fn block(&self, name: &str) -> Option<(usize, usize)> {
        self.blocks.iter().find(|b| b.0 == name).map(|b| (b.1, b.2))
    }

    /// Name of the tensor holding parameter `i`.
    pub fn name_of(&self, i: usize) -> &str {
        let b = self.blocks.partition_point(|b| b.1 + b.2 <= i);
        &self.blocks[b].0
    }
}

/// `(cos, sin)` for positions `start..start + n` and each rotary pair.
fn rope_table(base: f64, head_dim: usize, start: usize, n: usize) -> Vec<(f64, f64)> {
    let half = head_dim / 2;
    let mut out = Vec::with_capacity(n * half);
    for pos in start..start + n {
        for j in 0..half {
            let theta = base.powf(-(2.0 * j as f64) / head_dim as f64);
            let a = pos as f64 * theta;
            out.push((a.cos(), a.sin()));
        }
    }
    out
}

/// Rotates consecutive pairs within each head; `inverse` applies the transpose.
fn apply_rope(x: &mut Array2<f64>, heads: usize, head_dim: usize, table: &[(f64, f64)], inverse: bool) {
    let half = head_dim / 2;
    for (t, mut row) in x.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        for h in 0..heads {
            for j in 0..half {
                let (c, s) = table[t * half + j];
                let s = if inverse { -s } else { s };
                let i = h * head_dim + 2 * j;
                let (a, b) = (row[i], row[i + 1]);
                row[i] = a * c - b * s;
                row[i + 1] = a * s + b * c;
            }
        }
    }
}

struct Ln {
    xhat: Array2<f64>,
    rstd: Vec<f64>,
}

fn layer_norm(x: &Array2<f64>, g: &[f64], b: &[f64]) -> (Array2<f64>, Ln) {
    let (t, h) = x.dim();
    let mut xhat = Array2::zeros((t, h));
    let mut y = Array2::zeros((t, h));
    let mut rstd = Vec::with_capacity(t);
    for i in 0..t {
        let row = x.row(i);
        let mean = row.sum() / h as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPS).sqrt();
        rstd.push(r);
        for j in 0..h {
            let xh = (row[j] - mean) * r;
            xhat[[i, j]] = xh;
            y[[i, j]] = g[j] * xh + b[j];
        }
    }
    (y, Ln { xhat, rstd })
}

fn layer_norm_back(dy: &Array2<f64>, ln: &Ln, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Array2<f64> {
    let (t, h) = dy.dim();
    let mut dx = Array2::zeros((t, h));
    let mut dxhat = vec![0.0; h];
    for i in 0..t {
        let (mut m1, mut m2) = (0.0, 0.0);
        for j in 0..h {
            let d = dy[[i, j]];
            let xh = ln.xhat[[i, j]];
            dg[j] += d * xh;
            db[j] += d;
            dxhat[j] = d * g[j];
            m1 += dxhat[j];
            m2 += dxhat[j] * xh;
        }
        m1 /= h as f64;
        m2 /= h as f64;
        for j in 0..h {
            dx[[i, j]] = ln.rstd[i] * (dxhat[j] - m1 - ln.xhat[[i, j]] * m2);
        }
    }
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_K * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let th = (GELU_C * (u + GELU_K * u * u * u)).tanh();
    0.5 * (1.0 + th) + 0.5 * u * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * GELU_K * u * u)
}

/// Softmax of each row over columns `0..=t`; later columns are zero.
fn causal_softmax(scores: &mut Array2<f64>) {
    let n = scores.nrows();
    for t in 0..n {
        let mut row = scores.row_mut(t);
        let max = (0..=t).map(|s| row[s]).fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in 0..=t {
            row[s] = (row[s] - max).exp();
            sum += row[s];
        }
        for s in 0..n {
            row[s] = if s <= t { row[s] / sum } else { 0.0 };
        }
    }
}

fn row_lse(z: &Array2<f64>) -> Vec<f64> {
    z.rows()
        .into_iter()
        .map(|row| {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
        })
        .collect()
}

/// In-place row softmax; returns the per-row log-sum-exp.
fn softmax_rows(z: &mut Array2<f64>) -> Vec<f64> {
    let lse = row_lse(z);
    for (mut row, l) in z.rows_mut().into_iter().zip(&lse) {
        row.mapv_inplace(|v| (v - l).exp());
    }
    lse
}

struct LayerTrace {
    ln1: Ln,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    ln2: Ln,
    h2: Array2<f64>,
    u: Array2<f64>,
    g: Array2<f64>,
}

struct Trace {
    layers: Vec<LayerTrace>,
    lnf: Ln,
}

/// One training or scoring example: token ids and, per position, whether
/// that token is a loss target.
pub type Example<'a> = (&'a [u32], &'a [bool]);

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    cfg: ModelConfig,
    layout: ParamLayout,
    params: Vec<f64>,
    rope: Vec<(f64, f64)>,
}

impl Model {
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        let mut params = vec![0.0; layout.total];
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, cfg.init_std).expect("validated std");
        for (name, off, len) in &layout.blocks {
            let slot = &mut params[*off..off + len];
            if name.ends_with(".g") {
                slot.fill(1.0);
            } else if name == "tok_emb" || name == "w_out" || name.contains(".w") {
                slot.iter_mut().for_each(|p| *p = normal.sample(&mut rng));
            }
        }
        Self::from_params(cfg, params)
    }

    pub fn from_params(cfg: ModelConfig, params: Vec<f64>) -> Result<Self, ModelError> {
        cfg.validate()?;
        let layout = ParamLayout::new(&cfg);
        if params.len() != layout.total {
            return Err(ModelError::ParamCount { expected: layout.total, got: params.len() });
        }
        let rope = rope_table(cfg.rope_base, cfg.head_dim(), 0, cfg.max_seq);
        Ok(Self { cfg, layout, params, rope })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn mat(&self, off: usize, r: usize, c: usize) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((r, c), &self.params[off..off + r * c]).expect("layout")
    }

    fn vecp(&self, off: usize, n: usize) -> &[f64] {
        &self.params[off..off + n]
    }

    fn check(&self, ids: &[u32]) -> Result<(), ModelError> {
        if ids.is_empty() {
            return Err(ModelError::Empty);
        }
        if ids.len() > self.cfg.max_seq {
            return Err(ModelError::TooLong { len: ids.len(), max: self.cfg.max_seq });
        }
        if let Some(&id) = ids.iter().find(|&&id| id as usize >= self.cfg.vocab) {
            return Err(ModelError::BadToken { id, vocab: self.cfg.vocab });
        }
        Ok(())
    }

    /// Runs the blocks and final norm. Returns the normalised hidden states.
    fn trunk(&self, ids: &[u32], rope: &[(f64, f64)], keep: bool) -> (Array2<f64>, Option<Trace>) {
        let (h, hd, nh, f) = (self.cfg.hidden, self.cfg.head_dim(), self.cfg.heads, self.cfg.ffn());
        let t = ids.len();
        let scale = 1.0 / (hd as f64).sqrt();
        let emb = self.mat(self.layout.tok_emb, self.cfg.vocab, h);
        let mut x = Array2::zeros((t, h));
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i).assign(&emb.row(id as usize));
        }
        let mut traces = Vec::new();
        for lo in &self.layout.layers {
            let (h1, ln1) = layer_norm(&x, self.vecp(lo.ln1_g, h), self.vecp(lo.ln1_b, h));
            let mut q = h1.dot(&self.mat(lo.wq, h, h));
            let mut k = h1.dot(&self.mat(lo.wk, h, h));
            let v = h1.dot(&self.mat(lo.wv, h, h));
            apply_rope(&mut q, nh, hd, rope, false);
            apply_rope(&mut k, nh, hd, rope, false);
            let mut attn = Array2::zeros((t, h));
            let mut probs = Vec::with_capacity(nh);
            for head in 0..nh {
                let cols = s![.., head * hd..(head + 1) * hd];
                let mut p = q.slice(cols).dot(&k.slice(cols).t());
                p *= scale;
                causal_softmax(&mut p);
                attn.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
                if keep {
                    probs.push(p);
                }
            }
            x += &attn.dot(&self.mat(lo.wo, h, h));
            let (h2, ln2) = layer_norm(&x, self.vecp(lo.ln2_g, h), self.vecp(lo.ln2_b, h));
            let mut u = h2.dot(&self.mat(lo.w1, h, f));
            let b1 = self.vecp(lo.b1, f);
            for mut row in u.rows_mut() {
                row.iter_mut().zip(b1).for_each(|(a, b)| *a += b);
            }
            let g = u.mapv(gelu);
            let mut m = g.dot(&self.mat(lo.w2, f, h));
            let b2 = self.vecp(lo.b2, h);
            for mut row in m.rows_mut() {
                row.iter_mut().zip(b2).for_each(|(a, b)| *a += b);
            }
            x += &m;
            if keep {
                traces.push(LayerTrace { ln1, h1, q, k, v, probs, attn, ln2, h2, u, g });
            }
        }
        let (hf, lnf) = layer_norm(&x, self.vecp(self.layout.lnf_g, h), self.vecp(self.layout.lnf_b, h));
        (hf, keep.then_some(Trace { layers: traces, lnf }))
    }

    fn head(&self, rows: &Array2<f64>) -> Array2<f64> {
        let v = self.cfg.vocab;
        let mut z = rows.dot(&self.mat(self.layout.w_out, self.cfg.hidden, v));
        let b = self.vecp(self.layout.b_out, v);
        for mut row in z.rows_mut() {
            row.iter_mut().zip(b).for_each(|(a, b)| *a += b);
        }
        z
    }

    /// Next-token distribution at every position (row `i` predicts token `i + 1`).
    pub fn forward(&self, ids: &[u32]) -> Result<Array2<f64>, ModelError> {
        self.check(ids)?;
        let (hf, _) = self.trunk(ids, &self.rope, false);
        let mut z = self.head(&hf);
        softmax_rows(&mut z);
        Ok(z)
    }

    /// Logits for the token following `context`.
    pub fn next_logits(&self, context: &[u32]) -> Result<Vec<f64>, ModelError> {
        self.check(context)?;
        let (hf, _) = self.trunk(context, &self.rope, false);
        let last = hf.slice(s![hf.nrows() - 1.., ..]).to_owned();
        Ok(self.head(&last).into_raw_vec_and_offset().0)
    }

    /// Pre-softmax first-layer attention scores per head, with positions
    /// numbered from `offset`.
    pub fn first_layer_scores(&self, ids: &[u32], offset: usize) -> Result<Vec<Array2<f64>>, ModelError> {
        self.check(ids)?;
        let (h, hd, nh) = (self.cfg.hidden, self.cfg.head_dim(), self.cfg.heads);
        let lo = &self.layout.layers[0];
        let rope = rope_table(self.cfg.rope_base, hd, offset, ids.len());
        let emb = self.mat(self.layout.tok_emb, self.cfg.vocab, h);
        let mut x = Array2::zeros((ids.len(), h));
        for (i, &id) in ids.iter().enumerate() {
            x.row_mut(i).assign(&emb.row(id as usize));
        }
        let (h1, _) = layer_norm(&x, self.vecp(lo.ln1_g, h), self.vecp(lo.ln1_b, h));
        let mut q = h1.dot(&self.mat(lo.wq, h, h));
        let mut k = h1.dot(&self.mat(lo.wk, h, h));
        apply_rope(&mut q, nh, hd, &rope, false);
        apply_rope(&mut k, nh, hd, &rope, false);
        let scale = 1.0 / (hd as f64).sqrt();
        Ok((0..nh)
            .map(|head| {
                let cols = s![.., head * hd..(head + 1) * hd];
                q.slice(cols).dot(&k.slice(cols).t()) * scale
            })
            .collect())
    }

    fn targets(ids: &[u32], mask: &[bool]) -> Result<Vec<usize>, ModelError> {
        if mask.len() != ids.len() {
            return Err(ModelError::MaskLength { mask: mask.len(), len: ids.len() });
        }
        Ok((0..ids.len().saturating_sub(1)).filter(|&t| mask[t + 1]).collect())
    }

    /// Summed cross-entropy over one example and its target count.
    fn example_loss(&self, ids: &[u32], mask: &[bool]) -> Result<(f64, usize), ModelError> {
        self.check(ids)?;
        let pos = Self::targets(ids, mask)?;
        if pos.is_empty() {
            return Ok((0.0, 0));
        }
        let (hf, _) = self.trunk(ids, &self.rope, false);
        let z = self.head(&hf.select(Axis(0), &pos));
        let lse = row_lse(&z);
        let loss = pos.iter().enumerate().map(|(r, &t)| lse[r] - z[[r, ids[t + 1] as usize]]).sum();
        Ok((loss, pos.len()))
    }

    /// Mean next-token cross-entropy over all loss positions of the batch.
    pub fn loss(&self, batch: &[Example]) -> Result<f64, ModelError> {
        let mut sum = 0.0;
        let mut n = 0;
        for (ids, mask) in batch {
            let (l, c) = self.example_loss(ids, mask)?;
            sum += l;
            n += c;
        }
        if n == 0 {
            return Err(ModelError::NoTargets);
        }
        Ok(sum / n as f64)
    }

    /// Adds the gradient of the summed loss of one example to `grad`.
    fn example_grad(&self, ids: &[u32], mask: &[bool], grad: &mut [f64]) -> Result<(f64, usize), ModelError> {
        self.check(ids)?;
        let pos = Self::targets(ids, mask)?;
        if pos.is_empty() {
            return Ok((0.0, 0));
        }
        let (h, hd, nh, f, v) = (self.cfg.hidden, self.cfg.head_dim(), self.cfg.heads, self.cfg.ffn(), self.cfg.vocab);
        let t = ids.len();
        let scale = 1.0 / (hd as f64).sqrt();
        let lay = &self.layout;
        let (hf, trace) = self.trunk(ids, &self.rope, true);
        let trace = trace.expect("kept");

        let hsel = hf.select(Axis(0), &pos);
        let mut dz = self.head(&hsel);
        let mut loss = 0.0;
        let lse = row_lse(&dz);
        for (r, &p) in pos.iter().enumerate() {
            let y = ids[p + 1] as usize;
            loss += lse[r] - dz[[r, y]];
        }
        for (mut row, l) in dz.rows_mut().into_iter().zip(&lse) {
            row.mapv_inplace(|v| (v - l).exp());
        }
        for (r, &p) in pos.iter().enumerate() {
            dz[[r, ids[p + 1] as usize]] -= 1.0;
        }

        accumulate(grad, lay.w_out, &hsel.t(), &dz);
        add_col_sums(&mut grad[lay.b_out..lay.b_out + v], &dz);
        let dsel = dz.dot(&self.mat(lay.w_out, h, v).t());
        let mut dhf = Array2::zeros((t, h));
        for (r, &p) in pos.iter().enumerate() {
            dhf.row_mut(p).assign(&dsel.row(r));
        }
        let mut dx = {
            let (dg, db) = pair_mut(grad, lay.lnf_g, lay.lnf_b, h);
            layer_norm_back(&dhf, &trace.lnf, self.vecp(lay.lnf_g, h), dg, db)
        };

        for (lo, tr) in lay.layers.iter().zip(&trace.layers).rev() {
            // feed-forward
            add_col_sums(&mut grad[lo.b2..lo.b2 + h], &dx);
            accumulate(grad, lo.w2, &tr.g.t(), &dx);
            let mut du = dx.dot(&self.mat(lo.w2, f, h).t());
            du.zip_mut_with(&tr.u, |d, &u| *d *= gelu_grad(u));
            add_col_sums(&mut grad[lo.b1..lo.b1 + f], &du);
            accumulate(grad, lo.w1, &tr.h2.t(), &du);
            let dh2 = du.dot(&self.mat(lo.w1, h, f).t());
            let (dg, db) = pair_mut(grad, lo.ln2_g, lo.ln2_b, h);
            dx += &layer_norm_back(&dh2, &tr.ln2, self.vecp(lo.ln2_g, h), dg, db);

            // attention
            accumulate(grad, lo.wo, &tr.attn.t(), &dx);
            let dattn = dx.dot(&self.mat(lo.wo, h, h).t());
            let mut dq = Array2::zeros((t, h));
            let mut dk = Array2::zeros((t, h));
            let mut dv = Array2::zeros((t, h));
            for head in 0..nh {
                let cols = s![.., head * hd..(head + 1) * hd];
                let p = &tr.probs[head];
                let doh = dattn.slice(cols);
                dv.slice_mut(cols).assign(&p.t().dot(&doh));
                let mut ds = doh.dot(&tr.v.slice(cols).t());
                for i in 0..t {
                    let dot: f64 = (0..=i).map(|j| ds[[i, j]] * p[[i, j]]).sum();
                    for j in 0..t {
                        ds[[i, j]] = if j <= i { p[[i, j]] * (ds[[i, j]] - dot) * scale } else { 0.0 };
                    }
                }
                dq.slice_mut(cols).assign(&ds.dot(&tr.k.slice(cols)));
                dk.slice_mut(cols).assign(&ds.t().dot(&tr.q.slice(cols)));
            }
            apply_rope(&mut dq, nh, hd, &self.rope, true);
            apply_rope(&mut dk, nh, hd, &self.rope, true);
            accumulate(grad, lo.wq, &tr.h1.t(), &dq);
            accumulate(grad, lo.wk, &tr.h1.t(), &dk);
            accumulate(grad, lo.wv, &tr.h1.t(), &dv);
            let mut dh1 = dq.dot(&self.mat(lo.wq, h, h).t());
            dh1 += &dk.dot(&self.mat(lo.wk, h, h).t());
            dh1 += &dv.dot(&self.mat(lo.wv, h, h).t());
            let (dg, db) = pair_mut(grad, lo.ln1_g, lo.ln1_b, h);
            dx += &layer_norm_back(&dh1, &tr.ln1, self.vecp(lo.ln1_g, h), dg, db);
        }

        for (i, &id) in ids.iter().enumerate() {
            let off = lay.tok_emb + id as usize * h;
            grad[off..off + h].iter_mut().zip(dx.row(i)).for_each(|(g, d)| *g += d);
        }
        Ok((loss, pos.len()))
    }

    /// Mean loss and its gradient over the batch.
    pub fn loss_and_grad(&self, batch: &[Example]) -> Result<(f64, Vec<f64>), ModelError> {
        let parts: Vec<Result<(f64, usize, Vec<f64>), ModelError>> = batch
            .par_chunks(GRAD_CHUNK)
            .map(|chunk| {
                let mut grad = vec![0.0; self.layout.total];
                let mut loss = 0.0;
                let mut n = 0;
                for (ids, mask) in chunk {
                    let (l, c) = self.example_grad(ids, mask, &mut grad)?;
                    loss += l;
                    n += c;
                }
                Ok((loss, n, grad))
            })
            .collect();
        let mut total = vec![0.0; self.layout.total];
        let (mut loss, mut n) = (0.0, 0);
        for part in parts {
            let (l, c, g) = part?;
            loss += l;
            n += c;
            total.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        if n == 0 {
            return Err(ModelError::NoTargets);
        }
        let inv = 1.0 / n as f64;
        total.iter_mut().for_each(|g| *g *= inv);
        Ok((loss * inv, total))
    }
}

/// `grad[off..] += a · b` viewed as a matrix.
fn accumulate(grad: &mut [f64], off: usize, a: &ArrayView2<f64>, b: &Array2<f64>) {
    let (r, c) = (a.nrows(), b.ncols());
    let mut view = ArrayViewMut2::from_shape((r, c), &mut grad[off..off + r * c]).expect("layout");
    general_mat_mul(1.0, a, b, 1.0, &mut view);
}

fn add_col_sums(dst: &mut [f64], m: &Array2<f64>) {
    for row in m.rows() {
        dst.iter_mut().zip(row).for_each(|(d, v)| *d += v);
    }
}

/// Two disjoint `n`-long windows at `a < b`.
fn pair_mut(grad: &mut [f64], a: usize, b: usize, n: usize) -> (&mut [f64], &mut [f64]) {
    let (lo, hi) = grad.split_at_mut(b);
    (&mut lo[a..a + n], &mut hi[..n])
}
