//! Transformer internals: parameter containers, masked scaled-dot-product
//! attention, layer norm, position-wise feed-forward, and the full
//! encoder–decoder forward/backward with explicit activation caches.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{add_scaled, log_sum_exp, softmax_backward, Mat};

const LN_EPS: f64 = 1e-5;

/// Attention visibility mask; `true` = the query row may attend there.
#[derive(Debug, Clone)]
pub struct Mask {
    pub rows: usize,
    pub cols: usize,
    data: Vec<bool>,
}

impl Mask {
    /// Everything visible.
    pub fn full(rows: usize, cols: usize) -> Self {
        Mask { rows, cols, data: vec![true; rows * cols] }
    }

    /// Lower-triangular: position i sees positions 0..=i.
    pub fn causal(n: usize) -> Self {
        let mut m = Mask { rows: n, cols: n, data: vec![false; n * n] };
        for i in 0..n {
            for j in 0..=i {
                m.data[i * n + j] = true;
            }
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> bool {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, visible: bool) {
        self.data[i * self.cols + j] = visible;
    }
}

/// Scaled dot-product attention: softmax(QKᵀ/√d_k)V with masked scores
/// forced to −∞ so masked positions get weight exactly 0. Returns the
/// output rows and the row-stochastic weight matrix.
pub fn attention(q: &Mat, k: &Mat, v: &Mat, mask: &Mask) -> Result<(Mat, Mat)> {
    if q.cols != k.cols {
        return Err(Error::Shape(format!(
            "attention query width {} != key width {}",
            q.cols, k.cols
        )));
    }
    if k.rows != v.rows {
        return Err(Error::Shape(format!(
            "attention has {} keys but {} values",
            k.rows, v.rows
        )));
    }
    if mask.rows != q.rows || mask.cols != k.rows {
        return Err(Error::Shape(format!(
            "attention mask is {}x{}, expected {}x{}",
            mask.rows, mask.cols, q.rows, k.rows
        )));
    }
    let scale = 1.0 / (q.cols as f64).sqrt();
    let mut weights = Mat::zeros(q.rows, k.rows);
    for i in 0..q.rows {
        if (0..k.rows).all(|j| !mask.at(i, j)) {
            return Err(Error::Degenerate(format!(
                "attention row {i} has no visible position"
            )));
        }
        let mut max = f64::NEG_INFINITY;
        let mut scores = vec![f64::NEG_INFINITY; k.rows];
        for j in 0..k.rows {
            if mask.at(i, j) {
                let s = crate::linalg::dot(q.row(i), k.row(j)) * scale;
                scores[j] = s;
                if s > max {
                    max = s;
                }
            }
        }
        let mut denom = 0.0;
        for sc in &mut scores {
            *sc = (*sc - max).exp(); // exp(−∞) = 0 exactly for masked entries
            denom += *sc;
        }
        for (j, sc) in scores.iter().enumerate() {
            weights.data[i * k.rows + j] = sc / denom;
        }
    }
    Ok((weights.matmul(v), weights))
}

#[derive(Debug, Clone)]
pub struct LnWeights {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LnWeights {
    pub fn identity(d: usize) -> Self {
        LnWeights { gain: vec![1.0; d], bias: vec![0.0; d] }
    }

    pub fn zeros(d: usize) -> Self {
        LnWeights { gain: vec![0.0; d], bias: vec![0.0; d] }
    }
}

#[derive(Debug, Clone)]
pub struct AttnWeights {
    pub wq: Mat,
    pub wk: Mat,
    pub wv: Mat,
    pub wo: Mat,
}

impl AttnWeights {
    fn init(rng: &mut ChaCha8Rng, d: usize) -> Self {
        AttnWeights {
            wq: Mat::xavier(rng, d, d),
            wk: Mat::xavier(rng, d, d),
            wv: Mat::xavier(rng, d, d),
            wo: Mat::xavier(rng, d, d),
        }
    }

    fn zeros(d: usize) -> Self {
        AttnWeights {
            wq: Mat::zeros(d, d),
            wk: Mat::zeros(d, d),
            wv: Mat::zeros(d, d),
            wo: Mat::zeros(d, d),
        }
    }
}

#[derive(Debug, Clone)]
pub struct FfnWeights {
    pub w1: Mat,
    pub b1: Vec<f64>,
    pub w2: Mat,
    pub b2: Vec<f64>,
}

impl FfnWeights {
    fn init(rng: &mut ChaCha8Rng, d: usize, d_ff: usize) -> Self {
        FfnWeights {
            w1: Mat::xavier(rng, d, d_ff),
            b1: vec![0.0; d_ff],
            w2: Mat::xavier(rng, d_ff, d),
            b2: vec![0.0; d],
        }
    }

    fn zeros(d: usize, d_ff: usize) -> Self {
        FfnWeights {
            w1: Mat::zeros(d, d_ff),
            b1: vec![0.0; d_ff],
            w2: Mat::zeros(d_ff, d),
            b2: vec![0.0; d],
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderLayer {
    pub ln1: LnWeights,
    pub attn: AttnWeights,
    pub ln2: LnWeights,
    pub ffn: FfnWeights,
}

#[derive(Debug, Clone)]
pub struct DecoderLayer {
    pub ln1: LnWeights,
    pub self_attn: AttnWeights,
    pub ln2: LnWeights,
    pub cross_attn: AttnWeights,
    pub ln3: LnWeights,
    pub ffn: FfnWeights,
}

/// Pre-norm encoder–decoder parameters. The position table is fixed
/// (sinusoidal, never trained) and the token embedding doubles as the
/// output projection (weight tying).
#[derive(Debug, Clone)]
pub struct Seq2SeqParams {
    pub embedding: Mat,
    pub pos: Mat,
    pub encoder: Vec<EncoderLayer>,
    pub enc_ln: LnWeights,
    pub decoder: Vec<DecoderLayer>,
    pub dec_ln: LnWeights,
    pub d_model: usize,
    pub n_heads: usize,
}

/// PE(pos, 2i) = sin(pos/10000^(2i/d)), PE(pos, 2i+1) = cos of the same.
pub fn sinusoidal_table(max_len: usize, d_model: usize) -> Mat {
    let mut pe = Mat::zeros(max_len, d_model);
    for p in 0..max_len {
        for i in 0..d_model / 2 {
            let angle = p as f64 / 10000f64.powf(2.0 * i as f64 / d_model as f64);
            pe.data[p * d_model + 2 * i] = angle.sin();
            if 2 * i + 1 < d_model {
                pe.data[p * d_model + 2 * i + 1] = angle.cos();
            }
        }
    }
    pe
}

impl Seq2SeqParams {
    pub fn init(
        rng: &mut ChaCha8Rng,
        vocab_size: usize,
        d_model: usize,
        n_heads: usize,
        n_layers: usize,
        d_ff: usize,
        max_len: usize,
    ) -> Self {
        let encoder = (0..n_layers)
            .map(|_| EncoderLayer {
                ln1: LnWeights::identity(d_model),
                attn: AttnWeights::init(rng, d_model),
                ln2: LnWeights::identity(d_model),
                ffn: FfnWeights::init(rng, d_model, d_ff),
            })
            .collect();
        let decoder = (0..n_layers)
            .map(|_| DecoderLayer {
                ln1: LnWeights::identity(d_model),
                self_attn: AttnWeights::init(rng, d_model),
                ln2: LnWeights::identity(d_model),
                cross_attn: AttnWeights::init(rng, d_model),
                ln3: LnWeights::identity(d_model),
                ffn: FfnWeights::init(rng, d_model, d_ff),
            })
            .collect();
        Seq2SeqParams {
            embedding: Mat::xavier(rng, vocab_size, d_model),
            pos: sinusoidal_table(max_len, d_model),
            encoder,
            enc_ln: LnWeights::identity(d_model),
            decoder,
            dec_ln: LnWeights::identity(d_model),
            d_model,
            n_heads,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.embedding.rows
    }

    pub fn max_len(&self) -> usize {
        self.pos.rows
    }

    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), &self.embedding.data)];
        for (i, l) in self.encoder.iter().enumerate() {
            collect_enc(&mut out, i, l);
        }
        out.push(("enc_ln.g".into(), &self.enc_ln.gain));
        out.push(("enc_ln.b".into(), &self.enc_ln.bias));
        for (i, l) in self.decoder.iter().enumerate() {
            collect_dec(&mut out, i, l);
        }
        out.push(("dec_ln.g".into(), &self.dec_ln.gain));
        out.push(("dec_ln.b".into(), &self.dec_ln.bias));
        out
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Vec<f64>)> {
        let mut out: Vec<(String, &mut Vec<f64>)> =
            vec![("embedding".into(), &mut self.embedding.data)];
        for (i, l) in self.encoder.iter_mut().enumerate() {
            collect_enc_mut(&mut out, i, l);
        }
        out.push(("enc_ln.g".into(), &mut self.enc_ln.gain));
        out.push(("enc_ln.b".into(), &mut self.enc_ln.bias));
        for (i, l) in self.decoder.iter_mut().enumerate() {
            collect_dec_mut(&mut out, i, l);
        }
        out.push(("dec_ln.g".into(), &mut self.dec_ln.gain));
        out.push(("dec_ln.b".into(), &mut self.dec_ln.bias));
        out
    }

    /// Shapes of every named tensor, in the same order.
    pub fn tensor_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let d = self.d_model;
        let mut out: Vec<(String, Vec<usize>)> =
            vec![("embedding".into(), vec![self.embedding.rows, self.embedding.cols])];
        let attn_shapes = |out: &mut Vec<(String, Vec<usize>)>, p: String| {
            for w in ["wq", "wk", "wv", "wo"] {
                out.push((format!("{p}.{w}"), vec![d, d]));
            }
        };
        let ln_shapes = |out: &mut Vec<(String, Vec<usize>)>, p: String| {
            out.push((format!("{p}.g"), vec![d]));
            out.push((format!("{p}.b"), vec![d]));
        };
        let ffn_shapes = |out: &mut Vec<(String, Vec<usize>)>, p: String, d_ff: usize| {
            out.push((format!("{p}.w1"), vec![d, d_ff]));
            out.push((format!("{p}.b1"), vec![d_ff]));
            out.push((format!("{p}.w2"), vec![d_ff, d]));
            out.push((format!("{p}.b2"), vec![d]));
        };
        for (i, l) in self.encoder.iter().enumerate() {
            ln_shapes(&mut out, format!("enc.{i}.ln1"));
            attn_shapes(&mut out, format!("enc.{i}.attn"));
            ln_shapes(&mut out, format!("enc.{i}.ln2"));
            ffn_shapes(&mut out, format!("enc.{i}.ffn"), l.ffn.b1.len());
        }
        ln_shapes(&mut out, "enc_ln".into());
        for (i, l) in self.decoder.iter().enumerate() {
            ln_shapes(&mut out, format!("dec.{i}.ln1"));
            attn_shapes(&mut out, format!("dec.{i}.self"));
            ln_shapes(&mut out, format!("dec.{i}.ln2"));
            attn_shapes(&mut out, format!("dec.{i}.cross"));
            ln_shapes(&mut out, format!("dec.{i}.ln3"));
            ffn_shapes(&mut out, format!("dec.{i}.ffn"), l.ffn.b1.len());
        }
        ln_shapes(&mut out, "dec_ln".into());
        out
    }
}

fn collect_enc<'a>(out: &mut Vec<(String, &'a [f64])>, i: usize, l: &'a EncoderLayer) {
    out.push((format!("enc.{i}.ln1.g"), &l.ln1.gain));
    out.push((format!("enc.{i}.ln1.b"), &l.ln1.bias));
    out.push((format!("enc.{i}.attn.wq"), &l.attn.wq.data));
    out.push((format!("enc.{i}.attn.wk"), &l.attn.wk.data));
    out.push((format!("enc.{i}.attn.wv"), &l.attn.wv.data));
    out.push((format!("enc.{i}.attn.wo"), &l.attn.wo.data));
    out.push((format!("enc.{i}.ln2.g"), &l.ln2.gain));
    out.push((format!("enc.{i}.ln2.b"), &l.ln2.bias));
    out.push((format!("enc.{i}.ffn.w1"), &l.ffn.w1.data));
    out.push((format!("enc.{i}.ffn.b1"), &l.ffn.b1));
    out.push((format!("enc.{i}.ffn.w2"), &l.ffn.w2.data));
    out.push((format!("enc.{i}.ffn.b2"), &l.ffn.b2));
}

fn collect_enc_mut<'a>(out: &mut Vec<(String, &'a mut Vec<f64>)>, i: usize, l: &'a mut EncoderLayer) {
    out.push((format!("enc.{i}.ln1.g"), &mut l.ln1.gain));
    out.push((format!("enc.{i}.ln1.b"), &mut l.ln1.bias));
    out.push((format!("enc.{i}.attn.wq"), &mut l.attn.wq.data));
    out.push((format!("enc.{i}.attn.wk"), &mut l.attn.wk.data));
    out.push((format!("enc.{i}.attn.wv"), &mut l.attn.wv.data));
    out.push((format!("enc.{i}.attn.wo"), &mut l.attn.wo.data));
    out.push((format!("enc.{i}.ln2.g"), &mut l.ln2.gain));
    out.push((format!("enc.{i}.ln2.b"), &mut l.ln2.bias));
    out.push((format!("enc.{i}.ffn.w1"), &mut l.ffn.w1.data));
    out.push((format!("enc.{i}.ffn.b1"), &mut l.ffn.b1));
    out.push((format!("enc.{i}.ffn.w2"), &mut l.ffn.w2.data));
    out.push((format!("enc.{i}.ffn.b2"), &mut l.ffn.b2));
}

fn collect_dec<'a>(out: &mut Vec<(String, &'a [f64])>, i: usize, l: &'a DecoderLayer) {
    out.push((format!("dec.{i}.ln1.g"), &l.ln1.gain));
    out.push((format!("dec.{i}.ln1.b"), &l.ln1.bias));
    out.push((format!("dec.{i}.self.wq"), &l.self_attn.wq.data));
    out.push((format!("dec.{i}.self.wk"), &l.self_attn.wk.data));
    out.push((format!("dec.{i}.self.wv"), &l.self_attn.wv.data));
    out.push((format!("dec.{i}.self.wo"), &l.self_attn.wo.data));
    out.push((format!("dec.{i}.ln2.g"), &l.ln2.gain));
    out.push((format!("dec.{i}.ln2.b"), &l.ln2.bias));
    out.push((format!("dec.{i}.cross.wq"), &l.cross_attn.wq.data));
    out.push((format!("dec.{i}.cross.wk"), &l.cross_attn.wk.data));
    out.push((format!("dec.{i}.cross.wv"), &l.cross_attn.wv.data));
    out.push((format!("dec.{i}.cross.wo"), &l.cross_attn.wo.data));
    out.push((format!("dec.{i}.ln3.g"), &l.ln3.gain));
    out.push((format!("dec.{i}.ln3.b"), &l.ln3.bias));
    out.push((format!("dec.{i}.ffn.w1"), &l.ffn.w1.data));
    out.push((format!("dec.{i}.ffn.b1"), &l.ffn.b1));
    out.push((format!("dec.{i}.ffn.w2"), &l.ffn.w2.data));
    out.push((format!("dec.{i}.ffn.b2"), &l.ffn.b2));
}

fn collect_dec_mut<'a>(out: &mut Vec<(String, &'a mut Vec<f64>)>, i: usize, l: &'a mut DecoderLayer) {
    out.push((format!("dec.{i}.ln1.g"), &mut l.ln1.gain));
    out.push((format!("dec.{i}.ln1.b"), &mut l.ln1.bias));
    out.push((format!("dec.{i}.self.wq"), &mut l.self_attn.wq.data));
    out.push((format!("dec.{i}.self.wk"), &mut l.self_attn.wk.data));
    out.push((format!("dec.{i}.self.wv"), &mut l.self_attn.wv.data));
    out.push((format!("dec.{i}.self.wo"), &mut l.self_attn.wo.data));
    out.push((format!("dec.{i}.ln2.g"), &mut l.ln2.gain));
    out.push((format!("dec.{i}.ln2.b"), &mut l.ln2.bias));
    out.push((format!("dec.{i}.cross.wq"), &mut l.cross_attn.wq.data));
    out.push((format!("dec.{i}.cross.wk"), &mut l.cross_attn.wk.data));
    out.push((format!("dec.{i}.cross.wv"), &mut l.cross_attn.wv.data));
    out.push((format!("dec.{i}.cross.wo"), &mut l.cross_attn.wo.data));
    out.push((format!("dec.{i}.ln3.g"), &mut l.ln3.gain));
    out.push((format!("dec.{i}.ln3.b"), &mut l.ln3.bias));
    out.push((format!("dec.{i}.ffn.w1"), &mut l.ffn.w1.data));
    out.push((format!("dec.{i}.ffn.b1"), &mut l.ffn.b1));
    out.push((format!("dec.{i}.ffn.w2"), &mut l.ffn.w2.data));
    out.push((format!("dec.{i}.ffn.b2"), &mut l.ffn.b2));
}

/// Gradient accumulator shaped like the trainable parameters.
#[derive(Debug, Clone)]
pub struct Seq2SeqGrads {
    pub embedding: Mat,
    pub encoder: Vec<EncoderLayer>,
    pub enc_ln: LnWeights,
    pub decoder: Vec<DecoderLayer>,
    pub dec_ln: LnWeights,
}

impl Seq2SeqGrads {
    pub fn zeros_like(p: &Seq2SeqParams) -> Self {
        let d = p.d_model;
        Seq2SeqGrads {
            embedding: Mat::zeros(p.embedding.rows, p.embedding.cols),
            encoder: p
                .encoder
                .iter()
                .map(|l| EncoderLayer {
                    ln1: LnWeights::zeros(d),
                    attn: AttnWeights::zeros(d),
                    ln2: LnWeights::zeros(d),
                    ffn: FfnWeights::zeros(d, l.ffn.b1.len()),
                })
                .collect(),
            enc_ln: LnWeights::zeros(d),
            decoder: p
                .decoder
                .iter()
                .map(|l| DecoderLayer {
                    ln1: LnWeights::zeros(d),
                    self_attn: AttnWeights::zeros(d),
                    ln2: LnWeights::zeros(d),
                    cross_attn: AttnWeights::zeros(d),
                    ln3: LnWeights::zeros(d),
                    ffn: FfnWeights::zeros(d, l.ffn.b1.len()),
                })
                .collect(),
            dec_ln: LnWeights::zeros(d),
        }
    }

    /// Same order as `Seq2SeqParams::named_tensors`.
    pub fn named_tensors(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![("embedding".into(), &self.embedding.data)];
        for (i, l) in self.encoder.iter().enumerate() {
            collect_enc(&mut out, i, l);
        }
        out.push(("enc_ln.g".into(), &self.enc_ln.gain));
        out.push(("enc_ln.b".into(), &self.enc_ln.bias));
        for (i, l) in self.decoder.iter().enumerate() {
            collect_dec(&mut out, i, l);
        }
        out.push(("dec_ln.g".into(), &self.dec_ln.gain));
        out.push(("dec_ln.b".into(), &self.dec_ln.bias));
        out
    }
}

// ---------------------------------------------------------------------------
// forward/backward building blocks
// ---------------------------------------------------------------------------

pub(crate) struct LnCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

fn ln_forward(x: &Mat, w: &LnWeights) -> (Mat, LnCache) {
    let d = x.cols;
    let mut y = Mat::zeros(x.rows, d);
    let mut xhat = Mat::zeros(x.rows, d);
    let mut inv_std = vec![0.0; x.rows];
    for i in 0..x.rows {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let is = 1.0 / (var + LN_EPS).sqrt();
        inv_std[i] = is;
        for j in 0..d {
            let xh = (row[j] - mean) * is;
            xhat.data[i * d + j] = xh;
            y.data[i * d + j] = w.gain[j] * xh + w.bias[j];
        }
    }
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(dy: &Mat, w: &LnWeights, gw: &mut LnWeights, cache: &LnCache) -> Mat {
    let d = dy.cols;
    let mut dx = Mat::zeros(dy.rows, d);
    for i in 0..dy.rows {
        let dyr = dy.row(i);
        let xh = cache.xhat.row(i);
        let mut dxhat = vec![0.0; d];
        for j in 0..d {
            gw.gain[j] += dyr[j] * xh[j];
            gw.bias[j] += dyr[j];
            dxhat[j] = dyr[j] * w.gain[j];
        }
        let m1 = dxhat.iter().sum::<f64>() / d as f64;
        let m2 = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let is = cache.inv_std[i];
        for j in 0..d {
            dx.data[i * d + j] = is * (dxhat[j] - m1 - xh[j] * m2);
        }
    }
    dx
}

fn col_slice(m: &Mat, c0: usize, width: usize) -> Mat {
    let mut s = Mat::zeros(m.rows, width);
    for i in 0..m.rows {
        s.row_mut(i).copy_from_slice(&m.row(i)[c0..c0 + width]);
    }
    s
}

fn col_slice_add(dst: &mut Mat, c0: usize, src: &Mat) {
    for i in 0..src.rows {
        let drow = dst.row_mut(i);
        for (j, &v) in src.row(i).iter().enumerate() {
            drow[c0 + j] += v;
        }
    }
}

pub(crate) struct AttnCache {
    xq: Mat,
    xkv: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per-head row-stochastic attention weights.
    heads: Vec<Mat>,
    concat: Mat,
}

fn mha_forward(
    xq: &Mat,
    xkv: &Mat,
    w: &AttnWeights,
    mask: &Mask,
    n_heads: usize,
) -> Result<(Mat, AttnCache)> {
    let d = w.wq.cols;
    let dk = d / n_heads;
    let q = xq.matmul(&w.wq);
    let k = xkv.matmul(&w.wk);
    let v = xkv.matmul(&w.wv);
    let mut concat = Mat::zeros(xq.rows, d);
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = col_slice(&q, h * dk, dk);
        let kh = col_slice(&k, h * dk, dk);
        let vh = col_slice(&v, h * dk, dk);
        let (oh, ah) = attention(&qh, &kh, &vh, mask)?;
        col_slice_add(&mut concat, h * dk, &oh);
        heads.push(ah);
    }
    let out = concat.matmul(&w.wo);
    let cache = AttnCache {
        xq: xq.clone(),
        xkv: xkv.clone(),
        q,
        k,
        v,
        heads,
        concat,
    };
    Ok((out, cache))
}

/// Returns (dxq, dxkv); caller combines them (they alias for self-attention).
fn mha_backward(
    dy: &Mat,
    w: &AttnWeights,
    gw: &mut AttnWeights,
    cache: &AttnCache,
    n_heads: usize,
) -> (Mat, Mat) {
    let d = w.wq.cols;
    let dk = d / n_heads;
    let scale = 1.0 / (dk as f64).sqrt();

    gw.wo.add_assign(&cache.concat.transpose().matmul(dy));
    let dconcat = dy.matmul(&w.wo.transpose());

    let mut dq = Mat::zeros(cache.q.rows, d);
    let mut dk_full = Mat::zeros(cache.k.rows, d);
    let mut dv_full = Mat::zeros(cache.v.rows, d);
    for h in 0..n_heads {
        let doh = col_slice(&dconcat, h * dk, dk);
        let ah = &cache.heads[h];
        let kh = col_slice(&cache.k, h * dk, dk);
        let vh = col_slice(&cache.v, h * dk, dk);
        let qh = col_slice(&cache.q, h * dk, dk);

        let dvh = ah.transpose().matmul(&doh);
        let da = doh.matmul(&vh.transpose());
        // softmax backward row by row; masked weights are exactly 0 so they
        // contribute nothing and receive nothing
        let mut ds = Mat::zeros(ah.rows, ah.cols);
        for i in 0..ah.rows {
            let dsr = softmax_backward(ah.row(i), da.row(i));
            ds.row_mut(i).copy_from_slice(&dsr);
        }
        let mut dqh = ds.matmul(&kh);
        dqh.scale(scale);
        let mut dkh = ds.transpose().matmul(&qh);
        dkh.scale(scale);

        col_slice_add(&mut dq, h * dk, &dqh);
        col_slice_add(&mut dk_full, h * dk, &dkh);
        col_slice_add(&mut dv_full, h * dk, &dvh);
    }
    gw.wq.add_assign(&cache.xq.transpose().matmul(&dq));
    gw.wk.add_assign(&cache.xkv.transpose().matmul(&dk_full));
    gw.wv.add_assign(&cache.xkv.transpose().matmul(&dv_full));
    let dxq = dq.matmul(&w.wq.transpose());
    let mut dxkv = dk_full.matmul(&w.wk.transpose());
    dxkv.add_assign(&dv_full.matmul(&w.wv.transpose()));
    (dxq, dxkv)
}

pub(crate) struct FfnCache {
    x: Mat,
    hpre: Mat,
}

fn ffn_forward(x: &Mat, w: &FfnWeights) -> (Mat, FfnCache) {
    let mut hpre = x.matmul(&w.w1);
    for i in 0..hpre.rows {
        add_scaled(hpre.row_mut(i), 1.0, &w.b1);
    }
    let mut h = hpre.clone();
    for v in h.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let mut y = h.matmul(&w.w2);
    for i in 0..y.rows {
        add_scaled(y.row_mut(i), 1.0, &w.b2);
    }
    (y, FfnCache { x: x.clone(), hpre })
}

fn ffn_backward(dy: &Mat, w: &FfnWeights, gw: &mut FfnWeights, cache: &FfnCache) -> Mat {
    let mut h = cache.hpre.clone();
    for v in h.data.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    gw.w2.add_assign(&h.transpose().matmul(dy));
    for i in 0..dy.rows {
        add_scaled(&mut gw.b2, 1.0, dy.row(i));
    }
    let mut dh = dy.matmul(&w.w2.transpose());
    for (dv, &pre) in dh.data.iter_mut().zip(&cache.hpre.data) {
        if pre <= 0.0 {
            *dv = 0.0;
        }
    }
    gw.w1.add_assign(&cache.x.transpose().matmul(&dh));
    for i in 0..dh.rows {
        add_scaled(&mut gw.b1, 1.0, dh.row(i));
    }
    dh.matmul(&w.w1.transpose())
}

/// Inverted-dropout controller; `Off` leaves activations untouched.
pub(crate) enum DropMode<'a> {
    Off,
    On { rng: &'a mut ChaCha8Rng, p: f64 },
}

impl DropMode<'_> {
    /// Applies a fresh mask in place and returns it for the backward pass.
    fn apply(&mut self, x: &mut Mat) -> Option<Mat> {
        match self {
            DropMode::Off => None,
            DropMode::On { rng, p } => {
                let keep = 1.0 - *p;
                let mut mask = Mat::zeros(x.rows, x.cols);
                for (m, v) in mask.data.iter_mut().zip(x.data.iter_mut()) {
                    *m = if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 };
                    *v *= *m;
                }
                Some(mask)
            }
        }
    }
}

fn mask_backward(dy: &mut Mat, mask: &Option<Mat>) {
    if let Some(m) = mask {
        for (d, &mv) in dy.data.iter_mut().zip(&m.data) {
            *d *= mv;
        }
    }
}

pub(crate) struct EncLayerCache {
    ln1: LnCache,
    attn: AttnCache,
    drop_a: Option<Mat>,
    ln2: LnCache,
    ffn: FfnCache,
    drop_f: Option<Mat>,
}

pub(crate) struct DecLayerCache {
    ln1: LnCache,
    self_attn: AttnCache,
    drop_a: Option<Mat>,
    ln2: LnCache,
    cross_attn: AttnCache,
    drop_c: Option<Mat>,
    ln3: LnCache,
    ffn: FfnCache,
    drop_f: Option<Mat>,
}

pub(crate) struct EncCaches {
    emb_drop: Option<Mat>,
    layers: Vec<EncLayerCache>,
    final_ln: LnCache,
    pub(crate) out: Mat,
}

pub(crate) struct DecCaches {
    emb_drop: Option<Mat>,
    layers: Vec<DecLayerCache>,
    final_ln: LnCache,
    pub(crate) out: Mat,
}

/// Token embeddings scaled by √d_model plus the fixed position table.
fn embed(ids: &[usize], params: &Seq2SeqParams) -> Mat {
    let d = params.d_model;
    let scale = (d as f64).sqrt();
    let mut x = Mat::zeros(ids.len(), d);
    for (t, &id) in ids.iter().enumerate() {
        let row = x.row_mut(t);
        for j in 0..d {
            row[j] = params.embedding.at(id, j) * scale + params.pos.at(t, j);
        }
    }
    x
}

pub(crate) fn encode_forward(
    src: &[usize],
    params: &Seq2SeqParams,
    drop: &mut DropMode,
) -> Result<EncCaches> {
    let mut x = embed(src, params);
    let emb_drop = drop.apply(&mut x);
    let mask = Mask::full(src.len(), src.len());
    let mut layers = Vec::with_capacity(params.encoder.len());
    for layer in &params.encoder {
        let (h1, ln1) = ln_forward(&x, &layer.ln1);
        let (mut a, attn) = mha_forward(&h1, &h1, &layer.attn, &mask, params.n_heads)?;
        let drop_a = drop.apply(&mut a);
        x.add_assign(&a);
        let (h2, ln2) = ln_forward(&x, &layer.ln2);
        let (mut f, ffn) = ffn_forward(&h2, &layer.ffn);
        let drop_f = drop.apply(&mut f);
        x.add_assign(&f);
        layers.push(EncLayerCache { ln1, attn, drop_a, ln2, ffn, drop_f });
    }
    let (out, final_ln) = ln_forward(&x, &params.enc_ln);
    Ok(EncCaches { emb_drop, layers, final_ln, out })
}

pub(crate) fn decode_forward(
    dec_in: &[usize],
    enc_out: &Mat,
    params: &Seq2SeqParams,
    drop: &mut DropMode,
) -> Result<DecCaches> {
    let t = dec_in.len();
    let mut y = embed(dec_in, params);
    let emb_drop = drop.apply(&mut y);
    let causal = Mask::causal(t);
    let cross_mask = Mask::full(t, enc_out.rows);
    let mut layers = Vec::with_capacity(params.decoder.len());
    for layer in &params.decoder {
        let (h1, ln1) = ln_forward(&y, &layer.ln1);
        let (mut a, self_attn) = mha_forward(&h1, &h1, &layer.self_attn, &causal, params.n_heads)?;
        let drop_a = drop.apply(&mut a);
        y.add_assign(&a);
        let (h2, ln2) = ln_forward(&y, &layer.ln2);
        let (mut c, cross_attn) =
            mha_forward(&h2, enc_out, &layer.cross_attn, &cross_mask, params.n_heads)?;
        let drop_c = drop.apply(&mut c);
        y.add_assign(&c);
        let (h3, ln3) = ln_forward(&y, &layer.ln3);
        let (mut f, ffn) = ffn_forward(&h3, &layer.ffn);
        let drop_f = drop.apply(&mut f);
        y.add_assign(&f);
        layers.push(DecLayerCache {
            ln1,
            self_attn,
            drop_a,
            ln2,
            cross_attn,
            drop_c,
            ln3,
            ffn,
            drop_f,
        });
    }
    let (out, final_ln) = ln_forward(&y, &params.dec_ln);
    Ok(DecCaches { emb_drop, layers, final_ln, out })
}

/// Logits for every decoder position: DecOut · Embᵀ (tied projection).
pub(crate) fn output_logits(dec_out: &Mat, params: &Seq2SeqParams) -> Mat {
    dec_out.matmul(&params.embedding.transpose())
}

/// Label-smoothed cross entropy over one logits row. Returns (loss, dlogits).
pub(crate) fn smoothed_ce(logits: &[f64], target: usize, smoothing: f64) -> (f64, Vec<f64>) {
    let vsize = logits.len();
    let lse = log_sum_exp(logits);
    let off = if vsize > 1 { smoothing / (vsize - 1) as f64 } else { 0.0 };
    let on = 1.0 - smoothing;
    let mut loss = 0.0;
    let mut dl = vec![0.0; vsize];
    for (w, &lw) in logits.iter().enumerate() {
        let q = if w == target { on } else { off };
        let logp = lw - lse;
        if q > 0.0 {
            loss -= q * logp;
        }
        dl[w] = (logp).exp() - q;
    }
    (loss, dl)
}

pub(crate) struct PairResult {
    pub loss: f64,
    pub predictions: usize,
    pub hits: usize,
}

/// Teacher-forced loss over one (source, story) pair. Decoder input is
/// [BOS] + story, the targets are story + [EOS].
pub(crate) fn pair_forward(
    src: &[usize],
    story: &[usize],
    params: &Seq2SeqParams,
    smoothing: f64,
) -> Result<f64> {
    let enc = encode_forward(src, params, &mut DropMode::Off)?;
    let mut dec_in = Vec::with_capacity(story.len() + 1);
    dec_in.push(crate::corpus::BOS);
    dec_in.extend_from_slice(story);
    let dec = decode_forward(&dec_in, &enc.out, params, &mut DropMode::Off)?;
    let logits = output_logits(&dec.out, params);
    let mut loss = 0.0;
    for t in 0..dec_in.len() {
        let target = if t < story.len() { story[t] } else { crate::corpus::EOS };
        let (l, _) = smoothed_ce(logits.row(t), target, smoothing);
        loss += l;
    }
    Ok(loss)
}

/// Forward + full backward for one pair, accumulating into `grads`.
pub(crate) fn pair_backward(
    src: &[usize],
    story: &[usize],
    params: &Seq2SeqParams,
    grads: &mut Seq2SeqGrads,
    smoothing: f64,
    drop: &mut DropMode,
) -> Result<PairResult> {
    let d = params.d_model;
    let enc = encode_forward(src, params, drop)?;
    let mut dec_in = Vec::with_capacity(story.len() + 1);
    dec_in.push(crate::corpus::BOS);
    dec_in.extend_from_slice(story);
    let dec = decode_forward(&dec_in, &enc.out, params, drop)?;
    let logits = output_logits(&dec.out, params);

    let mut loss = 0.0;
    let mut hits = 0usize;
    let mut dlogits = Mat::zeros(dec_in.len(), params.vocab_size());
    for t in 0..dec_in.len() {
        let target = if t < story.len() { story[t] } else { crate::corpus::EOS };
        let (l, dl) = smoothed_ce(logits.row(t), target, smoothing);
        loss += l;
        if crate::linalg::argmax(logits.row(t)) == target {
            hits += 1;
        }
        dlogits.row_mut(t).copy_from_slice(&dl);
    }

    // tied output projection: logits = DecOut·Embᵀ
    let d_dec_out = dlogits.matmul(&params.embedding);
    grads.embedding.add_assign(&dlogits.transpose().matmul(&dec.out));

    // decoder stack backward
    let mut dy = ln_backward(&d_dec_out, &params.dec_ln, &mut grads.dec_ln, &dec.final_ln);
    let mut d_enc_out = Mat::zeros(enc.out.rows, d);
    for (li, layer) in params.decoder.iter().enumerate().rev() {
        let cache = &dec.layers[li];
        let glayer = &mut grads.decoder[li];
        // ffn sublayer
        let mut df = dy.clone();
        mask_backward(&mut df, &cache.drop_f);
        let dh3 = ffn_backward(&df, &layer.ffn, &mut glayer.ffn, &cache.ffn);
        dy.add_assign(&ln_backward(&dh3, &layer.ln3, &mut glayer.ln3, &cache.ln3));
        // cross-attention sublayer
        let mut dc = dy.clone();
        mask_backward(&mut dc, &cache.drop_c);
        let (dh2, denc) = mha_backward(
            &dc,
            &layer.cross_attn,
            &mut glayer.cross_attn,
            &cache.cross_attn,
            params.n_heads,
        );
        d_enc_out.add_assign(&denc);
        dy.add_assign(&ln_backward(&dh2, &layer.ln2, &mut glayer.ln2, &cache.ln2));
        // masked self-attention sublayer
        let mut da = dy.clone();
        mask_backward(&mut da, &cache.drop_a);
        let (dxq, dxkv) = mha_backward(
            &da,
            &layer.self_attn,
            &mut glayer.self_attn,
            &cache.self_attn,
            params.n_heads,
        );
        let mut dh1 = dxq;
        dh1.add_assign(&dxkv);
        dy.add_assign(&ln_backward(&dh1, &layer.ln1, &mut glayer.ln1, &cache.ln1));
    }
    mask_backward(&mut dy, &dec.emb_drop);
    let scale = (d as f64).sqrt();
    for (t, &id) in dec_in.iter().enumerate() {
        add_scaled(grads.embedding.row_mut(id), scale, dy.row(t));
    }

    // encoder stack backward
    let mut dx = ln_backward(&d_enc_out, &params.enc_ln, &mut grads.enc_ln, &enc.final_ln);
    for (li, layer) in params.encoder.iter().enumerate().rev() {
        let cache = &enc.layers[li];
        let glayer = &mut grads.encoder[li];
        let mut df = dx.clone();
        mask_backward(&mut df, &cache.drop_f);
        let dh2 = ffn_backward(&df, &layer.ffn, &mut glayer.ffn, &cache.ffn);
        dx.add_assign(&ln_backward(&dh2, &layer.ln2, &mut glayer.ln2, &cache.ln2));
        let mut da = dx.clone();
        mask_backward(&mut da, &cache.drop_a);
        let (dxq, dxkv) =
            mha_backward(&da, &layer.attn, &mut glayer.attn, &cache.attn, params.n_heads);
        let mut dh1 = dxq;
        dh1.add_assign(&dxkv);
        dx.add_assign(&ln_backward(&dh1, &layer.ln1, &mut glayer.ln1, &cache.ln1));
    }
    mask_backward(&mut dx, &enc.emb_drop);
    for (t, &id) in src.iter().enumerate() {
        add_scaled(grads.embedding.row_mut(id), scale, dx.row(t));
    }

    Ok(PairResult { loss, predictions: dec_in.len(), hits })
}
