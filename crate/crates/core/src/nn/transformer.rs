//! Small pre-norm transformer shared by the causal and masked language models.
//!
//! Token embedding plus learned positions, `num_blocks` blocks of multi-head
//! self-attention and a tanh feed-forward layer, a final layer norm and an
//! output projection tied to the token embedding. The causal model attends
//! to earlier positions only; the masked model attends everywhere and sees
//! [`MASK_TOKEN`] at queried positions.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};

use crate::data::{TokenId, MASK_TOKEN};
use crate::params::{ParameterSet, Segment};
use crate::rng::Rng;

use super::{Arch, ModelConfig};

const LN_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;
const PER_BLOCK: usize = 12;

// Offsets inside one block's run of segments.
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const LN2_G: usize = 6;
const LN2_B: usize = 7;
const W1: usize = 8;
const B1: usize = 9;
const W2: usize = 10;
const B2: usize = 11;

const TOK: usize = 0;
const POS: usize = 1;

fn block_base(b: usize) -> usize {
    2 + PER_BLOCK * b
}

fn final_base(cfg: &ModelConfig) -> usize {
    block_base(cfg.num_blocks)
}

fn ffn_width(cfg: &ModelConfig) -> usize {
    cfg.hidden_dims[0]
}

pub(super) fn manifest(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let f = ffn_width(cfg);
    let mut m = vec![
        ("tok_embed".to_string(), vec![cfg.vocab_size, d]),
        ("pos_embed".to_string(), vec![cfg.context_len, d]),
    ];
    for b in 0..cfg.num_blocks {
        let p = |n: &str| format!("blocks.{b}.{n}");
        m.push((p("ln1.gain"), vec![d]));
        m.push((p("ln1.bias"), vec![d]));
        m.push((p("attn.wq"), vec![d, d]));
        m.push((p("attn.wk"), vec![d, d]));
        m.push((p("attn.wv"), vec![d, d]));
        m.push((p("attn.wo"), vec![d, d]));
        m.push((p("ln2.gain"), vec![d]));
        m.push((p("ln2.bias"), vec![d]));
        m.push((p("mlp.w1"), vec![d, f]));
        m.push((p("mlp.b1"), vec![f]));
        m.push((p("mlp.w2"), vec![f, d]));
        m.push((p("mlp.b2"), vec![d]));
    }
    m.push(("lnf.gain".to_string(), vec![d]));
    m.push(("lnf.bias".to_string(), vec![d]));
    m.push(("out_bias".to_string(), vec![cfg.vocab_size]));
    m
}

pub(super) fn init(cfg: &ModelConfig, rng: &mut Rng) -> ParameterSet {
    let residual_std = INIT_STD / ((2 * cfg.num_blocks) as f64).sqrt();
    let segments = manifest(cfg)
        .into_iter()
        .map(|(name, shape)| {
            let mut seg = Segment::zeros(name, shape);
            let std = if seg.name.ends_with("gain") {
                seg.values.iter_mut().for_each(|v| *v = 1.0);
                None
            } else if seg.name.ends_with("attn.wo") || seg.name.ends_with("mlp.w2") {
                Some(residual_std)
            } else if seg.shape.len() == 2 {
                Some(INIT_STD)
            } else {
                None
            };
            if let Some(std) = std {
                seg.values.iter_mut().for_each(|v| *v = std * rng.normal());
            }
            seg
        })
        .collect();
    ParameterSet::new(segments).expect("manifest-built segments are consistent")
}

fn m2(p: &ParameterSet, i: usize) -> ArrayView2<'_, f64> {
    let s = &p.segments()[i];
    ArrayView2::from_shape((s.shape[0], s.shape[1]), &s.values).expect("2-d segment")
}

fn v1(p: &ParameterSet, i: usize) -> ArrayView1<'_, f64> {
    ArrayView1::from(&p.segments()[i].values[..])
}

fn m2_mut(g: &mut ParameterSet, i: usize) -> ArrayViewMut2<'_, f64> {
    let s = &mut g.segments_mut()[i];
    ArrayViewMut2::from_shape((s.shape[0], s.shape[1]), &mut s.values).expect("2-d segment")
}

fn v1_mut(g: &mut ParameterSet, i: usize) -> ArrayViewMut1<'_, f64> {
    ArrayViewMut1::from(&mut g.segments_mut()[i].values[..])
}

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

fn layer_norm(x: &Array2<f64>, gain: ArrayView1<f64>, bias: ArrayView1<f64>) -> (Array2<f64>, LnCache) {
    let (t, d) = x.dim();
    let mut xhat = Array2::zeros((t, d));
    let mut rstd = Array1::zeros(t);
    for r in 0..t {
        let row = x.row(r);
        let mean = row.sum() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = rs;
        for c in 0..d {
            xhat[[r, c]] = (row[c] - mean) * rs;
        }
    }
    let y = &xhat * &gain + &bias;
    (y, LnCache { xhat, rstd })
}

/// Returns d/dx and accumulates gain/bias gradients.
fn layer_norm_back(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: ArrayView1<f64>,
    grad: &mut ParameterSet,
    gain_idx: usize,
    bias_idx: usize,
) -> Array2<f64> {
    let (t, d) = dy.dim();
    {
        let mut dg = v1_mut(grad, gain_idx);
        dg += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    {
        let mut db = v1_mut(grad, bias_idx);
        db += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * &gain;
    let mut dx = Array2::zeros((t, d));
    for r in 0..t {
        let g = dxhat.row(r);
        let xh = cache.xhat.row(r);
        let mean_g = g.sum() / d as f64;
        let mean_gx = g.dot(&xh) / d as f64;
        for c in 0..d {
            dx[[r, c]] = cache.rstd[r] * (g[c] - mean_g - xh[c] * mean_gx);
        }
    }
    dx
}

struct BlockCache {
    ln1: LnCache,
    h1: Array2<f64>,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities, one `[T, T]` matrix per head.
    probs: Vec<Array2<f64>>,
    o: Array2<f64>,
    ln2: LnCache,
    h2: Array2<f64>,
    z: Array2<f64>,
}

struct Forward {
    inputs: Vec<TokenId>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    hf: Array2<f64>,
    logits: Array2<f64>,
}

fn softmax_rows_inplace(m: &mut Array2<f64>) {
    for mut row in m.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - mx).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn forward(cfg: &ModelConfig, p: &ParameterSet, tokens: &[TokenId], masked: Option<&[usize]>) -> Forward {
    let t_len = tokens.len();
    let d = cfg.embed_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let causal = cfg.arch == Arch::CausalLm;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();

    let mut inputs = tokens.to_vec();
    if let Some(positions) = masked {
        for &i in positions {
            inputs[i] = MASK_TOKEN;
        }
    }

    let tok = m2(p, TOK);
    let pos = m2(p, POS);
    let mut x = Array2::zeros((t_len, d));
    for (i, &t) in inputs.iter().enumerate() {
        let mut row = x.row_mut(i);
        row += &tok.row(t as usize);
        row += &pos.row(i);
    }

    let mut blocks = Vec::with_capacity(cfg.num_blocks);
    for b in 0..cfg.num_blocks {
        let base = block_base(b);
        let (h1, ln1) = layer_norm(&x, v1(p, base + LN1_G), v1(p, base + LN1_B));
        let q = h1.dot(&m2(p, base + WQ));
        let k = h1.dot(&m2(p, base + WK));
        let v = h1.dot(&m2(p, base + WV));
        let mut o = Array2::zeros((t_len, d));
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let mut scores = q.slice(cols).dot(&k.slice(cols).t()) * inv_sqrt;
            if causal {
                for i in 0..t_len {
                    for j in i + 1..t_len {
                        scores[[i, j]] = f64::NEG_INFINITY;
                    }
                }
            }
            softmax_rows_inplace(&mut scores);
            o.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
            probs.push(scores);
        }
        x = x + o.dot(&m2(p, base + WO));
        let (h2, ln2) = layer_norm(&x, v1(p, base + LN2_G), v1(p, base + LN2_B));
        let mut z = h2.dot(&m2(p, base + W1)) + &v1(p, base + B1);
        z.mapv_inplace(f64::tanh);
        x = x + z.dot(&m2(p, base + W2)) + &v1(p, base + B2);
        blocks.push(BlockCache {
            ln1,
            h1,
            q,
            k,
            v,
            probs,
            o,
            ln2,
            h2,
            z,
        });
    }

    let fb = final_base(cfg);
    let (hf, lnf) = layer_norm(&x, v1(p, fb), v1(p, fb + 1));
    let logits = hf.dot(&tok.t()) + &v1(p, fb + 2);
    Forward {
        inputs,
        blocks,
        lnf,
        hf,
        logits,
    }
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Causal: `[T, V]`, row `t` predicts token `t + 1`. Masked: one row per
/// queried position, in query order.
pub(super) fn log_probs(
    cfg: &ModelConfig,
    p: &ParameterSet,
    tokens: &[TokenId],
    masked: Option<&[usize]>,
) -> Array2<f64> {
    let fwd = forward(cfg, p, tokens, masked);
    let lp = log_softmax_rows(&fwd.logits);
    match masked {
        None => lp,
        Some(positions) => lp.select(Axis(0), positions),
    }
}

/// `(row, target token)` pairs whose log-probabilities make up the target.
fn target_rows(tokens: &[TokenId], masked: Option<&[usize]>) -> Vec<(usize, usize)> {
    match masked {
        None => (1..tokens.len()).map(|t| (t - 1, tokens[t] as usize)).collect(),
        Some(positions) => positions.iter().map(|&i| (i, tokens[i] as usize)).collect(),
    }
}

pub(super) fn accumulate_grad(
    cfg: &ModelConfig,
    p: &ParameterSet,
    tokens: &[TokenId],
    masked: Option<&[usize]>,
    scale: f64,
    grad: &mut ParameterSet,
) -> f64 {
    let fwd = forward(cfg, p, tokens, masked);
    let t_len = tokens.len();
    let d = cfg.embed_dim;
    let heads = cfg.num_heads;
    let dh = d / heads;
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let fb = final_base(cfg);

    let lp = log_softmax_rows(&fwd.logits);
    let mut total = 0.0;
    let mut dlogits = Array2::<f64>::zeros(fwd.logits.dim());
    for (r, y) in target_rows(tokens, masked) {
        total += lp[[r, y]];
        let mut row = dlogits.row_mut(r);
        row.assign(&lp.row(r).mapv(|v| -scale * v.exp()));
        row[y] += scale;
    }

    // tied output projection
    let tok = m2(p, TOK);
    general_mat_mul(1.0, &dlogits.t(), &fwd.hf, 1.0, &mut m2_mut(grad, TOK));
    {
        let mut dob = v1_mut(grad, fb + 2);
        dob += &dlogits.sum_axis(Axis(0));
    }
    let dhf = dlogits.dot(&tok);
    let mut dx = layer_norm_back(&dhf, &fwd.lnf, v1(p, fb), grad, fb, fb + 1);

    for b in (0..cfg.num_blocks).rev() {
        let base = block_base(b);
        let c = &fwd.blocks[b];

        // feed-forward
        general_mat_mul(1.0, &c.z.t(), &dx, 1.0, &mut m2_mut(grad, base + W2));
        {
            let mut db2 = v1_mut(grad, base + B2);
            db2 += &dx.sum_axis(Axis(0));
        }
        let mut du = dx.dot(&m2(p, base + W2).t());
        du.zip_mut_with(&c.z, |g, z| *g *= 1.0 - z * z);
        general_mat_mul(1.0, &c.h2.t(), &du, 1.0, &mut m2_mut(grad, base + W1));
        {
            let mut db1 = v1_mut(grad, base + B1);
            db1 += &du.sum_axis(Axis(0));
        }
        let dh2 = du.dot(&m2(p, base + W1).t());
        dx = dx + layer_norm_back(&dh2, &c.ln2, v1(p, base + LN2_G), grad, base + LN2_G, base + LN2_B);

        // attention
        general_mat_mul(1.0, &c.o.t(), &dx, 1.0, &mut m2_mut(grad, base + WO));
        let d_o = dx.dot(&m2(p, base + WO).t());
        let mut dq = Array2::<f64>::zeros((t_len, d));
        let mut dk = Array2::<f64>::zeros((t_len, d));
        let mut dv = Array2::<f64>::zeros((t_len, d));
        for h in 0..heads {
            let cols = s![.., h * dh..(h + 1) * dh];
            let a = &c.probs[h];
            let do_h = d_o.slice(cols);
            let da = do_h.dot(&c.v.slice(cols).t());
            dv.slice_mut(cols).assign(&a.t().dot(&do_h));
            let mut ds = Array2::<f64>::zeros((t_len, t_len));
            for i in 0..t_len {
                let dot: f64 = (0..t_len).map(|j| da[[i, j]] * a[[i, j]]).sum();
                for j in 0..t_len {
                    ds[[i, j]] = a[[i, j]] * (da[[i, j]] - dot) * inv_sqrt;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&c.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&c.q.slice(cols)));
        }
        general_mat_mul(1.0, &c.h1.t(), &dq, 1.0, &mut m2_mut(grad, base + WQ));
        general_mat_mul(1.0, &c.h1.t(), &dk, 1.0, &mut m2_mut(grad, base + WK));
        general_mat_mul(1.0, &c.h1.t(), &dv, 1.0, &mut m2_mut(grad, base + WV));
        let dh1 = dq.dot(&m2(p, base + WQ).t())
            + dk.dot(&m2(p, base + WK).t())
            + dv.dot(&m2(p, base + WV).t());
        dx = dx + layer_norm_back(&dh1, &c.ln1, v1(p, base + LN1_G), grad, base + LN1_G, base + LN1_B);
    }

    {
        let mut dtok = m2_mut(grad, TOK);
        for (i, &t) in fwd.inputs.iter().enumerate() {
            let mut row = dtok.row_mut(t as usize);
            row += &dx.row(i);
        }
    }
    {
        let mut dpos = m2_mut(grad, POS);
        let mut used = dpos.slice_mut(s![0..t_len, ..]);
        used += &dx;
    }
    total
}
