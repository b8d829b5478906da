//! Sequence classifier: token embeddings mixed with left/right context sums
//! through a tanh layer, mean pooled, followed by tanh layers and a label
//! projection.
//!
//! Each position sees its own embedding plus the summed context embeddings
//! of the tokens before and after it, so co-occurrence and order of a few
//! tokens are expressible without attention.
//!
//! Segment order: `embed [V, d]`, `context [V, d]`, `mix.weight [d, 3d]`,
//! `mix.bias [d]`, then `hidden.{l}.weight [h_l, h_{l-1}]` /
//! `hidden.{l}.bias [h_l]` per layer, then `output.weight [K, h_last]` /
//! `output.bias [K]`.

use crate::data::TokenId;
use crate::params::{ParameterSet, Segment};
use crate::rng::Rng;

use super::ModelConfig;

const EMBED: usize = 0;
const CONTEXT: usize = 1;
const MIX_W: usize = 2;
const MIX_B: usize = 3;
const FIRST_LAYER: usize = 4;

/// Starting the context table away from zero gives every fine-tune the same
/// random interaction features to build on; from zero, shared rules tend to
/// be re-learned in different units by each model.
const CONTEXT_INIT_STD: f64 = 0.3;

pub(super) fn manifest(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let d = cfg.embed_dim;
    let mut m = vec![
        ("embed".to_string(), vec![cfg.vocab_size, d]),
        ("context".to_string(), vec![cfg.vocab_size, d]),
        ("mix.weight".to_string(), vec![d, 3 * d]),
        ("mix.bias".to_string(), vec![d]),
    ];
    let mut fan_in = d;
    for (l, &h) in cfg.hidden_dims.iter().enumerate() {
        m.push((format!("hidden.{l}.weight"), vec![h, fan_in]));
        m.push((format!("hidden.{l}.bias"), vec![h]));
        fan_in = h;
    }
    m.push(("output.weight".to_string(), vec![cfg.num_labels, fan_in]));
    m.push(("output.bias".to_string(), vec![cfg.num_labels]));
    m
}

/// Token embeddings are standard normal, context embeddings small normal,
/// weights scaled by `1/sqrt(fan_in)`, biases zero.
pub(super) fn init(cfg: &ModelConfig, rng: &mut Rng) -> ParameterSet {
    let mut segments = Vec::new();
    for (name, shape) in manifest(cfg) {
        let mut seg = Segment::zeros(name, shape);
        if seg.name == "embed" {
            seg.values.iter_mut().for_each(|v| *v = rng.normal());
        } else if seg.name == "context" {
            seg.values.iter_mut().for_each(|v| *v = CONTEXT_INIT_STD * rng.normal());
        } else if seg.name.ends_with(".weight") {
            let std = 1.0 / (seg.shape[1] as f64).sqrt();
            seg.values.iter_mut().for_each(|v| *v = std * rng.normal());
        }
        segments.push(seg);
    }
    ParameterSet::new(segments).expect("manifest-built segments are consistent")
}

struct Forward {
    /// Per-position `[own | left | right]` inputs of the mixing layer.
    inputs: Vec<Vec<f64>>,
    /// Post-tanh mixing outputs per position.
    mixed: Vec<Vec<f64>>,
    pooled: Vec<f64>,
    /// Post-tanh activations of each hidden layer.
    acts: Vec<Vec<f64>>,
    log_probs: Vec<f64>,
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n_in = x.len();
    b.iter()
        .enumerate()
        .map(|(o, &bias)| {
            let row = &w[o * n_in..(o + 1) * n_in];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

pub(crate) fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

fn row(table: &[f64], t: TokenId, d: usize) -> &[f64] {
    &table[t as usize * d..(t as usize + 1) * d]
}

fn forward(cfg: &ModelConfig, params: &ParameterSet, tokens: &[TokenId]) -> Forward {
    let d = cfg.embed_dim;
    let seg = params.segments();
    let embed = &seg[EMBED].values;
    let context = &seg[CONTEXT].values;
    let n = tokens.len();

    let mut total = vec![0.0; d];
    for &t in tokens {
        for (s, c) in total.iter_mut().zip(row(context, t, d)) {
            *s += c;
        }
    }
    let mut left = vec![0.0; d];
    let mut inputs = Vec::with_capacity(n);
    for &t in tokens {
        let c = row(context, t, d);
        let mut x = Vec::with_capacity(3 * d);
        x.extend_from_slice(row(embed, t, d));
        x.extend_from_slice(&left);
        x.extend((0..d).map(|j| total[j] - left[j] - c[j]));
        inputs.push(x);
        for (l, v) in left.iter_mut().zip(c) {
            *l += v;
        }
    }

    let inv_len = 1.0 / n as f64;
    let mut pooled = vec![0.0; d];
    let mixed: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| {
            let mut z = affine(&seg[MIX_W].values, &seg[MIX_B].values, x);
            z.iter_mut().for_each(|v| *v = v.tanh());
            for (p, v) in pooled.iter_mut().zip(&z) {
                *p += v * inv_len;
            }
            z
        })
        .collect();

    let mut acts: Vec<Vec<f64>> = Vec::with_capacity(cfg.hidden_dims.len());
    for l in 0..cfg.hidden_dims.len() {
        let input = if l == 0 { &pooled } else { &acts[l - 1] };
        let w = &seg[FIRST_LAYER + 2 * l].values;
        let b = &seg[FIRST_LAYER + 2 * l + 1].values;
        let mut z = affine(w, b, input);
        z.iter_mut().for_each(|v| *v = v.tanh());
        acts.push(z);
    }
    let out = FIRST_LAYER + 2 * cfg.hidden_dims.len();
    let logits = affine(&seg[out].values, &seg[out + 1].values, acts.last().expect("one layer"));
    Forward {
        inputs,
        mixed,
        pooled,
        acts,
        log_probs: log_softmax(&logits),
    }
}

pub(super) fn log_probs(cfg: &ModelConfig, params: &ParameterSet, tokens: &[TokenId]) -> Vec<f64> {
    forward(cfg, params, tokens).log_probs
}

/// Accumulates weight and bias gradients for an affine map given `delta`
/// (the gradient w.r.t. its output) and returns the gradient w.r.t. `input`.
fn affine_backward(w: &[f64], input: &[f64], delta: &[f64], gw: &mut [f64], gb: &mut [f64]) -> Vec<f64> {
    let n_in = input.len();
    let mut d_input = vec![0.0; n_in];
    for (o, &dz) in delta.iter().enumerate() {
        if dz == 0.0 {
            continue;
        }
        gb[o] += dz;
        let grow = &mut gw[o * n_in..(o + 1) * n_in];
        for (g, x) in grow.iter_mut().zip(input) {
            *g += dz * x;
        }
        let wrow = &w[o * n_in..(o + 1) * n_in];
        for (di, wv) in d_input.iter_mut().zip(wrow) {
            *di += dz * wv;
        }
    }
    d_input
}

fn pair_mut(segs: &mut [Segment], w: usize) -> (&mut [f64], &mut [f64]) {
    let (a, b) = segs.split_at_mut(w + 1);
    (&mut a[w].values, &mut b[0].values)
}

pub(super) fn accumulate_grad(
    cfg: &ModelConfig,
    params: &ParameterSet,
    tokens: &[TokenId],
    label: usize,
    scale: f64,
    grad: &mut ParameterSet,
) -> f64 {
    let fwd = forward(cfg, params, tokens);
    let seg = params.segments();
    let n_layers = cfg.hidden_dims.len();
    let out = FIRST_LAYER + 2 * n_layers;

    // d log p(label) / d logits = onehot(label) - softmax
    let mut delta: Vec<f64> = fwd
        .log_probs
        .iter()
        .enumerate()
        .map(|(k, lp)| scale * (f64::from(u8::from(k == label)) - lp.exp()))
        .collect();

    let gseg = grad.segments_mut();
    let mut w_index = out;
    for l in (0..=n_layers).rev() {
        let input: &[f64] = if l == 0 { &fwd.pooled } else { &fwd.acts[l - 1] };
        let (gw, gb) = pair_mut(gseg, w_index);
        let mut d_input = affine_backward(&seg[w_index].values, input, &delta, gw, gb);
        if l > 0 {
            for (di, a) in d_input.iter_mut().zip(input) {
                *di *= 1.0 - a * a;
            }
            w_index -= 2;
        }
        delta = d_input;
    }

    // delta is now d/d pooled
    let d = cfg.embed_dim;
    let n = tokens.len();
    let inv_len = 1.0 / n as f64;
    let mut d_left = vec![0.0; n * d];
    let mut d_right = vec![0.0; n * d];
    for (i, (x, z)) in fwd.inputs.iter().zip(&fwd.mixed).enumerate() {
        let da: Vec<f64> = z
            .iter()
            .zip(&delta)
            .map(|(zv, dp)| dp * inv_len * (1.0 - zv * zv))
            .collect();
        let (gw, gb) = pair_mut(gseg, MIX_W);
        let dx = affine_backward(&seg[MIX_W].values, x, &da, gw, gb);
        let t = tokens[i] as usize;
        for (g, v) in gseg[EMBED].values[t * d..(t + 1) * d].iter_mut().zip(&dx[..d]) {
            *g += v;
        }
        d_left[i * d..(i + 1) * d].copy_from_slice(&dx[d..2 * d]);
        d_right[i * d..(i + 1) * d].copy_from_slice(&dx[2 * d..]);
    }
    // token j feeds the left sum of every later position and the right sum
    // of every earlier one
    let ctx = &mut gseg[CONTEXT].values;
    let mut acc = vec![0.0; d];
    for j in (0..n).rev() {
        let t = tokens[j] as usize;
        for (g, v) in ctx[t * d..(t + 1) * d].iter_mut().zip(&acc) {
            *g += v;
        }
        for (a, v) in acc.iter_mut().zip(&d_left[j * d..(j + 1) * d]) {
            *a += v;
        }
    }
    acc.fill(0.0);
    for j in 0..n {
        let t = tokens[j] as usize;
        for (g, v) in ctx[t * d..(t + 1) * d].iter_mut().zip(&acc) {
            *g += v;
        }
        for (a, v) in acc.iter_mut().zip(&d_right[j * d..(j + 1) * d]) {
            *a += v;
        }
    }
    fwd.log_probs[label]
}
