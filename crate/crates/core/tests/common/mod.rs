//! Independent oracles and generators shared by the integration tests and
//! the acceptance harness.
#![allow(dead_code)]

use std::collections::BTreeMap;

use fuselab_core::fisher::FisherDiagonal;
use fuselab_core::fusion::{fuse, FusionWeights};
use fuselab_core::metrics::Gap;
use fuselab_core::{ParameterSet, Rng, Segment};
use nalgebra::{DMatrix, SymmetricEigen};
use num_rational::Ratio;

pub const FUSION_TOL: f64 = 1e-9;

/// Random parameter sets sharing one randomly drawn manifest.
pub fn random_aligned(rng: &mut Rng, n: usize) -> Vec<ParameterSet> {
    let n_segments = rng.range_inclusive(1, 4);
    let shapes: Vec<Vec<usize>> = (0..n_segments)
        .map(|_| {
            if rng.below(2) == 0 {
                vec![rng.range_inclusive(1, 8)]
            } else {
                vec![rng.range_inclusive(1, 5), rng.range_inclusive(1, 5)]
            }
        })
        .collect();
    (0..n)
        .map(|_| {
            let segs = shapes
                .iter()
                .enumerate()
                .map(|(i, shape)| Segment {
                    name: format!("s{i}"),
                    shape: shape.clone(),
                    values: (0..shape.iter().product::<usize>()).map(|_| 10.0 * rng.normal()).collect(),
                })
                .collect();
            ParameterSet::new(segs).unwrap()
        })
        .collect()
}

/// Random point of the probability simplex, with some exact zeros.
pub fn random_weights(rng: &mut Rng, n: usize) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n)
        .map(|_| if rng.below(5) == 0 { 0.0 } else { rng.uniform() + 1e-3 })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.below(n)] = 1.0;
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= s);
    // push the rounding residue into the largest weight
    let residue = 1.0 - w.iter().sum::<f64>();
    let imax = (0..n).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
    w[imax] += residue;
    w
}

fn max_abs_diff(a: &ParameterSet, b: &ParameterSet) -> f64 {
    a.values().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn close(what: &str, a: &ParameterSet, b: &ParameterSet) -> Result<(), String> {
    if !a.is_aligned(b) {
        return Err(format!("{what}: manifests differ"));
    }
    let d = max_abs_diff(a, b);
    if d > FUSION_TOL {
        return Err(format!("{what}: max deviation {d:e}"));
    }
    Ok(())
}

/// Identity-weight, scalar-average, permutation and nested-fusion checks
/// for `models` at weights `alphas`, permuted by `perm`.
pub fn check_fusion_algebra(models: &[ParameterSet], alphas: &[f64], perm: &[usize]) -> Result<(), String> {
    let n = models.len();
    let w = FusionWeights::new(alphas.to_vec()).map_err(|e| e.to_string())?;
    let fused = fuse(models, &w).map_err(|e| e.to_string())?;

    for i in 0..n {
        let mut one_hot = vec![0.0; n];
        one_hot[i] = 1.0;
        let f = fuse(models, &FusionWeights::new(one_hot).unwrap()).unwrap();
        if f != models[i] {
            return Err(format!("identity weight {i} did not return the model"));
        }
    }

    let copies = vec![models[0].clone(); n];
    close("average of copies", &fuse(&copies, &w).unwrap(), &models[0])?;
    let mut mean = models[0].zeros_like();
    for m in models {
        for (a, v) in mean.values_mut().zip(m.values()) {
            *a += v / n as f64;
        }
    }
    close("uniform average", &fuse(models, &FusionWeights::uniform(n).unwrap()).unwrap(), &mean)?;

    let pm: Vec<&ParameterSet> = perm.iter().map(|&i| &models[i]).collect();
    let pw = FusionWeights::new(perm.iter().map(|&i| alphas[i]).collect()).unwrap();
    close("permutation", &fuse(&pm, &pw).unwrap(), &fused)?;

    if n >= 3 {
        // fuse the first two, then fuse the result with the rest
        let head = alphas[0] + alphas[1];
        if head > 0.0 {
            let inner_w = FusionWeights::new(vec![alphas[0] / head, 1.0 - alphas[0] / head]).unwrap();
            let inner = fuse(&models[..2], &inner_w).unwrap();
            let mut outer_models = vec![inner];
            outer_models.extend(models[2..].iter().cloned());
            let mut outer_alphas = vec![head];
            outer_alphas.extend(&alphas[2..]);
            let outer = fuse(&outer_models, &FusionWeights::new(outer_alphas).unwrap()).unwrap();
            close("nested fusion", &outer, &fused)?;
        }
    }
    Ok(())
}

fn ratio_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Demographic parity by enumerating the conditional frequencies of every
/// predicted label, in exact rational arithmetic.
pub fn dp_oracle(preds: &[usize], protected: &[u8]) -> f64 {
    let labels: std::collections::BTreeSet<usize> = preds.iter().copied().collect();
    let mut total = Ratio::from_integer(0i128);
    for y in labels {
        let freq = |g: bool| {
            let members: Vec<usize> = (0..preds.len()).filter(|&i| (protected[i] != 0) == g).collect();
            let hits = members.iter().filter(|&&i| preds[i] == y).count();
            Ratio::new(hits as i128, members.len() as i128)
        };
        let d = freq(true) - freq(false);
        total += if d < Ratio::from_integer(0) { -d } else { d };
    }
    ratio_f64(total)
}

pub fn tpr_oracle(preds: &[usize], truth: &[usize], protected: &[u8]) -> BTreeMap<usize, Option<f64>> {
    let labels: std::collections::BTreeSet<usize> = truth.iter().copied().collect();
    labels
        .into_iter()
        .map(|y| {
            let tpr = |g: bool| {
                let members: Vec<usize> = (0..preds.len())
                    .filter(|&i| truth[i] == y && (protected[i] != 0) == g)
                    .collect();
                if members.is_empty() {
                    return None;
                }
                let hits = members.iter().filter(|&&i| preds[i] == y).count();
                Some(Ratio::new(hits as i128, members.len() as i128))
            };
            (y, tpr(true).zip(tpr(false)).map(|(a, b)| ratio_f64(a - b)))
        })
        .collect()
}

pub fn gap_rms_oracle(gaps: &BTreeMap<usize, Gap>) -> f64 {
    let v: Vec<f64> = gaps.values().map(|g| g.value().unwrap()).collect();
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

/// A random instance of size 4–50 with both groups present.
pub fn random_fairness_instance(rng: &mut Rng) -> (Vec<usize>, Vec<usize>, Vec<u8>) {
    let n = rng.range_inclusive(4, 50);
    let k = rng.range_inclusive(2, 4);
    let preds = (0..n).map(|_| rng.below(k)).collect();
    let truth = (0..n).map(|_| rng.below(k)).collect();
    let mut protected: Vec<u8> = (0..n).map(|_| rng.below(2) as u8).collect();
    protected[0] = 0;
    protected[1] = 1;
    rng.shuffle(&mut protected);
    (preds, truth, protected)
}

/// A normalized diagonal of `len` entries; some are exactly zero unless
/// `positive`.
pub fn random_diagonal(rng: &mut Rng, len: usize, positive: bool) -> FisherDiagonal {
    let mut v: Vec<f64> = (0..len)
        .map(|_| match (positive, rng.below(4)) {
            (true, _) => 0.05 + rng.uniform(),
            (false, 0) => 0.0,
            (false, _) => rng.uniform().powi(3),
        })
        .collect();
    if v.iter().all(|&x| x == 0.0) {
        v[0] = 1.0;
    }
    let raw = FisherDiagonal {
        values: ParameterSet::new(vec![Segment {
            name: "w".into(),
            shape: vec![len],
            values: v,
        }])
        .unwrap(),
        normalized: false,
        probe_id: "random".into(),
        n_examples: 1,
    };
    fuselab_core::fisher::normalize_unit_trace(&raw).unwrap()
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// Squared Fréchet distance between zero-mean Gaussians with covariances
/// `Q·diag(a)·Qᵀ` and `Q·diag(b)·Qᵀ`, evaluated with dense matrix square
/// roots: `½ tr(Σ1 + Σ2 − 2 (Σ1^½ Σ2 Σ1^½)^½)`. `Q` is a random rotation
/// when `rotate` is given, else the identity. Rotating zero eigenvalues
/// leaves ~1e-17 residues whose square roots swamp a 1e-10 comparison, so
/// rotate only diagonals bounded away from zero.
pub fn dense_frechet_sq(a: &[f64], b: &[f64], rotate: Option<&mut Rng>) -> f64 {
    let n = a.len();
    let q = match rotate {
        Some(rng) => DMatrix::from_fn(n, n, |_, _| rng.normal()).qr().q(),
        None => DMatrix::identity(n, n),
    };
    let s1 = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(a)) * q.transpose();
    let s2 = &q * DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(b)) * q.transpose();
    let r1 = psd_sqrt(&s1);
    let cross = psd_sqrt(&(&r1 * &s2 * &r1));
    0.5 * (s1.trace() + s2.trace() - 2.0 * cross.trace())
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

/// Compares a `k`-sample masked energy of `x` with the exact mean over all
/// subsets of the sampled size; the sample mean must lie within 3σ/√k.
pub fn check_mlm_enumeration(
    model: &fuselab_core::Model,
    params: &ParameterSet,
    x: &[fuselab_core::data::TokenId],
    opts: &fuselab_core::memorization::EnergyOptions,
    rng: &mut Rng,
) -> Result<(), String> {
    use fuselab_core::memorization::energy_mlm;
    use fuselab_core::nn::Target;

    let k = opts.k;
    let sampled = energy_mlm(model, params, x, opts, rng).map_err(|e| e.to_string())?;
    let l = sampled.num_positions;
    let exact: Vec<f64> = subsets(x.len(), l)
        .iter()
        .map(|s| -model.target_log_prob(params, x, Target::Masked(s)).unwrap())
        .collect();
    let mean = exact.iter().sum::<f64>() / exact.len() as f64;
    let var = exact.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / exact.len() as f64;
    let sigma = (var / k as f64).sqrt();
    let dev = (sampled.value - mean).abs();
    if dev > 3.0 * sigma + 1e-12 {
        return Err(format!("T={} l={l}: sampled {} vs exact {mean} (σ {sigma:e})", x.len(), sampled.value));
    }
    Ok(())
}
