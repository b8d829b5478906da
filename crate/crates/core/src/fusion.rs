//! Weight-space arithmetic over aligned parameter sets: convex fusion,
//! pair interpolation, triplet simplex grids and distance-matched random
//! models.

use std::borrow::Borrow;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterSet;
use crate::rng::Rng;

/// Tolerance on the sum of fusion weights.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

/// Convex combination weights: non-negative, summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct FusionWeights {
    alphas: Vec<f64>,
}

impl FusionWeights {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::InvalidWeights("no weights".into()));
        }
        if let Some(a) = alphas.iter().find(|a| !a.is_finite() || **a < 0.0) {
            return Err(Error::InvalidWeights(format!("weight {a} is negative or not finite")));
        }
        let sum: f64 = alphas.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::InvalidWeights(format!("weights sum to {sum}, not 1")));
        }
        Ok(Self { alphas })
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0 / n as f64; n])
    }

    /// Point `k` of a `steps`-point sweep from the first to the second model.
    pub fn pair_step(k: usize, steps: usize) -> Result<Self> {
        if steps < 2 || k >= steps {
            return Err(Error::InvalidWeights(format!("step {k} of {steps}")));
        }
        let last = (steps - 1) as f64;
        Self::new(vec![(steps - 1 - k) as f64 / last, k as f64 / last])
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    pub fn len(&self) -> usize {
        self.alphas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alphas.is_empty()
    }
}

impl TryFrom<Vec<f64>> for FusionWeights {
    type Error = Error;

    fn try_from(alphas: Vec<f64>) -> Result<Self> {
        Self::new(alphas)
    }
}

impl From<FusionWeights> for Vec<f64> {
    fn from(w: FusionWeights) -> Self {
        w.alphas
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub coordinates: Vec<f64>,
    pub params: ParameterSet,
}

/// `Σ α_i θ_i` coordinate-wise. Zero-weight models are skipped and the sum
/// starts from the first weighted term, so a one-hot weight vector returns
/// that model bit for bit.
pub fn fuse<P: Borrow<ParameterSet>>(models: &[P], w: &FusionWeights) -> Result<ParameterSet> {
    if models.len() != w.len() {
        return Err(Error::InvalidWeights(format!(
            "{} weights for {} models",
            w.len(),
            models.len()
        )));
    }
    let first = models[0].borrow();
    for m in &models[1..] {
        first.ensure_aligned(m.borrow())?;
    }
    let mut terms = models
        .iter()
        .zip(w.alphas())
        .filter(|(_, &a)| a != 0.0)
        .map(|(m, &a)| (m.borrow(), a));
    let (m0, a0) = terms.next().expect("weights sum to one");
    let mut out = m0.clone();
    out.values_mut().for_each(|v| *v *= a0);
    for (m, a) in terms {
        for (o, &x) in out.values_mut().zip(m.values()) {
            *o += a * x;
        }
    }
    Ok(out)
}

/// `steps` evenly spaced points from `a` (first) to `b` (last).
pub fn interpolate_pair(a: &ParameterSet, b: &ParameterSet, steps: usize) -> Result<Vec<SweepPoint>> {
    if steps < 2 {
        return Err(Error::InvalidConfig(format!("interpolation needs at least 2 steps, got {steps}")));
    }
    a.ensure_aligned(b)?;
    (0..steps)
        .map(|k| {
            let w = FusionWeights::pair_step(k, steps)?;
            Ok(SweepPoint {
                params: fuse(&[a, b], &w)?,
                coordinates: w.into(),
            })
        })
        .collect()
}

/// Barycentric coordinates `(i, j, k) / resolution` for all `i + j + k =
/// resolution`, starting at the first corner.
pub fn simplex_coordinates(resolution: usize) -> Vec<Vec<f64>> {
    let r = resolution as f64;
    let mut out = Vec::with_capacity((resolution + 1) * (resolution + 2) / 2);
    for i in (0..=resolution).rev() {
        for j in (0..=resolution - i).rev() {
            let k = resolution - i - j;
            out.push(vec![i as f64 / r, j as f64 / r, k as f64 / r]);
        }
    }
    out
}

pub fn simplex_grid(models: [&ParameterSet; 3], resolution: usize) -> Result<Vec<SweepPoint>> {
    if resolution == 0 {
        return Err(Error::InvalidConfig("simplex resolution must be at least 1".into()));
    }
    models[0].ensure_aligned(models[1])?;
    models[0].ensure_aligned(models[2])?;
    simplex_coordinates(resolution)
        .into_iter()
        .map(|c| {
            let w = FusionWeights::new(c)?;
            Ok(SweepPoint {
                params: fuse(&models, &w)?,
                coordinates: w.into(),
            })
        })
        .collect()
}

/// How distances are measured for [`matched_random_with`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Granularity {
    /// One distance and one random direction per named segment.
    #[default]
    PerSegment,
    /// One distance and direction for the whole flattened vector.
    Whole,
}

const MAX_DRAWS: usize = 100;

fn unit_direction(len: usize, rng: &mut Rng) -> Result<Vec<f64>> {
    for _ in 0..MAX_DRAWS {
        let v: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 && norm.is_finite() {
            return Ok(v.into_iter().map(|x| x / norm).collect());
        }
    }
    Err(Error::DegenerateDraw(MAX_DRAWS))
}

/// A random model at the mean distance of `references` from `base`, per
/// segment.
pub fn matched_random(base: &ParameterSet, references: &[ParameterSet], rng: &mut Rng) -> Result<ParameterSet> {
    matched_random_with(base, references, rng, Granularity::PerSegment)
}

pub fn matched_random_with(
    base: &ParameterSet,
    references: &[ParameterSet],
    rng: &mut Rng,
    granularity: Granularity,
) -> Result<ParameterSet> {
    if references.is_empty() {
        return Err(Error::Empty("reference models".into()));
    }
    for r in references {
        base.ensure_aligned(r)?;
    }
    let n = references.len() as f64;
    let mut out = base.clone();
    match granularity {
        Granularity::PerSegment => {
            let mut mean = vec![0.0; base.segments().len()];
            for r in references {
                for (m, d) in mean.iter_mut().zip(r.segment_distances(base)?) {
                    *m += d / n;
                }
            }
            for (seg, d) in out.segments_mut().iter_mut().zip(mean) {
                if d == 0.0 {
                    continue;
                }
                let dir = unit_direction(seg.values.len(), rng)?;
                for (v, u) in seg.values.iter_mut().zip(dir) {
                    *v += d * u;
                }
            }
        }
        Granularity::Whole => {
            let mut d = 0.0;
            for r in references {
                d += r.distance(base)? / n;
            }
            if d > 0.0 {
                let dir = unit_direction(base.total_len(), rng)?;
                for (v, u) in out.values_mut().zip(dir) {
                    *v += d * u;
                }
            }
        }
    }
    Ok(out)
}
