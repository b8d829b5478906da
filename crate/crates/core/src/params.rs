//! Named parameter segments with a flat-vector view.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl Segment {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            values: vec![0.0; len],
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// The parameters of one model: an ordered list of named, shaped segments.
///
/// Two sets are *aligned* when their segment names and shapes agree in order;
/// every binary operation requires alignment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterSet {
    segments: Vec<Segment>,
}

impl ParameterSet {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        for s in &segments {
            let expected: usize = s.shape.iter().product();
            if expected != s.values.len() {
                return Err(Error::Misaligned(format!(
                    "segment `{}` has shape {:?} but {} values",
                    s.name,
                    s.shape,
                    s.values.len()
                )));
            }
            if let Some(i) = s.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(format!(
                    "segment `{}` holds a non-finite value at index {i}",
                    s.name
                )));
            }
        }
        Ok(Self { segments })
    }

    /// All-zero set with the given manifest.
    pub fn zeros(manifest: &[(String, Vec<usize>)]) -> Self {
        Self {
            segments: manifest
                .iter()
                .map(|(n, s)| Segment::zeros(n.clone(), s.clone()))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            segments: self
                .segments
                .iter()
                .map(|s| Segment::zeros(s.name.clone(), s.shape.clone()))
                .collect(),
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segments_mut(&mut self) -> &mut [Segment] {
        &mut self.segments
    }

    pub fn segment(&self, name: &str) -> Option<&Segment> {
        self.segments.iter().find(|s| s.name == name)
    }

    pub fn manifest(&self) -> Vec<(String, Vec<usize>)> {
        self.segments
            .iter()
            .map(|s| (s.name.clone(), s.shape.clone()))
            .collect()
    }

    pub fn total_len(&self) -> usize {
        self.segments.iter().map(Segment::len).sum()
    }

    pub fn values(&self) -> impl Iterator<Item = &f64> + '_ {
        self.segments.iter().flat_map(|s| s.values.iter())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.segments.iter_mut().flat_map(|s| s.values.iter_mut())
    }

    pub fn flat(&self) -> Vec<f64> {
        self.values().copied().collect()
    }

    /// Rebuilds a set with this set's manifest from a flat vector.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.total_len() {
            return Err(Error::Misaligned(format!(
                "flat vector has {} values, manifest needs {}",
                flat.len(),
                self.total_len()
            )));
        }
        let mut out = self.clone();
        for (dst, src) in out.values_mut().zip(flat) {
            *dst = *src;
        }
        Ok(out)
    }

    pub fn is_aligned(&self, other: &ParameterSet) -> bool {
        self.segments.len() == other.segments.len()
            && self
                .segments
                .iter()
                .zip(&other.segments)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    pub fn ensure_aligned(&self, other: &ParameterSet) -> Result<()> {
        if self.segments.len() != other.segments.len() {
            return Err(Error::Misaligned(format!(
                "{} segments vs {}",
                self.segments.len(),
                other.segments.len()
            )));
        }
        for (a, b) in self.segments.iter().zip(&other.segments) {
            if a.name != b.name || a.shape != b.shape {
                return Err(Error::Misaligned(format!(
                    "`{}` {:?} vs `{}` {:?}",
                    a.name, a.shape, b.name, b.shape
                )));
            }
        }
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: f64, other: &ParameterSet) -> Result<()> {
        self.ensure_aligned(other)?;
        for (x, y) in self.values_mut().zip(other.values()) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for x in self.values_mut() {
            *x *= a;
        }
    }

    pub fn fill(&mut self, v: f64) {
        for x in self.values_mut() {
            *x = v;
        }
    }

    pub fn sum(&self) -> f64 {
        self.values().sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Euclidean distance between aligned sets.
    pub fn distance(&self, other: &ParameterSet) -> Result<f64> {
        self.ensure_aligned(other)?;
        Ok(self
            .values()
            .zip(other.values())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt())
    }

    /// Per-segment Euclidean distances between aligned sets.
    pub fn segment_distances(&self, other: &ParameterSet) -> Result<Vec<f64>> {
        self.ensure_aligned(other)?;
        Ok(self
            .segments
            .iter()
            .zip(&other.segments)
            .map(|(a, b)| {
                a.values
                    .iter()
                    .zip(&b.values)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(values: &[(&str, Vec<usize>, Vec<f64>)]) -> ParameterSet {
        ParameterSet::new(
            values
                .iter()
                .map(|(n, s, v)| Segment {
                    name: n.to_string(),
                    shape: s.clone(),
                    values: v.clone(),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn flat_view_length_is_sum_of_segments() {
        let p = set(&[
            ("a", vec![2, 3], vec![0.0; 6]),
            ("b", vec![4], vec![1.0; 4]),
        ]);
        assert_eq!(p.total_len(), 10);
        assert_eq!(p.flat().len(), 10);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let err = ParameterSet::new(vec![Segment {
            name: "a".into(),
            shape: vec![2, 2],
            values: vec![0.0; 3],
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn non_finite_rejected() {
        let err = ParameterSet::new(vec![Segment {
            name: "a".into(),
            shape: vec![1],
            values: vec![f64::NAN],
        }]);
        assert!(err.is_err());
    }

    #[test]
    fn alignment_checks_names_and_shapes() {
        let a = set(&[("w", vec![2], vec![1.0, 2.0])]);
        let b = set(&[("w", vec![2], vec![3.0, 4.0])]);
        let c = set(&[("v", vec![2], vec![3.0, 4.0])]);
        let d = set(&[("w", vec![1, 2], vec![3.0, 4.0])]);
        assert!(a.is_aligned(&b));
        assert!(!a.is_aligned(&c));
        assert!(!a.is_aligned(&d));
        assert!(a.clone().axpy(1.0, &c).is_err());
    }

    #[test]
    fn with_flat_round_trips() {
        let a = set(&[("w", vec![2], vec![1.0, 2.0]), ("b", vec![1], vec![3.0])]);
        let b = a.with_flat(&a.flat()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn segment_distances() {
        let a = set(&[("w", vec![2], vec![0.0, 0.0]), ("b", vec![1], vec![1.0])]);
        let b = set(&[("w", vec![2], vec![3.0, 4.0]), ("b", vec![1], vec![1.0])]);
        assert_eq!(a.segment_distances(&b).unwrap(), vec![5.0, 0.0]);
        assert_eq!(a.distance(&b).unwrap(), 5.0);
    }
}
