//! Classification corpora where a protected attribute is correlated with
//! the label at a controlled rate.

use serde::{Deserialize, Serialize};

use super::text::TextSpec;
use super::shortcut::insert_in_order;
use super::{LabeledExample, TokenId};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BiasCorpusSpec {
    /// Name of the predicted attribute; recorded only, the label is the sentiment.
    #[serde(default = "default_target")]
    pub target_attr: String,
    pub protected_attr: String,
    /// Share of label-1 examples with `protected_attr = 1` (and of label-0
    /// examples with `protected_attr = 0`).
    #[serde(default = "default_skew")]
    pub skew: f64,
    #[serde(default)]
    pub balanced_attr: Option<String>,
    pub size: usize,
    pub seed: u64,
    #[serde(default)]
    pub text: TextSpec,
}

fn default_target() -> String {
    "sentiment".into()
}

fn default_skew() -> f64 {
    0.8
}

impl BiasCorpusSpec {
    pub fn new(protected_attr: impl Into<String>, skew: f64, size: usize, seed: u64) -> Self {
        Self {
            target_attr: default_target(),
            protected_attr: protected_attr.into(),
            skew,
            balanced_attr: None,
            size,
            seed,
            text: TextSpec::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.skew) {
            return Err(Error::InvalidConfig(format!("skew {} outside [0.5, 1]", self.skew)));
        }
        let mut attrs = vec![&self.protected_attr];
        attrs.extend(self.balanced_attr.as_ref());
        for a in attrs {
            if self.text.marker(a, 0).is_none() {
                return Err(Error::InvalidConfig(format!("attribute `{a}` has no marker tokens")));
            }
        }
        if self.balanced_attr.as_ref() == Some(&self.protected_attr) {
            return Err(Error::InvalidConfig("balanced and protected attribute coincide".into()));
        }
        Ok(())
    }
}

fn marked(tokens: &[TokenId], marker: TokenId, rng: &mut Rng) -> Vec<TokenId> {
    insert_in_order(tokens, &[marker], rng)
}

/// Builds a corpus with exact per-cell counts: `round(skew * n1)` of the
/// label-1 examples carry `protected = 1`, `round((1 - skew) * n0)` of the
/// label-0 examples do. A balanced attribute is split in half within each
/// (label, protected) cell. Each attribute value is also written into the
/// text as a marker token.
pub fn make_bias_corpus(spec: &BiasCorpusSpec) -> Result<Vec<LabeledExample>> {
    spec.validate()?;
    if spec.size < 2 {
        return Err(Error::CorpusTooSmall(format!("bias corpus of size {}", spec.size)));
    }
    let mut rng = Rng::new(spec.seed, 0xB1A5);
    let n1 = spec.size / 2;
    let n0 = spec.size - n1;
    let p1 = (spec.skew * n1 as f64).round() as usize;
    let p0 = ((1.0 - spec.skew) * n0 as f64).round() as usize;
    // (label, protected, count)
    let cells = [(1, 1u8, p1), (1, 0u8, n1 - p1), (0, 1u8, p0), (0, 0u8, n0 - p0)];
    if spec.balanced_attr.is_some() {
        for &(_, _, c) in &cells {
            if c % 2 == 1 && 0.5 / c as f64 > 0.02 {
                return Err(Error::CorpusTooSmall(format!(
                    "cell of {c} examples cannot balance the secondary attribute"
                )));
            }
        }
    }

    let mut out = Vec::with_capacity(spec.size);
    for (label, g, count) in cells {
        let mut balanced: Vec<u8> = (0..count).map(|i| u8::from(i < count / 2)).collect();
        rng.shuffle(&mut balanced);
        for b in balanced {
            let text = spec.text.sentence(label, &mut rng);
            let marker = spec.text.marker(&spec.protected_attr, g).expect("validated");
            let mut tokens = marked(&text, marker, &mut rng);
            let mut ex = LabeledExample::new(Vec::new(), label);
            ex.attributes.insert(spec.protected_attr.clone(), g);
            if let Some(attr) = &spec.balanced_attr {
                let m = spec.text.marker(attr, b).expect("validated");
                tokens = marked(&tokens, m, &mut rng);
                ex.attributes.insert(attr.clone(), b);
            }
            ex.tokens = tokens;
            out.push(ex);
        }
    }
    rng.shuffle(&mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn count(c: &[LabeledExample], label: usize, attr: &str, v: u8) -> usize {
        c.iter().filter(|e| e.label == label && e.attribute(attr) == Some(v)).count()
    }

    #[test]
    fn skew_point_eight_counts() {
        let c = make_bias_corpus(&BiasCorpusSpec::new("gender", 0.8, 1000, 1)).unwrap();
        assert_eq!(c.len(), 1000);
        assert_eq!(c.iter().filter(|e| e.label == 1).count(), 500);
        assert_eq!(count(&c, 1, "gender", 1), 400);
        assert_eq!(count(&c, 0, "gender", 1), 100);
    }

    #[test]
    fn full_skew_determines_attribute() {
        let c = make_bias_corpus(&BiasCorpusSpec::new("age", 1.0, 200, 2)).unwrap();
        assert!(c.iter().all(|e| e.attribute("age") == Some(e.label as u8)));
    }

    #[test]
    fn half_skew_is_independent() {
        let c = make_bias_corpus(&BiasCorpusSpec::new("age", 0.5, 400, 2)).unwrap();
        assert_eq!(count(&c, 1, "age", 1), 100);
        assert_eq!(count(&c, 0, "age", 1), 100);
    }

    #[test]
    fn markers_match_attributes() {
        let mut spec = BiasCorpusSpec::new("gender", 0.8, 400, 3);
        spec.balanced_attr = Some("age".into());
        let c = make_bias_corpus(&spec).unwrap();
        for e in &c {
            for attr in ["gender", "age"] {
                let v = e.attribute(attr).unwrap();
                let m = spec.text.marker(attr, v).unwrap();
                let other = spec.text.marker(attr, 1 - v).unwrap();
                assert_eq!(e.tokens.iter().filter(|&&t| t == m).count(), 1);
                assert!(!e.tokens.contains(&other));
            }
        }
        for label in 0..2 {
            for g in 0..2u8 {
                let cell: Vec<_> = c
                    .iter()
                    .filter(|e| e.label == label && e.attribute("gender") == Some(g))
                    .collect();
                let ones = cell.iter().filter(|e| e.attribute("age") == Some(1)).count();
                assert!((ones as f64 / cell.len() as f64 - 0.5).abs() <= 0.02);
            }
        }
    }

    #[test]
    fn rejects_bad_specs() {
        assert!(make_bias_corpus(&BiasCorpusSpec::new("gender", 0.3, 100, 0)).is_err());
        assert!(make_bias_corpus(&BiasCorpusSpec::new("race", 0.8, 100, 0)).is_err());
        assert!(make_bias_corpus(&BiasCorpusSpec::new("gender", 0.8, 1, 0)).is_err());
        let mut s = BiasCorpusSpec::new("gender", 0.8, 30, 0);
        s.balanced_attr = Some("age".into());
        assert!(matches!(make_bias_corpus(&s), Err(Error::CorpusTooSmall(_))));
    }

    #[test]
    fn deterministic() {
        let s = BiasCorpusSpec::new("gender", 0.8, 300, 9);
        assert_eq!(make_bias_corpus(&s).unwrap(), make_bias_corpus(&s).unwrap());
    }
}
