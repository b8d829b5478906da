//! Token-rule shortcuts and their injection into a labeled corpus.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{LabeledExample, TokenId};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// The seven label rules. Labels are `0`/`1`; `τ0` stands for 0 and `τ1` for 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ShortcutKind {
    /// Single token: the label is the value of the one special token.
    ST,
    /// Ordered pair: `τ0` before `τ1` gives 0, `τ1` before `τ0` gives 1.
    OP,
    /// Token in context: the value of the special token accompanying `τc`.
    TiC,
    /// Two tokens, 0 only when both are `τ0`.
    OR,
    /// Two tokens, 1 only when both are `τ1`.
    AND,
    /// One to five tokens; the more frequent value wins (ties inadmissible).
    MT,
    /// Two tokens; the value of the last one.
    LT,
}

impl ShortcutKind {
    pub const ALL: [ShortcutKind; 7] = [
        ShortcutKind::ST,
        ShortcutKind::OP,
        ShortcutKind::TiC,
        ShortcutKind::OR,
        ShortcutKind::AND,
        ShortcutKind::MT,
        ShortcutKind::LT,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShortcutKind::ST => "ST",
            ShortcutKind::OP => "OP",
            ShortcutKind::TiC => "TiC",
            ShortcutKind::OR => "OR",
            ShortcutKind::AND => "AND",
            ShortcutKind::MT => "MT",
            ShortcutKind::LT => "LT",
        }
    }
}

impl fmt::Display for ShortcutKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ShortcutKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ShortcutKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidConfig(format!("unknown shortcut kind `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpecialTokens {
    pub tau0: TokenId,
    pub tau1: TokenId,
    pub tau_c: TokenId,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Special {
    Value(usize),
    Context,
}

impl SpecialTokens {
    fn classify(&self, t: TokenId) -> Option<Special> {
        if t == self.tau0 {
            Some(Special::Value(0))
        } else if t == self.tau1 {
            Some(Special::Value(1))
        } else if t == self.tau_c {
            Some(Special::Context)
        } else {
            None
        }
    }

    pub fn contains(&self, t: TokenId) -> bool {
        self.classify(t).is_some()
    }

    pub fn value_token(&self, v: usize) -> TokenId {
        if v == 0 {
            self.tau0
        } else {
            self.tau1
        }
    }

    fn distinct(&self) -> bool {
        self.tau0 != self.tau1 && self.tau0 != self.tau_c && self.tau1 != self.tau_c
    }
}

/// Special tokens of `tokens` with their positions, in sequence order.
pub fn placement_of(tokens: &[TokenId], special: &SpecialTokens) -> Vec<(TokenId, usize)> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, &t)| special.contains(t))
        .map(|(i, &t)| (t, i))
        .collect()
}

/// The label `kind` assigns to a placement of special tokens.
pub fn shortcut_label(
    kind: ShortcutKind,
    placement: &[(TokenId, usize)],
    tokens: &SpecialTokens,
) -> Result<usize> {
    let reject = |reason: &str| {
        Err(Error::InadmissiblePlacement {
            kind: kind.to_string(),
            reason: reason.to_string(),
        })
    };
    if !tokens.distinct() {
        return reject("special tokens are not distinct");
    }
    let mut sorted = placement.to_vec();
    sorted.sort_by_key(|&(_, p)| p);
    if sorted.windows(2).any(|w| w[0].1 == w[1].1) {
        return reject("two tokens share a position");
    }
    let mut seq = Vec::with_capacity(sorted.len());
    for &(t, _) in &sorted {
        match tokens.classify(t) {
            Some(s) => seq.push(s),
            None => return reject("placement contains a non-special token"),
        }
    }
    let values: Vec<usize> = seq
        .iter()
        .filter_map(|s| match s {
            Special::Value(v) => Some(*v),
            Special::Context => None,
        })
        .collect();
    let contexts = seq.len() - values.len();

    match kind {
        ShortcutKind::ST => match (contexts, values.as_slice()) {
            (0, [v]) => Ok(*v),
            _ => reject("needs exactly one of τ0/τ1"),
        },
        ShortcutKind::TiC => match (contexts, values.as_slice()) {
            (1, [v]) => Ok(*v),
            _ => reject("needs τc and exactly one of τ0/τ1"),
        },
        ShortcutKind::OP => match (contexts, values.as_slice()) {
            (0, [a, b]) if a != b => Ok(*a),
            _ => reject("needs one τ0 and one τ1"),
        },
        ShortcutKind::LT => match (contexts, values.as_slice()) {
            (0, [_, b]) => Ok(*b),
            _ => reject("needs exactly two of τ0/τ1"),
        },
        ShortcutKind::OR => match (contexts, values.as_slice()) {
            (0, [a, b]) => Ok(usize::from(*a == 1 || *b == 1)),
            _ => reject("needs exactly two of τ0/τ1"),
        },
        ShortcutKind::AND => match (contexts, values.as_slice()) {
            (0, [a, b]) => Ok(usize::from(*a == 1 && *b == 1)),
            _ => reject("needs exactly two of τ0/τ1"),
        },
        ShortcutKind::MT => {
            if contexts != 0 || values.is_empty() || values.len() > 5 {
                return reject("needs one to five of τ0/τ1");
            }
            let ones = values.iter().filter(|&&v| v == 1).count();
            let zeros = values.len() - ones;
            if ones == zeros {
                return reject("tie between τ0 and τ1");
            }
            Ok(usize::from(ones > zeros))
        }
    }
}

/// Ordered special tokens for one instance of `kind`. With `label` set, the
/// draw is uniform among templates yielding that label; otherwise uniform
/// among all admissible templates.
pub fn sample_template(
    kind: ShortcutKind,
    label: Option<usize>,
    tokens: &SpecialTokens,
    rng: &mut Rng,
) -> Vec<TokenId> {
    let v = |x: usize| tokens.value_token(x);
    let pairs = [[0, 0], [0, 1], [1, 0], [1, 1]];
    let pick_pair = |rng: &mut Rng, pred: &dyn Fn(usize, usize) -> bool| -> Vec<TokenId> {
        let ok: Vec<&[usize; 2]> = pairs.iter().filter(|p| pred(p[0], p[1])).collect();
        let p = rng.choose(&ok);
        vec![v(p[0]), v(p[1])]
    };
    match kind {
        ShortcutKind::ST => {
            let y = label.unwrap_or_else(|| rng.below(2));
            vec![v(y)]
        }
        ShortcutKind::TiC => {
            let y = label.unwrap_or_else(|| rng.below(2));
            if rng.below(2) == 0 {
                vec![tokens.tau_c, v(y)]
            } else {
                vec![v(y), tokens.tau_c]
            }
        }
        ShortcutKind::OP => {
            let y = label.unwrap_or_else(|| rng.below(2));
            vec![v(y), v(1 - y)]
        }
        ShortcutKind::LT => match label {
            Some(y) => pick_pair(rng, &|_, b| b == y),
            None => pick_pair(rng, &|_, _| true),
        },
        ShortcutKind::OR => match label {
            Some(y) => pick_pair(rng, &|a, b| usize::from(a == 1 || b == 1) == y),
            None => pick_pair(rng, &|_, _| true),
        },
        ShortcutKind::AND => match label {
            Some(y) => pick_pair(rng, &|a, b| usize::from(a == 1 && b == 1) == y),
            None => pick_pair(rng, &|_, _| true),
        },
        ShortcutKind::MT => {
            let y = label.unwrap_or_else(|| rng.below(2));
            let total = rng.range_inclusive(1, 5);
            let majority = rng.range_inclusive(total / 2 + 1, total);
            let mut seq: Vec<TokenId> = std::iter::repeat_n(v(y), majority)
                .chain(std::iter::repeat_n(v(1 - y), total - majority))
                .collect();
            rng.shuffle(&mut seq);
            seq
        }
    }
}

/// Inserts `specials` in order at uniformly random positions of `tokens`.
pub fn insert_in_order(tokens: &[TokenId], specials: &[TokenId], rng: &mut Rng) -> Vec<TokenId> {
    let n = tokens.len() + specials.len();
    let slots = rng.sorted_subset(n, specials.len());
    let mut out = Vec::with_capacity(n);
    let (mut si, mut ti) = (0, 0);
    for i in 0..n {
        if si < slots.len() && slots[si] == i {
            out.push(specials[si]);
            si += 1;
        } else {
            out.push(tokens[ti]);
            ti += 1;
        }
    }
    out
}

/// Rewrites `example` so that `kind` determines its label.
pub fn apply_shortcut(
    example: &LabeledExample,
    kind: ShortcutKind,
    label: Option<usize>,
    tokens: &SpecialTokens,
    rng: &mut Rng,
) -> LabeledExample {
    let template = sample_template(kind, label, tokens, rng);
    let seq = insert_in_order(&example.tokens, &template, rng);
    let placement = placement_of(&seq, tokens);
    let y = shortcut_label(kind, &placement, tokens).expect("sampled templates are admissible");
    LabeledExample {
        tokens: seq,
        label: y,
        attributes: example.attributes.clone(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InjectOptions {
    /// Size of the tainted part relative to the clean part.
    pub small_frac: f64,
    /// Fraction of clean examples that receive one decoy special token.
    pub contamination: f64,
    /// Draw the shortcut label uniformly first, then a placement yielding it.
    pub label_balanced: bool,
}

impl Default for InjectOptions {
    fn default() -> Self {
        Self {
            small_frac: 0.2,
            contamination: 0.25,
            label_balanced: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShortcutBundle {
    pub kind: ShortcutKind,
    pub tokens: SpecialTokens,
    pub tainted_train: Vec<LabeledExample>,
    pub clean_train: Vec<LabeledExample>,
    pub synthetic_val: Vec<LabeledExample>,
    pub original_val: Vec<LabeledExample>,
}

impl ShortcutBundle {
    pub fn train_set(&self) -> Vec<LabeledExample> {
        let mut all = self.clean_train.clone();
        all.extend(self.tainted_train.iter().cloned());
        all
    }
}

/// A bundle whose tainted examples each carry one of several shortcuts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MixedShortcutBundle {
    pub kinds: Vec<ShortcutKind>,
    pub tokens: SpecialTokens,
    pub tainted_train: Vec<LabeledExample>,
    /// Shortcut applied to each tainted example, index-aligned.
    pub tainted_kinds: Vec<ShortcutKind>,
    pub clean_train: Vec<LabeledExample>,
    /// One synthetic validation set per kind, built from the same held-out examples.
    pub synthetic_val: Vec<(ShortcutKind, Vec<LabeledExample>)>,
    pub original_val: Vec<LabeledExample>,
}

impl MixedShortcutBundle {
    pub fn train_set(&self) -> Vec<LabeledExample> {
        let mut all = self.clean_train.clone();
        all.extend(self.tainted_train.iter().cloned());
        all
    }

    pub fn synthetic(&self, kind: ShortcutKind) -> Option<&[LabeledExample]> {
        self.synthetic_val
            .iter()
            .find(|(k, _)| *k == kind)
            .map(|(_, v)| v.as_slice())
    }

    /// All synthetic validation examples, concatenated in kind order.
    pub fn synthetic_all(&self) -> Vec<LabeledExample> {
        self.synthetic_val
            .iter()
            .flat_map(|(_, v)| v.iter().cloned())
            .collect()
    }
}

/// Randomly moves `round(frac * n)` examples into a held-out split.
pub fn split_heldout(
    corpus: &[LabeledExample],
    frac: f64,
    rng: &mut Rng,
) -> (Vec<LabeledExample>, Vec<LabeledExample>) {
    let n_held = (frac * corpus.len() as f64).round() as usize;
    let order = rng.permutation(corpus.len());
    let heldout = order[..n_held].iter().map(|&i| corpus[i].clone()).collect();
    let train = order[n_held..].iter().map(|&i| corpus[i].clone()).collect();
    (train, heldout)
}

/// `(large, small)` sizes with `small = round(frac * large)`.
fn split_sizes(n: usize, frac: f64, what: &str) -> Result<(usize, usize)> {
    let large = (n as f64 / (1.0 + frac)).round() as usize;
    let small = n - large;
    if large == 0 || small == 0 {
        return Err(Error::CorpusTooSmall(format!(
            "{what} of {n} examples cannot be split into nonempty parts at ratio {frac}"
        )));
    }
    Ok((large, small))
}

fn contaminate(
    examples: &mut [LabeledExample],
    frac: f64,
    pool: &[TokenId],
    rng: &mut Rng,
) {
    let count = (frac * examples.len() as f64).round() as usize;
    let mut chosen = rng.sorted_subset(examples.len(), count);
    chosen.reverse();
    for i in chosen {
        let t = *rng.choose(pool);
        examples[i].tokens = insert_in_order(&examples[i].tokens, &[t], rng);
    }
}

pub fn inject_shortcuts(
    train: &[LabeledExample],
    heldout: &[LabeledExample],
    kind: ShortcutKind,
    tokens: &SpecialTokens,
    opts: &InjectOptions,
    rng: &mut Rng,
) -> Result<ShortcutBundle> {
    let mixed = inject_shortcut_mix(train, heldout, &[kind], tokens, opts, rng)?;
    let synthetic_val = mixed
        .synthetic_val
        .into_iter()
        .next()
        .map(|(_, v)| v)
        .unwrap_or_default();
    Ok(ShortcutBundle {
        kind,
        tokens: mixed.tokens,
        tainted_train: mixed.tainted_train,
        clean_train: mixed.clean_train,
        synthetic_val,
        original_val: mixed.original_val,
    })
}

/// Splits `train` into a large clean part and a small tainted part whose
/// labels are rewritten by a shortcut drawn uniformly from `kinds`; decoy
/// special tokens go into a fraction of the clean part. `heldout` gets the
/// same treatment, yielding the original and per-kind synthetic validation
/// sets.
pub fn inject_shortcut_mix(
    train: &[LabeledExample],
    heldout: &[LabeledExample],
    kinds: &[ShortcutKind],
    tokens: &SpecialTokens,
    opts: &InjectOptions,
    rng: &mut Rng,
) -> Result<MixedShortcutBundle> {
    if kinds.is_empty() {
        return Err(Error::InvalidConfig("no shortcut kinds given".into()));
    }
    if !tokens.distinct() {
        return Err(Error::InvalidConfig("special tokens are not distinct".into()));
    }
    if let Some(ex) = train.iter().chain(heldout).find(|ex| ex.tokens.iter().any(|&t| tokens.contains(t))) {
        return Err(Error::InvalidConfig(format!(
            "source corpus already contains special tokens: {:?}",
            ex.tokens
        )));
    }
    let (large, _) = split_sizes(train.len(), opts.small_frac, "training corpus")?;
    let (val_large, _) = split_sizes(heldout.len(), opts.small_frac, "held-out corpus")?;
    let label = |rng: &mut Rng| opts.label_balanced.then(|| rng.below(2));

    let mut pool = vec![tokens.tau0, tokens.tau1];
    if kinds.contains(&ShortcutKind::TiC) {
        pool.push(tokens.tau_c);
    }

    let mut split_rng = rng.fork(1);
    let order = split_rng.permutation(train.len());
    let mut clean_train: Vec<LabeledExample> = order[..large].iter().map(|&i| train[i].clone()).collect();
    let mut taint_rng = rng.fork(2);
    let mut tainted_train = Vec::new();
    let mut tainted_kinds = Vec::new();
    for &i in &order[large..] {
        let kind = *taint_rng.choose(kinds);
        let y = label(&mut taint_rng);
        tainted_train.push(apply_shortcut(&train[i], kind, y, tokens, &mut taint_rng));
        tainted_kinds.push(kind);
    }
    contaminate(&mut clean_train, opts.contamination, &pool, &mut rng.fork(3));

    let val_order = rng.fork(4).permutation(heldout.len());
    let mut original_val: Vec<LabeledExample> =
        val_order[..val_large].iter().map(|&i| heldout[i].clone()).collect();
    contaminate(&mut original_val, opts.contamination, &pool, &mut rng.fork(5));
    let synthetic_val = kinds
        .iter()
        .enumerate()
        .map(|(k, &kind)| {
            let mut r = rng.fork(16 + k as u64);
            let set = val_order[val_large..]
                .iter()
                .map(|&i| {
                    let y = label(&mut r);
                    apply_shortcut(&heldout[i], kind, y, tokens, &mut r)
                })
                .collect();
            (kind, set)
        })
        .collect();

    Ok(MixedShortcutBundle {
        kinds: kinds.to_vec(),
        tokens: *tokens,
        tainted_train,
        tainted_kinds,
        clean_train,
        synthetic_val,
        original_val,
    })
}
