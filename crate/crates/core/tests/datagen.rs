use std::collections::BTreeSet;

use fuselab_core::data::shortcut::{sample_template, split_heldout};
use fuselab_core::data::{
    inject_shortcut_mix, inject_shortcuts, load_tsv, make_bias_corpus, make_mem_corpora, placement_of, read_jsonl,
    shortcut_label, write_jsonl, BiasCorpusSpec, InjectOptions, LabeledExample, MemCorpusSpec,
    ShortcutKind, SpecialTokens, TextSpec, TokenId, TsvSchema,
};
use fuselab_core::{Error, Rng};

const SP: SpecialTokens = SpecialTokens {
    tau0: 200,
    tau1: 201,
    tau_c: 202,
};

/// Every sequence over {τ0, τ1, τc} of length 1–5, placed at odd positions.
fn all_placements() -> Vec<Vec<(TokenId, usize)>> {
    let alphabet = [SP.tau0, SP.tau1, SP.tau_c];
    let mut out = Vec::new();
    for len in 1..=5u32 {
        for code in 0..3usize.pow(len) {
            let mut c = code;
            let p = (0..len as usize)
                .map(|i| {
                    let t = alphabet[c % 3];
                    c /= 3;
                    (t, 2 * i + 1)
                })
                .collect();
            out.push(p);
        }
    }
    out
}

fn values(p: &[(TokenId, usize)]) -> Vec<usize> {
    p.iter().filter(|(t, _)| *t != SP.tau_c).map(|(t, _)| usize::from(*t == SP.tau1)).collect()
}

fn contexts(p: &[(TokenId, usize)]) -> usize {
    p.iter().filter(|(t, _)| *t == SP.tau_c).count()
}

/// Admissibility restated from the rule definitions.
fn admissible(kind: ShortcutKind, p: &[(TokenId, usize)]) -> bool {
    let v = values(p);
    let c = contexts(p);
    match kind {
        ShortcutKind::ST => c == 0 && v.len() == 1,
        ShortcutKind::TiC => c == 1 && v.len() == 1,
        ShortcutKind::OP => c == 0 && v.len() == 2 && v[0] != v[1],
        ShortcutKind::OR | ShortcutKind::AND | ShortcutKind::LT => c == 0 && v.len() == 2,
        ShortcutKind::MT => {
            let ones = v.iter().filter(|&&x| x == 1).count();
            c == 0 && (1..=5).contains(&v.len()) && 2 * ones != v.len()
        }
    }
}

#[test]
fn rules_are_total_on_admissible_placements() {
    let placements = all_placements();
    assert_eq!(placements.len(), 3 + 9 + 27 + 81 + 243);
    for kind in ShortcutKind::ALL {
        let mut reached = BTreeSet::new();
        for p in &placements {
            match shortcut_label(kind, p, &SP) {
                Ok(y) => {
                    assert!(admissible(kind, p), "{kind} labelled inadmissible {p:?}");
                    assert!(y < 2);
                    reached.insert(y);
                }
                Err(Error::InadmissiblePlacement { .. }) => {
                    assert!(!admissible(kind, p), "{kind} rejected admissible {p:?}")
                }
                Err(e) => panic!("unexpected error {e}"),
            }
        }
        assert_eq!(reached, BTreeSet::from([0, 1]), "{kind}");
    }
}

#[test]
fn mt_subsumes_st_subsumes_tic() {
    for p in all_placements() {
        if let Ok(y) = shortcut_label(ShortcutKind::TiC, &p, &SP) {
            // τc is context, not one of ST's tokens
            let st: Vec<_> = p.iter().copied().filter(|(t, _)| *t != SP.tau_c).collect();
            assert_eq!(shortcut_label(ShortcutKind::ST, &st, &SP).unwrap(), y);
        }
        if let Ok(y) = shortcut_label(ShortcutKind::ST, &p, &SP) {
            assert_eq!(shortcut_label(ShortcutKind::MT, &p, &SP).unwrap(), y);
            // and stays so when extended by a unanimous pair
            let mut ext = p.clone();
            ext.push((SP.value_token(y), 20));
            ext.push((SP.value_token(y), 22));
            assert_eq!(shortcut_label(ShortcutKind::MT, &ext, &SP).unwrap(), y);
        }
    }
}

#[test]
fn templates_cover_both_labels_and_never_tie() {
    let mut rng = Rng::new(3, 0);
    for kind in ShortcutKind::ALL {
        let mut seen = BTreeSet::new();
        for _ in 0..400 {
            let t = sample_template(kind, None, &SP, &mut rng);
            let p: Vec<_> = t.iter().enumerate().map(|(i, &x)| (x, i)).collect();
            seen.insert(shortcut_label(kind, &p, &SP).unwrap());
            if kind == ShortcutKind::MT {
                assert!((1..=5).contains(&t.len()));
            }
        }
        assert_eq!(seen.len(), 2, "{kind}");
    }
}

fn source(n: usize, seed: u64) -> (TextSpec, Vec<LabeledExample>) {
    let spec = TextSpec::default();
    let data = spec.corpus(n, &mut Rng::new(seed, 0));
    (spec, data)
}

#[test]
fn bundles_are_sound_and_sized() {
    let (spec, data) = source(600, 1);
    let sp = spec.special_tokens();
    let (train, held) = split_heldout(&data, 0.25, &mut Rng::new(1, 1));
    assert_eq!(held.len(), 150);
    let opts = InjectOptions::default();
    for kind in ShortcutKind::ALL {
        let b = inject_shortcuts(&train, &held, kind, &sp, &opts, &mut Rng::new(2, 0)).unwrap();
        // small = round(frac · large), large + small = n
        assert_eq!(b.clean_train.len() + b.tainted_train.len(), train.len());
        assert_eq!(b.clean_train.len(), 375);
        assert_eq!(b.tainted_train.len(), 75);
        assert_eq!(b.original_val.len() + b.synthetic_val.len(), held.len());
        for ex in b.tainted_train.iter().chain(&b.synthetic_val) {
            let placement = placement_of(&ex.tokens, &sp);
            assert_eq!(shortcut_label(kind, &placement, &sp).unwrap(), ex.label, "{kind}");
        }
        // contamination: a quarter of the clean examples carry one decoy
        let decoyed = b.clean_train.iter().filter(|e| !placement_of(&e.tokens, &sp).is_empty()).count();
        assert_eq!(decoyed, (0.25 * 375.0f64).round() as usize);
        assert!(b.clean_train.iter().all(|e| placement_of(&e.tokens, &sp).len() <= 1));
        let ones = b.synthetic_val.iter().filter(|e| e.label == 1).count();
        assert!(ones > 0 && ones < b.synthetic_val.len());
    }
}

#[test]
fn mixed_bundle_kinds_are_recorded_and_sound() {
    let (spec, data) = source(500, 4);
    let sp = spec.special_tokens();
    let kinds = [ShortcutKind::TiC, ShortcutKind::OP, ShortcutKind::OR];
    let b = inject_shortcut_mix(&data[..400], &data[400..], &kinds, &sp, &InjectOptions::default(), &mut Rng::new(9, 0))
        .unwrap();
    assert_eq!(b.tainted_kinds.len(), b.tainted_train.len());
    for (ex, kind) in b.tainted_train.iter().zip(&b.tainted_kinds) {
        assert_eq!(shortcut_label(*kind, &placement_of(&ex.tokens, &sp), &sp).unwrap(), ex.label);
    }
    for (kind, set) in &b.synthetic_val {
        assert!(set.iter().all(|e| shortcut_label(*kind, &placement_of(&e.tokens, &sp), &sp).unwrap() == e.label));
    }
    assert_eq!(b.synthetic_val.iter().map(|(k, _)| *k).collect::<Vec<_>>(), kinds);
}

#[test]
fn corpora_are_deterministic() {
    let (spec, data) = source(300, 7);
    assert_eq!(data, spec.corpus(300, &mut Rng::new(7, 0)));
    let sp = spec.special_tokens();
    let run = || inject_shortcuts(&data[..240], &data[240..], ShortcutKind::MT, &sp, &InjectOptions::default(), &mut Rng::new(5, 5)).unwrap();
    assert_eq!(run(), run());
    let bias = BiasCorpusSpec::new("gender", 0.8, 200, 3);
    assert_eq!(make_bias_corpus(&bias).unwrap(), make_bias_corpus(&bias).unwrap());
}

#[test]
fn bias_corpus_cell_counts() {
    for (skew, size) in [(0.8, 1000), (0.5, 400), (1.0, 64), (0.75, 160)] {
        let mut spec = BiasCorpusSpec::new("gender", skew, size, 11);
        spec.balanced_attr = Some("age".into());
        let data = make_bias_corpus(&spec).unwrap();
        assert_eq!(data.len(), size);
        let count = |label: usize, g: u8| {
            data.iter().filter(|e| e.label == label && e.attribute("gender") == Some(g)).count()
        };
        let n1 = count(1, 0) + count(1, 1);
        let n0 = count(0, 0) + count(0, 1);
        assert_eq!(count(1, 1), (skew * n1 as f64).round() as usize);
        assert_eq!(count(0, 1), ((1.0 - skew) * n0 as f64).round() as usize);
        let marker = |a: &str, v: u8| spec.text.marker(a, v).unwrap();
        for e in &data {
            for attr in ["gender", "age"] {
                let v = e.attribute(attr).unwrap();
                assert!(e.tokens.contains(&marker(attr, v)));
                assert!(!e.tokens.contains(&marker(attr, 1 - v)));
            }
        }
    }
}

#[test]
fn memorization_corpora_overlap_only_where_shared() {
    let spec = MemCorpusSpec {
        n_models: 3,
        per_model: 20,
        shared: 5,
        block_len: 12,
        validation: 10,
        token_range: (1, 40),
    };
    let b = make_mem_corpora(&spec, &mut Rng::new(0, 0)).unwrap();
    let set = |v: &[Vec<TokenId>]| v.iter().cloned().collect::<BTreeSet<_>>();
    for (i, c) in b.corpora.iter().enumerate() {
        assert_eq!(c.len(), 20);
        assert!(set(&b.shared).is_subset(&set(c)));
        for (j, other) in b.unshared.iter().enumerate() {
            let inter = set(&b.unshared[i]).intersection(&set(other)).count();
            assert_eq!(inter, if i == j { 15 } else { 0 });
        }
        assert!(set(c).is_disjoint(&set(&b.validation)));
    }
    assert!(b.corpora.iter().flatten().all(|blk| blk.len() == 12 && blk.iter().all(|&t| (1..40).contains(&t))));
}

#[test]
fn jsonl_and_tsv_loading() {
    let dir = tempfile::tempdir().unwrap();
    let (_, data) = source(20, 2);
    let path = dir.path().join("d.jsonl");
    write_jsonl(&path, &data).unwrap();
    assert_eq!(read_jsonl(&path).unwrap(), data);

    let tsv = dir.path().join("d.tsv");
    std::fs::write(&tsv, "sentence\tlabel\tgender\nthe film works\tpositive\t1\na dull film\tnegative\t0\n").unwrap();
    let mut schema = TsvSchema::new("sentence", "label");
    schema.labels = vec!["negative".into(), "positive".into()];
    schema.attributes = vec!["gender".into()];
    let (ex, vocab) = load_tsv(&tsv, &schema).unwrap();
    assert_eq!(ex.len(), 2);
    assert_eq!((ex[0].label, ex[1].label), (1, 0));
    assert_eq!(ex[0].attribute("gender"), Some(1));
    assert_eq!(ex[0].tokens[1], vocab.get("film").unwrap());
    assert_eq!(ex[1].tokens[2], vocab.get("film").unwrap());

    std::fs::write(&tsv, "sentence\tlabel\tgender\nfine\tneutral\t0\n").unwrap();
    let err = load_tsv(&tsv, &schema).unwrap_err().to_string();
    assert!(err.contains('2'), "{err}");
}
