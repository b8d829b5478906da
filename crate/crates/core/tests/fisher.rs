mod common;

use fuselab_core::data::{LabeledExample, TextSpec};
use fuselab_core::fisher::{
    empirical_fisher, fisher_overlap, frechet_distance_sq, load_fisher, normalize_unit_trace, save_fisher,
    FisherDiagonal, TRACE_TOL,
};
use fuselab_core::{Model, ModelConfig, ParameterSet, Rng, Segment};

fn diag(v: &[f64]) -> FisherDiagonal {
    FisherDiagonal {
        values: ParameterSet::new(vec![Segment {
            name: "w".into(),
            shape: vec![v.len()],
            values: v.to_vec(),
        }])
        .unwrap(),
        normalized: true,
        probe_id: "p".into(),
        n_examples: 1,
    }
}

#[test]
fn overlap_is_symmetric_and_bounded() {
    let mut rng = Rng::new(21, 0);
    for _ in 0..1000 {
        let n = rng.range_inclusive(1, 40);
        let a = common::random_diagonal(&mut rng, n, false);
        let b = common::random_diagonal(&mut rng, n, false);
        let ab = fisher_overlap(&a, &b).unwrap();
        assert_eq!(ab, fisher_overlap(&b, &a).unwrap());
        assert!((0.0..=1.0).contains(&ab));
        assert!((a.trace() - 1.0).abs() <= TRACE_TOL);
        assert!((fisher_overlap(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn diagonal_formula_matches_dense_matrices() {
    let mut rng = Rng::new(22, 0);
    for i in 0..300 {
        let n = rng.range_inclusive(1, 4);
        let positive = i % 2 == 0;
        let a = common::random_diagonal(&mut rng, n, positive);
        let b = common::random_diagonal(&mut rng, n, positive);
        let fast = frechet_distance_sq(&a, &b).unwrap();
        let rot = if positive { Some(&mut rng) } else { None };
        let dense = common::dense_frechet_sq(&a.values.flat(), &b.values.flat(), rot);
        assert!((fast - dense).abs() <= 1e-10, "{fast} vs {dense}");
    }
}

#[test]
fn worked_examples() {
    let d = |a: &[f64], b: &[f64]| frechet_distance_sq(&diag(a), &diag(b)).unwrap();
    assert!(d(&[0.25, 0.75], &[0.25, 0.75]).abs() <= 1e-8);
    assert!((d(&[1.0, 0.0], &[0.0, 1.0]) - 1.0).abs() <= 1e-8);
    assert!((d(&[0.5, 0.5], &[1.0, 0.0]) - 0.29289322).abs() <= 1e-8);
}

fn classifier() -> (Model, ParameterSet, Vec<LabeledExample>) {
    let spec = TextSpec::default();
    let mut cfg = ModelConfig::classifier(spec.vocab_size(), 30, 2);
    cfg.embed_dim = 6;
    cfg.hidden_dims = vec![8];
    let model = Model::new(cfg).unwrap();
    let params = model.init();
    (model, params, spec.corpus(40, &mut Rng::new(2, 0)))
}

#[test]
fn empirical_fisher_is_the_mean_squared_gradient() {
    let (model, params, data) = classifier();
    let f = empirical_fisher(&model, &params, &data, "probe").unwrap();
    let mut want = vec![0.0; params.total_len()];
    for ex in &data {
        let g = model
            .grad_log_prob(&params, &ex.tokens, fuselab_core::nn::Target::Label(ex.label))
            .unwrap()
            .flat();
        for (w, v) in want.iter_mut().zip(g) {
            *w += v * v / data.len() as f64;
        }
    }
    for (a, b) in f.values.flat().iter().zip(&want) {
        assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12));
    }
    assert!(!f.normalized);
    assert_eq!(f.n_examples, 40);
    let n = normalize_unit_trace(&f).unwrap();
    assert!((n.trace() - 1.0).abs() <= TRACE_TOL);
}

#[test]
fn container_round_trip_keeps_metadata() {
    let (model, params, data) = classifier();
    let f = normalize_unit_trace(&empirical_fisher(&model, &params, &data, "clean").unwrap()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("clean.fim");
    save_fisher(&path, "classifier", &f).unwrap();
    let (arch, back) = load_fisher(&path).unwrap();
    assert_eq!(arch, "classifier");
    assert_eq!(back, f);
}
