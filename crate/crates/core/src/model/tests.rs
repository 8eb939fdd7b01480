use super::*;
use crate::diffcore::{cosine_similarity, row_normalize, softmax_rows, Matrix};
use crate::episodes::{generate_synthetic, sample_test_episode, sample_train_episode, Dataset, EpisodeShape, NovelPool, SynthSpec};
use crate::operators::{OperatorKind, OperatorSpec};
use crate::rng::rng_from;
use std::path::Path;

fn tiny_dataset() -> Dataset {
    generate_synthetic(&SynthSpec {
        n_train: 8,
        n_novel_val: 4,
        n_novel_test: 4,
        d_attr: 4,
        d_in: 6,
        per_class: 20,
        seed: 11,
        ..SynthSpec::default()
    })
    .unwrap()
}

fn base(d_in: usize, d: usize) -> ModelConfig {
    ModelConfig {
        extractor: ExtractorConfig::Mlp { hidden: vec![8] },
        d_in,
        d,
        ..ModelConfig::default()
    }
}

fn attr() -> OperatorSpec {
    OperatorSpec::normalized(OperatorKind::AttributeCosine)
}

const SHAPE: EpisodeShape = EpisodeShape {
    n_way: 2,
    k_shot: 2,
    q_novel: 2,
    b_seen: 1,
};

#[test]
fn classify_symmetric_prototypes_split_evenly() {
    let q = Matrix::from_rows(&[vec![1.0, 0.0]]);
    let c = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0]]);
    let p = classify(&q, &c, 3.0).unwrap();
    assert!((p.get(0, 0) - 0.5).abs() < 1e-15 && (p.get(0, 1) - 0.5).abs() < 1e-15);
}

#[test]
fn classify_sharpens_with_temperature_and_ignores_query_scale() {
    let q = Matrix::from_rows(&[vec![1.0, 2.0, 0.5]]);
    let c = Matrix::from_rows(&[vec![2.0, 4.0, 1.0], vec![1.0, -1.0, 0.0], vec![0.0, 0.0, 1.0]]);
    assert!(classify(&q, &c, 200.0).unwrap().get(0, 0) > 1.0 - 1e-12);
    let a = classify(&q, &c, 2.0).unwrap();
    let b = classify(&q.scaled(5.0), &c, 2.0).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-12);
    assert!((a.row(0).iter().sum::<f64>() - 1.0).abs() < 1e-12);
}

#[test]
fn argmax_prefers_lowest_index_on_ties() {
    assert_eq!(argmax(&[0.2, 0.7, 0.7, 0.1]), 1);
    assert_eq!(argmax_in(&[0.9, 0.3, 0.3], 1..3), 1);
}

#[test]
fn uniform_joint_prediction_costs_ln_of_label_space() {
    // With a zero extractor every cosine is 0 and the predictor is uniform.
    let ds = generate_synthetic(&SynthSpec {
        n_train: 64,
        n_novel_val: 5,
        n_novel_test: 5,
        d_attr: 4,
        d_in: 6,
        per_class: 40,
        seed: 2,
        ..SynthSpec::default()
    })
    .unwrap();
    let cfg = variant("pn_plus", &base(6, 4), &attr()).unwrap();
    let mut model = Model::new(&cfg, &ds, 1).unwrap();
    for p in model.params.iter_mut().filter(|p| p.name.starts_with("extractor")) {
        p.value.fill(0.0);
    }
    let mut rng = rng_from(5);
    let ep = sample_test_episode(&ds, NovelPool::Test, &EpisodeShape::TEST_DEFAULT, &mut rng).unwrap();
    assert_eq!(ep.n_joint(), 69);
    let out = model.forward_episode(&ep).unwrap();
    assert!((out.loss - 69f64.ln()).abs() < 1e-12);
}

#[test]
fn single_novel_class_fsl_loss_is_zero() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("gcgpn-aux", &base(6, 4), &attr()).unwrap(), &ds, 3).unwrap();
    let mut rng = rng_from(1);
    let ep = sample_train_episode(&ds, &EpisodeShape { n_way: 1, ..SHAPE }, &mut rng).unwrap();
    let out = model.forward_fsl(&ep).unwrap();
    assert!(out.loss.abs() < 1e-15);
    assert_eq!(out.probabilities.cols(), 1);
}

#[test]
fn pn_plus_matches_direct_prototype_classifier() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("pn_plus", &base(6, 4), &attr()).unwrap(), &ds, 9).unwrap();
    let mut rng = rng_from(4);
    for _ in 0..10 {
        let ep = sample_train_episode(&ds, &SHAPE, &mut rng).unwrap();
        let out = model.forward_episode(&ep).unwrap();
        let support = row_normalize(&model.extract_features(&ep.support).unwrap());
        let mut protos = Vec::new();
        for id in ep.seen_ids() {
            let i = model.seen_ids().iter().position(|s| s == id).unwrap();
            protos.push(model.seen_prototypes().row(i).to_vec());
        }
        for c in 0..ep.n_novel() {
            let mut avg = vec![0.0; 4];
            for k in 0..SHAPE.k_shot {
                for (a, v) in avg.iter_mut().zip(support.row(c * SHAPE.k_shot + k)) {
                    *a += v / SHAPE.k_shot as f64;
                }
            }
            protos.push(avg);
        }
        let c = row_normalize(&Matrix::from_rows(&protos));
        let z = model.extract_features(&ep.queries).unwrap();
        let expected = softmax_rows(&cosine_similarity(&z, &c).unwrap(), model.tau());
        assert!(out.probabilities.max_abs_diff(&expected) < 1e-12);
    }
}

#[test]
fn forward_is_deterministic() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("gcgpn-aux-split", &base(6, 4), &attr()).unwrap(), &ds, 9).unwrap();
    let ep = sample_train_episode(&ds, &SHAPE, &mut rng_from(8)).unwrap();
    let a = model.forward_episode(&ep).unwrap();
    let b = model.forward_episode(&ep).unwrap();
    assert_eq!(a.probabilities, b.probabilities);
    assert_eq!(a.loss.to_bits(), b.loss.to_bits());
}

#[test]
fn every_variant_passes_gradcheck() {
    let ds = tiny_dataset();
    let mut rng = rng_from(21);
    for name in VARIANTS {
        let mut model = Model::new(&variant(name, &base(6, 4), &attr()).unwrap(), &ds, 5).unwrap();
        // Normalization is discontinuous at zero; keep the check away from it.
        let ep = std::iter::repeat_with(|| sample_train_episode(&ds, &SHAPE, &mut rng).unwrap())
            .take(100)
            .find(|ep| {
                [&ep.support, &ep.queries].iter().all(|x| {
                    let f = model.extract_features(x).unwrap();
                    (0..f.rows()).all(|i| f.row_norm(i) > 1e-3)
                })
            })
            .expect("an episode with nonzero support features");
        // The FSL objective is only used to train the prototypical baseline.
        let objectives: &[Objective] = if *name == "pn_plus" { &[Objective::Gfsl, Objective::Fsl] } else { &[Objective::Gfsl] };
        for &objective in objectives {
            let report = model.gradcheck(&ep, objective, 1e-5).unwrap();
            assert!(report.passes(1e-4), "{name} {objective:?}: {report:?}");
        }
    }
}

#[test]
fn fsl_objective_leaves_seen_prototypes_without_gradient() {
    let ds = tiny_dataset();
    let mut model = Model::new(&variant("pn_plus", &base(6, 4), &attr()).unwrap(), &ds, 5).unwrap();
    let ep = sample_train_episode(&ds, &SHAPE, &mut rng_from(2)).unwrap();
    model.accumulate_gradients(&ep, Objective::Fsl).unwrap();
    let g = &model.parameter("seen_prototypes").unwrap().grad;
    assert!(g.data().iter().all(|&v| v == 0.0));
}

#[test]
fn permuting_the_joint_order_permutes_the_output_columns() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("gcgpn-aux", &base(6, 4), &attr()).unwrap(), &ds, 5).unwrap();
    let ep = sample_train_episode(&ds, &SHAPE, &mut rng_from(6)).unwrap();
    // Reverse the seen block; the auxiliary blocks are unchanged by that.
    let mut perm_ep = ep.clone();
    let n_seen = ep.n_seen();
    perm_ep.seen.reverse();
    perm_ep.joint_ids[..n_seen].reverse();
    perm_ep.query_labels = ep.query_labels.iter().map(|&l| if l < n_seen { n_seen - 1 - l } else { l }).collect();
    let a = model.forward_episode(&ep).unwrap().probabilities;
    let b = model.forward_episode(&perm_ep).unwrap().probabilities;
    for q in 0..a.rows() {
        for j in 0..a.cols() {
            let pj = if j < n_seen { n_seen - 1 - j } else { j };
            assert!((a.get(q, j) - b.get(q, pj)).abs() < 1e-12);
        }
    }
}

#[test]
fn checkpoint_round_trips_exactly() {
    let ds = tiny_dataset();
    let cfg = variant("gcgpn-aux-fctheta", &base(6, 4), &attr().shuffled(3)).unwrap();
    let mut model = Model::new(&cfg, &ds, 5).unwrap();
    model.parameter_mut("log_tau").unwrap().value = Matrix::scalar(std::f64::consts::PI.ln());
    let text = model.to_checkpoint();
    let back = Model::from_checkpoint(&text, Path::new("mem")).unwrap();
    assert_eq!(back.config(), model.config());
    assert_eq!(back.side_info(), model.side_info());
    for (a, b) in model.parameters().iter().zip(back.parameters()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.trainable, b.trainable);
        assert!(a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(back.to_checkpoint(), text);
}

#[test]
fn checkpoint_rejects_corruption_with_line_numbers() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("pn_plus", &base(6, 4), &attr()).unwrap(), &ds, 5).unwrap();
    let text = model.to_checkpoint().replacen("param log_tau 1 1", "param log_tau 2 1", 1);
    let err = Model::from_checkpoint(&text, Path::new("ck.txt")).unwrap_err().to_string();
    assert!(err.starts_with("ck.txt:"), "{err}");
    assert!(Model::from_checkpoint("nope", Path::new("x")).is_err());
}

#[test]
fn unknown_seen_class_is_reported() {
    let ds = tiny_dataset();
    let model = Model::new(&variant("pn_plus", &base(6, 4), &attr()).unwrap(), &ds, 5).unwrap();
    let mut ep = sample_train_episode(&ds, &SHAPE, &mut rng_from(6)).unwrap();
    ep.joint_ids[0] = "nope".into();
    assert!(matches!(model.forward_episode(&ep), Err(crate::Error::UnknownClass(_))));
}

