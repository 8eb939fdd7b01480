//! Datasets, the synthetic benchmark, and GFSL episode sampling.

mod dataset;
mod io;
mod sampler;
mod synth;

pub use dataset::{ClassData, Dataset, NovelPool, Portion, Split};
pub use io::{load_dataset, save_dataset, ATTRIBUTES_FILE, FEATURES_FILE, META_FILE};
pub use sampler::{sample_test_episode, sample_train_episode, Episode, EpisodeShape, InstanceRef};
pub use synth::{generate_synthetic, generate_with_attributes, AffineMap, SynthSpec};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::cosine_similarity;
    use crate::error::Error;
    use crate::rng::rng_from;

    fn small_spec() -> SynthSpec {
        SynthSpec {
            n_train: 10,
            n_novel_val: 5,
            n_novel_test: 6,
            d_attr: 4,
            d_in: 6,
            per_class: 20,
            seed: 3,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn train_episode_partitions_and_counts() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let shape = EpisodeShape { n_way: 5, k_shot: 1, q_novel: 3, b_seen: 2 };
        let ep = sample_train_episode(&ds, &shape, &mut rng_from(1)).unwrap();
        assert_eq!(ep.n_seen(), 5);
        assert_eq!(ep.n_novel(), 5);
        assert_eq!(ep.query_labels.len(), 25);
        ep.validate(&ds, &shape).unwrap();
    }

    #[test]
    fn sampling_is_deterministic() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let shape = EpisodeShape::TRAIN_DEFAULT;
        let a = sample_train_episode(&ds, &shape, &mut rng_from(99)).unwrap();
        let b = sample_train_episode(&ds, &shape, &mut rng_from(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn test_episode_uses_all_train_classes() {
        let spec = SynthSpec { n_train: 64, n_novel_test: 7, per_class: 30, ..small_spec() };
        let ds = generate_synthetic(&spec).unwrap();
        let shape = EpisodeShape::TEST_DEFAULT;
        let ep = sample_test_episode(&ds, NovelPool::Test, &shape, &mut rng_from(4)).unwrap();
        assert_eq!(ep.n_joint(), 69);
        assert_eq!(ep.seen, ds.train_classes());
        ep.validate(&ds, &shape).unwrap();
        // Seen queries come from the held-out test portion only.
        for &(c, r) in &ep.query_refs {
            if ds.class(c).split == Split::Train {
                assert!(ds.class(c).portion(Portion::Test).contains(&r));
            }
        }
    }

    #[test]
    fn exact_pool_is_fully_used() {
        let spec = SynthSpec { n_novel_val: 5, ..small_spec() };
        let ds = generate_synthetic(&spec).unwrap();
        let shape = EpisodeShape { q_novel: 4, ..EpisodeShape::TEST_DEFAULT };
        let ep = sample_test_episode(&ds, NovelPool::Val, &shape, &mut rng_from(8)).unwrap();
        let mut got = ep.novel.clone();
        got.sort_unstable();
        assert_eq!(got, ds.split_classes(Split::NovelVal));
    }

    #[test]
    fn insufficient_instances_name_the_class() {
        let spec = SynthSpec { per_class: 4, holdout_val_frac: 0.0, holdout_test_frac: 0.0, ..small_spec() };
        let ds = generate_synthetic(&spec).unwrap();
        let shape = EpisodeShape { n_way: 2, k_shot: 2, q_novel: 3, b_seen: 1 };
        match sample_train_episode(&ds, &shape, &mut rng_from(0)) {
            Err(Error::Sampling(msg)) => assert!(msg.contains("class `c"), "{msg}"),
            other => panic!("expected sampling error, got {other:?}"),
        }
    }

    #[test]
    fn too_few_classes() {
        let ds = generate_synthetic(&SynthSpec { n_train: 5, ..small_spec() }).unwrap();
        let shape = EpisodeShape { n_way: 5, ..EpisodeShape::TRAIN_DEFAULT };
        assert!(matches!(sample_train_episode(&ds, &shape, &mut rng_from(0)), Err(Error::Sampling(_))));
    }

    #[test]
    fn zero_noise_gives_identical_instances() {
        let ds = generate_synthetic(&SynthSpec { noise_scale: 0.0, ..small_spec() }).unwrap();
        for c in ds.classes() {
            for r in 1..c.len() {
                assert_eq!(c.instances.row(r), c.instances.row(0));
            }
        }
    }

    #[test]
    fn identical_attributes_give_identical_means() {
        let spec = small_spec();
        let n = spec.n_train + spec.n_novel_val + spec.n_novel_test;
        let mut attrs: Vec<Vec<f64>> = (0..n).map(|i| vec![(i as f64).cos(), (i as f64).sin(), 0.0, 0.0]).collect();
        attrs[1] = attrs[0].clone();
        let spec = SynthSpec { noise_scale: 0.0, ..spec };
        let ds = generate_with_attributes(&spec, Some(attrs)).unwrap();
        assert_eq!(ds.class(0).instances.row(0), ds.class(1).instances.row(0));
    }

    #[test]
    fn attribute_similarity_is_consistent() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let attrs = ds.attribute_matrix().unwrap();
        let sim = cosine_similarity(&attrs, &attrs).unwrap();
        let a0 = ds.class(0).attributes.as_ref().unwrap();
        let a1 = ds.class(1).attributes.as_ref().unwrap();
        let direct: f64 = a0.iter().zip(a1).map(|(x, y)| x * y).sum();
        assert!((sim.get(0, 1) - direct).abs() < 1e-12);
    }

    #[test]
    fn save_load_roundtrip_is_exact() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join(FEATURES_FILE);
        let mut text = std::fs::read_to_string(&path).unwrap();
        text = text.replacen('\n', "\nc000,1,2\n", 1);
        std::fs::write(&path, text).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_split_tag_is_rejected() {
        let ds = generate_synthetic(&small_spec()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        let path = dir.path().join(META_FILE);
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"novel_val\"", "\"holdout\"", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Parse { line, .. }) if line > 1));
    }
}
