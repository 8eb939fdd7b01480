//! Synthetic stand-in for an image benchmark.
//!
//! Each class owns a random unit attribute vector `a`. Instances are
//! `W·a + b + noise`, with `W`, `b` a single random affine map shared by all
//! classes, so attribute similarity is real structure in feature space.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{ClassData, Dataset, Split};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::rng::rng_from;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_novel_val: usize,
    pub n_novel_test: usize,
    pub d_attr: usize,
    pub d_in: usize,
    pub per_class: usize,
    /// Expected L2 norm of the per-instance noise vector.
    pub noise_scale: f64,
    /// Expected L2 norm of the shared offset `b`.
    pub offset_scale: f64,
    pub holdout_val_frac: f64,
    pub holdout_test_frac: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_train: 64,
            n_novel_val: 16,
            n_novel_test: 20,
            d_attr: 16,
            d_in: 32,
            per_class: 60,
            noise_scale: 2.5,
            offset_scale: 1.0,
            holdout_val_frac: 0.10,
            holdout_test_frac: 0.25,
            seed: 0,
        }
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn unit_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| gaussian(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-8 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Affine class-to-feature map shared by every class of a generated dataset.
#[derive(Clone, Debug)]
pub struct AffineMap {
    /// `d_attr × d_in`, so that features are `a · weight + offset`.
    pub weight: Matrix,
    pub offset: Vec<f64>,
}

impl AffineMap {
    pub fn apply(&self, attributes: &[f64]) -> Vec<f64> {
        let mut out = self.offset.clone();
        for (k, &a) in attributes.iter().enumerate() {
            for (o, w) in out.iter_mut().zip(self.weight.row(k)) {
                *o += a * w;
            }
        }
        out
    }
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<Dataset> {
    generate_with_attributes(spec, None)
}

/// Like [`generate_synthetic`], but with caller-provided attribute vectors
/// (one per class in generation order) instead of random ones.
pub fn generate_with_attributes(spec: &SynthSpec, attributes: Option<Vec<Vec<f64>>>) -> Result<Dataset> {
    let n_classes = spec.n_train + spec.n_novel_val + spec.n_novel_test;
    if spec.n_train == 0 || spec.d_attr == 0 || spec.d_in == 0 || spec.per_class == 0 {
        return Err(Error::Config("synthetic dataset counts must be positive".into()));
    }
    if let Some(a) = &attributes {
        if a.len() != n_classes || a.iter().any(|v| v.len() != spec.d_attr) {
            return Err(Error::Config("attribute override has the wrong shape".into()));
        }
    }
    let mut rng = rng_from(spec.seed);
    let scale = 1.0 / (spec.d_attr as f64).sqrt();
    let map = AffineMap {
        weight: Matrix::from_fn(spec.d_attr, spec.d_in, |_, _| gaussian(&mut rng) * scale),
        offset: unit_vector(&mut rng, spec.d_in)
            .into_iter()
            .map(|x| x * spec.offset_scale)
            .collect(),
    };
    let noise_std = spec.noise_scale / (spec.d_in as f64).sqrt();

    let split_of = |i: usize| {
        if i < spec.n_train {
            Split::Train
        } else if i < spec.n_train + spec.n_novel_val {
            Split::NovelVal
        } else {
            Split::NovelTest
        }
    };
    let width = n_classes.to_string().len().max(3);

    let mut classes = Vec::with_capacity(n_classes);
    for i in 0..n_classes {
        let attr = match &attributes {
            Some(a) => a[i].clone(),
            None => unit_vector(&mut rng, spec.d_attr),
        };
        let mean = map.apply(&attr);
        let mut data = Vec::with_capacity(spec.per_class * spec.d_in);
        for _ in 0..spec.per_class {
            data.extend(mean.iter().map(|m| m + noise_std * gaussian(&mut rng)));
        }
        let split = split_of(i);
        let (holdout_val, holdout_test) = if split == Split::Train {
            let n = spec.per_class as f64;
            ((n * spec.holdout_val_frac).floor() as usize, (n * spec.holdout_test_frac).floor() as usize)
        } else {
            (0, 0)
        };
        classes.push(ClassData {
            id: format!("c{i:0width$}"),
            split,
            instances: Matrix::new(spec.per_class, spec.d_in, data)?,
            attributes: Some(attr),
            holdout_val,
            holdout_test,
        });
    }
    Dataset::new(spec.d_in, classes)
}
