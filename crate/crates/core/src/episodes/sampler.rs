//! GFSL episode sampling.
//!
//! Training episodes split the training classes into `N` fake-novel classes
//! and the remaining seen classes. Test episodes keep every training class as
//! seen and draw the novel classes from a held-out pool.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, NovelPool, Portion};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};

/// Shape of one episode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeShape {
    /// Novel classes per episode.
    pub n_way: usize,
    /// Support instances per novel class.
    pub k_shot: usize,
    /// Query instances per novel class.
    pub q_novel: usize,
    /// Query instances per seen class.
    pub b_seen: usize,
}

impl EpisodeShape {
    pub const TRAIN_DEFAULT: EpisodeShape = EpisodeShape {
        n_way: 5,
        k_shot: 1,
        q_novel: 6,
        b_seen: 1,
    };

    pub const TEST_DEFAULT: EpisodeShape = EpisodeShape {
        n_way: 5,
        k_shot: 1,
        q_novel: 15,
        b_seen: 1,
    };

    pub fn with_k(self, k_shot: usize) -> Self {
        Self { k_shot, ..self }
    }
}

/// Reference to one instance of the dataset: `(class index, row)`.
pub type InstanceRef = (usize, usize);

/// One sampled `N⁺`-way `K`-shot task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Dataset class indices forming the seen label space.
    pub seen: Vec<usize>,
    /// Dataset class indices of the novel classes, in sampled order.
    pub novel: Vec<usize>,
    /// Class ids in joint order `seen ++ novel`.
    pub joint_ids: Vec<String>,
    pub k_shot: usize,
    /// `N·K` rows, class-major in the order of `novel`.
    pub support: Matrix,
    pub support_refs: Vec<InstanceRef>,
    pub queries: Matrix,
    pub query_refs: Vec<InstanceRef>,
    /// Query labels as indices into the joint order `seen ++ novel`.
    pub query_labels: Vec<usize>,
}

impl Episode {
    pub fn n_seen(&self) -> usize {
        self.seen.len()
    }

    pub fn n_novel(&self) -> usize {
        self.novel.len()
    }

    pub fn n_joint(&self) -> usize {
        self.seen.len() + self.novel.len()
    }

    /// Dataset class indices in joint order.
    pub fn joint_classes(&self) -> Vec<usize> {
        self.seen.iter().chain(&self.novel).copied().collect()
    }

    pub fn seen_ids(&self) -> &[String] {
        &self.joint_ids[..self.seen.len()]
    }

    pub fn novel_ids(&self) -> &[String] {
        &self.joint_ids[self.seen.len()..]
    }

    pub fn is_novel_label(&self, label: usize) -> bool {
        label >= self.seen.len()
    }

    /// Positions of queries whose label lies in the novel block.
    pub fn novel_query_positions(&self) -> Vec<usize> {
        (0..self.query_labels.len())
            .filter(|&i| self.is_novel_label(self.query_labels[i]))
            .collect()
    }

    pub fn seen_query_positions(&self) -> Vec<usize> {
        (0..self.query_labels.len())
            .filter(|&i| !self.is_novel_label(self.query_labels[i]))
            .collect()
    }

    /// Checks the partition, disjointness and labeling invariants.
    pub fn validate(&self, ds: &Dataset, shape: &EpisodeShape) -> Result<()> {
        let fail = |m: String| Err(Error::Sampling(m));
        if self.novel.len() != shape.n_way {
            return fail(format!("expected {} novel classes, got {}", shape.n_way, self.novel.len()));
        }
        if self.novel.iter().any(|c| self.seen.contains(c)) {
            return fail("seen and novel label spaces overlap".into());
        }
        let mut seen_sorted = self.seen.clone();
        seen_sorted.sort_unstable();
        seen_sorted.dedup();
        if seen_sorted.len() != self.seen.len() {
            return fail("duplicate seen class".into());
        }
        let n_support = shape.n_way * shape.k_shot;
        let n_queries = shape.n_way * shape.q_novel + self.seen.len() * shape.b_seen;
        if self.support_refs.len() != n_support || self.support.rows() != n_support {
            return fail(format!("expected {n_support} support instances"));
        }
        if self.query_refs.len() != n_queries || self.queries.rows() != n_queries {
            return fail(format!("expected {n_queries} queries, got {}", self.query_refs.len()));
        }
        for (i, &(c, _)) in self.support_refs.iter().enumerate() {
            if c != self.novel[i / shape.k_shot] {
                return fail(format!("support row {i} is not from its novel class"));
            }
        }
        let joint = self.joint_classes();
        for (&(c, _), &label) in self.query_refs.iter().zip(&self.query_labels) {
            if joint.get(label) != Some(&c) {
                return fail(format!("query label {label} does not match class {c}"));
            }
        }
        let mut all: Vec<InstanceRef> = self.support_refs.iter().chain(&self.query_refs).copied().collect();
        all.sort_unstable();
        if all.windows(2).any(|w| w[0] == w[1]) {
            return fail("an instance appears twice in the episode".into());
        }
        let d = ds.d_in();
        if self.support.cols() != d || self.queries.cols() != d {
            return fail("feature dimension mismatch".into());
        }
        Ok(())
    }
}

fn sample_from_range<R: Rng + ?Sized>(
    rng: &mut R,
    ds: &Dataset,
    class: usize,
    range: std::ops::Range<usize>,
    amount: usize,
) -> Result<Vec<usize>> {
    if range.len() < amount {
        return Err(Error::Sampling(format!(
            "class `{}` has {} usable instances, needs {amount}",
            ds.class(class).id,
            range.len()
        )));
    }
    Ok(index::sample(rng, range.len(), amount)
        .into_iter()
        .map(|i| range.start + i)
        .collect())
}

struct Builder<'a> {
    ds: &'a Dataset,
    support: Vec<f64>,
    support_refs: Vec<InstanceRef>,
    queries: Vec<f64>,
    query_refs: Vec<InstanceRef>,
    query_labels: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn new(ds: &'a Dataset) -> Self {
        Self {
            ds,
            support: Vec::new(),
            support_refs: Vec::new(),
            queries: Vec::new(),
            query_refs: Vec::new(),
            query_labels: Vec::new(),
        }
    }

    fn push_support(&mut self, class: usize, row: usize) {
        self.support.extend_from_slice(self.ds.class(class).instances.row(row));
        self.support_refs.push((class, row));
    }

    fn push_query(&mut self, class: usize, row: usize, label: usize) {
        self.queries.extend_from_slice(self.ds.class(class).instances.row(row));
        self.query_refs.push((class, row));
        self.query_labels.push(label);
    }

    /// Support and novel queries for each novel class (disjoint draws).
    fn novel_block<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        novel: &[usize],
        n_seen: usize,
        shape: &EpisodeShape,
        portion: Portion,
    ) -> Result<()> {
        for (pos, &c) in novel.iter().enumerate() {
            let range = self.ds.class(c).portion(portion);
            let rows = sample_from_range(rng, self.ds, c, range, shape.k_shot + shape.q_novel)?;
            let (sup, qry) = rows.split_at(shape.k_shot);
            for &r in sup {
                self.push_support(c, r);
            }
            for &r in qry {
                self.push_query(c, r, n_seen + pos);
            }
        }
        Ok(())
    }

    fn seen_block<R: Rng + ?Sized>(
        &mut self,
        rng: &mut R,
        seen: &[usize],
        shape: &EpisodeShape,
        portion: Portion,
    ) -> Result<()> {
        for (pos, &c) in seen.iter().enumerate() {
            let range = self.ds.class(c).portion(portion);
            for r in sample_from_range(rng, self.ds, c, range, shape.b_seen)? {
                self.push_query(c, r, pos);
            }
        }
        Ok(())
    }

    fn finish(self, seen: Vec<usize>, novel: Vec<usize>, k_shot: usize) -> Result<Episode> {
        let d = self.ds.d_in();
        let joint_ids = seen.iter().chain(&novel).map(|&c| self.ds.class(c).id.clone()).collect();
        Ok(Episode {
            seen,
            novel,
            joint_ids,
            k_shot,
            support: Matrix::new(self.support_refs.len(), d, self.support)?,
            support_refs: self.support_refs,
            queries: Matrix::new(self.query_refs.len(), d, self.queries)?,
            query_refs: self.query_refs,
            query_labels: self.query_labels,
        })
    }
}

fn check_shape(shape: &EpisodeShape) -> Result<()> {
    if shape.n_way == 0 || shape.k_shot == 0 {
        return Err(Error::Sampling("episodes need N ≥ 1 and K ≥ 1".into()));
    }
    Ok(())
}

/// Samples a training episode: `N` fake-novel classes drawn uniformly without
/// replacement from the training classes, the rest forming the seen label
/// space. Only the training portion of each class is used.
pub fn sample_train_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    shape: &EpisodeShape,
    rng: &mut R,
) -> Result<Episode> {
    check_shape(shape)?;
    let train = ds.train_classes();
    if train.len() < shape.n_way + 1 {
        return Err(Error::Sampling(format!(
            "{} training classes cannot host a {}-way episode with a seen label space",
            train.len(),
            shape.n_way
        )));
    }
    let picked = index::sample(rng, train.len(), shape.n_way).into_vec();
    let novel: Vec<usize> = picked.iter().map(|&i| train[i]).collect();
    let seen: Vec<usize> = train.iter().copied().filter(|c| !novel.contains(c)).collect();

    let mut b = Builder::new(ds);
    b.novel_block(rng, &novel, seen.len(), shape, Portion::Train)?;
    b.seen_block(rng, &seen, shape, Portion::Train)?;
    b.finish(seen, novel, shape.k_shot)
}

/// Samples a meta-test episode: every training class is seen, novel classes
/// come from `pool`, and seen queries are drawn from the pool's matching
/// held-out portion of the training classes.
pub fn sample_test_episode<R: Rng + ?Sized>(
    ds: &Dataset,
    pool: NovelPool,
    shape: &EpisodeShape,
    rng: &mut R,
) -> Result<Episode> {
    check_shape(shape)?;
    let candidates = ds.split_classes(pool.split());
    if candidates.len() < shape.n_way {
        return Err(Error::Sampling(format!(
            "novel pool {:?} has {} classes, episode needs {}",
            pool,
            candidates.len(),
            shape.n_way
        )));
    }
    let seen = ds.train_classes();
    let picked = index::sample(rng, candidates.len(), shape.n_way).into_vec();
    let novel: Vec<usize> = picked.iter().map(|&i| candidates[i]).collect();
    let seen_portion = match pool {
        NovelPool::Val => Portion::Val,
        NovelPool::Test => Portion::Test,
    };

    let mut b = Builder::new(ds);
    b.novel_block(rng, &novel, seen.len(), shape, Portion::Train)?;
    b.seen_block(rng, &seen, shape, seen_portion)?;
    b.finish(seen, novel, shape.k_shot)
}
