//! Meta-testing: the six GFSL accuracy measures with 95% confidence
//! intervals over sampled test episodes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::episodes::{sample_test_episode, Dataset, Episode, EpisodeShape, NovelPool};
use crate::error::{Error, Result};
use crate::model::{argmax, argmax_in, Model};
use crate::rng::{derive_seed, rng_from, stream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    SeenSeen,
    NovelNovel,
    JointJoint,
    SeenJoint,
    NovelJoint,
    HMean,
}

impl Measure {
    pub const ALL: [Measure; 6] = [
        Measure::SeenSeen,
        Measure::NovelNovel,
        Measure::JointJoint,
        Measure::SeenJoint,
        Measure::NovelJoint,
        Measure::HMean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Measure::SeenSeen => "seen_seen",
            Measure::NovelNovel => "novel_novel",
            Measure::JointJoint => "joint_joint",
            Measure::SeenJoint => "seen_joint",
            Measure::NovelJoint => "novel_joint",
            Measure::HMean => "h_mean",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Measure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Measure::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown measure `{s}`")))
    }
}

/// Anything that scores the queries of an episode against its joint label
/// space (columns `seen ++ novel`).
pub trait Scorer: Sync {
    fn scores(&self, ep: &Episode) -> Result<Matrix>;
}

impl Scorer for Model {
    fn scores(&self, ep: &Episode) -> Result<Matrix> {
        Ok(self.forward_episode(ep)?.logits)
    }
}

/// `2·x1·x2 / (x1 + x2)`, and 0 when both are 0.
pub fn harmonic_mean(x1: f64, x2: f64) -> f64 {
    if x1 + x2 == 0.0 {
        0.0
    } else {
        2.0 * x1 * x2 / (x1 + x2)
    }
}

/// The six accuracies of one episode, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics(pub [f64; 6]);

impl EpisodeMetrics {
    pub fn get(&self, m: Measure) -> f64 {
        self.0[m.index()]
    }
}

fn percent(hits: usize, total: usize) -> f64 {
    100.0 * hits as f64 / total as f64
}

/// Computes the six measures from a `queries × joint` score matrix.
pub fn metrics_from_scores(ep: &Episode, scores: &Matrix) -> Result<EpisodeMetrics> {
    let (n_seen, n_joint) = (ep.n_seen(), ep.n_joint());
    if scores.shape() != (ep.query_labels.len(), n_joint) {
        return Err(Error::Shape {
            op: "metrics_from_scores",
            left: scores.shape(),
            right: (ep.query_labels.len(), n_joint),
        });
    }
    let (mut seen_n, mut seen_restricted, mut seen_joint) = (0, 0, 0);
    let (mut novel_n, mut novel_restricted, mut novel_joint) = (0, 0, 0);
    for (q, &label) in ep.query_labels.iter().enumerate() {
        let row = scores.row(q);
        let joint_hit = argmax(row) == label;
        if ep.is_novel_label(label) {
            novel_n += 1;
            novel_restricted += usize::from(argmax_in(row, n_seen..n_joint) == label);
            novel_joint += usize::from(joint_hit);
        } else {
            seen_n += 1;
            seen_restricted += usize::from(argmax_in(row, 0..n_seen) == label);
            seen_joint += usize::from(joint_hit);
        }
    }
    if seen_n == 0 || novel_n == 0 {
        return Err(Error::Eval(format!(
            "episode needs both seen and novel queries, has {seen_n} seen and {novel_n} novel"
        )));
    }
    let sj = percent(seen_joint, seen_n);
    let nj = percent(novel_joint, novel_n);
    Ok(EpisodeMetrics([
        percent(seen_restricted, seen_n),
        percent(novel_restricted, novel_n),
        percent(seen_joint + novel_joint, seen_n + novel_n),
        sj,
        nj,
        harmonic_mean(sj, nj),
    ]))
}

pub fn episode_metrics<S: Scorer + ?Sized>(scorer: &S, ep: &Episode) -> Result<EpisodeMetrics> {
    metrics_from_scores(ep, &scorer.scores(ep)?)
}

/// Mean and 95% confidence half-width `1.96·sd/√n` of one measure.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub ci95: f64,
}

impl Summary {
    /// Uses the sample standard deviation (`n − 1`); a single value has zero
    /// interval.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        if values.is_empty() {
            return Summary { mean: f64::NAN, ci95: f64::NAN };
        }
        let mean = values.iter().sum::<f64>() / n;
        if values.len() < 2 {
            return Summary { mean, ci95: 0.0 };
        }
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Summary {
            mean,
            ci95: 1.96 * var.sqrt() / n.sqrt(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pool: NovelPool,
    pub shape: EpisodeShape,
    pub n_episodes: usize,
    pub seed: u64,
    /// Fan episodes out over worker threads. Results do not depend on it.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pool: NovelPool::Test,
            shape: EpisodeShape::TEST_DEFAULT,
            n_episodes: 600,
            seed: 0,
            parallel: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seen_seen: Summary,
    pub novel_novel: Summary,
    pub joint_joint: Summary,
    pub seen_joint: Summary,
    pub novel_joint: Summary,
    pub h_mean: Summary,
    pub n_episodes: usize,
    pub eval: EvalConfig,
    /// Echo of whatever produced the scores, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    #[serde(skip)]
    pub episodes: Vec<EpisodeMetrics>,
}

impl MetricsReport {
    pub fn from_episodes(episodes: Vec<EpisodeMetrics>, eval: EvalConfig) -> Self {
        let column = |m: Measure| Summary::of(&episodes.iter().map(|e| e.get(m)).collect::<Vec<_>>());
        Self {
            seen_seen: column(Measure::SeenSeen),
            novel_novel: column(Measure::NovelNovel),
            joint_joint: column(Measure::JointJoint),
            seen_joint: column(Measure::SeenJoint),
            novel_joint: column(Measure::NovelJoint),
            h_mean: column(Measure::HMean),
            n_episodes: episodes.len(),
            eval,
            config: None,
            episodes,
        }
    }

    pub fn get(&self, m: Measure) -> Summary {
        match m {
            Measure::SeenSeen => self.seen_seen,
            Measure::NovelNovel => self.novel_novel,
            Measure::JointJoint => self.joint_joint,
            Measure::SeenJoint => self.seen_joint,
            Measure::NovelJoint => self.novel_joint,
            Measure::HMean => self.h_mean,
        }
    }

    /// The mean of per-episode H-means cannot exceed the H-mean of the mean
    /// Seen-Joint and Novel-Joint accuracies.
    pub fn satisfies_jensen(&self) -> bool {
        self.h_mean.mean <= harmonic_mean(self.seen_joint.mean, self.novel_joint.mean) + 1e-9
    }

    /// One row per measure: `measure,mean,ci95`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("measure,mean,ci95\n");
        for m in Measure::ALL {
            let s = self.get(m);
            writeln!(out, "{},{},{}", m.name(), s.mean, s.ci95).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Writes `metrics.csv` and `metrics.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("metrics.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("metrics.json");
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))
    }
}

/// Samples the `i`-th evaluation episode; the same `(seed, i)` always gives
/// the same episode, regardless of thread scheduling.
pub fn evaluation_episode(ds: &Dataset, cfg: &EvalConfig, i: usize) -> Result<Episode> {
    let mut rng = rng_from(derive_seed(cfg.seed, stream::EVALUATION, i as u64));
    sample_test_episode(ds, cfg.pool, &cfg.shape, &mut rng)
}

/// Runs the meta-test protocol over `cfg.n_episodes` episodes.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, ds: &Dataset, cfg: &EvalConfig) -> Result<MetricsReport> {
    if cfg.n_episodes == 0 {
        return Err(Error::Eval("evaluation needs at least one episode".into()));
    }
    let one = |i: usize| episode_metrics(scorer, &evaluation_episode(ds, cfg, i)?);
    let episodes: Vec<EpisodeMetrics> = if cfg.parallel {
        (0..cfg.n_episodes).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..cfg.n_episodes).map(one).collect::<Result<_>>()?
    };
    Ok(MetricsReport::from_episodes(episodes, *cfg))
}

/// One trained scorer per shot count, each evaluated with `K` support
/// instances per novel class.
pub fn k_sweep<S, F>(mut factory: F, ds: &Dataset, ks: &[usize], cfg: &EvalConfig) -> Result<Vec<(usize, MetricsReport)>>
where
    S: Scorer,
    F: FnMut(usize) -> Result<S>,
{
    ks.iter()
        .map(|&k| {
            let scorer = factory(k)?;
            let cfg = EvalConfig {
                shape: cfg.shape.with_k(k),
                ..*cfg
            };
            Ok((k, evaluate(&scorer, ds, &cfg)?))
        })
        .collect()
}

/// Table of `k,<measure>,<measure>_ci95...` rows.
pub fn k_sweep_csv(rows: &[(usize, MetricsReport)]) -> String {
    let mut out = String::from("k");
    for m in Measure::ALL {
        write!(out, ",{0},{0}_ci95", m.name()).unwrap();
    }
    out.push('\n');
    for (k, r) in rows {
        write!(out, "{k}").unwrap();
        for m in Measure::ALL {
            let s = r.get(m);
            write!(out, ",{},{}", s.mean, s.ci95).unwrap();
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::episodes::{generate_synthetic, SynthSpec};
    use proptest::prelude::*;

    /// Scores every query's true class highest.
    struct Oracle;

    impl Scorer for Oracle {
        fn scores(&self, ep: &Episode) -> Result<Matrix> {
            Ok(Matrix::from_fn(ep.query_labels.len(), ep.n_joint(), |q, j| {
                f64::from(u8::from(ep.query_labels[q] == j))
            }))
        }
    }

    /// Always prefers the first seen class.
    struct SeenBiased;

    impl Scorer for SeenBiased {
        fn scores(&self, ep: &Episode) -> Result<Matrix> {
            let n_seen = ep.n_seen();
            Ok(Matrix::from_fn(ep.query_labels.len(), ep.n_joint(), |q, j| {
                let label = ep.query_labels[q];
                if j == 0 {
                    2.0
                } else if j == label {
                    1.0
                } else if j < n_seen {
                    0.5
                } else {
                    0.0
                }
            }))
        }
    }

    fn dataset() -> Dataset {
        generate_synthetic(&SynthSpec {
            n_train: 12,
            n_novel_val: 5,
            n_novel_test: 6,
            d_attr: 4,
            d_in: 6,
            per_class: 40,
            seed: 1,
            ..SynthSpec::default()
        })
        .unwrap()
    }

    fn cfg(n: usize) -> EvalConfig {
        EvalConfig {
            n_episodes: n,
            seed: 4,
            ..EvalConfig::default()
        }
    }

    #[test]
    fn harmonic_mean_examples() {
        assert_eq!(harmonic_mean(7.5, 7.5), 7.5);
        assert_eq!(harmonic_mean(3.0, 0.0), 0.0);
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        assert!((harmonic_mean(58.54, 40.30) - 47.74).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn harmonic_below_geometric_below_arithmetic(a in 0.0..100.0f64, b in 0.0..100.0f64) {
            let h = harmonic_mean(a, b);
            let g = (a * b).sqrt();
            prop_assert!(h <= g + 1e-9 && g <= (a + b) / 2.0 + 1e-9);
        }
    }

    #[test]
    fn oracle_scores_one_hundred_everywhere() {
        let r = evaluate(&Oracle, &dataset(), &cfg(20)).unwrap();
        for m in Measure::ALL {
            assert_eq!(r.get(m), Summary { mean: 100.0, ci95: 0.0 }, "{m}");
        }
    }

    #[test]
    fn seen_bias_zeroes_novel_joint_but_not_novel_novel() {
        let r = evaluate(&SeenBiased, &dataset(), &cfg(10)).unwrap();
        assert_eq!(r.novel_joint.mean, 0.0);
        assert_eq!(r.novel_novel.mean, 100.0);
        assert_eq!(r.h_mean.mean, 0.0);
        assert!(r.satisfies_jensen());
    }

    #[test]
    fn restricted_accuracy_never_below_joint() {
        let ds = dataset();
        let m = Model::new(&crate::model::ModelConfig { d_in: 6, d: 4, ..Default::default() }, &ds, 0).unwrap();
        for e in evaluate(&m, &ds, &cfg(30)).unwrap().episodes {
            assert!(e.get(Measure::NovelNovel) >= e.get(Measure::NovelJoint));
            assert!(e.get(Measure::SeenSeen) >= e.get(Measure::SeenJoint));
            assert!(e.get(Measure::HMean) <= e.get(Measure::SeenJoint).max(e.get(Measure::NovelJoint)));
        }
    }

    #[test]
    fn evaluation_is_deterministic_and_schedule_free() {
        let ds = dataset();
        let m = Model::new(&crate::model::ModelConfig { d_in: 6, d: 4, ..Default::default() }, &ds, 0).unwrap();
        let par = evaluate(&m, &ds, &cfg(25)).unwrap();
        let ser = evaluate(&m, &ds, &EvalConfig { parallel: false, ..cfg(25) }).unwrap();
        assert_eq!(par.to_csv(), ser.to_csv());
        assert_eq!(par.episodes, ser.episodes);
    }

    #[test]
    fn missing_population_is_an_error() {
        let ds = dataset();
        let mut ep = evaluation_episode(&ds, &cfg(1), 0).unwrap();
        let keep = ep.novel_query_positions();
        ep.query_labels = keep.iter().map(|&i| ep.query_labels[i]).collect();
        ep.queries = ep.queries.select_rows(&keep);
        assert!(matches!(episode_metrics(&Oracle, &ep), Err(Error::Eval(_))));
    }

    #[test]
    fn summary_uses_sample_deviation() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.ci95 - 1.96 * 2f64.sqrt() / 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(Summary::of(&[5.0]).ci95, 0.0);
    }

    #[test]
    fn csv_has_one_row_per_measure() {
        let r = evaluate(&Oracle, &dataset(), &cfg(3)).unwrap();
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 7);
        assert!(csv.starts_with("measure,mean,ci95\nseen_seen,100,0\n"));
        let back: MetricsReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.h_mean, r.h_mean);
    }
}
