use std::fs;
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use rand::Rng;

use gcgpn::diffcore::ParamSet;
use gcgpn::episodes::{generate_synthetic, sample_train_episode, save_dataset, Dataset, EpisodeShape, SynthSpec};
use gcgpn::eval::{evaluate, k_sweep, k_sweep_csv, Measure, MetricsReport};
use gcgpn::model::{ExtractorConfig, Model, ModelConfig, Objective};
use gcgpn::operators::{ClassSimilarity, Taxonomy};
use gcgpn::rng::rng_from;
use gcgpn::trainer::{train, write_history, TrainConfig, TrainedModel};

use crate::config::{OperatorSource, RunConfig};

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

/// Creates the output directory and echoes the effective config into it.
pub fn prepare(cfg: &RunConfig) -> Result<()> {
    let dir = cfg.out_dir();
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    write(&dir.join("config.toml"), &cfg.to_toml()?)
}

pub fn synth(cfg: &RunConfig) -> Result<()> {
    let ds = generate_synthetic(&cfg.data.synth)?;
    let dir = cfg.out_dir().join("dataset");
    save_dataset(&ds, &dir)?;
    println!("wrote {} classes to {}", ds.num_classes(), dir.display());
    Ok(())
}

pub fn build_operator(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.data.load()?;
    let ids = ds.class_ids();
    let sim = match cfg.operator.kind {
        OperatorSource::AttributeCosine => {
            let attrs = ds
                .classes()
                .iter()
                .map(|c| c.attributes.clone().with_context(|| format!("class `{}` has no attributes", c.id)))
                .collect::<Result<Vec<_>>>()?;
            ClassSimilarity::from_attributes(&ids, &attrs)?
        }
        OperatorSource::TaxonomyPath => {
            let path = cfg
                .operator
                .taxonomy
                .as_deref()
                .context("operator.taxonomy: required when operator.kind = \"taxonomy_path\"")?;
            ClassSimilarity::from_taxonomy(&Taxonomy::load(path)?, &ids)?
        }
    };
    let path = cfg.out_dir().join("similarity.csv");
    sim.save(&path)?;
    println!("wrote {}×{} similarity to {}", ids.len(), ids.len(), path.display());
    Ok(())
}

fn train_variant(cfg: &RunConfig, ds: &Dataset, model_cfg: &ModelConfig, train_cfg: &TrainConfig) -> Result<TrainedModel> {
    let model = Model::new(model_cfg, ds, cfg.model.init_seed)?;
    Ok(train(model, ds, train_cfg)?)
}

pub fn train_cmd(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.data.load()?;
    let model_cfg = cfg.model.resolve(None)?;
    let trained = train_variant(cfg, &ds, &model_cfg, &cfg.train)?;
    let dir = cfg.out_dir();
    trained.model.save(&dir.join("model.ckpt"))?;
    write_history(&trained.history, &dir.join("history.csv"))?;
    match trained.best_metric {
        Some(m) => println!("best epoch {} with validation {} = {m:.2}", trained.best_epoch, cfg.train.early_stopping.monitor),
        None => println!("trained {} epochs", trained.history.len()),
    }
    Ok(())
}

fn print_report(r: &MetricsReport) {
    for m in Measure::ALL {
        let s = r.get(m);
        println!("{:<12} {:6.2} ± {:.2}", m.name(), s.mean, s.ci95);
    }
}

pub fn eval_cmd(cfg: &RunConfig) -> Result<()> {
    let path = cfg.checkpoint.as_deref().context("checkpoint: required by `eval`")?;
    let ds = cfg.data.load()?;
    let model = Model::load(path)?;
    let mut report = evaluate(&model, &ds, &cfg.eval)?;
    report.config = Some(serde_json::to_value(model.config())?);
    let missing: Vec<&str> = [Measure::SeenJoint, Measure::NovelJoint]
        .into_iter()
        .filter(|&m| !report.get(m).mean.is_finite())
        .map(Measure::name)
        .collect();
    ensure!(missing.is_empty(), "non-finite metrics: {}", missing.join(", "));
    report.write(&cfg.out_dir())?;
    print_report(&report);
    Ok(())
}

pub fn ablate(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.data.load()?;
    let mut table = String::from("variant");
    for m in Measure::ALL {
        table.push_str(&format!(",{0},{0}_ci95", m.name()));
    }
    table.push('\n');
    for name in &cfg.ablate.variants {
        let model_cfg = cfg.model.resolve(Some(name))?;
        let trained = train_variant(cfg, &ds, &model_cfg, &cfg.train).with_context(|| format!("training `{name}`"))?;
        let report = evaluate(&trained.model, &ds, &cfg.eval)?;
        table.push_str(name);
        for m in Measure::ALL {
            let s = report.get(m);
            table.push_str(&format!(",{},{}", s.mean, s.ci95));
        }
        table.push('\n');
        println!("{name:<20} H = {:6.2} ± {:.2}", report.h_mean.mean, report.h_mean.ci95);
    }
    write(&cfg.out_dir().join("ablation.csv"), &table)
}

/// One model per shot count, each trained and evaluated with that `K`.
pub fn sweep_k(cfg: &RunConfig) -> Result<()> {
    let ds = cfg.data.load()?;
    let model_cfg = cfg.model.resolve(None)?;
    let rows = k_sweep(
        |k| {
            let train_cfg = TrainConfig {
                train_shape: cfg.train.train_shape.with_k(k),
                val_shape: cfg.train.val_shape.with_k(k),
                ..cfg.train.clone()
            };
            train_variant(cfg, &ds, &model_cfg, &train_cfg)
                .map(|t| t.model)
                .map_err(|e| gcgpn::Error::Config(format!("training with K = {k}: {e:#}")))
        },
        &ds,
        &cfg.sweep.ks,
        &cfg.eval,
    )?;
    for (k, r) in &rows {
        println!("K = {k:<3} H = {:6.2} ± {:.2}", r.h_mean.mean, r.h_mean.ci95);
    }
    write(&cfg.out_dir().join("k_sweep.csv"), &k_sweep_csv(&rows))
}

/// Finite-difference check of every requested variant on a small task:
/// 5 training classes and 2-way episodes, so 3 seen classes per episode.
pub fn gradcheck(cfg: &RunConfig) -> Result<()> {
    let g = &cfg.gradcheck;
    let seed = cfg.seed.unwrap_or(0);
    let ds = generate_synthetic(&SynthSpec {
        n_train: 5,
        n_novel_val: 3,
        n_novel_test: 3,
        d_attr: 4,
        d_in: 6,
        per_class: 12,
        seed,
        ..SynthSpec::default()
    })?;
    let shape = EpisodeShape {
        n_way: 2,
        k_shot: 2,
        q_novel: 2,
        b_seen: 1,
    };
    let base = ModelConfig {
        extractor: ExtractorConfig::Mlp { hidden: vec![8] },
        d_in: 6,
        d: 4,
        ..cfg.model.base.clone()
    };
    let section = crate::config::ModelSection {
        base,
        ..cfg.model.clone()
    };
    let mut rng = rng_from(seed);
    let mut report = String::from("variant,max_rel_error,entries\n");
    let mut worst = 0.0f64;
    for name in &g.variants {
        let mut model = Model::new(&section.resolve(Some(name))?, &ds, seed)?;
        for p in model.params_mut().into_iter().filter(|p| p.trainable && !p.name.starts_with("extractor")) {
            for v in p.value.data_mut() {
                *v += g.perturbation * rng.random_range(-1.0..1.0);
            }
        }
        // Row normalization has a kink at the origin; avoid episodes where
        // an instance is mapped there.
        let ep = std::iter::repeat_with(|| sample_train_episode(&ds, &shape, &mut rng))
            .take(1000)
            .find_map(|ep| {
                let ep = ep.ok()?;
                let clear = [&ep.support, &ep.queries].iter().all(|x| {
                    model
                        .extract_features(x)
                        .map(|f| (0..f.rows()).all(|i| f.row_norm(i) > 1e-3))
                        .unwrap_or(false)
                });
                clear.then_some(ep)
            })
            .context("no episode with nonzero features found")?;
        let r = model.gradcheck(&ep, Objective::Gfsl, g.h)?;
        println!("{name:<20} max rel. error {:.3e} over {} entries", r.max_rel_error, r.entries_checked);
        report.push_str(&format!("{name},{},{}\n", r.max_rel_error, r.entries_checked));
        worst = worst.max(r.max_rel_error);
    }
    write(&cfg.out_dir().join("gradcheck.csv"), &report)?;
    println!("max rel. error {worst:.3e} (tolerance {:.0e})", g.tolerance);
    if !(worst < g.tolerance) {
        bail!("gradient check failed: {worst:.3e} >= {:.0e}", g.tolerance);
    }
    Ok(())
}
