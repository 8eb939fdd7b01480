//! Model parameters and the episode forward pass.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::config::{Activation, ExtractorConfig, ModelConfig, ThetaForm};
use crate::diffcore::{finite_difference_check, GradCheckReport, Matrix, ParamSet, Parameter, Tape, Var};
use crate::episodes::{Dataset, Episode, Portion};
use crate::error::{Error, Result};
use crate::operators::{
    auxiliary_operators, dynamic_prototype_operator, key_attention_operator, normalize_operator, ClassSimilarity,
    Layout, OperatorKind, ProtoMetric,
};
use crate::rng::rng_from;

/// Loss the model is trained against.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Cross-entropy over the joint label space, all queries.
    Gfsl,
    /// Cross-entropy over the novel classes only, novel queries only.
    Fsl,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct LinearHandles {
    pub weight: usize,
    pub bias: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct OperatorHandles {
    /// Per layer.
    pub scale: Vec<usize>,
    /// Per layer; `None` for a fixed identity transform.
    pub theta: Vec<Option<usize>>,
    pub log_temp: Option<usize>,
    pub keys: Option<usize>,
    pub projection: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct Handles {
    pub extractor: Vec<LinearHandles>,
    pub seen_prototypes: usize,
    pub log_tau: usize,
    pub operators: Vec<OperatorHandles>,
}

/// A GcGPN model: feature extractor, learnable seen-class prototypes, a
/// graph-convolution block over the joint prototypes, and a cosine
/// classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub(crate) config: ModelConfig,
    pub(crate) seen_ids: Vec<String>,
    pub(crate) seen_index: HashMap<String, usize>,
    pub(crate) params: Vec<Parameter>,
    pub(crate) handles: Handles,
    /// Side-information table for each operator that needs one.
    pub(crate) side_info: Vec<Option<ClassSimilarity>>,
}

/// Result of a forward pass without gradient recording.
#[derive(Clone, Debug)]
pub struct EpisodeOutput {
    /// Temperature-scaled cosine scores, one row per query.
    pub logits: Matrix,
    pub probabilities: Matrix,
    pub loss: f64,
    /// Labels the loss was computed against (joint or novel-only indices).
    pub labels: Vec<usize>,
    /// Initial prototypes `C` in joint order.
    pub initial_prototypes: Matrix,
    /// Updated prototypes `C'` in joint order.
    pub prototypes: Matrix,
    /// Extracted query features.
    pub query_features: Matrix,
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit_rows<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let mut m = Matrix::from_fn(rows, cols, |_, _| gaussian(rng));
    for i in 0..rows {
        let n = m.row_norm(i).max(1e-12);
        m.row_mut(i).iter_mut().for_each(|v| *v /= n);
    }
    m
}

impl Model {
    /// Builds a model whose seen label space is the training classes of `ds`.
    /// Side information for attribute operators comes from `ds`; file-backed
    /// operators read their `source`.
    pub fn new(config: &ModelConfig, ds: &Dataset, seed: u64) -> Result<Self> {
        let config = config.resolved()?;
        if config.d_in != ds.d_in() {
            return Err(Error::Shape {
                op: "Model::new",
                left: (config.d_in, 0),
                right: (ds.d_in(), 0),
            });
        }
        let ids: Vec<&str> = ds.class_ids();
        let mut side_info = Vec::with_capacity(config.operators.len());
        for op in &config.operators {
            let table = match op.kind {
                OperatorKind::AttributeCosine => {
                    let attrs: Vec<Vec<f64>> = ds
                        .classes()
                        .iter()
                        .map(|c| {
                            c.attributes
                                .clone()
                                .ok_or_else(|| Error::SideInfo(format!("class `{}` has no attributes", c.id)))
                        })
                        .collect::<Result<_>>()?;
                    Some(ClassSimilarity::from_attributes(&ids, &attrs)?)
                }
                OperatorKind::SemanticFile => {
                    Some(ClassSimilarity::load(op.source.as_deref().expect("validated"))?)
                }
                OperatorKind::TaxonomyPath => {
                    let tax = crate::operators::Taxonomy::load(op.source.as_deref().expect("validated"))?;
                    Some(ClassSimilarity::from_taxonomy(&tax, &ids)?)
                }
                _ => None,
            };
            let table = match (table, op.shuffle_seed) {
                (Some(t), Some(seed)) => Some(t.shuffled(seed)),
                (t, _) => t,
            };
            if let Some(t) = &table {
                for id in &ids {
                    t.position(id)?;
                }
            }
            side_info.push(table);
        }
        let seen_ids = ds.train_classes().into_iter().map(|c| ds.class(c).id.clone()).collect();
        Self::with_side_info(&config, seen_ids, side_info, seed)
    }

    /// Lower-level constructor with explicit seen classes and per-operator
    /// side information (`None` where an operator needs none).
    pub fn with_side_info(
        config: &ModelConfig,
        seen_ids: Vec<String>,
        side_info: Vec<Option<ClassSimilarity>>,
        seed: u64,
    ) -> Result<Self> {
        let config = config.resolved()?;
        if side_info.len() != config.operators.len() {
            return Err(Error::Config("one side-information slot per operator is required".into()));
        }
        for (op, table) in config.operators.iter().zip(&side_info) {
            if op.kind.is_semantic() && table.is_none() {
                return Err(Error::SideInfo(format!("operator `{}` has no similarity table", op.label())));
            }
        }
        if seen_ids.is_empty() {
            return Err(Error::Config("a model needs at least one seen class".into()));
        }
        let seen_index: HashMap<String, usize> = seen_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        if seen_index.len() != seen_ids.len() {
            return Err(Error::Config("duplicate seen class id".into()));
        }

        let mut rng = rng_from(seed);
        let mut params = Vec::new();
        let mut add = |p: Parameter| {
            params.push(p);
            params.len() - 1
        };

        let (d_in, d) = (config.d_in, config.d);
        let mut extractor = Vec::new();
        let widths: Vec<usize> = match &config.extractor {
            ExtractorConfig::Identity => vec![],
            ExtractorConfig::Linear => vec![d_in, d],
            ExtractorConfig::Mlp { hidden } => std::iter::once(d_in).chain(hidden.iter().copied()).chain([d]).collect(),
        };
        let n_layers = widths.len().saturating_sub(1);
        for (l, w) in widths.windows(2).enumerate() {
            let gain = if l + 1 < n_layers { 2.0 } else { 1.0 };
            let std = (gain / w[0] as f64).sqrt();
            let weight = add(Parameter::new(
                format!("extractor.{l}.weight"),
                Matrix::from_fn(w[0], w[1], |_, _| gaussian(&mut rng) * std),
            ));
            let bias = add(Parameter::new(format!("extractor.{l}.bias"), Matrix::zeros(1, w[1])));
            extractor.push(LinearHandles { weight, bias });
        }

        let seen_prototypes = add(Parameter::new("seen_prototypes", random_unit_rows(&mut rng, seen_ids.len(), d)));
        let log_tau = add(Parameter::new("log_tau", Matrix::scalar(config.tau_init.ln())));

        let mut operators = Vec::new();
        for (i, op) in config.operators.iter().enumerate() {
            let tag = format!("op{i}.{}", op.label());
            let mut scale = Vec::new();
            let mut theta = Vec::new();
            for l in 0..config.layers {
                let s = Parameter::new(format!("{tag}.scale.l{l}"), Matrix::scalar(1.0));
                // A lone operator's scale cancels in the row normalization that
                // follows, so it is kept fixed rather than left without gradient.
                let trainable = op.scale_trainable && config.operators.len() > 1;
                scale.push(add(if trainable { s } else { Parameter { trainable: false, ..s } }));
                theta.push(match config.theta_for(op) {
                    ThetaForm::FixedIdentity => None,
                    ThetaForm::Diagonal => Some(add(Parameter::new(format!("{tag}.theta.l{l}"), Matrix::filled(1, d, 1.0)))),
                    ThetaForm::Full => Some(add(Parameter::new(format!("{tag}.theta.l{l}"), Matrix::identity(d)))),
                });
            }
            let log_temp = op
                .has_temperature()
                .then(|| add(Parameter::new(format!("{tag}.log_temp"), Matrix::scalar(0.0))));
            let (keys, projection) = if op.kind == OperatorKind::KeyAttention {
                let dk = config.key_dim();
                let keys = add(Parameter::new(format!("{tag}.keys"), random_unit_rows(&mut rng, seen_ids.len(), dk)));
                let proj = if dk == d {
                    Matrix::identity(d)
                } else {
                    Matrix::from_fn(d, dk, |_, _| gaussian(&mut rng) / (d as f64).sqrt())
                };
                (Some(keys), Some(add(Parameter::new(format!("{tag}.projection"), proj))))
            } else {
                (None, None)
            };
            operators.push(OperatorHandles {
                scale,
                theta,
                log_temp,
                keys,
                projection,
            });
        }

        Ok(Self {
            config,
            seen_ids,
            seen_index,
            params,
            handles: Handles {
                extractor,
                seen_prototypes,
                log_tau,
                operators,
            },
            side_info,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seen_ids(&self) -> &[String] {
        &self.seen_ids
    }

    pub fn side_info(&self) -> &[Option<ClassSimilarity>] {
        &self.side_info
    }

    pub fn parameters(&self) -> &[Parameter] {
        &self.params
    }

    pub fn parameter(&self, name: &str) -> Option<&Parameter> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn parameter_mut(&mut self, name: &str) -> Option<&mut Parameter> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn seen_prototypes(&self) -> &Matrix {
        &self.params[self.handles.seen_prototypes].value
    }

    pub fn set_seen_prototypes(&mut self, value: Matrix) -> Result<()> {
        let p = &mut self.params[self.handles.seen_prototypes];
        if p.value.shape() != value.shape() {
            return Err(Error::Shape {
                op: "set_seen_prototypes",
                left: p.value.shape(),
                right: value.shape(),
            });
        }
        p.value = value;
        Ok(())
    }

    /// Classifier temperature `τ`.
    pub fn tau(&self) -> f64 {
        self.params[self.handles.log_tau].value.as_scalar().exp()
    }

    /// Applies `f_ψ` to a batch of raw inputs.
    pub fn extract_features(&self, x: &Matrix) -> Result<Matrix> {
        let mut pass = Pass::new(self);
        let input = pass.tape.constant(x.clone());
        let z = pass.extract(input)?;
        Ok(pass.tape.value(z).clone())
    }

    /// Sets each seen prototype to the mean of the normalized features of its
    /// class's training instances (the prototypical-network recipe).
    pub fn set_seen_prototypes_from_data(&mut self, ds: &Dataset) -> Result<()> {
        let d = self.config.d;
        let mut protos = Matrix::zeros(self.seen_ids.len(), d);
        for (row, id) in self.seen_ids.iter().enumerate() {
            let ci = ds.class_index(id).ok_or_else(|| Error::UnknownClass(id.clone()))?;
            let class = ds.class(ci);
            let rows: Vec<usize> = class.portion(Portion::Train).collect();
            if rows.is_empty() {
                return Err(Error::Model(format!("class `{id}` has no training instances")));
            }
            let feats = crate::diffcore::row_normalize(&self.extract_features(&class.instances.select_rows(&rows))?);
            let out = protos.row_mut(row);
            for r in 0..feats.rows() {
                for (o, v) in out.iter_mut().zip(feats.row(r)) {
                    *o += v / rows.len() as f64;
                }
            }
        }
        self.set_seen_prototypes(protos)
    }

    /// Forward pass over the joint label space (no gradients).
    pub fn forward_episode(&self, ep: &Episode) -> Result<EpisodeOutput> {
        self.forward(ep, Objective::Gfsl)
    }

    /// Forward pass restricted to the novel classes and novel queries.
    pub fn forward_fsl(&self, ep: &Episode) -> Result<EpisodeOutput> {
        self.forward(ep, Objective::Fsl)
    }

    pub fn forward(&self, ep: &Episode, objective: Objective) -> Result<EpisodeOutput> {
        let mut pass = Pass::new(self);
        let out = pass.run(ep, objective)?;
        let t = &pass.tape;
        let log_probs = t.value(out.log_probs);
        Ok(EpisodeOutput {
            logits: t.value(out.logits).clone(),
            probabilities: log_probs.map(f64::exp),
            loss: t.value(out.loss).as_scalar(),
            labels: out.labels,
            initial_prototypes: t.value(out.initial).clone(),
            prototypes: t.value(out.prototypes).clone(),
            query_features: t.value(out.query_features).clone(),
        })
    }

    /// Loss only; convenient for finite differences.
    pub fn loss(&self, ep: &Episode, objective: Objective) -> Result<f64> {
        let mut pass = Pass::new(self);
        let out = pass.run(ep, objective)?;
        Ok(pass.tape.value(out.loss).as_scalar())
    }

    /// Runs forward and backward, adding the gradients into every parameter.
    /// Returns the loss.
    pub fn accumulate_gradients(&mut self, ep: &Episode, objective: Objective) -> Result<f64> {
        let (loss, deltas) = {
            let mut pass = Pass::new(self);
            let out = pass.run(ep, objective)?;
            let loss = pass.tape.value(out.loss).as_scalar();
            if !loss.is_finite() {
                return Ok(loss);
            }
            let grads = pass.tape.backward(out.loss)?;
            let deltas: Vec<(usize, Matrix)> = pass
                .bound
                .iter()
                .enumerate()
                .filter_map(|(i, v)| v.and_then(|v| grads.get(v).map(|g| (i, g.clone()))))
                .collect();
            (loss, deltas)
        };
        for (i, g) in deltas {
            self.params[i].accumulate(&g);
        }
        Ok(loss)
    }

    /// Compares tape gradients of the episode loss with central differences
    /// over every trainable parameter.
    pub fn gradcheck(&mut self, ep: &Episode, objective: Objective, h: f64) -> Result<GradCheckReport> {
        self.zero_grad();
        self.accumulate_gradients(ep, objective)?;
        let report = finite_difference_check(self, h, |m: &Model| m.loss(ep, objective).unwrap_or(f64::NAN));
        self.zero_grad();
        Ok(report)
    }

    fn seen_rows(&self, ids: &[String]) -> Result<Vec<usize>> {
        ids.iter()
            .map(|id| self.seen_index.get(id).copied().ok_or_else(|| Error::UnknownClass(id.clone())))
            .collect()
    }
}

impl ParamSet for Model {
    fn params(&self) -> Vec<&Parameter> {
        self.params.iter().collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Parameter> {
        self.params.iter_mut().collect()
    }
}

struct PassOutput {
    logits: Var,
    log_probs: Var,
    loss: Var,
    labels: Vec<usize>,
    initial: Var,
    prototypes: Var,
    query_features: Var,
}

/// One forward pass over a fresh tape.
struct Pass<'m> {
    model: &'m Model,
    tape: Tape,
    /// Tape leaf of each parameter, bound on first use.
    bound: Vec<Option<Var>>,
}

impl<'m> Pass<'m> {
    fn new(model: &'m Model) -> Self {
        Self {
            model,
            tape: Tape::new(),
            bound: vec![None; model.params.len()],
        }
    }

    fn param(&mut self, i: usize) -> Var {
        if let Some(v) = self.bound[i] {
            return v;
        }
        let p = &self.model.params[i];
        let v = if p.trainable {
            self.tape.var(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound[i] = Some(v);
        v
    }

    fn extract(&mut self, input: Var) -> Result<Var> {
        let expected = self.model.config.d_in;
        let got = self.tape.value(input).cols();
        if got != expected {
            return Err(Error::Shape {
                op: "extract_features",
                left: (self.tape.value(input).rows(), got),
                right: (0, expected),
            });
        }
        let layers = self.model.handles.extractor.clone();
        let mut h = input;
        for (l, lh) in layers.iter().enumerate() {
            let w = self.param(lh.weight);
            let b = self.param(lh.bias);
            h = self.tape.matmul(h, w)?;
            h = self.tape.add_row(h, b)?;
            if l + 1 < layers.len() {
                h = self.tape.relu(h);
            }
        }
        Ok(h)
    }

    /// Averages of normalized support features, one row per novel class.
    fn novel_prototypes(&mut self, support: Var, n_novel: usize, k: usize) -> Result<Var> {
        if k == 0 {
            return Err(Error::Model("empty support set".into()));
        }
        let normalized = self.tape.row_normalize(support);
        let avg = Matrix::from_fn(n_novel, n_novel * k, |i, j| if j / k == i { 1.0 / k as f64 } else { 0.0 });
        let avg = self.tape.constant(avg);
        self.tape.matmul(avg, normalized)
    }

    /// One normalized graph-convolution layer:
    /// `ρ(Σ_B s_B · rownorm(B · rownorm(C) · θ_B))`.
    fn conv_layer(&mut self, protos: Var, novel_init: Var, layer: usize, ctx: &EpisodeContext) -> Result<Var> {
        let model = self.model;
        let cbar = self.tape.row_normalize(protos);
        let layout = ctx.layout;
        let mut total: Option<Var> = None;
        for (oi, op) in model.config.operators.iter().enumerate() {
            let oh = &model.handles.operators[oi];
            let aggregated = match op.kind {
                OperatorKind::Identity => cbar,
                OperatorKind::AuxSeenSelf | OperatorKind::AuxNovelSelf => {
                    let (b1, b2) = auxiliary_operators(layout);
                    let b = self.tape.constant(if op.kind == OperatorKind::AuxSeenSelf { b1 } else { b2 });
                    self.tape.matmul(b, cbar)?
                }
                OperatorKind::KeyAttention => {
                    let keys_all = self.param(oh.keys.expect("key attention has keys"));
                    let keys = self.tape.gather_rows(keys_all, &ctx.seen_rows)?;
                    let proj = self.param(oh.projection.expect("key attention has a projection"));
                    let lt = self.param(oh.log_temp.expect("key attention has a temperature"));
                    let b = key_attention_operator(&mut self.tape, keys, novel_init, proj, lt, layout)?;
                    self.tape.matmul(b, cbar)?
                }
                kind => {
                    let raw = match kind {
                        OperatorKind::ProtoCosine => dynamic_prototype_operator(&mut self.tape, cbar, ProtoMetric::Cosine)?,
                        OperatorKind::ProtoL2 => dynamic_prototype_operator(&mut self.tape, cbar, ProtoMetric::NegSqL2)?,
                        _ => {
                            let table = model.side_info[oi].as_ref().expect("semantic operators carry a table");
                            self.tape.constant(table.select(&ctx.side_positions[oi]))
                        }
                    };
                    let b = match oh.log_temp {
                        Some(lt) => {
                            let lt = self.param(lt);
                            normalize_operator(&mut self.tape, raw, lt, layout, op.blocks)?
                        }
                        None if op.blocks.is_all() => raw,
                        None => self.tape.mask(raw, layout.mask(op.blocks))?,
                    };
                    self.tape.matmul(b, cbar)?
                }
            };
            let transformed = match oh.theta[layer] {
                None => aggregated,
                Some(ti) => {
                    let theta = self.param(ti);
                    if self.tape.value(theta).rows() == 1 {
                        self.tape.mul_row(aggregated, theta)?
                    } else {
                        self.tape.matmul(aggregated, theta)?
                    }
                }
            };
            let normalized = self.tape.row_normalize(transformed);
            let s = self.param(oh.scale[layer]);
            let term = if model.params[oh.scale[layer]].trainable || model.params[oh.scale[layer]].value.as_scalar() != 1.0 {
                self.tape.scale_by(normalized, s)?
            } else {
                normalized
            };
            total = Some(match total {
                None => term,
                Some(acc) => self.tape.add(acc, term)?,
            });
        }
        let sum = total.expect("validated: operator set is non-empty");
        Ok(match model.config.rho {
            Activation::Identity => sum,
            Activation::Relu => self.tape.relu(sum),
        })
    }

    fn run(&mut self, ep: &Episode, objective: Objective) -> Result<PassOutput> {
        let model = self.model;
        let ctx = EpisodeContext::new(model, ep)?;
        let (n_novel, k) = (ep.n_novel(), ep.k_shot);
        if ep.support.rows() != n_novel * k {
            return Err(Error::Model(format!(
                "episode has {} support rows, expected {} classes × {k} shots",
                ep.support.rows(),
                n_novel
            )));
        }

        // Extract support and query features in one batch.
        let mut stacked = ep.support.clone().into_data();
        stacked.extend_from_slice(ep.queries.data());
        let batch = Matrix::new(ep.support.rows() + ep.queries.rows(), ep.support.cols(), stacked)?;
        let input = self.tape.constant(batch);
        let feats = self.extract(input)?;
        let support_idx: Vec<usize> = (0..ep.support.rows()).collect();
        let query_idx: Vec<usize> = (ep.support.rows()..ep.support.rows() + ep.queries.rows()).collect();
        let support = self.tape.gather_rows(feats, &support_idx)?;
        let queries = self.tape.gather_rows(feats, &query_idx)?;

        let novel_init = self.novel_prototypes(support, n_novel, k)?;
        let seen_all = self.param(model.handles.seen_prototypes);
        let seen = self.tape.gather_rows(seen_all, &ctx.seen_rows)?;
        let initial = self.tape.concat_rows(&[seen, novel_init])?;

        let mut protos = initial;
        for layer in 0..model.config.layers {
            protos = self.conv_layer(protos, novel_init, layer, &ctx)?;
        }

        let (class_protos, query_feats, labels) = match objective {
            Objective::Gfsl => (protos, queries, ep.query_labels.clone()),
            Objective::Fsl => {
                let novel_rows: Vec<usize> = (ep.n_seen()..ep.n_joint()).collect();
                let novel_protos = self.tape.gather_rows(protos, &novel_rows)?;
                let positions = ep.novel_query_positions();
                let q = self.tape.gather_rows(queries, &positions)?;
                let labels = positions.iter().map(|&i| ep.query_labels[i] - ep.n_seen()).collect();
                (novel_protos, q, labels)
            }
        };

        let cos = self.tape.cosine_similarity(query_feats, class_protos)?;
        let log_tau = self.param(model.handles.log_tau);
        let tau = self.tape.exp(log_tau);
        let logits = self.tape.scale_by(cos, tau)?;
        let log_probs = self.tape.log_softmax_rows(logits);
        let loss = self.tape.cross_entropy(log_probs, &labels)?;
        Ok(PassOutput {
            logits,
            log_probs,
            loss,
            labels,
            initial,
            prototypes: protos,
            query_features: queries,
        })
    }
}

/// Per-episode lookups into model-owned tables.
struct EpisodeContext {
    layout: Layout,
    seen_rows: Vec<usize>,
    side_positions: Vec<Vec<usize>>,
}

impl EpisodeContext {
    fn new(model: &Model, ep: &Episode) -> Result<Self> {
        if ep.joint_ids.len() != ep.n_joint() {
            return Err(Error::Model("episode class ids do not match its label space".into()));
        }
        let seen_rows = model.seen_rows(ep.seen_ids())?;
        let side_positions = model
            .side_info
            .iter()
            .map(|t| match t {
                Some(t) => ep.joint_ids.iter().map(|id| t.position(id)).collect::<Result<Vec<_>>>(),
                None => Ok(Vec::new()),
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layout: Layout::new(ep.n_seen(), ep.n_novel()),
            seen_rows,
            side_positions,
        })
    }
}

/// Cosine classifier: row-wise softmax of `τ · cos(z, c'_m)` over all
/// prototypes.
pub fn classify(queries: &Matrix, prototypes: &Matrix, tau: f64) -> Result<Matrix> {
    let cos = crate::diffcore::cosine_similarity(queries, prototypes)?;
    Ok(crate::diffcore::softmax_rows(&cos, tau))
}
