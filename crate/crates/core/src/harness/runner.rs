//! Seeded training runs, evaluation, timing and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use rand::seq::SliceRandom;

use super::config::{
    DatasetSource, ExperimentConfig, ModelSelection, Parts, SplitSpec, Task, TIMING_BATCH,
};
use super::metrics::{accuracy, auroc, average_precision, macro_f1, mae, micro_f1, rmse};
use super::record::{peak_rss_bytes, RecordAppender, ResultRecord, RunStatus};
use crate::error::{Error, Result};
use crate::graph::{load_edgelist_graph, load_tudataset_as, Graph, Target, TargetKind};
use crate::layers::HeadKind;
use crate::models::{
    Architecture, Checkpoint, HierarchicalConfig, HierarchicalModel, Prepared, UNetConfig,
    UNetModel,
};
use crate::perturb::{flip_labels, Perturbation};
use crate::rng::{stream, Stream};
use crate::splits::{
    closeness_keys, closeness_split, degree_keys, degree_split, density_keys, density_split, kfold,
    random_split, size_keys, size_split, Split,
};
use crate::tensor::{Adam, Binding, Matrix, Params, Tape, Tensor};

/// Graphs scored per forward pass at evaluation time.
const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    /// Graph-level task: one target per graph.
    Graphs(Vec<Graph>),
    /// Node-level task: one graph with node labels.
    Nodes(Graph),
}

impl Dataset {
    pub fn load(source: &DatasetSource, task: Task) -> Result<Self> {
        let kind = match task {
            Task::GraphRegression => TargetKind::Value,
            _ => TargetKind::Class,
        };
        match source {
            DatasetSource::TuDataset { dir, name } => {
                Ok(Dataset::Graphs(load_tudataset_as(dir, name, kind)?))
            }
            DatasetSource::EdgeList {
                edges,
                features,
                labels,
            } => Ok(Dataset::Nodes(load_edgelist_graph(
                edges, features, labels,
            )?)),
            DatasetSource::InMemory { name } => Err(Error::Config(format!(
                "in-memory dataset {name} cannot be loaded"
            ))),
        }
    }

    /// Number of entities a split ranges over.
    pub fn len(&self) -> usize {
        match self {
            Dataset::Graphs(g) => g.len(),
            Dataset::Nodes(g) => g.n(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A trained network of either architecture.
#[derive(Debug, Clone, PartialEq)]
pub enum TrainedModel {
    Hierarchical(HierarchicalModel),
    UNet(UNetModel),
}

impl TrainedModel {
    pub fn checkpoint(&self, seed: u64) -> Checkpoint {
        match self {
            TrainedModel::Hierarchical(m) => Checkpoint::hierarchical(m, seed),
            TrainedModel::UNet(m) => Checkpoint::unet(m, seed),
        }
    }

    pub fn from_checkpoint(ck: Checkpoint) -> Result<Self> {
        match ck.architecture {
            Architecture::Hierarchical(_) => {
                Ok(TrainedModel::Hierarchical(ck.into_hierarchical()?))
            }
            Architecture::Unet(_) => Ok(TrainedModel::UNet(ck.into_unet()?)),
        }
    }
}

/// One finished run: its record, split and (unless it failed) the model.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub record: ResultRecord,
    pub split: Split,
    pub model: Option<TrainedModel>,
}

#[derive(Debug, Clone)]
struct GraphPlan {
    graphs: Vec<Graph>,
    model: HierarchicalConfig,
    classes: Option<usize>,
}

#[derive(Debug, Clone)]
struct NodePlan {
    graph: Graph,
    model: UNetConfig,
    classes: usize,
}

#[derive(Debug, Clone)]
enum Plan {
    Graph(GraphPlan),
    Node(NodePlan),
}

fn class_count(labels: impl Iterator<Item = usize>) -> Result<usize> {
    let classes = labels.max().map_or(0, |m| m + 1);
    if classes < 2 {
        return Err(Error::Config(
            "classification needs at least two classes".into(),
        ));
    }
    Ok(classes)
}

/// Checks the data against the task and fixes every architecture choice.
fn plan(cfg: &ExperimentConfig, data: &Dataset) -> Result<Plan> {
    cfg.validate()?;
    let plan = match (cfg.task, data) {
        (Task::NodeClassification, Dataset::Nodes(g)) => {
            let labels = g
                .node_labels()
                .ok_or_else(|| Error::Ingestion("node classification needs node labels".into()))?;
            let classes = class_count(labels.iter().copied())?;
            let mut model =
                UNetConfig::new(g.feature_dim(), classes, cfg.pooler.spec(g.n() as f64));
            model.hidden = cfg.hidden;
            model.fusion = cfg.fusion;
            UNetModel::new(model, &mut stream(0, Stream::Init))?;
            Plan::Node(NodePlan {
                graph: g.clone(),
                model,
                classes,
            })
        }
        (Task::GraphClassification | Task::GraphRegression, Dataset::Graphs(graphs)) => {
            let first = graphs
                .first()
                .ok_or(Error::Empty("dataset has no graphs"))?;
            let d_in = first.feature_dim();
            if let Some((i, g)) = graphs
                .iter()
                .enumerate()
                .find(|(_, g)| g.feature_dim() != d_in)
            {
                return Err(Error::Ingestion(format!(
                    "graph {i} has {} features, expected {d_in}",
                    g.feature_dim()
                )));
            }
            let targets: Vec<Target> = graphs
                .iter()
                .enumerate()
                .map(|(i, g)| {
                    g.target()
                        .ok_or_else(|| Error::Ingestion(format!("graph {i} has no target")))
                })
                .collect::<Result<_>>()?;
            let (head, classes) = if cfg.task == Task::GraphClassification {
                let labels: Vec<usize> = targets
                    .iter()
                    .map(|t| {
                        t.class().ok_or_else(|| {
                            Error::Ingestion("classification needs integer labels".into())
                        })
                    })
                    .collect::<Result<_>>()?;
                let c = class_count(labels.into_iter())?;
                (HeadKind::Classification { classes: c }, Some(c))
            } else {
                (HeadKind::Regression, None)
            };
            let avg_nodes = graphs.iter().map(|g| g.n() as f64).sum::<f64>() / graphs.len() as f64;
            let mut model = HierarchicalConfig::new(d_in, head, cfg.pooler.spec(avg_nodes));
            model.hidden = cfg.hidden;
            HierarchicalModel::new(model, &mut stream(0, Stream::Init))?;
            Plan::Graph(GraphPlan {
                graphs: graphs.clone(),
                model,
                classes,
            })
        }
        (task, _) => {
            return Err(Error::Config(format!(
                "dataset shape does not match task {}",
                task.name()
            )));
        }
    };
    Ok(plan)
}

fn make_split(
    cfg: &ExperimentConfig,
    plan: &Plan,
    seed: u64,
    fold: Option<usize>,
) -> Result<Split> {
    let n = match plan {
        Plan::Graph(p) => p.graphs.len(),
        Plan::Node(p) => p.graph.n(),
    };
    match (cfg.split, plan) {
        (SplitSpec::Random { fractions }, _) => random_split(n, fractions, seed),
        (SplitSpec::KFold { folds }, _) => {
            let f = fold.ok_or_else(|| Error::Config("kfold run without a fold index".into()))?;
            kfold(n, folds, seed)?
                .into_iter()
                .nth(f)
                .ok_or_else(|| Error::Config(format!("fold {f} out of range")))
        }
        (SplitSpec::Size, Plan::Graph(p)) => size_split(&p.graphs),
        (SplitSpec::Density, Plan::Graph(p)) => density_split(&p.graphs),
        (SplitSpec::Degree, Plan::Node(p)) => degree_split(&p.graph),
        (SplitSpec::Closeness(kind), Plan::Node(p)) => closeness_split(&p.graph, kind),
        (split, _) => Err(Error::Config(format!(
            "{} split does not fit the task",
            split.name()
        ))),
    }
}

fn selected(split: &Split, parts: Parts) -> Vec<usize> {
    let mut idx = Vec::new();
    for (on, part) in [
        (parts.train, &split.train),
        (parts.val, &split.val),
        (parts.test, &split.test),
    ] {
        if on {
            idx.extend_from_slice(part);
        }
    }
    idx.sort_unstable();
    idx
}

/// Distinct perturbation seed per graph of a dataset.
fn item_seed(seed: u64, i: usize) -> u64 {
    seed ^ (i as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)
}

fn perturb_graphs(
    cfg: &ExperimentConfig,
    plan: &GraphPlan,
    split: &Split,
    seed: u64,
) -> Result<Vec<Graph>> {
    let mut graphs = plan.graphs.clone();
    let Some(p) = cfg.perturb else {
        return Ok(graphs);
    };
    let idx = selected(split, cfg.perturb_parts);
    match p {
        Perturbation::FlipLabels { rate } => {
            let classes = plan
                .classes
                .ok_or_else(|| Error::Config("label flipping needs class labels".into()))?;
            let labels: Vec<usize> = idx
                .iter()
                .map(|&i| {
                    graphs[i]
                        .target()
                        .and_then(Target::class)
                        .expect("checked by plan")
                })
                .collect();
            let flipped = flip_labels(&labels, rate, classes, seed)?;
            for (&i, &l) in idx.iter().zip(&flipped) {
                graphs[i] = graphs[i].clone().with_target(Target::Class(l));
            }
        }
        structural => {
            for &i in &idx {
                graphs[i] = structural.apply(&graphs[i], item_seed(seed, i))?;
            }
        }
    }
    Ok(graphs)
}

/// Node tasks share one graph, so structure and features are perturbed
/// globally; label flips touch only the selected parts.
fn perturb_nodes(
    cfg: &ExperimentConfig,
    plan: &NodePlan,
    split: &Split,
    seed: u64,
) -> Result<(Graph, Vec<usize>)> {
    let g = &plan.graph;
    let mut labels = g.node_labels().expect("checked by plan").to_vec();
    let graph = match cfg.perturb {
        None => g.clone(),
        Some(Perturbation::FlipLabels { rate }) => {
            let idx = selected(split, cfg.perturb_parts);
            let picked: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
            for (&i, l) in idx
                .iter()
                .zip(flip_labels(&picked, rate, plan.classes, seed)?)
            {
                labels[i] = l;
            }
            g.clone()
        }
        Some(structural) => structural.apply(g, seed)?,
    };
    Ok((graph, labels))
}

fn argmax_rows(m: &Matrix) -> Vec<usize> {
    (0..m.rows())
        .map(|i| {
            let row = m.row(i);
            (0..row.len()).fold(0, |best, j| if row[j] > row[best] { j } else { best })
        })
        .collect()
}

/// `<prefix>_accuracy`, `_micro_f1`, `_macro_f1`, plus `_auroc` and
/// `_average_precision` for binary tasks whose part holds both classes.
fn class_metrics(
    log_probs: &Matrix,
    targets: &[usize],
    classes: usize,
    prefix: &str,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    let pred = argmax_rows(log_probs);
    out.insert(format!("{prefix}_accuracy"), accuracy(&pred, targets)?);
    out.insert(format!("{prefix}_micro_f1"), micro_f1(&pred, targets)?);
    out.insert(format!("{prefix}_macro_f1"), macro_f1(&pred, targets)?);
    if classes == 2 {
        let scores: Vec<f64> = (0..log_probs.rows())
            .map(|i| log_probs[(i, 1)].exp())
            .collect();
        let positive: Vec<bool> = targets.iter().map(|&t| t == 1).collect();
        match auroc(&scores, &positive) {
            Ok(v) => {
                out.insert(format!("{prefix}_auroc"), v);
                out.insert(
                    format!("{prefix}_average_precision"),
                    average_precision(&scores, &positive)?,
                );
            }
            Err(Error::UndefinedMetric(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

fn regression_metrics(
    pred: &Matrix,
    targets: &[f64],
    prefix: &str,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    out.insert(format!("{prefix}_rmse"), rmse(pred.as_slice(), targets)?);
    out.insert(format!("{prefix}_mae"), mae(pred.as_slice(), targets)?);
    Ok(())
}

/// Head outputs for `graphs`, one row each.
fn predict_graphs(model: &HierarchicalModel, graphs: &[&Prepared]) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(EVAL_CHUNK) {
        let mut tape = Tape::new();
        let bind = model.params.bind_frozen(&mut tape);
        let out = model.forward(&mut tape, &bind, chunk)?;
        let pred = tape.value(out.pred);
        rows.extend((0..pred.rows()).map(|i| pred.row(i).to_vec()));
    }
    Matrix::from_rows(&rows)
}

fn graph_part_metrics(
    model: &HierarchicalModel,
    prepared: &[Prepared],
    part: &[usize],
    prefix: &str,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    if part.is_empty() {
        return Ok(());
    }
    let graphs: Vec<&Prepared> = part.iter().map(|&i| &prepared[i]).collect();
    let pred = predict_graphs(model, &graphs)?;
    match model.config.head {
        HeadKind::Classification { classes } => {
            let targets =
                crate::models::class_targets(&graphs.iter().map(|g| g.target).collect::<Vec<_>>())?;
            class_metrics(&pred, &targets, classes, prefix, out)
        }
        HeadKind::Regression => {
            let targets: Vec<f64> = graphs
                .iter()
                .map(|g| g.target.map_or(f64::NAN, Target::as_f64))
                .collect();
            regression_metrics(&pred, &targets, prefix, out)
        }
    }
}

/// Validation score used for best-epoch selection; larger is better.
fn graph_val_score(model: &HierarchicalModel, prepared: &[Prepared], val: &[usize]) -> Result<f64> {
    let mut m = BTreeMap::new();
    graph_part_metrics(model, prepared, val, "val", &mut m)?;
    Ok(match model.config.head {
        HeadKind::Classification { .. } => m["val_accuracy"],
        HeadKind::Regression => -m["val_rmse"],
    })
}

/// Training-loop result before evaluation.
struct Trained {
    params: Params,
    losses: Vec<f64>,
    failure: Option<String>,
    seconds: f64,
}

impl Trained {
    fn failed(params: &Params, losses: Vec<f64>, epoch: usize, e: Error, start: Instant) -> Self {
        Self {
            params: params.clone(),
            losses,
            failure: Some(format!("non-finite training at epoch {epoch}: {e}")),
            seconds: start.elapsed().as_secs_f64(),
        }
    }
}

/// Backpropagates a finite loss and takes one optimizer step.
fn step(
    tape: &mut Tape,
    bind: &Binding,
    loss: Tensor,
    adam: &mut Adam,
    params: &mut Params,
) -> Result<f64> {
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("loss {value}")));
    }
    let grads = bind.gradients(&tape.backward(loss)?);
    adam.step(params, &grads)?;
    Ok(value)
}

/// Separates numeric breakdowns, which end a run, from other errors.
fn numeric_failure<T>(f: impl FnOnce() -> Result<T>) -> Result<std::result::Result<T, Error>> {
    match f() {
        Ok(v) => Ok(Ok(v)),
        Err(e @ Error::Numeric(_)) => Ok(Err(e)),
        Err(e) => Err(e),
    }
}

fn keep_best(best: &mut Option<(f64, Params)>, score: f64, params: &Params) {
    if best.as_ref().is_none_or(|(b, _)| score > *b) {
        *best = Some((score, params.clone()));
    }
}

fn train_graphs(
    cfg: &ExperimentConfig,
    model: &mut HierarchicalModel,
    prepared: &[Prepared],
    split: &Split,
    seed: u64,
) -> Result<Trained> {
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut shuffle = stream(seed, Stream::Shuffle);
    let mut order = split.train.clone();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best = None;
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let graphs: Vec<&Prepared> = batch.iter().map(|&i| &prepared[i]).collect();
            let targets: Vec<Option<Target>> = graphs.iter().map(|g| g.target).collect();
            let stepped = numeric_failure(|| {
                let mut tape = Tape::new();
                let bind = model.params.bind(&mut tape);
                let out = model.forward(&mut tape, &bind, &graphs)?;
                let loss = model.loss(&mut tape, &out, &targets, cfg.aux_weight)?;
                step(&mut tape, &bind, loss, &mut adam, &mut model.params)
            })?;
            let value = match stepped {
                Ok(v) => v,
                Err(e) => return Ok(Trained::failed(&model.params, losses, epoch, e, start)),
            };
            total += value * batch.len() as f64;
        }
        losses.push(total / order.len() as f64);
        if cfg.model_selection == ModelSelection::BestValidation {
            keep_best(
                &mut best,
                graph_val_score(model, prepared, &split.val)?,
                &model.params,
            );
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let params = best.map_or_else(|| model.params.clone(), |(_, p)| p);
    Ok(Trained {
        params,
        losses,
        failure: None,
        seconds,
    })
}

fn node_part_metrics(
    model: &UNetModel,
    prepared: &Prepared,
    labels: &[usize],
    part: &[usize],
    prefix: &str,
    out: &mut BTreeMap<String, f64>,
) -> Result<()> {
    if part.is_empty() {
        return Ok(());
    }
    let mut tape = Tape::new();
    let bind = model.params.bind_frozen(&mut tape);
    let result = model.forward(&mut tape, &bind, prepared)?;
    let log_probs = tape.value(result.log_probs).select_rows(part);
    let targets: Vec<usize> = part.iter().map(|&i| labels[i]).collect();
    class_metrics(&log_probs, &targets, model.config.classes, prefix, out)
}

fn train_nodes(
    cfg: &ExperimentConfig,
    model: &mut UNetModel,
    prepared: &Prepared,
    labels: &[usize],
    split: &Split,
) -> Result<Trained> {
    let mut adam = Adam::new(&model.params, cfg.lr);
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut best = None;
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let stepped = numeric_failure(|| {
            let mut tape = Tape::new();
            let bind = model.params.bind(&mut tape);
            let out = model.forward(&mut tape, &bind, prepared)?;
            let loss = model.loss(&mut tape, &out, labels, &split.train)?;
            step(&mut tape, &bind, loss, &mut adam, &mut model.params)
        })?;
        let value = match stepped {
            Ok(v) => v,
            Err(e) => return Ok(Trained::failed(&model.params, losses, epoch, e, start)),
        };
        losses.push(value);
        if cfg.model_selection == ModelSelection::BestValidation {
            let mut m = BTreeMap::new();
            node_part_metrics(model, prepared, labels, &split.val, "val", &mut m)?;
            keep_best(&mut best, m["val_accuracy"], &model.params);
        }
    }
    let seconds = start.elapsed().as_secs_f64();
    let params = best.map_or_else(|| model.params.clone(), |(_, p)| p);
    Ok(Trained {
        params,
        losses,
        failure: None,
        seconds,
    })
}

/// Split and perturbed inputs of one run.
enum RunData {
    Graph {
        prepared: Vec<Prepared>,
    },
    Node {
        prepared: Prepared,
        labels: Vec<usize>,
    },
}

fn run_data(cfg: &ExperimentConfig, plan: &Plan, split: &Split, seed: u64) -> Result<RunData> {
    Ok(match plan {
        Plan::Graph(p) => RunData::Graph {
            prepared: perturb_graphs(cfg, p, split, seed)?
                .iter()
                .map(Prepared::new)
                .collect(),
        },
        Plan::Node(p) => {
            let (graph, labels) = perturb_nodes(cfg, p, split, seed)?;
            RunData::Node {
                prepared: Prepared::new(&graph),
                labels,
            }
        }
    })
}

fn evaluate(model: &TrainedModel, data: &RunData, split: &Split) -> Result<BTreeMap<String, f64>> {
    let mut metrics = BTreeMap::new();
    match (model, data) {
        (TrainedModel::Hierarchical(m), RunData::Graph { prepared }) => {
            graph_part_metrics(m, prepared, &split.train, "train", &mut metrics)?;
            graph_part_metrics(m, prepared, &split.val, "val", &mut metrics)?;
            graph_part_metrics(m, prepared, &split.test, "test", &mut metrics)?;
        }
        (TrainedModel::UNet(m), RunData::Node { prepared, labels }) => {
            node_part_metrics(m, prepared, labels, &split.train, "train", &mut metrics)?;
            node_part_metrics(m, prepared, labels, &split.val, "val", &mut metrics)?;
            node_part_metrics(m, prepared, labels, &split.test, "test", &mut metrics)?;
        }
        _ => {
            return Err(Error::Config(
                "model architecture does not match the task".into(),
            ))
        }
    }
    Ok(metrics)
}

fn run_one(
    cfg: &ExperimentConfig,
    plan: &Plan,
    seed: u64,
    fold: Option<usize>,
) -> Result<RunOutput> {
    let split = make_split(cfg, plan, seed, fold)?;
    let data = run_data(cfg, plan, &split, seed)?;
    let mut init = stream(seed, Stream::Init);
    let (trained, model) = match (plan, &data) {
        (Plan::Graph(p), RunData::Graph { prepared }) => {
            let mut m = HierarchicalModel::new(p.model, &mut init)?;
            let t = train_graphs(cfg, &mut m, prepared, &split, seed)?;
            m.params = t.params.clone();
            (t, TrainedModel::Hierarchical(m))
        }
        (Plan::Node(p), RunData::Node { prepared, labels }) => {
            let mut m = UNetModel::new(p.model, &mut init)?;
            let t = train_nodes(cfg, &mut m, prepared, labels, &split)?;
            m.params = t.params.clone();
            (t, TrainedModel::UNet(m))
        }
        _ => unreachable!("run data follows the plan"),
    };
    let mut failure = trained.failure;
    let mut metrics = BTreeMap::new();
    if failure.is_none() {
        match numeric_failure(|| evaluate(&model, &data, &split))? {
            Ok(m) => metrics = m,
            Err(e) => failure = Some(format!("non-finite evaluation: {e}")),
        }
    }
    let failed = failure.is_some();
    let record = ResultRecord {
        digest: cfg.digest(),
        pooler: cfg.pooler.spec(4.0).name().into(),
        dataset: cfg.dataset.name(),
        seed,
        fold,
        status: if failed {
            RunStatus::Failed
        } else {
            RunStatus::Ok
        },
        failure,
        epoch_losses: trained.losses,
        metrics,
        seconds: trained.seconds,
        peak_rss_bytes: peak_rss_bytes(),
    };
    Ok(RunOutput {
        record,
        split,
        model: (!failed).then_some(model),
    })
}

fn jobs_of(cfg: &ExperimentConfig) -> Vec<(u64, Option<usize>)> {
    let folds: Vec<Option<usize>> = match cfg.split {
        SplitSpec::KFold { folds } => (0..folds).map(Some).collect(),
        _ => vec![None],
    };
    cfg.seeds
        .iter()
        .flat_map(|&s| folds.iter().map(move |&f| (s, f)))
        .collect()
}

/// Runs every (seed, fold) of `cfg` on `data`, `cfg.jobs` at a time.
/// Output order follows the seed list, then the fold index.
pub fn run_experiment_on(
    cfg: &ExperimentConfig,
    data: &Dataset,
    appender: Option<&RecordAppender>,
) -> Result<Vec<RunOutput>> {
    let plan = plan(cfg, data)?;
    let jobs = jobs_of(cfg);
    let results: Mutex<Vec<Option<Result<RunOutput>>>> =
        Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(&(seed, fold)) = jobs.get(i) else {
            break;
        };
        let out = run_one(cfg, &plan, seed, fold).and_then(|o| {
            if let Some(app) = appender {
                app.append(&o.record)?;
            }
            Ok(o)
        });
        results.lock().unwrap_or_else(|p| p.into_inner())[i] = Some(out);
    };
    std::thread::scope(|s| {
        for _ in 1..cfg.jobs.min(jobs.len()) {
            s.spawn(worker);
        }
        worker();
    });
    results
        .into_inner()
        .unwrap_or_else(|p| p.into_inner())
        .into_iter()
        .map(|r| r.expect("every job ran"))
        .collect()
}

/// Loads the configured dataset and returns one record per (seed, fold).
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ResultRecord>> {
    let data = Dataset::load(&cfg.dataset, cfg.task)?;
    Ok(run_experiment_on(cfg, &data, None)?
        .into_iter()
        .map(|o| o.record)
        .collect())
}

/// The split a run with this seed (and fold) would use.
pub fn split_for(
    cfg: &ExperimentConfig,
    data: &Dataset,
    seed: u64,
    fold: Option<usize>,
) -> Result<Split> {
    let plan = plan(cfg, data)?;
    let fold = match cfg.split {
        SplitSpec::KFold { .. } => Some(fold.unwrap_or(0)),
        _ => None,
    };
    make_split(cfg, &plan, seed, fold)
}

/// Per-entity key summarised for a split: density for density splits,
/// closeness for closeness splits, degree for other node splits and node
/// count for other graph splits.
pub fn split_keys(cfg: &ExperimentConfig, data: &Dataset) -> Vec<f64> {
    match (cfg.split, data) {
        (SplitSpec::Density, Dataset::Graphs(g)) => density_keys(g),
        (_, Dataset::Graphs(g)) => size_keys(g),
        (SplitSpec::Closeness(kind), Dataset::Nodes(g)) => closeness_keys(g, kind),
        (_, Dataset::Nodes(g)) => degree_keys(g),
    }
}

/// Wall time of the training loop and process peak memory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Timing {
    pub seconds: f64,
    pub peak_rss_bytes: Option<u64>,
}

/// Trains the first seed with batch size 512 and no concurrent runs.
/// Loading, splitting and evaluation are excluded from the duration.
pub fn time_training(cfg: &ExperimentConfig, data: &Dataset) -> Result<Timing> {
    let mut timed = cfg.clone();
    timed.batch_size = TIMING_BATCH;
    timed.seeds.truncate(1);
    timed.split = match cfg.split {
        SplitSpec::KFold { .. } => SplitSpec::Random {
            fractions: [0.7, 0.15, 0.15],
        },
        s => s,
    };
    timed.jobs = 1;
    let plan = plan(&timed, data)?;
    let out = run_one(&timed, &plan, timed.seeds[0], None)?;
    Ok(Timing {
        seconds: out.record.seconds,
        peak_rss_bytes: out.record.peak_rss_bytes,
    })
}

/// Metrics of a saved model on the split and perturbation of its seed.
pub fn evaluate_checkpoint(
    cfg: &ExperimentConfig,
    data: &Dataset,
    ck: Checkpoint,
    fold: Option<usize>,
) -> Result<BTreeMap<String, f64>> {
    let plan = plan(cfg, data)?;
    let seed = ck.seed;
    let split = split_for(cfg, data, seed, fold)?;
    let data = run_data(cfg, &plan, &split, seed)?;
    evaluate(&TrainedModel::from_checkpoint(ck)?, &data, &split)
}

/// Pre-head embeddings of every entity (graphs or nodes) of a clean dataset,
/// with the label as the final column.
pub fn embedding_table(model: &TrainedModel, data: &Dataset) -> Result<Matrix> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    match (model, data) {
        (TrainedModel::Hierarchical(m), Dataset::Graphs(graphs)) => {
            let prepared: Vec<Prepared> = graphs.iter().map(Prepared::new).collect();
            let refs: Vec<&Prepared> = prepared.iter().collect();
            for chunk in refs.chunks(EVAL_CHUNK) {
                let mut tape = Tape::new();
                let bind = m.params.bind_frozen(&mut tape);
                let out = m.forward(&mut tape, &bind, chunk)?;
                let emb = tape.value(out.embedding);
                for (i, g) in chunk.iter().enumerate() {
                    let mut row = emb.row(i).to_vec();
                    row.push(g.target.map_or(f64::NAN, Target::as_f64));
                    rows.push(row);
                }
            }
        }
        (TrainedModel::UNet(m), Dataset::Nodes(g)) => {
            let prepared = Prepared::new(g);
            let mut tape = Tape::new();
            let bind = m.params.bind_frozen(&mut tape);
            let out = m.forward(&mut tape, &bind, &prepared)?;
            let emb = tape.value(out.embedding);
            let labels = g
                .node_labels()
                .ok_or_else(|| Error::Ingestion("graph has no node labels".into()))?;
            for (i, &l) in labels.iter().enumerate() {
                let mut row = emb.row(i).to_vec();
                row.push(l as f64);
                rows.push(row);
            }
        }
        _ => {
            return Err(Error::Config(
                "model architecture does not match the dataset".into(),
            ))
        }
    }
    Matrix::from_rows(&rows)
}

/// Writes [`embedding_table`] as headerless CSV.
pub fn write_matrix_csv(m: &Matrix, path: &Path) -> Result<()> {
    let mut text = String::new();
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:?}")).collect();
        writeln!(text, "{}", row.join(",")).expect("write to string");
    }
    fs::write(path, text)?;
    Ok(())
}

/// Loads the config's dataset and a saved model, then writes its embedding
/// table. A missing checkpoint is an error: there is nothing trained to export.
pub fn export_embeddings(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    out: &Path,
) -> Result<(usize, usize)> {
    let data = Dataset::load(&cfg.dataset, cfg.task)?;
    let model = TrainedModel::from_checkpoint(Checkpoint::load(checkpoint)?)?;
    let table = embedding_table(&model, &data)?;
    write_matrix_csv(&table, out)?;
    Ok(table.shape())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::config::{PoolerChoice, PoolerName};
    use crate::rng::seeded;
    use rand::Rng;

    /// Class 0 graphs are paths with feature `[1, 0]`, class 1 graphs are
    /// cliques with feature `[0, 1]`.
    fn separable(count: usize) -> Vec<Graph> {
        let mut rng = seeded(3);
        (0..count)
            .map(|i| {
                let n = rng.gen_range(5..9);
                let x = Matrix::from_fn(n, 2, |_, j| f64::from(u8::from(j == i % 2)));
                let edges: Vec<(usize, usize)> = if i % 2 == 0 {
                    (1..n).map(|j| (j - 1, j)).collect()
                } else {
                    (0..n)
                        .flat_map(|a| (a + 1..n).map(move |b| (a, b)))
                        .collect()
                };
                Graph::from_edges(n, &edges, x)
                    .unwrap()
                    .with_target(Target::Class(i % 2))
            })
            .collect()
    }

    fn config(pooler: PoolerName) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(
            Task::GraphClassification,
            DatasetSource::InMemory {
                name: "separable".into(),
            },
            PoolerChoice::new(pooler),
        );
        cfg.hidden = 16;
        cfg.epochs = 60;
        cfg.lr = 1e-2;
        cfg
    }

    #[test]
    fn separable_graphs_are_learned() {
        let data = Dataset::Graphs(separable(40));
        let out = run_experiment_on(&config(PoolerName::TopK), &data, None).unwrap();
        let r = &out[0].record;
        assert_eq!(r.status, RunStatus::Ok);
        assert_eq!(r.metrics["test_accuracy"], 1.0);
        assert_eq!(r.epoch_losses.len(), 60);
        r.check_ranges().unwrap();
        assert!(r.metrics.contains_key("test_auroc"));
    }

    #[test]
    fn runs_are_deterministic_across_job_counts() {
        let data = Dataset::Graphs(separable(20));
        let mut cfg = config(PoolerName::MinCut);
        cfg.epochs = 5;
        cfg.seeds = vec![1, 2, 3];
        let serial = run_experiment_on(&cfg, &data, None).unwrap();
        cfg.jobs = 3;
        let parallel = run_experiment_on(&cfg, &data, None).unwrap();
        for (a, b) in serial.iter().zip(&parallel) {
            assert_eq!(a.record.metrics, b.record.metrics);
            assert_eq!(a.record.epoch_losses, b.record.epoch_losses);
            assert_eq!(a.model, b.model);
        }
        assert_ne!(serial[0].record.epoch_losses, serial[1].record.epoch_losses);
    }

    #[test]
    fn kfold_yields_one_record_per_fold() {
        let data = Dataset::Graphs(separable(20));
        let mut cfg = config(PoolerName::Sag);
        cfg.epochs = 2;
        cfg.split = SplitSpec::KFold { folds: 4 };
        let out = run_experiment_on(&cfg, &data, None).unwrap();
        assert_eq!(
            out.iter().map(|o| o.record.fold).collect::<Vec<_>>(),
            vec![Some(0), Some(1), Some(2), Some(3)]
        );
        assert!(out
            .iter()
            .all(|o| !o.record.metrics.contains_key("val_accuracy")));
    }

    #[test]
    fn regression_task_reports_errors() {
        let graphs: Vec<Graph> = separable(20)
            .into_iter()
            .map(|g| {
                let v = g.n() as f64 / 4.0;
                g.with_target(Target::Value(v))
            })
            .collect();
        let mut cfg = config(PoolerName::Kmis);
        cfg.task = Task::GraphRegression;
        cfg.epochs = 3;
        let r = &run_experiment_on(&cfg, &Dataset::Graphs(graphs), None).unwrap()[0].record;
        assert!(r.metrics["test_rmse"] >= r.metrics["test_mae"]);
    }

    #[test]
    fn non_finite_loss_yields_failed_record() {
        let mut data = separable(20);
        let x = Matrix::filled(data[0].n(), 2, f64::NAN);
        data[0] = data[0].with_features(x).unwrap();
        let mut cfg = config(PoolerName::TopK);
        cfg.epochs = 3;
        cfg.split = SplitSpec::KFold { folds: 2 };
        let out = run_experiment_on(&cfg, &Dataset::Graphs(data), None).unwrap();
        // Graph 0 poisons training in one fold and evaluation in the other.
        assert!(out
            .iter()
            .all(|o| o.record.status == RunStatus::Failed && o.model.is_none()));
        assert!(out.iter().all(|o| o.record.metrics.is_empty()));
        let reasons: Vec<&str> = out
            .iter()
            .map(|o| o.record.failure.as_deref().unwrap())
            .collect();
        assert!(reasons.iter().any(|r| r.contains("training at epoch 0")));
        assert!(reasons.iter().any(|r| r.contains("evaluation")));
    }

    #[test]
    fn best_validation_selection_runs() {
        let data = Dataset::Graphs(separable(20));
        let mut cfg = config(PoolerName::TopK);
        cfg.epochs = 4;
        cfg.model_selection = ModelSelection::BestValidation;
        assert!(run_experiment_on(&cfg, &data, None).unwrap()[0]
            .record
            .metrics
            .contains_key("val_accuracy"));
    }

    #[test]
    fn mismatched_inputs_fail_before_training() {
        let node = Dataset::Nodes(crate::graph::fixtures::path(5));
        assert!(matches!(
            run_experiment_on(&config(PoolerName::TopK), &node, None),
            Err(Error::Config(_))
        ));
        let one_class: Vec<Graph> = separable(6)
            .into_iter()
            .map(|g| g.with_target(Target::Class(0)))
            .collect();
        let err = run_experiment_on(&config(PoolerName::TopK), &Dataset::Graphs(one_class), None);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn perturbation_touches_selected_parts_only() {
        let cfg = {
            let mut c = config(PoolerName::TopK);
            c.perturb = Some(Perturbation::DropEdges { rate: 1.0 });
            c.perturb_parts = Parts {
                train: true,
                val: false,
                test: false,
            };
            c
        };
        let graphs = separable(20);
        let Plan::Graph(p) = plan(&cfg, &Dataset::Graphs(graphs.clone())).unwrap() else {
            panic!("graph plan expected");
        };
        let split = make_split(&cfg, &Plan::Graph(p.clone()), 0, None).unwrap();
        let noisy = perturb_graphs(&cfg, &p, &split, 0).unwrap();
        assert!(split.train.iter().all(|&i| noisy[i].edge_count() == 0));
        assert!(split.test.iter().all(|&i| noisy[i] == graphs[i]));
    }

    #[test]
    fn embedding_table_shape() {
        let data = Dataset::Graphs(separable(10));
        let mut cfg = config(PoolerName::Dmon);
        cfg.epochs = 1;
        let out = run_experiment_on(&cfg, &data, None).unwrap();
        let table = embedding_table(out[0].model.as_ref().unwrap(), &data).unwrap();
        assert_eq!(table.shape(), (10, 17));
        assert_eq!(table[(0, 16)], 0.0);
        assert_eq!(table[(1, 16)], 1.0);
    }
}
