//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except `task`; unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::models::Fusion;
use crate::perturb::{Perturbation, DEFAULT_KNN_K};
use crate::pooling::PoolSpec;
use crate::splits::ClosenessKind;

pub const DEFAULT_BATCH: usize = 32;
pub const TIMING_BATCH: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Task {
    GraphClassification,
    GraphRegression,
    NodeClassification,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::GraphClassification => "graph-classification",
            Task::GraphRegression => "graph-regression",
            Task::NodeClassification => "node-classification",
        }
    }

    pub fn is_graph_level(self) -> bool {
        self != Task::NodeClassification
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "graph-classification" => Ok(Task::GraphClassification),
            "graph-regression" => Ok(Task::GraphRegression),
            "node-classification" => Ok(Task::NodeClassification),
            other => Err(Error::Config(format!("unknown task {other}"))),
        }
    }
}

/// Where the data lives on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    /// TUDataset flat files `<dir>/<name>_*.txt`.
    TuDataset { dir: PathBuf, name: String },
    /// Edge list, feature rows and node labels of one graph.
    EdgeList {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
    },
    /// Supplied in memory by the caller.
    InMemory { name: String },
}

impl DatasetSource {
    pub fn name(&self) -> String {
        match self {
            DatasetSource::TuDataset { name, .. } | DatasetSource::InMemory { name } => {
                name.clone()
            }
            DatasetSource::EdgeList { edges, .. } => edges
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "edgelist".into()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitSpec {
    Random { fractions: [f64; 3] },
    KFold { folds: usize },
    Size,
    Density,
    Degree,
    Closeness(ClosenessKind),
}

impl SplitSpec {
    pub fn name(&self) -> &'static str {
        match self {
            SplitSpec::Random { .. } => "random",
            SplitSpec::KFold { .. } => "kfold",
            SplitSpec::Size => "size",
            SplitSpec::Density => "density",
            SplitSpec::Degree => "degree",
            SplitSpec::Closeness(_) => "closeness",
        }
    }
}

/// Which partitions a perturbation touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Parts {
    pub train: bool,
    pub val: bool,
    pub test: bool,
}

impl Parts {
    pub const ALL: Parts = Parts {
        train: true,
        val: true,
        test: true,
    };

    fn parse(s: &str) -> Result<Self> {
        let mut parts = Parts {
            train: false,
            val: false,
            test: false,
        };
        for token in s.split(',').map(str::trim) {
            match token {
                "train" => parts.train = true,
                "val" => parts.val = true,
                "test" => parts.test = true,
                "all" => parts = Parts::ALL,
                other => return Err(Error::Config(format!("unknown partition {other}"))),
            }
        }
        Ok(parts)
    }

    fn render(self) -> String {
        let names: Vec<&str> = [
            (self.train, "train"),
            (self.val, "val"),
            (self.test, "test"),
        ]
        .into_iter()
        .filter_map(|(on, n)| on.then_some(n))
        .collect();
        names.join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelSelection {
    FinalEpoch,
    BestValidation,
}

/// Pooler name plus its hyperparameter. `clusters = None` means
/// `⌈avg_nodes / 4⌉`, resolved once the dataset is loaded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoolerChoice {
    pub name: PoolerName,
    pub ratio: f64,
    pub k: usize,
    pub clusters: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolerName {
    TopK,
    Sag,
    Kmis,
    DiffPool,
    MinCut,
    Dmon,
    JustBalance,
}

impl FromStr for PoolerName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "topk" => PoolerName::TopK,
            "sag" => PoolerName::Sag,
            "kmis" => PoolerName::Kmis,
            "diffpool" => PoolerName::DiffPool,
            "mincut" => PoolerName::MinCut,
            "dmon" => PoolerName::Dmon,
            "justbalance" => PoolerName::JustBalance,
            other => return Err(Error::Config(format!("unknown pooler {other}"))),
        })
    }
}

impl PoolerChoice {
    pub fn new(name: PoolerName) -> Self {
        Self {
            name,
            ratio: 0.5,
            k: 1,
            clusters: None,
        }
    }

    pub fn is_dropping(&self) -> bool {
        matches!(
            self.name,
            PoolerName::TopK | PoolerName::Sag | PoolerName::Kmis
        )
    }

    /// Concrete operator for a dataset with the given mean graph size.
    pub fn spec(&self, avg_nodes: f64) -> PoolSpec {
        let clusters = self
            .clusters
            .unwrap_or_else(|| crate::pooling::default_cluster_count(avg_nodes));
        match self.name {
            PoolerName::TopK => PoolSpec::TopK { ratio: self.ratio },
            PoolerName::Sag => PoolSpec::Sag { ratio: self.ratio },
            PoolerName::Kmis => PoolSpec::Kmis { k: self.k },
            PoolerName::DiffPool => PoolSpec::DiffPool { clusters },
            PoolerName::MinCut => PoolSpec::MinCut { clusters },
            PoolerName::Dmon => PoolSpec::Dmon { clusters },
            PoolerName::JustBalance => PoolSpec::JustBalance { clusters },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub task: Task,
    pub dataset: DatasetSource,
    pub pooler: PoolerChoice,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub split: SplitSpec,
    pub perturb: Option<Perturbation>,
    pub perturb_parts: Parts,
    pub seeds: Vec<u64>,
    pub fusion: Fusion,
    pub model_selection: ModelSelection,
    pub aux_weight: f64,
    /// Concurrent runs; results are identical for any value.
    pub jobs: usize,
}

const KEYS: &[&str] = &[
    "task",
    "dataset_format",
    "dataset_dir",
    "dataset_name",
    "dataset_edges",
    "dataset_features",
    "dataset_labels",
    "pooler",
    "ratio",
    "kmis_k",
    "clusters",
    "hidden",
    "epochs",
    "lr",
    "batch_size",
    "split",
    "fractions",
    "folds",
    "closeness",
    "perturb",
    "perturb_rate",
    "perturb_k",
    "perturb_parts",
    "seeds",
    "fusion",
    "model_selection",
    "aux_weight",
    "jobs",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse {key} = {value:?}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse_value(key, v.trim()))
        .collect()
}

impl ExperimentConfig {
    /// Defaults for everything but the task, data and pooler.
    pub fn new(task: Task, dataset: DatasetSource, pooler: PoolerChoice) -> Self {
        let split = match task {
            Task::NodeClassification => SplitSpec::Random {
                fractions: [0.6, 0.2, 0.2],
            },
            _ => SplitSpec::Random {
                fractions: [0.7, 0.15, 0.15],
            },
        };
        Self {
            task,
            dataset,
            pooler,
            hidden: 64,
            epochs: 200,
            lr: 1e-3,
            batch_size: DEFAULT_BATCH,
            split,
            perturb: None,
            perturb_parts: Parts::ALL,
            seeds: vec![0],
            fusion: Fusion::Sum,
            model_selection: ModelSelection::FinalEpoch,
            aux_weight: 1.0,
            jobs: 1,
        }
    }

    /// Parses config text; relative dataset paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (no, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: no + 1,
                    message: format!("expected key = value, got {line:?}"),
                });
            };
            let (k, v) = (k.trim(), v.trim());
            if !KEYS.contains(&k) {
                return Err(Error::Config(format!(
                    "unknown key {k:?} on line {}",
                    no + 1
                )));
            }
            if map.insert(k.to_string(), v.to_string()).is_some() {
                return Err(Error::Config(format!(
                    "duplicate key {k:?} on line {}",
                    no + 1
                )));
            }
        }
        let get = |k: &str| map.get(k).map(String::as_str);
        let path = |k: &str| -> Result<PathBuf> {
            let v = get(k).ok_or_else(|| Error::Config(format!("missing key {k}")))?;
            Ok(base.join(v))
        };

        let task: Task = get("task")
            .ok_or_else(|| Error::Config("missing key task".into()))?
            .parse()?;
        let format = get("dataset_format").unwrap_or(if task.is_graph_level() {
            "tudataset"
        } else {
            "edgelist"
        });
        let dataset = match format {
            "tudataset" => DatasetSource::TuDataset {
                dir: path("dataset_dir")?,
                name: get("dataset_name")
                    .ok_or_else(|| Error::Config("missing key dataset_name".into()))?
                    .into(),
            },
            "edgelist" => DatasetSource::EdgeList {
                edges: path("dataset_edges")?,
                features: path("dataset_features")?,
                labels: path("dataset_labels")?,
            },
            other => return Err(Error::Config(format!("unknown dataset_format {other}"))),
        };

        let mut pooler = PoolerChoice::new(get("pooler").unwrap_or("topk").parse()?);
        if let Some(v) = get("ratio") {
            pooler.ratio = parse_value("ratio", v)?;
        }
        if let Some(v) = get("kmis_k") {
            pooler.k = parse_value("kmis_k", v)?;
        }
        if let Some(v) = get("clusters") {
            pooler.clusters = Some(parse_value("clusters", v)?);
        }

        let mut cfg = ExperimentConfig::new(task, dataset, pooler);
        if let Some(v) = get("hidden") {
            cfg.hidden = parse_value("hidden", v)?;
        }
        if let Some(v) = get("epochs") {
            cfg.epochs = parse_value("epochs", v)?;
        }
        if let Some(v) = get("lr") {
            cfg.lr = parse_value("lr", v)?;
        }
        if let Some(v) = get("batch_size") {
            cfg.batch_size = parse_value("batch_size", v)?;
        }
        if let Some(v) = get("split") {
            cfg.split = match v {
                "random" => match cfg.split {
                    s @ SplitSpec::Random { .. } => s,
                    _ => unreachable!("default split is random"),
                },
                "kfold" => SplitSpec::KFold { folds: 5 },
                "size" => SplitSpec::Size,
                "density" => SplitSpec::Density,
                "degree" => SplitSpec::Degree,
                "closeness" => SplitSpec::Closeness(ClosenessKind::Raw),
                other => return Err(Error::Config(format!("unknown split {other}"))),
            };
        }
        if let Some(v) = get("fractions") {
            let f: Vec<f64> = parse_list("fractions", v)?;
            let fractions: [f64; 3] = f
                .try_into()
                .map_err(|_| Error::Config("fractions needs three values".into()))?;
            match &mut cfg.split {
                SplitSpec::Random { fractions: slot } => *slot = fractions,
                _ => {
                    return Err(Error::Config(
                        "fractions only applies to split = random".into(),
                    ))
                }
            }
        }
        if let Some(v) = get("folds") {
            match &mut cfg.split {
                SplitSpec::KFold { folds } => *folds = parse_value("folds", v)?,
                _ => return Err(Error::Config("folds only applies to split = kfold".into())),
            }
        }
        if let Some(v) = get("closeness") {
            let kind = match v {
                "raw" => ClosenessKind::Raw,
                "normalized" => ClosenessKind::Normalized,
                other => {
                    return Err(Error::Config(format!(
                        "unknown closeness convention {other}"
                    )))
                }
            };
            match &mut cfg.split {
                SplitSpec::Closeness(slot) => *slot = kind,
                _ => {
                    return Err(Error::Config(
                        "closeness only applies to split = closeness".into(),
                    ))
                }
            }
        }
        if let Some(op) = get("perturb").filter(|op| *op != "none") {
            let rate = get("perturb_rate")
                .map(|v| parse_value("perturb_rate", v))
                .transpose()?
                .unwrap_or(0.0);
            let k = get("perturb_k")
                .map(|v| parse_value("perturb_k", v))
                .transpose()?
                .unwrap_or(DEFAULT_KNN_K);
            cfg.perturb = Some(Perturbation::parse(op, rate, k)?);
        }
        if let Some(v) = get("perturb_parts") {
            cfg.perturb_parts = Parts::parse(v)?;
        }
        if let Some(v) = get("seeds") {
            cfg.seeds = parse_list("seeds", v)?;
        }
        if let Some(v) = get("fusion") {
            cfg.fusion = match v {
                "sum" => Fusion::Sum,
                "concat" => Fusion::Concat,
                other => return Err(Error::Config(format!("unknown fusion {other}"))),
            };
        }
        if let Some(v) = get("model_selection") {
            cfg.model_selection = match v {
                "final" => ModelSelection::FinalEpoch,
                "best_val" => ModelSelection::BestValidation,
                other => return Err(Error::Config(format!("unknown model_selection {other}"))),
            };
        }
        if let Some(v) = get("aux_weight") {
            cfg.aux_weight = parse_value("aux_weight", v)?;
        }
        if let Some(v) = get("jobs") {
            cfg.jobs = parse_value("jobs", v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        if !path.is_file() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.hidden == 0 || self.jobs == 0 {
            return Err(Error::Config(
                "batch_size, hidden and jobs must be >= 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if !(self.aux_weight >= 0.0 && self.aux_weight.is_finite()) {
            return Err(Error::Config("aux_weight must be non-negative".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        self.pooler.spec(4.0).validate()?;
        let graph_level = self.task.is_graph_level();
        match self.split {
            SplitSpec::Size | SplitSpec::Density if !graph_level => {
                return Err(Error::Config(format!(
                    "{} split needs a graph-level task",
                    self.split.name()
                )))
            }
            SplitSpec::Degree | SplitSpec::Closeness(_) if graph_level => {
                return Err(Error::Config(format!(
                    "{} split needs a node-level task",
                    self.split.name()
                )))
            }
            SplitSpec::KFold { folds } if folds < 2 => {
                return Err(Error::Config("folds must be >= 2".into()))
            }
            SplitSpec::KFold { .. } if self.model_selection == ModelSelection::BestValidation => {
                return Err(Error::Config(
                    "best_val selection needs a validation part; kfold has none".into(),
                ))
            }
            _ => {}
        }
        if self.task == Task::NodeClassification && !self.pooler.is_dropping() {
            return Err(Error::Config(
                "the u-net needs a dropping pooler (topk, sag or kmis)".into(),
            ));
        }
        if let Some(p) = self.perturb {
            let rate = match p {
                Perturbation::AddEdges { rate }
                | Perturbation::DropEdges { rate }
                | Perturbation::MaskFeatures { rate }
                | Perturbation::FlipLabels { rate } => rate,
                Perturbation::Knn { .. } => 0.0,
            };
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!(
                    "perturbation rate {rate} outside [0, 1]"
                )));
            }
            if matches!(p, Perturbation::FlipLabels { .. }) && self.task == Task::GraphRegression {
                return Err(Error::Config("label flipping needs class labels".into()));
            }
            if matches!(p, Perturbation::Knn { k: 0 }) {
                return Err(Error::Config("perturb_k must be >= 1".into()));
            }
        }
        Ok(())
    }

    /// Canonical text of every setting except `seeds` and `jobs`.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k}={v}").expect("write to string");
        put("task", self.task.name().into());
        match &self.dataset {
            DatasetSource::TuDataset { dir, name } => {
                put("dataset_dir", dir.display().to_string());
                put("dataset_name", name.clone());
            }
            DatasetSource::EdgeList {
                edges,
                features,
                labels,
            } => {
                put("dataset_edges", edges.display().to_string());
                put("dataset_features", features.display().to_string());
                put("dataset_labels", labels.display().to_string());
            }
            DatasetSource::InMemory { name } => put("dataset_memory", name.clone()),
        }
        put("pooler", format!("{:?}", self.pooler.name));
        put("ratio", format!("{:?}", self.pooler.ratio));
        put("kmis_k", self.pooler.k.to_string());
        put("clusters", format!("{:?}", self.pooler.clusters));
        put("hidden", self.hidden.to_string());
        put("epochs", self.epochs.to_string());
        put("lr", format!("{:?}", self.lr));
        put("batch_size", self.batch_size.to_string());
        put("split", format!("{:?}", self.split));
        put("perturb", format!("{:?}", self.perturb));
        put("perturb_parts", self.perturb_parts.render());
        put("fusion", format!("{:?}", self.fusion));
        put("model_selection", format!("{:?}", self.model_selection));
        put("aux_weight", format!("{:?}", self.aux_weight));
        s
    }

    /// SHA-256 of [`canonical`](Self::canonical), hex encoded.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str =
        "task = graph-classification\ndataset_dir = data/MUTAG\ndataset_name = MUTAG\n";

    fn parse(extra: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(&format!("{BASE}{extra}"), Path::new("/base"))
    }

    #[test]
    fn defaults() {
        let cfg = parse("").unwrap();
        assert_eq!(
            (cfg.hidden, cfg.epochs, cfg.batch_size, cfg.lr),
            (64, 200, 32, 1e-3)
        );
        assert_eq!(
            cfg.split,
            SplitSpec::Random {
                fractions: [0.7, 0.15, 0.15]
            }
        );
        assert_eq!(cfg.pooler.name, PoolerName::TopK);
        assert_eq!(cfg.seeds, vec![0]);
        assert_eq!(
            cfg.dataset,
            DatasetSource::TuDataset {
                dir: PathBuf::from("/base/data/MUTAG"),
                name: "MUTAG".into()
            }
        );
    }

    #[test]
    fn full_config() {
        let cfg = parse(
            "# sweep entry\npooler = diffpool\nclusters = 7\nseeds = 0, 1, 2\nsplit = kfold\nfolds = 10\n\
             perturb = drop\nperturb_rate = 0.5\nperturb_parts = train\naux_weight = 0.1\njobs = 3\n",
        )
        .unwrap();
        assert_eq!(cfg.pooler.spec(17.93), PoolSpec::DiffPool { clusters: 7 });
        assert_eq!(cfg.seeds, vec![0, 1, 2]);
        assert_eq!(cfg.split, SplitSpec::KFold { folds: 10 });
        assert_eq!(cfg.perturb, Some(Perturbation::DropEdges { rate: 0.5 }));
        assert_eq!(
            cfg.perturb_parts,
            Parts {
                train: true,
                val: false,
                test: false
            }
        );
        assert_eq!(
            PoolerChoice::new(PoolerName::Dmon).spec(17.93),
            PoolSpec::Dmon { clusters: 5 }
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(parse("epochs = 0\n"), Err(Error::Config(_))));
        assert!(matches!(parse("epoch = 3\n"), Err(Error::Config(_))));
        assert!(matches!(
            parse("pooler = sortpool\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse("ratio = 1.5\n"), Err(Error::Config(_))));
        assert!(matches!(parse("split = degree\n"), Err(Error::Config(_))));
        assert!(matches!(
            parse("split = kfold\nmodel_selection = best_val\n"),
            Err(Error::Config(_))
        ));
        assert!(matches!(parse("lr = fast\n"), Err(Error::Config(_))));
        assert!(matches!(
            parse("hidden 5\n"),
            Err(Error::Parse { line: 4, .. })
        ));
        assert!(matches!(
            parse("hidden = 5\nhidden = 6\n"),
            Err(Error::Config(_))
        ));
        let node = "task = node-classification\ndataset_edges = e\ndataset_features = f\ndataset_labels = l\n";
        assert!(ExperimentConfig::parse(node, Path::new(".")).is_ok());
        let clustering = format!("{node}pooler = mincut\n");
        assert!(matches!(
            ExperimentConfig::parse(&clustering, Path::new(".")),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn digest_ignores_seeds_only() {
        let a = parse("seeds = 1,2\njobs = 4\n").unwrap();
        let b = parse("seeds = 3\n").unwrap();
        let c = parse("seeds = 3\nlr = 0.01\n").unwrap();
        assert_eq!(a.digest(), b.digest());
        assert_ne!(b.digest(), c.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
