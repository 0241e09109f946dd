//! Dataset readers and writers.
//!
//! Two on-disk layouts are supported: the TUDataset flat-file layout
//! (1-indexed, one file per attribute) and a plain edge-list triple for
//! single-graph node classification datasets.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{constant_features, Graph, Target};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// How graph labels are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// Integer labels, remapped to contiguous 0-based classes.
    Class,
    /// Real-valued regression targets, kept as-is.
    Value,
}

fn read_required(path: &Path) -> Result<String> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    Ok(fs::read_to_string(path)?)
}

fn read_optional(path: &Path) -> Result<Option<String>> {
    if path.is_file() {
        Ok(Some(fs::read_to_string(path)?))
    } else {
        Ok(None)
    }
}

fn format_err(file: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Format {
        file: file.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Non-empty lines with their 1-based line numbers.
fn lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty())
}

fn parse_scalar<T: std::str::FromStr>(file: &Path, line: usize, token: &str) -> Result<T> {
    token
        .trim()
        .parse()
        .map_err(|_| format_err(file, line, format!("cannot parse {:?}", token.trim())))
}

fn parse_column<T: std::str::FromStr>(file: &Path, text: &str) -> Result<Vec<T>> {
    lines(text)
        .map(|(no, l)| parse_scalar(file, no, l))
        .collect()
}

fn parse_rows(file: &Path, text: &str, sep: char) -> Result<Vec<Vec<f64>>> {
    let mut rows = Vec::new();
    let mut width = None;
    for (no, l) in lines(text) {
        let row = l
            .split(sep)
            .map(|t| parse_scalar::<f64>(file, no, t))
            .collect::<Result<Vec<_>>>()?;
        match width {
            None => width = Some(row.len()),
            Some(w) if w != row.len() => {
                return Err(format_err(
                    file,
                    no,
                    format!("expected {w} columns, got {}", row.len()),
                ))
            }
            _ => {}
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Maps arbitrary integer labels to their rank among the distinct values.
fn remap<T: Ord + Copy>(values: &[T]) -> (Vec<usize>, usize) {
    let distinct: Vec<T> = values
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mapped = values
        .iter()
        .map(|v| distinct.binary_search(v).expect("value present"))
        .collect();
    (mapped, distinct.len())
}

fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut x = Matrix::zeros(labels.len(), classes);
    for (i, &l) in labels.iter().enumerate() {
        x[(i, l)] = 1.0;
    }
    x
}

/// Loads a TUDataset directory with classification targets.
pub fn load_tudataset(dir: impl AsRef<Path>, name: &str) -> Result<Vec<Graph>> {
    load_tudataset_as(dir, name, TargetKind::Class)
}

pub fn load_tudataset_as(
    dir: impl AsRef<Path>,
    name: &str,
    kind: TargetKind,
) -> Result<Vec<Graph>> {
    let dir = dir.as_ref();
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    let a_path = file("A");
    let ind_path = file("graph_indicator");
    let gl_path = file("graph_labels");
    let a_text = read_required(&a_path)?;
    let ind_text = read_required(&ind_path)?;
    let gl_text = read_required(&gl_path)?;

    let indicator: Vec<usize> = parse_column(&ind_path, &ind_text)?;
    if indicator.is_empty() {
        return Err(Error::Ingestion(format!(
            "{} lists no nodes",
            ind_path.display()
        )));
    }
    let graph_ids: Vec<usize> = indicator
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    for w in indicator.windows(2) {
        if w[1] < w[0] {
            return Err(Error::Ingestion("graph indicator is not sorted".into()));
        }
    }
    let graph_of_node: Vec<usize> = indicator
        .iter()
        .map(|g| graph_ids.binary_search(g).expect("present"))
        .collect();
    let graph_count = graph_ids.len();

    // First global node index of each graph.
    let mut starts = vec![usize::MAX; graph_count];
    let mut sizes = vec![0usize; graph_count];
    for (v, &g) in graph_of_node.iter().enumerate() {
        starts[g] = starts[g].min(v);
        sizes[g] += 1;
    }

    let total = indicator.len();
    let mut edges: Vec<Vec<(usize, usize)>> = vec![Vec::new(); graph_count];
    for (no, l) in lines(&a_text) {
        let mut parts = l.split(',');
        let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(format_err(&a_path, no, "expected \"i, j\""));
        };
        let i: usize = parse_scalar(&a_path, no, a)?;
        let j: usize = parse_scalar(&a_path, no, b)?;
        if i == 0 || j == 0 || i > total || j > total {
            return Err(format_err(
                &a_path,
                no,
                format!("node index out of range 1..={total}"),
            ));
        }
        let (i, j) = (i - 1, j - 1);
        let g = graph_of_node[i];
        if graph_of_node[j] != g {
            return Err(format_err(
                &a_path,
                no,
                "edge joins nodes of different graphs",
            ));
        }
        edges[g].push((i - starts[g], j - starts[g]));
    }

    let targets: Vec<Target> = match kind {
        TargetKind::Class => {
            let raw: Vec<i64> = parse_column(&gl_path, &gl_text)?;
            remap(&raw).0.into_iter().map(Target::Class).collect()
        }
        TargetKind::Value => {
            let raw: Vec<f64> = parse_column(&gl_path, &gl_text)?;
            raw.into_iter().map(Target::Value).collect()
        }
    };
    if targets.len() != graph_count {
        return Err(Error::Ingestion(format!(
            "{} graph labels for {graph_count} graphs",
            targets.len()
        )));
    }

    let nl_path = file("node_labels");
    let node_labels = match read_optional(&nl_path)? {
        Some(text) => {
            let raw: Vec<i64> = parse_column(&nl_path, &text)?;
            if raw.len() != total {
                return Err(Error::Ingestion(format!(
                    "{} node labels for {total} nodes",
                    raw.len()
                )));
            }
            Some(remap(&raw))
        }
        None => None,
    };
    let na_path = file("node_attributes");
    let attributes = match read_optional(&na_path)? {
        Some(text) => {
            let rows = parse_rows(&na_path, &text, ',')?;
            if rows.len() != total {
                return Err(Error::Ingestion(format!(
                    "{} attribute rows for {total} nodes",
                    rows.len()
                )));
            }
            Some(Matrix::from_rows(&rows)?)
        }
        None => None,
    };

    let mut graphs = Vec::with_capacity(graph_count);
    for g in 0..graph_count {
        let nodes: Vec<usize> = (starts[g]..starts[g] + sizes[g]).collect();
        let x = match (&attributes, &node_labels) {
            (Some(attr), _) => attr.select_rows(&nodes),
            (None, Some((labels, classes))) => {
                let l: Vec<usize> = nodes.iter().map(|&v| labels[v]).collect();
                one_hot(&l, *classes)
            }
            (None, None) => constant_features(nodes.len()),
        };
        let mut graph = Graph::from_edges(nodes.len(), &edges[g], x)?.with_target(targets[g]);
        if let Some((labels, _)) = &node_labels {
            graph = graph.with_node_labels(nodes.iter().map(|&v| labels[v]).collect())?;
        }
        graphs.push(graph);
    }
    Ok(graphs)
}

/// Loads a single graph from an edge list (whitespace-separated, 0-indexed
/// pairs), comma-separated feature rows and one integer label per line.
/// Asymmetric edges are symmetrised.
pub fn load_edgelist_graph(
    edges: impl AsRef<Path>,
    features: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<Graph> {
    let (e_path, f_path, l_path) = (edges.as_ref(), features.as_ref(), labels.as_ref());
    let e_text = read_required(e_path)?;
    let f_text = read_required(f_path)?;
    let l_text = read_required(l_path)?;

    let rows = parse_rows(f_path, &f_text, ',')?;
    let labels: Vec<usize> = parse_column(l_path, &l_text)?;
    if rows.len() != labels.len() {
        return Err(Error::Ingestion(format!(
            "{} feature rows but {} labels",
            rows.len(),
            labels.len()
        )));
    }
    let n = rows.len();
    let x = if rows.first().is_some_and(|r| !r.is_empty()) {
        Matrix::from_rows(&rows)?
    } else {
        constant_features(n)
    };

    let mut pairs = Vec::new();
    for (no, l) in lines(&e_text) {
        if l.starts_with('#') {
            continue;
        }
        let mut it = l.split_whitespace();
        let (Some(a), Some(b), None) = (it.next(), it.next(), it.next()) else {
            return Err(format_err(e_path, no, "expected two node indices"));
        };
        let i: usize = parse_scalar(e_path, no, a)?;
        let j: usize = parse_scalar(e_path, no, b)?;
        if i >= n || j >= n {
            return Err(format_err(
                e_path,
                no,
                format!("node index out of range 0..{n}"),
            ));
        }
        pairs.push((i, j));
    }
    Graph::from_edges(n, &pairs, x)?.with_node_labels(labels)
}

/// Writes a graph in the edge-list triple read by [`load_edgelist_graph`].
/// Each undirected edge is written once.
pub fn write_edgelist_graph(
    g: &Graph,
    edges: impl AsRef<Path>,
    features: impl AsRef<Path>,
    labels: impl AsRef<Path>,
) -> Result<()> {
    let mut e = String::new();
    for (i, j) in g.edges() {
        writeln!(e, "{i} {j}").expect("write to string");
    }
    fs::write(edges, e)?;

    let mut f = String::new();
    for i in 0..g.n() {
        let row: Vec<String> = g
            .features()
            .row(i)
            .iter()
            .map(|v| format!("{v:?}"))
            .collect();
        writeln!(f, "{}", row.join(",")).expect("write to string");
    }
    fs::write(features, f)?;

    let mut l = String::new();
    let zeros;
    let node_labels = match g.node_labels() {
        Some(l) => l,
        None => {
            zeros = vec![0; g.n()];
            &zeros
        }
    };
    for v in node_labels {
        writeln!(l, "{v}").expect("write to string");
    }
    fs::write(labels, l)?;
    Ok(())
}
