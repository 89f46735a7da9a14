//! Loader for the plain-text many-small-graphs benchmark layout.
//!
//! A dataset directory `DS/` holds, for `n` nodes and `m` graphs:
//!
//! * `DS_A.txt` — one `i, j` edge per line, node ids 1-based and global;
//! * `DS_graph_indicator.txt` — line per node: its 1-based graph id;
//! * `DS_graph_labels.txt` — line per graph: an integer class label;
//! * `DS_node_labels.txt` — optional; line per node: an integer label,
//!   turned into one-hot features. Without it every node gets a single
//!   constant 1 feature.
//!
//! Graph labels are remapped to `0..k` by sorted value. Self-loops are
//! dropped, duplicate edges collapse, and every malformed line is reported
//! with its file name and 1-based line number.

use std::collections::BTreeSet;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::{Graph, Label};
use crate::mat::Mat;

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_int(path: &Path, line: usize, field: &str, what: &str) -> Result<i64> {
    field
        .trim()
        .parse::<i64>()
        .map_err(|_| parse_err(path, line, format!("{what}: not an integer: {field:?}")))
}

/// Load a dataset directory; the file prefix is the directory name.
pub fn load_tu(dir: &Path) -> Result<Vec<Graph>> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::config(format!("dataset path {} has no name", dir.display())))?;
    let file = |suffix: &str| dir.join(format!("{name}_{suffix}.txt"));

    // which graph each node belongs to
    let ind_path = file("graph_indicator");
    let mut node_graph: Vec<usize> = Vec::new();
    for (ln, line) in read_lines(&ind_path)? {
        let v = parse_int(&ind_path, ln, &line, "graph indicator")?;
        if v < 1 {
            return Err(parse_err(&ind_path, ln, format!("graph id {v} below 1")));
        }
        node_graph.push(v as usize - 1);
    }
    let n_nodes = node_graph.len();
    if n_nodes == 0 {
        return Err(Error::config(format!(
            "{}: dataset has no nodes",
            ind_path.display()
        )));
    }
    let n_graphs = node_graph.iter().max().unwrap() + 1;

    // local index of each node inside its graph, by order of appearance
    let mut sizes = vec![0usize; n_graphs];
    let mut local: Vec<usize> = Vec::with_capacity(n_nodes);
    for &g in &node_graph {
        local.push(sizes[g]);
        sizes[g] += 1;
    }
    if let Some(empty) = sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(format!(
            "{}: graph {} has no nodes",
            ind_path.display(),
            empty + 1
        )));
    }

    // graph labels, remapped to 0..k by sorted raw value
    let lab_path = file("graph_labels");
    let mut raw_labels: Vec<i64> = Vec::new();
    for (ln, line) in read_lines(&lab_path)? {
        raw_labels.push(parse_int(&lab_path, ln, &line, "graph label")?);
    }
    if raw_labels.len() != n_graphs {
        return Err(Error::config(format!(
            "{}: {} labels for {} graphs",
            lab_path.display(),
            raw_labels.len(),
            n_graphs
        )));
    }
    let classes: Vec<i64> = raw_labels
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| classes.binary_search(l).unwrap())
        .collect();

    // optional node labels as one-hot features
    let nl_path = file("node_labels");
    let features: Vec<Vec<f64>> = if nl_path.exists() {
        let mut raw: Vec<i64> = Vec::new();
        for (ln, line) in read_lines(&nl_path)? {
            raw.push(parse_int(&nl_path, ln, &line, "node label")?);
        }
        if raw.len() != n_nodes {
            return Err(Error::config(format!(
                "{}: {} node labels for {} nodes",
                nl_path.display(),
                raw.len(),
                n_nodes
            )));
        }
        let values: Vec<i64> = raw.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
        raw.iter()
            .map(|l| {
                let mut row = vec![0.0; values.len()];
                row[values.binary_search(l).unwrap()] = 1.0;
                row
            })
            .collect()
    } else {
        vec![vec![1.0]; n_nodes]
    };
    let feat_dim = features[0].len();

    // adjacency
    let mut adjs: Vec<Mat> = sizes.iter().map(|&s| Mat::zeros(s, s)).collect();
    let a_path = file("A");
    for (ln, line) in read_lines(&a_path)? {
        let mut parts = line.split(',');
        let (a, b) = match (parts.next(), parts.next(), parts.next()) {
            (Some(a), Some(b), None) => (a, b),
            _ => {
                return Err(parse_err(
                    &a_path,
                    ln,
                    format!("expected \"i, j\", got {line:?}"),
                ))
            }
        };
        let u = parse_int(&a_path, ln, a, "edge endpoint")?;
        let v = parse_int(&a_path, ln, b, "edge endpoint")?;
        for e in [u, v] {
            if e < 1 || e as usize > n_nodes {
                return Err(parse_err(
                    &a_path,
                    ln,
                    format!("node id {e} outside 1..={n_nodes}"),
                ));
            }
        }
        let (u, v) = (u as usize - 1, v as usize - 1);
        if u == v {
            continue; // self-loop
        }
        let g = node_graph[u];
        if node_graph[v] != g {
            return Err(parse_err(
                &a_path,
                ln,
                format!(
                    "edge ({}, {}) crosses graphs {} and {}",
                    u + 1,
                    v + 1,
                    g + 1,
                    node_graph[v] + 1
                ),
            ));
        }
        adjs[g][(local[u], local[v])] = 1.0;
        adjs[g][(local[v], local[u])] = 1.0;
    }

    // assemble
    let mut feat_rows: Vec<Vec<Vec<f64>>> = vec![Vec::new(); n_graphs];
    for (node, row) in features.into_iter().enumerate() {
        feat_rows[node_graph[node]].push(row);
    }
    let mut graphs = Vec::with_capacity(n_graphs);
    for (g, adj) in adjs.into_iter().enumerate() {
        let n = adj.rows();
        let mut data = Vec::with_capacity(n * feat_dim);
        for row in &feat_rows[g] {
            data.extend_from_slice(row);
        }
        let feats = Mat::new(n, feat_dim, data)?;
        graphs.push(Graph::new(g as u64, adj, feats, Label::Class(labels[g]))?);
    }
    Ok(graphs)
}
