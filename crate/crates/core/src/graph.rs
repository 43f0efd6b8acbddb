//! Directed graphs in compressed sparse row form, plus the node-keyed feature
//! and label tables that travel with them.
//!
//! Node identity is the string id. Indices are assigned in first-appearance
//! order so that every downstream seed derivation is reproducible.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::textfmt::sig9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Out,
    In,
}

/// Compressed adjacency: `targets[offsets[v]..offsets[v + 1]]`, sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Csr {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Csr {
    /// `pairs` must already be sorted and deduplicated.
    fn from_sorted_pairs(n: usize, pairs: &[(usize, usize)]) -> Self {
        let mut offsets = vec![0usize; n + 1];
        for &(u, _) in pairs {
            offsets[u + 1] += 1;
        }
        for i in 0..n {
            offsets[i + 1] += offsets[i];
        }
        Csr {
            offsets,
            targets: pairs.iter().map(|&(_, v)| v).collect(),
        }
    }

    fn row(&self, v: usize) -> &[usize] {
        &self.targets[self.offsets[v]..self.offsets[v + 1]]
    }
}

/// Immutable directed, unweighted graph with string node ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    node_ids: Vec<String>,
    index: HashMap<String, usize>,
    out_adj: Csr,
    in_adj: Csr,
    /// Union of in- and out-neighbors, used by walkers and aggregators.
    undirected: Csr,
    self_loops: usize,
}

impl Graph {
    /// Build from ids and index pairs. Duplicate edges are collapsed; the
    /// number collapsed is returned alongside the graph.
    pub fn from_edges(
        node_ids: Vec<String>,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<(Self, usize)> {
        let n = node_ids.len();
        let mut index = HashMap::with_capacity(n);
        for (i, id) in node_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate node id {id:?}")));
            }
        }
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (u, v) in edges {
            for x in [u, v] {
                if x >= n {
                    return Err(Error::NodeOutOfRange { index: x, len: n });
                }
            }
            pairs.push((u, v));
        }
        let raw = pairs.len();
        pairs.sort_unstable();
        pairs.dedup();
        let duplicates = raw - pairs.len();
        let self_loops = pairs.iter().filter(|(u, v)| u == v).count();

        let out_adj = Csr::from_sorted_pairs(n, &pairs);
        let mut rev: Vec<(usize, usize)> = pairs.iter().map(|&(u, v)| (v, u)).collect();
        rev.sort_unstable();
        let in_adj = Csr::from_sorted_pairs(n, &rev);
        let mut both = pairs;
        both.extend(rev);
        both.sort_unstable();
        both.dedup();
        let undirected = Csr::from_sorted_pairs(n, &both);

        Ok((
            Graph {
                node_ids,
                index,
                out_adj,
                in_adj,
                undirected,
                self_loops,
            },
            duplicates,
        ))
    }

    pub fn n_nodes(&self) -> usize {
        self.node_ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.out_adj.targets.len()
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_id(&self, v: usize) -> &str {
        &self.node_ids[v]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    /// Number of self-loop edges. They are kept but flagged here.
    pub fn self_loops(&self) -> usize {
        self.self_loops
    }

    /// Sorted neighbor indices of `v` in the given direction.
    pub fn neighbors(&self, v: usize, direction: Direction) -> Result<&[usize]> {
        self.check(v)?;
        Ok(match direction {
            Direction::Out => self.out_adj.row(v),
            Direction::In => self.in_adj.row(v),
        })
    }

    /// Sorted union of in- and out-neighbors.
    pub fn undirected_neighbors(&self, v: usize) -> Result<&[usize]> {
        self.check(v)?;
        Ok(self.undirected.row(v))
    }

    pub fn out_degree(&self, v: usize) -> usize {
        self.out_adj.row(v).len()
    }

    pub fn in_degree(&self, v: usize) -> usize {
        self.in_adj.row(v).len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        u < self.n_nodes() && self.out_adj.row(u).binary_search(&v).is_ok()
    }

    /// The `k`-th edge in (source, target) lexicographic order.
    pub fn edge_at(&self, k: usize) -> Option<(usize, usize)> {
        if k >= self.n_edges() {
            return None;
        }
        // Last source whose offset is <= k.
        let src = self.out_adj.offsets.partition_point(|&o| o <= k) - 1;
        Some((src, self.out_adj.targets[k]))
    }

    /// All edges in (source, target) order, from the out-adjacency.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n_nodes()).flat_map(move |u| self.out_adj.row(u).iter().map(move |&v| (u, v)))
    }

    /// All edges recovered from the in-adjacency, in (source, target) order.
    pub fn edges_from_in_adjacency(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = (0..self.n_nodes())
            .flat_map(|v| self.in_adj.row(v).iter().map(move |&u| (u, v)))
            .collect();
        e.sort_unstable();
        e
    }

    /// Append ids not already present as isolated nodes. Returns the new graph
    /// and how many nodes were added.
    pub fn with_isolated_nodes<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> (Graph, usize) {
        let mut node_ids = self.node_ids.clone();
        let mut seen: HashSet<&str> = self.node_ids.iter().map(String::as_str).collect();
        let mut added = 0;
        for id in ids {
            if seen.insert(id) {
                node_ids.push(id.to_string());
                added += 1;
            }
        }
        if added == 0 {
            return (self.clone(), 0);
        }
        let (g, _) = Graph::from_edges(node_ids, self.edges()).expect("edges stay in range");
        (g, added)
    }

    fn check(&self, v: usize) -> Result<()> {
        if v >= self.n_nodes() {
            Err(Error::NodeOutOfRange {
                index: v,
                len: self.n_nodes(),
            })
        } else {
            Ok(())
        }
    }
}

/// Graph loaded from an edge list, with ingestion counters.
#[derive(Debug, Clone)]
pub struct LoadedGraph {
    pub graph: Graph,
    pub duplicate_edges: usize,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Read a TAB-separated `source<TAB>target` edge list. Lines starting with
/// `#` and blank lines are skipped.
pub fn load_edge_list(path: impl AsRef<Path>) -> Result<LoadedGraph> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut ids: Vec<String> = Vec::new();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut edges = Vec::new();
    let mut intern = |s: &str| -> usize {
        if let Some(&i) = index.get(s) {
            return i;
        }
        ids.push(s.to_string());
        index.insert(s.to_string(), ids.len() - 1);
        ids.len() - 1
    };
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 2 || cols.iter().any(|c| c.trim().is_empty()) {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected 2 tab-separated columns, found {}", cols.len()),
            ));
        }
        let u = intern(cols[0].trim());
        let v = intern(cols[1].trim());
        edges.push((u, v));
    }
    if edges.is_empty() {
        return Err(Error::invalid(format!("{}: no edges", path.display())));
    }
    let (graph, duplicate_edges) = Graph::from_edges(ids, edges)?;
    if duplicate_edges > 0 {
        log::warn!("{}: collapsed {duplicate_edges} duplicate edges", path.display());
    }
    if graph.self_loops() > 0 {
        log::warn!("{}: {} self-loops", path.display(), graph.self_loops());
    }
    Ok(LoadedGraph {
        graph,
        duplicate_edges,
    })
}

/// Serialize as a TAB-separated edge list whose first-appearance order
/// reproduces the node indices whenever that is possible (always the case for
/// graphs read with [`load_edge_list`]). Isolated nodes cannot be written.
pub fn edge_list_string(g: &Graph) -> String {
    let mut s = String::from("# source\ttarget\n");
    let n = g.n_nodes();
    let mut emitted = vec![false; n];
    let mut written: HashSet<(usize, usize)> = HashSet::new();
    for next in 0..n {
        if emitted[next] {
            continue;
        }
        if let Some((u, v)) = introducing_edge(g, next, &emitted) {
            let _ = writeln!(s, "{}\t{}", g.node_id(u), g.node_id(v));
            emitted[u] = true;
            emitted[v] = true;
            written.insert((u, v));
        }
    }
    for (u, v) in g.edges() {
        if !written.contains(&(u, v)) {
            let _ = writeln!(s, "{}\t{}", g.node_id(u), g.node_id(v));
        }
    }
    s
}

/// An edge that makes `m` appear next: its other endpoint is `m` itself or
/// already written, or it is `(m, m + 1)`.
fn introducing_edge(g: &Graph, m: usize, emitted: &[bool]) -> Option<(usize, usize)> {
    g.out_adj
        .row(m)
        .iter()
        .find(|&&v| v == m || emitted[v])
        .map(|&v| (m, v))
        .or_else(|| g.in_adj.row(m).iter().find(|&&u| emitted[u]).map(|&u| (u, m)))
        .or_else(|| g.has_edge(m, m + 1).then_some((m, m + 1)))
}

pub fn write_edge_list(g: &Graph, path: impl AsRef<Path>) -> Result<()> {
    write(path.as_ref(), &edge_list_string(g))
}

/// Dense node-by-feature table with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    row_ids: Vec<String>,
    col_names: Vec<String>,
    values: Vec<f64>,
    index: HashMap<String, usize>,
}

impl FeatureMatrix {
    pub fn new(row_ids: Vec<String>, col_names: Vec<String>, values: Vec<f64>) -> Result<Self> {
        if col_names.is_empty() {
            return Err(Error::invalid("feature table needs at least one column"));
        }
        if values.len() != row_ids.len() * col_names.len() {
            return Err(Error::Shape(format!(
                "{} values for {} rows x {} columns",
                values.len(),
                row_ids.len(),
                col_names.len()
            )));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite()) {
            return Err(Error::invalid(format!("non-finite feature value {x}")));
        }
        let mut index = HashMap::with_capacity(row_ids.len());
        for (i, id) in row_ids.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate row id {id:?}")));
            }
        }
        Ok(FeatureMatrix {
            row_ids,
            col_names,
            values,
            index,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.row_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.col_names.len()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_names(&self) -> &[String] {
        &self.col_names
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let f = self.n_cols();
        &self.values[i * f..(i + 1) * f]
    }

    pub fn row_by_id(&self, id: &str) -> Option<&[f64]> {
        self.index.get(id).map(|&i| self.row(i))
    }

    pub fn row_index(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows())
            .map(|i| self.values[i * self.n_cols() + j])
            .collect()
    }

    /// Keep only the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> Result<FeatureMatrix> {
        let f = self.n_cols();
        let mut values = Vec::with_capacity(self.n_rows() * cols.len());
        for i in 0..self.n_rows() {
            for &j in cols {
                values.push(self.values[i * f + j]);
            }
        }
        FeatureMatrix::new(
            self.row_ids.clone(),
            cols.iter().map(|&j| self.col_names[j].clone()).collect(),
            values,
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("id");
        for c in &self.col_names {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            s.push_str(id);
            for &x in self.row(i) {
                s.push(',');
                s.push_str(&sig9(x));
            }
            s.push('\n');
        }
        s
    }
}

/// Read a comma-separated feature table. The header's first cell must be `id`.
pub fn load_feature_table(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::parse(path, 1, "empty feature table"))?;
    let header: Vec<&str> = header.trim_end_matches('\r').split(',').map(str::trim).collect();
    if header[0] != "id" {
        return Err(Error::parse(path, 1, "header must start with \"id\""));
    }
    let cols: Vec<String> = header[1..].iter().map(|s| s.to_string()).collect();
    if cols.is_empty() {
        return Err(Error::parse(path, 1, "no feature columns"));
    }
    let mut row_ids = Vec::new();
    let mut values = Vec::new();
    let mut seen = HashSet::new();
    for (lineno, line) in lines {
        let cells: Vec<&str> = line.trim_end_matches('\r').split(',').map(str::trim).collect();
        if cells.len() != cols.len() + 1 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {} cells, found {}", cols.len() + 1, cells.len()),
            ));
        }
        if !seen.insert(cells[0].to_string()) {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("duplicate id {:?}", cells[0]),
            ));
        }
        for (j, cell) in cells[1..].iter().enumerate() {
            let x: f64 = cell.parse().map_err(|_| {
                Error::parse(
                    path,
                    lineno + 1,
                    format!("column {:?}: non-numeric value {cell:?}", cols[j]),
                )
            })?;
            if !x.is_finite() {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("column {:?}: non-finite value {cell:?}", cols[j]),
                ));
            }
            values.push(x);
        }
        row_ids.push(cells[0].to_string());
    }
    FeatureMatrix::new(row_ids, cols, values)
}

/// Binary labels over a universe of node ids, in ingestion order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    universe: Vec<String>,
    labels: HashMap<String, bool>,
}

impl LabelSet {
    /// Requires at least one positive and one negative.
    pub fn new(entries: impl IntoIterator<Item = (String, bool)>) -> Result<Self> {
        let mut universe = Vec::new();
        let mut labels = HashMap::new();
        for (id, y) in entries {
            match labels.get(&id) {
                Some(&prev) if prev != y => {
                    return Err(Error::invalid(format!("conflicting labels for {id:?}")))
                }
                Some(_) => continue,
                None => {
                    labels.insert(id.clone(), y);
                    universe.push(id);
                }
            }
        }
        let n_pos = labels.values().filter(|&&y| y).count();
        if n_pos == 0 {
            return Err(Error::invalid("label set has no positives"));
        }
        if n_pos == universe.len() {
            return Err(Error::invalid("label set has no negatives"));
        }
        Ok(LabelSet { universe, labels })
    }

    pub fn universe(&self) -> &[String] {
        &self.universe
    }

    pub fn len(&self) -> usize {
        self.universe.len()
    }

    pub fn is_empty(&self) -> bool {
        self.universe.is_empty()
    }

    pub fn label(&self, id: &str) -> Option<bool> {
        self.labels.get(id).copied()
    }

    pub fn is_positive(&self, id: &str) -> bool {
        self.label(id) == Some(true)
    }

    /// Positive ids in universe order.
    pub fn positives(&self) -> Vec<&str> {
        self.universe
            .iter()
            .filter(|id| self.labels[*id])
            .map(String::as_str)
            .collect()
    }

    /// Negative ids in universe order.
    pub fn negatives(&self) -> Vec<&str> {
        self.universe
            .iter()
            .filter(|id| !self.labels[*id])
            .map(String::as_str)
            .collect()
    }

    pub fn n_positives(&self) -> usize {
        self.labels.values().filter(|&&y| y).count()
    }

    /// Restrict to a subset of ids (unknown ids are ignored). Fails if the
    /// restriction loses a class.
    pub fn restrict<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<LabelSet> {
        let keep: HashSet<&str> = ids.into_iter().collect();
        LabelSet::new(
            self.universe
                .iter()
                .filter(|id| keep.contains(id.as_str()))
                .map(|id| (id.clone(), self.labels[id])),
        )
    }

    pub fn to_csv_string(&self) -> String {
        let mut s = String::from("id,label\n");
        for id in &self.universe {
            let _ = writeln!(s, "{id},{}", u8::from(self.labels[id]));
        }
        s
    }
}

/// Read `id,label` rows with label in {0, 1}. A header row is optional.
pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelSet> {
    let path = path.as_ref();
    let text = read(path)?;
    let mut entries: Vec<(String, bool)> = Vec::new();
    let mut seen: HashMap<String, bool> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        if cells.len() != 2 {
            return Err(Error::parse(path, lineno + 1, "expected \"id,label\""));
        }
        if entries.is_empty() && seen.is_empty() && cells == ["id", "label"] {
            continue;
        }
        let y = match cells[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("label must be 0 or 1, found {other:?}"),
                ))
            }
        };
        match seen.get(cells[0]) {
            Some(&prev) if prev != y => {
                return Err(Error::parse(
                    path,
                    lineno + 1,
                    format!("conflicting labels for {:?}", cells[0]),
                ))
            }
            Some(_) => continue,
            None => {
                seen.insert(cells[0].to_string(), y);
                entries.push((cells[0].to_string(), y));
            }
        }
    }
    LabelSet::new(entries).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))
}
