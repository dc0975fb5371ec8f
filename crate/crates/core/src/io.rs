//! On-disk graph format.
//!
//! A graph directory holds:
//!
//! | file            | content                                                  |
//! |-----------------|----------------------------------------------------------|
//! | `edges.tsv`     | one `u<TAB>v` pair of 0-based ids per line               |
//! | `features.csv`  | one comma-separated row per node, no header              |
//! | `features.bin`  | alternative: `u32` rows, `u32` cols, then `f32` values, all little-endian, row-major |
//! | `labels.csv`    | `node,label`; an empty label marks an unlabeled node     |
//! | `sensitive.csv` | `node,sensitive` with values 0 or 1                      |
//! | `meta.json`     | node, feature and class counts (optional on load)        |
//! | `split.json`    | train/val/test ids (optional)                            |
//! | `plan.json`     | injection sidecar; present only for poisoned graphs      |
//!
//! Edges are symmetrized and deduplicated on load, so directed edge lists
//! are accepted. Every node must appear in both attribute files.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, PlanSidecar, Split};

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_CSV: &str = "features.csv";
pub const FEATURES_BIN: &str = "features.bin";
pub const LABELS_FILE: &str = "labels.csv";
pub const SENSITIVE_FILE: &str = "sensitive.csv";
pub const META_FILE: &str = "meta.json";
pub const SPLIT_FILE: &str = "split.json";
pub const PLAN_FILE: &str = "plan.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphMeta {
    pub num_nodes: usize,
    pub num_features: usize,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FeatureFormat {
    /// Decimal text, exact round trip.
    #[default]
    Csv,
    /// 32-bit floats; lossy for `f64` features.
    Binary,
}

/// A graph directory after loading.
#[derive(Debug, Clone)]
pub struct GraphDir {
    pub graph: Graph,
    pub split: Option<Split>,
    pub plan: Option<PlanSidecar>,
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a whitespace-separated edge list. Blank lines and `#` comments are
/// skipped.
pub fn read_edges(path: &Path) -> Result<Vec<(usize, usize)>> {
    let mut edges = Vec::new();
    for (lineno, line) in open(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut it = line.split_whitespace();
        let mut id = || -> Result<usize> {
            it.next()
                .ok_or_else(|| {
                    Error::format(path, format!("line {}: expected two ids", lineno + 1))
                })?
                .parse()
                .map_err(|e| Error::format(path, format!("line {}: {e}", lineno + 1)))
        };
        let (u, v) = (id()?, id()?);
        edges.push((u, v));
    }
    Ok(edges)
}

pub fn write_edges(path: &Path, g: &Graph) -> Result<()> {
    let mut w = create(path)?;
    for (u, v) in g.edges() {
        writeln!(w, "{u}\t{v}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_csv(path: &Path) -> Result<Array2<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_reader(open(path)?);
    let mut values = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for rec in rdr.records() {
        let rec = rec?;
        match cols {
            None => cols = Some(rec.len()),
            Some(c) if c != rec.len() => {
                return Err(Error::format(
                    path,
                    format!("row {rows} has {} columns, expected {c}", rec.len()),
                ))
            }
            _ => {}
        }
        for field in rec.iter() {
            values.push(
                field
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::format(path, format!("row {rows}: {e}")))?,
            );
        }
        rows += 1;
    }
    Array2::from_shape_vec((rows, cols.unwrap_or(0)), values)
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_features_csv(path: &Path, x: &Array2<f64>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(create(path)?);
    for row in x.rows() {
        // `Display` for f64 is the shortest string that parses back exactly.
        w.write_record(row.iter().map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_features_bin(path: &Path) -> Result<Array2<f64>> {
    let mut buf = Vec::new();
    open(path)?
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    if buf.len() < 8 {
        return Err(Error::format(path, "missing 8-byte header"));
    }
    let rows = u32::from_le_bytes(buf[0..4].try_into().expect("4 bytes")) as usize;
    let cols = u32::from_le_bytes(buf[4..8].try_into().expect("4 bytes")) as usize;
    let body = &buf[8..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("{} payload bytes for a {rows}x{cols} matrix", body.len()),
        ));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn write_features_bin(path: &Path, x: &Array2<f64>) -> Result<()> {
    let too_big =
        |n: usize| u32::try_from(n).map_err(|_| Error::format(path, "dimension exceeds u32"));
    let mut w = create(path)?;
    let mut bytes = Vec::with_capacity(8 + x.len() * 4);
    bytes.extend_from_slice(&too_big(x.nrows())?.to_le_bytes());
    bytes.extend_from_slice(&too_big(x.ncols())?.to_le_bytes());
    for &v in x.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

/// Reads a `node,value` file into a dense vector of `n` entries. Every node
/// must be listed exactly once; an empty value yields `None`.
fn read_attribute(path: &Path, n: usize) -> Result<Vec<Option<usize>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(open(path)?);
    let mut out: Vec<Option<Option<usize>>> = vec![None; n];
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |k: usize| rec.get(k).map(str::trim).unwrap_or("");
        let node: usize = field(0)
            .parse()
            .map_err(|e| Error::format(path, format!("record {}: node id: {e}", i + 1)))?;
        if node >= n {
            return Err(Error::format(
                path,
                format!("node {node} out of range for {n} nodes"),
            ));
        }
        let value = match field(1) {
            "" => None,
            s => Some(
                s.parse()
                    .map_err(|e| Error::format(path, format!("node {node}: {e}")))?,
            ),
        };
        if out[node].replace(value).is_some() {
            return Err(Error::format(path, format!("node {node} listed twice")));
        }
    }
    if let Some(missing) = out.iter().position(Option::is_none) {
        return Err(Error::format(
            path,
            format!("node {missing} missing (file must cover all {n} nodes)"),
        ));
    }
    Ok(out.into_iter().map(|v| v.expect("checked")).collect())
}

fn write_attribute<T: ToString>(
    path: &Path,
    header: &str,
    values: impl Iterator<Item = Option<T>>,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(["node", header])?;
    for (u, v) in values.enumerate() {
        w.write_record([u.to_string(), v.map(|x| x.to_string()).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads the four core files. The node count comes from the feature matrix.
pub fn load_graph(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    sensitive_path: &Path,
) -> Result<Graph> {
    load_with(
        edge_path,
        feature_path,
        label_path,
        sensitive_path,
        None,
        None,
    )
}

fn load_with(
    edge_path: &Path,
    feature_path: &Path,
    label_path: &Path,
    sensitive_path: &Path,
    num_original: Option<usize>,
    num_classes: Option<usize>,
) -> Result<Graph> {
    let features = if feature_path.extension().is_some_and(|e| e == "bin") {
        read_features_bin(feature_path)?
    } else {
        read_features_csv(feature_path)?
    };
    let n = features.nrows();
    let edges = read_edges(edge_path)?;
    if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n) {
        return Err(Error::format(
            edge_path,
            format!("edge ({u}, {v}) references a node beyond the {n} feature rows"),
        ));
    }
    let labels = read_attribute(label_path, n)?;
    let sensitive = read_attribute(sensitive_path, n)?
        .into_iter()
        .enumerate()
        .map(|(u, s)| match s {
            Some(0) => Ok(0u8),
            Some(1) => Ok(1u8),
            Some(other) => Err(Error::format(
                sensitive_path,
                format!("node {u}: sensitive value {other} is not 0 or 1"),
            )),
            None => Err(Error::format(
                sensitive_path,
                format!("node {u}: missing value"),
            )),
        })
        .collect::<Result<Vec<u8>>>()?;
    let injected = (0..n)
        .map(|u| num_original.is_some_and(|m| u >= m))
        .collect();
    Graph::with_flags(
        n,
        &edges,
        features,
        labels,
        sensitive,
        injected,
        num_classes,
    )
}

/// Loads a graph directory written by [`save_graph_dir`] (or by hand).
pub fn load_graph_dir(dir: &Path) -> Result<GraphDir> {
    let features = if dir.join(FEATURES_CSV).exists() {
        dir.join(FEATURES_CSV)
    } else {
        dir.join(FEATURES_BIN)
    };
    let plan: Option<PlanSidecar> = optional_json(&dir.join(PLAN_FILE))?;
    let meta: Option<GraphMeta> = optional_json(&dir.join(META_FILE))?;
    let graph = load_with(
        &dir.join(EDGES_FILE),
        &features,
        &dir.join(LABELS_FILE),
        &dir.join(SENSITIVE_FILE),
        plan.as_ref().map(|p| p.num_original_nodes),
        meta.map(|m| m.num_classes),
    )?;
    if let Some(m) = meta {
        if m.num_nodes != graph.num_nodes() || m.num_features != graph.num_features() {
            return Err(Error::format(
                dir.join(META_FILE),
                format!(
                    "declares {}x{} but files hold {}x{}",
                    m.num_nodes,
                    m.num_features,
                    graph.num_nodes(),
                    graph.num_features()
                ),
            ));
        }
    }
    let split: Option<Split> = optional_json(&dir.join(SPLIT_FILE))?;
    if let Some(s) = &split {
        s.validate(&graph)?;
    }
    Ok(GraphDir { graph, split, plan })
}

fn optional_json<T: DeserializeOwned>(path: &Path) -> Result<Option<T>> {
    if path.exists() {
        read_json(path).map(Some)
    } else {
        Ok(None)
    }
}

/// Writes every file of a graph directory, creating `dir` if needed.
pub fn save_graph_dir(
    dir: &Path,
    g: &Graph,
    split: Option<&Split>,
    plan: Option<&PlanSidecar>,
    format: FeatureFormat,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    write_edges(&put(EDGES_FILE), g)?;
    match format {
        FeatureFormat::Csv => write_features_csv(&put(FEATURES_CSV), &g.features().to_owned())?,
        FeatureFormat::Binary => write_features_bin(&put(FEATURES_BIN), &g.features().to_owned())?,
    }
    write_attribute(&put(LABELS_FILE), "label", g.labels().iter().copied())?;
    write_attribute(
        &put(SENSITIVE_FILE),
        "sensitive",
        g.sensitive().iter().map(|&s| Some(s)),
    )?;
    write_json(
        &put(META_FILE),
        &GraphMeta {
            num_nodes: g.num_nodes(),
            num_features: g.num_features(),
            num_classes: g.num_classes(),
        },
    )?;
    if let Some(s) = split {
        write_json(&put(SPLIT_FILE), s)?;
    }
    if let Some(p) = plan {
        write_json(&put(PLAN_FILE), p)?;
    }
    Ok(written)
}
