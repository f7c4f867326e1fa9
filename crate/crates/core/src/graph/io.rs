//! Dataset ingestion: citation-network `.content`/`.cites` files and the
//! self-describing generic text format.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Graph, GraphError};
use crate::tensor::Tensor;

/// Ingestion counters, kept alongside the graph so discrepancies with
/// published dataset statistics are visible rather than silently
/// reconciled. `raw_citation_rows` counts directed pairs as listed in the
/// file; `undirected_edges` counts the canonical deduplicated edges.
#[derive(Debug, Clone, Default)]
pub struct IngestStats {
    pub nodes: usize,
    pub feature_dim: usize,
    pub distinct_labels: usize,
    pub raw_citation_rows: usize,
    pub skipped_unknown_ids: usize,
    pub skipped_self_loops: usize,
    pub duplicate_pairs: usize,
    pub undirected_edges: usize,
}

fn open(path: &Path) -> Result<BufReader<File>, GraphError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| GraphError::Io { path: path.display().to_string(), source })
}

fn parse_error(path: &Path, line: usize, message: impl Into<String>) -> GraphError {
    GraphError::Parse { path: path.display().to_string(), line, message: message.into() }
}

/// Loads a citation network from `<name>.content` (one row per node:
/// `id feat_1 .. feat_F label`, tab-separated) and `<name>.cites`
/// (`cited citing` id pairs). Node ids are mapped to dense indices in
/// file order; citation direction is discarded and pairs referencing
/// unknown ids are skipped with a counted warning.
pub fn load_citation_dataset(
    content_path: &Path,
    cites_path: &Path,
) -> Result<(Graph, IngestStats), GraphError> {
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut labels: HashSet<String> = HashSet::new();
    let mut feature_dim: Option<usize> = None;

    for (lineno, line) in open(content_path)?.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: content_path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() < 3 {
            return Err(parse_error(
                content_path,
                lineno,
                format!("expected `id feat.. label` with at least 3 tab-separated fields, got {}", fields.len()),
            ));
        }
        let width = fields.len() - 2;
        match feature_dim {
            None => feature_dim = Some(width),
            Some(expected) if expected != width => {
                return Err(parse_error(
                    content_path,
                    lineno,
                    format!("inconsistent feature width: expected {expected}, got {width}"),
                ));
            }
            _ => {}
        }
        let id = fields[0].to_string();
        if ids.insert(id.clone(), rows.len()).is_some() {
            return Err(parse_error(content_path, lineno, format!("duplicate node id `{id}`")));
        }
        let mut feats = Vec::with_capacity(width);
        for (k, raw) in fields[1..fields.len() - 1].iter().enumerate() {
            let v: f64 = raw.parse().map_err(|_| {
                parse_error(content_path, lineno, format!("feature {} is not a number: `{raw}`", k + 1))
            })?;
            feats.push(v);
        }
        labels.insert(fields[fields.len() - 1].to_string());
        rows.push(feats);
    }

    let num_nodes = rows.len();
    let feature_dim = feature_dim.unwrap_or(0);
    let mut values = Vec::with_capacity(num_nodes * feature_dim);
    for row in &rows {
        values.extend_from_slice(row);
    }
    let features = Tensor::from_values(num_nodes, feature_dim, values)
        .expect("feature width checked per row");

    let mut stats = IngestStats {
        nodes: num_nodes,
        feature_dim,
        distinct_labels: labels.len(),
        ..IngestStats::default()
    };

    let mut seen = HashSet::new();
    let mut edges = Vec::new();
    for (lineno, line) in open(cites_path)?.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|source| GraphError::Io {
            path: cites_path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(cited), Some(citing), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(parse_error(cites_path, lineno, "expected exactly two ids per line"));
        };
        stats.raw_citation_rows += 1;
        let (Some(&a), Some(&b)) = (ids.get(cited), ids.get(citing)) else {
            stats.skipped_unknown_ids += 1;
            continue;
        };
        if a == b {
            stats.skipped_self_loops += 1;
            continue;
        }
        let pair = (a.min(b), a.max(b));
        if seen.insert(pair) {
            edges.push(pair);
        } else {
            stats.duplicate_pairs += 1;
        }
    }
    if stats.skipped_unknown_ids > 0 {
        log::warn!(
            "{}: skipped {} citation pairs referencing unknown node ids",
            cites_path.display(),
            stats.skipped_unknown_ids
        );
    }
    stats.undirected_edges = edges.len();

    let graph = Graph::new(num_nodes, edges, features)?;
    Ok((graph, stats))
}

/// Loads the generic text format:
/// line 1 `graph <N> <F>`, then N lines `node <id> <f1> .. <fF>` with ids
/// 0..N-1 in order, then `edges <M>`, then M lines `<i> <j>`.
pub fn load_generic_graph(path: &Path) -> Result<Graph, GraphError> {
    let mut lines = open(path)?.lines().enumerate();
    let mut next_line = |expect: &str| -> Result<(usize, String), GraphError> {
        for (lineno, line) in lines.by_ref() {
            let line = line.map_err(|source| GraphError::Io {
                path: path.display().to_string(),
                source,
            })?;
            if !line.trim().is_empty() {
                return Ok((lineno + 1, line));
            }
        }
        Err(parse_error(path, 0, format!("unexpected end of file, expected {expect}")))
    };

    let (lineno, header) = next_line("`graph <N> <F>` header")?;
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 3 || parts[0] != "graph" {
        return Err(parse_error(path, lineno, "expected header `graph <N> <F>`"));
    }
    let n: usize = parts[1]
        .parse()
        .map_err(|_| parse_error(path, lineno, format!("invalid node count `{}`", parts[1])))?;
    let f: usize = parts[2]
        .parse()
        .map_err(|_| parse_error(path, lineno, format!("invalid feature count `{}`", parts[2])))?;

    let mut values = Vec::with_capacity(n * f);
    for expect_id in 0..n {
        let (lineno, line) = next_line("a `node` line")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 + f || parts[0] != "node" {
            return Err(parse_error(
                path,
                lineno,
                format!("expected `node <id> <{f} features>`, got {} fields", parts.len()),
            ));
        }
        let id: usize = parts[1]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid node id `{}`", parts[1])))?;
        if id != expect_id {
            return Err(parse_error(
                path,
                lineno,
                format!("node ids must appear in order: expected {expect_id}, got {id}"),
            ));
        }
        for raw in &parts[2..] {
            let v: f64 = raw
                .parse()
                .map_err(|_| parse_error(path, lineno, format!("invalid feature value `{raw}`")))?;
            values.push(v);
        }
    }

    let (lineno, line) = next_line("`edges <M>` header")?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.len() != 2 || parts[0] != "edges" {
        return Err(parse_error(path, lineno, "expected `edges <M>`"));
    }
    let m: usize = parts[1]
        .parse()
        .map_err(|_| parse_error(path, lineno, format!("invalid edge count `{}`", parts[1])))?;

    let mut edges = Vec::with_capacity(m);
    for _ in 0..m {
        let (lineno, line) = next_line("an edge line")?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        if parts.len() != 2 {
            return Err(parse_error(path, lineno, "expected `<i> <j>`"));
        }
        let a: usize = parts[0]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid endpoint `{}`", parts[0])))?;
        let b: usize = parts[1]
            .parse()
            .map_err(|_| parse_error(path, lineno, format!("invalid endpoint `{}`", parts[1])))?;
        edges.push((a, b));
    }

    let features = Tensor::from_values(n, f, values).expect("dimensions checked per line");
    Graph::new(n, edges, features)
}

/// Writes the generic text format; `load_generic_graph` round-trips it.
pub fn save_generic_graph(g: &Graph, path: &Path) -> Result<(), GraphError> {
    let file = File::create(path)
        .map_err(|source| GraphError::Io { path: path.display().to_string(), source })?;
    let mut w = BufWriter::new(file);
    let io_err = |source| GraphError::Io { path: path.display().to_string(), source };

    writeln!(w, "graph {} {}", g.num_nodes(), g.feature_dim()).map_err(io_err)?;
    for i in 0..g.num_nodes() {
        write!(w, "node {i}").map_err(io_err)?;
        for v in g.features().row(i) {
            write!(w, " {v}").map_err(io_err)?;
        }
        writeln!(w).map_err(io_err)?;
    }
    writeln!(w, "edges {}", g.num_edges()).map_err(io_err)?;
    for &(a, b) in g.edges() {
        writeln!(w, "{a} {b}").map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_temp(content: &str) -> tempfile::NamedTempFile {
        use std::io::Write as _;
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn citation_two_line_fixture() {
        let content = write_temp("paper_a\t1\t0\t1\tml\npaper_b\t0\t1\t0\tdb\n");
        let cites = write_temp("paper_a\tpaper_b\n");
        let (g, stats) = load_citation_dataset(content.path(), cites.path()).unwrap();
        assert_eq!(g.num_nodes(), 2);
        assert_eq!(g.feature_dim(), 3);
        assert_eq!(g.edges(), &[(0, 1)]);
        assert_eq!(stats.raw_citation_rows, 1);
        assert_eq!(stats.undirected_edges, 1);
        assert_eq!(stats.distinct_labels, 2);
    }

    #[test]
    fn citation_skips_unknown_and_self_and_duplicates() {
        let content = write_temp("a\t1\tx\nb\t0\tx\nc\t1\ty\n");
        let cites = write_temp("a\tb\nb\ta\na\ta\na\tmissing\nc\ta\n");
        let (g, stats) = load_citation_dataset(content.path(), cites.path()).unwrap();
        assert_eq!(g.num_edges(), 2);
        assert_eq!(stats.raw_citation_rows, 5);
        assert_eq!(stats.duplicate_pairs, 1);
        assert_eq!(stats.skipped_self_loops, 1);
        assert_eq!(stats.skipped_unknown_ids, 1);
    }

    #[test]
    fn citation_reports_line_numbers_on_errors() {
        let content = write_temp("a\t1\t0\tx\nb\t0\ty\n");
        let cites = write_temp("");
        let err = load_citation_dataset(content.path(), cites.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":2:"), "missing line number: {msg}");
        assert!(msg.contains("inconsistent feature width"), "{msg}");

        let content = write_temp("a\t1\tnot_a_number\tx\n");
        let err = load_citation_dataset(content.path(), cites.path()).unwrap_err();
        assert!(err.to_string().contains("not a number"), "{err}");
    }

    #[test]
    fn generic_round_trip() {
        let g = Graph::new(
            3,
            vec![(0, 1), (1, 2)],
            Tensor::from_rows(&[
                vec![0.25, -1.5],
                vec![1.0 / 3.0, 0.0],
                vec![2.0, 4.125],
            ])
            .unwrap(),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.graph");
        save_generic_graph(&g, &path).unwrap();
        let loaded = load_generic_graph(&path).unwrap();
        assert_eq!(loaded.num_nodes(), 3);
        assert_eq!(loaded.edges(), g.edges());
        assert_eq!(loaded.features(), g.features());
    }

    #[test]
    fn generic_header_body_mismatch() {
        let file = write_temp("graph 2 1\nnode 0 1.0\nnode 1 2.0\nedges 2\n0 1\n");
        let err = load_generic_graph(file.path()).unwrap_err();
        assert!(err.to_string().contains("unexpected end of file"), "{err}");

        let file = write_temp("graph 2 1\nnode 1 1.0\n");
        let err = load_generic_graph(file.path()).unwrap_err();
        assert!(err.to_string().contains("must appear in order"), "{err}");
    }
}
