//! Node embeddings and the `embeddings.tsv` exchange format:
//!
//! ```text
//! # dim=<d> method=<name> seed=<s>
//! <id>\t<v1>\t...\t<vd>
//! ```
//!
//! Values are written with nine significant digits.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::graph::FeatureMatrix;
use crate::ndmath::{dot, Dense};
use crate::textfmt::sig9;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    row_ids: Vec<String>,
    values: Dense,
}

impl EmbeddingMatrix {
    pub fn new(row_ids: Vec<String>, values: Dense) -> Result<Self> {
        if row_ids.len() != values.rows() {
            return Err(Error::Shape(format!(
                "{} ids for {} embedding rows",
                row_ids.len(),
                values.rows()
            )));
        }
        if values.cols() == 0 {
            return Err(Error::invalid("embedding width must be at least 1"));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite("embedding contains non-finite values".into()));
        }
        Ok(EmbeddingMatrix { row_ids, values })
    }

    pub fn dim(&self) -> usize {
        self.values.cols()
    }

    pub fn n_rows(&self) -> usize {
        self.values.rows()
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn values(&self) -> &Dense {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.values.row(i)
    }

    /// Side-by-side concatenation of two embeddings over the same rows.
    pub fn hstack(&self, other: &EmbeddingMatrix) -> Result<EmbeddingMatrix> {
        if self.row_ids != other.row_ids {
            return Err(Error::Shape("hstack over different row ids".into()));
        }
        let mut data = Vec::with_capacity(self.n_rows() * (self.dim() + other.dim()));
        for i in 0..self.n_rows() {
            data.extend_from_slice(self.row(i));
            data.extend_from_slice(other.row(i));
        }
        let values = Dense::from_vec(self.n_rows(), self.dim() + other.dim(), data)?;
        EmbeddingMatrix::new(self.row_ids.clone(), values)
    }

    /// View as a feature table with columns `emb_0 .. emb_{d-1}`.
    pub fn to_feature_matrix(&self) -> Result<FeatureMatrix> {
        FeatureMatrix::new(
            self.row_ids.clone(),
            (0..self.dim()).map(|j| format!("emb_{j}")).collect(),
            self.values.data().to_vec(),
        )
    }

    pub fn to_tsv_string(&self, method: &str, seed: u64) -> String {
        let mut s = header_line(self.dim(), method, seed);
        s.push('\n');
        for (i, id) in self.row_ids.iter().enumerate() {
            s.push_str(id);
            for &x in self.row(i) {
                s.push('\t');
                s.push_str(&sig9(x));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_tsv(&self, path: impl AsRef<Path>, method: &str, seed: u64) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_tsv_string(method, seed)).map_err(|e| Error::io(path, e))
    }
}

/// Header fields of an `embeddings.tsv` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmbeddingHeader {
    pub dim: usize,
    pub method: String,
    pub seed: u64,
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<(EmbeddingMatrix, EmbeddingHeader)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty file"))?;
    let header = parse_header(first)
        .ok_or_else(|| Error::parse(path, 1, "expected \"# dim=<d> method=<name> seed=<s>\""))?;
    let mut ids = Vec::new();
    let mut data = Vec::new();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split('\t').collect();
        if cells.len() != header.dim + 1 {
            return Err(Error::parse(
                path,
                lineno + 1,
                format!("expected {} columns, found {}", header.dim + 1, cells.len()),
            ));
        }
        ids.push(cells[0].to_string());
        for c in &cells[1..] {
            data.push(
                c.parse::<f64>()
                    .map_err(|_| Error::parse(path, lineno + 1, format!("bad value {c:?}")))?,
            );
        }
    }
    let values = Dense::from_vec(ids.len(), header.dim, data)?;
    Ok((EmbeddingMatrix::new(ids, values)?, header))
}

fn parse_header(line: &str) -> Option<EmbeddingHeader> {
    let rest = line.strip_prefix('#')?.trim();
    let mut dim = None;
    let mut method = None;
    let mut seed = None;
    for kv in rest.split_whitespace() {
        let (k, v) = kv.split_once('=')?;
        match k {
            "dim" => dim = v.parse().ok(),
            "method" => method = Some(v.to_string()),
            "seed" => seed = v.parse().ok(),
            _ => {}
        }
    }
    Some(EmbeddingHeader {
        dim: dim?,
        method: method?,
        seed: seed?,
    })
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot(a, b) / (na * nb)
}

/// Mean cosine similarity within and across two groups of rows.
pub fn group_cosines(emb: &EmbeddingMatrix, a: &[usize], b: &[usize]) -> (f64, f64) {
    let mut intra = (0.0, 0usize);
    for group in [a, b] {
        for (k, &i) in group.iter().enumerate() {
            for &j in &group[k + 1..] {
                intra.0 += cosine(emb.row(i), emb.row(j));
                intra.1 += 1;
            }
        }
    }
    let mut inter = (0.0, 0usize);
    for &i in a {
        for &j in b {
            inter.0 += cosine(emb.row(i), emb.row(j));
            inter.1 += 1;
        }
    }
    (intra.0 / intra.1 as f64, inter.0 / inter.1 as f64)
}

fn header_line(dim: usize, method: &str, seed: u64) -> String {
    format!("# dim={dim} method={method} seed={seed}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tsv_round_trip_at_nine_digits() {
        let values = Dense::from_vec(2, 2, vec![0.5, -1.0 / 3.0, 1e-7, 42.0]).unwrap();
        let e = EmbeddingMatrix::new(vec!["a".into(), "b".into()], values).unwrap();
        let s = e.to_tsv_string("line", 7);
        assert!(s.starts_with(&header_line(2, "line", 7)));
        assert!(s.contains("a\t0.5\t-0.333333333\n"));
        let f = tempfile::NamedTempFile::new().unwrap();
        e.write_tsv(f.path(), "line", 7).unwrap();
        let (back, h) = load_embeddings(f.path()).unwrap();
        assert_eq!(
            h,
            EmbeddingHeader {
                dim: 2,
                method: "line".into(),
                seed: 7
            }
        );
        assert_eq!(back.row_ids(), e.row_ids());
        for (x, y) in back.values().data().iter().zip(e.values().data()) {
            assert!((x - y).abs() <= 1e-8 * y.abs());
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(EmbeddingMatrix::new(vec!["a".into()], Dense::zeros(2, 3)).is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], Dense::filled(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 0.0], &[2.0, 0.0]) - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
    }
}
