//! Planted-label benchmark graphs from a directed stochastic block model.
//!
//! Every ordered pair of distinct nodes gets an edge with probability `p_in`
//! inside a block and `p_out` across blocks. Positives are a random subset of
//! one block; labels inside that block are then flipped at the noise rate.
//! Features carry a one-hot block indicator over the signal dimensions (block
//! `b` lights dimension `b mod signal_dims`) followed by standard-normal noise
//! dimensions.

use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::graph::{edge_list_string, FeatureMatrix, Graph, LabelSet};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct SbmSpec {
    pub block_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub positive_block: usize,
    /// Share of the positive block drawn as positives (floored).
    pub positive_frac: f64,
    /// Probability of flipping each label inside the positive block.
    pub flip_rate: f64,
    pub signal_dims: usize,
    pub noise_dims: usize,
    pub seed: u64,
}

impl Default for SbmSpec {
    fn default() -> Self {
        SbmSpec {
            block_sizes: vec![120, 480],
            p_in: 0.05,
            p_out: 0.005,
            positive_block: 0,
            positive_frac: 0.6,
            flip_rate: 0.1,
            signal_dims: 4,
            noise_dims: 16,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SbmBenchmark {
    pub graph: Graph,
    pub features: FeatureMatrix,
    pub labels: LabelSet,
    /// Block index per node.
    pub blocks: Vec<usize>,
}

impl SbmSpec {
    pub fn n(&self) -> usize {
        self.block_sizes.iter().sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.block_sizes.is_empty() {
            return Err(Error::invalid("block_sizes: at least one block required"));
        }
        if self.block_sizes.contains(&0) {
            return Err(Error::invalid("block_sizes: every block needs at least one node"));
        }
        for (name, p) in [("p_in", self.p_in), ("p_out", self.p_out)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!("{name} must lie in [0, 1], got {p}")));
            }
        }
        if self.positive_block >= self.block_sizes.len() {
            return Err(Error::invalid(format!(
                "positive_block {} out of range for {} blocks",
                self.positive_block,
                self.block_sizes.len()
            )));
        }
        if !(0.0..=1.0).contains(&self.positive_frac) {
            return Err(Error::invalid("positive_frac must lie in [0, 1]"));
        }
        if !(0.0..0.5).contains(&self.flip_rate) {
            return Err(Error::invalid("flip_rate must lie in [0, 0.5)"));
        }
        if self.signal_dims + self.noise_dims == 0 {
            return Err(Error::invalid("at least one feature dimension required"));
        }
        Ok(())
    }

    pub fn node_id(i: usize) -> String {
        format!("g{i:05}")
    }

    pub fn generate(&self) -> Result<SbmBenchmark> {
        self.validate()?;
        let n = self.n();
        let blocks: Vec<usize> = self
            .block_sizes
            .iter()
            .enumerate()
            .flat_map(|(b, &s)| std::iter::repeat_n(b, s))
            .collect();
        let ids: Vec<String> = (0..n).map(Self::node_id).collect();

        let mut rng = seed::rng(seed::derive(self.seed, "edges"));
        let mut edges = Vec::new();
        for u in 0..n {
            for v in 0..n {
                if u == v {
                    continue;
                }
                let p = if blocks[u] == blocks[v] {
                    self.p_in
                } else {
                    self.p_out
                };
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        let (graph, _) = Graph::from_edges(ids.clone(), edges)?;

        let mut rng = seed::rng(seed::derive(self.seed, "labels"));
        let start: usize = self.block_sizes[..self.positive_block].iter().sum();
        let size = self.block_sizes[self.positive_block];
        let n_pos = (self.positive_frac * size as f64 + 1e-9).floor() as usize;
        let mut label = vec![false; n];
        for k in sample(&mut rng, size, n_pos.min(size)) {
            label[start + k] = true;
        }
        for y in &mut label[start..start + size] {
            if rng.random::<f64>() < self.flip_rate {
                *y = !*y;
            }
        }
        let labels = LabelSet::new(ids.iter().cloned().zip(label.iter().copied()))?;

        let mut rng = seed::rng(seed::derive(self.seed, "features"));
        let width = self.signal_dims + self.noise_dims;
        let mut values = Vec::with_capacity(n * width);
        for &b in &blocks {
            for d in 0..self.signal_dims {
                values.push(if d == b % self.signal_dims { 1.0 } else { 0.0 });
            }
            for _ in 0..self.noise_dims {
                values.push(rng.sample::<f64, _>(StandardNormal));
            }
        }
        let cols = (0..self.signal_dims)
            .map(|d| format!("signal_{d}"))
            .chain((0..self.noise_dims).map(|d| format!("noise_{d}")))
            .collect();
        let features = FeatureMatrix::new(ids, cols, values)?;
        Ok(SbmBenchmark {
            graph,
            features,
            labels,
            blocks,
        })
    }
}

pub const EDGES_FILE: &str = "edges.tsv";
pub const FEATURES_FILE: &str = "features.csv";
pub const LABELS_FILE: &str = "labels.csv";

impl SbmBenchmark {
    /// Write `edges.tsv`, `features.csv` and `labels.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<Vec<std::path::PathBuf>> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = [
            (EDGES_FILE, edge_list_string(&self.graph)),
            (FEATURES_FILE, self.features.to_csv_string()),
            (LABELS_FILE, self.labels.to_csv_string()),
        ];
        let mut paths = Vec::new();
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
            paths.push(p);
        }
        Ok(paths)
    }
}
