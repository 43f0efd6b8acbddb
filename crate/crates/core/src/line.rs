//! LINE: edge-sampling embeddings that preserve first-order (shared edge) and
//! second-order (shared neighborhood) proximity, trained with negative
//! sampling.

use rand::Rng as _;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::ndmath::Dense;
use crate::node2vec::{sgns_update, NoiseTable};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineOrder {
    First,
    Second,
    /// First- and second-order halves trained separately, then concatenated.
    Both,
}

impl std::str::FromStr for LineOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(LineOrder::First),
            "second" => Ok(LineOrder::Second),
            "both" => Ok(LineOrder::Both),
            _ => Err(Error::invalid(format!("unknown LINE order {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineConfig {
    pub dim: usize,
    pub order: LineOrder,
    pub negatives: usize,
    /// Edge samples per half; `None` means 100 per edge.
    pub samples: Option<usize>,
    pub lr: f64,
}

impl Default for LineConfig {
    fn default() -> Self {
        LineConfig {
            dim: 80,
            order: LineOrder::Both,
            negatives: 5,
            samples: None,
            lr: 0.025,
        }
    }
}

/// Number of loss windows reported per training run.
pub const LOSS_WINDOWS: usize = 10;

#[derive(Debug, Clone)]
pub struct LineOutput {
    pub embedding: EmbeddingMatrix,
    /// Mean sample loss in each of [`LOSS_WINDOWS`] consecutive windows, per
    /// trained half (first-order half first when `order = Both`).
    pub window_losses: Vec<Vec<f64>>,
}

/// Uniform edge draw.
pub fn sample_edge(g: &Graph, rng: &mut Rng) -> Result<(usize, usize)> {
    if g.n_edges() == 0 {
        return Err(Error::invalid("cannot sample from a graph without edges"));
    }
    let k = rng.random_range(0..g.n_edges());
    Ok(g.edge_at(k).expect("index in range"))
}

pub fn line_train(g: &Graph, cfg: &LineConfig, seed: u64) -> Result<LineOutput> {
    if g.n_edges() == 0 {
        return Err(Error::invalid("LINE needs at least one edge"));
    }
    if cfg.dim == 0 {
        return Err(Error::invalid("LINE dim must be at least 1"));
    }
    let samples = cfg.samples.unwrap_or(100 * g.n_edges());
    if samples < g.n_edges() {
        return Err(Error::invalid(format!(
            "sample count {samples} below edge count {}",
            g.n_edges()
        )));
    }
    let ids = g.node_ids().to_vec();
    match cfg.order {
        LineOrder::First | LineOrder::Second => {
            let (m, losses) = train_half(g, cfg.order, cfg.dim, cfg, samples, seed)?;
            Ok(LineOutput {
                embedding: EmbeddingMatrix::new(ids, m)?,
                window_losses: vec![losses],
            })
        }
        LineOrder::Both => {
            if !cfg.dim.is_multiple_of(2) {
                return Err(Error::invalid("order=both needs an even dimension"));
            }
            let half = cfg.dim / 2;
            let (a, la) = train_half(
                g,
                LineOrder::First,
                half,
                cfg,
                samples,
                seed::derive(seed, "first"),
            )?;
            let (b, lb) = train_half(
                g,
                LineOrder::Second,
                half,
                cfg,
                samples,
                seed::derive(seed, "second"),
            )?;
            let first = EmbeddingMatrix::new(ids.clone(), a)?;
            let second = EmbeddingMatrix::new(ids, b)?;
            Ok(LineOutput {
                embedding: first.hstack(&second)?,
                window_losses: vec![la, lb],
            })
        }
    }
}

fn train_half(
    g: &Graph,
    order: LineOrder,
    dim: usize,
    cfg: &LineConfig,
    samples: usize,
    seed: u64,
) -> Result<(Dense, Vec<f64>)> {
    let n = g.n_nodes();
    let mut rng = seed::rng(seed);
    let degrees: Vec<f64> = (0..n)
        .map(|v| (g.out_degree(v) + g.in_degree(v)) as f64)
        .collect();
    let noise = NoiseTable::new(&degrees)?;
    let mut vertex = Dense::uniform(n, dim, -0.5 / dim as f64, 0.5 / dim as f64, &mut rng);
    // Second order keeps separate context vectors; first order scores vertex
    // against vertex.
    let mut context = Dense::zeros(n, dim);
    let mut negs = vec![0usize; cfg.negatives];
    let mut scratch = vec![0.0; dim];
    let mut row = vec![0.0; dim];
    let window = samples.div_ceil(LOSS_WINDOWS);
    let mut losses = Vec::with_capacity(LOSS_WINDOWS);
    let (mut acc, mut count) = (0.0, 0usize);

    for t in 0..samples {
        let (mut u, mut v) = sample_edge(g, &mut rng)?;
        if order == LineOrder::First && rng.random::<bool>() {
            std::mem::swap(&mut u, &mut v);
        }
        for k in negs.iter_mut() {
            *k = noise.sample(&mut rng);
        }
        let lr = cfg.lr * (1.0 - t as f64 / samples as f64).max(1e-4);
        row.copy_from_slice(vertex.row(u));
        let loss = match order {
            LineOrder::Second => sgns_update(&mut row, &mut context, v, &negs, lr, &mut scratch),
            _ => sgns_update(&mut row, &mut vertex, v, &negs, lr, &mut scratch),
        };
        vertex.row_mut(u).copy_from_slice(&row);
        acc += loss;
        count += 1;
        if count == window || t + 1 == samples {
            let mean = acc / count as f64;
            if !mean.is_finite() {
                return Err(Error::NonFinite(format!("LINE loss {mean}")));
            }
            losses.push(mean);
            acc = 0.0;
            count = 0;
        }
    }
    Ok((vertex, losses))
}
