//! node2vec: second-order biased random walks fed to a skip-gram model with
//! negative sampling.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{Direction, Graph};
use crate::ndmath::Dense;
use crate::seed::{self, Rng};

/// Which adjacency the walker follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WalkView {
    /// Union of in- and out-edges.
    #[default]
    Undirected,
    /// Out-edges only; walks stop at sinks.
    Directed,
}

impl WalkView {
    fn neighbors(self, g: &Graph, v: usize) -> Result<&[usize]> {
        match self {
            WalkView::Undirected => g.undirected_neighbors(v),
            WalkView::Directed => g.neighbors(v, Direction::Out),
        }
    }

    fn adjacent(self, g: &Graph, u: usize, v: usize) -> bool {
        match self {
            WalkView::Undirected => g.has_edge(u, v) || g.has_edge(v, u),
            WalkView::Directed => g.has_edge(u, v),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walks_per_node: usize,
    pub walk_length: usize,
    pub view: WalkView,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            p: 1.0,
            q: 1.0,
            walks_per_node: 10,
            walk_length: 40,
            view: WalkView::Undirected,
        }
    }
}

impl WalkConfig {
    fn validate(&self) -> Result<()> {
        if !(self.p > 0.0 && self.q > 0.0) {
            return Err(Error::invalid("node2vec p and q must be positive"));
        }
        if self.walks_per_node == 0 || self.walk_length == 0 {
            return Err(Error::invalid("walks_per_node and walk_length must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkSet {
    /// Round-major: all round-0 walks in node order, then round 1, ...
    pub walks: Vec<Vec<usize>>,
    pub config: WalkConfig,
}

/// Probabilities of stepping from `cur` to each of its neighbors given the
/// walk arrived from `prev`. Unnormalized weights are `1/p` for returning to
/// `prev`, `1` for neighbors of `prev`, and `1/q` otherwise.
pub fn transition_distribution(
    g: &Graph,
    view: WalkView,
    prev: usize,
    cur: usize,
    p: f64,
    q: f64,
) -> Result<Vec<(usize, f64)>> {
    if !(p > 0.0 && q > 0.0) {
        return Err(Error::invalid("p and q must be positive"));
    }
    g.neighbors(prev, Direction::Out)?;
    if !view.adjacent(g, prev, cur) {
        return Err(Error::invalid(format!("{prev} -> {cur} is not an edge")));
    }
    let nbrs = view.neighbors(g, cur)?;
    if nbrs.is_empty() {
        return Err(Error::invalid(format!("node {cur} has no neighbors")));
    }
    let weights: Vec<f64> = nbrs
        .iter()
        .map(|&x| {
            if x == prev {
                1.0 / p
            } else if view.adjacent(g, prev, x) {
                1.0
            } else {
                1.0 / q
            }
        })
        .collect();
    let total: f64 = weights.iter().sum();
    Ok(nbrs.iter().zip(weights).map(|(&x, w)| (x, w / total)).collect())
}

fn sample_weighted(items: &[(usize, f64)], rng: &mut Rng) -> usize {
    let r: f64 = rng.random();
    let mut acc = 0.0;
    for &(x, w) in items {
        acc += w;
        if r < acc {
            return x;
        }
    }
    items.last().expect("non-empty distribution").0
}

fn walk_from(g: &Graph, cfg: &WalkConfig, start: usize, rng: &mut Rng) -> Result<Vec<usize>> {
    let mut walk = Vec::with_capacity(cfg.walk_length);
    walk.push(start);
    while walk.len() < cfg.walk_length {
        let cur = *walk.last().unwrap();
        let nbrs = cfg.view.neighbors(g, cur)?;
        if nbrs.is_empty() {
            break;
        }
        let next = if walk.len() == 1 {
            nbrs[rng.random_range(0..nbrs.len())]
        } else {
            let prev = walk[walk.len() - 2];
            let dist = transition_distribution(g, cfg.view, prev, cur, cfg.p, cfg.q)?;
            sample_weighted(&dist, rng)
        };
        walk.push(next);
    }
    Ok(walk)
}

/// `walks_per_node` walks from every node. Each walk has its own RNG stream
/// derived from `(seed, node, round)`, so the result is independent of thread
/// scheduling. Isolated nodes yield single-node walks.
pub fn generate_walks(g: &Graph, cfg: &WalkConfig, seed: u64) -> Result<WalkSet> {
    cfg.validate()?;
    let n = g.n_nodes();
    let jobs: Vec<(usize, usize)> = (0..cfg.walks_per_node)
        .flat_map(|r| (0..n).map(move |v| (r, v)))
        .collect();
    let walks = jobs
        .par_iter()
        .map(|&(r, v)| {
            let s = seed::derive_index(seed::derive_index(seed, v as u64), r as u64);
            walk_from(g, cfg, v, &mut seed::rng(s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WalkSet { walks, config: *cfg })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SkipGramConfig {
    pub dim: usize,
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    /// Initial learning rate, decayed linearly towards zero.
    pub lr: f64,
}

impl Default for SkipGramConfig {
    fn default() -> Self {
        SkipGramConfig {
            dim: 80,
            window: 5,
            negatives: 5,
            epochs: 5,
            lr: 0.025,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SkipGramOutput {
    pub embedding: EmbeddingMatrix,
    /// Mean loss per (center, context) pair, one entry per epoch.
    pub epoch_losses: Vec<f64>,
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-ln(sigmoid(x))`, stable for large `|x|`.
pub(crate) fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Cumulative distribution over nodes proportional to `count^0.75`.
pub(crate) struct NoiseTable {
    cumulative: Vec<f64>,
}

impl NoiseTable {
    pub(crate) fn new(counts: &[f64]) -> Result<Self> {
        let mut acc = 0.0;
        let cumulative: Vec<f64> = counts
            .iter()
            .map(|&c| {
                acc += c.powf(0.75);
                acc
            })
            .collect();
        if acc <= 0.0 {
            return Err(Error::invalid("noise distribution has no mass"));
        }
        Ok(NoiseTable { cumulative })
    }

    pub(crate) fn sample(&self, rng: &mut Rng) -> usize {
        let total = *self.cumulative.last().unwrap();
        let r = rng.random::<f64>() * total;
        self.cumulative
            .partition_point(|&c| c <= r)
            .min(self.cumulative.len() - 1)
    }
}

/// One SGD step of the negative-sampling objective for `input` against the
/// positive `target` and the sampled negatives. Returns the pair loss.
pub(crate) fn sgns_update(
    input: &mut [f64],
    outputs: &mut Dense,
    target: usize,
    negatives: &[usize],
    lr: f64,
    scratch: &mut [f64],
) -> f64 {
    scratch.iter_mut().for_each(|v| *v = 0.0);
    let mut loss = 0.0;
    let pairs = std::iter::once((target, 1.0)).chain(negatives.iter().map(|&n| (n, 0.0)));
    for (t, label) in pairs {
        let out = outputs.row_mut(t);
        let score: f64 = input.iter().zip(out.iter()).map(|(a, b)| a * b).sum();
        loss += if label > 0.0 {
            neg_log_sigmoid(score)
        } else {
            neg_log_sigmoid(-score)
        };
        let g = (label - sigmoid(score)) * lr;
        for ((s, o), i) in scratch.iter_mut().zip(out.iter_mut()).zip(input.iter()) {
            *s += g * *o;
            *o += g * i;
        }
    }
    for (i, s) in input.iter_mut().zip(scratch.iter()) {
        *i += s;
    }
    loss
}

/// Train skip-gram embeddings over `walks`. Rows follow `node_ids`, whose
/// length must cover every node index that appears in a walk.
pub fn train_skipgram(
    walks: &WalkSet,
    node_ids: &[String],
    cfg: &SkipGramConfig,
    seed: u64,
) -> Result<SkipGramOutput> {
    if cfg.dim == 0 || cfg.window == 0 {
        return Err(Error::invalid("skip-gram dim and window must be at least 1"));
    }
    if walks.walks.iter().all(|w| w.is_empty()) {
        return Err(Error::invalid("empty walk set"));
    }
    let n = node_ids.len();
    let mut counts = vec![0.0; n];
    for w in &walks.walks {
        for &v in w {
            if v >= n {
                return Err(Error::NodeOutOfRange { index: v, len: n });
            }
            counts[v] += 1.0;
        }
    }
    let noise = NoiseTable::new(&counts)?;
    let mut rng = seed::rng(seed);
    let d = cfg.dim;
    let mut input = Dense::uniform(n, d, -0.5 / d as f64, 0.5 / d as f64, &mut rng);
    let mut output = Dense::zeros(n, d);

    let pairs_per_epoch: usize = walks
        .walks
        .iter()
        .map(|w| {
            (0..w.len())
                .map(|i| {
                    let lo = i.saturating_sub(cfg.window);
                    let hi = (i + cfg.window).min(w.len() - 1);
                    hi - lo
                })
                .sum::<usize>()
        })
        .sum();
    let total = (pairs_per_epoch * cfg.epochs).max(1) as f64;
    let mut done = 0usize;
    let mut order: Vec<usize> = (0..walks.walks.len()).collect();
    let mut negs = vec![0usize; cfg.negatives];
    let mut scratch = vec![0.0; d];
    let mut in_row = vec![0.0; d];
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss, mut pairs) = (0.0, 0usize);
        for &wi in &order {
            let w = &walks.walks[wi];
            for (i, &center) in w.iter().enumerate() {
                let lo = i.saturating_sub(cfg.window);
                let hi = (i + cfg.window).min(w.len() - 1);
                for (j, &context) in w.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    for k in negs.iter_mut() {
                        *k = noise.sample(&mut rng);
                    }
                    let lr = cfg.lr * (1.0 - done as f64 / total).max(1e-4);
                    in_row.copy_from_slice(input.row(center));
                    loss += sgns_update(&mut in_row, &mut output, context, &negs, lr, &mut scratch);
                    input.row_mut(center).copy_from_slice(&in_row);
                    pairs += 1;
                    done += 1;
                }
            }
        }
        let mean = if pairs > 0 { loss / pairs as f64 } else { 0.0 };
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("skip-gram loss {mean}")));
        }
        epoch_losses.push(mean);
    }
    Ok(SkipGramOutput {
        embedding: EmbeddingMatrix::new(node_ids.to_vec(), input)?,
        epoch_losses,
    })
}

/// Walks plus skip-gram in one call.
pub fn node2vec(g: &Graph, walk: &WalkConfig, sg: &SkipGramConfig, seed: u64) -> Result<SkipGramOutput> {
    let walks = generate_walks(g, walk, seed::derive(seed, "walks"))?;
    train_skipgram(&walks, g.node_ids(), sg, seed::derive(seed, "skipgram"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::group_cosines;

    fn graph(n: usize, edges: &[(usize, usize)]) -> Graph {
        let ids = (0..n).map(|i| format!("v{i}")).collect();
        Graph::from_edges(ids, edges.iter().copied()).unwrap().0
    }

    /// Two disjoint directed 5-cliques (every ordered pair).
    pub(crate) fn two_cliques() -> Graph {
        let mut e = Vec::new();
        for base in [0, 5] {
            for i in 0..5 {
                for j in 0..5 {
                    if i != j {
                        e.push((base + i, base + j));
                    }
                }
            }
        }
        graph(10, &e)
    }

    #[test]
    fn uniform_when_p_q_one() {
        let g = graph(4, &[(0, 1), (1, 2), (1, 3)]);
        let d = transition_distribution(&g, WalkView::Undirected, 0, 1, 1.0, 1.0).unwrap();
        assert_eq!(d.len(), 3);
        for (_, p) in d {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn return_and_outward_bias() {
        // a - b - c with c not adjacent to a.
        let g = graph(3, &[(0, 1), (1, 2)]);
        let d = transition_distribution(&g, WalkView::Undirected, 0, 1, 0.5, 2.0).unwrap();
        assert_eq!(d, vec![(0, 0.8), (2, 0.2)]);
    }

    #[test]
    fn triangle_is_uniform() {
        let g = graph(3, &[(0, 1), (1, 2), (2, 0)]);
        let d = transition_distribution(&g, WalkView::Undirected, 0, 1, 1.0, 1.0).unwrap();
        assert_eq!(d, vec![(0, 0.5), (2, 0.5)]);
    }

    #[test]
    fn transition_errors() {
        let g = graph(3, &[(0, 1)]);
        assert!(transition_distribution(&g, WalkView::Undirected, 0, 2, 1.0, 1.0).is_err());
        assert!(transition_distribution(&g, WalkView::Directed, 0, 1, 1.0, 1.0).is_err());
        assert!(transition_distribution(&g, WalkView::Undirected, 0, 1, 0.0, 1.0).is_err());
    }

    #[test]
    fn walk_counts_and_isolated_nodes() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let cfg = WalkConfig {
            walks_per_node: 2,
            walk_length: 5,
            ..WalkConfig::default()
        };
        let ws = generate_walks(&g, &cfg, 1).unwrap();
        assert_eq!(ws.walks.len(), 6);
        assert!(ws.walks.iter().all(|w| w.len() == 5));

        let (g2, _) = g.with_isolated_nodes(["lonely"]);
        let ws = generate_walks(&g2, &cfg, 1).unwrap();
        assert_eq!(ws.walks.len(), 8);
        assert_eq!(ws.walks[3], vec![3]);
    }

    #[test]
    fn walks_are_deterministic_and_start_at_their_node() {
        let g = two_cliques();
        let cfg = WalkConfig {
            p: 0.5,
            q: 2.0,
            walks_per_node: 3,
            walk_length: 12,
            ..WalkConfig::default()
        };
        let a = generate_walks(&g, &cfg, 99).unwrap();
        assert_eq!(a, generate_walks(&g, &cfg, 99).unwrap());
        assert_ne!(a, generate_walks(&g, &cfg, 100).unwrap());
        for (k, w) in a.walks.iter().enumerate() {
            assert_eq!(w[0], k % g.n_nodes());
            for pair in w.windows(2) {
                assert!(g.has_edge(pair[0], pair[1]) || g.has_edge(pair[1], pair[0]));
            }
        }
    }

    #[test]
    fn directed_walks_stop_at_sinks() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let cfg = WalkConfig {
            walks_per_node: 1,
            walk_length: 10,
            view: WalkView::Directed,
            ..WalkConfig::default()
        };
        let ws = generate_walks(&g, &cfg, 0).unwrap();
        assert_eq!(ws.walks, vec![vec![0, 1, 2], vec![1, 2], vec![2]]);
    }

    #[test]
    fn skipgram_separates_cliques() {
        let g = two_cliques();
        let walk = WalkConfig {
            walks_per_node: 10,
            walk_length: 20,
            ..WalkConfig::default()
        };
        let sg = SkipGramConfig {
            dim: 16,
            ..SkipGramConfig::default()
        };
        let out = node2vec(&g, &walk, &sg, 5).unwrap();
        let (intra, inter) = group_cosines(&out.embedding, &[0, 1, 2, 3, 4], &[5, 6, 7, 8, 9]);
        assert!(intra > inter, "intra {intra} inter {inter}");
        assert!(out.epoch_losses.iter().all(|l| l.is_finite()));
        assert!(
            out.epoch_losses.last() < out.epoch_losses.first(),
            "{:?}",
            out.epoch_losses
        );
    }

    #[test]
    fn skipgram_shape_and_determinism() {
        let g = two_cliques();
        let walk = WalkConfig {
            walks_per_node: 2,
            walk_length: 8,
            ..WalkConfig::default()
        };
        let sg = SkipGramConfig {
            epochs: 1,
            ..SkipGramConfig::default()
        };
        let a = node2vec(&g, &walk, &sg, 3).unwrap();
        assert_eq!(a.embedding.dim(), 80);
        assert_eq!(a.embedding.n_rows(), 10);
        let b = node2vec(&g, &walk, &sg, 3).unwrap();
        assert_eq!(a.embedding, b.embedding);
    }

    #[test]
    fn skipgram_rejects_empty_input() {
        let ws = WalkSet {
            walks: vec![],
            config: WalkConfig::default(),
        };
        assert!(train_skipgram(&ws, &["a".into()], &SkipGramConfig::default(), 0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn transition_is_a_distribution(
            edges in proptest::collection::vec((0usize..8, 0usize..8), 1..30),
            p in 0.1f64..4.0,
            q in 0.1f64..4.0,
        ) {
            let g = graph(8, &edges);
            for (u, v) in g.edges() {
                let d = transition_distribution(&g, WalkView::Undirected, u, v, p, q).unwrap();
                let s: f64 = d.iter().map(|x| x.1).sum();
                proptest::prop_assert!((s - 1.0).abs() <= 1e-12);
                proptest::prop_assert!(d.iter().all(|x| x.1 >= 0.0));
            }
        }
    }
}
