//! Adversarial embedding for imbalanced node labels.
//!
//! A generator turns noise into synthetic minority nodes: each synthetic node
//! is a softmax-weighted mixture of the real minority nodes, inheriting their
//! features and linking to the minority nodes it draws most weight from. A
//! two-layer GraphSAGE encoder embeds the augmented graph and a one-layer
//! GraphSAGE discriminator sorts every node into real-positive,
//! real-negative or synthetic. Each generator epoch runs twenty
//! discriminator epochs, then one generator step that pushes synthetic nodes
//! towards the real-positive class. The encoder output for real nodes is the
//! exported embedding.

use std::fmt::Write as _;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::graph::{FeatureMatrix, Graph, LabelSet};
use crate::ndmath::{
    add_row_bias, dropout, softmax_cross_entropy, softmax_rows, softmax_rows_backward, Activation, Adam,
    AdamConfig, AffineGrads, AffineLayer, Dense, DropoutMask, Mode,
};
use crate::seed::{self, Rng};
use crate::textfmt::sig9;

pub const CLASS_POSITIVE: usize = 0;
pub const CLASS_NEGATIVE: usize = 1;
pub const CLASS_SYNTHETIC: usize = 2;

/// Undirected neighbor lists over real and synthetic nodes, used for mean
/// aggregation. Nodes without neighbors aggregate a zero vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborLists {
    lists: Vec<Vec<usize>>,
}

impl NeighborLists {
    pub fn from_graph(g: &Graph) -> Self {
        NeighborLists {
            lists: (0..g.n_nodes())
                .map(|v| g.undirected_neighbors(v).expect("in range").to_vec())
                .collect(),
        }
    }

    pub fn from_lists(lists: Vec<Vec<usize>>) -> Result<Self> {
        let n = lists.len();
        if let Some(&bad) = lists.iter().flatten().find(|&&u| u >= n) {
            return Err(Error::NodeOutOfRange { index: bad, len: n });
        }
        Ok(NeighborLists { lists })
    }

    pub fn len(&self) -> usize {
        self.lists.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lists.is_empty()
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.lists[v]
    }

    /// Append synthetic nodes with undirected edges `(synthetic i, real v)`.
    pub fn augmented(&self, n_synthetic: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let n_real = self.lists.len();
        let mut lists = self.lists.clone();
        lists.resize(n_real + n_synthetic, Vec::new());
        for &(s, v) in edges {
            if s >= n_synthetic || v >= n_real {
                return Err(Error::Shape(format!("synthetic edge ({s}, {v}) out of range")));
            }
            lists[n_real + s].push(v);
            lists[v].push(n_real + s);
        }
        for l in &mut lists {
            l.sort_unstable();
            l.dedup();
        }
        Ok(NeighborLists { lists })
    }

    /// Row `v` of the result is the mean of `h` over the neighbors of `v`.
    pub fn mean_aggregate(&self, h: &Dense) -> Result<Dense> {
        self.check(h)?;
        let mut out = Dense::zeros(h.rows(), h.cols());
        for (v, nbrs) in self.lists.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            let row = out.row_mut(v);
            for &u in nbrs {
                for (o, &x) in row.iter_mut().zip(h.row(u)) {
                    *o += x;
                }
            }
            row.iter_mut().for_each(|o| *o *= inv);
        }
        Ok(out)
    }

    /// Adjoint of [`Self::mean_aggregate`].
    pub fn mean_aggregate_transpose(&self, g: &Dense) -> Result<Dense> {
        self.check(g)?;
        let mut out = Dense::zeros(g.rows(), g.cols());
        for (v, nbrs) in self.lists.iter().enumerate() {
            if nbrs.is_empty() {
                continue;
            }
            let inv = 1.0 / nbrs.len() as f64;
            for &u in nbrs {
                let src: Vec<f64> = g.row(v).iter().map(|x| x * inv).collect();
                for (o, x) in out.row_mut(u).iter_mut().zip(src) {
                    *o += x;
                }
            }
        }
        Ok(out)
    }

    fn check(&self, h: &Dense) -> Result<()> {
        if h.rows() != self.lists.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                h.rows(),
                self.lists.len()
            )));
        }
        Ok(())
    }
}

/// GraphSAGE convolution with mean aggregation:
/// `h'_v = W_self h_v + W_neigh mean(h_u : u ~ v) + b`.
#[derive(Debug, Clone)]
pub struct SageConv {
    pub w_self: Dense,
    pub w_neigh: Dense,
    pub bias: Dense,
    cache: Option<(Dense, Dense)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageGrads {
    pub w_self: Dense,
    pub w_neigh: Dense,
    pub bias: Dense,
}

impl SageConv {
    pub fn new(w_self: Dense, w_neigh: Dense, bias: Dense) -> Result<Self> {
        if w_self.shape() != w_neigh.shape() || bias.shape() != (w_self.rows(), 1) {
            return Err(Error::Shape(format!(
                "SAGEConv weights {:?}/{:?}, bias {:?}",
                w_self.shape(),
                w_neigh.shape(),
                bias.shape()
            )));
        }
        Ok(SageConv {
            w_self,
            w_neigh,
            bias,
            cache: None,
        })
    }

    pub fn glorot(in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        SageConv {
            w_self: Dense::glorot(out_dim, in_dim, rng),
            w_neigh: Dense::glorot(out_dim, in_dim, rng),
            bias: Dense::zeros(out_dim, 1),
            cache: None,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w_self.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.w_self.rows()
    }

    fn compute(&self, adj: &NeighborLists, x: &Dense) -> Result<(Dense, Dense)> {
        if x.cols() != self.in_dim() {
            return Err(Error::Shape(format!(
                "SAGEConv expects width {}, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let agg = adj.mean_aggregate(x)?;
        let mut y = x.matmul_t(&self.w_self)?;
        y.add_assign(&agg.matmul_t(&self.w_neigh)?)?;
        add_row_bias(&mut y, &self.bias);
        Ok((y, agg))
    }

    pub fn apply(&self, adj: &NeighborLists, x: &Dense) -> Result<Dense> {
        Ok(self.compute(adj, x)?.0)
    }

    pub fn forward(&mut self, adj: &NeighborLists, x: &Dense) -> Result<Dense> {
        let (y, agg) = self.compute(adj, x)?;
        self.cache = Some((x.clone(), agg));
        Ok(y)
    }

    pub fn backward(&self, adj: &NeighborLists, upstream: &Dense) -> Result<(Dense, SageGrads)> {
        let (x, agg) = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("SAGEConv backward before forward"))?;
        if upstream.shape() != (x.rows(), self.out_dim()) {
            return Err(Error::Shape(format!(
                "SAGEConv upstream {:?}, expected {:?}",
                upstream.shape(),
                (x.rows(), self.out_dim())
            )));
        }
        let mut dx = upstream.matmul(&self.w_self)?;
        dx.add_assign(&adj.mean_aggregate_transpose(&upstream.matmul(&self.w_neigh)?)?)?;
        Ok((
            dx,
            SageGrads {
                w_self: upstream.t_matmul(x)?,
                w_neigh: upstream.t_matmul(agg)?,
                bias: upstream.col_sums().transpose(),
            },
        ))
    }

    pub fn params_mut(&mut self) -> [&mut Dense; 3] {
        [&mut self.w_self, &mut self.w_neigh, &mut self.bias]
    }

    pub fn params(&self) -> [&Dense; 3] {
        [&self.w_self, &self.w_neigh, &self.bias]
    }
}

impl SageGrads {
    pub fn as_refs(&self) -> [&Dense; 3] {
        [&self.w_self, &self.w_neigh, &self.bias]
    }
}

/// Two SAGE convolutions with ReLU and dropout in between.
#[derive(Debug, Clone)]
pub struct SageEncoder {
    pub conv1: SageConv,
    pub conv2: SageConv,
    pub dropout: f64,
    cache: Option<EncoderCache>,
}

#[derive(Debug, Clone)]
struct EncoderCache {
    pre: Dense,
    post: Dense,
    mask: DropoutMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub conv1: SageGrads,
    pub conv2: SageGrads,
}

impl EncoderGrads {
    pub fn as_refs(&self) -> [&Dense; 6] {
        let [a, b, c] = self.conv1.as_refs();
        let [d, e, f] = self.conv2.as_refs();
        [a, b, c, d, e, f]
    }
}

impl SageEncoder {
    pub fn new(in_dim: usize, hidden: usize, out_dim: usize, dropout: f64, rng: &mut Rng) -> Self {
        SageEncoder {
            conv1: SageConv::glorot(in_dim, hidden, rng),
            conv2: SageConv::glorot(hidden, out_dim, rng),
            dropout,
            cache: None,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.conv2.out_dim()
    }

    pub fn forward(&mut self, adj: &NeighborLists, x: &Dense, mode: Mode, rng: &mut Rng) -> Result<Dense> {
        let pre = self.conv1.forward(adj, x)?;
        let post = Activation::Relu.forward(&pre);
        let (dropped, mask) = dropout(&post, self.dropout, mode, rng)?;
        let out = self.conv2.forward(adj, &dropped)?;
        self.cache = Some(EncoderCache { pre, post, mask });
        Ok(out)
    }

    pub fn backward(&self, adj: &NeighborLists, upstream: &Dense) -> Result<(Dense, EncoderGrads)> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("encoder backward before forward"))?;
        let (d_dropped, g2) = self.conv2.backward(adj, upstream)?;
        let d_post = c.mask.backward(&d_dropped)?;
        let d_pre = Activation::Relu.backward(&c.pre, &c.post, &d_post)?;
        let (dx, g1) = self.conv1.backward(adj, &d_pre)?;
        Ok((dx, EncoderGrads { conv1: g1, conv2: g2 }))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Dense> {
        let mut v: Vec<&mut Dense> = self.conv1.params_mut().into_iter().collect();
        v.extend(self.conv2.params_mut());
        v
    }
}

/// Embed the (augmented) graph.
pub fn encode(
    adj: &NeighborLists,
    features: &Dense,
    enc: &mut SageEncoder,
    mode: Mode,
    rng: &mut Rng,
) -> Result<Dense> {
    enc.forward(adj, features, mode, rng)
}

/// One SAGE convolution to three logits, then a row softmax.
#[derive(Debug, Clone)]
pub struct Discriminator {
    pub conv: SageConv,
}

impl Discriminator {
    pub fn new(in_dim: usize, rng: &mut Rng) -> Self {
        Discriminator {
            conv: SageConv::glorot(in_dim, 3, rng),
        }
    }

    pub fn logits(&mut self, adj: &NeighborLists, emb: &Dense) -> Result<Dense> {
        self.conv.forward(adj, emb)
    }
}

/// Class probabilities `{real-positive, real-negative, synthetic}` per node.
pub fn discriminate(emb: &Dense, disc: &Discriminator, adj: &NeighborLists) -> Result<Dense> {
    Ok(softmax_rows(&disc.conv.apply(adj, emb)?))
}

/// Three fully connected layers, ReLU between them and Tanh on the output.
#[derive(Debug, Clone)]
pub struct Generator {
    pub layers: [AffineLayer; 3],
    cache: Option<GeneratorCache>,
}

#[derive(Debug, Clone)]
struct GeneratorCache {
    pre: [Dense; 3],
    post: [Dense; 3],
}

impl Generator {
    pub fn new(noise_dim: usize, hidden: (usize, usize), n_minority: usize, rng: &mut Rng) -> Self {
        Generator {
            layers: [
                AffineLayer::glorot(noise_dim, hidden.0, rng),
                AffineLayer::glorot(hidden.0, hidden.1, rng),
                AffineLayer::glorot(hidden.1, n_minority, rng),
            ],
            cache: None,
        }
    }

    pub fn noise_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[2].out_dim()
    }

    pub fn apply(&self, z: &Dense) -> Result<Dense> {
        let mut h = z.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = layer.apply(&h)?;
            h = if k < 2 {
                Activation::Relu.forward(&pre)
            } else {
                Activation::Tanh.forward(&pre)
            };
        }
        Ok(h)
    }

    pub fn forward(&mut self, z: &Dense) -> Result<Dense> {
        let mut h = z.clone();
        let mut pre_v = Vec::with_capacity(3);
        let mut post_v = Vec::with_capacity(3);
        for (k, layer) in self.layers.iter_mut().enumerate() {
            let pre = layer.forward(&h)?;
            h = if k < 2 {
                Activation::Relu.forward(&pre)
            } else {
                Activation::Tanh.forward(&pre)
            };
            pre_v.push(pre);
            post_v.push(h.clone());
        }
        self.cache = Some(GeneratorCache {
            pre: pre_v.try_into().expect("three layers"),
            post: post_v.try_into().expect("three layers"),
        });
        Ok(h)
    }

    /// Gradients of the three layers given `dL/d(tanh output)`.
    pub fn backward(&self, upstream: &Dense) -> Result<[AffineGrads; 3]> {
        let c = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::invalid("generator backward before forward"))?;
        let mut g = upstream.clone();
        let mut grads: Vec<AffineGrads> = Vec::with_capacity(3);
        for k in (0..3).rev() {
            let act = if k < 2 { Activation::Relu } else { Activation::Tanh };
            let d_pre = act.backward(&c.pre[k], &c.post[k], &g)?;
            let (dx, lg) = self.layers[k].backward(&d_pre)?;
            grads.push(lg);
            g = dx;
        }
        grads.reverse();
        Ok(grads.try_into().expect("three layers"))
    }

    pub fn params_mut(&mut self) -> Vec<&mut Dense> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }
}

/// Synthetic minority nodes produced from one generator pass.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticBatch {
    /// `synthetic x minority`, rows sum to one.
    pub weights: Dense,
    /// `weights x minority features`.
    pub features: Dense,
    /// `(synthetic index, real node index)` pairs.
    pub edges: Vec<(usize, usize)>,
}

impl SyntheticBatch {
    pub fn count(&self) -> usize {
        self.weights.rows()
    }

    /// Reorder synthetic nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> SyntheticBatch {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut edges: Vec<(usize, usize)> = self.edges.iter().map(|&(s, v)| (inverse[s], v)).collect();
        edges.sort_unstable();
        SyntheticBatch {
            weights: self.weights.select_rows(perm),
            features: self.features.select_rows(perm),
            edges,
        }
    }
}

/// Map generator output (`synthetic x |minority|`, values in [-1, 1]) to
/// synthetic nodes: softmax weights per row, features as weighted minority
/// averages, and an edge to every minority node with weight >= 1/|minority|.
pub fn synthesize(generator_output: &Dense, minority: &[usize], features: &Dense) -> Result<SyntheticBatch> {
    let m = minority.len();
    if m < 2 {
        return Err(Error::invalid("need at least two minority nodes"));
    }
    if generator_output.rows() == 0 {
        return Err(Error::invalid("no synthetic nodes requested"));
    }
    if generator_output.cols() != m {
        return Err(Error::Shape(format!(
            "generator width {} for {m} minority nodes",
            generator_output.cols()
        )));
    }
    if let Some(&bad) = minority.iter().find(|&&v| v >= features.rows()) {
        return Err(Error::NodeOutOfRange {
            index: bad,
            len: features.rows(),
        });
    }
    let weights = softmax_rows(generator_output);
    let minority_feats = features.select_rows(minority);
    let feats = weights.matmul(&minority_feats)?;
    let threshold = 1.0 / m as f64;
    let mut edges = Vec::new();
    for i in 0..weights.rows() {
        let row = weights.row(i);
        let before = edges.len();
        edges.extend(
            row.iter()
                .enumerate()
                .filter(|(_, &w)| w >= threshold)
                .map(|(j, _)| (i, minority[j])),
        );
        if edges.len() == before {
            // Rounding can leave a near-uniform row just under 1/m.
            let j = (0..m)
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .expect("m >= 2");
            edges.push((i, minority[j]));
        }
    }
    Ok(SyntheticBatch {
        weights,
        features: feats,
        edges,
    })
}

/// Run the generator on noise `z` and build the synthetic nodes.
pub fn generate_synthetic(
    generator: &Generator,
    z: &Dense,
    minority: &[usize],
    features: &Dense,
) -> Result<SyntheticBatch> {
    if generator.out_dim() != minority.len() {
        return Err(Error::Shape(format!(
            "generator emits {} weights for {} minority nodes",
            generator.out_dim(),
            minority.len()
        )));
    }
    synthesize(&generator.apply(z)?, minority, features)
}

/// Backward of [`synthesize`]'s feature path: from `dL/d(synthetic features)`
/// to `dL/d(generator output)`.
pub fn synthesize_backward(
    batch: &SyntheticBatch,
    minority: &[usize],
    features: &Dense,
    d_features: &Dense,
) -> Result<Dense> {
    let minority_feats = features.select_rows(minority);
    let d_weights = d_features.matmul_t(&minority_feats)?;
    softmax_rows_backward(&batch.weights, &d_weights)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImGagnConfig {
    pub embed_dim: usize,
    pub encoder_hidden: usize,
    pub generator_hidden: (usize, usize),
    pub noise_dim: usize,
    pub dropout: f64,
    pub generator_epochs: usize,
    pub discriminator_epochs: usize,
    pub adam: AdamConfig,
    pub generator_adam: AdamConfig,
    /// Z-score feature columns before encoding.
    pub standardize: bool,
}

impl Default for ImGagnConfig {
    fn default() -> Self {
        ImGagnConfig {
            embed_dim: 80,
            encoder_hidden: 128,
            generator_hidden: (256, 128),
            noise_dim: 100,
            dropout: 0.5,
            generator_epochs: 10,
            discriminator_epochs: 20,
            adam: AdamConfig {
                lr: 0.001,
                ..AdamConfig::default()
            },
            generator_adam: AdamConfig::default(),
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    /// `None` when adversarial balancing is skipped.
    pub generator_loss: Option<f64>,
    pub discriminator_losses: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub synthetic_nodes: usize,
    pub minority: usize,
    pub majority: usize,
}

impl TrainLog {
    pub fn discriminator_epochs(&self) -> Vec<usize> {
        self.epochs.iter().map(|e| e.discriminator_losses.len()).collect()
    }

    /// One TSV row per generator epoch.
    pub fn to_tsv_string(&self) -> String {
        let mut s = format!(
            "# minority={} majority={} synthetic={}\n",
            self.minority, self.majority, self.synthetic_nodes
        );
        s.push_str(
            "epoch\tgenerator_loss\tdiscriminator_loss_first\tdiscriminator_loss_last\tdiscriminator_epochs\n",
        );
        for (k, e) in self.epochs.iter().enumerate() {
            let first = e.discriminator_losses.first().map_or("NA".into(), |&x| sig9(x));
            let last = e.discriminator_losses.last().map_or("NA".into(), |&x| sig9(x));
            let gl = e.generator_loss.map_or("NA".into(), sig9);
            let _ = writeln!(
                s,
                "{}\t{gl}\t{first}\t{last}\t{}",
                k + 1,
                e.discriminator_losses.len()
            );
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct ImGagnOutput {
    /// Real nodes only, in graph order.
    pub embedding: EmbeddingMatrix,
    pub log: TrainLog,
}

/// Align the feature table to graph order (missing rows are zero) and
/// optionally z-score each column.
pub fn node_features(g: &Graph, features: &FeatureMatrix, standardize: bool) -> Result<Dense> {
    let f = features.n_cols();
    let mut x = Dense::zeros(g.n_nodes(), f);
    let mut found = 0;
    for (v, id) in g.node_ids().iter().enumerate() {
        if let Some(row) = features.row_by_id(id) {
            x.row_mut(v).copy_from_slice(row);
            found += 1;
        }
    }
    if found == 0 {
        return Err(Error::invalid("no graph node has a feature row"));
    }
    if found < g.n_nodes() {
        log::warn!(
            "{} graph nodes have no features; using zeros",
            g.n_nodes() - found
        );
    }
    if standardize {
        let n = x.rows() as f64;
        for j in 0..f {
            let mean = (0..x.rows()).map(|i| x[(i, j)]).sum::<f64>() / n;
            let var = (0..x.rows()).map(|i| (x[(i, j)] - mean).powi(2)).sum::<f64>() / n;
            let sd = var.sqrt();
            for i in 0..x.rows() {
                x[(i, j)] = if sd > 0.0 { (x[(i, j)] - mean) / sd } else { 0.0 };
            }
        }
    }
    Ok(x)
}

/// The three trainable parts plus their optimizers.
pub struct ImGagn {
    pub generator: Option<Generator>,
    pub encoder: SageEncoder,
    pub discriminator: Discriminator,
    enc_adam: Adam,
    gen_adam: Adam,
}

impl ImGagn {
    pub fn new(in_dim: usize, n_minority: Option<usize>, cfg: &ImGagnConfig, rng: &mut Rng) -> Self {
        let encoder = SageEncoder::new(in_dim, cfg.encoder_hidden, cfg.embed_dim, cfg.dropout, rng);
        let discriminator = Discriminator::new(cfg.embed_dim, rng);
        let generator = n_minority.map(|m| Generator::new(cfg.noise_dim, cfg.generator_hidden, m, rng));
        ImGagn {
            generator,
            encoder,
            discriminator,
            enc_adam: Adam::new(cfg.adam),
            gen_adam: Adam::new(cfg.generator_adam),
        }
    }

    /// One encoder+discriminator update on the 3-class loss. Returns the loss.
    fn discriminator_step(
        &mut self,
        adj: &NeighborLists,
        x: &Dense,
        targets: &[(usize, usize)],
        rng: &mut Rng,
    ) -> Result<f64> {
        let emb = self.encoder.forward(adj, x, Mode::Train, rng)?;
        let logits = self.discriminator.logits(adj, &emb)?;
        let (loss, _, d_logits) = softmax_cross_entropy(&logits, targets)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("discriminator loss {loss}")));
        }
        let (d_emb, dg) = self.discriminator.conv.backward(adj, &d_logits)?;
        let (_, eg) = self.encoder.backward(adj, &d_emb)?;
        let mut params = self.encoder.params_mut();
        params.extend(self.discriminator.conv.params_mut());
        let mut grads: Vec<&Dense> = eg.as_refs().to_vec();
        grads.extend(dg.as_refs());
        self.enc_adam.step(&mut params, &grads)?;
        Ok(loss)
    }

    /// Generator loss and layer gradients for noise `z`: cross-entropy of the
    /// synthetic rows against the real-positive class, back-propagated through
    /// the frozen discriminator and encoder into the synthetic features.
    pub fn generator_loss_and_grads(
        &mut self,
        base: &NeighborLists,
        x_real: &Dense,
        minority: &[usize],
        z: &Dense,
        mode: Mode,
        rng: &mut Rng,
    ) -> Result<(f64, [AffineGrads; 3])> {
        let generator = self
            .generator
            .as_mut()
            .ok_or_else(|| Error::invalid("no generator"))?;
        let out = generator.forward(z)?;
        let batch = synthesize(&out, minority, x_real)?;
        let n_real = x_real.rows();
        let adj = base.augmented(batch.count(), &batch.edges)?;
        let x = x_real.vstack(&batch.features)?;
        let emb = self.encoder.forward(&adj, &x, mode, rng)?;
        let logits = self.discriminator.logits(&adj, &emb)?;
        let targets: Vec<(usize, usize)> = (0..batch.count()).map(|i| (n_real + i, CLASS_POSITIVE)).collect();
        let (loss, _, d_logits) = softmax_cross_entropy(&logits, &targets)?;
        let (d_emb, _) = self.discriminator.conv.backward(&adj, &d_logits)?;
        let (dx, _) = self.encoder.backward(&adj, &d_emb)?;
        let rows: Vec<usize> = (n_real..n_real + batch.count()).collect();
        let d_feats = dx.select_rows(&rows);
        let d_out = synthesize_backward(&batch, minority, x_real, &d_feats)?;
        let grads = self.generator.as_ref().unwrap().backward(&d_out)?;
        Ok((loss, grads))
    }
}

fn class_targets(labels: &[Option<bool>]) -> Vec<(usize, usize)> {
    labels
        .iter()
        .enumerate()
        .filter_map(|(v, y)| y.map(|p| (v, if p { CLASS_POSITIVE } else { CLASS_NEGATIVE })))
        .collect()
}

/// Train on graph `g` with node features and the labeled subset of nodes.
/// Unlabeled graph nodes take part in message passing only.
pub fn train_imgagn(
    g: &Graph,
    features: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &ImGagnConfig,
    seed: u64,
) -> Result<ImGagnOutput> {
    if cfg.embed_dim == 0 || cfg.encoder_hidden == 0 {
        return Err(Error::invalid("encoder widths must be positive"));
    }
    if cfg.discriminator_epochs == 0 {
        return Err(Error::invalid("discriminator_epochs must be positive"));
    }
    let x_real = node_features(g, features, cfg.standardize)?;
    let node_labels: Vec<Option<bool>> = g.node_ids().iter().map(|id| labels.label(id)).collect();
    let minority: Vec<usize> = (0..g.n_nodes())
        .filter(|&v| node_labels[v] == Some(true))
        .collect();
    let majority = node_labels.iter().filter(|y| **y == Some(false)).count();
    if minority.is_empty() {
        return Err(Error::invalid("no positive labels on graph nodes"));
    }
    if majority == 0 {
        return Err(Error::invalid("no negative labels on graph nodes"));
    }
    let n_synthetic = majority.saturating_sub(minority.len());
    let adversarial = n_synthetic > 0 && minority.len() >= 2;
    if !adversarial {
        log::warn!(
            "skipping adversarial balancing ({} positives, {} negatives)",
            minority.len(),
            majority
        );
    }
    let n_synthetic = if adversarial { n_synthetic } else { 0 };

    let mut rng = seed::rng(seed::derive(seed, "init"));
    let mut model = ImGagn::new(
        x_real.cols(),
        adversarial.then_some(minority.len()),
        cfg,
        &mut rng,
    );
    let mut noise_rng = seed::rng(seed::derive(seed, "noise"));
    let mut drop_rng = seed::rng(seed::derive(seed, "dropout"));
    let base = NeighborLists::from_graph(g);
    let real_targets = class_targets(&node_labels);
    let n_real = g.n_nodes();

    let mut log = TrainLog {
        epochs: Vec::with_capacity(cfg.generator_epochs),
        synthetic_nodes: n_synthetic,
        minority: minority.len(),
        majority,
    };
    let mut adj = base.clone();
    let mut x = x_real.clone();

    for _ in 0..cfg.generator_epochs.max(1) {
        let z = Dense::uniform(n_synthetic, cfg.noise_dim, -1.0, 1.0, &mut noise_rng);
        let mut targets = real_targets.clone();
        if adversarial {
            let generator = model.generator.as_ref().unwrap();
            let batch = generate_synthetic(generator, &z, &minority, &x_real)?;
            adj = base.augmented(batch.count(), &batch.edges)?;
            x = x_real.vstack(&batch.features)?;
            targets.extend((0..n_synthetic).map(|i| (n_real + i, CLASS_SYNTHETIC)));
        }

        let mut d_losses = Vec::with_capacity(cfg.discriminator_epochs);
        for _ in 0..cfg.discriminator_epochs {
            d_losses.push(model.discriminator_step(&adj, &x, &targets, &mut drop_rng)?);
        }

        let generator_loss = if adversarial {
            let (loss, grads) =
                model.generator_loss_and_grads(&base, &x_real, &minority, &z, Mode::Train, &mut drop_rng)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("generator loss {loss}")));
            }
            let mut params = model.generator.as_mut().unwrap().params_mut();
            let grad_refs: Vec<&Dense> = grads.iter().flat_map(|g| [&g.weight, &g.bias]).collect();
            model.gen_adam.step(&mut params, &grad_refs)?;
            Some(loss)
        } else {
            None
        };
        log.epochs.push(EpochLog {
            generator_loss,
            discriminator_losses: d_losses,
        });
    }

    let emb = model.encoder.forward(&adj, &x, Mode::Infer, &mut drop_rng)?;
    let rows: Vec<usize> = (0..n_real).collect();
    let embedding = EmbeddingMatrix::new(g.node_ids().to_vec(), emb.select_rows(&rows))?;
    Ok(ImGagnOutput { embedding, log })
}
