//! Ranking pipeline: prune correlated attributes, join embeddings with node
//! attributes, train one classifier per random positive subsample, and
//! score every node by the mean fold probability.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rayon::prelude::*;
use serde::Serialize;

use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::eval::{auc_roc, sort_ranking, stratified_folds};
use crate::graph::{FeatureMatrix, Graph, LabelSet};
use crate::imgagn::{train_imgagn, ImGagnConfig, TrainLog};
use crate::line::{line_train, LineConfig};
use crate::ndmath::Dense;
use crate::node2vec::{node2vec, SkipGramConfig, WalkConfig};
use crate::seed;
use crate::textfmt::sig9;
use crate::trees::{Classifier, ClassifierParams};

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    sab / (saa * sbb).sqrt()
}

/// Drop zero-variance columns, then scan left to right and drop any column
/// whose |Pearson r| with an already kept column reaches `threshold`.
pub fn correlation_filter(x: &FeatureMatrix, threshold: f64) -> Result<(FeatureMatrix, Vec<String>)> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(Error::invalid(format!(
            "correlation threshold {threshold} outside (0, 1]"
        )));
    }
    if x.n_cols() == 0 {
        return Err(Error::invalid("feature table has no columns"));
    }
    let cols: Vec<Vec<f64>> = (0..x.n_cols()).map(|j| x.column(j)).collect();
    let mut kept: Vec<usize> = Vec::new();
    for (j, col) in cols.iter().enumerate() {
        let first = col.first().copied().unwrap_or(0.0);
        if col.iter().all(|&v| v == first) {
            continue;
        }
        if kept.iter().all(|&k| pearson(&cols[k], col).abs() < threshold) {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        return Err(Error::invalid("correlation filter dropped every column"));
    }
    let out = x.select_columns(&kept)?;
    let names = out.col_names().to_vec();
    Ok((out, names))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assembled {
    pub features: FeatureMatrix,
    /// Embedded ids without attribute rows.
    pub missing_attributes: usize,
    /// Attribute rows without an embedding.
    pub missing_embedding: usize,
}

/// Inner join on id: embedding columns first, then attribute columns, rows
/// in embedding order.
pub fn assemble_features(emb: &EmbeddingMatrix, ext: &FeatureMatrix) -> Result<Assembled> {
    let emb_f = emb.to_feature_matrix()?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (i, id) in emb.row_ids().iter().enumerate() {
        if let Some(row) = ext.row_by_id(id) {
            ids.push(id.clone());
            values.extend_from_slice(emb_f.row(i));
            values.extend_from_slice(row);
        }
    }
    if ids.is_empty() {
        return Err(Error::invalid("embedding and attribute tables share no ids"));
    }
    let missing_attributes = emb.n_rows() - ids.len();
    let missing_embedding = ext.n_rows() - ids.len();
    if missing_attributes + missing_embedding > 0 {
        log::warn!(
            "join dropped {missing_attributes} embedded ids without attributes and {missing_embedding} attribute rows without embeddings"
        );
    }
    let cols = emb_f.col_names().iter().chain(ext.col_names()).cloned().collect();
    Ok(Assembled {
        features: FeatureMatrix::new(ids, cols, values)?,
        missing_attributes,
        missing_embedding,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSpec {
    pub index: usize,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

/// Positives per fold for `n` positives: `floor(frac * n)`.
pub fn positives_per_fold(n: usize, positive_frac: f64) -> usize {
    (positive_frac * n as f64 + 1e-9).floor() as usize
}

/// `m` independent subsamples: `floor(positive_frac * |pos|)` positives and
/// `neg_ratio` times as many negatives, each drawn without replacement.
pub fn subsample_folds(
    labels: &LabelSet,
    m: usize,
    positive_frac: f64,
    neg_ratio: usize,
    seed: u64,
) -> Result<Vec<FoldSpec>> {
    if m == 0 {
        return Err(Error::invalid("need at least one fold"));
    }
    if !(positive_frac > 0.0 && positive_frac <= 1.0) || neg_ratio == 0 {
        return Err(Error::invalid(
            "positive_frac must lie in (0, 1] and neg_ratio >= 1",
        ));
    }
    let pos = labels.positives();
    let neg = labels.negatives();
    let k = positives_per_fold(pos.len(), positive_frac);
    if k == 0 {
        return Err(Error::invalid(format!(
            "{} positives leave none per fold",
            pos.len()
        )));
    }
    if neg.len() < neg_ratio * k {
        return Err(Error::invalid(format!(
            "{} negatives cannot supply {} per fold",
            neg.len(),
            neg_ratio * k
        )));
    }
    Ok((0..m)
        .map(|f| {
            let mut rng = seed::rng(seed::derive_index(seed, f as u64));
            FoldSpec {
                index: f,
                positives: sample(&mut rng, pos.len(), k)
                    .iter()
                    .map(|i| pos[i].to_string())
                    .collect(),
                negatives: sample(&mut rng, neg.len(), neg_ratio * k)
                    .iter()
                    .map(|i| neg[i].to_string())
                    .collect(),
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub folds: Vec<FoldSpec>,
    pub models: Vec<Classifier>,
    pub params: ClassifierParams,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub m: usize,
    pub positive_frac: f64,
    pub neg_ratio: usize,
    pub classifier: ClassifierParams,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            m: 10,
            positive_frac: 0.8,
            neg_ratio: 2,
            classifier: ClassifierParams::default_for(crate::trees::ClassifierKind::Gbt),
        }
    }
}

fn rows_for(x: &FeatureMatrix, ids: &[String]) -> Result<Dense> {
    let mut data = Vec::with_capacity(ids.len() * x.n_cols());
    for id in ids {
        let row = x
            .row_by_id(id)
            .ok_or_else(|| Error::invalid(format!("no feature row for {id:?}")))?;
        data.extend_from_slice(row);
    }
    Dense::from_vec(ids.len(), x.n_cols(), data)
}

/// One classifier per fold, trained in parallel on that fold's rows only.
pub fn train_ensemble(
    x: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &EnsembleConfig,
    seed: u64,
) -> Result<Ensemble> {
    if let Some(id) = labels.universe().iter().find(|id| x.row_by_id(id).is_none()) {
        return Err(Error::invalid(format!("labeled id {id:?} has no feature row")));
    }
    let folds = subsample_folds(
        labels,
        cfg.m,
        cfg.positive_frac,
        cfg.neg_ratio,
        seed::derive(seed, "folds"),
    )?;
    let model_seed = seed::derive(seed, "classifier");
    let models = folds
        .par_iter()
        .map(|f| {
            let ids: Vec<String> = f.positives.iter().chain(&f.negatives).cloned().collect();
            let y: Vec<bool> = (0..ids.len()).map(|i| i < f.positives.len()).collect();
            let xf = rows_for(x, &ids)?;
            Classifier::fit(
                &cfg.classifier,
                &xf,
                &y,
                seed::derive_index(model_seed, f.index as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        folds,
        models,
        params: cfg.classifier,
        columns: x.col_names().to_vec(),
    })
}

/// Per-fold probabilities for the given ids, in fold order.
pub fn fold_predictions(ens: &Ensemble, x: &FeatureMatrix, ids: &[String]) -> Result<Vec<Vec<f64>>> {
    if x.col_names() != ens.columns.as_slice() {
        return Err(Error::Shape(
            "feature columns differ from the training columns".into(),
        ));
    }
    let xs = rows_for(x, ids)?;
    ens.models.par_iter().map(|m| m.predict(&xs)).collect()
}

/// Mean fold probability for `ids`, summed in fold order.
pub fn ensemble_scores(ens: &Ensemble, x: &FeatureMatrix, ids: &[String]) -> Result<Vec<f64>> {
    let per_fold = fold_predictions(ens, x, ids)?;
    let m = per_fold.len() as f64;
    Ok((0..ids.len())
        .map(|i| per_fold.iter().map(|p| p[i]).sum::<f64>() / m)
        .collect())
}

/// Score every row of `x` and sort descending, ties by id.
pub fn predict_ensemble(ens: &Ensemble, x: &FeatureMatrix) -> Result<Vec<(String, f64)>> {
    let ids = x.row_ids().to_vec();
    let scores = ensemble_scores(ens, x, &ids)?;
    let mut ranking: Vec<(String, f64)> = ids.into_iter().zip(scores).collect();
    sort_ranking(&mut ranking);
    Ok(ranking)
}

pub fn predictions_csv_string(ranking: &[(String, f64)]) -> String {
    let mut s = String::from("id,score\n");
    for (id, score) in ranking {
        let _ = writeln!(s, "{id},{}", sig9(*score));
    }
    s
}

/// Graph embedding used ahead of the classifiers.
#[derive(Debug, Clone, PartialEq)]
pub enum EmbedMethod {
    /// Attributes only.
    None,
    Node2vec {
        walk: WalkConfig,
        skipgram: SkipGramConfig,
    },
    Line(LineConfig),
    Imgagn(ImGagnConfig),
}

impl EmbedMethod {
    pub fn name(&self) -> &'static str {
        match self {
            EmbedMethod::None => "none",
            EmbedMethod::Node2vec { .. } => "node2vec",
            EmbedMethod::Line(_) => "line",
            EmbedMethod::Imgagn(_) => "imgagn",
        }
    }

    /// Whether the embedding reads labels, and so must be refit per
    /// cross-validation fold.
    pub fn supervised(&self) -> bool {
        matches!(self, EmbedMethod::Imgagn(_))
    }
}

#[derive(Debug, Clone)]
pub struct EmbedResult {
    pub embedding: EmbeddingMatrix,
    pub imgagn_log: Option<TrainLog>,
}

/// Run the embedder. Returns `None` for [`EmbedMethod::None`]. Attributes
/// and labels are only read by the adversarial embedder.
pub fn embed(
    method: &EmbedMethod,
    g: &Graph,
    attributes: Option<&FeatureMatrix>,
    labels: Option<&LabelSet>,
    seed: u64,
) -> Result<Option<EmbedResult>> {
    Ok(match method {
        EmbedMethod::None => None,
        EmbedMethod::Node2vec { walk, skipgram } => Some(EmbedResult {
            embedding: node2vec(g, walk, skipgram, seed)?.embedding,
            imgagn_log: None,
        }),
        EmbedMethod::Line(cfg) => Some(EmbedResult {
            embedding: line_train(g, cfg, seed)?.embedding,
            imgagn_log: None,
        }),
        EmbedMethod::Imgagn(cfg) => {
            let (attributes, labels) = attributes
                .zip(labels)
                .ok_or_else(|| Error::invalid("imgagn needs node attributes and labels"))?;
            let out = train_imgagn(g, attributes, labels, cfg, seed)?;
            Some(EmbedResult {
                embedding: out.embedding,
                imgagn_log: Some(out.log),
            })
        }
    })
}

/// Everything the classifiers see: the embedding (if any) joined with the
/// correlation-filtered attributes (if enabled).
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub method: EmbedMethod,
    /// Append node attributes after the embedding columns.
    pub use_attributes: bool,
    pub corr_threshold: f64,
    pub ensemble: EnsembleConfig,
    pub cv_folds: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            method: EmbedMethod::Imgagn(ImGagnConfig::default()),
            use_attributes: true,
            corr_threshold: 0.85,
            ensemble: EnsembleConfig::default(),
            cv_folds: 5,
        }
    }
}

pub fn design_matrix(
    cfg: &PipelineConfig,
    emb: Option<&EmbeddingMatrix>,
    filtered: &FeatureMatrix,
) -> Result<FeatureMatrix> {
    match (emb, cfg.use_attributes) {
        (Some(e), true) => Ok(assemble_features(e, filtered)?.features),
        (Some(e), false) => e.to_feature_matrix(),
        (None, true) => Ok(filtered.clone()),
        (None, false) => Err(Error::invalid(
            "no embedding and attributes disabled: nothing to learn from",
        )),
    }
}

/// Keep only labels whose ids have a design-matrix row.
pub fn labels_with_rows(labels: &LabelSet, x: &FeatureMatrix) -> Result<LabelSet> {
    let have: HashSet<&str> = x.row_ids().iter().map(String::as_str).collect();
    let kept: Vec<&str> = labels
        .universe()
        .iter()
        .map(String::as_str)
        .filter(|id| have.contains(id))
        .collect();
    if kept.len() < labels.len() {
        log::warn!(
            "{} labeled ids have no features and are ignored",
            labels.len() - kept.len()
        );
    }
    labels.restrict(kept)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub fold_auc: Vec<f64>,
    pub mean_auc: f64,
}

/// Stratified k-fold estimate of the whole pipeline. Label-reading
/// embedders are refit on each training split with the held-out labels
/// hidden; unsupervised embeddings are computed once.
pub fn cross_validate(
    g: &Graph,
    attributes: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<CvReport> {
    let (filtered, _) = correlation_filter(attributes, cfg.corr_threshold)?;
    let shared = if cfg.method.supervised() {
        None
    } else {
        embed(
            &cfg.method,
            g,
            Some(attributes),
            Some(labels),
            seed::derive(seed, "embed"),
        )?
    };
    let ids = labels.universe().to_vec();
    let y: Vec<bool> = ids.iter().map(|id| labels.is_positive(id)).collect();
    let k = cfg.cv_folds;
    let folds = stratified_folds(&y, k, seed::derive(seed, "cv"))?;
    let fold_auc = (0..k)
        .into_par_iter()
        .map(|f| {
            let train = LabelSet::new(
                (0..ids.len())
                    .filter(|&i| folds[i] != f)
                    .map(|i| (ids[i].clone(), y[i])),
            )?;
            let test: Vec<usize> = (0..ids.len()).filter(|&i| folds[i] == f).collect();
            let fold_seed = seed::derive_index(seed, f as u64);
            let own;
            let emb = if cfg.method.supervised() {
                own = embed(
                    &cfg.method,
                    g,
                    Some(attributes),
                    Some(&train),
                    seed::derive(fold_seed, "embed"),
                )?;
                own.as_ref()
            } else {
                shared.as_ref()
            };
            let x = design_matrix(cfg, emb.map(|e| &e.embedding), &filtered)?;
            let train = labels_with_rows(&train, &x)?;
            let ens = train_ensemble(&x, &train, &cfg.ensemble, seed::derive(fold_seed, "ensemble"))?;
            let test_ids: Vec<String> = test.iter().map(|&i| ids[i].clone()).collect();
            let scores = ensemble_scores(&ens, &x, &test_ids)?;
            let yt: Vec<bool> = test.iter().map(|&i| y[i]).collect();
            auc_roc(&scores, &yt)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_auc = fold_auc.iter().sum::<f64>() / k as f64;
    Ok(CvReport { fold_auc, mean_auc })
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub embedding: Option<EmbedResult>,
    pub kept_attributes: Vec<String>,
    pub ensemble: Ensemble,
    pub ranking: Vec<(String, f64)>,
}

/// Fit on all labels and rank every node with features.
pub fn fit_and_rank(
    g: &Graph,
    attributes: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    let emb = embed(
        &cfg.method,
        g,
        Some(attributes),
        Some(labels),
        seed::derive(seed, "embed"),
    )?;
    rank_with_embedding(emb, attributes, labels, cfg, seed)
}

/// [`fit_and_rank`] with the embedding already computed.
pub fn rank_with_embedding(
    emb: Option<EmbedResult>,
    attributes: &FeatureMatrix,
    labels: &LabelSet,
    cfg: &PipelineConfig,
    seed: u64,
) -> Result<PipelineOutput> {
    let (filtered, kept) = correlation_filter(attributes, cfg.corr_threshold)?;
    let x = design_matrix(cfg, emb.as_ref().map(|e| &e.embedding), &filtered)?;
    let train = labels_with_rows(labels, &x)?;
    let ensemble = train_ensemble(&x, &train, &cfg.ensemble, seed::derive(seed, "ensemble"))?;
    let ranking = predict_ensemble(&ensemble, &x)?;
    Ok(PipelineOutput {
        embedding: emb,
        kept_attributes: kept,
        ensemble,
        ranking,
    })
}

/// Read `id,score` rows as written by [`predictions_csv_string`].
pub fn load_predictions(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || (i == 0 && line.trim() == "id,score") {
            continue;
        }
        let (id, score) = line
            .split_once(',')
            .ok_or_else(|| Error::parse(path, i + 1, "expected id,score"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, i + 1, format!("bad score {score:?}")))?;
        if !score.is_finite() {
            return Err(Error::parse(path, i + 1, "non-finite score"));
        }
        out.push((id.trim().to_string(), score));
    }
    if out.is_empty() {
        return Err(Error::parse(path, 1, "no predictions"));
    }
    Ok(out)
}
