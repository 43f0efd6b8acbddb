use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use targetrank::eval::{
    auc_roc, cross_val_grid_search, curve_csv_string, enrichment_curve, enrichment_scores, load_gmt,
    percentile_overlap, sort_ranking, CurvePoint, PercentileBin,
};
use targetrank::graph::{load_edge_list, load_feature_table, load_labels};
use targetrank::ndmath::Dense;
use targetrank::pipeline::{
    cross_validate, design_matrix, embed, labels_with_rows, load_predictions, predictions_csv_string,
    rank_with_embedding, CvReport, EmbedMethod,
};
use targetrank::textfmt::sig9;
use targetrank::trees::{Classifier, ClassifierKind, ClassifierParams};
use targetrank::{seed, FeatureMatrix, Graph, LabelSet};

use crate::config::RunConfig;
use crate::manifest::Run;
use crate::CliError;

pub const EMBEDDINGS: &str = "embeddings.tsv";
pub const TRAIN_LOG: &str = "train_log.tsv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const METRICS: &str = "metrics.json";
pub const CURVE: &str = "enrichment_curve.csv";
pub const COMPARISON_TSV: &str = "comparison.tsv";
pub const COMPARISON_JSON: &str = "comparison.json";

fn graph_in(run: &mut Run, path: &Path) -> Result<Graph, CliError> {
    run.input(path)?;
    let loaded = load_edge_list(path).map_err(CliError::stage("edges"))?;
    if loaded.duplicate_edges > 0 {
        log::warn!("{} duplicate edges ignored", loaded.duplicate_edges);
    }
    Ok(loaded.graph)
}

fn features_in(run: &mut Run, path: &Path) -> Result<FeatureMatrix, CliError> {
    run.input(path)?;
    load_feature_table(path).map_err(CliError::stage("features"))
}

fn labels_in(run: &mut Run, path: &Path) -> Result<LabelSet, CliError> {
    run.input(path)?;
    load_labels(path).map_err(CliError::stage("labels"))
}

fn json(value: &impl Serialize) -> String {
    serde_json::to_string_pretty(value).expect("report serializes") + "\n"
}

pub fn embed_graph(cfg: &RunConfig) -> Result<(), CliError> {
    let method = cfg.embed_method_named(&cfg.method)?;
    if method == EmbedMethod::None {
        return Err(CliError::Config(
            "method: embed needs a graph embedder, not none".into(),
        ));
    }
    let edges = cfg.require("edges", &cfg.edges)?;
    let (features, labels) = if method.supervised() {
        (
            Some(cfg.require("features", &cfg.features)?),
            Some(cfg.require("labels", &cfg.labels)?),
        )
    } else {
        (None, None)
    };
    let mut run = Run::start("embed", cfg)?;
    let g = graph_in(&mut run, edges)?;
    let attrs = features.map(|p| features_in(&mut run, p)).transpose()?;
    let labels = labels.map(|p| labels_in(&mut run, p)).transpose()?;
    let res = embed(
        &method,
        &g,
        attrs.as_ref(),
        labels.as_ref(),
        seed::derive(cfg.seed, "embed"),
    )
    .map_err(CliError::stage("embed"))?
    .expect("embedder returns an embedding");
    run.write(EMBEDDINGS, res.embedding.to_tsv_string(method.name(), cfg.seed))?;
    if let Some(log) = &res.imgagn_log {
        run.write(TRAIN_LOG, log.to_tsv_string())?;
    }
    run.finish()
}

#[derive(Debug, Serialize)]
struct GridReport {
    params: Vec<ClassifierParams>,
    mean_auc: Vec<f64>,
    best_index: usize,
}

#[derive(Debug, Serialize)]
struct Enrichment {
    query_size: usize,
    pathways: usize,
    /// Pathways ordered by the known-positive enrichment.
    curve: Vec<CurvePoint>,
}

#[derive(Debug, Serialize)]
struct PipelineMetrics {
    method: String,
    classifier: ClassifierParams,
    grid: Option<GridReport>,
    cross_validation: CvReport,
    n_ranked: usize,
    n_labeled: usize,
    n_positive: usize,
    kept_attributes: Vec<String>,
    percentile_bins: Vec<PercentileBin>,
    enrichment: Option<Enrichment>,
}

fn select_classifier(
    cfg: &RunConfig,
    x: &FeatureMatrix,
    labels: &LabelSet,
) -> Result<(ClassifierParams, Option<GridReport>), CliError> {
    if cfg.grid.is_empty() {
        return Ok((cfg.classifier_params(cfg.classifier_kind()), None));
    }
    let grid: Vec<ClassifierParams> = (0..cfg.grid.len())
        .map(|i| cfg.grid_params(i))
        .collect::<Result<_, _>>()?;
    let ids = labels.universe();
    let mut data = Vec::with_capacity(ids.len() * x.n_cols());
    for id in ids {
        data.extend_from_slice(x.row_by_id(id).expect("labels restricted to rows"));
    }
    let xd = Dense::from_vec(ids.len(), x.n_cols(), data).map_err(CliError::stage("grid"))?;
    let y: Vec<bool> = ids.iter().map(|id| labels.is_positive(id)).collect();
    let fit_seed = seed::derive(cfg.seed, "grid-fit");
    let r = cross_val_grid_search(
        &xd,
        &y,
        &grid,
        cfg.cv_folds,
        seed::derive(cfg.seed, "grid"),
        |p, xtr, ytr, xte, f| {
            Classifier::fit(p, xtr, ytr, seed::derive_index(fit_seed, f as u64))?.predict(xte)
        },
    )
    .map_err(CliError::stage("grid"))?;
    log::info!("grid: point {} of {} selected", r.best_index + 1, grid.len());
    Ok((
        r.best,
        Some(GridReport {
            params: grid,
            mean_auc: r.mean_auc,
            best_index: r.best_index,
        }),
    ))
}

fn enrichment_of(
    cfg: &RunConfig,
    run: &mut Run,
    ranking: &[(String, f64)],
    known: &LabelSet,
) -> Result<Option<Enrichment>, CliError> {
    let Some(path) = &cfg.gene_sets else {
        return Ok(None);
    };
    run.input(path)?;
    let sets = load_gmt(path).map_err(CliError::stage("gene_sets"))?;
    let universe: Vec<String> = ranking.iter().map(|(id, _)| id.clone()).collect();
    let top = ((cfg.top_frac * ranking.len() as f64).round() as usize).clamp(1, ranking.len());
    let query = universe[..top].to_vec();
    let reference: Vec<String> = known.positives().into_iter().map(str::to_string).collect();
    let stage = CliError::stage("enrichment");
    let ref_scores = enrichment_scores(&reference, &sets, &universe).map_err(&stage)?;
    let query_scores = enrichment_scores(&query, &sets, &universe).map_err(&stage)?;
    let curve = enrichment_curve(&ref_scores, &query_scores, cfg.smooth_window).map_err(&stage)?;
    run.write(CURVE, curve_csv_string(&curve))?;
    Ok(Some(Enrichment {
        query_size: top,
        pathways: sets.len(),
        curve,
    }))
}

pub fn pipeline(cfg: &RunConfig) -> Result<(), CliError> {
    let method = cfg.embed_method_named(&cfg.method)?;
    let features = cfg.require("features", &cfg.features)?;
    let labels = cfg.require("labels", &cfg.labels)?;
    let edges = match method {
        EmbedMethod::None => None,
        _ => Some(cfg.require("edges", &cfg.edges)?),
    };
    let mut run = Run::start("pipeline", cfg)?;
    let g = match edges {
        Some(p) => graph_in(&mut run, p)?,
        None => {
            Graph::from_edges(Vec::new(), Vec::new())
                .map_err(CliError::stage("edges"))?
                .0
        }
    };
    let attrs = features_in(&mut run, features)?;
    let labels = labels_in(&mut run, labels)?;

    let t = Instant::now();
    let emb = embed(
        &method,
        &g,
        Some(&attrs),
        Some(&labels),
        seed::derive(cfg.seed, "embed"),
    )
    .map_err(CliError::stage("embed"))?;
    log::info!("embedding: {:.1?}", t.elapsed());

    let base = cfg.pipeline_config(method.clone(), cfg.classifier_params(cfg.classifier_kind()));
    let (filtered, _) = targetrank::pipeline::correlation_filter(&attrs, base.corr_threshold)
        .map_err(CliError::stage("filter"))?;
    let x = design_matrix(&base, emb.as_ref().map(|e| &e.embedding), &filtered)
        .map_err(CliError::stage("assemble"))?;
    let train = labels_with_rows(&labels, &x).map_err(CliError::stage("assemble"))?;
    let (params, grid) = select_classifier(cfg, &x, &train)?;
    let pcfg = cfg.pipeline_config(method.clone(), params);

    let cv =
        cross_validate(&g, &attrs, &train, &pcfg, cfg.seed).map_err(CliError::stage("cross-validation"))?;
    log::info!("cross-validated AUC {:.4}", cv.mean_auc);

    let out = rank_with_embedding(emb, &attrs, &train, &pcfg, cfg.seed).map_err(CliError::stage("rank"))?;
    if let Some(e) = &out.embedding {
        run.write(EMBEDDINGS, e.embedding.to_tsv_string(method.name(), cfg.seed))?;
        if let Some(log) = &e.imgagn_log {
            run.write(TRAIN_LOG, log.to_tsv_string())?;
        }
    }
    run.write(PREDICTIONS, predictions_csv_string(&out.ranking))?;
    let bins =
        percentile_overlap(&out.ranking, &train, cfg.bin_width).map_err(CliError::stage("evaluate"))?;
    let enrichment = enrichment_of(cfg, &mut run, &out.ranking, &train)?;
    let metrics = PipelineMetrics {
        method: method.name().to_string(),
        classifier: params,
        grid,
        cross_validation: cv,
        n_ranked: out.ranking.len(),
        n_labeled: train.len(),
        n_positive: train.n_positives(),
        kept_attributes: out.kept_attributes,
        percentile_bins: bins,
        enrichment,
    };
    run.write(METRICS, json(&metrics))?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct Cell {
    method: String,
    classifier: String,
    /// `None` when the cell failed; see `error`.
    mean_auc: Option<f64>,
    fold_auc: Vec<f64>,
    error: Option<String>,
}

pub fn compare(cfg: &RunConfig) -> Result<(), CliError> {
    let features = cfg.require("features", &cfg.features)?;
    let labels = cfg.require("labels", &cfg.labels)?;
    let methods: Vec<EmbedMethod> = cfg
        .compare_methods
        .iter()
        .map(|m| cfg.embed_method_named(m))
        .collect::<Result<_, _>>()?;
    let needs_graph = methods.iter().any(|m| *m != EmbedMethod::None);
    let edges = if needs_graph {
        Some(cfg.require("edges", &cfg.edges)?)
    } else {
        None
    };
    let kinds: Vec<ClassifierKind> = cfg
        .compare_classifiers
        .iter()
        .map(|c| {
            c.parse()
                .map_err(|e| CliError::Config(format!("compare_classifiers: {e}")))
        })
        .collect::<Result<_, _>>()?;

    let mut run = Run::start("compare", cfg)?;
    let g = match edges {
        Some(p) => graph_in(&mut run, p)?,
        None => {
            Graph::from_edges(Vec::new(), Vec::new())
                .map_err(CliError::stage("edges"))?
                .0
        }
    };
    let attrs = features_in(&mut run, features)?;
    let labels = labels_in(&mut run, labels)?;

    let mut cells = Vec::new();
    for method in &methods {
        for &kind in &kinds {
            let pcfg = cfg.pipeline_config(method.clone(), cfg.classifier_params(kind));
            let t = Instant::now();
            let res = cross_validate(&g, &attrs, &labels, &pcfg, cfg.seed);
            log::info!("{} + {}: {:.1?}", method.name(), kind.name(), t.elapsed());
            cells.push(match res {
                Ok(cv) => Cell {
                    method: method.name().to_string(),
                    classifier: kind.name().to_string(),
                    mean_auc: Some(cv.mean_auc),
                    fold_auc: cv.fold_auc,
                    error: None,
                },
                Err(e) => {
                    log::error!("{} + {} failed: {e}", method.name(), kind.name());
                    Cell {
                        method: method.name().to_string(),
                        classifier: kind.name().to_string(),
                        mean_auc: None,
                        fold_auc: Vec::new(),
                        error: Some(e.to_string()),
                    }
                }
            });
        }
    }

    let mut tsv = String::from("method");
    for k in &kinds {
        let _ = write!(tsv, "\t{}", k.name());
    }
    tsv.push('\n');
    for (i, method) in methods.iter().enumerate() {
        tsv.push_str(method.name());
        for cell in &cells[i * kinds.len()..(i + 1) * kinds.len()] {
            match cell.mean_auc {
                Some(a) => {
                    let _ = write!(tsv, "\t{}", sig9(a));
                }
                None => tsv.push_str("\tFAILED"),
            }
        }
        tsv.push('\n');
    }
    run.write(COMPARISON_TSV, tsv)?;
    run.write(COMPARISON_JSON, json(&cells))?;
    run.finish()?;
    let failed = cells.iter().filter(|c| c.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!(
            "compare: {failed} of {} cells failed (marked FAILED)",
            cells.len()
        )));
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let bench = cfg.sbm_spec().generate().map_err(CliError::stage("synth"))?;
    let mut run = Run::start("synth", cfg)?;
    run.write(
        targetrank::synth::EDGES_FILE,
        targetrank::graph::edge_list_string(&bench.graph),
    )?;
    run.write(targetrank::synth::FEATURES_FILE, bench.features.to_csv_string())?;
    run.write(targetrank::synth::LABELS_FILE, bench.labels.to_csv_string())?;
    run.finish()
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    n_ranked: usize,
    n_labeled: usize,
    n_positive: usize,
    auc: f64,
    percentile_bins: Vec<PercentileBin>,
    enrichment: Option<Enrichment>,
}

pub fn eval(cfg: &RunConfig) -> Result<(), CliError> {
    let predictions = cfg.require("predictions", &cfg.predictions)?;
    let labels = cfg.require("labels", &cfg.labels)?;
    let mut run = Run::start("eval", cfg)?;
    run.input(predictions)?;
    let mut ranking = load_predictions(predictions).map_err(CliError::stage("predictions"))?;
    sort_ranking(&mut ranking);
    let labels = labels_in(&mut run, labels)?;
    let stage = CliError::stage("evaluate");
    let ranked: std::collections::HashSet<&str> = ranking.iter().map(|(id, _)| id.as_str()).collect();
    let known = labels
        .restrict(
            labels
                .universe()
                .iter()
                .map(String::as_str)
                .filter(|id| ranked.contains(id)),
        )
        .map_err(&stage)?;
    if known.len() < labels.len() {
        log::warn!(
            "{} labeled ids are not ranked and are ignored",
            labels.len() - known.len()
        );
    }
    let (scores, y): (Vec<f64>, Vec<bool>) = ranking
        .iter()
        .filter_map(|(id, s)| known.label(id).map(|l| (*s, l)))
        .unzip();
    let auc = auc_roc(&scores, &y).map_err(&stage)?;
    let bins = percentile_overlap(&ranking, &known, cfg.bin_width).map_err(&stage)?;
    let enrichment = enrichment_of(cfg, &mut run, &ranking, &known)?;
    let metrics = EvalMetrics {
        n_ranked: ranking.len(),
        n_labeled: known.len(),
        n_positive: known.n_positives(),
        auc,
        percentile_bins: bins,
        enrichment,
    };
    run.write(METRICS, json(&metrics))?;
    run.finish()
}
