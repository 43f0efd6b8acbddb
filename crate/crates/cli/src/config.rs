//! Run configuration: a flat TOML table layered as defaults < file <
//! `TARGETRANK_*` environment variables < command-line flags.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use targetrank::imgagn::ImGagnConfig;
use targetrank::line::{LineConfig, LineOrder};
use targetrank::ndmath::AdamConfig;
use targetrank::node2vec::{SkipGramConfig, WalkConfig, WalkView};
use targetrank::pipeline::{EmbedMethod, EnsembleConfig, PipelineConfig};
use targetrank::synth::SbmSpec;
use targetrank::trees::{ClassifierKind, ClassifierParams, DtParams, GbtParams, RfParams};

use crate::CliError;

pub const ENV_PREFIX: &str = "TARGETRANK_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub edges: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub gene_sets: Option<PathBuf>,
    pub predictions: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,

    /// node2vec, line, imgagn or none.
    pub method: String,
    /// dt, rf or gbt.
    pub classifier: String,
    pub dim: usize,
    /// Number of subsampled ensemble members.
    pub folds: usize,
    pub positive_frac: f64,
    pub neg_ratio: usize,
    pub corr_threshold: f64,
    pub use_attributes: bool,
    pub cv_folds: usize,

    pub bin_width: f64,
    pub top_frac: f64,
    pub smooth_window: usize,

    pub n2v_p: f64,
    pub n2v_q: f64,
    pub n2v_walks_per_node: usize,
    pub n2v_walk_length: usize,
    pub n2v_directed: bool,
    pub n2v_window: usize,
    pub n2v_negatives: usize,
    pub n2v_epochs: usize,
    pub n2v_lr: f64,

    pub line_order: String,
    pub line_negatives: usize,
    pub line_samples: Option<usize>,
    pub line_lr: f64,

    pub imgagn_hidden: usize,
    pub imgagn_generator_hidden: [usize; 2],
    pub imgagn_noise_dim: usize,
    pub imgagn_dropout: f64,
    pub imgagn_generator_epochs: usize,
    pub imgagn_discriminator_epochs: usize,
    pub imgagn_lr: f64,
    pub imgagn_generator_lr: f64,
    pub imgagn_weight_decay: f64,
    pub imgagn_standardize: bool,

    pub dt_max_depth: usize,
    pub dt_min_samples_leaf: usize,
    pub rf_n_trees: usize,
    pub rf_max_depth: usize,
    pub rf_min_samples_leaf: usize,
    pub rf_feature_frac: f64,
    pub rf_bootstrap: bool,
    pub gbt_rounds: usize,
    pub gbt_lr: f64,
    pub gbt_max_depth: usize,
    pub gbt_lambda: f64,
    pub gbt_gamma: f64,
    pub gbt_min_child_hessian: f64,
    /// Parameter overrides for the chosen classifier, searched by
    /// cross-validation when non-empty.
    pub grid: Vec<toml::Table>,

    pub compare_methods: Vec<String>,
    pub compare_classifiers: Vec<String>,

    pub synth_block_sizes: Vec<usize>,
    pub synth_p_in: f64,
    pub synth_p_out: f64,
    pub synth_positive_block: usize,
    pub synth_positive_frac: f64,
    pub synth_flip_rate: f64,
    pub synth_signal_dims: usize,
    pub synth_noise_dims: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let walk = WalkConfig::default();
        let sg = SkipGramConfig::default();
        let line = LineConfig::default();
        let im = ImGagnConfig::default();
        let dt = DtParams::default();
        let rf = RfParams::default();
        let gbt = GbtParams::default();
        let ens = EnsembleConfig::default();
        let pipe = PipelineConfig::default();
        let sbm = SbmSpec::default();
        RunConfig {
            edges: None,
            features: None,
            labels: None,
            gene_sets: None,
            predictions: None,
            out: PathBuf::from("out"),
            seed: 0,
            method: "imgagn".into(),
            classifier: "gbt".into(),
            dim: 80,
            folds: ens.m,
            positive_frac: ens.positive_frac,
            neg_ratio: ens.neg_ratio,
            corr_threshold: pipe.corr_threshold,
            use_attributes: pipe.use_attributes,
            cv_folds: pipe.cv_folds,
            bin_width: 0.05,
            top_frac: 0.05,
            smooth_window: 15,
            n2v_p: walk.p,
            n2v_q: walk.q,
            n2v_walks_per_node: walk.walks_per_node,
            n2v_walk_length: walk.walk_length,
            n2v_directed: walk.view == WalkView::Directed,
            n2v_window: sg.window,
            n2v_negatives: sg.negatives,
            n2v_epochs: sg.epochs,
            n2v_lr: sg.lr,
            line_order: "both".into(),
            line_negatives: line.negatives,
            line_samples: line.samples,
            line_lr: line.lr,
            imgagn_hidden: im.encoder_hidden,
            imgagn_generator_hidden: [im.generator_hidden.0, im.generator_hidden.1],
            imgagn_noise_dim: im.noise_dim,
            imgagn_dropout: im.dropout,
            imgagn_generator_epochs: im.generator_epochs,
            imgagn_discriminator_epochs: im.discriminator_epochs,
            imgagn_lr: im.adam.lr,
            imgagn_generator_lr: im.generator_adam.lr,
            imgagn_weight_decay: im.adam.weight_decay,
            imgagn_standardize: im.standardize,
            dt_max_depth: dt.max_depth,
            dt_min_samples_leaf: dt.min_samples_leaf,
            rf_n_trees: rf.n_trees,
            rf_max_depth: rf.max_depth,
            rf_min_samples_leaf: rf.min_samples_leaf,
            rf_feature_frac: rf.feature_frac,
            rf_bootstrap: rf.bootstrap,
            gbt_rounds: gbt.rounds,
            gbt_lr: gbt.learning_rate,
            gbt_max_depth: gbt.max_depth,
            gbt_lambda: gbt.lambda,
            gbt_gamma: gbt.gamma,
            gbt_min_child_hessian: gbt.min_child_hessian,
            grid: Vec::new(),
            compare_methods: vec!["node2vec".into(), "line".into(), "imgagn".into()],
            compare_classifiers: vec!["dt".into(), "rf".into(), "gbt".into()],
            synth_block_sizes: sbm.block_sizes,
            synth_p_in: sbm.p_in,
            synth_p_out: sbm.p_out,
            synth_positive_block: sbm.positive_block,
            synth_positive_frac: sbm.positive_frac,
            synth_flip_rate: sbm.flip_rate,
            synth_signal_dims: sbm.signal_dims,
            synth_noise_dims: sbm.noise_dims,
        }
    }
}

/// Parse a scalar override the way TOML would, falling back to a bare
/// string (`method=line` rather than `method="line"`).
pub fn parse_value(raw: &str) -> toml::Value {
    match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Merge the layers and deserialize. `overrides` are flag values, applied
/// last.
pub fn resolve(
    file: Option<&Path>,
    env: impl IntoIterator<Item = (String, String)>,
    overrides: &[(String, toml::Value)],
) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("config: cannot read {}: {e}", p.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| CliError::Config(format!("config: {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    let mut env: Vec<(String, String)> = env
        .into_iter()
        .filter_map(|(k, v)| k.strip_prefix(ENV_PREFIX).map(|k| (k.to_ascii_lowercase(), v)))
        .collect();
    env.sort();
    for (k, v) in env {
        table.insert(k, parse_value(&v));
    }
    for (k, v) in overrides {
        table.insert(k.clone(), v.clone());
    }
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn bad(field: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{field}: {msg}"))
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.embed_method_named(&self.method)?;
        self.classifier_kind_named("classifier", &self.classifier)?;
        for m in &self.compare_methods {
            self.embed_method_named(m)
                .map_err(|_| bad("compare_methods", format!("unknown method {m:?}")))?;
        }
        for c in &self.compare_classifiers {
            self.classifier_kind_named("compare_classifiers", c)?;
        }
        self.line_order_value()?;
        if self.dim == 0 {
            return Err(bad("dim", "must be at least 1"));
        }
        if self.folds == 0 {
            return Err(bad("folds", "must be at least 1"));
        }
        if self.cv_folds < 2 {
            return Err(bad("cv_folds", "must be at least 2"));
        }
        if !(self.positive_frac > 0.0 && self.positive_frac <= 1.0) {
            return Err(bad("positive_frac", "must lie in (0, 1]"));
        }
        if self.neg_ratio == 0 {
            return Err(bad("neg_ratio", "must be at least 1"));
        }
        if !(self.corr_threshold > 0.0 && self.corr_threshold <= 1.0) {
            return Err(bad("corr_threshold", "must lie in (0, 1]"));
        }
        if !(self.bin_width > 0.0 && self.bin_width <= 1.0) {
            return Err(bad("bin_width", "must lie in (0, 1]"));
        }
        if !(self.top_frac > 0.0 && self.top_frac <= 1.0) {
            return Err(bad("top_frac", "must lie in (0, 1]"));
        }
        if self.smooth_window.is_multiple_of(2) {
            return Err(bad("smooth_window", "must be odd"));
        }
        for (field, p) in [
            ("edges", &self.edges),
            ("features", &self.features),
            ("labels", &self.labels),
            ("gene_sets", &self.gene_sets),
            ("predictions", &self.predictions),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(bad(field, format!("no such file {}", p.display())));
                }
            }
        }
        self.sbm_spec().validate().map_err(|e| bad("synth", e))?;
        for (i, _) in self.grid.iter().enumerate() {
            self.grid_params(i)?;
        }
        Ok(())
    }

    pub fn require<'a>(&'a self, field: &str, value: &'a Option<PathBuf>) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| bad(field, "required for this command"))
    }

    fn line_order_value(&self) -> Result<LineOrder, CliError> {
        self.line_order.parse().map_err(|e| bad("line_order", e))
    }

    pub fn embed_method_named(&self, name: &str) -> Result<EmbedMethod, CliError> {
        Ok(match name {
            "none" => EmbedMethod::None,
            "node2vec" => EmbedMethod::Node2vec {
                walk: WalkConfig {
                    p: self.n2v_p,
                    q: self.n2v_q,
                    walks_per_node: self.n2v_walks_per_node,
                    walk_length: self.n2v_walk_length,
                    view: if self.n2v_directed {
                        WalkView::Directed
                    } else {
                        WalkView::Undirected
                    },
                },
                skipgram: SkipGramConfig {
                    dim: self.dim,
                    window: self.n2v_window,
                    negatives: self.n2v_negatives,
                    epochs: self.n2v_epochs,
                    lr: self.n2v_lr,
                },
            },
            "line" => EmbedMethod::Line(LineConfig {
                dim: self.dim,
                order: self.line_order_value()?,
                negatives: self.line_negatives,
                samples: self.line_samples,
                lr: self.line_lr,
            }),
            "imgagn" => EmbedMethod::Imgagn(ImGagnConfig {
                embed_dim: self.dim,
                encoder_hidden: self.imgagn_hidden,
                generator_hidden: (self.imgagn_generator_hidden[0], self.imgagn_generator_hidden[1]),
                noise_dim: self.imgagn_noise_dim,
                dropout: self.imgagn_dropout,
                generator_epochs: self.imgagn_generator_epochs,
                discriminator_epochs: self.imgagn_discriminator_epochs,
                adam: AdamConfig {
                    lr: self.imgagn_lr,
                    weight_decay: self.imgagn_weight_decay,
                    ..AdamConfig::default()
                },
                generator_adam: AdamConfig {
                    lr: self.imgagn_generator_lr,
                    ..AdamConfig::default()
                },
                standardize: self.imgagn_standardize,
            }),
            other => {
                return Err(bad(
                    "method",
                    format!("unknown value {other:?} (node2vec, line, imgagn, none)"),
                ))
            }
        })
    }

    fn classifier_kind_named(&self, field: &str, name: &str) -> Result<ClassifierKind, CliError> {
        name.parse().map_err(|e| bad(field, e))
    }

    pub fn classifier_kind(&self) -> ClassifierKind {
        self.classifier.parse().expect("validated")
    }

    pub fn classifier_params(&self, kind: ClassifierKind) -> ClassifierParams {
        match kind {
            ClassifierKind::Dt => ClassifierParams::Dt(DtParams {
                max_depth: self.dt_max_depth,
                min_samples_leaf: self.dt_min_samples_leaf,
            }),
            ClassifierKind::Rf => ClassifierParams::Rf(RfParams {
                n_trees: self.rf_n_trees,
                max_depth: self.rf_max_depth,
                min_samples_leaf: self.rf_min_samples_leaf,
                feature_frac: self.rf_feature_frac,
                bootstrap: self.rf_bootstrap,
            }),
            ClassifierKind::Gbt => ClassifierParams::Gbt(GbtParams {
                rounds: self.gbt_rounds,
                learning_rate: self.gbt_lr,
                max_depth: self.gbt_max_depth,
                lambda: self.gbt_lambda,
                gamma: self.gbt_gamma,
                min_child_hessian: self.gbt_min_child_hessian,
            }),
        }
    }

    /// Grid point `i`: the configured classifier parameters with the
    /// point's keys overridden.
    pub fn grid_params(&self, i: usize) -> Result<ClassifierParams, CliError> {
        let base = self.classifier_params(self.classifier_kind());
        let mut table = toml::Table::try_from(base).expect("params serialize");
        for (k, v) in &self.grid[i] {
            if k == "kind" {
                return Err(bad("grid", "entries may not change the classifier kind"));
            }
            table.insert(k.clone(), v.clone());
        }
        toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| bad("grid", format!("entry {}: {}", i + 1, e.message())))
    }

    pub fn ensemble_config(&self, classifier: ClassifierParams) -> EnsembleConfig {
        EnsembleConfig {
            m: self.folds,
            positive_frac: self.positive_frac,
            neg_ratio: self.neg_ratio,
            classifier,
        }
    }

    pub fn pipeline_config(&self, method: EmbedMethod, classifier: ClassifierParams) -> PipelineConfig {
        PipelineConfig {
            method,
            use_attributes: self.use_attributes,
            corr_threshold: self.corr_threshold,
            ensemble: self.ensemble_config(classifier),
            cv_folds: self.cv_folds,
        }
    }

    pub fn sbm_spec(&self) -> SbmSpec {
        SbmSpec {
            block_sizes: self.synth_block_sizes.clone(),
            p_in: self.synth_p_in,
            p_out: self.synth_p_out,
            positive_block: self.synth_positive_block,
            positive_frac: self.synth_positive_frac,
            flip_rate: self.synth_flip_rate,
            signal_dims: self.synth_signal_dims,
            noise_dims: self.synth_noise_dims,
            seed: self.seed,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
