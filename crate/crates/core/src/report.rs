//! Run configuration, input loading and the on-disk report: `report.json`,
//! `tables/*.csv` and declarative `plots/*.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::pipelines::{BaselineComparison, PipelineConfig, PipelineResults, RegimeSegmentation, SweepClass};
use crate::tensor_io::{load_model, load_token_stream, manifest_path, ModelBundle, TokenStream, MODEL_FILE};
use crate::{Error, ErrorKind, Stage, StageExt};

pub const REPORT_SCHEMA: &str = "raretok.report/1";
pub const PLOT_SCHEMA: &str = "raretok.plot/1";
pub const REPORT_FILE: &str = "report.json";

/// A run as read from TOML. Paths are kept as written; command-line flags
/// override file values before validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub corpus: Vec<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub pipeline: PipelineConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, Error> {
        toml::from_str(text).map_err(|e| config_error(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Checks that everything a full run needs is present and in range.
    pub fn resolve(&self) -> Result<ResolvedConfig, Error> {
        let seed = self.seed.ok_or_else(|| config_error("seed is required".into()))?;
        let model = self.model.clone().ok_or_else(|| config_error("model path is required".into()))?;
        if self.corpus.is_empty() {
            return Err(config_error("at least one corpus path is required".into()));
        }
        self.pipeline.validate().map_err(config_error)?;
        Ok(ResolvedConfig {
            model: model.display().to_string(),
            corpus: self.corpus.iter().map(|p| p.display().to_string()).collect(),
            seed,
            pipeline: self.pipeline.clone(),
        })
    }
}

fn config_error(message: String) -> Error {
    Error::new(Stage::Load, ErrorKind::Config(message))
}

/// The configuration embedded in a report. The output directory and
/// thread count are left out because they do not affect results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub model: String,
    pub corpus: Vec<String>,
    pub seed: u64,
    pub pipeline: PipelineConfig,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

fn digest(path: &Path) -> Result<InputDigest, Error> {
    let bytes = fs::read(path).map_err(|e| output_error(path, e))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

pub struct Inputs {
    pub bundle: ModelBundle,
    pub stream: TokenStream,
    pub digests: Vec<InputDigest>,
}

/// Concatenates corpora into one stream, each file starting new documents.
pub fn concat_streams(streams: Vec<TokenStream>) -> Result<TokenStream, Error> {
    let vocab = streams.first().map(|s| s.vocab_size).unwrap_or(0);
    let mut ids = Vec::new();
    let mut bounds = Vec::new();
    for s in streams {
        if s.vocab_size != vocab {
            return Err(config_error(format!("corpora disagree on vocabulary size: {vocab} vs {}", s.vocab_size)));
        }
        let offset = ids.len();
        if s.doc_boundaries.is_empty() {
            bounds.push(offset);
        }
        bounds.extend(s.doc_boundaries.iter().map(|b| b + offset));
        ids.extend(s.ids);
    }
    TokenStream::new(ids, bounds, vocab).stage(Stage::Load)
}

/// Loads the model and corpora and hashes every file read.
pub fn load_inputs(model: &Path, corpus: &[PathBuf]) -> Result<Inputs, Error> {
    let bundle = load_model(model).stage(Stage::Load)?;
    let model_file = if model.is_dir() { model.join(MODEL_FILE) } else { model.to_path_buf() };
    let mut digests = vec![digest(&model_file)?];
    let mut streams = Vec::new();
    for c in corpus {
        let ids = if c.extension().is_some_and(|e| e == "json") {
            c.with_extension("bin")
        } else {
            c.clone()
        };
        digests.push(digest(&ids)?);
        digests.push(digest(&manifest_path(&ids))?);
        streams.push(load_token_stream(c).stage(Stage::Load)?);
    }
    Ok(Inputs {
        bundle,
        stream: concat_streams(streams)?,
        digests,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema: String,
    pub config: ResolvedConfig,
    pub inputs: Vec<InputDigest>,
    /// Some enabled analyses produced no result.
    pub partial_results: bool,
    pub missing_analyses: Vec<String>,
    #[serde(flatten)]
    pub results: PipelineResults,
}

impl Report {
    pub fn new(config: ResolvedConfig, inputs: Vec<InputDigest>, results: PipelineResults) -> Self {
        let present = |a: &str| match a {
            "geometry" => results.geometry.is_some(),
            "graph" => results.graph.is_some(),
            "attention" => results.attention.is_some(),
            _ => results.spectral.is_some(),
        };
        let missing: Vec<String> = config
            .pipeline
            .analyses
            .enabled()
            .into_iter()
            .filter(|a| !present(a))
            .map(String::from)
            .collect();
        Self {
            schema: REPORT_SCHEMA.to_string(),
            config,
            inputs,
            partial_results: !missing.is_empty(),
            missing_analyses: missing,
            results,
        }
    }

    fn analyses_present(&self) -> usize {
        let r = &self.results;
        [r.geometry.is_some(), r.graph.is_some(), r.attention.is_some(), r.spectral.is_some()]
            .iter()
            .filter(|b| **b)
            .count()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn load(path: &Path) -> Result<Self, Error> {
        let text = fs::read_to_string(path).map_err(|e| output_error(path, e))?;
        let report: Report = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
        if report.schema != REPORT_SCHEMA {
            return Err(config_error(format!("unsupported report schema {:?}", report.schema)));
        }
        Ok(report)
    }
}

fn output_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::new(
        Stage::Report,
        ErrorKind::Output {
            path: path.display().to_string(),
            message: e.to_string(),
        },
    )
}

fn write(path: &Path, contents: &str) -> Result<(), Error> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| output_error(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| output_error(path, e))
}

/// 17 significant digits, enough to round-trip any `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

struct Table {
    header: &'static [&'static str],
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &'static [&'static str]) -> Self {
        Self { header, rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn render(&self) -> String {
        let mut s = self.header.join(",");
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join(","));
            s.push('\n');
        }
        s
    }
}

fn comparison_cells(c: &BaselineComparison) -> Vec<String> {
    vec![
        fmt_f64(c.baseline_mean),
        fmt_f64(c.baseline_std),
        opt(c.test.map(|t| t.t)),
        opt(c.test.map(|t| t.p)),
        c.significant.to_string(),
    ]
}

fn tables(report: &Report) -> Vec<(&'static str, Table)> {
    let r = &report.results;
    let mut out = Vec::new();
    if let Some(s) = &r.sweep {
        let mut t = Table::new(&["neuron_index", "delta_loss_rare", "delta_loss_common", "rank_rare", "rank_common"]);
        let mut rank = [vec![0; s.records.len()], vec![0; s.records.len()]];
        for (k, class) in [SweepClass::Rare, SweepClass::Common].into_iter().enumerate() {
            for (pos, &i) in s.ranking(class).iter().enumerate() {
                rank[k][i] = pos + 1;
            }
        }
        for rec in &s.records {
            let i = rec.neuron_index;
            t.push(vec![
                i.to_string(),
                fmt_f64(rec.delta_loss_rare),
                fmt_f64(rec.delta_loss_common),
                rank[0][i].to_string(),
                rank[1][i].to_string(),
            ]);
        }
        out.push(("sweep", t));
    }
    if let Some(reg) = &r.regimes {
        let mut t = Table::new(&[
            "class",
            "plateau_end_rank",
            "powerlaw_end_rank",
            "kappa",
            "beta",
            "r_squared",
            "plateau_slope",
            "plateau_log_gap",
            "tail_slope",
        ]);
        for (name, s) in [("rare", &reg.rare), ("common", &reg.common)] {
            t.push(vec![
                name.into(),
                s.plateau_end_rank.to_string(),
                s.powerlaw_end_rank.to_string(),
                fmt_f64(s.kappa),
                fmt_f64(s.beta),
                opt(s.r_squared),
                opt(s.plateau_slope),
                opt(s.plateau_log_gap),
                opt(s.tail_slope),
            ]);
        }
        out.push(("regimes", t));
    }
    if !r.robustness.is_empty() {
        let mut t = Table::new(&["percentile", "plateau_size", "overlap"]);
        for o in &r.robustness {
            t.push(vec![fmt_f64(o.percentile), o.plateau_set.len().to_string(), fmt_f64(o.overlap)]);
        }
        out.push(("robustness", t));
    }
    if let Some(g) = &r.geometry {
        let mut t = Table::new(&[
            "group",
            "size",
            "d_eff",
            "d_eff_ratio",
            "baseline_ratio_mean",
            "baseline_ratio_std",
            "t",
            "p",
            "significant",
        ]);
        let mut row = vec!["group".into(), g.group.len().to_string(), g.d_eff.to_string(), fmt_f64(g.ratio.group_value)];
        row.extend(comparison_cells(&g.ratio));
        t.push(row);
        for (b, (grp, d)) in g.baseline_groups.iter().zip(&g.baseline_d_eff).enumerate() {
            t.push(vec![
                format!("random_{}", b + 1),
                grp.len().to_string(),
                d.to_string(),
                fmt_f64(*d as f64 / grp.len() as f64),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
            ]);
        }
        out.push(("geometry", t));
    }
    if let Some(g) = &r.graph {
        let mut t = Table::new(&[
            "group",
            "size",
            "modularity",
            "n_communities",
            "mean_community_size",
            "baseline_modularity_mean",
            "baseline_modularity_std",
            "t",
            "p",
            "significant",
        ]);
        let c = &g.communities;
        let mut row = vec![
            "group".into(),
            g.group.len().to_string(),
            fmt_f64(c.q),
            c.n_communities.to_string(),
            fmt_f64(c.mean_community_size),
        ];
        row.extend(comparison_cells(&g.modularity));
        t.push(row);
        out.push(("graph", t));
    }
    if let Some(a) = &r.attention {
        let mut t = Table::new(&["ablation", "layer", "head", "impact", "baseline_mean", "baseline_std", "t", "p", "significant"]);
        let mut push = |label: &str, h: &crate::pipelines::HeadImpact| {
            let mut row = vec![
                label.to_string(),
                h.layer.to_string(),
                h.head.map(|x| x.to_string()).unwrap_or_default(),
                fmt_f64(h.impact.group_value),
            ];
            row.extend(comparison_cells(&h.impact));
            t.push(row);
        };
        push("single", &a.head_impacts[a.most_influential]);
        push("random", &a.head_impacts[a.random_head]);
        for h in &a.all_heads {
            push("all_heads", h);
        }
        for h in &a.head_impacts {
            push("head", h);
        }
        out.push(("attention_impact", t));
        let mut t = Table::new(&[
            "layer",
            "head",
            "gini_rare",
            "gini_common",
            "n_rare",
            "n_common",
            "t",
            "p",
            "significant",
            "profile_spearman",
        ]);
        for h in &a.heads {
            t.push(vec![
                h.layer.to_string(),
                h.head.to_string(),
                fmt_f64(h.gini_rare),
                fmt_f64(h.gini_common),
                h.n_rare.to_string(),
                h.n_common.to_string(),
                opt(h.test.map(|x| x.t)),
                opt(h.test.map(|x| x.p)),
                h.significant.to_string(),
                opt(h.profile_spearman),
            ]);
        }
        out.push(("attention_heads", t));
    }
    if let Some(s) = &r.spectral {
        let mut t = Table::new(&["group", "size", "alpha_hill", "k", "lambda_k", "lambda_peak", "degenerate"]);
        let row = |name: String, size: usize, e: &crate::pipelines::TailEstimate| {
            vec![
                name,
                size.to_string(),
                fmt_f64(e.alpha_hill),
                e.k.to_string(),
                fmt_f64(e.lambda_k),
                fmt_f64(e.lambda_peak),
                e.degenerate.to_string(),
            ]
        };
        t.push(row("group".into(), s.group.len(), &s.tail));
        for (b, (g, e)) in s.baseline_groups.iter().zip(&s.baseline_tails).enumerate() {
            t.push(row(format!("random_{}", b + 1), g.len(), e));
        }
        out.push(("spectral", t));
    }
    out
}

/// Rank-versus-Δloss scatter on log-log axes with the two regime
/// boundaries as vertical markers. Non-positive values cannot sit on a log
/// axis and are dropped.
fn rank_plot(class: SweepClass, curve: &[f64], seg: &RegimeSegmentation) -> Value {
    let (x, y): (Vec<usize>, Vec<f64>) = curve.iter().enumerate().filter(|(_, v)| **v > 0.0).map(|(i, &v)| (i + 1, v)).unzip();
    json!({
        "schema": PLOT_SCHEMA,
        "kind": "scatter",
        "title": format!("Ablation influence by rank, {} targets", class.name()),
        "x": {"label": "rank", "scale": "log"},
        "y": {"label": "delta_loss", "scale": "log"},
        "series": [{"name": class.name(), "x": x, "y": y}],
        "markers": [
            {"axis": "x", "label": "plateau end", "value": seg.plateau_end_rank, "present": seg.has_plateau()},
            {"axis": "x", "label": "power-law end", "value": seg.powerlaw_end_rank, "present": seg.tail_slope.is_some()},
        ],
    })
}

fn alpha_plot(s: &crate::pipelines::SpectralReport) -> Value {
    let finite = |v: f64| v.is_finite().then_some(v);
    json!({
        "schema": PLOT_SCHEMA,
        "kind": "bar",
        "title": "Hill tail index of final-layer weight spectra",
        "x": {"label": "group", "scale": "categorical"},
        "y": {"label": "alpha_hill", "scale": "linear"},
        "series": [{
            "name": "alpha_hill",
            "x": ["group", "random"],
            "y": [finite(s.alpha.group_value), finite(s.alpha.baseline_mean)],
            "error": [null, finite(s.alpha.baseline_std)],
        }],
        "markers": [],
    })
}

fn plots(report: &Report) -> Vec<(&'static str, Value)> {
    let r = &report.results;
    let mut out = Vec::new();
    if let (Some(s), Some(reg)) = (&r.sweep, &r.regimes) {
        out.push(("rank_delta_rare", rank_plot(SweepClass::Rare, &s.curve(SweepClass::Rare), &reg.rare)));
        out.push(("rank_delta_common", rank_plot(SweepClass::Common, &s.curve(SweepClass::Common), &reg.common)));
    }
    if let Some(s) = &r.spectral {
        out.push(("alpha_hill", alpha_plot(s)));
    }
    out
}

/// Writes `report.json`, `tables/*.csv` and `plots/*.json` under `out`
/// and returns the written paths. Needs at least one finished analysis.
pub fn emit_report(report: &Report, out: &Path) -> Result<Vec<PathBuf>, Error> {
    if report.analyses_present() == 0 {
        return Err(Error::new(Stage::Report, ErrorKind::Config("no analysis finished; nothing to report".into())));
    }
    let mut written = Vec::new();
    let path = out.join(REPORT_FILE);
    write(&path, &report.to_json())?;
    written.push(path);
    for (name, t) in tables(report) {
        let path = out.join("tables").join(format!("{name}.csv"));
        write(&path, &t.render())?;
        written.push(path);
    }
    for (name, p) in plots(report) {
        let path = out.join("plots").join(format!("{name}.json"));
        let mut s = serde_json::to_string_pretty(&p).expect("plot serializes");
        s.push('\n');
        write(&path, &s)?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Model;
    use crate::pipelines::{run_pipeline, AnalysisSet};
    use crate::synth::{random_bundle, small_arch};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn geometry_only() -> Report {
        let arch = small_arch(2, 16, 48, 4, 64, 32);
        let model = Model::new(&random_bundle(&arch, 0.3, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ids: Vec<u32> = (0..32 * 100).map(|_| (rng.random::<f64>().powi(2) * 64.0) as u32).collect();
        let stream = TokenStream::new(ids, vec![0], 64).unwrap();
        let pipeline = PipelineConfig {
            elbow_window: 5,
            percentile: 0.4,
            analyses: AnalysisSet {
                geometry: true,
                ..AnalysisSet::none()
            },
            ..Default::default()
        };
        let group: Vec<usize> = (0..10).collect();
        let results = run_pipeline(&model, &stream, &pipeline, 1, Some(&group)).unwrap();
        let config = ResolvedConfig {
            model: "m".into(),
            corpus: vec!["c".into()],
            seed: 1,
            pipeline,
        };
        Report::new(config, vec![], results)
    }

    #[test]
    fn floats_keep_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
        assert_eq!(fmt_f64(f64::NEG_INFINITY), "-inf");
        let x = 1.0 / 3.0;
        assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
    }

    #[test]
    fn geometry_only_report_has_null_blocks() {
        let report = geometry_only();
        assert!(!report.partial_results);
        let dir = tempfile::tempdir().unwrap();
        let written = emit_report(&report, dir.path()).unwrap();
        let names: Vec<String> = written.iter().map(|p| p.strip_prefix(dir.path()).unwrap().display().to_string()).collect();
        assert_eq!(names, vec!["report.json", "tables/geometry.csv"]);
        let v: Value = serde_json::from_str(&fs::read_to_string(dir.path().join(REPORT_FILE)).unwrap()).unwrap();
        assert_eq!(v["schema"], REPORT_SCHEMA);
        assert!(v["geometry"].is_object());
        for k in ["graph", "attention", "spectral", "sweep", "regimes"] {
            assert!(v[k].is_null(), "{k}");
        }
        let back = Report::load(&dir.path().join(REPORT_FILE)).unwrap();
        assert_eq!(back, report);
        let csv = fs::read_to_string(dir.path().join("tables/geometry.csv")).unwrap();
        assert_eq!(csv.lines().count(), 1 + 1 + 20);
    }

    #[test]
    fn missing_analyses_raise_the_partial_flag() {
        let mut report = geometry_only();
        report.config.pipeline.analyses.graph = true;
        let report = Report::new(report.config, vec![], report.results);
        assert!(report.partial_results);
        assert_eq!(report.missing_analyses, vec!["graph"]);
        let mut empty = report.clone();
        empty.results.geometry = None;
        assert!(emit_report(&empty, tempfile::tempdir().unwrap().path()).is_err());
    }

    #[test]
    fn config_requires_seed_and_rejects_unknown_keys() {
        let c = RunConfig::from_toml("model = \"m\"\ncorpus = [\"c.bin\"]\n[pipeline]\ntau = 0.9\n").unwrap();
        assert_eq!(c.pipeline.tau, 0.9);
        assert!(c.resolve().unwrap_err().to_string().contains("seed"));
        assert!(RunConfig::from_toml("seed = 1\ncolour = 3\n").is_err());
        assert!(RunConfig::from_toml("seed = 1\n[pipeline]\nbins = 1\n").unwrap().resolve().is_err());
        let c = RunConfig::from_toml("seed = 4\nmodel = \"m\"\ncorpus = [\"c\"]\n[pipeline.analyses]\nattention = false\n").unwrap();
        let r = c.resolve().unwrap();
        assert_eq!(r.seed, 4);
        assert!(!r.pipeline.analyses.attention && r.pipeline.analyses.graph);
    }

    #[test]
    fn corpora_concatenate_as_separate_documents() {
        let a = TokenStream::new(vec![1, 2, 3], vec![], 8).unwrap();
        let b = TokenStream::new(vec![4, 5, 6, 7], vec![0, 2], 8).unwrap();
        let s = concat_streams(vec![a, b]).unwrap();
        assert_eq!(s.ids, vec![1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(s.doc_boundaries, vec![0, 3, 5]);
        let c = TokenStream::new(vec![1], vec![], 9).unwrap();
        assert!(concat_streams(vec![s, c]).is_err());
    }
}
