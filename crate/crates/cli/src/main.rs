use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use raretok::model::Model;
use raretok::pipelines::{
    ablation_sweep, segment_regimes, AblationSweepResult, AnalysisSet, ClassSizes, NeuronRecord, PipelineConfig, SweepClass, WeightChoice,
};
use raretok::report::{emit_report, fmt_f64, load_inputs, Report, RunConfig};
use raretok::synth::{make_planted_bundle, PlantSpec};
use raretok::token_stats::{count_frequencies, detect_elbow, sorted_log_frequency, split_classes, SplitFile, TokenClassSplit};
use raretok::{Error, ErrorCategory, ErrorKind, Stage, StageExt};

/// Rare-token neuron analysis for small decoder-only transformers.
#[derive(Parser)]
#[command(name = "raretok", version)]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not
    /// depend on this value.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Count token frequencies, locate the elbow and split rare from common tokens.
    Freq(FreqArgs),
    /// Generate a toy model with planted rare-token neurons and its corpus.
    Synth(SynthArgs),
    /// Mean-ablate every final-layer neuron and record the loss changes.
    Ablate(AblateArgs),
    /// Segment a sweep's rank curve into plateau, power-law and tail.
    Regimes(RegimesArgs),
    /// Effective dimension of the plateau group against random groups.
    Geometry(RunArgs),
    /// Mutual-information community structure of the plateau group.
    Graph(RunArgs),
    /// Attention concentration and head ablations for the plateau group.
    Attention(RunArgs),
    /// Hill tail index of the plateau group's weight spectrum.
    Spectrum(RunArgs),
    /// Full pipeline: sweep, segmentation and all enabled analyses.
    RunAll(RunArgs),
    /// Re-emit tables and plot specs from an existing report.json.
    Report(ReportArgs),
}

#[derive(Args)]
struct FreqArgs {
    /// Token stream (id file or its manifest); repeat for several corpora.
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = raretok::token_stats::DEFAULT_PERCENTILE)]
    percentile: f64,
    #[arg(long, visible_alias = "window", default_value_t = raretok::token_stats::DEFAULT_ELBOW_WINDOW)]
    elbow_window: usize,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON plant spec; fields left out take their defaults.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, required = true)]
    corpus: Vec<PathBuf>,
    /// Token class split from `freq`; computed from the corpus when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = raretok::token_stats::DEFAULT_PERCENTILE)]
    percentile: f64,
    #[arg(long, visible_alias = "window", default_value_t = raretok::token_stats::DEFAULT_ELBOW_WINDOW)]
    elbow_window: usize,
}

#[derive(Args)]
struct RegimesArgs {
    /// `sweep.csv` or `sweep.json` written by `ablate`.
    #[arg(long)]
    sweep: PathBuf,
    #[arg(long, default_value = "rare")]
    class: SweepClass,
    /// Run config whose `[pipeline.regimes]` thresholds apply.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// TOML run config; flags given here take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    corpus: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    percentile: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    baselines: Option<usize>,
    #[arg(long)]
    spectral_weights: Option<Weights>,
    /// Comma-separated neuron indices; skips the sweep and segmentation.
    #[arg(long, value_delimiter = ',')]
    group: Option<Vec<usize>>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Weights {
    WIn,
    WOut,
}

#[derive(Args)]
struct ReportArgs {
    /// An existing report.json.
    #[arg(long)]
    report: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(&Error::new(Stage::Load, ErrorKind::Config(format!("--threads: {e}"))));
        }
    }
    let result = match cli.command {
        Command::Freq(a) => freq(a),
        Command::Synth(a) => synth(a),
        Command::Ablate(a) => ablate(a),
        Command::Regimes(a) => regimes(a),
        Command::Geometry(a) => run(a, Some(only(|s| s.geometry = true))),
        Command::Graph(a) => run(a, Some(only(|s| s.graph = true))),
        Command::Attention(a) => run(a, Some(only(|s| s.attention = true))),
        Command::Spectrum(a) => run(a, Some(only(|s| s.spectral = true))),
        Command::RunAll(a) => run(a, None),
        Command::Report(a) => reemit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

/// One JSON diagnostic line on stderr; exit 2 for configuration, 3 for
/// data and 4 for numerical failures.
fn fail(e: &Error) -> ExitCode {
    let (code, category) = match e.category() {
        ErrorCategory::Config => (2, "config"),
        ErrorCategory::Data => (3, "data"),
        ErrorCategory::Numerical => (4, "numerical"),
    };
    let mut diag = serde_json::json!({
        "stage": e.stage,
        "category": category,
        "code": code,
        "message": e.kind.to_string(),
    });
    if code == 4 {
        diag["estimator"] = serde_json::Value::String(format!("{:?}", e.kind));
    }
    eprintln!("error[{}]: {}", e.stage, e.kind);
    eprintln!("{diag}");
    if code == 2 {
        eprintln!("run `raretok --help` for usage");
    }
    ExitCode::from(code)
}

fn only(f: impl Fn(&mut AnalysisSet)) -> AnalysisSet {
    let mut s = AnalysisSet::none();
    f(&mut s);
    s
}

fn config_error(m: String) -> Error {
    Error::new(Stage::Load, ErrorKind::Config(m))
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

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

fn split_of(freq: &[u64], percentile: f64, window: usize) -> Result<TokenClassSplit, Error> {
    let elbow = detect_elbow(&sorted_log_frequency(freq), window).stage(Stage::Freq)?;
    split_classes(freq, elbow.rank, percentile).stage(Stage::Freq)
}

fn freq(a: FreqArgs) -> Result<(), Error> {
    let streams = a
        .corpus
        .iter()
        .map(|c| raretok::tensor_io::load_token_stream(c).stage(Stage::Load))
        .collect::<Result<Vec<_>, _>>()?;
    let stream = raretok::report::concat_streams(streams)?;
    let freq = count_frequencies(&stream, stream.vocab_size);
    let split = split_of(&freq, a.percentile, a.elbow_window)?;
    write(&a.out.join("split.json"), &pretty(&SplitFile::from(&split)))?;
    let mut csv = String::from("token,count,class\n");
    for (t, (&n, c)) in freq.iter().zip(&split.classes).enumerate() {
        csv.push_str(&format!(
            "{t},{n},{}\n",
            serde_json::to_value(c).expect("unit enum").as_str().expect("string tag")
        ));
    }
    write(&a.out.join("freq.csv"), &csv)?;
    println!(
        "elbow rank {}, rare threshold {}, {} rare / {} common / {} excluded tokens",
        split.elbow_rank,
        split.rare_threshold,
        split.count(raretok::token_stats::TokenClass::Rare),
        split.count(raretok::token_stats::TokenClass::Common),
        split.count(raretok::token_stats::TokenClass::Excluded)
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), Error> {
    let mut spec: PlantSpec = match &a.spec {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?
        }
        None => PlantSpec::default(),
    };
    spec.seed = a.seed;
    let planted = make_planted_bundle(&spec).stage(Stage::Synth)?;
    fs::create_dir_all(&a.out).map_err(|e| output_error(&a.out, e))?;
    planted.bundle.save(&a.out).stage(Stage::Report)?;
    planted.stream.save(&a.out.join("corpus.bin")).stage(Stage::Report)?;
    write(&a.out.join("plant.json"), &pretty(&planted.manifest))?;
    println!(
        "planted neurons {:?}; {} tokens, {} rare-target positions",
        planted.manifest.planted_neurons, planted.manifest.n_tokens, planted.manifest.rare_target_positions
    );
    Ok(())
}

fn sweep_csv(s: &AblationSweepResult) -> String {
    let mut csv = String::from("neuron_index,delta_loss_rare,delta_loss_common\n");
    for r in &s.records {
        csv.push_str(&format!("{},{},{}\n", r.neuron_index, fmt_f64(r.delta_loss_rare), fmt_f64(r.delta_loss_common)));
    }
    csv
}

fn ablate(a: AblateArgs) -> Result<(), Error> {
    let inputs = load_inputs(&a.model, &a.corpus)?;
    let split = match &a.split {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            let file: SplitFile = serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", p.display())))?;
            file.into_split().stage(Stage::Load)?
        }
        None => split_of(&count_frequencies(&inputs.stream, inputs.stream.vocab_size), a.percentile, a.elbow_window)?,
    };
    let model = Model::new(&inputs.bundle);
    let sweep = ablation_sweep(&model, &inputs.stream, &split).stage(Stage::Sweep)?;
    write(&a.out.join("sweep.json"), &pretty(&sweep))?;
    write(&a.out.join("sweep.csv"), &sweep_csv(&sweep))?;
    let c = sweep.class_sizes;
    println!(
        "{} neurons; {} rare / {} common target positions",
        sweep.records.len(),
        c.rare_positions,
        c.common_positions
    );
    Ok(())
}

fn read_sweep(path: &Path) -> Result<AblationSweepResult, Error> {
    let text = fs::read_to_string(path).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    if path.extension().is_some_and(|e| e == "json") {
        return serde_json::from_str(&text).map_err(|e| {
            Error::new(
                Stage::Load,
                ErrorKind::Output {
                    path: path.display().to_string(),
                    message: e.to_string(),
                },
            )
        });
    }
    let bad = |line: usize, m: &str| {
        Error::new(
            Stage::Load,
            ErrorKind::Output {
                path: path.display().to_string(),
                message: format!("line {line}: {m}"),
            },
        )
    };
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines.next().map(|(_, h)| h.split(',').collect()).unwrap_or_default();
    let col = |name: &str| header.iter().position(|h| *h == name).ok_or_else(|| bad(1, &format!("missing column {name}")));
    let (ci, cr, cc) = (col("neuron_index")?, col("delta_loss_rare")?, col("delta_loss_common")?);
    let mut records = Vec::new();
    for (i, line) in lines.filter(|(_, l)| !l.trim().is_empty()) {
        let f: Vec<&str> = line.split(',').collect();
        let get = |c: usize| f.get(c).copied().ok_or_else(|| bad(i + 1, "short row"));
        records.push(NeuronRecord {
            neuron_index: get(ci)?.trim().parse().map_err(|_| bad(i + 1, "neuron_index"))?,
            delta_loss_rare: get(cr)?.trim().parse().map_err(|_| bad(i + 1, "delta_loss_rare"))?,
            delta_loss_common: get(cc)?.trim().parse().map_err(|_| bad(i + 1, "delta_loss_common"))?,
        });
    }
    let sizes = ClassSizes {
        rare_positions: 0,
        common_positions: 0,
        excluded_positions: 0,
    };
    AblationSweepResult::from_records(records, sizes).stage(Stage::Load)
}

fn regimes(a: RegimesArgs) -> Result<(), Error> {
    let sweep = read_sweep(&a.sweep)?;
    let thresholds = match &a.config {
        Some(p) => RunConfig::load(p)?.pipeline.regimes,
        None => PipelineConfig::default().regimes,
    };
    let seg = segment_regimes(&sweep, a.class, &thresholds).stage(Stage::Regimes)?;
    if seg.has_plateau() {
        println!("plateau: ranks 1-{} ({} neurons)", seg.plateau_end_rank, seg.plateau_set.len());
    } else {
        println!("plateau: absent");
    }
    println!("power law: kappa {:.4}, ends at rank {}", seg.kappa, seg.powerlaw_end_rank);
    if let Some(out) = &a.out {
        write(&out.join(format!("regimes_{}.json", a.class.name())), &pretty(&seg))?;
    }
    Ok(())
}

fn run(a: RunArgs, analyses: Option<AnalysisSet>) -> Result<(), Error> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if a.model.is_some() {
        cfg.model = a.model.clone();
    }
    if !a.corpus.is_empty() {
        cfg.corpus = a.corpus.clone();
    }
    if a.out.is_some() {
        cfg.out = a.out.clone();
    }
    if a.seed.is_some() {
        cfg.seed = a.seed;
    }
    let p = &mut cfg.pipeline;
    if let Some(v) = a.percentile {
        p.percentile = v;
    }
    if let Some(v) = a.tau {
        p.tau = v;
    }
    if let Some(v) = a.bins {
        p.bins = v;
    }
    if let Some(v) = a.baselines {
        p.baselines = v;
    }
    if let Some(w) = a.spectral_weights {
        p.spectral_weights = match w {
            Weights::WIn => WeightChoice::WIn,
            Weights::WOut => WeightChoice::WOut,
        };
    }
    if let Some(s) = analyses {
        p.analyses = s;
    }
    let out = cfg.out.clone().ok_or_else(|| config_error("--out is required".into()))?;
    let resolved = cfg.resolve()?;
    let inputs = load_inputs(Path::new(&resolved.model), &cfg.corpus)?;
    let model = Model::new(&inputs.bundle);
    let results = raretok::pipelines::run_pipeline(&model, &inputs.stream, &resolved.pipeline, resolved.seed, a.group.as_deref())?;
    let report = Report::new(resolved, inputs.digests, results);
    let written = emit_report(&report, &out)?;
    summarize(&report);
    println!("wrote {} files under {}", written.len(), out.display());
    Ok(())
}

fn summarize(report: &Report) {
    let r = &report.results;
    if let Some(reg) = &r.regimes {
        for (name, s) in [("rare", &reg.rare), ("common", &reg.common)] {
            match s.plateau_end_rank {
                0 => println!("{name}: plateau absent, kappa {:.3}", s.kappa),
                k => println!("{name}: plateau ranks 1-{k}, kappa {:.3}", s.kappa),
            }
        }
    }
    for o in &r.robustness {
        println!("percentile {}: plateau overlap {:.2}", o.percentile, o.overlap);
    }
    if let Some(g) = &r.geometry {
        println!("geometry: d_eff ratio {:.3} vs random {:.3}", g.ratio.group_value, g.ratio.baseline_mean);
    }
    if let Some(g) = &r.graph {
        println!("graph: modularity {:.3} vs random {:.3}", g.modularity.group_value, g.modularity.baseline_mean);
    }
    if let Some(a) = &r.attention {
        let best = &a.head_impacts[a.most_influential];
        println!(
            "attention: top head impact {:.3}, all-heads composition exact {:?}",
            best.impact.group_value, a.all_heads_equals_composition
        );
    }
    if let Some(s) = &r.spectral {
        println!("spectrum: alpha_hill {:.3} vs random {:.3}", s.alpha.group_value, s.alpha.baseline_mean);
    }
    if report.partial_results {
        println!("partial results: missing {:?}", report.missing_analyses);
    }
}

fn reemit(a: ReportArgs) -> Result<(), Error> {
    let report = Report::load(&a.report)?;
    let written = emit_report(&report, &a.out)?;
    println!("wrote {} files under {}", written.len(), a.out.display());
    Ok(())
}
