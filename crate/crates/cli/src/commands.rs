use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use hdsr::corpus::{
    corpus_hash, count_by_class, load_glyph_bank, load_string_corpus, read_manifest, scan_string_corpus, write_glyph_tree,
    write_manifest, write_string_tree,
};
use hdsr::metrics::comparison_table;
use hdsr::models::{predict, ArchSpec};
use hdsr::synthesis::{load_synthetic, plan_synthesis, write_synthetic};
use hdsr::training::Trainer;
use hdsr::{fixture, CorpusManifest, EvalReport, ModelBundle, Split, StringPrediction, StringSample, YearLabel};
use serde::Serialize;

use crate::plots;
use crate::settings::{default_arch_dir, fixture_seed, io_err, prepare_out, resolve, CliError, CliResult};
use crate::Global;

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Only these years (comma separated); default all 31.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<YearLabel>,
    /// Real training strings per class instead of the reference counts.
    #[arg(long)]
    real: Option<usize>,
    /// Test strings per class instead of the reference counts.
    #[arg(long)]
    test: Option<usize>,
    #[arg(long, default_value_t = 20)]
    glyphs_per_digit: usize,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Glyph bank directory (`<digit>/*.png`); default `<data-root>/glyphs`.
    #[arg(long)]
    glyphs: Option<PathBuf>,
    /// Real string crops (`{train,test}/<year>/`); default `<data-root>/strings`.
    #[arg(long)]
    strings: Option<PathBuf>,
    /// Check the real corpus against this manifest instead of counting it.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Training strings per class after top-up.
    #[arg(long)]
    per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Output of `synthesize` (manifest.csv and synthetic/).
    #[arg(long, default_value = "runs/synthesis")]
    corpus: PathBuf,
    /// Real string crops; default `<data-root>/strings`.
    #[arg(long)]
    strings: Option<PathBuf>,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Train for max-epochs regardless of validation loss.
    #[arg(long, conflicts_with = "patience")]
    no_early_stop: bool,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f32>,
    #[arg(long)]
    width_divisor: Option<usize>,
    /// Safetensors file with `features.N.*` trunk weights.
    #[arg(long)]
    pretrained: Option<PathBuf>,
    /// Freeze this many leading trunk convolutions.
    #[arg(long)]
    freeze_convs: Option<usize>,
    /// Keep only the first N training strings of each class.
    #[arg(long)]
    limit_per_class: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Bundle directory; default `runs/<arch>`.
    #[arg(long)]
    bundle: Option<PathBuf>,
    /// Real string crops; the `test/` split is scored.
    #[arg(long)]
    strings: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Evaluation reports (report.json).
    reports: Vec<PathBuf>,
    /// Row names, comma separated; default the architecture of each report.
    #[arg(long, value_delimiter = ',')]
    names: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    report: PathBuf,
    /// Number of digit confusions to list.
    #[arg(long, default_value_t = 10)]
    confusions: usize,
}

fn strings_root(global: &Global, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| global.data_root.join("strings"))
}

fn write_text(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn manifest_table(m: &CorpusManifest) -> String {
    let mut s = format!("{:<6} {:>9} {:>6} {:>6}\n", "Year", "Synthetic", "Real", "Test");
    for r in &m.rows {
        s += &format!("{:<6} {:>9} {:>6} {:>6}\n", r.label, r.synthetic, r.real, r.test);
    }
    let (syn, real, test) = m.totals();
    s += &format!("{:<6} {syn:>9} {real:>6} {test:>6}\n", "Total");
    s
}

pub fn fixture(global: &Global, args: FixtureArgs) -> CliResult {
    let out = global.out.clone().unwrap_or_else(|| global.data_root.clone());
    prepare_out(&out, global.force, &["strings", "glyphs"])?;
    let mut manifest = CorpusManifest::reference();
    if !args.classes.is_empty() {
        manifest = manifest.restrict(&args.classes);
    }
    for row in &mut manifest.rows {
        row.real = args.real.unwrap_or(row.real);
        row.test = args.test.unwrap_or(row.test);
    }
    let seed = fixture_seed(global);
    let samples = fixture::real_corpus(&manifest, seed)?;
    write_string_tree(&out.join("strings"), &samples)?;
    write_glyph_tree(&out.join("glyphs"), &fixture::glyph_bank(args.glyphs_per_digit, seed))?;
    println!("wrote {} string crops and {} glyphs per digit to {}", samples.len(), args.glyphs_per_digit, out.display());
    Ok(())
}

#[derive(Serialize)]
struct SynthesisRecord<'a> {
    corpus_hash: &'a str,
    config: &'a hdsr::SynthesisConfig,
    manifest_totals: (usize, usize, usize),
}

pub fn synthesize(global: &Global, args: SynthesizeArgs) -> CliResult {
    let mut resolved = resolve(global)?;
    if let Some(n) = args.per_class {
        resolved.synthesis.per_class_target = n;
    }
    let config = resolved.synthesis;
    let glyph_dir = args.glyphs.unwrap_or_else(|| global.data_root.join("glyphs"));
    let strings = strings_root(global, args.strings);
    let (bank, skipped) = load_glyph_bank(&glyph_dir)?;
    let (real, manifest) = match &args.manifest {
        Some(path) => {
            let manifest = read_manifest(path)?;
            (load_string_corpus(&strings, &manifest)?.0, manifest)
        }
        None => {
            let (real, _) = scan_string_corpus(&strings)?;
            let manifest = CorpusManifest::from_counts(&count_by_class(&real), config.per_class_target)?;
            (real, manifest)
        }
    };
    let plan = plan_synthesis(&real, &manifest, &config)?;

    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/synthesis"));
    prepare_out(&out, global.force, &["synthetic", "manifest.csv", "synthesis.json"])?;
    let summary = write_synthetic(&bank, &plan, &config, &out)?;
    write_manifest(&summary.manifest, &out.join("manifest.csv"))?;
    let record = SynthesisRecord { corpus_hash: &summary.corpus_hash, config: &config, manifest_totals: summary.manifest.totals() };
    write_json(&out.join("synthesis.json"), &record)?;

    if !skipped.skipped.is_empty() {
        println!("skipped {} unreadable glyph files", skipped.skipped.len());
    }
    print!("{}", manifest_table(&summary.manifest));
    let (syn, real_n, test) = summary.manifest.totals();
    println!("totals: {syn} / {real_n} / {test}");
    println!("corpus hash: {}", summary.corpus_hash);
    Ok(())
}

fn load_training_corpus(corpus: &Path, strings: &Path) -> CliResult<Vec<StringSample>> {
    let manifest_path = corpus.join("manifest.csv");
    if !manifest_path.is_file() {
        return Err(CliError::User(format!("{} not found; run `hdsr synthesize` first", manifest_path.display())));
    }
    let manifest = read_manifest(&manifest_path)?;
    let (real, _) = load_string_corpus(strings, &manifest)?;
    let (synthetic, _) = load_synthetic(&corpus.join("synthetic"))?;
    let mut diff = String::new();
    for row in &manifest.rows {
        let n = synthetic.iter().filter(|s| s.label == row.label).count();
        if n != row.synthetic {
            diff += &format!("  {}: {n} synthetic files (manifest {})\n", row.label, row.synthetic);
        }
    }
    if !diff.is_empty() {
        return Err(hdsr::Error::ManifestMismatch(diff).into());
    }
    let mut out: Vec<StringSample> = real.into_iter().filter(|s| s.split == Split::Train).collect();
    out.extend(synthetic.into_iter().filter(|s| manifest.row(s.label).is_some()));
    Ok(out)
}

fn limit_per_class(samples: Vec<StringSample>, limit: usize) -> Vec<StringSample> {
    let mut seen = BTreeMap::<YearLabel, usize>::new();
    samples
        .into_iter()
        .filter(|s| {
            let n = seen.entry(s.label).or_default();
            *n += 1;
            *n <= limit
        })
        .collect()
}

pub fn train(global: &Global, args: TrainArgs) -> CliResult {
    let resolved = resolve(global)?;
    let mut config = resolved.training;
    let mut model = resolved.model;
    if let Some(v) = args.max_epochs {
        config.max_epochs = v;
    }
    if let Some(v) = args.patience {
        config.patience = Some(v);
    }
    if args.no_early_stop {
        config.patience = None;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.freeze_convs {
        config.freeze_trunk_convs = v;
    }
    if let Some(v) = args.width_divisor {
        model.width_divisor = v;
    }
    if args.pretrained.is_some() {
        model.pretrained = args.pretrained;
    }
    config.validate()?;

    let mut corpus = load_training_corpus(&args.corpus, &strings_root(global, args.strings))?;
    if let Some(n) = args.limit_per_class {
        corpus = limit_per_class(corpus, n);
    }

    let out = global.out.clone().unwrap_or_else(|| default_arch_dir(global.arch));
    prepare_out(
        &out,
        global.force,
        &["metadata.json", "weights.safetensors", "last", "train_log.jsonl", "train_summary.json", "train_config.toml"],
    )?;
    let echo = toml::to_string(&TrainEcho { training: &config, model: &model }).map_err(|e| CliError::Internal(e.to_string()))?;
    println!("{echo}");
    write_text(&out.join("train_config.toml"), &echo)?;

    let mut bundle = ModelBundle::build(ArchSpec::new(global.arch).with_width_divisor(model.width_divisor), model.init_seed);
    if let Some(path) = &model.pretrained {
        let bytes = fs::read(path).map_err(|e| CliError::User(format!("{}: {e}", path.display())))?;
        let n = bundle.load_pretrained_trunk(&bytes)?;
        println!("loaded {n} pre-trained trunk tensors from {}", path.display());
    }
    println!("training {} on {} strings", global.arch, corpus.len());
    let result = Trainer::new(config)
        .on_epoch(|e| {
            println!(
                "epoch {:>3}  loss {:.4}  acc {:.3}  val_loss {:.4}  val_acc {:.3}  {:.1}s{}",
                e.epoch,
                e.loss,
                e.accuracy,
                e.val_loss,
                e.val_accuracy,
                e.seconds,
                if e.improved { "  *" } else { "" }
            )
        })
        .run(bundle, &corpus);
    let outcome = match result {
        Ok(o) => o,
        Err(hdsr::Error::Diverged { epoch, record }) => {
            record.write(&out)?;
            return Err(CliError::Internal(format!("training diverged at epoch {epoch}; partial log in {}", out.display())));
        }
        Err(e) => return Err(e.into()),
    };
    outcome.best.save(&out)?;
    outcome.last.save(&out.join("last"))?;
    outcome.record.write(&out)?;
    println!(
        "stopped at epoch {} ({:?}); best epoch {} with val_loss {:.4}; bundle in {}",
        outcome.record.stopped_epoch,
        outcome.record.stop_reason,
        outcome.record.best_epoch,
        outcome.record.best_val_loss,
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    training: &'a hdsr::TrainConfig,
    model: &'a crate::settings::ModelSettings,
}

pub fn evaluate(global: &Global, args: EvaluateArgs) -> CliResult {
    let bundle_dir = args.bundle.unwrap_or_else(|| default_arch_dir(global.arch));
    let bundle = ModelBundle::load(&bundle_dir)?;
    let (samples, _) = scan_string_corpus(&strings_root(global, args.strings))?;
    let test: Vec<StringSample> = samples.into_iter().filter(|s| s.split == Split::Test).collect();
    if test.is_empty() {
        return Err(CliError::User("the string corpus has no test split".into()));
    }
    let predictions: Vec<StringPrediction> = predict(&bundle, &test)
        .into_iter()
        .zip(&test)
        .map(|(p, s)| {
            p.unwrap_or_else(|e| {
                log::warn!("{}: {e}; scored as an empty prediction", s.source_id);
                StringPrediction { text: String::new(), per_position: None, confidence: 0.0, frame_probs: None, class_probs: None }
            })
        })
        .collect();
    let labels: Vec<YearLabel> = test.iter().map(|s| s.label).collect();
    let mut report = hdsr::evaluate(&predictions, &labels)?;
    report.arch = Some(bundle.arch());
    report.test_hash = Some(corpus_hash(&test));

    let out = global.out.clone().unwrap_or_else(|| bundle_dir.join("eval"));
    prepare_out(&out, global.force, &["report.json"])?;
    report.save(&out.join("report.json"))?;
    print!("{}", comparison_table(&[(bundle.arch().to_string(), &report)]));
    println!("T = {}  out-of-set predictions = {}  report: {}", report.count, report.out_of_set, out.join("report.json").display());
    Ok(())
}

fn report_name(r: &EvalReport, path: &Path) -> String {
    r.arch.map(|a| a.to_string()).unwrap_or_else(|| path.display().to_string())
}

pub fn compare(global: &Global, args: CompareArgs) -> CliResult {
    if args.reports.len() < 2 {
        return Err(CliError::User(format!("need at least two reports to compare, got {}", args.reports.len())));
    }
    if !args.names.is_empty() && args.names.len() != args.reports.len() {
        return Err(CliError::User(format!("{} names for {} reports", args.names.len(), args.reports.len())));
    }
    let reports: Vec<EvalReport> = args.reports.iter().map(|p| EvalReport::load(p)).collect::<Result<_, _>>()?;
    let names: Vec<String> = if args.names.is_empty() {
        reports.iter().zip(&args.reports).map(|(r, p)| report_name(r, p)).collect()
    } else {
        args.names
    };
    let mut text = String::new();
    let hashes: std::collections::BTreeSet<Option<&str>> = reports.iter().map(|r| r.test_hash.as_deref()).collect();
    if hashes.len() > 1 {
        text += "WARNING: reports were computed on different test sets; rows are not comparable\n\n";
    }
    let rows: Vec<(String, &EvalReport)> = names.iter().cloned().zip(reports.iter()).collect();
    text += &comparison_table(&rows);
    print!("{text}");

    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/compare"));
    prepare_out(&out, global.force, &["comparison.txt", plots::PER_CLASS, plots::DISTRIBUTION, plots::NLD])?;
    write_text(&out.join("comparison.txt"), &text)?;
    plots::write_all(&out, &rows)?;
    println!("plots written to {}", out.display());
    Ok(())
}

pub fn report(global: &Global, args: ReportArgs) -> CliResult {
    let r = EvalReport::load(&args.report)?;
    let name = report_name(&r, &args.report);
    let mut text = comparison_table(&[(name.clone(), &r)]);
    text += &format!("\nT = {}  micro F1 {:.1}  weighted F1 {:.1}  out-of-set {}\n\n", r.count, 100.0 * r.micro_f1, 100.0 * r.weighted_f1, r.out_of_set);
    text += &r.class_listing();
    let pairs = r.confusion_pairs(args.confusions);
    if !pairs.is_empty() {
        text += "\nposition  truth  predicted  count\n";
        for p in pairs {
            text += &format!("{:>8}  {:>5}  {:>9}  {:>5}\n", p.position + 1, p.truth, p.predicted, p.count);
        }
    }
    print!("{text}");
    let out = global.out.clone().unwrap_or_else(|| args.report.parent().unwrap_or(Path::new(".")).to_path_buf());
    let owned = ["report.txt", plots::PER_CLASS, plots::DISTRIBUTION, plots::NLD];
    for name in owned {
        if out.join(name).exists() && !global.force {
            return Err(CliError::User(format!("{} exists; pass --force to overwrite", out.join(name).display())));
        }
    }
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    write_text(&out.join("report.txt"), &text)?;
    plots::write_all(&out, &[(name, &r)])?;
    Ok(())
}
