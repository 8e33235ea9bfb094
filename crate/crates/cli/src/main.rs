use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use cid_core::challenger::{
    mutate_question, select_redundant_sentence, ChallengeKind, ChallengeQuestion, ExplanationRef, KnowledgeBase,
    MutationRelation, Stage,
};
use cid_core::config::{BackendKind, Config};
use cid_core::decider::{ablate, cross_validate, train, AblationSpec, CvReport, Dataset, DetectionModel, ModelKind};
use cid_core::gateway::Gateway;
use cid_core::par::Execution;
use cid_core::pipeline::{accumulate_kb, detect, run_benchmark, PipelineContext};
use cid_core::store::{
    export_features, read_benchmark, read_features_csv, read_versioned, to_canonical_json, LabelFile, Store, Versioned,
    RECORDS_DIR, REPORTS_DIR,
};

mod table;

#[derive(Parser, Debug)]
#[command(
    name = "cid",
    version,
    about = "Detect incorrect chat-model answers by challenging their explanations"
)]
struct Cli {
    /// Emit machine-readable JSON on stdout.
    #[arg(long, global = true)]
    json: bool,
    /// TOML configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set decider.l2=0.5`.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Svm,
    Lr,
}

impl From<KindArg> for ModelKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Svm => ModelKind::LinearSvm,
            KindArg::Lr => ModelKind::LogisticRegression,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    Basic,
    Mutated,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ChallengeArg {
    Why,
    How,
    Really,
}

impl From<ChallengeArg> for ChallengeKind {
    fn from(k: ChallengeArg) -> Self {
        match k {
            ChallengeArg::Why => ChallengeKind::Why,
            ChallengeArg::How => ChallengeKind::How,
            ChallengeArg::Really => ChallengeKind::Really,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Interrogate every entry of a benchmark file and store the records.
    Interrogate {
        #[arg(long)]
        input: PathBuf,
        /// Store root to write records, transcripts and the batch report to.
        #[arg(long)]
        out: PathBuf,
        /// Replay recorded transcripts from this directory instead of calling a backend.
        #[arg(long)]
        replay: Option<PathBuf>,
        /// Knowledge base for MR1 (overrides challenger.kb_path).
        #[arg(long)]
        kb: Option<PathBuf>,
        /// Run interrogations one at a time.
        #[arg(long)]
        sequential: bool,
    },
    /// Extract labeled feature rows from stored records.
    Features {
        /// Store root, or its records directory.
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a detection model on a features CSV.
    Train {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        model_kind: Option<KindArg>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// k-fold cross-validation on a features CSV.
    Evaluate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum)]
        model_kind: Option<KindArg>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Cross-validate with a stage or challenge kinds withheld.
    Ablate {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, value_enum, conflicts_with = "drop_kind")]
        drop_stage: Option<StageArg>,
        #[arg(long, value_enum)]
        drop_kind: Vec<ChallengeArg>,
        #[arg(long, value_enum)]
        model_kind: Option<KindArg>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Judge every explanation of a stored record.
    Detect {
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Mutate one question using a knowledge base.
    Mutate {
        #[arg(long)]
        question: String,
        #[arg(long)]
        kb: PathBuf,
        /// Clause joining the question and the redundant sentence.
        #[arg(long)]
        clause: Option<String>,
        /// MR2 peer questions; when given, MR2 is used.
        #[arg(long)]
        peer: Vec<String>,
    },
}

/// Misuse that clap cannot detect.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(out) => {
            let mut stdout = std::io::stdout().lock();
            if stdout.write_all(out.as_bytes()).is_err() {
                return ExitCode::from(2);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let base = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    base.with_overrides(&cli.set).map_err(|e| usage(e.to_string()))
}

fn run(cli: Cli) -> Result<String> {
    let mut config = load_config(&cli)?;
    let json = cli.json;
    match cli.command {
        Command::Interrogate {
            input,
            out,
            replay,
            kb,
            sequential,
        } => {
            if let Some(dir) = replay {
                config.backend.kind = BackendKind::Replay;
                config.backend.replay_dir = Some(dir);
                config.pipeline.fixed_clock = true;
            }
            if let Some(k) = kb {
                config.challenger.kb_path = Some(k);
            }
            config.validate()?;
            interrogate(&config, &input, &out, sequential, json)
        }
        Command::Features { records, labels, out } => features(&config, &records, &labels, &out, json),
        Command::Train {
            features,
            model_kind,
            out,
            seed,
        } => {
            apply_decider_flags(&mut config, model_kind, None, seed);
            let data = read_features_csv(&features)?;
            let model = train(&data, config.decider.model_kind, &config.decider.hyperparams())?;
            std::fs::write(&out, to_canonical_json(&Versioned::new(&model)))
                .with_context(|| format!("writing {}", out.display()))?;
            Ok(if json {
                to_canonical_json(&json!({
                    "model": out.display().to_string(),
                    "kind": model.kind,
                    "examples": data.len(),
                    "features": model.feature_names.len(),
                    "dropped_constant_features": model.scaler.dropped,
                }))
            } else {
                format!(
                    "trained {} on {} examples x {} features -> {}\n",
                    model.kind,
                    data.len(),
                    model.feature_names.len(),
                    out.display()
                )
            })
        }
        Command::Evaluate {
            features,
            model_kind,
            folds,
            seed,
        } => {
            apply_decider_flags(&mut config, model_kind, folds, seed);
            let data = read_features_csv(&features)?;
            let d = &config.decider;
            let report = cross_validate(
                &data,
                d.model_kind,
                &d.hyperparams(),
                d.folds,
                d.seed,
                Execution::default(),
            )?;
            Ok(if json {
                to_canonical_json(&report)
            } else {
                let mut s = cv_header(&report, &data);
                s.push_str(&table::metrics_table(&[(report.kind.to_string(), &report.metrics)]));
                s
            })
        }
        Command::Ablate {
            features,
            drop_stage,
            drop_kind,
            model_kind,
            folds,
            seed,
        } => {
            apply_decider_flags(&mut config, model_kind, folds, seed);
            let spec = match (drop_stage, drop_kind.is_empty()) {
                (Some(StageArg::Basic), _) => AblationSpec::DropStage(Stage::Basic),
                (Some(StageArg::Mutated), _) => AblationSpec::DropStage(Stage::Mutated),
                (None, false) => {
                    AblationSpec::DropKinds(drop_kind.into_iter().map(ChallengeKind::from).collect::<BTreeSet<_>>())
                }
                (None, true) => return Err(usage("ablate needs --drop-stage or --drop-kind")),
            };
            let data = read_features_csv(&features)?;
            let d = &config.decider;
            let hp = d.hyperparams();
            let full = ablate(
                &data,
                &AblationSpec::None,
                d.model_kind,
                &hp,
                d.folds,
                d.seed,
                Execution::default(),
            )?;
            let reduced = ablate(&data, &spec, d.model_kind, &hp, d.folds, d.seed, Execution::default())?;
            Ok(if json {
                to_canonical_json(&json!({
                    "baseline": {"features_used": full.retained.len(), "metrics": full.cv.metrics},
                    "ablation": {
                        "spec": reduced.spec,
                        "label": reduced.spec.to_string(),
                        "features_used": reduced.retained.len(),
                        "retained": reduced.retained,
                        "metrics": reduced.cv.metrics,
                    },
                    "kind": d.model_kind,
                    "folds": d.folds,
                    "seed": d.seed,
                }))
            } else {
                let mut s = format!(
                    "{} {}-fold CV, seed {}; {} features used ({})\n\n",
                    d.model_kind,
                    d.folds,
                    d.seed,
                    reduced.retained.len(),
                    reduced.spec
                );
                s.push_str(&table::metrics_table(&[
                    (format!("all challenges ({})", full.retained.len()), &full.cv.metrics),
                    (
                        format!("{} ({})", reduced.spec, reduced.retained.len()),
                        &reduced.cv.metrics,
                    ),
                ]));
                s
            })
        }
        Command::Detect { record, model } => {
            let root = store_root_of_record(&record)?;
            let store = Store::existing(root)?;
            let rec = store.load_record_file(&record)?;
            let model: Versioned<DetectionModel> = read_versioned(&model)?;
            model.body.validate()?;
            let embedder = config.build_embedder()?;
            let report = detect(&rec, &model.body, embedder.as_ref())?;
            Ok(if json {
                to_canonical_json(&report)
            } else {
                table::detection_table(&report)
            })
        }
        Command::Mutate {
            question,
            kb,
            clause,
            peer,
        } => {
            let embedder = config.build_embedder()?;
            let kb = KnowledgeBase::load(&kb, embedder.as_ref())?;
            let first = question.split_whitespace().next().unwrap_or_default();
            let kind = ChallengeKind::parse(first.trim_end_matches([',', '?'])).unwrap_or(ChallengeKind::Why);
            let parent = ExplanationRef {
                record_id: "cli".into(),
                index: 0,
            };
            let basic = ChallengeQuestion::basic(kind, question.trim(), parent.clone());
            let peers: Vec<ChallengeQuestion> = peer
                .iter()
                .map(|p| ChallengeQuestion::basic(kind, p.trim(), parent.clone()))
                .collect();
            let relation = if peers.is_empty() {
                MutationRelation::MR1
            } else {
                MutationRelation::MR2
            };
            let plan = config.challenger.plan();
            let clause = clause.unwrap_or_else(|| plan.clause_for(0, kind).to_string());
            let sel = select_redundant_sentence(&basic, relation, &kb, &peers, embedder.as_ref())?;
            let mutated = mutate_question(&basic, relation, &sel, &clause)?;
            let info = mutated
                .mutation_info
                .as_ref()
                .expect("mutated questions carry mutation info");
            Ok(if json {
                to_canonical_json(&json!({
                    "basic": basic.text,
                    "mutated": mutated.text,
                    "kind": kind,
                    "relation": info.relation,
                    "clause": info.clause,
                    "redundant_sentence": info.redundant_sentence,
                    "source_id": info.source_id,
                    "candidate_index": sel.candidate_index,
                }))
            } else {
                format!(
                    "{}\n\nrelation: {}\nclause: {}\nredundant: {}\nsource: {}\n",
                    mutated.text, info.relation, info.clause, info.redundant_sentence, info.source_id
                )
            })
        }
    }
}

fn apply_decider_flags(config: &mut Config, kind: Option<KindArg>, folds: Option<usize>, seed: Option<u64>) {
    if let Some(k) = kind {
        config.decider.model_kind = k.into();
    }
    if let Some(f) = folds {
        config.decider.folds = f;
    }
    if let Some(s) = seed {
        config.decider.seed = s;
    }
}

fn cv_header(report: &CvReport, data: &Dataset) -> String {
    let (correct, incorrect) = data.class_counts();
    format!(
        "{} {}-fold stratified CV, seed {}: {} examples ({} correct, {} incorrect), {} features\n\n",
        report.kind,
        report.k,
        report.seed,
        data.len(),
        correct,
        incorrect,
        report.feature_count
    )
}

/// `.../records/x.json` lives in the store rooted two levels up.
fn store_root_of_record(path: &Path) -> Result<PathBuf> {
    let dir = path
        .parent()
        .ok_or_else(|| anyhow!("{} has no parent directory", path.display()))?;
    if dir.file_name().is_some_and(|n| n == RECORDS_DIR) {
        Ok(dir.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf))
    } else {
        Err(anyhow!(
            "{} is not inside a store's {RECORDS_DIR}/ directory",
            path.display()
        ))
    }
}

fn interrogate(config: &Config, input: &Path, out: &Path, sequential: bool, json: bool) -> Result<String> {
    let entries = read_benchmark(input)?;
    let store = Store::open(out)?;
    let backend = config.build_backend()?;
    let gateway = Gateway::new(Arc::clone(&backend)).with_retry(config.retry_policy());
    let embedder = config.build_embedder()?;
    let kb = match &config.challenger.kb_path {
        Some(p) if p.exists() => KnowledgeBase::load(p, embedder.as_ref())?,
        Some(p) if !config.challenger.accumulate_kb => {
            return Err(anyhow!("knowledge base {} does not exist", p.display()))
        }
        _ => KnowledgeBase::new(),
    };
    if kb.is_empty() {
        log::warn!("knowledge base is empty; MR1 mutations will be skipped");
    }
    let ctx = PipelineContext {
        gateway: &gateway,
        embedder: embedder.as_ref(),
        kb: &kb,
        plan: config.challenger.plan(),
        params: config.generation_params(),
        enquiry_style: config.pipeline.enquiry_style,
        fixed_clock: config.pipeline.fixed_clock,
    };
    let exec = if sequential {
        Execution::Sequential
    } else {
        Execution::Parallel
    };
    let report = run_benchmark(&entries, &ctx, &store, config.pipeline.concurrency, exec);
    store.write_json(REPORTS_DIR, "batch", &report)?;
    if config.challenger.accumulate_kb {
        if let Some(p) = &config.challenger.kb_path {
            let records = store.load_all_records()?;
            let added = accumulate_kb(p, &records, embedder.as_ref())?;
            log::info!("added {added} sentences to {}", p.display());
        }
    }
    if report.failed > 0 {
        log::error!("{} of {} entries failed", report.failed, entries.len());
    }
    Ok(if json {
        to_canonical_json(&report)
    } else {
        table::batch_table(&report)
    })
}

fn features(config: &Config, records: &Path, labels: &Path, out: &Path, json: bool) -> Result<String> {
    let root = if records.file_name().is_some_and(|n| n == RECORDS_DIR) {
        records.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    } else {
        records.to_path_buf()
    };
    let store = Store::existing(root)?;
    let recs = store.load_all_records()?;
    let labels = LabelFile::read(labels)?;
    let embedder = config.build_embedder()?;
    let export = export_features(&recs, &labels, embedder.as_ref(), Execution::default())?;
    if export.examples.is_empty() {
        return Err(anyhow!("no labeled explanation produced a feature row"));
    }
    std::fs::write(out, export.to_csv()).with_context(|| format!("writing {}", out.display()))?;
    let (correct, incorrect) = Dataset::from_examples(&export.examples).class_counts();
    Ok(if json {
        to_canonical_json(&json!({
            "out": out.display().to_string(),
            "rows": export.examples.len(),
            "correct": correct,
            "incorrect": incorrect,
            "skipped": export.skipped,
            "unlabeled": export.unlabeled.iter().map(ToString::to_string).collect::<Vec<_>>(),
        }))
    } else {
        let mut s = format!(
            "{} rows ({correct} correct, {incorrect} incorrect) -> {}\n",
            export.examples.len(),
            out.display()
        );
        if !export.unlabeled.is_empty() {
            s.push_str(&format!("{} unlabeled explanations\n", export.unlabeled.len()));
        }
        for sk in &export.skipped {
            s.push_str(&format!("skipped {}: {}\n", sk.explanation_ref, sk.reason));
        }
        s
    })
}
