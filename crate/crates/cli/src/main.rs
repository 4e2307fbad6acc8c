mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use chatcbm_core::eval::{check_golden_fixtures, evaluate_split, format_cell, Curve, EvalOptions};
use chatcbm_core::intervention::{
    ratio_intervention_curve, run_auto_intervention, AutoSettings, ScriptedAssistant,
};
use chatcbm_core::io::{fill_cosine_activations, load_bank, load_class_table, load_embeddings, load_priors, load_records};
use chatcbm_core::knowledge::{
    build_prior_avg_concept, build_prior_class_level, build_prior_group_frequency, build_prior_top_frequency,
};
use chatcbm_core::{
    train_probe, ActivationRecordF64, Backend, ClassRoster, ConceptPath, Dataset, EmbeddingKind, Error,
    PipelineConfig, PipelineF64, PriorTable, ProbeModelF64, SemanticsRule, Split, StubBackend,
};
use chatcbm_remote::{RemoteBackend, RemoteConfig};
use clap::{Parser, Subcommand, ValueEnum};
use config::{BackendKind, Common, Settings};

#[derive(Parser)]
#[command(name = "chatcbm", version, about = "Concept-bottleneck classification with a language-model label predictor")]
struct Cli {
    /// TOML file with defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorMethod {
    AvgConcept,
    GroupFrequency,
    TopFrequency,
    ClassLevel,
}

#[derive(Clone, Copy, ValueEnum)]
enum AssistantKind {
    Scripted,
    Backend,
}

#[derive(Subcommand)]
enum Command {
    /// Train the candidate probe on the train split and save it to --out.
    TrainProbe {
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Classify test records (or one record) and print JSON lines.
    Predict {
        #[arg(long)]
        example: Option<String>,
    },
    /// Accuracy over the test split, mean and std across --seeds.
    Evaluate {
        /// Retrain the probe for every seed.
        #[arg(long)]
        retrain_probe: bool,
        #[arg(long, default_value_t = 0.1)]
        max_failure_rate: f64,
    },
    /// Accuracy as a growing share of concepts is set to ground truth.
    InterveneCurve {
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        ratios: Vec<f64>,
        /// Intervene on whole concept groups instead of single concepts.
        #[arg(long)]
        groups: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Let an assistant intervene on each test record; writes a steps curve.
    AutoIntervene {
        #[arg(long, default_value_t = 5)]
        budget: usize,
        #[arg(long, value_enum, default_value = "scripted")]
        assistant: AssistantKind,
        /// Per-step trajectory export as JSON lines.
        #[arg(long)]
        trajectories: Option<PathBuf>,
    },
    /// Build class priors from the train (or val) split.
    BuildPriors {
        #[arg(long, value_enum, default_value = "avg-concept")]
        method: PriorMethod,
        #[arg(long, default_value_t = 0.5)]
        threshold: f64,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        /// `class,bit,...` table for the class-level method.
        #[arg(long)]
        class_table: Option<PathBuf>,
    },
    /// Validate the curve fixtures listed in DIR/fixtures.json.
    CheckFixtures {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the session service over the test split.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Write live sessions here as JSON lines on shutdown.
        #[arg(long)]
        export: Option<PathBuf>,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Backend(String),
    Fixture(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Validation(_) => 1,
            Self::Backend(_) => 2,
            Self::Fixture(_) => 3,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Backend(_) => Self::Backend(e.to_string()),
            Error::Fixture { .. } => Self::Fixture(e.to_string()),
            Error::Validation(ref report) => {
                let mut msg = e.to_string();
                for v in report.violations.iter().take(20) {
                    let _ = write!(msg, "\n  {}: {:?}", v.example_id, v.kind);
                }
                Self::Validation(msg)
            }
            other => Self::Validation(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::Validation(e.to_string())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn need<'a, T>(v: &'a Option<T>, flag: &str) -> Outcome<&'a T> {
    v.as_ref()
        .ok_or_else(|| Failure::Validation(format!("--{flag} is required")))
}

/// Loaded dataset plus the semantics rule its activations call for.
struct Loaded {
    data: Dataset<f64>,
    path: ConceptPath,
}

fn load_dataset(c: &Common, roster: Option<ClassRoster>) -> Outcome<Loaded> {
    let bank = load_bank(need(&c.bank, "bank")?)?;
    let mut records: Vec<ActivationRecordF64> = load_records(need(&c.activations, "activations")?)?;
    let path = match (&c.embeddings, &c.concept_embeddings) {
        (Some(img), Some(con)) => {
            let images = load_embeddings(img, EmbeddingKind::Image)?;
            let concepts = load_embeddings(con, EmbeddingKind::Concept)?;
            fill_cosine_activations(&mut records, &images, &concepts, &bank)?;
            ConceptPath::Unsupervised
        }
        (None, None) => ConceptPath::Supervised,
        _ => {
            return Err(Failure::Validation(
                "--embeddings and --concept-embeddings go together".into(),
            ))
        }
    };
    let roster = match roster {
        Some(r) => r,
        None => ClassRoster::from_labels(records.iter().map(|r| r.label.as_str()))?,
    };
    Ok(Loaded {
        data: Dataset::new(bank, roster, path, records)?,
        path,
    })
}

fn load_probe(c: &Common) -> Outcome<ProbeModelF64> {
    let path = c.probe.as_ref().ok_or_else(|| {
        Failure::Validation("--probe is required; create one with `chatcbm train-probe`".into())
    })?;
    Ok(ProbeModelF64::load(path)?)
}

fn build_pipeline(s: &Settings) -> Outcome<(PipelineF64, Loaded)> {
    let c = &s.common;
    let probe = load_probe(c)?;
    let loaded = load_dataset(c, Some(probe.class_names.clone()))?;
    let d = &loaded.data;
    let priors = match &c.priors {
        Some(p) => Some(load_priors(p, &d.roster, Some(&d.bank))?),
        None => None,
    };
    let defaults = PipelineConfig::default();
    let mut generation = s.generation.clone();
    if let Some(m) = &c.model {
        generation.model_name = m.clone();
    }
    let config = PipelineConfig {
        n_candidates: c.n_candidates.unwrap_or(defaults.n_candidates),
        k_shots: c.k_shots.unwrap_or(defaults.k_shots),
        use_priors: priors.is_some(),
        rule: SemanticsRule::for_path(loaded.path),
        generation,
        ..defaults
    };
    let pipeline = PipelineF64::new(
        d.bank.clone(),
        d.roster.clone(),
        probe,
        priors,
        d.split(Split::Val),
        config,
    )?;
    Ok((pipeline, loaded))
}

fn backend(c: &Common) -> Outcome<Arc<dyn Backend>> {
    match c.backend.unwrap_or(BackendKind::Stub) {
        BackendKind::Stub => Ok(Arc::new(StubBackend)),
        BackendKind::Remote => {
            let base = need(&c.base_url, "base-url")?;
            let config = RemoteConfig {
                model: c.model.clone(),
                ..RemoteConfig::new(base.clone())
            };
            RemoteBackend::new(config)
                .map(|b| Arc::new(b) as Arc<dyn Backend>)
                .map_err(|e| Failure::Backend(e.to_string()))
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Outcome {
    match out {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn test_split(d: &Dataset<f64>) -> Outcome<Vec<ActivationRecordF64>> {
    let test = d.split(Split::Test);
    if test.is_empty() {
        return Err(Failure::Validation("no test records".into()));
    }
    Ok(test)
}

fn priors_json(table: &PriorTable) -> serde_json::Value {
    let map: serde_json::Map<String, serde_json::Value> = table
        .priors()
        .iter()
        .map(|p| {
            (
                p.class_name.clone(),
                serde_json::json!({"description": p.description, "concepts": p.concepts}),
            )
        })
        .collect();
    serde_json::Value::Object(map)
}

fn run(cli: Cli) -> Outcome {
    let s = Settings::resolve(cli.common, cli.config.as_deref()).map_err(Failure::Validation)?;
    let c = &s.common;
    let out = c.out.as_deref();
    match cli.command {
        Command::TrainProbe {
            epochs,
            learning_rate,
            batch_size,
            seed,
        } => {
            let out = need(&c.out, "out")?;
            let loaded = load_dataset(c, None)?;
            let d = &loaded.data;
            let cfg = chatcbm_core::TrainConfig {
                epochs: epochs.unwrap_or(s.train.epochs),
                learning_rate: learning_rate.unwrap_or(s.train.learning_rate),
                batch_size: batch_size.unwrap_or(s.train.batch_size),
                seed: seed.unwrap_or(s.train.seed),
                ..s.train.clone()
            };
            let probe = train_probe(&d.split(Split::Train), &d.roster, &cfg)?;
            probe.save(out)?;
            let test = d.split(Split::Test);
            if !test.is_empty() {
                let n = c.n_candidates.unwrap_or(PipelineConfig::default().n_candidates);
                println!(
                    "test top-1 {:.4}  top-{n} {:.4}",
                    probe.top_n_accuracy(&test, 1)?,
                    probe.top_n_accuracy(&test, n)?
                );
            }
            log::info!("probe {} written to {}", probe.fingerprint(), out.display());
        }
        Command::Predict { example } => {
            let (pipeline, loaded) = build_pipeline(&s)?;
            let be = backend(c)?;
            let records = match example {
                Some(id) => vec![loaded
                    .data
                    .find(&id)
                    .cloned()
                    .ok_or_else(|| Failure::Validation(format!("no example `{id}`")))?],
                None => test_split(&loaded.data)?,
            };
            let mut text = String::new();
            for r in &records {
                let o = pipeline.classify_activations(&r.activations, be.as_ref(), None)?;
                let line = serde_json::json!({
                    "example_id": r.example_id,
                    "label": r.label,
                    "predicted": o.predicted,
                    "parse_ok": o.parsed.parse_ok,
                    "raw": o.parsed.raw,
                });
                text.push_str(&line.to_string());
                text.push('\n');
            }
            emit(out, &text)?;
        }
        Command::Evaluate {
            retrain_probe,
            max_failure_rate,
        } => {
            let seeds = need(&c.seeds, "seeds")?;
            let (pipeline, loaded) = build_pipeline(&s)?;
            let be = backend(c)?;
            let options = EvalOptions {
                retrain_probe: retrain_probe.then(|| s.train.clone()),
                max_failure_rate,
            };
            let report = evaluate_split(
                &pipeline,
                &loaded.data.split(Split::Train),
                &test_split(&loaded.data)?,
                be.as_ref(),
                seeds,
                &options,
            )?;
            for r in &report.per_seed {
                println!("seed {:>4}  {:.4}  ({}/{})", r.seed, r.accuracy, r.correct, r.total);
            }
            println!("accuracy {}", format_cell(report.mean, report.std));
            if let Some(p) = out {
                fs::write(p, serde_json::to_string_pretty(&report).expect("report serializes"))?;
            }
            if let Some(why) = report.aborted {
                return Err(Failure::Backend(format!("evaluation aborted: {why}")));
            }
        }
        Command::InterveneCurve { ratios, groups, seed } => {
            let (pipeline, loaded) = build_pipeline(&s)?;
            let be = backend(c)?;
            let group_ids = if groups { Some(pipeline.bank().groups()?) } else { None };
            let points = ratio_intervention_curve(
                &test_split(&loaded.data)?,
                &pipeline,
                be.as_ref(),
                &ratios,
                seed,
                group_ids.as_deref(),
            )?;
            emit(out, &Curve::Ratio(points).to_csv())?;
        }
        Command::AutoIntervene {
            budget,
            assistant,
            trajectories,
        } => {
            let (pipeline, loaded) = build_pipeline(&s)?;
            let be = backend(c)?;
            let helper: Arc<dyn Backend> = match assistant {
                AssistantKind::Scripted => Arc::new(ScriptedAssistant),
                AssistantKind::Backend => Arc::clone(&be),
            };
            let settings = AutoSettings {
                budget,
                ..AutoSettings::default()
            };
            let test = test_split(&loaded.data)?;
            let mut hits = vec![0usize; budget + 1];
            let mut export = String::new();
            for r in &test {
                let mut session = pipeline.new_session(r.example_id.clone(), r.activations.clone())?;
                let outcome = run_auto_intervention(
                    &mut session,
                    &pipeline,
                    be.as_ref(),
                    helper.as_ref(),
                    &r.label,
                    settings,
                )?;
                for (k, h) in hits.iter_mut().enumerate() {
                    *h += usize::from(outcome.correct_after(k));
                }
                for step in &outcome.steps {
                    let line = serde_json::json!({"example_id": r.example_id, "label": r.label, "step": step});
                    export.push_str(&line.to_string());
                    export.push('\n');
                }
            }
            if let Some(p) = trajectories {
                fs::write(p, export)?;
            }
            let curve = Curve::Steps(hits.iter().map(|&h| h as f64 / test.len() as f64).collect());
            emit(out, &curve.to_csv())?;
        }
        Command::BuildPriors {
            method,
            threshold,
            top_k,
            class_table,
        } => {
            let loaded = load_dataset(c, None)?;
            let d = &loaded.data;
            let table = match method {
                PriorMethod::AvgConcept => {
                    build_prior_avg_concept(&d.split(Split::Train), &d.bank, &d.roster, threshold)?
                }
                PriorMethod::GroupFrequency => {
                    build_prior_group_frequency(&d.split(Split::Train), &d.bank, &d.roster)?
                }
                PriorMethod::TopFrequency => build_prior_top_frequency(
                    &d.split(Split::Val),
                    &d.bank,
                    &d.roster,
                    top_k,
                    &SemanticsRule::for_path(loaded.path),
                )?,
                PriorMethod::ClassLevel => {
                    let t = load_class_table(need(&class_table, "class-table")?)?;
                    build_prior_class_level(&t, &d.bank, &d.roster)?
                }
            };
            let mut text = serde_json::to_string_pretty(&priors_json(&table)).expect("priors serialize");
            text.push('\n');
            emit(out, &text)?;
        }
        Command::CheckFixtures { dir } => {
            let report = check_golden_fixtures(&dir)?;
            let mut bad = 0;
            for r in &report.results {
                if r.ok {
                    println!("ok    {} ({} rows)", r.file, r.rows);
                } else {
                    bad += 1;
                    println!("FAIL  {}: {}", r.file, r.problems.join("; "));
                }
            }
            if bad > 0 {
                return Err(Failure::Fixture(format!("{bad} fixture(s) failed")));
            }
        }
        Command::Serve { addr, export } => {
            let (pipeline, loaded) = build_pipeline(&s)?;
            let be = backend(c)?;
            let app = chatcbm_service::AppState::new(pipeline, loaded.data.split(Split::Test), be);
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(chatcbm_service::serve(app, addr, export.as_deref()))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(m) | Failure::Backend(m) | Failure::Fixture(m)) = &f;
            eprintln!("error: {m}");
            ExitCode::from(f.code())
        }
    }
}
