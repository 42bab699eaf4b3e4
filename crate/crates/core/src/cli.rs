//! Command-line front end. Settings come from flags, then the `--config` file,
//! then defaults. Logs go to stderr; artifacts go to `--out` or stdout.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::extract::Extraction;
use crate::harness::{flatten_extraction, generate, score, DatasetReport, DocumentScore, GeneratorSpec, GroundTruth};
use crate::model::DocumentStream;
use crate::pipeline::{extract_all, infer, load_corpus, OracleMode, PipelineConfig};
use crate::template::Template;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 1;
pub const EXIT_PIPELINE: u8 = 2;

const EXTRACTION_SUFFIX: &str = ".extraction.json";
const TRUTH_SUFFIX: &str = ".truth.json";

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum OracleArg {
    Heuristic,
    Remote,
}

impl From<OracleArg> for OracleMode {
    fn from(o: OracleArg) -> Self {
        match o {
            OracleArg::Heuristic => OracleMode::Heuristic,
            OracleArg::Remote => OracleMode::Remote,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "templex", version, about = "Infer document templates and extract records")]
pub struct Cli {
    /// JSON pipeline configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub oracle: Option<OracleArg>,
    /// Remote oracle URL.
    #[arg(long, global = true)]
    pub endpoint: Option<String>,
    #[arg(long, global = true)]
    pub timeout_ms: Option<u64>,
    /// Row labeling time budget.
    #[arg(long, global = true)]
    pub budget_ms: Option<u64>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file, or directory for `extract` and `synth`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extraction worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub parallel: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the predicted field texts, one per line.
    Fields { input: PathBuf },
    /// Infer and print the template.
    Template { input: PathBuf },
    /// Extract records from every document of a file or directory.
    Extract {
        input: PathBuf,
        /// Reuse a stored template instead of inferring one.
        #[arg(long)]
        template: Option<PathBuf>,
    },
    /// Score extraction outputs against ground truth.
    Eval {
        /// An extraction file or a directory of `*.extraction.json` files.
        extraction: PathBuf,
        /// A truth file or a directory of `*.truth.json` files.
        #[arg(long)]
        truth: PathBuf,
    },
    /// Generate a synthetic corpus with ground truth.
    Synth { spec: PathBuf },
}

impl Cli {
    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        if let Some(o) = self.oracle {
            cfg.oracle = o.into();
        }
        if let Some(e) = &self.endpoint {
            cfg.endpoint = Some(e.clone());
        }
        if let Some(t) = self.timeout_ms {
            cfg.timeout_ms = t;
        }
        if let Some(b) = self.budget_ms {
            cfg.budget_ms = b;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(p) = self.parallel {
            cfg.parallel = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .target(env_logger::Target::Stderr)
        .try_init();
    run(&cli)
}

pub fn run(cli: &Cli) -> u8 {
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    if e.is_validation() {
        EXIT_VALIDATION
    } else {
        EXIT_PIPELINE
    }
}

fn emit(out: Option<&Path>, content: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, content).map_err(|e| Error::file(p, e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(content.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

fn execute(cli: &Cli) -> Result<u8> {
    let out = cli.out.as_deref();
    match &cli.command {
        Command::Fields { input } => {
            let cfg = cli.pipeline_config()?;
            let corpus = DocumentStream::concat("corpus", &load_corpus(input)?);
            let oracle = cfg.build_oracle()?;
            let prediction = crate::fields::predict_fields(
                &corpus,
                oracle.as_ref(),
                crate::fields::FieldPredictionOptions {
                    z: cfg.z,
                    heuristic_fallback: cfg.heuristic_fallback,
                },
            )?;
            let text: String = prediction.fields.iter().map(|f| format!("{f}\n")).collect();
            emit(out, &text)?;
            Ok(EXIT_OK)
        }
        Command::Template { input } => {
            let cfg = cli.pipeline_config()?;
            let corpus = DocumentStream::concat("corpus", &load_corpus(input)?);
            let oracle = cfg.build_oracle()?;
            let inference = infer(&corpus, oracle.as_ref(), &cfg)?;
            for warning in inference.template.lint() {
                log::warn!("{warning}");
            }
            emit(out, &(inference.template.to_json()? + "\n"))?;
            Ok(EXIT_OK)
        }
        Command::Extract { input, template } => {
            let cfg = cli.pipeline_config()?;
            let docs = load_corpus(input)?;
            let template = match template {
                Some(p) => Template::from_json(&read(p)?)?,
                None => {
                    let corpus = DocumentStream::concat("corpus", &docs);
                    let oracle = cfg.build_oracle()?;
                    infer(&corpus, oracle.as_ref(), &cfg)?.template
                }
            };
            let results = extract_all(&docs, &template, &cfg)?;
            write_extractions(&docs, results, out)
        }
        Command::Eval { extraction, truth } => {
            let report = evaluate(extraction, truth)?;
            match out {
                Some(p) => emit(Some(p), &(serde_json::to_string_pretty(&report)? + "\n"))?,
                None => emit(None, &report.to_table())?,
            }
            Ok(EXIT_OK)
        }
        Command::Synth { spec } => {
            let mut spec = GeneratorSpec::from_json(&read(spec)?)?;
            if let Some(s) = cli.seed {
                spec.seed = s;
            }
            let dir = out.unwrap_or(Path::new("corpus"));
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            for doc in generate(&spec)? {
                let id = &doc.stream.source_id;
                let mut buf = Vec::new();
                doc.stream.write_jsonl(&mut buf)?;
                let p = dir.join(format!("{id}.jsonl"));
                fs::write(&p, buf).map_err(|e| Error::file(&p, e))?;
                let p = dir.join(format!("{id}{TRUTH_SUFFIX}"));
                fs::write(&p, doc.truth.to_json()? + "\n").map_err(|e| Error::file(&p, e))?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// One `<id>.extraction.json` per document under `out`, or a JSON object keyed
/// by document id on stdout. Failed documents are reported and skipped.
fn write_extractions(docs: &[DocumentStream], results: Vec<Result<Extraction>>, out: Option<&Path>) -> Result<u8> {
    let mut code = EXIT_OK;
    let mut ok = BTreeMap::new();
    for (doc, r) in docs.iter().zip(results) {
        match r {
            Ok(ex) => {
                ok.insert(doc.source_id.clone(), ex);
            }
            Err(e) => {
                eprintln!("error: {}: {e}", doc.source_id);
                code = code.max(exit_code(&e));
            }
        }
    }
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
            for (id, ex) in &ok {
                let p = dir.join(format!("{id}{EXTRACTION_SUFFIX}"));
                fs::write(&p, ex.to_json()? + "\n").map_err(|e| Error::file(&p, e))?;
            }
        }
        None => emit(None, &(serde_json::to_string_pretty(&ok)? + "\n"))?,
    }
    Ok(code)
}

fn strip_suffix(path: &Path, suffix: &str) -> Option<String> {
    path.file_name()?.to_str()?.strip_suffix(suffix).map(str::to_string)
}

fn files_with_suffix(dir: &Path, suffix: &str) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let p = entry?.path();
        if let Some(id) = strip_suffix(&p, suffix) {
            out.insert(id, p);
        }
    }
    Ok(out)
}

/// Scores every truth document; a document with no extraction scores as an
/// empty prediction.
pub fn evaluate(extraction: &Path, truth: &Path) -> Result<DatasetReport> {
    let pairs: Vec<(String, PathBuf, Option<PathBuf>)> = if truth.is_dir() {
        let found = if extraction.is_dir() {
            files_with_suffix(extraction, EXTRACTION_SUFFIX)?
        } else {
            BTreeMap::new()
        };
        files_with_suffix(truth, TRUTH_SUFFIX)?
            .into_iter()
            .map(|(id, t)| {
                let e = found.get(&id).cloned();
                (id, t, e)
            })
            .collect()
    } else {
        let id = strip_suffix(truth, TRUTH_SUFFIX).unwrap_or_else(|| truth.display().to_string());
        vec![(id, truth.to_path_buf(), Some(extraction.to_path_buf()))]
    };
    let mut documents = Vec::with_capacity(pairs.len());
    for (id, t, e) in pairs {
        let truth = GroundTruth::from_json(&read(&t)?)?;
        let predicted = match e {
            Some(p) => flatten_extraction(&Extraction::from_json(&read(&p)?)?),
            None => {
                log::warn!("{id}: no extraction output");
                Vec::new()
            }
        };
        let r = score(&predicted, &truth.pairs);
        documents.push(DocumentScore {
            document: id,
            precision: r.precision,
            recall: r.recall,
        });
    }
    Ok(DatasetReport::from_documents(documents))
}
