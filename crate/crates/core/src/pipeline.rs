//! End-to-end pipeline: configuration, corpus loading, template inference and
//! per-document extraction.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::extract::{extract_document, Extraction};
use crate::fields::{predict_fields, FieldPrediction, FieldPredictionOptions};
use crate::labeling::{alignment_matrix, select_window, InferenceWindow, LabelAssignment, EPSILON};
use crate::model::DocumentStream;
use crate::oracle::{FieldOracle, HeuristicOracle, RemoteOracle};
use crate::solver::solve_exact_traced;
use crate::template::{infer_template, refine_fields, Template};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleMode {
    Heuristic,
    Remote,
}

/// What to do when no row prefix holds every predicted field twice.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowFallback {
    FullDocument,
    Fail,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub z: f64,
    pub oracle: OracleMode,
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
    /// Environment variable holding the remote oracle's API key.
    pub api_key_env: String,
    pub oracle_retries: u32,
    /// Score with the heuristic rule when the remote oracle fails.
    pub heuristic_fallback: bool,
    pub budget_ms: u64,
    pub window_fallback: WindowFallback,
    pub refine_fields: bool,
    /// Worker threads for per-document extraction; 0 uses every core.
    pub parallel: usize,
    pub seed: u64,
    /// Solver incumbent trace file.
    pub trace: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            epsilon: EPSILON,
            z: 1.96,
            oracle: OracleMode::Heuristic,
            endpoint: None,
            timeout_ms: 30_000,
            api_key_env: "TEMPLEX_API_KEY".into(),
            oracle_retries: 2,
            heuristic_fallback: false,
            budget_ms: 5_000,
            window_fallback: WindowFallback::FullDocument,
            refine_fields: false,
            parallel: 0,
            seed: 0,
            trace: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if self.z.is_nan() || self.z <= 0.0 {
            return bad("z must be positive");
        }
        if self.budget_ms == 0 {
            return bad("solver budget must be positive");
        }
        if self.timeout_ms == 0 {
            return bad("oracle timeout must be positive");
        }
        if self.oracle == OracleMode::Remote && self.endpoint.is_none() {
            return bad("remote oracle needs an endpoint");
        }
        Ok(())
    }

    pub fn budget(&self) -> Duration {
        Duration::from_millis(self.budget_ms)
    }

    pub fn build_oracle(&self) -> Result<Box<dyn FieldOracle>> {
        match self.oracle {
            OracleMode::Heuristic => Ok(Box::new(HeuristicOracle)),
            OracleMode::Remote => {
                let endpoint = self
                    .endpoint
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("remote oracle needs an endpoint".into()))?;
                let key = std::env::var(&self.api_key_env).ok();
                let oracle = RemoteOracle::new(endpoint, Duration::from_millis(self.timeout_ms), key)
                    .map_err(|e| Error::InvalidConfig(e.to_string()))?
                    .with_retries(self.oracle_retries);
                Ok(Box::new(oracle))
            }
        }
    }
}

/// Reads one phrase file, or every `*.jsonl` file of a directory in
/// lexicographic filename order.
pub fn load_corpus(path: &Path) -> Result<Vec<DocumentStream>> {
    let files = if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::file(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        files.sort();
        files
    } else {
        vec![path.to_path_buf()]
    };
    files
        .iter()
        .map(|f| {
            let id = f.file_stem().map_or_else(|| f.display().to_string(), |s| s.to_string_lossy().into_owned());
            let file = File::open(f).map_err(|e| Error::file(f, e))?;
            DocumentStream::from_jsonl(id, BufReader::new(file)).map_err(|e| match e {
                Error::Parse { line, message } => Error::Parse {
                    line,
                    message: format!("{}: {message}", f.display()),
                },
                other => other,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub prediction: FieldPrediction,
    pub window: InferenceWindow,
    pub labels: LabelAssignment,
    pub template: Template,
}

fn label_window(
    corpus: &DocumentStream,
    fields: &crate::fields::FieldSet,
    cfg: &PipelineConfig,
) -> Result<(InferenceWindow, LabelAssignment)> {
    let window = select_window(&corpus.rows, fields);
    if window.fallback && cfg.window_fallback == WindowFallback::Fail {
        return Err(Error::NoStructure);
    }
    let probs = window.probabilities_with(fields, cfg.epsilon);
    let a = alignment_matrix(&window);
    let mut trace_file = match &cfg.trace {
        Some(p) => Some(File::create(p).map_err(|e| Error::file(p, e))?),
        None => None,
    };
    let trace = trace_file.as_mut().map(|f| f as &mut dyn std::io::Write);
    let labels = solve_exact_traced(&probs, &a, cfg.budget(), trace);
    if !labels.optimal {
        log::warn!("row labeling hit its time budget; using the best assignment found");
    }
    Ok((window, labels))
}

/// Predicts fields, labels the inference window and builds the template.
pub fn infer(corpus: &DocumentStream, oracle: &dyn FieldOracle, cfg: &PipelineConfig) -> Result<Inference> {
    let opts = FieldPredictionOptions {
        z: cfg.z,
        heuristic_fallback: cfg.heuristic_fallback,
    };
    let mut prediction = predict_fields(corpus, oracle, opts)?;
    log::info!("predicted {} fields", prediction.fields.len());
    let (mut window, mut labels) = label_window(corpus, &prediction.fields, cfg)?;
    if cfg.refine_fields {
        let refined = refine_fields(&window, &labels, &prediction.fields);
        if refined != prediction.fields {
            log::info!("refinement dropped {} fields", prediction.fields.len() - refined.len());
            prediction.fields = refined;
            (window, labels) = label_window(corpus, &prediction.fields, cfg)?;
        }
    }
    let template = infer_template(&window, &labels, &prediction.fields)?;
    Ok(Inference {
        prediction,
        window,
        labels,
        template,
    })
}

fn pool(parallel: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))
}

/// Extracts every document with a fixed template, in input order.
pub fn extract_all(docs: &[DocumentStream], template: &Template, cfg: &PipelineConfig) -> Result<Vec<Result<Extraction>>> {
    Ok(pool(cfg.parallel)?.install(|| docs.par_iter().map(|d| extract_document(d, template)).collect()))
}

/// Infers a template over the concatenated corpus, then extracts each document.
pub fn run(docs: &[DocumentStream], oracle: &dyn FieldOracle, cfg: &PipelineConfig) -> Result<(Inference, Vec<Result<Extraction>>)> {
    let corpus = DocumentStream::concat("corpus", docs);
    let inference = infer(&corpus, oracle, cfg)?;
    let out = extract_all(docs, &inference.template, cfg)?;
    Ok((inference, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{flatten_extraction, generate, random_spec, score, Shape};

    #[test]
    fn config_defaults_and_validation() {
        let cfg = PipelineConfig::from_json("{}").unwrap();
        assert_eq!(cfg, PipelineConfig::default());
        assert!(PipelineConfig::from_json(r#"{"epsilon": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"budget_ms": 0}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"oracle": "remote"}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"bogus": 1"#).is_err());
    }

    #[test]
    fn round_trip_on_a_small_corpus() {
        let spec = random_spec(Shape::Medium, 1, 6);
        let docs = generate(&spec).unwrap();
        let streams: Vec<DocumentStream> = docs.iter().map(|d| d.stream.clone()).collect();
        let (inf, out) = run(&streams, &HeuristicOracle, &PipelineConfig::default()).unwrap();
        assert_eq!(inf.template, spec.template);
        let pred = flatten_extraction(out[0].as_ref().unwrap());
        let r = score(&pred, &docs[0].truth.pairs);
        assert_eq!((r.precision, r.recall), (1.0, 1.0));
    }

    #[test]
    fn load_corpus_orders_files() {
        let dir = tempfile::tempdir().unwrap();
        let line = r#"{"text":"A","index":1,"page":1,"bbox":[0,0,10,10]}"#;
        fs::write(dir.path().join("b.jsonl"), line).unwrap();
        fs::write(dir.path().join("a.jsonl"), line).unwrap();
        fs::write(dir.path().join("a.truth.json"), "{}").unwrap();
        let docs = load_corpus(dir.path()).unwrap();
        let ids: Vec<&str> = docs.iter().map(|d| d.source_id.as_str()).collect();
        assert_eq!(ids, ["a", "b"]);
        fs::write(dir.path().join("c.jsonl"), "{\n").unwrap();
        assert!(matches!(load_corpus(dir.path()), Err(Error::Parse { line: 1, .. })));
    }
}
