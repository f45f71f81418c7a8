use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use anyhow::anyhow;
use drae_core::harness::{prototype_corpus, StreamConfig, TaskStream};
use drae_core::prag::Corpus;
use drae_core::trainer::{DraeSystem, SystemConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::{Classify, CliError, CliResult};

/// Where the retrieval corpus comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CorpusSource {
    /// Unit-norm class-mean documents of the stream plus random distractors.
    Prototypes { noise_docs: usize },
    /// JSONL file; relative paths resolve against the config file's directory.
    File { path: PathBuf },
}

impl Default for CorpusSource {
    fn default() -> Self {
        CorpusSource::Prototypes { noise_docs: 8 }
    }
}

/// One experiment: learner, trainer, stream and corpus settings.
///
/// Replicate `i` runs with seed `seed + i`, which replaces both
/// `train.seed` and `stream.seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub replicates: usize,
    pub out_dir: PathBuf,
    pub model: SystemConfig,
    pub train: TrainConfig,
    pub stream: StreamConfig,
    pub corpus: CorpusSource,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            replicates: 1,
            out_dir: PathBuf::from("runs"),
            model: SystemConfig::default(),
            train: TrainConfig::default(),
            stream: StreamConfig::default(),
            corpus: CorpusSource::default(),
        }
    }
}

impl RunConfig {
    /// Parses and validates; errors name the offending key path.
    pub fn from_json(text: &str) -> CliResult<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            CliError::Input(anyhow!("config key `{path}`: {}", e.into_inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).input(format!("reading config {}", path.display()))?;
        let mut cfg = Self::from_json(&text).map_err(|e| match e {
            CliError::Input(inner) => CliError::Input(inner.context(format!("config {}", path.display()))),
            other => other,
        })?;
        if let CorpusSource::File { path: p } = &mut cfg.corpus {
            if p.is_relative() {
                *p = path.parent().unwrap_or(Path::new(".")).join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.model.validate().input("model")?;
        self.train.validate().input("train")?;
        self.stream.validate().input("stream")?;
        if self.replicates == 0 {
            return Err(CliError::Input(anyhow!("replicates must be at least 1")));
        }
        if self.stream.dim != self.model.input_dim {
            return Err(CliError::Input(anyhow!(
                "stream.dim = {} but model.input_dim = {}",
                self.stream.dim,
                self.model.input_dim
            )));
        }
        if self.stream.classes != self.model.num_classes {
            return Err(CliError::Input(anyhow!(
                "stream.classes = {} but model.num_classes = {}",
                self.stream.classes,
                self.model.num_classes
            )));
        }
        Ok(())
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.replicates as u64).map(|i| self.seed + i).collect()
    }

    pub fn stream_for(&self, seed: u64) -> StreamConfig {
        StreamConfig { seed, ..self.stream.clone() }
    }

    /// Reads the corpus file, if any; prototype corpora depend on the stream
    /// and are built per run.
    pub fn load_corpus(&self) -> CliResult<Option<Corpus>> {
        match &self.corpus {
            CorpusSource::Prototypes { .. } => Ok(None),
            CorpusSource::File { path } => {
                let f = File::open(path).input(format!("opening corpus {}", path.display()))?;
                Corpus::from_jsonl(BufReader::new(f)).input(format!("corpus {}", path.display())).map(Some)
            }
        }
    }

    pub fn build_system(&self, seed: u64, stream: &TaskStream, file_corpus: Option<&Corpus>) -> CliResult<DraeSystem> {
        let corpus = match (&self.corpus, file_corpus) {
            (_, Some(c)) => c.clone(),
            (CorpusSource::Prototypes { noise_docs }, None) => {
                prototype_corpus(stream, *noise_docs).runtime("building prototype corpus")?
            }
            (CorpusSource::File { .. }, None) => return Err(CliError::Runtime(anyhow!("corpus file was not loaded"))),
        };
        let train = TrainConfig { seed, ..self.train.clone() };
        DraeSystem::new(self.model.clone(), train, corpus).input("building the learner")
    }
}
